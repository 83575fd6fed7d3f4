//! AS geolocation from announced prefixes, router IPs and IXP membership.

pub mod asgeo;
pub mod infra;
pub mod ipdb;
pub mod lpm;
pub mod ownership;

pub use asgeo::{build_as_geo, AsGeoEntry, AsGeoMap, EvidenceTag, GeoMapError, GeoStats, HopGeo};
pub use infra::{
    build_infra_records, geolocate_infra_ip, load_infra, load_ixp, map_infra_ip_to_as,
    InfraEvidence, InfraIpRecord, IpAsMap, IxpParticipant, SourceEvidence, MIN_SOURCE_CONFIDENCE,
};
pub use ipdb::{geolocate_prefix, GeoDbStack, IpCountryDb, IpRange, Located};
pub use lpm::{PrefixTable, RoutingTable};
pub use ownership::{
    filter_ownership, utc_day, OwnershipAccumulator, OwnershipSplit, PrefixOwnership,
    DEFAULT_MIN_OWNERSHIP_DAYS,
};
