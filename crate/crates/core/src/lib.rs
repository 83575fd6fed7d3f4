//! Detection and characterization of international routing detours.

pub mod csvio;
pub mod detect;
pub mod dynamics;
pub mod fixtures;
pub mod geo;
pub mod ingest;
pub mod pipeline;
pub mod types;
pub mod validate;

pub use types::{Asn, CountryCode, CountrySet};
