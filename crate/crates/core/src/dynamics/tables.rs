//! Summary tables over scored timelines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Display, Write as _};
use std::net::IpAddr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use super::peers::{detours_per_peer, per_country_average, representative_peers, CountryAverages};
use super::{MetricCounts, Quadrant, ScoredTimeline};
use crate::ingest::PeerId;
use crate::types::{Asn, CountryCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRow<K> {
    pub group: K,
    pub detours: u64,
    pub share_percent: f64,
    pub top_destination_asn: Asn,
    pub top_destination_share_percent: f64,
}

/// Groups unique detours by `group_of`, ranks groups by size (ties by
/// group order) and reports each group's most common destination AS (ties
/// to the lowest ASN).
pub fn top_table<'a, K: Ord + Clone>(
    scored: impl IntoIterator<Item = &'a ScoredTimeline>,
    group_of: impl Fn(&ScoredTimeline) -> K,
    limit: usize,
) -> Vec<TopRow<K>> {
    let mut groups: BTreeMap<K, BTreeMap<Asn, u64>> = BTreeMap::new();
    let mut total = 0u64;
    for s in scored {
        total += 1;
        *groups
            .entry(group_of(s))
            .or_default()
            .entry(s.timeline.destination_asn)
            .or_default() += 1;
    }
    let mut rows: Vec<TopRow<K>> = groups
        .into_iter()
        .map(|(k, dests)| {
            let n: u64 = dests.values().sum();
            let (dest, dn) =
                dests.iter().fold(
                    (Asn(0), 0u64),
                    |best, (a, c)| if *c > best.1 { (*a, *c) } else { best },
                );
            TopRow {
                group: k,
                detours: n,
                share_percent: 100.0 * n as f64 / total as f64,
                top_destination_asn: dest,
                top_destination_share_percent: 100.0 * dn as f64 / n as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.detours
            .cmp(&a.detours)
            .then_with(|| a.group.cmp(&b.group))
    });
    rows.truncate(limit);
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlashRow {
    pub prefix: Ipv4Net,
    pub prefix_origin_asn: Asn,
    pub destination_asn: Asn,
    pub detour_origin_asn: Asn,
    pub home_country: CountryCode,
    pub peer_ip: IpAddr,
    pub epoch: u32,
}

pub fn flash_listing<'a>(scored: impl IntoIterator<Item = &'a ScoredTimeline>) -> Vec<FlashRow> {
    let mut rows: Vec<FlashRow> = scored
        .into_iter()
        .filter(|s| s.metrics.is_flash)
        .map(|s| {
            let t = &s.timeline;
            FlashRow {
                prefix: t.key.prefix,
                prefix_origin_asn: t.prefix_origin_asn,
                destination_asn: t.destination_asn,
                detour_origin_asn: t.detour_origin_asn,
                home_country: t.home_country,
                peer_ip: t.key.peer_ip,
                epoch: t.presence.ones().next().expect("timelines are non-empty"),
            }
        })
        .collect();
    rows.sort();
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub epochs: u32,
    pub timelines: u64,
    pub transient_timelines: u64,
    pub flash_timelines: u64,
    pub mean_flap_rate: f64,
    pub mean_duty_cycle: f64,
    pub quadrant_counts: BTreeMap<Quadrant, u64>,
    pub representative_peers: Vec<PeerId>,
    pub per_country_raw: CountryAverages,
    pub per_country_dedup: CountryAverages,
    pub per_country_transient_raw: CountryAverages,
    pub per_country_transient_dedup: CountryAverages,
    pub top_origin_as: Vec<TopRow<Asn>>,
    pub top_prefixes: Vec<TopRow<Ipv4Net>>,
    pub top_transient_origin_as: Vec<TopRow<Asn>>,
    pub top_transient_prefixes: Vec<TopRow<Ipv4Net>>,
    pub flash: Vec<FlashRow>,
}

impl DynamicsReport {
    /// `peer_country` lists every peer of the corpus, including peers that
    /// saw no detour.
    pub fn build(
        scored: &[ScoredTimeline],
        epochs: u32,
        peer_country: &BTreeMap<PeerId, Option<CountryCode>>,
        top_n: usize,
    ) -> Self {
        let transient: Vec<&ScoredTimeline> =
            scored.iter().filter(|s| s.metrics.is_transient).collect();

        let all_counts = detours_per_peer(peer_country.keys(), scored.iter().map(|s| &s.timeline));
        let reps = representative_peers(&all_counts);
        let transient_counts =
            detours_per_peer(peer_country.keys(), transient.iter().map(|s| &s.timeline));
        let dedup = |c: &BTreeMap<PeerId, u64>| -> BTreeMap<PeerId, u64> {
            c.iter()
                .filter(|(p, _)| reps.contains(p))
                .map(|(p, n)| (*p, *n))
                .collect()
        };

        let n = scored.len() as f64;
        let (mut flap, mut duty) = (0.0, 0.0);
        let mut quadrant_counts = BTreeMap::new();
        for s in scored {
            let c = MetricCounts::of(&s.timeline.presence);
            flap += c.transitions as f64;
            duty += c.uptime as f64;
            *quadrant_counts.entry(s.metrics.quadrant).or_insert(0) += 1;
        }
        let mean = |sum: f64| {
            if scored.is_empty() {
                0.0
            } else {
                100.0 * sum / (n * epochs as f64)
            }
        };

        let by_origin = |s: &ScoredTimeline| s.timeline.detour_origin_asn;
        let by_prefix = |s: &ScoredTimeline| s.timeline.key.prefix;
        DynamicsReport {
            epochs,
            timelines: scored.len() as u64,
            transient_timelines: transient.len() as u64,
            flash_timelines: scored.iter().filter(|s| s.metrics.is_flash).count() as u64,
            mean_flap_rate: mean(flap),
            mean_duty_cycle: mean(duty),
            quadrant_counts,
            representative_peers: reps.iter().copied().collect(),
            per_country_raw: per_country_average(&all_counts, peer_country),
            per_country_dedup: per_country_average(&dedup(&all_counts), peer_country),
            per_country_transient_raw: per_country_average(&transient_counts, peer_country),
            per_country_transient_dedup: per_country_average(
                &dedup(&transient_counts),
                peer_country,
            ),
            top_origin_as: top_table(scored, by_origin, top_n),
            top_prefixes: top_table(scored, by_prefix, top_n),
            top_transient_origin_as: top_table(transient.iter().copied(), by_origin, top_n),
            top_transient_prefixes: top_table(transient.iter().copied(), by_prefix, top_n),
            flash: flash_listing(scored),
        }
    }

    /// Plain-text rendering of every table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "epochs {}  timelines {}  transient {}  flash {}",
            self.epochs, self.timelines, self.transient_timelines, self.flash_timelines
        );
        let _ = writeln!(
            out,
            "mean flap rate {:.4}%  mean duty cycle {:.4}%",
            self.mean_flap_rate, self.mean_duty_cycle
        );
        let quads: Vec<Vec<String>> = self
            .quadrant_counts
            .iter()
            .map(|(q, n)| vec![q.to_string(), n.to_string()])
            .collect();
        out.push('\n');
        out.push_str(&render_table_text(
            "Quadrants",
            &["quadrant", "timelines"],
            &quads,
        ));
        for (title, t) in [
            ("Top detour origin ASes", &self.top_origin_as),
            (
                "Top transient detour origin ASes",
                &self.top_transient_origin_as,
            ),
        ] {
            out.push('\n');
            out.push_str(&render_top(title, "origin_asn", t));
        }
        for (title, t) in [
            ("Top detoured prefixes", &self.top_prefixes),
            (
                "Top transient detoured prefixes",
                &self.top_transient_prefixes,
            ),
        ] {
            out.push('\n');
            out.push_str(&render_top(title, "prefix", t));
        }
        for (title, a) in [
            (
                "Average detours per peer by country (all peers)",
                &self.per_country_raw,
            ),
            (
                "Average detours per peer by country (representative peers)",
                &self.per_country_dedup,
            ),
            (
                "Average transient detours per peer by country (all peers)",
                &self.per_country_transient_raw,
            ),
            (
                "Average transient detours per peer by country (representative peers)",
                &self.per_country_transient_dedup,
            ),
        ] {
            let rows: Vec<Vec<String>> = a
                .countries
                .iter()
                .map(|(c, e)| {
                    vec![
                        c.to_string(),
                        e.peers.to_string(),
                        e.detours.to_string(),
                        format!("{:.4}", e.average),
                    ]
                })
                .collect();
            out.push('\n');
            out.push_str(&render_table_text(
                title,
                &["country", "peers", "detours", "average"],
                &rows,
            ));
        }
        let rows: Vec<Vec<String>> = self
            .flash
            .iter()
            .map(|f| {
                vec![
                    f.prefix.to_string(),
                    f.prefix_origin_asn.to_string(),
                    f.destination_asn.to_string(),
                    f.home_country.to_string(),
                    f.peer_ip.to_string(),
                    f.epoch.to_string(),
                ]
            })
            .collect();
        out.push('\n');
        out.push_str(&render_table_text(
            "Flash detours",
            &[
                "prefix",
                "owner_asn",
                "destination_asn",
                "home",
                "peer_ip",
                "epoch",
            ],
            &rows,
        ));
        out
    }
}

fn render_top<K: Display>(title: &str, group: &str, rows: &[TopRow<K>]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.group.to_string(),
                r.detours.to_string(),
                format!("{:.2}", r.share_percent),
                r.top_destination_asn.to_string(),
                format!("{:.2}", r.top_destination_share_percent),
            ]
        })
        .collect();
    render_table_text(
        title,
        &[
            group,
            "detours",
            "share_%",
            "top_destination_asn",
            "destination_share_%",
        ],
        &cells,
    )
}

/// Left-aligned columns separated by two spaces.
pub fn render_table_text(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = format!("{title}\n");
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    out.push_str(&line(&mut header.iter().copied()));
    out.push('\n');
    out.push_str(&line(
        &mut widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(|s| s.as_str()),
    ));
    out.push('\n');
    for r in rows {
        out.push_str(&line(&mut r.iter().map(|s| s.as_str())));
        out.push('\n');
    }
    if rows.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

/// Sets of peers by country, for callers that only need membership.
pub fn peers_by_country(
    peer_country: &BTreeMap<PeerId, Option<CountryCode>>,
) -> BTreeMap<CountryCode, BTreeSet<PeerId>> {
    let mut out: BTreeMap<CountryCode, BTreeSet<PeerId>> = BTreeMap::new();
    for (p, c) in peer_country {
        if let Some(c) = c {
            out.entry(*c).or_default().insert(*p);
        }
    }
    out
}
