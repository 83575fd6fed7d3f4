//! AS business relationships in the `asn|asn|relation` serial-1 format,
//! where `-1` is provider-to-customer and `0` is peer-to-peer.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::Asn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    P2p,
    P2c,
    C2p,
}

impl Relation {
    pub fn reversed(self) -> Relation {
        match self {
            Relation::P2p => Relation::P2p,
            Relation::P2c => Relation::C2p,
            Relation::C2p => Relation::P2c,
        }
    }
}

/// Directed view of the relationship graph: `get(a, b)` is a's role
/// towards b, and `get(b, a)` is always its reverse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationshipDb {
    edges: HashMap<(Asn, Asn), Relation>,
}

#[derive(Debug, thiserror::Error)]
pub enum RelationshipError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },
}

impl RelationshipDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `a`'s relation to `b` along with the mirrored edge. Returns
    /// the previous relation if it differed.
    pub fn insert(&mut self, a: Asn, b: Asn, rel: Relation) -> Option<Relation> {
        let prev = self.edges.insert((a, b), rel);
        self.edges.insert((b, a), rel.reversed());
        prev.filter(|p| *p != rel)
    }

    pub fn insert_p2c(&mut self, provider: Asn, customer: Asn) {
        self.insert(provider, customer, Relation::P2c);
    }

    pub fn insert_p2p(&mut self, a: Asn, b: Asn) {
        self.insert(a, b, Relation::P2p);
    }

    pub fn get(&self, a: Asn, b: Asn) -> Option<Relation> {
        self.edges.get(&(a, b)).copied()
    }

    /// Number of undirected relationships.
    pub fn len(&self) -> usize {
        self.edges.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn from_reader<R: Read>(reader: R, path: &str) -> Result<Self, RelationshipError> {
        let mut db = RelationshipDb::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|source| RelationshipError::Io {
                path: path.to_string(),
                source,
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| RelationshipError::Line {
                path: path.to_string(),
                line: i + 1,
                reason,
            };
            let mut f = line.split('|');
            let (Some(a), Some(b), Some(r)) = (f.next(), f.next(), f.next()) else {
                return Err(bad(format!("expected asn|asn|relation, got {line:?}")));
            };
            let a: Asn = a.parse().map_err(|e| bad(format!("bad asn {a:?}: {e}")))?;
            let b: Asn = b.parse().map_err(|e| bad(format!("bad asn {b:?}: {e}")))?;
            let rel = match r.trim() {
                "-1" => Relation::P2c,
                "0" => Relation::P2p,
                other => return Err(bad(format!("unknown relation {other:?}"))),
            };
            if let Some(prev) = db.insert(a, b, rel) {
                return Err(bad(format!(
                    "{a}|{b} declared {rel:?} but earlier {prev:?}"
                )));
            }
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, RelationshipError> {
        let f = std::fs::File::open(path).map_err(|source| RelationshipError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(f, &path.display().to_string())
    }
}
