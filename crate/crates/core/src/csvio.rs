//! Small helpers for the comma-separated input files.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Row {
        path: String,
        line: u64,
        reason: String,
    },
}

/// Iterates data rows of a headerless-or-headed CSV. `#` lines are comments.
/// A first row whose leading field equals `header_first` is skipped.
pub fn for_each_row<R: Read>(
    reader: R,
    path: &str,
    header_first: &str,
    min_fields: usize,
    mut f: impl FnMut(u64, &StringRecord) -> Result<(), String>,
) -> Result<(), CsvError> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(Trim::All)
        .from_reader(reader);
    let mut first = true;
    let mut rec = StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => return Ok(()),
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(CsvError::Row {
                    path: path.to_string(),
                    line,
                    reason: e.to_string(),
                });
            }
        }
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if first {
            first = false;
            if rec
                .get(0)
                .is_some_and(|h| h.eq_ignore_ascii_case(header_first))
            {
                continue;
            }
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() < min_fields {
            return Err(CsvError::Row {
                path: path.to_string(),
                line,
                reason: format!("expected {min_fields} fields, found {}", rec.len()),
            });
        }
        f(line, &rec).map_err(|reason| CsvError::Row {
            path: path.to_string(),
            line,
            reason,
        })?;
    }
}

pub fn open(path: &Path) -> Result<File, CsvError> {
    File::open(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })
}
