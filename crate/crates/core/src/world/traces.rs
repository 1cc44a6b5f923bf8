//! Line-delimited JSON persona traces: a `{"persona_format": 1}` header line,
//! then one `{"user_id": ..., "video_ids": [...]}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Persona;
use crate::corpus::VideoId;
use crate::error::{Error, Result};

pub const PERSONA_FORMAT: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub user_id: String,
    pub video_ids: Vec<VideoId>,
}

impl TraceRecord {
    pub fn persona(&self) -> Persona {
        Persona::from_user(&self.video_ids)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportReport {
    pub records: Vec<TraceRecord>,
    /// Traces shorter than the minimum length.
    pub dropped: usize,
}

impl ImportReport {
    pub fn personas(&self) -> Vec<Persona> {
        self.records.iter().map(TraceRecord::persona).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    persona_format: u64,
}

/// Reads a trace file, keeping traces with at least `min_len` videos.
pub fn import_personas(path: &Path, min_len: usize) -> Result<ImportReport> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut report = ImportReport::default();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            let h: Header =
                serde_json::from_str(&line).map_err(|e| err(i + 1, format!("bad header: {e}")))?;
            if h.persona_format != PERSONA_FORMAT {
                return Err(Error::Format {
                    found: h.persona_format,
                    expected: PERSONA_FORMAT,
                });
            }
            saw_header = true;
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
        if rec.video_ids.len() >= min_len {
            report.records.push(rec);
        } else {
            report.dropped += 1;
        }
    }
    Ok(report)
}

pub fn export_personas(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &Header {
            persona_format: PERSONA_FORMAT,
        },
    )?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
