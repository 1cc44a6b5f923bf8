use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::SampleStats;

/// One metric line of a report table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub n: usize,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, value: f64, n: usize) -> Self {
        Self {
            metric: metric.into(),
            value,
            stderr: None,
            n,
        }
    }

    pub fn stats(metric: impl Into<String>, s: &SampleStats) -> Self {
        Self {
            metric: metric.into(),
            value: s.mean,
            stderr: Some(s.stderr),
            n: s.n,
        }
    }
}

/// Named collection of rows, written as `<name>.csv` plus a `<name>.json`
/// mirror.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub rows: Vec<MetricRow>,
}

impl Table {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn get(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.get(metric).map(|r| r.value)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    metric: &'a str,
    value: String,
    stderr: String,
    n: usize,
    config_hash: &'a str,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    completed: BTreeSet<String>,
}

/// The run directory. Tracks which stages finished under the current config
/// hash so a rerun can reload their checkpoints.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_hash: String,
    pub tables: Vec<Table>,
    manifest: Manifest,
}

const MANIFEST: &str = "manifest.json";

impl RunArtifacts {
    pub fn open(dir: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("raw"))?;
        let path = dir.join(MANIFEST);
        let manifest = match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<Manifest>(&bytes) {
                Ok(m) if m.config_hash == config_hash => m,
                _ => Manifest::default(),
            },
            Err(_) => Manifest::default(),
        };
        let manifest = Manifest {
            config_hash: config_hash.to_string(),
            ..manifest
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            tables: Vec::new(),
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.manifest.completed.contains(stage)
    }

    pub fn mark_done(&mut self, stage: &str) -> Result<()> {
        self.manifest.completed.insert(stage.to_string());
        self.write_json(MANIFEST, &self.manifest.clone())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(rel))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_slice(&fs::read(self.dir.join(rel))?)?)
    }

    /// One JSON object per line.
    pub fn write_jsonl<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(rel))?);
        for it in items {
            serde_json::to_writer(&mut w, it)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<name>.csv` and `<name>.json`, and keeps the table in memory.
    pub fn write_table(&mut self, table: Table) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(format!("{}.csv", table.name)))
            .map_err(csv_err)?;
        for r in &table.rows {
            w.serialize(CsvRow {
                metric: &r.metric,
                value: r.value.to_string(),
                stderr: r.stderr.map(|s| s.to_string()).unwrap_or_default(),
                n: r.n,
                config_hash: &self.config_hash,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        self.write_json(&format!("{}.json", table.name), &table)?;
        self.tables.retain(|t| t.name != table.name);
        self.tables.push(table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Names of the CSV files in the run directory, sorted.
    pub fn csv_files(&self) -> Result<Vec<PathBuf>> {
        let mut out: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        out.sort();
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::config(format!("csv: {other:?}")),
    }
}
