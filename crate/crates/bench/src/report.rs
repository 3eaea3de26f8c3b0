//! Sweep results and their files: CSV tables plus a TOML run manifest.
//!
//! Files are first written to temporaries in the output directory and only
//! renamed into place once every one of them is complete.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Scenario};
use crate::sweep::SEED_SCHEME;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Num(f64),
    Bool(bool),
}

impl Cell {
    pub fn text(s: &str) -> Self {
        Cell::Text(s.to_string())
    }

    fn cmp_key(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Num(a), Cell::Num(b)) => a.total_cmp(b),
            (Cell::Bool(a), Cell::Bool(b)) => a.cmp(b),
            _ => Ordering::Equal,
        }
    }

    /// Plain decimal; Rust's float `Display` never uses exponents.
    fn write(&self, out: &mut String) {
        match self {
            Cell::Text(s) => out.push_str(s),
            Cell::Int(v) => write!(out, "{v}").unwrap(),
            Cell::Num(v) => write!(out, "{}", if *v == 0.0 { 0.0 } else { *v }).unwrap(),
            Cell::Bool(v) => write!(out, "{v}").unwrap(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

/// Rows under a fixed header, kept sorted by the key columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    /// Builds a table and sorts its rows by the columns in `key`, in order.
    pub fn new(columns: &[&str], key: &[usize], mut rows: Vec<Vec<Cell>>) -> Self {
        rows.sort_by(|a, b| key.iter().map(|&k| a[k].cmp_key(&b[k])).find(|o| o.is_ne()).unwrap_or(Ordering::Equal));
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.write(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

/// Output of one scenario run. The first table is the main CSV; others get
/// their name appended to the file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub scenario: Scenario,
    pub tables: Vec<(String, Table)>,
}

impl SweepResult {
    pub fn single(scenario: Scenario, table: Table) -> Self {
        Self { scenario, tables: vec![(String::new(), table)] }
    }

    pub fn main(&self) -> &Table {
        &self.tables[0].1
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn file_name(&self, table: &str) -> String {
        if table.is_empty() {
            format!("{}.csv", self.scenario.name())
        } else {
            format!("{}.{table}.csv", self.scenario.name())
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct RunInfo {
    tool: &'static str,
    version: &'static str,
    scenario: &'static str,
    master_seed: u64,
    config_sha256: String,
    seed_scheme: &'static str,
    files: Vec<String>,
    rows: Vec<usize>,
}

/// SHA-256 of the resolved configuration, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes every table as CSV plus `<scenario>.manifest.toml` into `dir`
/// and returns the paths written.
pub fn emit_report(result: &SweepResult, cfg: &ExperimentConfig, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = result
        .tables
        .iter()
        .map(|(name, t)| (result.file_name(name), t.to_csv()))
        .collect();
    let manifest = Manifest {
        run: RunInfo {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            scenario: result.scenario.name(),
            master_seed: cfg.experiment.master_seed,
            config_sha256: config_hash(cfg),
            seed_scheme: SEED_SCHEME,
            files: files.iter().map(|(n, _)| n.clone()).collect(),
            rows: result.tables.iter().map(|(_, t)| t.rows.len()).collect(),
        },
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(std::io::Error::other)?;
    files.push((format!("{}.manifest.toml", result.scenario.name()), text));

    let mut staged = Vec::with_capacity(files.len());
    for (name, body) in &files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(body.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| e.error)?;
        written.push(path);
    }
    Ok(written)
}
