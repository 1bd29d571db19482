//! Output plumbing: deterministic CSV tables, JSON sidecars, and one run
//! manifest listing every artifact written.
//!
//! Every CSV starts with `#` comment lines carrying the artifact version
//! and the provenance hash of the configuration, followed by a plain
//! header row.  Numbers are printed in scientific notation with twelve
//! significant digits, so reruns with one config produce identical bytes.

use phonon_decay::Result;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Version string stamped into every CSV header and manifest.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Format one numeric cell: twelve significant digits, scientific.
pub fn num(v: f64) -> String {
    format!("{v:.11e}")
}

/// Format one index cell.
pub fn idx(v: usize) -> String {
    v.to_string()
}

/// One CSV table accumulated in memory and written in a single pass.
pub struct Table {
    name: String,
    comments: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: name.to_owned(),
            comments: Vec::new(),
            columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    /// Add a `# key value` preamble line.
    pub fn note(&mut self, key: &str, value: impl AsRef<str>) {
        self.comments.push(format!("{key} {}", value.as_ref()));
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }
}

/// Collects the artifacts of one subcommand run, then writes the manifest.
pub struct Emitter {
    out_dir: PathBuf,
    config_hash: String,
    subcommand: String,
    overrides: Vec<String>,
    outputs: Vec<String>,
    catalog_path: Option<PathBuf>,
    catalog_cache_hit: Option<bool>,
    started: Instant,
}

impl Emitter {
    pub fn new(
        out_dir: &Path,
        config_hash: &str,
        subcommand: &str,
        overrides: Vec<String>,
    ) -> Result<Emitter> {
        fs::create_dir_all(out_dir)?;
        Ok(Emitter {
            out_dir: out_dir.to_owned(),
            config_hash: config_hash.to_owned(),
            subcommand: subcommand.to_owned(),
            overrides,
            outputs: Vec::new(),
            catalog_path: None,
            catalog_cache_hit: None,
            started: Instant::now(),
        })
    }

    /// Record where the level catalog came from.
    pub fn set_catalog(&mut self, path: &Path, cache_hit: bool) {
        self.catalog_path = Some(path.to_owned());
        self.catalog_cache_hit = Some(cache_hit);
    }

    /// Write one CSV table under the output directory.
    pub fn table(&mut self, table: Table) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("# phonon-decay {ARTIFACT_VERSION}\n"));
        text.push_str(&format!("# config {}\n", self.config_hash));
        for line in &table.comments {
            text.push_str(&format!("# {line}\n"));
        }
        text.push_str(&table.columns.join(","));
        text.push('\n');
        for row in &table.rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(&table.name, text.as_bytes())
    }

    /// Write one pretty-printed JSON sidecar.
    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json serialization");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.out_dir.join(name), bytes)?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_owned());
        }
        eprintln!("wrote {}", self.out_dir.join(name).display());
        Ok(())
    }

    /// Write the run manifest, which lists every file this run produced
    /// (itself included), and return its path.
    pub fn finish(mut self) -> Result<PathBuf> {
        let name = format!("manifest-{}.json", self.subcommand);
        self.outputs.push(name.clone());
        let manifest = json!({
            "artifact_version": ARTIFACT_VERSION,
            "config_hash": self.config_hash,
            "subcommand": self.subcommand,
            "overrides": self.overrides,
            "catalog_path": self.catalog_path.as_ref().map(|p| p.display().to_string()),
            "catalog_cache_hit": self.catalog_cache_hit,
            "outputs": self.outputs,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        let path = self.out_dir.join(&name);
        let mut text = serde_json::to_string_pretty(&manifest).expect("json serialization");
        text.push('\n');
        fs::write(&path, text)?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }
}
