//! Output files with embedded run metadata, removed again if the command fails.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub const ARTIFACT: &str = concat!("mwlse ", env!("CARGO_PKG_VERSION"));

/// Metadata block shared by every file of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub artifact: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    /// Resolved options of the command (paths as given, output directory and
    /// thread count excluded so that reruns compare byte for byte).
    pub config: Value,
}

impl RunMeta {
    pub fn new(command: &'static str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(Self { artifact: ARTIFACT, command, seed, config: serde_json::to_value(config)? })
    }

    /// `# key: value` lines for CSV headers.
    pub fn csv_lines(&self) -> Vec<(String, String)> {
        vec![
            ("artifact".into(), self.artifact.into()),
            ("command".into(), self.command.into()),
            ("seed".into(), self.seed.map_or("none".into(), |s| s.to_string())),
            ("config".into(), self.config.to_string()),
        ]
    }
}

/// Tracks written files so a failed run leaves nothing half-finished behind.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dir: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), created_dir })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// CSV with the metadata block on leading `#` lines.
    pub fn csv(&mut self, name: &str, meta: &RunMeta, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = String::new();
        for (k, v) in meta.csv_lines() {
            text.push_str(&format!("# {k}: {v}\n"));
        }
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    /// Raw bytes (already carrying their own metadata).
    pub fn bytes(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        self.write(name, contents)
    }

    /// Pretty JSON `{"meta": …, "<key>": …}`.
    pub fn json(&mut self, name: &str, meta: &RunMeta, key: &str, value: impl Serialize) -> Result<PathBuf> {
        let mut doc = json!({ "meta": meta });
        doc[key] = serde_json::to_value(value)?;
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.written
    }

    /// Deletes everything this run wrote.
    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}
