//! Artifact writers. Every file carries the seed and the config hash.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::svg::Plot;

/// Full-precision float for CSV cells: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Artifacts {
    dir: PathBuf,
    seed: u64,
    hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, seed: u64, hash: &str) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            seed,
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn provenance(&self) -> String {
        format!("seed={} config_hash={}", self.seed, self.hash)
    }

    /// CSV with a `# seed=… config_hash=…` line, optional extra comment
    /// lines, a header row and LF line endings.
    pub fn csv(&mut self, name: &str, comments: &[String], header: &[String], rows: &[Vec<f64>]) -> io::Result<()> {
        let mut text = format!("# {}\n", self.provenance());
        for c in comments {
            text.push_str(&format!("# {c}\n"));
        }
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// Pretty JSON object with `seed` and `config_hash` added at top level.
    pub fn json(&mut self, name: &str, body: Value) -> io::Result<()> {
        let mut map = match body {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        map.insert("seed".into(), Value::from(self.seed));
        map.insert("config_hash".into(), Value::from(self.hash.clone()));
        let mut text = serde_json::to_string_pretty(&Value::Object(map)).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> io::Result<()> {
        let text = plot.render(&self.provenance());
        self.write(name, &text)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> io::Result<()> {
        let text = format!("# {}\n{contents}", self.provenance());
        self.write(name, &text)
    }
}

/// Column names `prefix_0 … prefix_{d-1}`.
pub fn columns(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}_{i}")).collect()
}
