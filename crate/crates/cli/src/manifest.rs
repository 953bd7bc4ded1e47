use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use attrhash::TrainConfig;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// `manifest.txt` of a run directory: `key=value` lines, then the resolved
/// config under a `[config]` marker.
pub struct Manifest {
    path: PathBuf,
    fields: Vec<(String, String)>,
    config: Option<String>,
}

impl Manifest {
    pub fn start(command: &str, argv: &[String], out: &Path) -> Self {
        let mut m = Self {
            path: out.join("manifest.txt"),
            fields: Vec::new(),
            config: None,
        };
        m.set("status", "running");
        m.set("command", command);
        m.set("argv", argv.join(" "));
        m.set("out", out.display());
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("started", now());
        m
    }

    /// Replaces an existing key in place, otherwise appends.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.fields.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.fields.push((key.to_string(), value)),
        }
    }

    pub fn attach_config(&mut self, config: &TrainConfig) {
        self.config = Some(config.to_text());
    }

    pub fn finish(&mut self, error: Option<String>) {
        self.set("finished", now());
        match error {
            Some(e) => {
                self.set("status", "failed");
                self.set("error", e);
            }
            None => self.set("status", "ok"),
        }
    }

    pub fn write(&self) -> attrhash::Result<()> {
        let mut out = String::new();
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k}={v}");
        }
        if let Some(c) = &self.config {
            out.push_str("[config]\n");
            out.push_str(c);
        }
        std::fs::write(&self.path, out).map_err(|e| super::io_err(&self.path, e))
    }
}
