//! Seed resolution, config files and the JSON/CSV report pair.

use std::path::{Path, PathBuf};

use gesture_core::config::KeyValues;
use gesture_core::{Error, Result};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "MTALK_SEED";

/// `--seed`, else `MTALK_SEED`, else nothing (the config file decides).
pub fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Config file values (empty without a file) with the seed override applied.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<KeyValues> {
    let mut kv = match path {
        Some(p) => KeyValues::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => KeyValues::new(),
    };
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    Ok(kv)
}

pub fn config_hash(kv: &KeyValues) -> String {
    let digest = Sha256::digest(kv.render().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Flat key/value report. Timing fields live apart so reruns can be
/// compared on everything else.
pub struct Report {
    values: Map<String, Value>,
    timing: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str, config: &KeyValues) -> Self {
        let mut values = Map::new();
        values.insert("command".into(), command.into());
        values.insert("config_hash".into(), config_hash(config).into());
        Report { values, timing: Map::new() }
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.values.insert(key.into(), v.into());
    }

    pub fn time(&mut self, key: &str, seconds: f64) {
        self.timing.insert(key.into(), seconds.into());
    }

    fn csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let cell = |v: &Value| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        for (k, v) in &self.values {
            out.push_str(&format!("{k},{}\n", cell(v)));
        }
        for (k, v) in &self.timing {
            out.push_str(&format!("timing.{k},{}\n", cell(v)));
        }
        out
    }

    /// Writes `path` (JSON) and the same name with a `.csv` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut root = self.values.clone();
        root.insert("timing".into(), Value::Object(self.timing.clone()));
        let json = serde_json::to_string_pretty(&Value::Object(root)).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        std::fs::write(path.with_extension("csv"), self.csv())?;
        Ok(())
    }
}

/// `<stem>.config.txt` beside a report.
pub fn config_path(report: &Path) -> PathBuf {
    report.with_extension("config.txt")
}

pub fn write_config(report: &Path, kv: &KeyValues) -> Result<()> {
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(config_path(report), kv.render())?)
}
