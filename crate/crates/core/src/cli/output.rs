//! Output directory: JSON, JSONL and CSV files stamped with the config hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use homlab::error::Result;

pub struct OutputDir {
    pub root: PathBuf,
    pub hash: String,
    written: Vec<String>,
}

fn stamped(hash: &str, value: &impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("config_hash".into(), Value::String(hash.into()));
            Ok(v)
        }
        _ => Ok(serde_json::json!({ "config_hash": hash, "value": v })),
    }
}

impl OutputDir {
    pub fn create(root: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(root)?;
        // fail early on read-only targets
        let probe = root.join(".write-probe");
        File::create(&probe)?;
        fs::remove_file(&probe)?;
        Ok(Self { root: root.to_path_buf(), hash: hash.to_string(), written: Vec::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let v = stamped(&self.hash, value)?;
        let mut w = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        for r in records {
            serde_json::to_writer(&mut w, &stamped(&self.hash, r)?)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV with a leading `# config_hash: ...` comment line.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "# config_hash: {}", self.hash)?;
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    format!("{v:e}")
}
