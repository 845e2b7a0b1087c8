//! File helpers. Every artifact carries a metadata object with the config
//! hash and master seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use nde_core::Histogram;

pub struct Meta {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn value(&self) -> Value {
        json!({
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
        })
    }

    pub fn with(&self, extra: Value) -> Value {
        let mut v = self.value();
        if let (Some(m), Value::Object(e)) = (v.as_object_mut(), extra) {
            m.extend(e);
        }
        v
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_histogram(path: &Path, h: &Histogram, meta: &Value) -> Result<()> {
    let mut w = create(path)?;
    h.write_csv(&mut w, meta)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (h, _) = Histogram::read_csv(f).with_context(|| format!("reading {}", path.display()))?;
    Ok(h)
}

pub fn copy_into(src: &Path, dst: &Path) -> Result<()> {
    if let Some(dir) = dst.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::copy(src, dst).with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    Ok(())
}
