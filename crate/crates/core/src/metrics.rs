//! Append-only JSON-lines metrics files.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::runtime;

pub struct MetricsWriter {
    out: BufWriter<File>,
    start: Instant,
    deterministic: bool,
}

impl MetricsWriter {
    /// Opens `path` for appending (created if missing).
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(Self {
            out: BufWriter::new(f),
            start: Instant::now(),
            deterministic: runtime::deterministic(),
        })
    }

    /// Writes one record with `iter` and `seconds` added. In deterministic mode
    /// `seconds` is always zero so files compare equal across runs.
    pub fn write(&mut self, iter: u64, fields: &[(&str, f64)]) -> Result<()> {
        let mut m = Map::new();
        m.insert("iter".into(), Value::from(iter));
        for (k, v) in fields {
            m.insert((*k).to_string(), json_number(*v));
        }
        let secs = if self.deterministic { 0.0 } else { self.start.elapsed().as_secs_f64() };
        m.insert("seconds".into(), json_number(secs));
        let line = serde_json::to_string(&Value::Object(m))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("writing metrics", e))?;
        self.out.flush().map_err(|e| Error::io("flushing metrics", e))
    }
}

fn json_number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}
