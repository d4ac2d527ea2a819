use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Append-only JSON-lines log.
#[derive(Debug, Default)]
pub struct MetricsLog {
    out: Option<BufWriter<File>>,
}

impl MetricsLog {
    pub fn disabled() -> Self {
        MetricsLog { out: None }
    }

    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsLog { out: Some(BufWriter::new(file)) })
    }

    pub fn write(&mut self, record: &impl Serialize) -> Result<()> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }
}
