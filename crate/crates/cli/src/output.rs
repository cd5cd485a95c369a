//! Report files. Without `--deterministic` every file carries its creation time.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

pub struct Sink {
    dir: PathBuf,
    stamp: Option<u64>,
}

impl Sink {
    pub fn new(dir: PathBuf, deterministic: bool) -> std::io::Result<Sink> {
        std::fs::create_dir_all(&dir)?;
        let stamp = (!deterministic)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        Ok(Sink { dir, stamp })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json(&self, name: &str, value: &serde_json::Value) -> std::io::Result<()> {
        let mut value = value.clone();
        if let (Some(t), Some(obj)) = (self.stamp, value.as_object_mut()) {
            obj.insert("generated_unix".into(), t.into());
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(self.path(name), text)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut buf = Vec::new();
        if let Some(t) = self.stamp {
            buf.extend_from_slice(format!("# generated unix={t}\n").as_bytes());
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        std::fs::write(self.path(name), buf)
    }

    pub fn text(&self, name: &str, text: &str) -> std::io::Result<()> {
        std::fs::write(self.path(name), text)
    }
}
