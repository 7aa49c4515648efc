use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

use crate::protocol::Value;

const FLUSH_EVERY: Duration = Duration::from_secs(1);

/// Per-run experiment log: `t,<var1>,<var2>,...` then one row per step.
///
/// Write failures are reported once and disable the log; they never reach
/// the control path.
pub struct CsvLog {
    path: PathBuf,
    writer: Option<csv::Writer<BufWriter<File>>>,
    last_flush: Instant,
    rows: u64,
}

impl CsvLog {
    /// Creates `<dir>/<vi-basename>_<start>.csv` and writes the header.
    pub fn create(dir: &Path, vi_path: &str, started: DateTime<Utc>, columns: &[&str]) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let stem = Path::new(vi_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("instrument");
        let stamp = started.format("%Y%m%dT%H%M%S%.3fZ");
        let mut path = dir.join(format!("{stem}_{stamp}.csv"));
        let mut n = 1;
        while path.exists() {
            path = dir.join(format!("{stem}_{stamp}-{n}.csv"));
            n += 1;
        }
        let file = File::create(&path)?;
        let mut writer = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(BufWriter::new(file));
        let mut header = Vec::with_capacity(columns.len() + 1);
        header.push("t");
        header.extend_from_slice(columns);
        writer.write_record(&header).map_err(io::Error::other)?;
        Ok(Self {
            path,
            writer: Some(writer),
            last_flush: Instant::now(),
            rows: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn is_enabled(&self) -> bool {
        self.writer.is_some()
    }

    pub fn append(&mut self, t: f64, values: &[Value]) {
        let Some(writer) = self.writer.as_mut() else {
            return;
        };
        let mut record = Vec::with_capacity(values.len() + 1);
        record.push(t.to_string());
        record.extend(values.iter().map(Value::to_string));
        let mut result = writer.write_record(&record).map_err(io::Error::other);
        if result.is_ok() && self.last_flush.elapsed() >= FLUSH_EVERY {
            result = writer.flush();
            self.last_flush = Instant::now();
        }
        match result {
            Ok(()) => self.rows += 1,
            Err(e) => self.disable(&e),
        }
    }

    /// Flushes and closes the file.
    pub fn finish(&mut self) {
        if let Some(mut writer) = self.writer.take() {
            if let Err(e) = writer.flush() {
                log::warn!("experiment log {}: {e}", self.path.display());
            }
        }
    }

    fn disable(&mut self, err: &io::Error) {
        log::warn!(
            "experiment log {} disabled after write error: {err}",
            self.path.display()
        );
        self.writer = None;
    }
}

impl Drop for CsvLog {
    fn drop(&mut self) {
        self.finish();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_rows_and_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let start = DateTime::parse_from_rfc3339("2024-05-01T12:00:00.250Z")
            .unwrap()
            .with_timezone(&Utc);
        let mut log = CsvLog::create(dir.path(), "plants/demo.vi", start, &["u", "on", "note"]).unwrap();
        assert_eq!(
            log.path().file_name().unwrap().to_str().unwrap(),
            "demo_20240501T120000.250Z.csv"
        );
        log.append(0.05, &[Value::Double(1.5), Value::Boolean(true), Value::from("a,\"b\"")]);
        log.append(0.1, &[Value::Double(-2.0), Value::Boolean(false), Value::from("plain")]);
        let path = log.path().to_owned();
        log.finish();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "t,u,on,note\n0.05,1.5,1,\"a,\"\"b\"\"\"\n0.1,-2,0,plain\n"
        );
    }

    #[test]
    fn same_start_gets_a_fresh_file() {
        let dir = tempfile::tempdir().unwrap();
        let start = Utc::now();
        let a = CsvLog::create(dir.path(), "x.vi", start, &["u"]).unwrap();
        let b = CsvLog::create(dir.path(), "x.vi", start, &["u"]).unwrap();
        assert_ne!(a.path(), b.path());
    }
}
