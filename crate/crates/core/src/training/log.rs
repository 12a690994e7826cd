use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One validation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

/// Append-only CSV and JSON-lines logs side by side.
pub struct MetricsLog {
    csv: PathBuf,
    jsonl: PathBuf,
}

impl MetricsLog {
    pub fn new(dir: &Path) -> MetricsLog {
        MetricsLog {
            csv: dir.join("metrics.csv"),
            jsonl: dir.join("metrics.jsonl"),
        }
    }

    pub fn append(&self, rec: &MetricsRecord) -> Result<()> {
        let fresh = !self.csv.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.csv)
            .map_err(|e| Error::io(&self.csv, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(rec)
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Checkpoint(format!("metrics csv: {e}")))?;
        let mut j = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.jsonl)
            .map_err(|e| Error::io(&self.jsonl, e))?;
        writeln!(j, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&self.jsonl, e))
    }

    pub fn read_jsonl(&self) -> Result<Vec<MetricsRecord>> {
        let text = std::fs::read_to_string(&self.jsonl).map_err(|e| Error::io(&self.jsonl, e))?;
        text.lines().map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let log = MetricsLog::new(dir.path());
        let mut r = MetricsRecord {
            epoch: 49,
            loss: 1.5,
            lr: 1e-3,
            mrr: 0.25,
            hits1: 0.1,
            hits3: 0.3,
            hits10: 0.5,
        };
        log.append(&r).unwrap();
        r.epoch = 99;
        log.append(&r).unwrap();
        assert_eq!(log.read_jsonl().unwrap().len(), 2);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,loss,lr,mrr"));
    }
}
