use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Val,
}

/// One JSON line of a metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub phase: Phase,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
    pub values: BTreeMap<String, f64>,
}

/// Per-step training records and validation records. Steps increase
/// strictly within each phase and every value is finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some((k, v)) = record.values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(NetError::Invariant(format!(
                "{} metric {k} is {v} at step {}",
                record.stage, record.step
            )));
        }
        if let Some(last) = self
            .records
            .iter()
            .rev()
            .find(|r| r.phase == record.phase && r.stage == record.stage)
        {
            if record.step <= last.step {
                return Err(NetError::Invariant(format!(
                    "{} {:?} step {} does not follow {}",
                    record.stage, record.phase, record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn record(
        &mut self,
        stage: &str,
        phase: Phase,
        step: u64,
        epoch: Option<usize>,
        values: &[(&str, f64)],
    ) -> Result<()> {
        let values = values.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self.push(MetricRecord {
            stage: stage.to_string(),
            phase,
            step,
            epoch,
            values,
        })
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &MetricRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// `(step, value)` pairs of one metric within a phase.
    pub fn series(&self, phase: Phase, name: &str) -> Vec<(u64, f64)> {
        self.phase(phase)
            .filter_map(|r| r.values.get(name).map(|v| (r.step, *v)))
            .collect()
    }

    pub fn last(&self, phase: Phase, name: &str) -> Option<f64> {
        self.series(phase, name).last().map(|p| p.1)
    }

    /// Appends every record as one JSON line.
    pub fn append_jsonl(&self, path: &Path) -> Result<()> {
        let err = |e: std::io::Error| NetError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(err)?;
        let mut buf = String::new();
        for r in &self.records {
            buf.push_str(&serde_json::to_string(r).expect("record serializes"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(err)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NetError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut log = Self::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let r: MetricRecord = serde_json::from_str(line).map_err(|e| NetError::Log {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            log.push(r)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_increasing_steps_and_non_finite_values() {
        let mut log = MetricLog::new();
        log.record("s", Phase::Train, 1, None, &[("loss", 1.0)])
            .unwrap();
        log.record("s", Phase::Val, 1, Some(0), &[("loss", 1.0)])
            .unwrap();
        assert!(log
            .record("s", Phase::Train, 1, None, &[("loss", 1.0)])
            .is_err());
        assert!(log
            .record("s", Phase::Train, 2, None, &[("loss", f64::NAN)])
            .is_err());
        log.record("s", Phase::Train, 2, None, &[("loss", 0.5)])
            .unwrap();
        assert_eq!(log.series(Phase::Train, "loss"), vec![(1, 1.0), (2, 0.5)]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = MetricLog::new();
        log.record("r", Phase::Train, 1, None, &[("a", 0.1), ("b", 1e-7)])
            .unwrap();
        log.record("r", Phase::Val, 3, Some(1), &[("a", 0.3)])
            .unwrap();
        log.append_jsonl(&path).unwrap();
        assert_eq!(MetricLog::read_jsonl(&path).unwrap(), log);
    }
}
