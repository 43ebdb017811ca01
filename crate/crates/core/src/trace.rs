//! Step-by-step metric traces with a fixed CSV schema:
//! `step,epoch,split,metric,value,grad_norm`.
//!
//! Traces are the primary observability surface — gradient-norm collapse,
//! per-epoch accuracy curves, and reproducibility checks all read this
//! format — so writing then reading a trace must reproduce it exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_VALIDATION: &str = "validation";
pub const SPLIT_TEST: &str = "test";

pub const METRIC_LOSS: &str = "loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub epoch: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
    /// Pre-clip global gradient norm; present only on training-step rows.
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTrace {
    pub rows: Vec<TraceRow>,
}

impl MetricTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        step: u64,
        epoch: u64,
        split: &str,
        metric: &str,
        value: f64,
        grad_norm: Option<f64>,
    ) {
        self.rows.push(TraceRow {
            step,
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
            grad_norm,
        });
    }

    pub fn extend(&mut self, other: MetricTrace) {
        self.rows.extend(other.rows);
    }

    /// Rows for one split/metric pair, in recorded order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<&TraceRow> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .collect()
    }

    /// Recorded values must be finite and step numbers non-decreasing.
    pub fn validate(&self) -> Result<()> {
        let mut last_step = 0u64;
        for (i, row) in self.rows.iter().enumerate() {
            if !row.value.is_finite() {
                return Err(Error::InvalidData(format!(
                    "trace row {i} has non-finite value {}",
                    row.value
                )));
            }
            if let Some(g) = row.grad_norm {
                if !g.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "trace row {i} has non-finite gradient norm {g}"
                    )));
                }
            }
            if row.step < last_step {
                return Err(Error::InvalidData(format!(
                    "trace row {i} steps backwards: {} after {last_step}",
                    row.step
                )));
            }
            last_step = row.step;
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<Rd: std::io::Read>(reader: Rd) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        Ok(MetricTrace { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
