//! Suite reports and their CSV / JSON encodings.
//!
//! Both encodings are byte-stable for equal reports: floats are rounded to 9
//! significant digits and JSON object keys are sorted.

use std::path::Path;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::card::ComplexityLevel;
use crate::error::{Error, Result};
use crate::harness::metrics::Metrics;

pub const CSV_HEADER: [&str; 7] = [
    "scenario",
    "bucket",
    "config",
    "edit_mse",
    "preserve_mse",
    "mask_iou",
    "frame_steps",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub scenario: String,
    pub bucket: String,
    pub config: String,
    #[serde(serialize_with = "metrics_sig9")]
    pub metrics: Option<Metrics>,
    pub reasoning_steps: Option<usize>,
    pub reasoning_frames: Option<usize>,
    pub predicted: Option<ComplexityLevel>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketSummary {
    pub config: String,
    pub bucket: String,
    pub runs: usize,
    pub failures: usize,
    #[serde(serialize_with = "sig9")]
    pub mean_edit_mse: f64,
    #[serde(serialize_with = "sig9")]
    pub mean_preserve_mse: f64,
    #[serde(serialize_with = "sig9")]
    pub mean_mask_iou: f64,
    pub total_frame_steps: usize,
    #[serde(serialize_with = "sig9")]
    pub mean_frame_steps: f64,
    /// Baseline mean frame-steps over this configuration's, same bucket.
    #[serde(serialize_with = "opt_sig9")]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedSummary {
    pub config: String,
    #[serde(serialize_with = "sig9")]
    pub weighted_mean_frame_steps: f64,
    #[serde(serialize_with = "opt_sig9")]
    pub speedup: Option<f64>,
}

/// Keyword-rule predictions against expected labels, rows = expected,
/// columns = predicted, both in `low, medium, high` order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Confusion {
    pub counts: [[usize; 3]; 3],
    pub failures: usize,
}

impl Confusion {
    pub fn record(&mut self, expected: ComplexityLevel, predicted: ComplexityLevel) {
        self.counts[expected.index()][predicted.index()] += 1;
    }

    pub fn correct(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub baseline: Option<String>,
    pub rows: Vec<Row>,
    pub buckets: Vec<BucketSummary>,
    pub weighted: Vec<WeightedSummary>,
    pub confusion: Confusion,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn bucket(&self, config: &str, bucket: &str) -> Option<&BucketSummary> {
        self.buckets
            .iter()
            .find(|b| b.config == config && b.bucket == bucket)
    }

    pub fn weighted(&self, config: &str) -> Option<&WeightedSummary> {
        self.weighted.iter().find(|w| w.config == config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::input(format!("unknown report format `{other}`"))),
        }
    }
}

/// Rounds to 9 significant digits.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn sig9<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*v))
}

fn opt_sig9<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round_sig9(*v)),
        None => s.serialize_none(),
    }
}

fn metrics_sig9<S: Serializer>(m: &Option<Metrics>, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.map(|m| Metrics {
        edit_mse: round_sig9(m.edit_mse),
        preserve_mse: round_sig9(m.preserve_mse),
        mask_iou: round_sig9(m.mask_iou),
        frame_steps: m.frame_steps,
    })
    .serialize(s)
}

fn fmt_float(v: f64) -> String {
    let r = round_sig9(v);
    if r != 0.0 && (r.abs() < 1e-4 || r.abs() >= 1e15) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Per-row CSV; failed rows leave the metric columns empty.
pub fn to_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::input(format!("csv encoding failed: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &report.rows {
        let metrics = match &row.metrics {
            Some(m) => [
                fmt_float(m.edit_mse),
                fmt_float(m.preserve_mse),
                fmt_float(m.mask_iou),
                m.frame_steps.to_string(),
            ],
            None => Default::default(),
        };
        let record = [
            row.scenario.as_str(),
            row.bucket.as_str(),
            row.config.as_str(),
        ]
        .into_iter()
        .map(str::to_owned)
        .chain(metrics);
        w.write_record(record).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::input(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json(report: &Report) -> Result<String> {
    // Value's map type is ordered, so keys come out sorted
    let value = serde_json::to_value(report)
        .map_err(|e| Error::input(format!("json encoding failed: {e}")))?;
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| Error::input(format!("json encoding failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
    }
}

pub fn emit_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_report(report, format)?)?;
    Ok(())
}
