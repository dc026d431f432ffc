//! Benchmark harness: suite files, toy quality metrics and reports.

pub mod config;
pub mod metrics;
pub mod report;
pub mod suite;

pub use config::{
    load_config, parse_config, Overrides, RunConfiguration, RunMode, ScenarioEntry, SuiteConfig,
};
pub use metrics::{evaluate_edit, mask_iou, Metrics};
pub use report::{emit_report, render_report, Report, ReportFormat};
pub use suite::run_suite;
