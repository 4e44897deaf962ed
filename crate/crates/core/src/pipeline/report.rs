use std::path::Path;

use serde::Serialize;

use super::PipelineConfig;
use crate::error::{Error, Result};

/// Metrics recorded after one episode's label correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    /// 1-based.
    pub episode: usize,
    pub gamma: f64,
    /// SelKNN reference share; `None` for IterKNN runs.
    pub m_percent: Option<f64>,
    /// `None` when the training set has no true labels.
    pub label_recovery_rate: Option<f64>,
    pub label_error_rate: Option<f64>,
    /// Head accuracy against the labels the episode trained on.
    pub train_accuracy: f64,
    pub test_accuracy_head: Option<f64>,
    pub test_accuracy_knn: Option<f64>,
    pub labels_changed: usize,
    pub wall_seconds: f64,
}

/// CSV header. Wall time is left out so that reports are reproducible byte for byte.
pub const CSV_COLUMNS: [&str; 9] = [
    "episode",
    "gamma",
    "m_percent",
    "label_recovery_rate",
    "label_error_rate",
    "train_accuracy",
    "test_accuracy_head",
    "test_accuracy_knn",
    "labels_changed",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub label_recovery_rate: Option<f64>,
    pub label_error_rate: Option<f64>,
    pub train_accuracy: f64,
    pub test_accuracy_head: Option<f64>,
    pub test_accuracy_knn: Option<f64>,
    pub final_training: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Report(e.to_string())
}

pub fn write_csv_reports(reports: &[EpisodeReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.episode.to_string(),
            r.gamma.to_string(),
            opt(r.m_percent),
            opt(r.label_recovery_rate),
            opt(r.label_error_rate),
            r.train_accuracy.to_string(),
            opt(r.test_accuracy_head),
            opt(r.test_accuracy_knn),
            r.labels_changed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a PipelineConfig,
    episodes: &'a [EpisodeReport],
    #[serde(rename = "final")]
    final_metrics: Option<&'a FinalMetrics>,
    error: Option<String>,
}

/// JSON summary with the config echo. `final_metrics` is absent for aborted runs.
pub fn write_json_summary(
    config: &PipelineConfig,
    reports: &[EpisodeReport],
    final_metrics: Option<&FinalMetrics>,
    error: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let summary = Summary { config, episodes: reports, final_metrics, error: error.map(str::to_owned) };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
