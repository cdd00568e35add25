//! Calibration report assembly and the CSV exports behind the plots.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::RandomBaselineStats;
use crate::error::Result;
use crate::metrics::{
    choose_tau_c, correlation, ece_m, reliability_series, selective_prf, tau_c_sweep,
    CalibrationDataset, CorrelationKind, EceConfig, SelectiveThresholds, SweepPoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveReport {
    pub tau_s: f64,
    pub tau_c: f64,
    /// F1 the chosen tau_c achieved on the development split.
    pub dev_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub level: f64,
    pub bin_center: f64,
    pub mean_confidence: f64,
    pub mean_label: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub ece_m: f64,
    /// Pearson correlation of expected scores; absent when undefined (zero
    /// variance), with the reason recorded instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_error: Option<String>,
    pub selective: SelectiveReport,
    pub mean_confidence: f64,
    pub mean_correctness: f64,
    pub reliability: Vec<ReliabilityRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_c_sweep: Vec<SweepPoint>,
}

/// Per-method metric bundle over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub grid: Vec<f64>,
    pub tau_s: f64,
    pub ece_bins: usize,
    pub label_mode: String,
    pub dev_items: usize,
    pub test_items: usize,
    pub methods: BTreeMap<String, MethodReport>,
}

/// Compute one method's report: tau_c fitted on dev, metrics on test.
pub fn method_report(
    dev: &CalibrationDataset,
    test: &CalibrationDataset,
    tau_s: f64,
    ece: &EceConfig,
) -> Result<MethodReport> {
    let chosen = choose_tau_c(dev, tau_s)?;
    let prf = selective_prf(
        test,
        &SelectiveThresholds {
            tau_s,
            tau_c: chosen.tau_c,
        },
    )?;
    let (corr, corr_err) = match correlation(test, CorrelationKind::Pearson) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut reliability = Vec::new();
    for &level in test.grid().levels() {
        for bin in reliability_series(test, level, ece)? {
            reliability.push(ReliabilityRow {
                level,
                bin_center: bin.bin_center,
                mean_confidence: bin.mean_confidence,
                mean_label: bin.mean_label,
                count: bin.count,
            });
        }
    }
    let n = test.len() as f64;
    let mean_confidence = test
        .items()
        .iter()
        .map(|it| it.confidence.expected_score())
        .sum::<f64>()
        / n;
    let mean_correctness = test.items().iter().map(|it| it.target_score()).sum::<f64>() / n;
    Ok(MethodReport {
        ece_m: ece_m(test, ece)?,
        correlation: corr,
        correlation_error: corr_err,
        selective: SelectiveReport {
            tau_s,
            tau_c: chosen.tau_c,
            dev_f1: chosen.f1,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            selected: prf.selected,
        },
        mean_confidence,
        mean_correctness,
        reliability,
        tau_c_sweep: tau_c_sweep(dev, tau_s)?,
    })
}

pub fn write_report_json(path: &Path, report: &CalibrationReport) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut body = serde_json::to_vec_pretty(report)?;
    body.push(b'\n');
    std::fs::write(path, body)?;
    Ok(())
}

/// Reliability rows across methods, one CSV.
pub fn write_reliability_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "level",
        "bin_center",
        "mean_confidence",
        "mean_label",
        "count",
    ])?;
    for (method, m) in &report.methods {
        for row in &m.reliability {
            w.write_record([
                method.as_str(),
                &row.level.to_string(),
                &row.bin_center.to_string(),
                &row.mean_confidence.to_string(),
                &row.mean_label.to_string(),
                &row.count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The tau_c sweep curves across methods, one CSV.
pub fn write_tau_c_sweep_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "tau_c", "precision", "recall", "f1", "selected"])?;
    for (method, m) in &report.methods {
        for point in &m.tau_c_sweep {
            w.write_record([
                method.as_str(),
                &point.tau_c.to_string(),
                &point.precision.to_string(),
                &point.recall.to_string(),
                &point.f1.to_string(),
                &point.selected.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One budget level of a cascade curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub budget: usize,
    pub mean_overall: f64,
    pub std_overall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_selected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_selected: Option<f64>,
    pub method: String,
}

impl CascadeRow {
    pub fn routed(budget: usize, overall: f64, selected: Option<f64>, method: &str) -> Self {
        CascadeRow {
            budget,
            mean_overall: overall,
            std_overall: 0.0,
            mean_selected: selected,
            std_selected: selected.map(|_| 0.0),
            method: method.to_string(),
        }
    }

    pub fn random(budget: usize, stats: &RandomBaselineStats) -> Self {
        CascadeRow {
            budget,
            mean_overall: stats.mean_overall,
            std_overall: stats.std_overall,
            mean_selected: stats.mean_selected,
            std_selected: stats.std_selected,
            method: "random".to_string(),
        }
    }
}

/// Cascade curve CSV, directly plottable: budget on x, success rates on y.
pub fn write_cascade_csv(path: &Path, rows: &[CascadeRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "budget",
        "mean_overall",
        "std_overall",
        "mean_selected",
        "std_selected",
        "method",
    ])?;
    for row in rows {
        w.write_record([
            row.budget.to_string(),
            row.mean_overall.to_string(),
            row.std_overall.to_string(),
            row.mean_selected.map(|v| v.to_string()).unwrap_or_default(),
            row.std_selected.map(|v| v.to_string()).unwrap_or_default(),
            row.method.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One temperature sweep row, one per (temperature, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub method: String,
    pub ece_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    pub f1: f64,
    pub mean_correctness: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "temperature",
        "method",
        "ece_m",
        "correlation",
        "f1",
        "mean_correctness",
    ])?;
    for row in rows {
        w.write_record([
            row.temperature.to_string(),
            row.method.clone(),
            row.ece_m.to_string(),
            row.correlation.map(|v| v.to_string()).unwrap_or_default(),
            row.f1.to_string(),
            row.mean_correctness.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
