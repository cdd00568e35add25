//! Calibration metrics over (confidence, correctness) distribution pairs.
//!
//! Three complementary views: per-level expected calibration error
//! aggregated by class frequency (ECE-M), correlation between expected
//! confidence and expected correctness across the dataset, and Selective F1
//! under the dual-threshold rule (answer only when the confidence mass at or
//! above the correctness threshold tau_s reaches tau_c).

use serde::{Deserialize, Serialize};

use crate::dist::{LevelGrid, ScoreDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

/// One scored example: its confidence and correctness distributions plus
/// the optional pre-quantization scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationItem {
    pub id: String,
    pub confidence: ScoreDistribution,
    pub correctness: ScoreDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_confidence_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_correctness_score: Option<f64>,
}

impl CalibrationItem {
    pub fn new(
        id: impl Into<String>,
        confidence: ScoreDistribution,
        correctness: ScoreDistribution,
    ) -> Self {
        CalibrationItem {
            id: id.into(),
            confidence,
            correctness,
            raw_confidence_mean: None,
            raw_correctness_score: None,
        }
    }

    /// The target score behind the selection indicator: the raw
    /// deterministic score when available (F1-5 targets), otherwise the
    /// expectation of the quantized correctness distribution.
    pub fn target_score(&self) -> f64 {
        self.raw_correctness_score
            .unwrap_or_else(|| self.correctness.expected_score())
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationDataset {
    items: Vec<CalibrationItem>,
    split: Split,
}

impl CalibrationDataset {
    /// Non-empty, all items over one shared grid.
    pub fn new(items: Vec<CalibrationItem>, split: Split) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Precondition("calibration dataset is empty".into()));
        }
        let grid = items[0].confidence.grid().clone();
        for item in &items {
            if item.confidence.grid() != &grid || item.correctness.grid() != &grid {
                return Err(Error::Structure(format!(
                    "item '{}' uses a different grid",
                    item.id
                )));
            }
        }
        Ok(CalibrationDataset { items, split })
    }

    pub fn items(&self) -> &[CalibrationItem] {
        &self.items
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn grid(&self) -> &LevelGrid {
        self.items[0].confidence.grid()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty datasets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// The label for level s is the correctness mass at s.
    #[default]
    Soft,
    /// The label is 1 iff s is the argmax of the correctness distribution.
    Argmax,
}

/// Binning estimator config for the per-level calibration error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EceConfig {
    pub bins: usize,
    pub label_mode: LabelMode,
}

impl Default for EceConfig {
    fn default() -> Self {
        EceConfig {
            bins: 10,
            label_mode: LabelMode::Soft,
        }
    }
}

impl EceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 1 {
            return Err(Error::Domain("ECE needs at least one bin".into()));
        }
        Ok(())
    }
}

fn per_level_values(
    data: &CalibrationDataset,
    level_idx: usize,
    mode: LabelMode,
) -> (Vec<f64>, Vec<f64>) {
    let mut confidences = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for item in data.items() {
        confidences.push(item.confidence.mass()[level_idx]);
        labels.push(match mode {
            LabelMode::Soft => item.correctness.mass()[level_idx],
            LabelMode::Argmax => f64::from(u8::from(item.correctness.argmax_index() == level_idx)),
        });
    }
    (confidences, labels)
}

fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

/// Expected calibration error at one level: items are binned by their
/// confidence mass at the level into equal-width bins, and the error is the
/// count-weighted absolute gap between mean label and mean confidence per
/// bin. Empty bins contribute nothing.
pub fn ece_level(data: &CalibrationDataset, level: f64, cfg: &EceConfig) -> Result<f64> {
    cfg.validate()?;
    let level_idx = data
        .grid()
        .index_of(level)
        .ok_or_else(|| Error::Domain(format!("{level} is not a grid level")))?;
    let (confidences, labels) = per_level_values(data, level_idx, cfg.label_mode);
    let mut conf_sum = vec![0.0; cfg.bins];
    let mut label_sum = vec![0.0; cfg.bins];
    let mut counts = vec![0usize; cfg.bins];
    for (c, y) in confidences.iter().zip(&labels) {
        let b = bin_index(*c, cfg.bins);
        conf_sum[b] += c;
        label_sum[b] += y;
        counts[b] += 1;
    }
    let n = data.len() as f64;
    let mut ece = 0.0;
    for b in 0..cfg.bins {
        if counts[b] == 0 {
            continue;
        }
        let k = counts[b] as f64;
        ece += (k / n) * ((label_sum[b] / k) - (conf_sum[b] / k)).abs();
    }
    Ok(ece)
}

/// Plot-ready row of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub bin_center: f64,
    pub mean_confidence: f64,
    pub mean_label: f64,
    pub count: usize,
}

/// The non-empty bins behind [`ece_level`], in bin order.
pub fn reliability_series(
    data: &CalibrationDataset,
    level: f64,
    cfg: &EceConfig,
) -> Result<Vec<ReliabilityBin>> {
    cfg.validate()?;
    let level_idx = data
        .grid()
        .index_of(level)
        .ok_or_else(|| Error::Domain(format!("{level} is not a grid level")))?;
    let (confidences, labels) = per_level_values(data, level_idx, cfg.label_mode);
    let mut conf_sum = vec![0.0; cfg.bins];
    let mut label_sum = vec![0.0; cfg.bins];
    let mut counts = vec![0usize; cfg.bins];
    for (c, y) in confidences.iter().zip(&labels) {
        let b = bin_index(*c, cfg.bins);
        conf_sum[b] += c;
        label_sum[b] += y;
        counts[b] += 1;
    }
    let width = 1.0 / cfg.bins as f64;
    Ok((0..cfg.bins)
        .filter(|b| counts[*b] > 0)
        .map(|b| ReliabilityBin {
            bin_center: (b as f64 + 0.5) * width,
            mean_confidence: conf_sum[b] / counts[b] as f64,
            mean_label: label_sum[b] / counts[b] as f64,
            count: counts[b],
        })
        .collect())
}

/// ECE aggregated over all levels, weighted by the frequency of each class:
/// `sum_s Pr(Y=s) * ECE(s)`. `Pr(Y=s)` uses the same label mode as the
/// per-level errors.
pub fn ece_m(data: &CalibrationDataset, cfg: &EceConfig) -> Result<f64> {
    cfg.validate()?;
    let grid = data.grid().clone();
    let n = data.len() as f64;
    let mut total = 0.0;
    for (idx, &level) in grid.levels().iter().enumerate() {
        let weight = match cfg.label_mode {
            LabelMode::Soft => {
                data.items()
                    .iter()
                    .map(|it| it.correctness.mass()[idx])
                    .sum::<f64>()
                    / n
            }
            LabelMode::Argmax => {
                data.items()
                    .iter()
                    .filter(|it| it.correctness.argmax_index() == idx)
                    .count() as f64
                    / n
            }
        };
        if weight == 0.0 {
            continue;
        }
        total += weight * ece_level(data, level, cfg)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

/// Pearson correlation; errors on zero variance rather than returning 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Structure(
            "correlation inputs differ in length".into(),
        ));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition(
            "correlation needs at least 2 items".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::MetricUndefined(
            "zero variance in an expected-score list".into(),
        ));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average rank over the tie group, 1-based
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Structure(
            "correlation inputs differ in length".into(),
        ));
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Correlation between per-item expected confidence and expected
/// correctness across the dataset.
pub fn correlation(data: &CalibrationDataset, kind: CorrelationKind) -> Result<f64> {
    let expected_confidence: Vec<f64> = data
        .items()
        .iter()
        .map(|it| it.confidence.expected_score())
        .collect();
    let expected_correctness: Vec<f64> = data
        .items()
        .iter()
        .map(|it| it.correctness.expected_score())
        .collect();
    match kind {
        CorrelationKind::Pearson => pearson(&expected_confidence, &expected_correctness),
        CorrelationKind::Spearman => spearman(&expected_confidence, &expected_correctness),
    }
}

/// The dual thresholds: answer when the confidence mass at levels `>= tau_s`
/// reaches `tau_c`; an answer counts as good when its target score reaches
/// `tau_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveThresholds {
    pub tau_s: f64,
    pub tau_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivePrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Size of the selected set.
    pub selected: usize,
}

/// Selective precision/recall/F1 under the dual-threshold rule. An empty
/// selection scores precision 0 (a never-answering system earns nothing);
/// recall is 0 when no answer in the dataset is good.
pub fn selective_prf(data: &CalibrationDataset, th: &SelectiveThresholds) -> Result<SelectivePrf> {
    if data.grid().index_of(th.tau_s).is_none() {
        return Err(Error::Domain(format!(
            "tau_s {} is not a level of the dataset grid",
            th.tau_s
        )));
    }
    let mut selected = 0usize;
    let mut selected_good = 0usize;
    let mut total_good = 0usize;
    for item in data.items() {
        let good = item.target_score() >= th.tau_s;
        total_good += usize::from(good);
        if item.confidence.mass_at_or_above(th.tau_s) >= th.tau_c {
            selected += 1;
            selected_good += usize::from(good);
        }
    }
    let precision = if selected == 0 {
        0.0
    } else {
        selected_good as f64 / selected as f64
    };
    let recall = if total_good == 0 {
        0.0
    } else {
        selected_good as f64 / total_good as f64
    };
    let f1 = crate::correctness::harmonic_f1(precision, recall);
    Ok(SelectivePrf {
        precision,
        recall,
        f1,
        selected,
    })
}

/// Smallest grid level strictly greater than the mean score; the top level
/// when none exists.
pub fn choose_tau_s(best_model_mean: f64, grid: &LevelGrid) -> Result<f64> {
    if !(0.0..=1.0).contains(&best_model_mean) {
        return Err(Error::Domain(format!(
            "mean score {best_model_mean} outside [0, 1]"
        )));
    }
    Ok(grid
        .levels()
        .iter()
        .copied()
        .find(|l| *l > best_model_mean)
        .unwrap_or_else(|| *grid.levels().last().unwrap()))
}

/// One point of the tau_c sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau_c: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub selected: usize,
}

/// Evaluate selective PRF at every distinct confidence-mass value plus the
/// {0, 1} endpoints, ascending.
pub fn tau_c_sweep(data: &CalibrationDataset, tau_s: f64) -> Result<Vec<SweepPoint>> {
    let mut candidates: Vec<f64> = data
        .items()
        .iter()
        .map(|it| it.confidence.mass_at_or_above(tau_s))
        .chain([0.0, 1.0])
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates
        .into_iter()
        .map(|tau_c| {
            let prf = selective_prf(data, &SelectiveThresholds { tau_s, tau_c })?;
            Ok(SweepPoint {
                tau_c,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                selected: prf.selected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauCSelection {
    pub tau_c: f64,
    pub f1: f64,
}

/// The tau_c maximizing selective F1 on the development split; ties break
/// toward the larger tau_c (more conservative selection).
pub fn choose_tau_c(dev: &CalibrationDataset, tau_s: f64) -> Result<TauCSelection> {
    let sweep = tau_c_sweep(dev, tau_s)?;
    let mut best = sweep[0];
    for point in &sweep[1..] {
        // >= so that equal F1 at a larger tau_c wins
        if point.f1 >= best.f1 {
            best = *point;
        }
    }
    Ok(TauCSelection {
        tau_c: best.tau_c,
        f1: best.f1,
    })
}
