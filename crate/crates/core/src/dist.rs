//! Discrete score-level grid and the distribution type shared by
//! correctness and confidence.
//!
//! Both the target correctness of an answer and the model's confidence in it
//! are probability masses over a small ordered grid of score levels in
//! `[0, 1]` (ordinal 0-5 ratings normalized, by default). Everything here is
//! an immutable value; operations are pure functions.

use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum-to-one invariant.
pub const MASS_SUM_TOLERANCE: f64 = 1e-9;

/// Mass vectors whose sum is off by at most this much are renormalized on
/// construction; anything worse is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Ordered grid of score levels in `[0, 1]`.
///
/// Cheap to clone; distributions over the same grid share storage.
#[derive(Debug, Clone)]
pub struct LevelGrid {
    levels: Arc<[f64]>,
}

impl PartialEq for LevelGrid {
    fn eq(&self, other: &Self) -> bool {
        self.levels[..] == other.levels[..]
    }
}

impl Default for LevelGrid {
    /// The six-level grid {0, 0.2, 0.4, 0.6, 0.8, 1.0}.
    fn default() -> Self {
        LevelGrid {
            levels: Arc::from([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]),
        }
    }
}

impl LevelGrid {
    /// Validates: at least 2 levels, strictly increasing, all within `[0, 1]`.
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Domain(format!(
                "grid needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("grid levels must be finite".into()));
        }
        if levels[0] < 0.0 || *levels.last().unwrap() > 1.0 {
            return Err(Error::Domain(format!(
                "grid levels must lie in [0, 1], got [{}, {}]",
                levels[0],
                levels.last().unwrap()
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "grid levels must be strictly increasing".into(),
            ));
        }
        Ok(LevelGrid {
            levels: levels.into(),
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor guarantees >= 2 levels
    }

    /// Index of an exact grid level.
    pub fn index_of(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&l| l == level)
    }

    /// Largest gap between adjacent levels (the quantization error bound is
    /// half of this).
    pub fn max_spacing(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Nearest grid level to `score`; exact midpoints between adjacent
    /// levels resolve to the lower level.
    pub fn quantize(&self, score: f64) -> Result<f64> {
        Ok(self.levels[self.quantize_index(score)?])
    }

    /// Like [`quantize`](Self::quantize) but returns the level's index.
    pub fn quantize_index(&self, score: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!(
                "score {score} outside [0, 1], cannot quantize"
            )));
        }
        let mut best = 0usize;
        let mut best_dist = (score - self.levels[0]).abs();
        for (i, &level) in self.levels.iter().enumerate().skip(1) {
            let d = (score - level).abs();
            // strict `<` keeps the lower level on exact ties
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        Ok(best)
    }
}

impl Serialize for LevelGrid {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.levels.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LevelGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let levels = Vec::<f64>::deserialize(deserializer)?;
        LevelGrid::new(levels).map_err(D::Error::custom)
    }
}

/// Raw, pre-quantization sample scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SampleScores {
    raw: Vec<f64>,
}

impl SampleScores {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Precondition("sample set is empty".into()));
        }
        if let Some(bad) = raw.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Domain(format!("raw score {bad} outside [0, 1]")));
        }
        Ok(SampleScores { raw })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn count(&self) -> usize {
        self.raw.len()
    }

    /// Arithmetic mean of the raw (unquantized) scores.
    pub fn mean(&self) -> f64 {
        self.raw.iter().sum::<f64>() / self.raw.len() as f64
    }
}

impl<'de> Deserialize<'de> for SampleScores {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        SampleScores::new(raw).map_err(D::Error::custom)
    }
}

/// Probability mass over a [`LevelGrid`], stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    grid: LevelGrid,
    mass: Vec<f64>,
}

impl ScoreDistribution {
    /// Validates lengths and non-negativity. If the mass sum is within
    /// [`MASS_SUM_TOLERANCE`] of one it is kept as is; within
    /// [`RENORMALIZE_TOLERANCE`] it is renormalized; otherwise rejected.
    pub fn new(grid: LevelGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Structure(format!(
                "mass has {} entries for a {}-level grid",
                mass.len(),
                grid.len()
            )));
        }
        if let Some(bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::Domain(format!("mass entry {bad} outside [0, 1]")));
        }
        let sum: f64 = mass.iter().sum();
        let mass = if (sum - 1.0).abs() <= MASS_SUM_TOLERANCE {
            mass
        } else if (sum - 1.0).abs() <= RENORMALIZE_TOLERANCE {
            mass.iter().map(|m| m / sum).collect()
        } else {
            return Err(Error::Domain(format!(
                "mass sums to {sum}, outside the renormalizable tolerance"
            )));
        };
        if let Some(bad) = mass.iter().find(|m| **m > 1.0 + MASS_SUM_TOLERANCE) {
            return Err(Error::Domain(format!("mass entry {bad} exceeds 1")));
        }
        Ok(ScoreDistribution { grid, mass })
    }

    /// All mass on the grid level nearest to `score`.
    pub fn point_mass(grid: &LevelGrid, score: f64) -> Result<Self> {
        let idx = grid.quantize_index(score)?;
        let mut mass = vec![0.0; grid.len()];
        mass[idx] = 1.0;
        Ok(ScoreDistribution {
            grid: grid.clone(),
            mass,
        })
    }

    /// Empirical distribution: mass at level `s` is the fraction of samples
    /// quantizing to `s`. Permutation-invariant in the samples.
    pub fn from_samples(samples: &SampleScores, grid: &LevelGrid) -> Result<Self> {
        let mut counts = vec![0usize; grid.len()];
        for &score in samples.raw() {
            counts[grid.quantize_index(score)?] += 1;
        }
        let n = samples.count() as f64;
        let mass = counts.iter().map(|&c| c as f64 / n).collect();
        ScoreDistribution::new(grid.clone(), mass)
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass at an exact grid level; 0 for off-grid values.
    pub fn mass_at(&self, level: f64) -> f64 {
        self.grid
            .index_of(level)
            .map(|i| self.mass[i])
            .unwrap_or(0.0)
    }

    /// Expectation over the grid: sum of level x mass.
    pub fn expected_score(&self) -> f64 {
        self.grid
            .levels()
            .iter()
            .zip(&self.mass)
            .map(|(l, m)| l * m)
            .sum()
    }

    /// Total mass at levels `>= tau_s`.
    pub fn mass_at_or_above(&self, tau_s: f64) -> f64 {
        self.grid
            .levels()
            .iter()
            .zip(&self.mass)
            .filter(|(l, _)| **l >= tau_s)
            .map(|(_, m)| m)
            .sum()
    }

    /// Convex mixture `alpha * self + (1 - alpha) * other`.
    ///
    /// The endpoints return the corresponding input verbatim.
    pub fn mix(&self, other: &Self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!(
                "mixing weight {alpha} outside [0, 1]"
            )));
        }
        if self.grid != other.grid {
            return Err(Error::Structure(
                "cannot mix distributions over different grids".into(),
            ));
        }
        if alpha == 1.0 {
            return Ok(self.clone());
        }
        if alpha == 0.0 {
            return Ok(other.clone());
        }
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        ScoreDistribution::new(self.grid.clone(), mass)
    }

    /// Index of the most probable level (lowest level wins ties).
    pub fn argmax_index(&self) -> usize {
        let mut best = 0usize;
        for (i, &m) in self.mass.iter().enumerate().skip(1) {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Serialize, Deserialize)]
struct DistributionRepr {
    levels: LevelGrid,
    mass: Vec<f64>,
}

impl Serialize for ScoreDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DistributionRepr {
            levels: self.grid.clone(),
            mass: self.mass.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScoreDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DistributionRepr::deserialize(deserializer)?;
        ScoreDistribution::new(repr.levels, repr.mass).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> LevelGrid {
        LevelGrid::default()
    }

    #[test]
    fn default_grid_is_the_six_level_grid() {
        assert_eq!(grid().levels(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(LevelGrid::new(vec![0.5]).is_err());
        assert!(LevelGrid::new(vec![0.2, 0.2]).is_err());
        assert!(LevelGrid::new(vec![0.4, 0.2]).is_err());
        assert!(LevelGrid::new(vec![-0.1, 0.5]).is_err());
        assert!(LevelGrid::new(vec![0.5, 1.1]).is_err());
        assert!(LevelGrid::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn quantize_picks_the_nearest_level() {
        let g = grid();
        // similarity 71.4% lands in the 0.8 bucket
        assert_eq!(g.quantize(0.714).unwrap(), 0.8);
        assert_eq!(g.quantize(0.571).unwrap(), 0.6);
        assert_eq!(g.quantize(0.857).unwrap(), 0.8);
        assert_eq!(g.quantize(1.0).unwrap(), 1.0);
        assert_eq!(g.quantize(0.0).unwrap(), 0.0);
    }

    #[test]
    fn quantize_midpoint_ties_round_down() {
        let g = grid();
        // raw 0.9 scores land at 0.8, not 1.0
        assert_eq!(g.quantize(0.9).unwrap(), 0.8);
        assert_eq!(g.quantize(0.5).unwrap(), 0.4);
        assert_eq!(g.quantize(0.1).unwrap(), 0.0);
    }

    #[test]
    fn quantize_rejects_out_of_domain() {
        assert!(grid().quantize(-0.01).is_err());
        assert!(grid().quantize(1.01).is_err());
    }

    #[test]
    fn empirical_distribution_counts_quantized_samples() {
        // nine similarity scores splitting 1/7/1 across {0.6, 0.8, 1.0},
        // first three read off the self-consistency trace [71.4, 57.1, 85.7]
        let samples = SampleScores::new(vec![
            0.714, 0.571, 0.857, 0.857, 0.857, 0.857, 0.857, 0.857, 1.0,
        ])
        .unwrap();
        let d = ScoreDistribution::from_samples(&samples, &grid()).unwrap();
        assert!((d.mass_at(0.6) - 1.0 / 9.0).abs() < 1e-12);
        assert!((d.mass_at(0.8) - 7.0 / 9.0).abs() < 1e-12);
        assert!((d.mass_at(1.0) - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(d.mass_at(0.0), 0.0);
    }

    #[test]
    fn empirical_distribution_point_mass_and_even_split() {
        let all_one = SampleScores::new(vec![1.0, 1.0, 1.0]).unwrap();
        let d = ScoreDistribution::from_samples(&all_one, &grid()).unwrap();
        assert_eq!(d.mass_at(1.0), 1.0);

        let split = SampleScores::new(vec![0.0, 1.0]).unwrap();
        let d = ScoreDistribution::from_samples(&split, &grid()).unwrap();
        assert_eq!(d.mass_at(0.0), 0.5);
        assert_eq!(d.mass_at(1.0), 0.5);
    }

    #[test]
    fn empty_samples_are_a_precondition_error() {
        assert!(matches!(
            SampleScores::new(vec![]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn expected_score_examples() {
        let d =
            ScoreDistribution::new(grid(), vec![0.0, 0.0, 0.0, 1.0 / 9.0, 7.0 / 9.0, 1.0 / 9.0])
                .unwrap();
        assert!((d.expected_score() - 0.8).abs() < 1e-12);

        let zero = ScoreDistribution::point_mass(&grid(), 0.0).unwrap();
        assert_eq!(zero.expected_score(), 0.0);

        let uniform = ScoreDistribution::new(grid(), vec![1.0 / 6.0; 6]).unwrap();
        assert!((uniform.expected_score() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn raw_mean_matches_the_overconfident_trace() {
        // seven 1.0 and two 0.9 give the reported 97.8%
        let mut raw = vec![1.0; 7];
        raw.extend([0.9, 0.9]);
        let samples = SampleScores::new(raw).unwrap();
        assert!((samples.mean() - 0.977_777_777_8).abs() < 1e-9);

        let nine = SampleScores::new(vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((nine.mean() - 0.888_888_888_9).abs() < 1e-9);

        let single = SampleScores::new(vec![0.6]).unwrap();
        assert_eq!(single.mean(), 0.6);
    }

    #[test]
    fn mass_at_or_above_examples() {
        let d =
            ScoreDistribution::new(grid(), vec![0.0, 0.0, 0.0, 1.0 / 9.0, 7.0 / 9.0, 1.0 / 9.0])
                .unwrap();
        assert!((d.mass_at_or_above(0.8) - 8.0 / 9.0).abs() < 1e-12);
        assert!((d.mass_at_or_above(0.0) - 1.0).abs() < 1e-12);

        let low = ScoreDistribution::point_mass(&grid(), 0.4).unwrap();
        assert_eq!(low.mass_at_or_above(0.8), 0.0);
    }

    #[test]
    fn mix_endpoints_return_inputs_verbatim() {
        let a = ScoreDistribution::point_mass(&grid(), 0.0).unwrap();
        let b = ScoreDistribution::point_mass(&grid(), 1.0).unwrap();
        assert_eq!(a.mix(&b, 1.0).unwrap(), a);
        assert_eq!(a.mix(&b, 0.0).unwrap(), b);

        let half = a.mix(&b, 0.5).unwrap();
        assert_eq!(half.mass_at(0.0), 0.5);
        assert_eq!(half.mass_at(1.0), 0.5);
    }

    #[test]
    fn mix_rejects_mismatched_grids_and_bad_alpha() {
        let a = ScoreDistribution::point_mass(&grid(), 0.0).unwrap();
        let other_grid = LevelGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let b = ScoreDistribution::point_mass(&other_grid, 1.0).unwrap();
        assert!(matches!(a.mix(&b, 0.5), Err(Error::Structure(_))));
        let c = ScoreDistribution::point_mass(&grid(), 1.0).unwrap();
        assert!(matches!(a.mix(&c, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_renormalizes_small_drift_and_rejects_large() {
        let drifted = vec![0.5, 0.5 + 5e-7, 0.0, 0.0, 0.0, 0.0];
        let d = ScoreDistribution::new(grid(), drifted).unwrap();
        assert!((d.mass().iter().sum::<f64>() - 1.0).abs() <= MASS_SUM_TOLERANCE);

        let off = vec![0.5, 0.6, 0.0, 0.0, 0.0, 0.0];
        assert!(ScoreDistribution::new(grid(), off).is_err());
        let negative = vec![1.1, -0.1, 0.0, 0.0, 0.0, 0.0];
        assert!(ScoreDistribution::new(grid(), negative).is_err());
    }

    #[test]
    fn serializes_as_levels_and_mass() {
        let d = ScoreDistribution::point_mass(&grid(), 0.8).unwrap();
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "levels": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                "mass": [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            })
        );
        let back: ScoreDistribution = serde_json::from_value(json).unwrap();
        assert_eq!(back, d);

        let bad = serde_json::json!({"levels": [0.0, 1.0], "mass": [0.9, 0.5]});
        assert!(serde_json::from_value::<ScoreDistribution>(bad).is_err());
    }

    fn arb_mass(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, len).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
    }

    proptest! {
        #[test]
        fn empirical_is_permutation_invariant(
            mut raw in proptest::collection::vec(0.0f64..=1.0, 1..30),
            shift in 0usize..30,
        ) {
            let g = grid();
            let a = ScoreDistribution::from_samples(&SampleScores::new(raw.clone()).unwrap(), &g).unwrap();
            let k = shift % raw.len();
            raw.rotate_left(k);
            let b = ScoreDistribution::from_samples(&SampleScores::new(raw).unwrap(), &g).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn quantize_is_monotone_and_idempotent(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let g = grid();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g.quantize(lo).unwrap() <= g.quantize(hi).unwrap());
            let q = g.quantize(a).unwrap();
            prop_assert_eq!(g.quantize(q).unwrap(), q);
        }

        #[test]
        fn constructed_distributions_are_valid(mass in arb_mass(6)) {
            let d = ScoreDistribution::new(grid(), mass).unwrap();
            let sum: f64 = d.mass().iter().sum();
            prop_assert!((sum - 1.0).abs() <= MASS_SUM_TOLERANCE);
            prop_assert!(d.mass().iter().all(|m| *m >= 0.0));
        }

        #[test]
        fn expectation_of_mix_is_linear(mass_a in arb_mass(6), mass_b in arb_mass(6), alpha in 0.0f64..=1.0) {
            let a = ScoreDistribution::new(grid(), mass_a).unwrap();
            let b = ScoreDistribution::new(grid(), mass_b).unwrap();
            let mixed = a.mix(&b, alpha).unwrap();
            let direct = alpha * a.expected_score() + (1.0 - alpha) * b.expected_score();
            prop_assert!((mixed.expected_score() - direct).abs() <= 1e-12);
        }

        #[test]
        fn mass_at_or_above_is_non_increasing(mass in arb_mass(6), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let d = ScoreDistribution::new(grid(), mass).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(d.mass_at_or_above(lo) >= d.mass_at_or_above(hi) - 1e-15);
        }

        #[test]
        fn quantization_bounds_the_expectation_gap(raw in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let g = grid();
            let samples = SampleScores::new(raw).unwrap();
            let d = ScoreDistribution::from_samples(&samples, &g).unwrap();
            let bound = g.max_spacing() / 2.0;
            prop_assert!((d.expected_score() - samples.mean()).abs() <= bound + 1e-12);
        }
    }
}
