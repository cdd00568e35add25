//! Budget-constrained two-model cascade.
//!
//! A weak model answers every query; under a budget of strong-model calls,
//! the queries where the weak model's confidence mass above tau_s is lowest
//! escalate to the strong model. Escalation ranks by confidence mass rather
//! than sweeping tau_c directly, which hits any budget exactly even when
//! masses tie. A seeded random-routing baseline provides the reference
//! curve.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ScoreDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Correctness level the confidence mass is measured against.
    pub tau_s: f64,
    /// Score a final answer must reach to count as a success. Defaults to
    /// tau_s when unset upstream.
    pub success_threshold: f64,
    /// Strong-model call counts to evaluate.
    pub budgets: Vec<usize>,
    /// Seeds of the random-routing baseline.
    pub random_seeds: Vec<u64>,
}

impl CascadeConfig {
    pub fn new(tau_s: f64) -> Self {
        CascadeConfig {
            tau_s,
            success_threshold: tau_s,
            budgets: Vec::new(),
            random_seeds: (0..10).collect(),
        }
    }

    /// Evenly spaced default budget grid from 0 to n inclusive.
    pub fn default_budgets(n: usize) -> Vec<usize> {
        if n == 0 {
            return vec![0];
        }
        let steps = 10usize.min(n);
        let mut budgets: Vec<usize> = (0..=steps).map(|i| i * n / steps).collect();
        budgets.dedup();
        budgets
    }
}

/// One query as the cascade sees it: the weak model's confidence in its own
/// answer plus both models' precomputed correctness scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeItem {
    pub id: String,
    pub weak_confidence: ScoreDistribution,
    pub weak_correctness: f64,
    pub strong_correctness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Weak,
    Strong,
}

/// Per-query audit record of one routed evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutedOutcome {
    pub id: String,
    pub route: Route,
    pub weak_confidence_mass: f64,
    pub final_correctness: f64,
}

/// Route the `budget` lowest-confidence queries to the strong model; ties
/// break by stable input order. Outcomes come back in input order.
pub fn route_by_budget(
    items: &[CascadeItem],
    cfg: &CascadeConfig,
    budget: usize,
) -> Result<Vec<RoutedOutcome>> {
    if budget > items.len() {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the {} available queries",
            items.len()
        )));
    }
    let masses: Vec<f64> = items
        .iter()
        .map(|it| it.weak_confidence.mass_at_or_above(cfg.tau_s))
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    // stable sort keeps input order inside equal-mass groups
    order.sort_by(|&a, &b| masses[a].total_cmp(&masses[b]));
    let mut escalate = vec![false; items.len()];
    for &idx in order.iter().take(budget) {
        escalate[idx] = true;
    }
    Ok(items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let strong = escalate[i];
            RoutedOutcome {
                id: item.id.clone(),
                route: if strong { Route::Strong } else { Route::Weak },
                weak_confidence_mass: masses[i],
                final_correctness: if strong {
                    item.strong_correctness
                } else {
                    item.weak_correctness
                },
            }
        })
        .collect())
}

/// Fraction of outcomes whose final correctness meets the threshold.
pub fn success_rate(outcomes: &[RoutedOutcome], threshold: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Domain("no outcomes to score".into()));
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.final_correctness >= threshold)
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// Success rate over the queries the weak model kept; `None` at full budget
/// when nothing stayed weak.
pub fn selected_success_rate(outcomes: &[RoutedOutcome], threshold: f64) -> Option<f64> {
    let kept: Vec<&RoutedOutcome> = outcomes.iter().filter(|o| o.route == Route::Weak).collect();
    if kept.is_empty() {
        return None;
    }
    let hits = kept
        .iter()
        .filter(|o| o.final_correctness >= threshold)
        .count();
    Some(hits as f64 / kept.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaselineStats {
    pub mean_overall: f64,
    pub std_overall: f64,
    pub mean_selected: Option<f64>,
    pub std_selected: Option<f64>,
}

/// Random-routing baseline: per seed, a uniformly random subset of `budget`
/// queries escalates; success rates are averaged across seeds with the
/// population standard deviation.
pub fn random_baseline_stats(
    items: &[CascadeItem],
    cfg: &CascadeConfig,
    budget: usize,
) -> Result<RandomBaselineStats> {
    if budget > items.len() {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the {} available queries",
            items.len()
        )));
    }
    if items.is_empty() {
        return Err(Error::Domain("no items to route".into()));
    }
    if cfg.random_seeds.is_empty() {
        return Err(Error::Config(
            "random baseline needs at least one seed".into(),
        ));
    }
    let threshold = cfg.success_threshold;
    let mut overall = Vec::with_capacity(cfg.random_seeds.len());
    let mut selected = Vec::with_capacity(cfg.random_seeds.len());
    for &seed in &cfg.random_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let escalated: std::collections::HashSet<usize> = order.into_iter().take(budget).collect();
        let mut hits = 0usize;
        let mut kept_hits = 0usize;
        let mut kept = 0usize;
        for (i, item) in items.iter().enumerate() {
            let score = if escalated.contains(&i) {
                item.strong_correctness
            } else {
                kept += 1;
                if item.weak_correctness >= threshold {
                    kept_hits += 1;
                }
                item.weak_correctness
            };
            if score >= threshold {
                hits += 1;
            }
        }
        overall.push(hits as f64 / items.len() as f64);
        if kept > 0 {
            selected.push(kept_hits as f64 / kept as f64);
        }
    }
    let (mean_overall, std_overall) = mean_and_population_std(&overall);
    let (mean_selected, std_selected) = if selected.len() == cfg.random_seeds.len() {
        let (m, s) = mean_and_population_std(&selected);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(RandomBaselineStats {
        mean_overall,
        std_overall,
        mean_selected,
        std_selected,
    })
}

/// Overall (mean, population std) of the random baseline across seeds.
pub fn random_baseline(
    items: &[CascadeItem],
    cfg: &CascadeConfig,
    budget: usize,
) -> Result<(f64, f64)> {
    let stats = random_baseline_stats(items, cfg, budget)?;
    Ok((stats.mean_overall, stats.std_overall))
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    // identical observations have exactly zero spread; skipping the mean
    // round trip keeps the no-randomness endpoints exact
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::LevelGrid;

    fn grid() -> LevelGrid {
        LevelGrid::default()
    }

    fn conf(mass_above: f64) -> ScoreDistribution {
        let g = grid();
        let mut mass = vec![0.0; g.len()];
        mass[4] = mass_above; // level 0.8
        mass[0] = 1.0 - mass_above;
        ScoreDistribution::new(g, mass).unwrap()
    }

    fn item(id: &str, mass: f64, weak: f64, strong: f64) -> CascadeItem {
        CascadeItem {
            id: id.into(),
            weak_confidence: conf(mass),
            weak_correctness: weak,
            strong_correctness: strong,
        }
    }

    fn cfg() -> CascadeConfig {
        CascadeConfig::new(0.8)
    }

    #[test]
    fn endpoints_match_standalone_rates() {
        let items = vec![
            item("a", 0.9, 1.0, 1.0),
            item("b", 0.1, 0.0, 1.0),
            item("c", 0.5, 0.9, 0.2),
        ];
        let all_weak = route_by_budget(&items, &cfg(), 0).unwrap();
        assert!(all_weak.iter().all(|o| o.route == Route::Weak));
        let weak_rate = success_rate(&all_weak, 0.8).unwrap();
        assert!((weak_rate - 2.0 / 3.0).abs() < 1e-12);

        let all_strong = route_by_budget(&items, &cfg(), items.len()).unwrap();
        assert!(all_strong.iter().all(|o| o.route == Route::Strong));
        let strong_rate = success_rate(&all_strong, 0.8).unwrap();
        assert!((strong_rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lowest_confidence_items_escalate() {
        // masses [0.9, 0.1, 0.5, 0.2, 0.8], budget 2: the 2nd and 4th go
        let items = vec![
            item("q1", 0.9, 1.0, 1.0),
            item("q2", 0.1, 0.0, 1.0),
            item("q3", 0.5, 1.0, 1.0),
            item("q4", 0.2, 0.0, 1.0),
            item("q5", 0.8, 1.0, 1.0),
        ];
        let outcomes = route_by_budget(&items, &cfg(), 2).unwrap();
        let routes: Vec<Route> = outcomes.iter().map(|o| o.route).collect();
        assert_eq!(
            routes,
            vec![
                Route::Weak,
                Route::Strong,
                Route::Weak,
                Route::Strong,
                Route::Weak
            ]
        );
        assert_eq!(
            outcomes.iter().filter(|o| o.route == Route::Strong).count(),
            2
        );
    }

    #[test]
    fn ties_break_by_stable_input_order() {
        let items = vec![
            item("first", 0.5, 1.0, 0.0),
            item("second", 0.5, 1.0, 0.0),
            item("third", 0.5, 1.0, 0.0),
        ];
        let outcomes = route_by_budget(&items, &cfg(), 2).unwrap();
        assert_eq!(outcomes[0].route, Route::Strong);
        assert_eq!(outcomes[1].route, Route::Strong);
        assert_eq!(outcomes[2].route, Route::Weak);
        // deterministic given fixed input order
        let again = route_by_budget(&items, &cfg(), 2).unwrap();
        assert_eq!(
            outcomes.iter().map(|o| o.route).collect::<Vec<_>>(),
            again.iter().map(|o| o.route).collect::<Vec<_>>()
        );
    }

    #[test]
    fn budget_above_len_is_a_config_error() {
        let items = vec![item("a", 0.5, 1.0, 1.0)];
        assert!(matches!(
            route_by_budget(&items, &cfg(), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn success_rate_counts_thresholded_outcomes() {
        let outcomes = vec![
            RoutedOutcome {
                id: "a".into(),
                route: Route::Weak,
                weak_confidence_mass: 0.9,
                final_correctness: 0.9,
            },
            RoutedOutcome {
                id: "b".into(),
                route: Route::Weak,
                weak_confidence_mass: 0.5,
                final_correctness: 0.5,
            },
            RoutedOutcome {
                id: "c".into(),
                route: Route::Strong,
                weak_confidence_mass: 0.1,
                final_correctness: 0.7,
            },
        ];
        assert!((success_rate(&outcomes, 0.8).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(success_rate(&outcomes, 0.0).unwrap(), 1.0);
        assert!(success_rate(&[], 0.5).is_err());

        let selected = selected_success_rate(&outcomes, 0.8).unwrap();
        assert!((selected - 0.5).abs() < 1e-12);
        let all_strong: Vec<RoutedOutcome> = outcomes
            .into_iter()
            .map(|mut o| {
                o.route = Route::Strong;
                o
            })
            .collect();
        assert!(selected_success_rate(&all_strong, 0.8).is_none());
    }

    #[test]
    fn random_baseline_endpoints_have_zero_std() {
        let items = vec![
            item("a", 0.9, 1.0, 0.9),
            item("b", 0.1, 0.0, 0.9),
            item("c", 0.5, 0.9, 0.9),
        ];
        let c = cfg();
        let (mean_full, std_full) = random_baseline(&items, &c, items.len()).unwrap();
        assert_eq!(std_full, 0.0);
        assert!((mean_full - 1.0).abs() < 1e-12);

        let (mean_zero, std_zero) = random_baseline(&items, &c, 0).unwrap();
        assert_eq!(std_zero, 0.0);
        assert!((mean_zero - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_baseline_mean_tracks_the_analytic_expectation() {
        // weak rate 0.4, strong rate 1.0, half budget: E = 0.7
        let n = 40usize;
        let items: Vec<CascadeItem> = (0..n)
            .map(|i| {
                item(
                    &format!("q{i}"),
                    0.5,
                    if i % 5 < 2 { 1.0 } else { 0.0 },
                    1.0,
                )
            })
            .collect();
        let mut c = cfg();
        c.random_seeds = (0..64).collect();
        let (mean, std) = random_baseline(&items, &c, n / 2).unwrap();
        let expectation = 0.5 * 0.4 + 0.5 * 1.0;
        // across 64 seeds the mean should sit within a few noise widths
        assert!((mean - expectation).abs() < 0.1, "mean {mean}");
        assert!(std > 0.0);
    }

    #[test]
    fn random_baseline_is_reproducible_per_seed_set() {
        let items = vec![
            item("a", 0.9, 1.0, 1.0),
            item("b", 0.1, 0.0, 1.0),
            item("c", 0.5, 0.9, 0.0),
            item("d", 0.2, 0.1, 1.0),
        ];
        let c = cfg();
        let first = random_baseline_stats(&items, &c, 2).unwrap();
        let second = random_baseline_stats(&items, &c, 2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn exactly_budget_many_queries_escalate() {
        let items: Vec<CascadeItem> = (0..9)
            .map(|i| item(&format!("q{i}"), (i as f64) / 10.0, 0.5, 0.9))
            .collect();
        for budget in 0..=items.len() {
            let outcomes = route_by_budget(&items, &cfg(), budget).unwrap();
            let strong = outcomes.iter().filter(|o| o.route == Route::Strong).count();
            assert_eq!(strong, budget);
        }
    }

    /// Analytic expectation of the random baseline: each query escalates
    /// with probability budget/n independently in expectation.
    pub(crate) fn analytic_random_expectation(
        items: &[CascadeItem],
        threshold: f64,
        budget: usize,
    ) -> f64 {
        let n = items.len() as f64;
        let p = budget as f64 / n;
        items
            .iter()
            .map(|it| {
                let w = f64::from(u8::from(it.weak_correctness >= threshold));
                let s = f64::from(u8::from(it.strong_correctness >= threshold));
                (1.0 - p) * w + p * s
            })
            .sum::<f64>()
            / n
    }

    #[test]
    fn oracle_confidence_dominates_random_routing_with_a_uniform_strong_model() {
        // weak confidence mass equals the weak success indicator; the strong
        // model's thresholded outcome is uniform across queries, the regime
        // where the dominance inequality is provable
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(99);
        for case in 0..100 {
            let n = 3 + (case % 17);
            let strong_all_good = case % 4 != 3;
            let items: Vec<CascadeItem> = (0..n)
                .map(|i| {
                    let weak_good = rand::Rng::random_bool(&mut rng, 0.5);
                    item(
                        &format!("q{i}"),
                        if weak_good { 1.0 } else { 0.0 },
                        if weak_good { 1.0 } else { 0.0 },
                        if strong_all_good { 1.0 } else { 0.0 },
                    )
                })
                .collect();
            let c = cfg();
            for budget in 0..=n {
                let outcomes = route_by_budget(&items, &c, budget).unwrap();
                let routed = success_rate(&outcomes, c.success_threshold).unwrap();
                let expected = analytic_random_expectation(&items, c.success_threshold, budget);
                assert!(
                    routed >= expected - 1e-12,
                    "case {case} budget {budget}: routed {routed} < random {expected}"
                );
            }
        }
    }
}
