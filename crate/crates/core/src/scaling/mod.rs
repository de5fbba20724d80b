//! Population sweeps, saturation detection, and the equal-budget
//! comparison between the two architectures.
//!
//! A sweep evaluates one scenario over a population grid with a chosen
//! engine. Saturation is called on the resulting throughput curve by two
//! complementary rules: the marginal throughput elasticity dropping
//! below a threshold, or any pool's utilization effectively reaching
//! capacity. The comparison gives both variants identical processor
//! budgets (split per variant), sweeps both, and reports capacity,
//! saturation onset, and productivity side by side.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, EngineOptions, MetricsReport, PerfEngine};
use crate::model::{
    equal_budget_split, ActionKind, ModelError, PoolRole, ValidatedScenario, Variant,
};
use crate::perf::derive_profile;

/// When a sweep point counts as saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationRules {
    /// Slope rule: elasticity (relative throughput gain over relative
    /// population gain) below this marks saturation.
    pub epsilon: f64,
    /// Utilization rule: any pool at or above this marks saturation.
    pub util_threshold: f64,
}

impl Default for SaturationRules {
    fn default() -> Self {
        SaturationRules {
            epsilon: 0.05,
            util_threshold: 0.99,
        }
    }
}

/// Evaluate `scenario` at every population in `grid` (strictly
/// increasing, starting at 1 or above). Points run in parallel; the
/// result keeps grid order.
pub fn sweep_population(
    scenario: &ValidatedScenario,
    engine: &dyn PerfEngine,
    options: &EngineOptions,
    grid: &[u64],
) -> Result<Vec<MetricsReport>, EngineError> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::InvalidPopulation(
            "population grid must be strictly increasing and start at 1 or above".to_string(),
        )
        .into());
    }
    grid.par_iter()
        .map(|&k| engine.evaluate(&scenario.with_population(k), options))
        .collect()
}

fn population_of(report: &MetricsReport) -> u64 {
    report
        .population
        .expect("sweep points come from closed workloads")
}

/// Index of the first saturated sweep point, if any.
pub fn detect_saturation(points: &[MetricsReport], rules: &SaturationRules) -> Option<usize> {
    for (i, point) in points.iter().enumerate() {
        if let Some((_, util)) = point.bottleneck() {
            if util >= rules.util_threshold {
                return Some(i);
            }
        }
        if i > 0 {
            let prev = &points[i - 1];
            let dx = (point.throughput - prev.throughput) / prev.throughput;
            let dk =
                (population_of(point) - population_of(prev)) as f64 / population_of(prev) as f64;
            if dx / dk < rules.epsilon {
                return Some(i);
            }
        }
    }
    None
}

/// Productivity of an operating point: throughput, discounted by how far
/// the response time has degraded from the light-load reference, per
/// processor spent. `f(T) = 1 / (1 + T / t_ref)`.
pub fn productivity(throughput: f64, mean_response: f64, t_ref: f64, processors: u32) -> f64 {
    throughput / (1.0 + mean_response / t_ref) / processors as f64
}

/// Analytic capacity bound and its bottleneck: the pool that first runs
/// out of processors as load grows.
pub fn capacity_bound(scenario: &ValidatedScenario) -> Result<(f64, PoolRole), EngineError> {
    let profile = derive_profile(scenario)?;
    let mut best: Option<(f64, PoolRole)> = None;
    for (pool, c) in &scenario.pools {
        let demand = profile.demand(*pool);
        if demand <= 0.0 {
            continue;
        }
        let bound = *c as f64 / demand;
        if best.is_none_or(|(b, _)| bound < b) {
            best = Some((bound, *pool));
        }
    }
    best.ok_or_else(|| {
        EngineError::Model(ModelError::InvalidFlow(
            "transaction places no demand on any pool".to_string(),
        ))
    })
}

/// One variant evaluated at one processor budget.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BudgetOutcome {
    pub budget: u32,
    pub pools: BTreeMap<PoolRole, u32>,
    /// Analytic throughput capacity (min over pools of c / demand).
    pub lambda_max: f64,
    pub bottleneck: PoolRole,
    /// Light-load (K = 1) mean response, the productivity reference.
    pub t_ref: f64,
    /// Population at the first saturated sweep point, if the grid
    /// reached saturation.
    pub k_sat: Option<u64>,
    pub peak_productivity: f64,
    pub sweep: Vec<MetricsReport>,
    /// Productivity at each sweep point.
    pub productivity: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantComparison {
    pub variant: Variant,
    /// Capacity scaling ratio between the last and first budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    pub outcomes: Vec<BudgetOutcome>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ComparisonReport {
    pub engine: String,
    pub budgets: Vec<u32>,
    pub grid: Vec<u64>,
    pub ngn: VariantComparison,
    pub engn: VariantComparison,
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("comparison requires one ngn scenario and one engn scenario")]
    VariantPair,
    #[error("scenarios disagree on {0}; a fair comparison shares workload parameters")]
    MismatchedRates(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl From<ModelError> for CompareError {
    fn from(e: ModelError) -> Self {
        CompareError::Engine(e.into())
    }
}

fn variant_outcomes(
    scenario: &ValidatedScenario,
    budgets: &[u32],
    grid: &[u64],
    engine: &dyn PerfEngine,
    options: &EngineOptions,
    rules: &SaturationRules,
) -> Result<VariantComparison, CompareError> {
    let mut outcomes = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let pools = equal_budget_split(budget, scenario.variant, None)?;
        let configured = scenario.with_pools(&pools)?;
        let (lambda_max, bottleneck) = capacity_bound(&configured)?;
        let t_ref = engine
            .evaluate(&configured.with_population(1), options)?
            .mean_response;
        let sweep = sweep_population(&configured, engine, options, grid)?;
        let k_sat = detect_saturation(&sweep, rules).map(|i| grid[i]);
        let productivity: Vec<f64> = sweep
            .iter()
            .map(|p| self::productivity(p.throughput, p.mean_response, t_ref, budget))
            .collect();
        let peak_productivity = productivity.iter().cloned().fold(0.0f64, f64::max);
        outcomes.push(BudgetOutcome {
            budget,
            pools,
            lambda_max,
            bottleneck,
            t_ref,
            k_sat,
            peak_productivity,
            sweep,
            productivity,
        });
    }
    let psi = match (outcomes.first(), outcomes.last()) {
        (Some(a), Some(b)) if outcomes.len() >= 2 => Some(b.lambda_max / a.lambda_max),
        _ => None,
    };
    Ok(VariantComparison {
        variant: scenario.variant,
        psi,
        outcomes,
    })
}

/// Sweep both architectures over the same grid at the same total
/// processor budgets and report them side by side.
pub fn compare_variants(
    ngn: &ValidatedScenario,
    engn: &ValidatedScenario,
    budgets: &[u32],
    grid: &[u64],
    engine: &dyn PerfEngine,
    options: &EngineOptions,
    rules: &SaturationRules,
) -> Result<ComparisonReport, CompareError> {
    if ngn.variant != Variant::Ngn || engn.variant != Variant::Engn {
        return Err(CompareError::VariantPair);
    }
    let (tn, te) = (ngn.rate(ActionKind::Think), engn.rate(ActionKind::Think));
    if tn != te {
        return Err(CompareError::MismatchedRates(format!(
            "think rate ({tn} vs {te})"
        )));
    }
    if budgets.is_empty() {
        return Err(CompareError::Engine(
            ModelError::InvalidWeights("at least one budget is required".to_string()).into(),
        ));
    }
    Ok(ComparisonReport {
        engine: engine.name().to_string(),
        budgets: budgets.to_vec(),
        grid: grid.to_vec(),
        ngn: variant_outcomes(ngn, budgets, grid, engine, options, rules)?,
        engn: variant_outcomes(engn, budgets, grid, engine, options, rules)?,
    })
}

/// Render sweep points as CSV, one row per population.
pub fn sweep_csv(config: &str, points: &[MetricsReport]) -> String {
    let mut out = String::new();
    let pools: Vec<PoolRole> = points
        .first()
        .map(|p| p.utilization.keys().copied().collect())
        .unwrap_or_default();
    out.push_str("variant,config,population,throughput,meanResponse,ciThroughput");
    for pool in &pools {
        out.push_str(&format!(",util_{}", pool.name()));
    }
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            p.variant,
            config,
            population_of(p),
            p.throughput,
            p.mean_response,
            p.ci_throughput.map_or(String::new(), |c| c.to_string()),
        ));
        for pool in &pools {
            out.push_str(&format!(",{}", p.utilization[pool]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::CtmcEngine;
    use crate::testutil::fixture;

    fn point(k: u64, x: f64, util: f64) -> MetricsReport {
        MetricsReport {
            engine: "test".to_string(),
            variant: Variant::Ngn,
            population: Some(k),
            arrival_rate: None,
            throughput: x,
            mean_response: 1.0,
            mean_in_system: x,
            utilization: [(PoolRole::TransportFunction, util)].into_iter().collect(),
            ci_throughput: None,
            ci_response: None,
            completions: None,
            measured_time: None,
            littles_residual: None,
        }
    }

    #[test]
    fn slope_rule_fires_where_the_curve_flattens() {
        let ks = [100u64, 200, 300, 400, 500, 600];
        let xs = [10.0, 20.0, 30.0, 39.0, 39.2, 39.3];
        let points: Vec<_> = ks.iter().zip(xs).map(|(&k, x)| point(k, x, 0.5)).collect();
        assert_eq!(
            detect_saturation(&points, &SaturationRules::default()),
            Some(4)
        );
    }

    #[test]
    fn utilization_rule_fires_on_a_pinned_pool() {
        let points = vec![
            point(100, 10.0, 0.3),
            point(200, 20.0, 0.6),
            point(300, 30.0, 0.995),
            point(400, 40.0, 0.999),
        ];
        assert_eq!(
            detect_saturation(&points, &SaturationRules::default()),
            Some(2)
        );
    }

    #[test]
    fn linear_growth_never_saturates() {
        let points: Vec<_> = (1..=6).map(|i| point(i * 100, i as f64, 0.4)).collect();
        assert_eq!(
            detect_saturation(&points, &SaturationRules::default()),
            None
        );
    }

    #[test]
    fn productivity_discounts_response_degradation() {
        // At T = t_ref the discount is exactly one half.
        assert!((productivity(100.0, 2.0, 2.0, 4) - 12.5).abs() < 1e-12);
        // Zero response time means no discount.
        assert!((productivity(100.0, 0.0, 2.0, 4) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_bound_finds_the_transport_bottleneck() {
        let (bound, pool) = capacity_bound(&fixture("crossval-ngn.json")).unwrap();
        // Demands: endUser 0.5, transportFunction 8, transportControl 3
        // over 2 processors each.
        assert!((bound - 0.25).abs() < 1e-12, "{bound}");
        assert_eq!(pool, PoolRole::TransportFunction);
    }

    #[test]
    fn sweeps_preserve_grid_order_and_grow_monotonically() {
        let scenario = fixture("repairman.json");
        let grid = [1u64, 2, 3];
        let points =
            sweep_population(&scenario, &CtmcEngine, &EngineOptions::default(), &grid).unwrap();
        assert_eq!(points.len(), 3);
        for (k, p) in grid.iter().zip(&points) {
            assert_eq!(p.population, Some(*k));
        }
        assert!(points.windows(2).all(|w| w[0].throughput < w[1].throughput));
    }

    #[test]
    fn bad_grids_are_rejected() {
        let scenario = fixture("repairman.json");
        for grid in [&[][..], &[0, 1][..], &[2, 2][..], &[3, 1][..]] {
            assert!(
                sweep_population(&scenario, &CtmcEngine, &EngineOptions::default(), grid).is_err()
            );
        }
    }

    #[test]
    fn comparison_pairs_budgets_across_variants() {
        let report = compare_variants(
            &fixture("crossval-ngn.json"),
            &fixture("crossval-engn.json"),
            &[8, 16],
            &[1, 2, 4],
            &CtmcEngine,
            &EngineOptions::default(),
            &SaturationRules::default(),
        )
        .unwrap();
        for side in [&report.ngn, &report.engn] {
            assert_eq!(side.outcomes.len(), 2);
            for (outcome, budget) in side.outcomes.iter().zip([8u32, 16]) {
                assert_eq!(outcome.budget, budget);
                assert_eq!(outcome.pools.values().sum::<u32>(), budget);
                assert_eq!(outcome.sweep.len(), 3);
                assert!(outcome.t_ref > 0.0);
            }
        }
        // The transport bottleneck (demand 8) limits both variants here;
        // the even split gives it 4/8 then 6/8 processors in the ngn and
        // 2/8 then 4/8 in the engn.
        assert!((report.ngn.psi.unwrap() - 1.5).abs() < 1e-12);
        assert!((report.engn.psi.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_scenarios_are_rejected() {
        let ngn = fixture("crossval-ngn.json");
        let engn = fixture("crossval-engn.json");
        assert!(matches!(
            compare_variants(
                &engn,
                &ngn,
                &[8],
                &[1],
                &CtmcEngine,
                &EngineOptions::default(),
                &SaturationRules::default()
            ),
            Err(CompareError::VariantPair)
        ));
        let slow = fixture("default-ngn.json"); // think 0.05, not 1.0
        assert!(matches!(
            compare_variants(
                &slow,
                &engn,
                &[8],
                &[1],
                &CtmcEngine,
                &EngineOptions::default(),
                &SaturationRules::default()
            ),
            Err(CompareError::MismatchedRates(_))
        ));
    }

    #[test]
    fn csv_lists_one_row_per_point_with_pool_columns() {
        let scenario = fixture("crossval-ngn.json");
        let points =
            sweep_population(&scenario, &CtmcEngine, &EngineOptions::default(), &[1, 2]).unwrap();
        let csv = sweep_csv("crossval", &points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("variant,config,population,throughput"));
        assert!(lines[0].contains("util_transportFunction"));
        assert!(lines[1].starts_with("ngn,crossval,1,"));
    }
}
