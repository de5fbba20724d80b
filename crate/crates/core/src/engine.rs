//! Pluggable performance engines. Both engines answer the same question
//! ("steady-state metrics of a scenario at a given load") through one
//! trait, so callers pick an evaluation strategy by name and sweeps stay
//! agnostic about whether the numbers come from simulation or from an
//! exact chain solution.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PoolRole, ValidatedScenario, Variant};

/// Knobs shared across engines; each engine reads the ones it honors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    /// Root seed for all random streams (simulation only).
    pub seed: u64,
    /// Measured transaction completions to collect after warmup.
    pub completions: u64,
    /// Alternative stop rule: simulated-time horizon.
    pub horizon: Option<f64>,
    /// Fraction of the run discarded as warmup.
    pub warmup: f64,
    /// Upper bound on enumerated chain states (analytic engine only).
    pub state_cap: usize,
    /// Convergence tolerance for iterative steady-state solves.
    pub tol: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            seed: 0,
            completions: 20_000,
            horizon: None,
            warmup: 0.1,
            state_cap: 200_000,
            tol: 1e-10,
        }
    }
}

/// Steady-state answer an engine produces for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub engine: String,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
    /// Completed transactions per unit time.
    pub throughput: f64,
    /// Mean time from transaction start to completion (think time excluded).
    pub mean_response: f64,
    /// Time-averaged number of in-flight transactions.
    pub mean_in_system: f64,
    /// Per-pool processor utilization in [0, 1].
    pub utilization: BTreeMap<PoolRole, f64>,
    /// 95% confidence half-width on throughput (simulation only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_throughput: Option<f64>,
    /// 95% confidence half-width on mean response (simulation only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_response: Option<f64>,
    /// Measured completions behind the estimates (simulation only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completions: Option<u64>,
    /// Measured duration behind the estimates (simulation only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_time: Option<f64>,
    /// Relative gap |X*T - L| / max(L, eps), a self-consistency check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub littles_residual: Option<f64>,
}

impl MetricsReport {
    /// Highest-utilization pool, the capacity bottleneck at this point.
    pub fn bottleneck(&self) -> Option<(PoolRole, f64)> {
        self.utilization
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(p, u)| (*p, *u))
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("simulation stalled: {0}")]
    NoProgress(String),
    #[error("state space exceeds the cap of {cap} states")]
    StateSpaceExceeded { cap: usize },
    #[error("steady-state solve did not converge within {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("generator chain is not irreducible: {0}")]
    NotIrreducible(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
}

/// An evaluation strategy: maps a validated scenario to steady-state
/// metrics. Implementations must be deterministic functions of
/// (scenario, options).
pub trait PerfEngine: Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(
        &self,
        scenario: &ValidatedScenario,
        options: &EngineOptions,
    ) -> Result<MetricsReport, EngineError>;
}

/// Name-keyed registry of engines; the built-in set holds the simulator
/// and the analytic chain solver.
pub struct EngineRegistry {
    engines: BTreeMap<&'static str, Box<dyn PerfEngine>>,
}

impl EngineRegistry {
    pub fn empty() -> Self {
        EngineRegistry {
            engines: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(crate::sim::DesEngine));
        r.register(Box::new(crate::ctmc::CtmcEngine));
        r
    }

    /// Last registration for a name wins, so callers can shadow a
    /// built-in strategy with an instrumented one.
    pub fn register(&mut self, engine: Box<dyn PerfEngine>) {
        self.engines.insert(engine.name(), engine);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PerfEngine, EngineError> {
        self.engines
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| EngineError::UnknownEngine(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.engines.keys().copied().collect()
    }
}

impl fmt::Debug for EngineRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EngineRegistry")
            .field("engines", &self.names())
            .finish()
    }
}
