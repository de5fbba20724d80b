//! Analytic cross-check engine: a continuous-time Markov chain over
//! transaction counts.
//!
//! The chain abstracts the stage network to one station per processor
//! pool (plus the infinite-server think station), with each station's
//! per-transaction rate set to the reciprocal of the transaction's total
//! service demand there. For pools whose stages share one service rate
//! this reproduces the product-form solution of the simulated FIFO
//! network exactly; with mixed per-stage rates it is the usual
//! exponential-demand approximation, which is why the cross-validation
//! fixtures keep each pool's rates uniform.
//!
//! Small chains are solved by GTH elimination (no subtractions, so the
//! probabilities come out clean); larger ones by power iteration on the
//! uniformized jump chain, whose self-loops make convergence a
//! Perron-Frobenius guarantee even though the station cycle is periodic.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{EngineError, EngineOptions, MetricsReport, PerfEngine};
use crate::model::{ModelError, PoolRole, ValidatedScenario, Workload};
use crate::perf::{check_profile, derive_profile};

/// Largest chain handed to dense GTH elimination; beyond this the
/// iterative solver takes over.
const GTH_LIMIT: usize = 1024;
const MAX_SWEEPS: usize = 200_000;

/// The analytic strategy.
pub struct CtmcEngine;

impl PerfEngine for CtmcEngine {
    fn name(&self) -> &'static str {
        "ctmc"
    }

    fn evaluate(
        &self,
        scenario: &ValidatedScenario,
        options: &EngineOptions,
    ) -> Result<MetricsReport, EngineError> {
        let chain = build_chain(scenario, options.state_cap)?;
        let pi = solve_steady_state(&chain, options.tol)?;
        Ok(chain.metrics(&pi, scenario))
    }
}

/// One station of the counting chain.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Station {
    pub name: String,
    /// `None` marks the infinite-server think station.
    pub servers: Option<u64>,
    /// Per-transaction service rate.
    pub rate: f64,
    #[serde(skip)]
    pool: Option<PoolRole>,
}

/// Counting chain: states are occupancy vectors over the stations, and
/// a transaction cycles through the stations in order.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Chain {
    pub population: u64,
    pub stations: Vec<Station>,
    pub states: Vec<Vec<u32>>,
    /// Sparse transitions (from, to, rate).
    pub transitions: Vec<(usize, usize, f64)>,
}

/// Number of ways to place `k` transactions on `s` stations.
fn composition_count(k: u64, s: u64) -> Option<u64> {
    // C(k + s - 1, s - 1) with overflow checks.
    let mut acc: u128 = 1;
    for i in 1..s {
        acc = acc.checked_mul((k + i) as u128)?;
        acc /= i as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn enumerate_states(k: u64, stations: usize) -> Vec<Vec<u32>> {
    let mut states = Vec::new();
    let mut current = vec![0u32; stations];
    fn rec(states: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, left: u64) {
        if pos + 1 == current.len() {
            current[pos] = left as u32;
            states.push(current.clone());
            return;
        }
        for n in 0..=left {
            current[pos] = n as u32;
            rec(states, current, pos + 1, left - n);
        }
        current[pos] = 0;
    }
    rec(&mut states, &mut current, 0, k);
    states
}

/// Departure rate of station `s` holding `n` transactions.
fn station_rate(st: &Station, n: u32) -> f64 {
    match st.servers {
        None => n as f64 * st.rate,
        Some(c) => (n as u64).min(c) as f64 * st.rate,
    }
}

/// Build the counting chain for a closed scenario.
pub fn build_chain(scenario: &ValidatedScenario, state_cap: usize) -> Result<Chain, EngineError> {
    let profile = derive_profile(scenario)?;
    check_profile(&profile)?;
    let Workload::Closed { population } = scenario.workload else {
        return Err(ModelError::InvalidPopulation(
            "the analytic engine needs a closed population".to_string(),
        )
        .into());
    };
    if population == 0 {
        return Err(ModelError::InvalidPopulation(
            "closed population must be at least 1".to_string(),
        )
        .into());
    }

    let mut stations = vec![Station {
        name: "think".to_string(),
        servers: None,
        rate: profile.think_rate.unwrap_or(1.0),
        pool: None,
    }];
    for (pool, servers) in &scenario.pools {
        let demand = profile.demand(*pool);
        if demand > 0.0 {
            stations.push(Station {
                name: pool.name().to_string(),
                servers: Some(*servers as u64),
                rate: 1.0 / demand,
                pool: Some(*pool),
            });
        }
    }

    match composition_count(population, stations.len() as u64) {
        Some(n) if n as usize <= state_cap => {}
        _ => return Err(EngineError::StateSpaceExceeded { cap: state_cap }),
    }

    let states = enumerate_states(population, stations.len());
    let index: BTreeMap<&[u32], usize> = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_slice(), i))
        .collect();

    let mut transitions = Vec::new();
    for (from, state) in states.iter().enumerate() {
        for (s, st) in stations.iter().enumerate() {
            if state[s] == 0 {
                continue;
            }
            let rate = station_rate(st, state[s]);
            let mut next = state.clone();
            next[s] -= 1;
            next[(s + 1) % stations.len()] += 1;
            let to = index[next.as_slice()];
            transitions.push((from, to, rate));
        }
    }

    Ok(Chain {
        population,
        stations,
        states,
        transitions,
    })
}

impl Chain {
    fn metrics(&self, pi: &[f64], scenario: &ValidatedScenario) -> MetricsReport {
        let last = self.stations.len() - 1;
        let mut throughput = 0.0;
        let mut think_mean = 0.0;
        let mut busy: BTreeMap<PoolRole, f64> = BTreeMap::new();
        for (x, state) in self.states.iter().enumerate() {
            let p = pi[x];
            throughput += p * station_rate(&self.stations[last], state[last]);
            think_mean += p * state[0] as f64;
            for (s, st) in self.stations.iter().enumerate().skip(1) {
                let pool = st.pool.expect("non-think stations carry a pool");
                let c = st.servers.expect("pool stations are finite") as f64;
                *busy.entry(pool).or_insert(0.0) += p * ((state[s] as u64).min(c as u64) as f64);
            }
        }
        let mean_in_system = self.population as f64 - think_mean;
        let utilization: BTreeMap<PoolRole, f64> = scenario
            .pools
            .iter()
            .map(|(pool, c)| {
                let b = busy.get(pool).copied().unwrap_or(0.0);
                (*pool, b / *c as f64)
            })
            .collect();
        MetricsReport {
            engine: "ctmc".to_string(),
            variant: scenario.variant,
            population: Some(self.population),
            arrival_rate: None,
            throughput,
            mean_response: mean_in_system / throughput,
            mean_in_system,
            utilization,
            ci_throughput: None,
            ci_response: None,
            completions: None,
            measured_time: None,
            littles_residual: None,
        }
    }
}

/// Verify every state can reach and be reached from state 0.
fn check_irreducible(n: usize, transitions: &[(usize, usize, f64)]) -> Result<(), EngineError> {
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for &(from, to, rate) in transitions {
        if rate > 0.0 && from != to {
            fwd[from].push(to);
            bwd[to].push(from);
        }
    }
    for (adj, dir) in [(&fwd, "reachable from"), (&bwd, "able to reach")] {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        if let Some(bad) = seen.iter().position(|s| !s) {
            return Err(EngineError::NotIrreducible(format!(
                "state {bad} is not {dir} state 0"
            )));
        }
    }
    Ok(())
}

/// Stationary distribution of the chain.
pub fn solve_steady_state(chain: &Chain, tol: f64) -> Result<Vec<f64>, EngineError> {
    let n = chain.states.len();
    check_irreducible(n, &chain.transitions)?;
    if n <= GTH_LIMIT {
        Ok(gth(n, &chain.transitions))
    } else {
        uniformized_power(n, &chain.transitions, tol)
    }
}

/// GTH elimination on the rate matrix; subtraction-free, so the result
/// is accurate down to the last few ulps.
fn gth(n: usize, transitions: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut q = vec![0.0f64; n * n];
    for &(from, to, rate) in transitions {
        if from != to {
            q[from * n + to] += rate;
        }
    }
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| q[k * n + j]).sum();
        for i in 0..k {
            q[i * n + k] /= s;
        }
        for i in 0..k {
            let w = q[i * n + k];
            if w == 0.0 {
                continue;
            }
            for j in 0..k {
                if j != i {
                    q[i * n + j] += w * q[k * n + j];
                }
            }
        }
    }
    let mut pi = vec![0.0f64; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * q[i * n + k]).sum();
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    pi
}

/// Power iteration on the uniformized jump chain `P = I + Q / lambda`.
/// Uniformization leaves positive self-loop mass at every state, so `P`
/// is primitive and the iteration converges for any irreducible chain,
/// including the periodic station cycles built here.
fn uniformized_power(
    n: usize,
    transitions: &[(usize, usize, f64)],
    tol: f64,
) -> Result<Vec<f64>, EngineError> {
    let mut incoming = vec![Vec::new(); n];
    let mut exit = vec![0.0f64; n];
    for &(from, to, rate) in transitions {
        if from != to {
            incoming[to].push((from, rate));
            exit[from] += rate;
        }
    }
    let lambda = 1.05 * exit.iter().cloned().fold(0.0f64, f64::max);
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        for j in 0..n {
            let inflow: f64 = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum();
            next[j] = pi[j] * (1.0 - exit[j] / lambda) + inflow / lambda;
        }
        let total: f64 = next.iter().sum();
        residual = 0.0;
        for j in 0..n {
            next[j] /= total;
            residual = residual.max((next[j] - pi[j]).abs() / next[j].max(1e-300));
        }
        std::mem::swap(&mut pi, &mut next);
        if residual < tol {
            return Ok(pi);
        }
    }
    Err(EngineError::NoConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PerfEngine;
    use crate::testutil::fixture;

    fn two_state() -> Chain {
        Chain {
            population: 1,
            stations: vec![],
            states: vec![vec![0], vec![1]],
            transitions: vec![(0, 1, 2.0), (1, 0, 1.0)],
        }
    }

    #[test]
    fn gth_solves_the_two_state_chain() {
        let pi = solve_steady_state(&two_state(), 1e-12).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gth_solves_a_birth_death_chain() {
        // Up at rate 1, down at rate 2 over three states: pi = (4,2,1)/7.
        let chain = Chain {
            population: 2,
            stations: vec![],
            states: vec![vec![0], vec![1], vec![2]],
            transitions: vec![(0, 1, 1.0), (1, 2, 1.0), (1, 0, 2.0), (2, 1, 2.0)],
        };
        let pi = solve_steady_state(&chain, 1e-12).unwrap();
        for (got, want) in pi.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn both_solvers_agree() {
        // K = 20 keeps the chain big enough (1771 states) that the
        // iterative path is the one production would take.
        let scenario = fixture("crossval-ngn.json").with_population(20);
        let chain = build_chain(&scenario, 1 << 20).unwrap();
        let direct = gth(chain.states.len(), &chain.transitions);
        let iterated = uniformized_power(chain.states.len(), &chain.transitions, 1e-12).unwrap();
        for (a, b) in direct.iter().zip(&iterated) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn repairman_engine_result_is_exact() {
        // K = 3, think rate 1, single server at rate 2.
        let r = CtmcEngine
            .evaluate(&fixture("repairman.json"), &EngineOptions::default())
            .unwrap();
        assert!((r.throughput - 7.5 / 4.75).abs() < 1e-12);
        assert!((r.mean_response - 0.9).abs() < 1e-12);
        assert!((r.utilization[&PoolRole::TransportControl] - 3.75 / 4.75).abs() < 1e-12);
        assert!((r.mean_in_system - 6.75 / 4.75).abs() < 1e-12);
    }

    #[test]
    fn flow_is_conserved_across_stations() {
        let scenario = fixture("crossval-engn.json");
        let chain = build_chain(&scenario, 1 << 20).unwrap();
        let pi = solve_steady_state(&chain, 1e-12).unwrap();
        // Every station's completion flow equals the cycle throughput.
        let flows: Vec<f64> = (0..chain.stations.len())
            .map(|s| {
                chain
                    .states
                    .iter()
                    .zip(&pi)
                    .map(|(state, p)| p * station_rate(&chain.stations[s], state[s]))
                    .sum()
            })
            .collect();
        for f in &flows {
            assert!((f - flows[0]).abs() < 1e-10, "{flows:?}");
        }
    }

    #[test]
    fn simulation_and_chain_agree_on_homogeneous_pools() {
        for name in ["crossval-ngn.json", "crossval-engn.json"] {
            let scenario = fixture(name);
            let exact = CtmcEngine
                .evaluate(&scenario, &EngineOptions::default())
                .unwrap();
            let sim = crate::sim::DesEngine
                .evaluate(&scenario, &EngineOptions::default())
                .unwrap();
            let tol = (0.02 * exact.throughput).max(2.0 * sim.ci_throughput.unwrap());
            assert!(
                (sim.throughput - exact.throughput).abs() < tol,
                "{name}: sim {} vs chain {}",
                sim.throughput,
                exact.throughput
            );
            for (pool, util) in &exact.utilization {
                assert!(
                    (sim.utilization[pool] - util).abs() < 0.02,
                    "{name} {pool}: sim {} vs chain {util}",
                    sim.utilization[pool]
                );
            }
        }
    }

    #[test]
    fn state_cap_is_enforced() {
        let err = build_chain(&fixture("crossval-ngn.json"), 10).unwrap_err();
        assert!(matches!(err, EngineError::StateSpaceExceeded { cap: 10 }));
    }

    #[test]
    fn open_workloads_are_rejected() {
        let err = build_chain(&fixture("mm1-open.json"), 1 << 20).unwrap_err();
        assert!(matches!(err, EngineError::Model(_)));
    }

    #[test]
    fn reducible_chains_are_reported() {
        let chain = Chain {
            population: 1,
            stations: vec![],
            states: vec![vec![0], vec![1], vec![2]],
            // State 2 is absorbing: unreachable backward from 0.
            transitions: vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0)],
        };
        assert!(matches!(
            solve_steady_state(&chain, 1e-10),
            Err(EngineError::NotIrreducible(_))
        ));
    }

    #[test]
    fn state_enumeration_covers_the_simplex() {
        let states = enumerate_states(3, 2);
        assert_eq!(states.len(), 4);
        assert_eq!(composition_count(3, 2), Some(4));
        assert_eq!(composition_count(20, 5), Some(10626));
        let chain = build_chain(&fixture("repairman.json"), 100).unwrap();
        assert_eq!(chain.states.len(), 4);
        assert_eq!(chain.stations.len(), 2);
    }
}
