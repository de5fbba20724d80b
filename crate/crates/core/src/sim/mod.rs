//! Deterministic discrete-event simulation of the control-plane stage
//! network.
//!
//! Each processor pool is a FIFO multi-server station with exponential
//! service; a transaction visits the profile's stages in order. The
//! closed workload cycles a fixed population through an exponential
//! think state; the open workload feeds Poisson arrivals (used by the
//! analytic validation fixtures).
//!
//! Randomness is drawn from counter-mode streams keyed by purpose
//! (think per user, service per transaction, one arrival stream), so a
//! run is a pure function of (scenario, options) regardless of platform.

mod stats;

pub use stats::CiEstimate;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{EngineError, EngineOptions, MetricsReport, PerfEngine};
use crate::model::{PoolRole, ValidatedScenario, Workload};
use crate::perf::{check_profile, derive_profile, FlowProfile};

const BATCHES: usize = 20;

// Stream-id namespaces; the low bits carry a user or transaction index.
const THINK_STREAM: u64 = 1 << 56;
const SERVICE_STREAM: u64 = 2 << 56;
const ARRIVAL_STREAM: u64 = 3 << 56;

/// The simulation strategy.
pub struct DesEngine;

impl PerfEngine for DesEngine {
    fn name(&self) -> &'static str {
        "des"
    }

    fn evaluate(
        &self,
        scenario: &ValidatedScenario,
        options: &EngineOptions,
    ) -> Result<MetricsReport, EngineError> {
        simulate(scenario, options, None)
    }
}

/// One line of the optional event log.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub time: f64,
    pub event: &'static str,
    pub txn: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolRole>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    /// A transaction begins (think expiry or Poisson arrival).
    Start { user: u64 },
    /// The slot's current stage finishes service.
    Done { slot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ev {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl Eq for Ev {}

impl Ord for Ev {
    fn cmp(&self, other: &Self) -> Ordering {
        // Event times are finite; ties resolve in scheduling order.
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Pool {
    c: u64,
    busy: u64,
    queue: VecDeque<usize>,
    busy_area: f64,
    services: u64,
}

struct Slot {
    txn: u64,
    rng: ChaCha8Rng,
    stage: usize,
    started: f64,
    user: u64,
}

/// Exactly one uniform draw per sample, mapped onto (0, 1] so the rate
/// scaling never sees log(0).
fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

#[derive(Clone, Copy)]
enum StopRule {
    /// Run until this many measured completions (after the warmup count).
    Count { warm: u64, measured: u64 },
    /// Run until this simulated time (warmup ends at `warm`).
    Time { warm: f64, end: f64 },
}

#[derive(Default, Clone)]
struct Snapshot {
    t: f64,
    in_sys_area: f64,
    busy_area: BTreeMap<PoolRole, f64>,
}

struct Sim<'a> {
    profile: &'a FlowProfile,
    seed: u64,
    pools: BTreeMap<PoolRole, Pool>,
    heap: BinaryHeap<std::cmp::Reverse<Ev>>,
    ev_seq: u64,
    slots: Vec<Slot>,
    free: Vec<usize>,
    next_txn: u64,
    now: f64,
    in_flight: u64,
    in_sys_area: f64,
    total_completions: u64,
    // Closed-workload think streams (one per user) or the arrival stream.
    think: Vec<ChaCha8Rng>,
    think_rate: f64,
    arrival: Option<(ChaCha8Rng, f64)>,
    // Measurement window.
    measuring: bool,
    start_snap: Snapshot,
    responses: Vec<f64>,
    finishes: Vec<f64>,
    events: Option<&'a mut Vec<EventRecord>>,
}

impl<'a> Sim<'a> {
    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    fn push_event(&mut self, time: f64, kind: Kind) {
        let ev = Ev {
            time,
            seq: self.ev_seq,
            kind,
        };
        self.ev_seq += 1;
        self.heap.push(std::cmp::Reverse(ev));
    }

    fn log(&mut self, event: &'static str, txn: u64, pool: Option<PoolRole>) {
        let time = self.now;
        if let Some(out) = self.events.as_deref_mut() {
            out.push(EventRecord {
                time,
                event,
                txn,
                pool,
            });
        }
    }

    /// Advance the clock, accumulating time-weighted state areas.
    fn advance_to(&mut self, t: f64) {
        let dt = t - self.now;
        debug_assert!(dt >= 0.0);
        if dt > 0.0 {
            self.in_sys_area += self.in_flight as f64 * dt;
            for pool in self.pools.values_mut() {
                pool.busy_area += pool.busy as f64 * dt;
            }
            self.now = t;
        } else {
            self.now = t.max(self.now);
        }
    }

    fn take_snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.now,
            in_sys_area: self.in_sys_area,
            busy_area: self
                .pools
                .iter()
                .map(|(role, p)| (*role, p.busy_area))
                .collect(),
        }
    }

    /// Begin a transaction for `user`: claim a slot, seed its service
    /// stream, and contend for the first stage's pool.
    fn start_txn(&mut self, user: u64) {
        let txn = self.next_txn;
        self.next_txn += 1;
        let slot = Slot {
            txn,
            rng: self.stream(SERVICE_STREAM | txn),
            stage: 0,
            started: self.now,
            user,
        };
        let idx = match self.free.pop() {
            Some(i) => {
                self.slots[i] = slot;
                i
            }
            None => {
                self.slots.push(slot);
                self.slots.len() - 1
            }
        };
        self.in_flight += 1;
        self.log("txnStart", txn, None);
        self.enter_stage(idx);
    }

    /// Present the slot at its current stage's pool: serve now or queue.
    fn enter_stage(&mut self, idx: usize) {
        let role = self.profile.stages[self.slots[idx].stage].pool;
        let pool = self.pools.get_mut(&role).expect("stage pool exists");
        if pool.busy < pool.c {
            pool.busy += 1;
            self.begin_service(idx, role);
        } else {
            pool.queue.push_back(idx);
        }
    }

    fn begin_service(&mut self, idx: usize, role: PoolRole) {
        let stage = self.slots[idx].stage;
        let rate = self.profile.stages[stage].service_rate;
        let dt = exp_draw(&mut self.slots[idx].rng, rate);
        let t = self.now + dt;
        self.push_event(t, Kind::Done { slot: idx });
        let txn = self.slots[idx].txn;
        self.log("stageStart", txn, Some(role));
    }

    /// Service completion: free the processor, hand it to the next
    /// queued slot, and move this transaction forward.
    fn finish_stage(&mut self, idx: usize) {
        let role = self.profile.stages[self.slots[idx].stage].pool;
        let next_waiting = {
            let pool = self.pools.get_mut(&role).expect("stage pool exists");
            pool.services += 1;
            pool.busy -= 1;
            let next = pool.queue.pop_front();
            if next.is_some() {
                pool.busy += 1;
            }
            next
        };
        if let Some(w) = next_waiting {
            self.begin_service(w, role);
        }
        let txn = self.slots[idx].txn;
        self.log("stageDone", txn, Some(role));
        self.slots[idx].stage += 1;
        if self.slots[idx].stage == self.profile.stages.len() {
            self.complete(idx);
        } else {
            self.enter_stage(idx);
        }
    }

    fn complete(&mut self, idx: usize) {
        let Slot {
            txn, started, user, ..
        } = self.slots[idx];
        self.in_flight -= 1;
        self.total_completions += 1;
        self.log("txnComplete", txn, None);
        if self.measuring {
            self.responses.push(self.now - started);
            self.finishes.push(self.now);
        }
        if self.arrival.is_none() {
            // Closed workload: the user thinks, then comes back.
            let dt = exp_draw(&mut self.think[user as usize], self.think_rate);
            let t = self.now + dt;
            self.push_event(t, Kind::Start { user });
        }
        self.free.push(idx);
    }
}

/// Run the simulation. `events` (when given) receives the full event
/// log; metrics are identical with or without it.
pub fn simulate(
    scenario: &ValidatedScenario,
    options: &EngineOptions,
    events: Option<&mut Vec<EventRecord>>,
) -> Result<MetricsReport, EngineError> {
    let profile = derive_profile(scenario)?;
    check_profile(&profile)?;
    let warmup = options.warmup.clamp(0.0, 0.95);

    let pools: BTreeMap<PoolRole, Pool> = scenario
        .pools
        .iter()
        .map(|(role, c)| {
            (
                *role,
                Pool {
                    c: *c as u64,
                    busy: 0,
                    queue: VecDeque::new(),
                    busy_area: 0.0,
                    services: 0,
                },
            )
        })
        .collect();

    let mut sim = Sim {
        profile: &profile,
        seed: options.seed,
        pools,
        heap: BinaryHeap::new(),
        ev_seq: 0,
        slots: Vec::new(),
        free: Vec::new(),
        next_txn: 0,
        now: 0.0,
        in_flight: 0,
        in_sys_area: 0.0,
        total_completions: 0,
        think: Vec::new(),
        think_rate: profile.think_rate.unwrap_or(0.0),
        arrival: None,
        measuring: false,
        start_snap: Snapshot::default(),
        responses: Vec::new(),
        finishes: Vec::new(),
        events,
    };

    match scenario.workload {
        Workload::Closed { population } => {
            for user in 0..population {
                let mut rng = sim.stream(THINK_STREAM | user);
                let dt = exp_draw(&mut rng, sim.think_rate);
                sim.think.push(rng);
                sim.push_event(dt, Kind::Start { user });
            }
        }
        Workload::Open { arrival_rate } => {
            let mut rng = sim.stream(ARRIVAL_STREAM);
            let dt = exp_draw(&mut rng, arrival_rate);
            sim.arrival = Some((rng, arrival_rate));
            sim.push_event(dt, Kind::Start { user: 0 });
        }
    }

    let stop = match options.horizon {
        Some(h) => StopRule::Time {
            warm: warmup * h,
            end: h,
        },
        None => {
            let measured = options.completions.max(1);
            let warm = (measured as f64 * warmup / (1.0 - warmup)).ceil() as u64;
            StopRule::Count { warm, measured }
        }
    };

    // A zero-length warmup starts the measurement window immediately.
    match stop {
        StopRule::Count { warm: 0, .. } | StopRule::Time { warm: 0.0, .. } => {
            sim.measuring = true;
            sim.start_snap = sim.take_snapshot();
        }
        _ => {}
    }

    let end_time = loop {
        let Some(std::cmp::Reverse(ev)) = sim.heap.pop() else {
            return Err(EngineError::NoProgress("event queue drained".to_string()));
        };
        if let StopRule::Time { warm, end } = stop {
            if !sim.measuring && ev.time >= warm {
                sim.advance_to(warm);
                sim.measuring = true;
                sim.start_snap = sim.take_snapshot();
            }
            if ev.time > end {
                sim.advance_to(end);
                break end;
            }
        }
        sim.advance_to(ev.time);
        match ev.kind {
            Kind::Start { user } => {
                if let Some((ref mut rng, rate)) = sim.arrival {
                    let dt = exp_draw(rng, rate);
                    let t = sim.now + dt;
                    sim.push_event(t, Kind::Start { user: 0 });
                }
                sim.start_txn(user);
            }
            Kind::Done { slot } => sim.finish_stage(slot),
        }
        if let StopRule::Count { warm, measured } = stop {
            if !sim.measuring && sim.total_completions >= warm {
                sim.measuring = true;
                sim.start_snap = sim.take_snapshot();
            }
            if sim.measuring && sim.responses.len() as u64 >= measured {
                break sim.now;
            }
        }
    };

    let end_snap = sim.take_snapshot();
    let t0 = sim.start_snap.t;
    let measured_time = end_time - t0;
    let n = sim.responses.len() as u64;
    if n == 0 || measured_time <= 0.0 {
        return Err(EngineError::NoProgress(
            "no completions inside the measurement window".to_string(),
        ));
    }

    let throughput = n as f64 / measured_time;
    let mean_response = sim.responses.iter().sum::<f64>() / n as f64;
    let mean_in_system = (end_snap.in_sys_area - sim.start_snap.in_sys_area) / measured_time;
    let utilization: BTreeMap<PoolRole, f64> = sim
        .pools
        .iter()
        .map(|(role, pool)| {
            let area = end_snap.busy_area[role] - sim.start_snap.busy_area[role];
            (*role, area / (pool.c as f64 * measured_time))
        })
        .collect();
    let littles = (throughput * mean_response - mean_in_system).abs() / mean_in_system.max(1e-9);

    let ci_throughput = stats::batch_throughput(&sim.finishes, t0, BATCHES).map(|e| e.half_width);
    let ci_response = stats::batch_means(&sim.responses, BATCHES).map(|e| e.half_width);

    let (population, arrival_rate) = match scenario.workload {
        Workload::Closed { population } => (Some(population), None),
        Workload::Open { arrival_rate } => (None, Some(arrival_rate)),
    };

    Ok(MetricsReport {
        engine: "des".to_string(),
        variant: scenario.variant,
        population,
        arrival_rate,
        throughput,
        mean_response,
        mean_in_system,
        utilization,
        ci_throughput,
        ci_response,
        completions: Some(n),
        measured_time: Some(measured_time),
        littles_residual: Some(littles),
    })
}
