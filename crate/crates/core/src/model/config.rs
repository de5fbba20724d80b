//! Scenario configuration: the raw JSON document, strict validation, and
//! the validated form the engines consume.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::MessageKind;

use super::topology::RawTopology;
use super::{AccessPointId, ActionKind, MobilityMode, PoolRole, Topology, UserId, Variant};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed scenario document: {0}")]
    Parse(String),
    #[error("unknown processor pool `{0}`")]
    UnknownPool(String),
    #[error("pool `{role}` does not exist in the {variant} architecture")]
    UnknownRoleForVariant { role: PoolRole, variant: Variant },
    #[error("processor pools must cover exactly {expected:?}; got {got:?}")]
    WrongPoolSet {
        expected: Vec<PoolRole>,
        got: Vec<PoolRole>,
    },
    #[error("invalid processor counts: {0}")]
    InvalidProcessors(String),
    #[error("unknown action `{0}` in rate table")]
    UnknownAction(String),
    #[error("rate for `{0}` must be positive and finite")]
    NonPositiveRate(ActionKind),
    #[error("rate table is missing required action `{0}`")]
    MissingRate(ActionKind),
    #[error("disconnected or malformed topology: {0}")]
    DisconnectedTopology(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid cost table: {0}")]
    InvalidCostTable(String),
    #[error("invalid user fixtures: {0}")]
    InvalidUsers(String),
    #[error("invalid fault injection: {0}")]
    InvalidFaults(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("budget of {total} processors cannot give every pool in {variant} at least one")]
    BudgetTooSmall { total: u32, variant: Variant },
    #[error("invalid budget weights: {0}")]
    InvalidWeights(String),
}

/// Closed population size or open arrival rate, as written in JSON:
/// either an integer or `{"open": rate}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Population {
    Closed(u64),
    Open { open: f64 },
}

/// Validated workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Workload {
    /// K users cycling think -> transaction -> think.
    Closed { population: u64 },
    /// Poisson transaction arrivals (analytic validation mode).
    Open { arrival_rate: f64 },
}

/// One cost-table entry: scales the service demand of `kind` messages
/// processed at `pool` by `factor` (rate divided by factor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CostEntry {
    pub kind: MessageKind,
    pub pool: PoolRole,
    pub factor: f64,
}

/// Lookup form of the cost table; absent pairs cost factor 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostTable {
    map: BTreeMap<(MessageKind, PoolRole), f64>,
}

impl CostTable {
    pub fn from_entries(entries: &[CostEntry]) -> Result<CostTable, ModelError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if !(e.factor.is_finite() && e.factor > 0.0) {
                return Err(ModelError::InvalidCostTable(format!(
                    "factor for ({:?}, {}) must be positive and finite",
                    e.kind, e.pool
                )));
            }
            if map.insert((e.kind, e.pool), e.factor).is_some() {
                return Err(ModelError::InvalidCostTable(format!(
                    "duplicate entry for ({:?}, {})",
                    e.kind, e.pool
                )));
            }
        }
        Ok(CostTable { map })
    }

    pub fn factor(&self, kind: MessageKind, pool: PoolRole) -> f64 {
        self.map.get(&(kind, pool)).copied().unwrap_or(1.0)
    }
}

/// Per-user scenario fixture; everything defaults to the well-behaved case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UserFixture {
    pub id: u64,
    pub attachment_point: AccessPointId,
    #[serde(default = "default_true")]
    pub credentials_valid: bool,
    #[serde(default = "default_true")]
    pub accepts_handover: bool,
    #[serde(default = "default_qos")]
    pub qos_rate: f64,
    /// Mobility mode requested at registration (defaults to network-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MobilityMode>,
    /// Preferred handover target access point; defaults to the first
    /// neighbor of the current attachment point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handover_target: Option<AccessPointId>,
}

fn default_true() -> bool {
    true
}

fn default_qos() -> f64 {
    1.0
}

impl UserFixture {
    pub fn new(id: u64, attachment_point: AccessPointId) -> UserFixture {
        UserFixture {
            id,
            attachment_point,
            credentials_valid: true,
            accepts_handover: true,
            qos_rate: default_qos(),
            mobility: None,
            handover_target: None,
        }
    }
}

/// Message injected into a generated trace after position `after_seq`,
/// used to exercise the invariant checker's violation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FaultSpec {
    pub after_seq: u64,
    pub kind: MessageKind,
    /// Node id in `role:index` form, e.g. `tcf:0`.
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<u64>,
    /// Message body as raw JSON; defaults to the empty payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

/// One stage of an explicit (synthetic) transaction flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RawStage {
    pub pool: String,
    pub action: String,
}

/// Transaction shape: derived from the built-in attachment flow, or an
/// explicit stage list (used by the queueing validation fixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlowSpec {
    Named(String),
    Explicit(Vec<RawStage>),
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec::Named("builtin".to_string())
    }
}

/// Scenario document as written on disk. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RawScenario {
    pub variant: Variant,
    pub processors: BTreeMap<String, u32>,
    pub rates: BTreeMap<String, f64>,
    pub population: Population,
    pub topology: RawTopology,
    #[serde(default)]
    pub cost_table: Vec<CostEntry>,
    #[serde(default)]
    pub users: Vec<UserFixture>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub flow: FlowSpec,
}

/// Validated flow shape.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowShape {
    /// Stages derived from the variant's built-in attachment flow trace.
    Builtin,
    /// Explicit stage list: (pool, action) per processing step.
    Explicit(Vec<(PoolRole, ActionKind)>),
}

/// A scenario that passed `validate_scenario`. Engines only accept this.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScenario {
    pub variant: Variant,
    pub pools: BTreeMap<PoolRole, u32>,
    /// True when eNGN support functions run on split per-function pools
    /// instead of the default shared signaling-service pool.
    pub split_pools: bool,
    pub rates: BTreeMap<ActionKind, f64>,
    pub workload: Workload,
    pub topology: Topology,
    pub cost: CostTable,
    pub users: BTreeMap<UserId, UserFixture>,
    pub faults: Vec<FaultSpec>,
    pub flow: FlowShape,
    raw: RawScenario,
}

impl ValidatedScenario {
    /// The raw document this scenario was validated from; re-validating it
    /// yields an equal scenario.
    pub fn raw(&self) -> &RawScenario {
        &self.raw
    }

    pub fn rate(&self, action: ActionKind) -> f64 {
        self.rates.get(&action).copied().unwrap_or(0.0)
    }

    /// Same scenario with a different closed population.
    pub fn with_population(&self, k: u64) -> ValidatedScenario {
        let mut raw = self.raw.clone();
        raw.population = Population::Closed(k);
        validate_scenario(&raw).expect("population swap preserves validity")
    }

    /// Same scenario with different processor counts (pool set unchanged).
    pub fn with_pools(
        &self,
        pools: &BTreeMap<PoolRole, u32>,
    ) -> Result<ValidatedScenario, ModelError> {
        let mut raw = self.raw.clone();
        raw.processors = pools
            .iter()
            .map(|(p, n)| (p.name().to_string(), *n))
            .collect();
        validate_scenario(&raw)
    }

    pub fn total_processors(&self) -> u32 {
        self.pools.values().sum()
    }

    /// Pool a protocol role's processing is charged to under this
    /// scenario's aggregation mode.
    pub fn pool_of(&self, role: super::FunctionRole) -> Option<PoolRole> {
        use super::FunctionRole as R;
        Some(match role {
            R::EndUser => PoolRole::EndUser,
            R::TransportFunction => PoolRole::TransportFunction,
            R::TransportControl => PoolRole::TransportControl,
            R::Nassf if self.split_pools => PoolRole::Nassf,
            R::Nasssuf if self.split_pools => PoolRole::Nasssuf,
            R::Mssf if self.split_pools => PoolRole::Mssf,
            R::Msssuf if self.split_pools => PoolRole::Msssuf,
            R::Nassf | R::Nasssuf | R::Mssf | R::Msssuf => PoolRole::SignalingService,
            // External application endpoints are outside the operator's
            // processor budget; their work is not charged to any pool.
            R::ServiceSupport | R::ExternalApp => return None,
        })
    }
}

/// Actions the built-in attachment transaction exercises per variant; the
/// rate table must define all of them.
fn required_actions(variant: Variant) -> &'static [ActionKind] {
    match variant {
        Variant::Ngn => &[
            ActionKind::Think,
            ActionKind::UserSignaling,
            ActionKind::ControlSignaling,
            ActionKind::ResourceControl,
            ActionKind::RelaySignaling,
        ],
        Variant::Engn => &[
            ActionKind::Think,
            ActionKind::UserSignaling,
            ActionKind::ResourceControl,
            ActionKind::DataForward,
            ActionKind::ServiceSignaling,
        ],
    }
}

/// Validate a raw scenario document into the form the engines accept.
///
/// Checked here: processor pool set matches the variant (shared or split
/// aggregation), counts are positive, all rates are positive and the
/// flow's required actions are present, the topology is connected and
/// symmetric, user fixtures reference known access points, and fault
/// injections name roles that exist in the variant.
pub fn validate_scenario(raw: &RawScenario) -> Result<ValidatedScenario, ModelError> {
    let variant = raw.variant;

    // Processor pools.
    let mut pools = BTreeMap::new();
    for (name, count) in &raw.processors {
        let pool = PoolRole::parse(name).ok_or_else(|| ModelError::UnknownPool(name.clone()))?;
        if !pool_in_variant(pool, variant) {
            return Err(ModelError::UnknownRoleForVariant {
                role: pool,
                variant,
            });
        }
        if *count == 0 {
            return Err(ModelError::InvalidProcessors(format!(
                "pool {pool} has zero processors"
            )));
        }
        pools.insert(pool, *count);
    }
    let got: BTreeSet<PoolRole> = pools.keys().copied().collect();
    let shared: BTreeSet<PoolRole> = variant.default_pools().iter().copied().collect();
    let split: BTreeSet<PoolRole> = variant.split_pools().iter().copied().collect();
    let split_pools = if got == shared {
        false
    } else if got == split {
        // For NGN the two sets coincide and this arm is unreachable.
        true
    } else if let Some(explicit) = explicit_flow_pools(raw)? {
        // Synthetic flows may run on any subset of the variant's pools.
        if !explicit.is_subset(&got) {
            return Err(ModelError::WrongPoolSet {
                expected: explicit.into_iter().collect(),
                got: got.into_iter().collect(),
            });
        }
        false
    } else {
        return Err(ModelError::WrongPoolSet {
            expected: shared.into_iter().collect(),
            got: got.into_iter().collect(),
        });
    };

    // Rates.
    let mut rates = BTreeMap::new();
    for (name, value) in &raw.rates {
        let action =
            ActionKind::parse(name).ok_or_else(|| ModelError::UnknownAction(name.clone()))?;
        if !(value.is_finite() && *value > 0.0) {
            return Err(ModelError::NonPositiveRate(action));
        }
        rates.insert(action, *value);
    }

    // Workload.
    let workload = match raw.population {
        Population::Closed(k) => Workload::Closed { population: k },
        Population::Open { open } => {
            if !(open.is_finite() && open > 0.0) {
                return Err(ModelError::InvalidPopulation(
                    "open arrival rate must be positive and finite".to_string(),
                ));
            }
            Workload::Open { arrival_rate: open }
        }
    };

    // Flow shape and required actions.
    let flow = match &raw.flow {
        FlowSpec::Named(name) if name == "builtin" => {
            for action in required_actions(variant) {
                if *action == ActionKind::Think {
                    if matches!(workload, Workload::Closed { .. }) && !rates.contains_key(action) {
                        return Err(ModelError::MissingRate(*action));
                    }
                } else if !rates.contains_key(action) {
                    return Err(ModelError::MissingRate(*action));
                }
            }
            FlowShape::Builtin
        }
        FlowSpec::Named(other) => {
            return Err(ModelError::InvalidFlow(format!(
                "unknown flow `{other}` (expected \"builtin\" or a stage list)"
            )));
        }
        FlowSpec::Explicit(stages) => {
            if stages.is_empty() {
                return Err(ModelError::InvalidFlow("empty stage list".to_string()));
            }
            let mut parsed = Vec::with_capacity(stages.len());
            for s in stages {
                let pool = PoolRole::parse(&s.pool)
                    .ok_or_else(|| ModelError::UnknownPool(s.pool.clone()))?;
                let action = ActionKind::parse(&s.action)
                    .ok_or_else(|| ModelError::UnknownAction(s.action.clone()))?;
                if action == ActionKind::Think {
                    return Err(ModelError::InvalidFlow(
                        "think is not a processing stage".to_string(),
                    ));
                }
                if !pool_in_variant(pool, variant) {
                    return Err(ModelError::UnknownRoleForVariant {
                        role: pool,
                        variant,
                    });
                }
                if !pools.contains_key(&pool) {
                    return Err(ModelError::InvalidFlow(format!(
                        "stage pool {pool} has no processors configured"
                    )));
                }
                if !rates.contains_key(&action) {
                    return Err(ModelError::MissingRate(action));
                }
                parsed.push((pool, action));
            }
            if matches!(workload, Workload::Closed { .. })
                && !rates.contains_key(&ActionKind::Think)
            {
                return Err(ModelError::MissingRate(ActionKind::Think));
            }
            FlowShape::Explicit(parsed)
        }
    };

    // Topology.
    let topology = Topology::from_raw(&raw.topology)?;

    // Users; an empty list gets one default user at the first access point.
    let mut users = BTreeMap::new();
    if raw.users.is_empty() {
        let first_ap = *topology.access_points.keys().next().expect("nonempty");
        users.insert(UserId(0), UserFixture::new(0, first_ap));
    }
    for fixture in &raw.users {
        if !(fixture.qos_rate.is_finite() && fixture.qos_rate > 0.0) {
            return Err(ModelError::InvalidUsers(format!(
                "user {} has non-positive qos rate",
                fixture.id
            )));
        }
        if topology.access_point(fixture.attachment_point).is_none() {
            return Err(ModelError::InvalidUsers(format!(
                "user {} attached to unknown {}",
                fixture.id, fixture.attachment_point
            )));
        }
        if let Some(target) = fixture.handover_target {
            if topology.access_point(target).is_none() {
                return Err(ModelError::InvalidUsers(format!(
                    "user {} targets unknown {}",
                    fixture.id, target
                )));
            }
        }
        if users.insert(UserId(fixture.id), fixture.clone()).is_some() {
            return Err(ModelError::InvalidUsers(format!(
                "duplicate user id {}",
                fixture.id
            )));
        }
    }

    // Faults: node strings must parse and name roles of this variant.
    for fault in &raw.faults {
        for (side, text) in [("src", &fault.src), ("dst", &fault.dst)] {
            let node = super::NodeId::parse(text).ok_or_else(|| {
                ModelError::InvalidFaults(format!("{side} `{text}` is not a node id"))
            })?;
            if !node.role.in_variant(variant) {
                return Err(ModelError::InvalidFaults(format!(
                    "{side} `{text}` names a role outside {variant}"
                )));
            }
        }
    }

    let cost = CostTable::from_entries(&raw.cost_table)?;

    Ok(ValidatedScenario {
        variant,
        pools,
        split_pools,
        rates,
        workload,
        topology,
        cost,
        users,
        faults: raw.faults.clone(),
        flow,
        raw: raw.clone(),
    })
}

fn pool_in_variant(pool: PoolRole, variant: Variant) -> bool {
    variant.default_pools().contains(&pool) || variant.split_pools().contains(&pool)
}

/// Pools referenced by an explicit flow spec, if the scenario has one.
fn explicit_flow_pools(raw: &RawScenario) -> Result<Option<BTreeSet<PoolRole>>, ModelError> {
    match &raw.flow {
        FlowSpec::Explicit(stages) => {
            let mut set = BTreeSet::new();
            for s in stages {
                let pool = PoolRole::parse(&s.pool)
                    .ok_or_else(|| ModelError::UnknownPool(s.pool.clone()))?;
                set.insert(pool);
            }
            Ok(Some(set))
        }
        FlowSpec::Named(_) => Ok(None),
    }
}

/// Parse and validate a scenario from JSON text.
pub fn scenario_from_json(text: &str) -> Result<ValidatedScenario, ModelError> {
    let raw: RawScenario =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    validate_scenario(&raw)
}
