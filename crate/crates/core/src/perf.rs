//! Bridge from protocol behavior to queueing workload: a scenario's
//! transaction is the ordered list of processing stages one service
//! request causes across the processor pools.
//!
//! For the built-in flow the stages are read off the variant's own
//! attachment trace, so the performance model always matches what the
//! state machines actually do: every relayed hop costs transport
//! forwarding work, every delivered message costs processing at the
//! receiving pool.

use std::collections::BTreeSet;

use crate::model::{
    ActionKind, FlowShape, FunctionRole, ModelError, PoolRole, ValidatedScenario, Variant, Workload,
};
use crate::protocol::{FlowOutcome, Message, MessageClass, ScenarioRun};

/// One processing step of a transaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub pool: PoolRole,
    pub action: ActionKind,
    /// Effective exponential service rate (base action rate divided by
    /// the configured cost factor).
    pub service_rate: f64,
}

/// A transaction shape plus the closed-workload think rate, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProfile {
    pub stages: Vec<Stage>,
    pub think_rate: Option<f64>,
}

impl FlowProfile {
    /// Total mean service demand a transaction places on `pool`.
    pub fn demand(&self, pool: PoolRole) -> f64 {
        self.stages
            .iter()
            .filter(|s| s.pool == pool)
            .map(|s| 1.0 / s.service_rate)
            .sum()
    }

    /// Pools the transaction touches, in canonical order.
    pub fn pools(&self) -> BTreeSet<PoolRole> {
        self.stages.iter().map(|s| s.pool).collect()
    }

    /// Mean time in service across all stages (the no-contention
    /// response time floor).
    pub fn min_response(&self) -> f64 {
        self.stages.iter().map(|s| 1.0 / s.service_rate).sum()
    }
}

/// Action charged when a message is processed at its destination.
fn action_at(variant: Variant, dst: FunctionRole, msg: &Message) -> ActionKind {
    match dst {
        FunctionRole::EndUser => ActionKind::UserSignaling,
        FunctionRole::TransportFunction => ActionKind::ResourceControl,
        FunctionRole::TransportControl => match variant {
            // The evolved TCF only ever does resource work; the existing
            // one also terminates user and mobility signaling.
            Variant::Engn => ActionKind::ResourceControl,
            Variant::Ngn => {
                if msg.kind.class() == MessageClass::ResourceControl {
                    ActionKind::ResourceControl
                } else {
                    ActionKind::ControlSignaling
                }
            }
        },
        _ => ActionKind::ServiceSignaling,
    }
}

/// Action charged per transport hop a message is relayed over.
fn relay_action(variant: Variant) -> ActionKind {
    match variant {
        Variant::Ngn => ActionKind::RelaySignaling,
        Variant::Engn => ActionKind::DataForward,
    }
}

/// Derive the transaction stage list for a scenario.
pub fn derive_profile(scenario: &ValidatedScenario) -> Result<FlowProfile, ModelError> {
    let think_rate = match scenario.workload {
        Workload::Closed { .. } => Some(scenario.rate(ActionKind::Think)),
        Workload::Open { .. } => None,
    };
    let stages = match &scenario.flow {
        FlowShape::Explicit(stages) => stages
            .iter()
            .map(|(pool, action)| Stage {
                pool: *pool,
                action: *action,
                service_rate: scenario.rate(*action),
            })
            .collect(),
        FlowShape::Builtin => builtin_stages(scenario)?,
    };
    Ok(FlowProfile { stages, think_rate })
}

fn builtin_stages(scenario: &ValidatedScenario) -> Result<Vec<Stage>, ModelError> {
    let user = *scenario
        .users
        .keys()
        .next()
        .expect("validated scenarios have at least one user");
    let mut run = ScenarioRun::new(scenario);
    match run.attach(user) {
        Ok(FlowOutcome::Completed) => {}
        other => {
            return Err(ModelError::InvalidFlow(format!(
                "built-in attachment flow does not complete: {other:?}"
            )))
        }
    }
    let variant = scenario.variant;
    let mut stages = Vec::new();
    let mut push = |pool: PoolRole, action: ActionKind, kind| {
        let rate = scenario.rate(action) / scenario.cost.factor(kind, pool);
        stages.push(Stage {
            pool,
            action,
            service_rate: rate,
        });
    };
    for msg in run.messages() {
        for _hop in &msg.via {
            push(PoolRole::TransportFunction, relay_action(variant), msg.kind);
        }
        let Some(pool) = scenario.pool_of(msg.dst.role) else {
            continue;
        };
        push(pool, action_at(variant, msg.dst.role, msg), msg.kind);
    }
    Ok(stages)
}

/// Sanity guard used by the engines: every stage rate is positive and
/// finite, and a closed workload has a think rate.
pub fn check_profile(profile: &FlowProfile) -> Result<(), ModelError> {
    if profile.stages.is_empty() {
        return Err(ModelError::InvalidFlow("no stages".to_string()));
    }
    for stage in &profile.stages {
        if !(stage.service_rate.is_finite() && stage.service_rate > 0.0) {
            return Err(ModelError::InvalidFlow(format!(
                "non-positive service rate at {:?}",
                stage.pool
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;
    use crate::testutil::{fixture, raw_fixture};

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn engn_attachment_demands_follow_the_trace() {
        let profile = derive_profile(&fixture("default-engn.json")).unwrap();
        // 14 deliveries plus 7 relayed hops.
        assert_eq!(profile.stages.len(), 21);
        close(profile.demand(PoolRole::EndUser), 5.0 / 500.0);
        close(
            profile.demand(PoolRole::TransportFunction),
            7.0 / 200.0 + 1.0 / 50.0,
        );
        close(profile.demand(PoolRole::TransportControl), 2.0 / 50.0);
        close(profile.demand(PoolRole::SignalingService), 6.0 / 100.0);
        assert_eq!(profile.think_rate, Some(0.05));
    }

    #[test]
    fn ngn_attachment_demands_follow_the_trace() {
        let profile = derive_profile(&fixture("default-ngn.json")).unwrap();
        // 9 deliveries plus 7 relayed hops.
        assert_eq!(profile.stages.len(), 16);
        close(profile.demand(PoolRole::EndUser), 5.0 / 500.0);
        close(profile.demand(PoolRole::TransportFunction), 8.0 / 50.0);
        close(profile.demand(PoolRole::TransportControl), 3.0 / 50.0);
    }

    #[test]
    fn cost_factors_scale_the_charged_stage() {
        let mut raw = raw_fixture("default-engn.json");
        raw.cost_table = vec![crate::model::CostEntry {
            kind: crate::protocol::MessageKind::ResourceAllocCommand,
            pool: PoolRole::TransportFunction,
            factor: 2.0,
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let profile = derive_profile(&scenario).unwrap();
        close(
            profile.demand(PoolRole::TransportFunction),
            7.0 / 200.0 + 2.0 / 50.0,
        );
    }

    #[test]
    fn explicit_flows_map_straight_to_stages() {
        let mut raw = raw_fixture("default-ngn.json");
        raw.flow = crate::model::FlowSpec::Explicit(vec![
            crate::model::RawStage {
                pool: "endUser".to_string(),
                action: "userSignaling".to_string(),
            },
            crate::model::RawStage {
                pool: "transportControl".to_string(),
                action: "controlSignaling".to_string(),
            },
        ]);
        let scenario = validate_scenario(&raw).unwrap();
        let profile = derive_profile(&scenario).unwrap();
        assert_eq!(profile.stages.len(), 2);
        close(profile.demand(PoolRole::TransportControl), 1.0 / 50.0);
    }
}
