//! Flow drivers: a synchronous FIFO pump delivering messages between the
//! role machines, plus one driver per built-in service flow.
//!
//! Drivers run on a copy of the world and commit only when the flow's
//! postcondition holds, so precondition and admission failures leave
//! state (and the trace) untouched, as the flow contracts require.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::model::{
    AccessPointId, FunctionRole, MobilityMode, ModelError, NodeId, RegState, Session, SessionId,
    UserId, ValidatedScenario, Variant,
};

use super::machines::{
    eu_initiate, handle_message, Ctx, Draft, EuIntent, EuState, ExtAppState, MssfState,
    MsssufState, NassfState, NasssufState, RoleState, SvcSupState, TcfState, TfState,
};
use super::{Message, MessageKind, Payload, Trace, UnexpectedNote, WorldSnapshot};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("user {0} is already registered")]
    AlreadyRegistered(UserId),
    #[error("user {0} is not attached")]
    NotAttached(UserId),
    #[error("user {0} is not registered for mobility")]
    NotRegistered(UserId),
    #[error("user {0} is registered for {1} mobility; flow does not apply")]
    MobilityModeMismatch(UserId, MobilityMode),
    #[error("no admissible path for user {0}")]
    NoFeasiblePath(UserId),
    #[error("no handover target passes the QoS check for user {0}")]
    NoFeasibleTarget(UserId),
    #[error("no feasible neighbor links for user {0}")]
    EmptyCandidateList(UserId),
    #[error("flow `{0}` does not exist in the {1} architecture")]
    UnsupportedInVariant(String, Variant),
}

/// How a committed flow ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowOutcome {
    Completed,
    /// Credentials rejected; the user is detached again and requested
    /// resources were released. The teardown is part of the trace.
    AuthFailed,
    /// Terminal declined the offered candidate links; trace ends after
    /// the candidate list, state unchanged.
    HandoverDeclined,
}

/// Named flows as exposed by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Attach,
    MobilityRegister,
    HandoverNetwork,
    HandoverHost,
    LocationBinding,
    Coordination,
    ExternalApp,
}

impl FlowKind {
    pub fn parse(name: &str) -> Option<FlowKind> {
        Some(match name {
            "attach" => FlowKind::Attach,
            "mobility-register" => FlowKind::MobilityRegister,
            "handover-network" => FlowKind::HandoverNetwork,
            "handover-host" => FlowKind::HandoverHost,
            "location-binding" => FlowKind::LocationBinding,
            "coordination" => FlowKind::Coordination,
            "external-app" => FlowKind::ExternalApp,
            _ => return None,
        })
    }

    pub const NAMES: [&'static str; 7] = [
        "attach",
        "mobility-register",
        "handover-network",
        "handover-host",
        "location-binding",
        "coordination",
        "external-app",
    ];
}

/// All role-machine states, keyed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    states: BTreeMap<NodeId, RoleState>,
}

impl World {
    pub fn new(scenario: &ValidatedScenario) -> World {
        let mut states = BTreeMap::new();
        for (user, fixture) in &scenario.users {
            states.insert(
                NodeId::new(FunctionRole::EndUser, user.0 as u32),
                RoleState::EndUser(EuState::new(*user, fixture.attachment_point)),
            );
        }
        for tf in scenario.topology.tf_nodes.keys() {
            states.insert(
                NodeId::new(FunctionRole::TransportFunction, tf.0),
                RoleState::TransportFunction(TfState::default()),
            );
        }
        states.insert(
            NodeId::new(FunctionRole::TransportControl, 0),
            RoleState::TransportControl(TcfState::default()),
        );
        if scenario.variant == Variant::Engn {
            states.insert(
                NodeId::new(FunctionRole::Nassf, 0),
                RoleState::Nassf(NassfState::default()),
            );
            states.insert(
                NodeId::new(FunctionRole::Nasssuf, 0),
                RoleState::Nasssuf(NasssufState::default()),
            );
            states.insert(
                NodeId::new(FunctionRole::Mssf, 0),
                RoleState::Mssf(MssfState::default()),
            );
            states.insert(
                NodeId::new(FunctionRole::Msssuf, 0),
                RoleState::Msssuf(MsssufState::default()),
            );
            states.insert(
                NodeId::new(FunctionRole::ServiceSupport, 0),
                RoleState::ServiceSupport(SvcSupState::default()),
            );
            states.insert(
                NodeId::new(FunctionRole::ExternalApp, 0),
                RoleState::ExternalApp(ExtAppState::default()),
            );
        }
        World { states }
    }

    pub fn eu(&self, user: UserId) -> Option<&EuState> {
        match self
            .states
            .get(&NodeId::new(FunctionRole::EndUser, user.0 as u32))
        {
            Some(RoleState::EndUser(s)) => Some(s),
            _ => None,
        }
    }

    pub fn tcf(&self) -> &TcfState {
        match self
            .states
            .get(&NodeId::new(FunctionRole::TransportControl, 0))
        {
            Some(RoleState::TransportControl(s)) => s,
            _ => unreachable!("every world has a transport control function"),
        }
    }

    pub fn mssf(&self) -> Option<&MssfState> {
        match self.states.get(&NodeId::new(FunctionRole::Mssf, 0)) {
            Some(RoleState::Mssf(s)) => Some(s),
            _ => None,
        }
    }

    /// Final-state snapshot for a trace.
    pub fn snapshot(&self) -> WorldSnapshot {
        let mut snap = WorldSnapshot::default();
        for state in self.states.values() {
            match state {
                RoleState::EndUser(s) => {
                    snap.users.insert(s.record.user, s.record.clone());
                }
                RoleState::TransportControl(s) => {
                    for (id, rec) in &s.sessions {
                        snap.sessions.insert(
                            *id,
                            Session {
                                id: *id,
                                user_end: rec.user,
                                network_end: rec.network_end.to_string(),
                                path: rec.path.clone(),
                                qos_rate: rec.qos,
                                state: rec.state,
                            },
                        );
                    }
                }
                RoleState::Mssf(s) => {
                    snap.bindings = s.bindings.entries().cloned().collect();
                }
                _ => {}
            }
        }
        snap
    }
}

/// A scenario being executed: world plus the trace accumulated so far.
/// Flows share one run so multi-service scripts produce a single
/// continuous trace.
pub struct ScenarioRun<'a> {
    scenario: &'a ValidatedScenario,
    pub world: World,
    messages: Vec<Message>,
    unexpected: Vec<UnexpectedNote>,
    seq: u64,
    step: u64,
}

/// Delivery cap per flow; hitting it means a machine loop, which is a bug.
const MAX_DELIVERIES_PER_FLOW: usize = 10_000;

impl<'a> ScenarioRun<'a> {
    pub fn new(scenario: &'a ValidatedScenario) -> ScenarioRun<'a> {
        ScenarioRun {
            scenario,
            world: World::new(scenario),
            messages: Vec::new(),
            unexpected: Vec::new(),
            seq: 0,
            step: 0,
        }
    }

    fn ctx(&self) -> Ctx<'a> {
        Ctx {
            scenario: self.scenario,
        }
    }

    /// Drop the trace accumulated so far but keep world state; used to
    /// produce a flow's trace after silently preparing its preconditions.
    pub fn reset_trace(&mut self) {
        self.messages.clear();
        self.unexpected.clear();
        self.seq = 0;
        self.step = 0;
    }

    /// The trace so far, with the current world snapshot attached.
    pub fn trace(&self) -> Trace {
        Trace {
            variant: self.scenario.variant,
            messages: self.messages.clone(),
            unexpected: self.unexpected.clone(),
            final_state: self.world.snapshot(),
        }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Transport path a message takes, as a list of TF nodes. Messages
    /// with an end-user endpoint ride the session's path (or the serving
    /// TF of the terminal's attachment point before any session exists);
    /// network-internal interfaces are direct.
    fn route(&self, src: NodeId, dst: NodeId, session: Option<SessionId>) -> Vec<NodeId> {
        let eu = [src, dst]
            .into_iter()
            .find(|n| n.role == FunctionRole::EndUser);
        let Some(eu) = eu else {
            return Vec::new();
        };
        if let Some(sid) = session {
            if let Some(rec) = self.world.tcf().sessions.get(&sid) {
                return rec
                    .path
                    .iter()
                    .map(|tf| NodeId::new(FunctionRole::TransportFunction, tf.0))
                    .collect();
            }
        }
        let user = UserId(u64::from(eu.index));
        let ap = self
            .world
            .eu(user)
            .map(|s| s.record.attachment_point)
            .unwrap_or(AccessPointId(0));
        match self.scenario.topology.serving_tf(ap) {
            Some(tf) => vec![NodeId::new(FunctionRole::TransportFunction, tf.0)],
            None => Vec::new(),
        }
    }

    fn materialize(&mut self, src: NodeId, draft: Draft) -> Message {
        self.seq += 1;
        let via = self.route(src, draft.dst, draft.session);
        let msg = Message {
            seq: self.seq,
            logical_time: self.step,
            kind: draft.kind,
            src,
            dst: draft.dst,
            via,
            session: draft.session,
            payload: draft.payload,
        };
        self.messages.push(msg.clone());
        msg
    }

    /// Deliver messages in FIFO order until the network is quiet.
    fn pump(&mut self, initial: Message) {
        let ctx = self.ctx();
        let mut queue: VecDeque<Message> = VecDeque::new();
        queue.push_back(initial);
        let mut deliveries = 0usize;
        while let Some(msg) = queue.pop_front() {
            deliveries += 1;
            assert!(
                deliveries <= MAX_DELIVERIES_PER_FLOW,
                "message loop detected delivering {msg}"
            );
            self.step += 1;
            let Some(state) = self.world.states.get(&msg.dst) else {
                self.unexpected.push(UnexpectedNote {
                    seq: msg.seq,
                    node: msg.dst,
                    reason: "no such node".to_string(),
                });
                continue;
            };
            let result = handle_message(state, &msg, &ctx);
            if let Some(reason) = result.unexpected {
                // Contract: an unexpected message leaves state unchanged.
                debug_assert_eq!(&result.state, state);
                self.unexpected.push(UnexpectedNote {
                    seq: msg.seq,
                    node: msg.dst,
                    reason,
                });
                continue;
            }
            self.world.states.insert(msg.dst, result.state);
            for draft in result.drafts {
                let out = self.materialize(msg.dst, draft);
                queue.push_back(out);
            }
        }
    }

    /// Start a terminal intent and run the network to quiescence.
    fn drive(&mut self, user: UserId, intent: EuIntent) {
        let ctx = self.ctx();
        let node = NodeId::new(FunctionRole::EndUser, user.0 as u32);
        let Some(RoleState::EndUser(eu)) = self.world.states.get(&node) else {
            panic!("driver checked the user exists");
        };
        let (next, draft) = eu_initiate(eu, &intent, &ctx);
        self.world.states.insert(node, RoleState::EndUser(next));
        let msg = self.materialize(node, draft);
        self.pump(msg);
    }

    fn checkpoint(&self) -> (World, usize, usize, u64, u64) {
        (
            self.world.clone(),
            self.messages.len(),
            self.unexpected.len(),
            self.seq,
            self.step,
        )
    }

    fn restore(&mut self, cp: (World, usize, usize, u64, u64)) {
        self.world = cp.0;
        self.messages.truncate(cp.1);
        self.unexpected.truncate(cp.2);
        self.seq = cp.3;
        self.step = cp.4;
    }

    fn fixture_exists(&self, user: UserId) -> Result<(), FlowError> {
        if self.scenario.users.contains_key(&user) {
            Ok(())
        } else {
            Err(FlowError::UnknownUser(user))
        }
    }

    fn require_engn(&self, flow: &str) -> Result<(), FlowError> {
        if self.scenario.variant == Variant::Engn {
            Ok(())
        } else {
            Err(FlowError::UnsupportedInVariant(
                flow.to_string(),
                self.scenario.variant,
            ))
        }
    }

    // -----------------------------------------------------------------
    // Built-in service flows
    // -----------------------------------------------------------------

    /// Network attachment: transport session, authentication, address
    /// assignment, network configuration.
    pub fn attach(&mut self, user: UserId) -> Result<FlowOutcome, FlowError> {
        self.fixture_exists(user)?;
        let record = &self
            .world
            .eu(user)
            .expect("fixture users have nodes")
            .record;
        if record.reg_state == RegState::Registered {
            return Err(FlowError::AlreadyRegistered(user));
        }
        let cp = self.checkpoint();
        self.drive(user, EuIntent::Attach);
        let record = &self.world.eu(user).expect("still there").record;
        match (record.reg_state, record.auth_state) {
            (RegState::Registered, _) => Ok(FlowOutcome::Completed),
            (_, crate::model::AuthState::Failed) => Ok(FlowOutcome::AuthFailed),
            _ => {
                // No admissible path: nothing was answered.
                self.restore(cp);
                Err(FlowError::NoFeasiblePath(user))
            }
        }
    }

    /// Mobility service registration for an attached user (eNGN).
    pub fn mobility_register(
        &mut self,
        user: UserId,
        mode: MobilityMode,
    ) -> Result<FlowOutcome, FlowError> {
        self.require_engn("mobility-register")?;
        self.fixture_exists(user)?;
        if self
            .world
            .eu(user)
            .expect("fixture users have nodes")
            .record
            .reg_state
            != RegState::Registered
        {
            return Err(FlowError::NotAttached(user));
        }
        let mssf = self.world.mssf().expect("eNGN worlds have an MSSF");
        if mssf.reg.contains_key(&user) {
            return Err(FlowError::AlreadyRegistered(user));
        }
        let cp = self.checkpoint();
        self.drive(user, EuIntent::RegisterMobility(mode));
        let registered = self
            .world
            .mssf()
            .expect("still there")
            .reg
            .get(&user)
            .map(|r| r.session.is_some())
            .unwrap_or(false);
        if registered {
            Ok(FlowOutcome::Completed)
        } else {
            self.restore(cp);
            Err(FlowError::NotAttached(user))
        }
    }

    /// Network-decided handover, entered by a movement report (eNGN).
    pub fn handover_network(
        &mut self,
        user: UserId,
        target: Option<AccessPointId>,
    ) -> Result<FlowOutcome, FlowError> {
        self.require_engn("handover-network")?;
        let (current, mode) = self.mobility_context(user)?;
        if mode != MobilityMode::NetworkBased {
            return Err(FlowError::MobilityModeMismatch(user, mode));
        }
        let target = match target {
            Some(t) => t,
            None => self
                .first_neighbor(current)
                .ok_or(FlowError::NoFeasibleTarget(user))?,
        };
        if target == current {
            return self.location_binding_update(user, Some(current));
        }
        let cp = self.checkpoint();
        self.drive(user, EuIntent::Move(target));
        if self.handover_completed(user, target) {
            Ok(FlowOutcome::Completed)
        } else {
            self.restore(cp);
            Err(FlowError::NoFeasibleTarget(user))
        }
    }

    /// Terminal-decided handover from an offered candidate list (eNGN).
    pub fn handover_host(&mut self, user: UserId) -> Result<FlowOutcome, FlowError> {
        self.require_engn("handover-host")?;
        let (_current, mode) = self.mobility_context(user)?;
        if mode != MobilityMode::HostBased {
            return Err(FlowError::MobilityModeMismatch(user, mode));
        }
        let cp = self.checkpoint();
        let before = self.messages.len();
        self.drive(user, EuIntent::LinkReport);
        let new_msgs = &self.messages[before..];
        let offered = new_msgs.iter().find_map(|m| match (&m.kind, &m.payload) {
            (MessageKind::CandidateLinkList, Payload::Candidates { candidates, .. })
                if m.dst.role == FunctionRole::EndUser =>
            {
                Some(candidates.clone())
            }
            _ => None,
        });
        let trigger_target = new_msgs.iter().find_map(|m| match (&m.kind, &m.payload) {
            (MessageKind::HandoverTrigger, Payload::Trigger { target, .. }) => Some(*target),
            _ => None,
        });
        if offered.as_deref().map(|c| c.is_empty()).unwrap_or(true) {
            self.restore(cp);
            return Err(FlowError::EmptyCandidateList(user));
        }
        let Some(target) = trigger_target else {
            // Terminal declined the offer; nothing past the list happened.
            return Ok(FlowOutcome::HandoverDeclined);
        };
        if self.handover_completed(user, target) {
            Ok(FlowOutcome::Completed)
        } else {
            self.restore(cp);
            Err(FlowError::NoFeasibleTarget(user))
        }
    }

    /// Location binding refresh or movement report (eNGN). A different
    /// access point under network-based mobility becomes a handover.
    pub fn location_binding_update(
        &mut self,
        user: UserId,
        new_ap: Option<AccessPointId>,
    ) -> Result<FlowOutcome, FlowError> {
        self.require_engn("location-binding")?;
        let (current, mode) = self.mobility_context(user)?;
        let new_ap = new_ap.unwrap_or(current);
        if new_ap != current {
            if mode != MobilityMode::NetworkBased {
                return Err(FlowError::MobilityModeMismatch(user, mode));
            }
            return self.handover_network(user, Some(new_ap));
        }
        let epoch_before = self.binding_epoch(user);
        let cp = self.checkpoint();
        self.drive(user, EuIntent::Move(new_ap));
        if self.binding_epoch(user) == epoch_before + 1 {
            Ok(FlowOutcome::Completed)
        } else {
            self.restore(cp);
            Err(FlowError::NotRegistered(user))
        }
    }

    /// Third-party application session setup plus a data exchange (eNGN).
    pub fn external_session(&mut self, user: UserId) -> Result<FlowOutcome, FlowError> {
        self.require_engn("external-app")?;
        self.fixture_exists(user)?;
        if self
            .world
            .eu(user)
            .expect("fixture users have nodes")
            .record
            .reg_state
            != RegState::Registered
        {
            return Err(FlowError::NotAttached(user));
        }
        let cp = self.checkpoint();
        let before = self.messages.len();
        self.drive(user, EuIntent::ExternalSession);
        let established = self.messages[before..]
            .iter()
            .any(|m| m.kind == MessageKind::SetupResponse && m.dst.role == FunctionRole::EndUser);
        if !established {
            self.restore(cp);
            return Err(FlowError::NoFeasiblePath(user));
        }
        self.drive(user, EuIntent::SendData(64));
        Ok(FlowOutcome::Completed)
    }

    /// The Y.2325 coordination walkthrough: attach, register for
    /// network-based mobility, then a movement that triggers handover.
    pub fn coordination(&mut self, user: UserId) -> Result<FlowOutcome, FlowError> {
        self.require_engn("coordination")?;
        self.attach(user)?;
        self.mobility_register(user, MobilityMode::NetworkBased)?;
        self.handover_network(user, None)
    }

    // -----------------------------------------------------------------
    // Helpers
    // -----------------------------------------------------------------

    fn mobility_context(&self, user: UserId) -> Result<(AccessPointId, MobilityMode), FlowError> {
        self.fixture_exists(user)?;
        let mssf = self.world.mssf().expect("eNGN worlds have an MSSF");
        let rec = mssf.reg.get(&user).ok_or(FlowError::NotRegistered(user))?;
        let ap = rec.attachment_point.ok_or(FlowError::NotRegistered(user))?;
        Ok((ap, rec.mode))
    }

    fn first_neighbor(&self, ap: AccessPointId) -> Option<AccessPointId> {
        self.scenario
            .topology
            .access_point(ap)
            .and_then(|a| a.neighbors.first().copied())
    }

    fn binding_epoch(&self, user: UserId) -> u64 {
        self.world
            .mssf()
            .and_then(|m| m.bindings.lookup_user(user))
            .map(|e| e.epoch)
            .unwrap_or(0)
    }

    fn handover_completed(&self, user: UserId, target: AccessPointId) -> bool {
        let Some(mssf) = self.world.mssf() else {
            return false;
        };
        let at_target = mssf
            .reg
            .get(&user)
            .and_then(|r| r.attachment_point)
            .map(|ap| ap == target)
            .unwrap_or(false);
        at_target && mssf.bindings.lookup_user(user).is_some()
    }
}

/// One step of a multi-service script (used by the fuzz harness).
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    Attach(UserId),
    RegisterMobility(UserId, MobilityMode),
    HandoverNetwork(UserId),
    HandoverHost(UserId),
    LocationRefresh(UserId),
    ExternalSession(UserId),
}

/// Execute a script, skipping steps whose preconditions do not hold, and
/// return the combined trace. Precondition misses are part of normal
/// fuzzing; machine-level surprises stay recorded in the trace.
pub fn run_script(scenario: &ValidatedScenario, steps: &[ScriptStep]) -> Trace {
    let mut run = ScenarioRun::new(scenario);
    for step in steps {
        let _ = match step {
            ScriptStep::Attach(u) => run.attach(*u),
            ScriptStep::RegisterMobility(u, m) => run.mobility_register(*u, *m),
            ScriptStep::HandoverNetwork(u) => run.handover_network(*u, None),
            ScriptStep::HandoverHost(u) => run.handover_host(*u),
            ScriptStep::LocationRefresh(u) => run.location_binding_update(*u, None),
            ScriptStep::ExternalSession(u) => run.external_session(*u),
        };
    }
    run.trace()
}

/// Insert configured fault messages into a finished trace (after the
/// given sequence numbers), then renumber so the result is well-formed
/// except for the injected behavior itself.
pub fn apply_faults(trace: &mut Trace, scenario: &ValidatedScenario) -> Result<(), ModelError> {
    for fault in &scenario.faults {
        let payload = match &fault.payload {
            None => Payload::Empty,
            Some(value) => serde_json::from_value(value.clone()).map_err(|e| {
                ModelError::InvalidFaults(format!("bad payload for {:?}: {e}", fault.kind))
            })?,
        };
        let src = NodeId::parse(&fault.src)
            .ok_or_else(|| ModelError::InvalidFaults(format!("bad node id `{}`", fault.src)))?;
        let dst = NodeId::parse(&fault.dst)
            .ok_or_else(|| ModelError::InvalidFaults(format!("bad node id `{}`", fault.dst)))?;
        let pos = trace
            .messages
            .iter()
            .position(|m| m.seq > fault.after_seq)
            .unwrap_or(trace.messages.len());
        let logical_time = if pos == 0 {
            0
        } else {
            trace.messages[pos - 1].logical_time
        };
        trace.messages.insert(
            pos,
            Message {
                seq: 0, // renumbered below
                logical_time,
                kind: fault.kind,
                src,
                dst,
                via: Vec::new(),
                session: fault.session.map(SessionId),
                payload,
            },
        );
    }
    for (i, msg) in trace.messages.iter_mut().enumerate() {
        msg.seq = (i + 1) as u64;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, AuthState, ResourceState, UserFixture};
    use crate::protocol::{check_trace_invariants, MessageKind::*};
    use crate::testutil::{fixture, raw_fixture};

    fn engn_with_users(users: Vec<UserFixture>) -> ValidatedScenario {
        let mut raw = raw_fixture("default-engn.json");
        raw.users = users;
        validate_scenario(&raw).expect("fixture stays valid")
    }

    fn kinds(run: &ScenarioRun) -> Vec<MessageKind> {
        run.messages().iter().map(|m| m.kind).collect()
    }

    fn assert_clean(run: &ScenarioRun) {
        let trace = run.trace();
        assert!(
            trace.unexpected.is_empty(),
            "unexpected: {:?}",
            trace.unexpected
        );
        let violations = check_trace_invariants(&trace);
        assert!(violations.is_empty(), "violations: {violations:?}");
    }

    #[test]
    fn engn_attach_follows_the_support_function_chain() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(run.attach(UserId(0)), Ok(FlowOutcome::Completed));
        assert_eq!(
            kinds(&run),
            vec![
                SetupRequest,
                ResourceAllocRequest,
                ResourceAllocRequest,
                ResourceAllocCommand,
                ResourceAllocConfirm,
                ResourceAllocResponse,
                ResourceAllocResponse,
                SetupResponse,
                AuthChallenge,
                AuthResponse,
                AuthResult,
                IpConfigAssign,
                NetworkConfigInfo,
                ProfileUpdate,
            ]
        );
        let eu = run.world.eu(UserId(0)).unwrap();
        assert_eq!(eu.record.reg_state, RegState::Registered);
        assert_eq!(eu.record.auth_state, AuthState::Authenticated);
        assert!(eu.record.permanent_ip.is_some());
        assert_clean(&run);
    }

    #[test]
    fn ngn_attach_terminates_at_transport_control() {
        let scenario = fixture("default-ngn.json");
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(run.attach(UserId(0)), Ok(FlowOutcome::Completed));
        assert_eq!(
            kinds(&run),
            vec![
                SetupRequest,
                ResourceAllocCommand,
                ResourceAllocConfirm,
                SetupResponse,
                AuthChallenge,
                AuthResponse,
                AuthResult,
                IpConfigAssign,
                NetworkConfigInfo,
            ]
        );
        // Every end-user message is relayed by the serving TF.
        for msg in run.messages() {
            let eu_end =
                msg.src.role == FunctionRole::EndUser || msg.dst.role == FunctionRole::EndUser;
            assert_eq!(!msg.via.is_empty(), eu_end, "bad relay on {msg}");
        }
        assert_clean(&run);
    }

    #[test]
    fn rejected_credentials_roll_back_the_attachment() {
        let mut bad = UserFixture::new(0, AccessPointId(0));
        bad.credentials_valid = false;
        let scenario = engn_with_users(vec![bad]);
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(run.attach(UserId(0)), Ok(FlowOutcome::AuthFailed));
        let eu = run.world.eu(UserId(0)).unwrap();
        assert_eq!(eu.record.reg_state, RegState::Detached);
        assert_eq!(eu.record.auth_state, AuthState::Failed);
        // The requested session was torn down again.
        let trace = run.trace();
        assert!(trace
            .final_state
            .sessions
            .values()
            .all(|s| s.state == ResourceState::Released));
        assert_clean(&run);
    }

    #[test]
    fn attach_twice_is_a_precondition_error() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let before = run.messages().len();
        assert_eq!(
            run.attach(UserId(0)),
            Err(FlowError::AlreadyRegistered(UserId(0)))
        );
        assert_eq!(run.messages().len(), before, "failed flow left messages");
    }

    #[test]
    fn attach_with_infeasible_qos_leaves_no_trace() {
        let mut greedy = UserFixture::new(0, AccessPointId(0));
        greedy.qos_rate = 5000.0;
        let scenario = engn_with_users(vec![greedy]);
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(
            run.attach(UserId(0)),
            Err(FlowError::NoFeasiblePath(UserId(0)))
        );
        assert!(run.messages().is_empty());
        assert_eq!(
            run.world.eu(UserId(0)).unwrap().record.reg_state,
            RegState::Detached
        );
    }

    #[test]
    fn mobility_registration_checks_auth_and_writes_a_binding() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.reset_trace();
        assert_eq!(
            run.mobility_register(UserId(0), MobilityMode::NetworkBased),
            Ok(FlowOutcome::Completed)
        );
        assert_eq!(
            kinds(&run),
            vec![
                MobilityRegister,
                GenericSignaling,
                GenericSignaling,
                ProfileUpdate,
                ProfileUpdate,
                ResourceAllocRequest,
                ResourceAllocRequest,
                ResourceAllocCommand,
                ResourceAllocConfirm,
                ResourceAllocResponse,
                ResourceAllocResponse,
                LocationBindingAck,
            ]
        );
        let mssf = run.world.mssf().unwrap();
        let entry = mssf.bindings.lookup_user(UserId(0)).unwrap();
        assert_eq!(entry.epoch, 1);
        assert_eq!(entry.attachment_point, AccessPointId(0));
        assert_clean(&run);
    }

    #[test]
    fn host_based_registration_delivers_the_handover_policy() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.reset_trace();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        let ks = kinds(&run);
        assert_eq!(ks.len(), 13);
        assert!(ks.contains(&HandoverPolicyInfo));
        let eu = run.world.eu(UserId(0)).unwrap();
        assert_eq!(
            eu.policy.as_deref(),
            Some(super::super::machines::HANDOVER_POLICY)
        );
        assert_clean(&run);
    }

    #[test]
    fn mobility_registration_needs_attachment_first() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(
            run.mobility_register(UserId(0), MobilityMode::NetworkBased),
            Err(FlowError::NotAttached(UserId(0)))
        );
    }

    #[test]
    fn mobility_flows_do_not_exist_in_the_ngn() {
        let scenario = fixture("default-ngn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        assert!(matches!(
            run.mobility_register(UserId(0), MobilityMode::NetworkBased),
            Err(FlowError::UnsupportedInVariant(_, Variant::Ngn))
        ));
    }

    #[test]
    fn network_handover_tears_down_the_old_path_first() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::NetworkBased)
            .unwrap();
        let old_session = run.world.mssf().unwrap().reg[&UserId(0)].session.unwrap();
        run.reset_trace();
        assert_eq!(
            run.handover_network(UserId(0), Some(AccessPointId(1))),
            Ok(FlowOutcome::Completed)
        );
        assert_eq!(
            kinds(&run),
            vec![
                LocationBindingUpdate,
                HandoverRequest,
                HandoverDecision,
                ResourceAllocRequest,
                ResourceAllocCommand,
                ResourceAllocConfirm,
                ResourceAllocResponse,
                ResourceReleaseCommand,
                ResourceAllocResponse,
                ResourceReleaseCommand,
                LocationBindingAck,
                HandoverComplete,
            ]
        );
        let trace = run.trace();
        assert_eq!(
            trace.final_state.sessions[&old_session].state,
            ResourceState::Released
        );
        let new_session = run.world.mssf().unwrap().reg[&UserId(0)].session.unwrap();
        assert_ne!(new_session, old_session);
        assert_eq!(
            trace.final_state.sessions[&new_session].state,
            ResourceState::Allocated
        );
        let entry = run
            .world
            .mssf()
            .unwrap()
            .bindings
            .lookup_user(UserId(0))
            .unwrap();
        assert_eq!(entry.epoch, 2);
        assert_eq!(entry.attachment_point, AccessPointId(1));
        assert_clean(&run);
    }

    #[test]
    fn network_handover_rejects_host_based_users() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        assert_eq!(
            run.handover_network(UserId(0), Some(AccessPointId(1))),
            Err(FlowError::MobilityModeMismatch(
                UserId(0),
                MobilityMode::HostBased
            ))
        );
    }

    #[test]
    fn host_handover_runs_from_the_candidate_list() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        run.reset_trace();
        assert_eq!(run.handover_host(UserId(0)), Ok(FlowOutcome::Completed));
        assert_eq!(
            kinds(&run),
            vec![
                GenericSignaling,
                GenericSignaling,
                CandidateLinkList,
                CandidateLinkList,
                HandoverTrigger,
                HandoverRequest,
                ResourceAllocRequest,
                ResourceAllocCommand,
                ResourceAllocConfirm,
                ResourceAllocResponse,
                ResourceReleaseCommand,
                ResourceAllocResponse,
                ResourceReleaseCommand,
                LocationBindingAck,
                HandoverComplete,
            ]
        );
        // First neighbor of access point 0 was chosen.
        let entry = run
            .world
            .mssf()
            .unwrap()
            .bindings
            .lookup_user(UserId(0))
            .unwrap();
        assert_eq!(entry.attachment_point, AccessPointId(1));
        assert_clean(&run);
    }

    #[test]
    fn host_handover_honors_the_fixture_target() {
        let mut picky = UserFixture::new(0, AccessPointId(0));
        picky.handover_target = Some(AccessPointId(2));
        let scenario = engn_with_users(vec![picky]);
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        assert_eq!(run.handover_host(UserId(0)), Ok(FlowOutcome::Completed));
        let entry = run
            .world
            .mssf()
            .unwrap()
            .bindings
            .lookup_user(UserId(0))
            .unwrap();
        assert_eq!(entry.attachment_point, AccessPointId(2));
    }

    #[test]
    fn host_handover_can_be_declined() {
        let mut settled = UserFixture::new(0, AccessPointId(0));
        settled.accepts_handover = false;
        let scenario = engn_with_users(vec![settled]);
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        run.reset_trace();
        assert_eq!(
            run.handover_host(UserId(0)),
            Ok(FlowOutcome::HandoverDeclined)
        );
        // Trace ends right after the candidate list reaches the terminal.
        assert_eq!(
            kinds(&run),
            vec![
                GenericSignaling,
                GenericSignaling,
                CandidateLinkList,
                CandidateLinkList
            ]
        );
        let entry = run
            .world
            .mssf()
            .unwrap()
            .bindings
            .lookup_user(UserId(0))
            .unwrap();
        assert_eq!(entry.attachment_point, AccessPointId(0));
        assert_clean(&run);
    }

    #[test]
    fn host_handover_with_no_neighbors_is_an_error() {
        let mut raw = raw_fixture("default-engn.json");
        raw.topology.access_points = vec![crate::model::AccessPoint {
            id: AccessPointId(0),
            neighbors: vec![],
            tf_nodes: vec![crate::model::TfId(0)],
        }];
        raw.topology.tf_nodes.truncate(1);
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::HostBased)
            .unwrap();
        run.reset_trace();
        assert_eq!(
            run.handover_host(UserId(0)),
            Err(FlowError::EmptyCandidateList(UserId(0)))
        );
        assert!(run.messages().is_empty(), "error flow left a partial trace");
    }

    #[test]
    fn location_refresh_bumps_the_binding_epoch() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::NetworkBased)
            .unwrap();
        run.reset_trace();
        assert_eq!(
            run.location_binding_update(UserId(0), None),
            Ok(FlowOutcome::Completed)
        );
        assert_eq!(kinds(&run), vec![LocationBindingUpdate, LocationBindingAck]);
        let entry = run
            .world
            .mssf()
            .unwrap()
            .bindings
            .lookup_user(UserId(0))
            .unwrap();
        assert_eq!(entry.epoch, 2);
        assert_clean(&run);
    }

    #[test]
    fn external_sessions_reuse_the_service_skeleton() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let attach_kinds: Vec<MessageKind> = kinds(&run)[..8].to_vec();
        run.reset_trace();
        assert_eq!(run.external_session(UserId(0)), Ok(FlowOutcome::Completed));
        let external_kinds = kinds(&run);
        // Same request/allocate/respond skeleton as the built-in service.
        assert_eq!(&external_kinds[..8], &attach_kinds[..]);
        assert_eq!(&external_kinds[8..], &[DataPayload, DataPayload]);
        assert_clean(&run);
    }

    #[test]
    fn coordination_walkthrough_stays_clean() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        assert_eq!(run.coordination(UserId(0)), Ok(FlowOutcome::Completed));
        assert_clean(&run);
        // Attach, registration and handover ran back to back.
        let ks = kinds(&run);
        assert!(ks.contains(&SetupRequest));
        assert!(ks.contains(&MobilityRegister));
        assert!(ks.contains(&HandoverComplete));
    }

    #[test]
    fn scripts_replay_bit_identically() {
        let scenario = fixture("default-engn.json");
        let steps = vec![
            ScriptStep::Attach(UserId(0)),
            ScriptStep::RegisterMobility(UserId(0), MobilityMode::NetworkBased),
            ScriptStep::LocationRefresh(UserId(0)),
            ScriptStep::HandoverNetwork(UserId(0)),
            ScriptStep::ExternalSession(UserId(0)),
        ];
        let a = run_script(&scenario, &steps).to_jsonl();
        let b = run_script(&scenario, &steps).to_jsonl();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn faults_are_spliced_in_and_renumbered() {
        let mut raw = raw_fixture("default-engn.json");
        raw.faults = vec![crate::model::FaultSpec {
            after_seq: 4,
            kind: GenericSignaling,
            src: "tcf:0".to_string(),
            dst: "tf:0".to_string(),
            session: None,
            payload: None,
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let mut trace = run.trace();
        let before = trace.messages.len();
        apply_faults(&mut trace, &scenario).unwrap();
        assert_eq!(trace.messages.len(), before + 1);
        assert_eq!(trace.messages[4].kind, GenericSignaling);
        for (i, msg) in trace.messages.iter().enumerate() {
            assert_eq!(msg.seq, (i + 1) as u64);
        }
    }
}

#[cfg(test)]
mod prop_tests {
    use std::sync::OnceLock;

    use proptest::prelude::*;

    use super::*;
    use crate::model::{validate_scenario, UserFixture};
    use crate::protocol::check_trace_invariants;
    use crate::testutil::raw_fixture;

    fn two_user_scenario() -> &'static ValidatedScenario {
        static SCENARIO: OnceLock<ValidatedScenario> = OnceLock::new();
        SCENARIO.get_or_init(|| {
            let mut raw = raw_fixture("default-engn.json");
            raw.users = vec![
                UserFixture::new(0, AccessPointId(0)),
                UserFixture::new(1, AccessPointId(1)),
            ];
            validate_scenario(&raw).expect("fixture stays valid")
        })
    }

    fn step_strategy() -> impl Strategy<Value = ScriptStep> {
        let user = (0u64..2).prop_map(UserId);
        prop_oneof![
            user.clone().prop_map(ScriptStep::Attach),
            (user.clone(), proptest::bool::ANY).prop_map(|(u, host)| {
                ScriptStep::RegisterMobility(
                    u,
                    if host {
                        MobilityMode::HostBased
                    } else {
                        MobilityMode::NetworkBased
                    },
                )
            }),
            user.clone().prop_map(ScriptStep::HandoverNetwork),
            user.clone().prop_map(ScriptStep::HandoverHost),
            user.clone().prop_map(ScriptStep::LocationRefresh),
            user.prop_map(ScriptStep::ExternalSession),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Any interleaving of service requests leaves a trace that the
        /// architecture rules accept and the machines fully understood.
        #[test]
        fn random_scripts_stay_invariant_clean(
            steps in proptest::collection::vec(step_strategy(), 0..12)
        ) {
            let trace = run_script(two_user_scenario(), &steps);
            let violations = check_trace_invariants(&trace);
            prop_assert!(violations.is_empty(), "violations: {violations:?}");
            prop_assert!(
                trace.unexpected.is_empty(),
                "machines refused: {:?}",
                trace.unexpected
            );
        }
    }
}
