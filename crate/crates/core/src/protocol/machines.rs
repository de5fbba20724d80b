//! Per-role protocol state machines.
//!
//! `handle_message` is pure: it maps (current role state, message, static
//! scenario context) to a new role state plus messages to emit, and never
//! touches anything else. Replaying the same inputs yields the same
//! outputs, which is what makes traces checkable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    AccessPointId, EndUserRecord, FunctionRole, Ip, MobilityMode, NodeId, RegState, ResourceState,
    SessionId, TfId, UserFixture, UserId, ValidatedScenario, Variant,
};

use super::{Message, MessageKind, Payload, ServiceKind};

/// Static facts the machines may consult (never mutate).
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub scenario: &'a ValidatedScenario,
}

impl<'a> Ctx<'a> {
    pub fn variant(&self) -> Variant {
        self.scenario.variant
    }

    pub fn fixture(&self, user: UserId) -> Option<&'a UserFixture> {
        self.scenario.users.get(&user)
    }

    fn qos(&self, user: UserId) -> f64 {
        self.fixture(user).map(|f| f.qos_rate).unwrap_or(1.0)
    }

    fn home_ap(&self, user: UserId) -> AccessPointId {
        self.fixture(user)
            .map(|f| f.attachment_point)
            .unwrap_or(AccessPointId(0))
    }
}

/// A message to send: the pump fills in src, seq, logical time and route.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub kind: MessageKind,
    pub dst: NodeId,
    pub session: Option<SessionId>,
    pub payload: Payload,
}

impl Draft {
    fn new(kind: MessageKind, dst: NodeId, session: Option<SessionId>, payload: Payload) -> Draft {
        Draft {
            kind,
            dst,
            session,
            payload,
        }
    }
}

/// Result of handling one message at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct HandleResult {
    pub state: RoleState,
    pub drafts: Vec<Draft>,
    /// Set when the machine had no transition for the message; in that
    /// case `state` equals the input state and `drafts` is empty.
    pub unexpected: Option<String>,
}

impl HandleResult {
    fn next(state: RoleState, drafts: Vec<Draft>) -> HandleResult {
        HandleResult {
            state,
            drafts,
            unexpected: None,
        }
    }

    fn unexpected(state: RoleState, reason: impl Into<String>) -> HandleResult {
        HandleResult {
            state,
            drafts: Vec::new(),
            unexpected: Some(reason.into()),
        }
    }
}

fn tcf0() -> NodeId {
    NodeId::new(FunctionRole::TransportControl, 0)
}
fn nassf0() -> NodeId {
    NodeId::new(FunctionRole::Nassf, 0)
}
fn nasssuf0() -> NodeId {
    NodeId::new(FunctionRole::Nasssuf, 0)
}
fn mssf0() -> NodeId {
    NodeId::new(FunctionRole::Mssf, 0)
}
fn msssuf0() -> NodeId {
    NodeId::new(FunctionRole::Msssuf, 0)
}
fn svcsup0() -> NodeId {
    NodeId::new(FunctionRole::ServiceSupport, 0)
}
fn eu_node(user: UserId) -> NodeId {
    NodeId::new(FunctionRole::EndUser, user.0 as u32)
}
fn tf_node(tf: TfId) -> NodeId {
    NodeId::new(FunctionRole::TransportFunction, tf.0)
}

/// Handover policy string the MSSSuF hands to host-based terminals.
pub const HANDOVER_POLICY: &str = "make-before-break";

// ---------------------------------------------------------------------------
// Role states
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RoleState {
    EndUser(EuState),
    TransportFunction(TfState),
    TransportControl(TcfState),
    Nassf(NassfState),
    Nasssuf(NasssufState),
    Mssf(MssfState),
    Msssuf(MsssufState),
    ServiceSupport(SvcSupState),
    ExternalApp(ExtAppState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EuState {
    pub record: EndUserRecord,
    /// Session the terminal currently signals over (latest SetupResponse).
    pub session: Option<SessionId>,
    pub binding_epoch: u64,
    pub policy: Option<String>,
}

impl EuState {
    pub fn new(user: UserId, ap: AccessPointId) -> EuState {
        EuState {
            record: EndUserRecord::detached(user, ap),
            session: None,
            binding_epoch: 0,
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TfState {
    /// Sessions whose path this TF has installed: session -> (path, qos).
    pub installed: BTreeMap<SessionId, (Vec<TfId>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessRec {
    pub user: UserId,
    pub network_end: NodeId,
    pub path: Vec<TfId>,
    pub qos: f64,
    pub state: ResourceState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum NgnStage {
    AwaitConfirm,
    Challenged,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NgnAttach {
    session: SessionId,
    stage: NgnStage,
}

/// Transport control function. Owns resource admission and the session
/// table in both variants; in the existing NGN it additionally terminates
/// end-user signaling (NACF duties: authentication, address assignment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TcfState {
    pub sessions: BTreeMap<SessionId, SessRec>,
    pub tf_load: BTreeMap<TfId, f64>,
    next_session: u64,
    /// In-flight allocations awaiting TF confirm: session -> requester to
    /// answer (None when the TCF itself drives the flow, i.e. NGN attach).
    pending: BTreeMap<SessionId, Option<NodeId>>,
    ngn_attach: BTreeMap<UserId, NgnAttach>,
    next_ip: u64,
    next_logical: u64,
    next_nonce: u64,
}

impl Default for TcfState {
    fn default() -> TcfState {
        TcfState {
            sessions: BTreeMap::new(),
            tf_load: BTreeMap::new(),
            next_session: 1,
            pending: BTreeMap::new(),
            ngn_attach: BTreeMap::new(),
            next_ip: 0,
            next_logical: 1,
            next_nonce: 1,
        }
    }
}

impl TcfState {
    /// Feasible TF for a session at `ap`: admitted load plus the new
    /// demand fits capacity; pick the least-loaded, ties to lowest id.
    fn admit(&self, ctx: &Ctx, ap: AccessPointId, qos: f64) -> Option<TfId> {
        let topo = &ctx.scenario.topology;
        let mut best: Option<(f64, TfId)> = None;
        for tf in topo.candidate_paths(ap) {
            let load = self.tf_load.get(tf).copied().unwrap_or(0.0);
            if load + qos <= topo.capacity(*tf) + 1e-9 {
                let candidate = (load, *tf);
                best = match best {
                    None => Some(candidate),
                    Some(b) if candidate.0 < b.0 || (candidate.0 == b.0 && candidate.1 < b.1) => {
                        Some(candidate)
                    }
                    Some(b) => Some(b),
                };
            }
        }
        best.map(|(_, tf)| tf)
    }

    fn allocate(
        &mut self,
        user: UserId,
        network_end: NodeId,
        tf: TfId,
        qos: f64,
        requester: Option<NodeId>,
    ) -> (SessionId, Draft) {
        let session = SessionId(self.next_session);
        self.next_session += 1;
        self.sessions.insert(
            session,
            SessRec {
                user,
                network_end,
                path: vec![tf],
                qos,
                state: ResourceState::Requested,
            },
        );
        self.pending.insert(session, requester);
        let draft = Draft::new(
            MessageKind::ResourceAllocCommand,
            tf_node(tf),
            Some(session),
            Payload::ResourceCommand {
                session,
                path: vec![tf],
                qos_rate: qos,
            },
        );
        (session, draft)
    }

    fn release(&mut self, session: SessionId) -> Option<Draft> {
        let rec = self.sessions.get_mut(&session)?;
        let head = *rec.path.first()?;
        match rec.state {
            ResourceState::Released => None,
            ResourceState::Allocated => {
                rec.state = ResourceState::Released;
                let qos = rec.qos;
                *self.tf_load.entry(head).or_insert(0.0) -= qos;
                Some(release_draft(head, session))
            }
            ResourceState::Requested => {
                // Released before the TF confirmed: no load was admitted
                // yet, but the TF will have installed the path by the time
                // the release arrives (FIFO delivery), so still tear down.
                rec.state = ResourceState::Released;
                self.pending.remove(&session);
                Some(release_draft(head, session))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum NassfPhase {
    AwaitResponse,
    Challenged { session: SessionId, path: Vec<TfId> },
    Done { session: SessionId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegRec {
    pub logical_id: u64,
    pub permanent_ip: Ip,
    pub temporary_ip: Ip,
}

/// Network attachment SSF (application stratum, eNGN): interacts with end
/// users for attachment, assigns identifiers and addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NassfState {
    phases: BTreeMap<UserId, NassfPhase>,
    pub registered: BTreeMap<UserId, RegRec>,
    next_ip: u64,
    next_logical: u64,
    next_nonce: u64,
}

impl Default for NassfState {
    fn default() -> NassfState {
        NassfState {
            phases: BTreeMap::new(),
            registered: BTreeMap::new(),
            next_ip: 0,
            next_logical: 1,
            next_nonce: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProfileRec {
    pub logical_id: u64,
    pub permanent_ip: Ip,
    pub temporary_ip: Ip,
    pub attachment_point: AccessPointId,
    pub authenticated: bool,
    pub mobility: Option<MobilityMode>,
}

/// Network attachment support function (service stratum, eNGN): user
/// profile repository; verifies authentication state for peers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NasssufState {
    /// Requests forwarded to the TCF, by user: who to answer.
    pending: BTreeMap<UserId, NodeId>,
    pub profiles: BTreeMap<UserId, ProfileRec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum MobPhase {
    AwaitAuthVerify,
    AwaitProfile,
    AwaitSession,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MobRec {
    pub mode: MobilityMode,
    phase: MobPhase,
    pub session: Option<SessionId>,
    pub path: Vec<TfId>,
    permanent_ip: Option<Ip>,
    temporary_ip: Option<Ip>,
    pub attachment_point: Option<AccessPointId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HoPend {
    old_session: Option<SessionId>,
    target: AccessPointId,
}

/// Mobility SSF (application stratum, eNGN): receives location updates,
/// keeps the binding table, executes handover completion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MssfState {
    pub reg: BTreeMap<UserId, MobRec>,
    pub bindings: super::BindingTable,
    pending_ho: BTreeMap<UserId, HoPend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum MsPend {
    Registration { mode: MobilityMode },
    Handover { old_session: Option<SessionId> },
}

/// Mobility support function (service stratum, eNGN): neighbor/policy
/// repository, handover decisions, works with the TCF on resources.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MsssufState {
    pending: BTreeMap<UserId, MsPend>,
}

/// Generic service-stratum support seat for external applications.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SvcSupState {
    pending: BTreeMap<UserId, NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum ExtPhase {
    AwaitResponse,
    Ready { session: SessionId },
}

/// Third-party application endpoint (eNGN): sets up sessions through the
/// same support-function chain as the built-in services.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExtAppState {
    phases: BTreeMap<UserId, ExtPhase>,
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Advance one node's machine by one received message.
pub fn handle_message(state: &RoleState, msg: &Message, ctx: &Ctx) -> HandleResult {
    match state {
        RoleState::EndUser(s) => eu_handle(s, msg, ctx),
        RoleState::TransportFunction(s) => tf_handle(s, msg),
        RoleState::TransportControl(s) => tcf_handle(s, msg, ctx),
        RoleState::Nassf(s) => nassf_handle(s, msg, ctx),
        RoleState::Nasssuf(s) => nasssuf_handle(s, msg),
        RoleState::Mssf(s) => mssf_handle(s, msg, ctx),
        RoleState::Msssuf(s) => msssuf_handle(s, msg, ctx),
        RoleState::ServiceSupport(s) => svcsup_handle(s, msg),
        RoleState::ExternalApp(s) => extapp_handle(s, msg, ctx),
    }
}

/// Actions a flow driver can start on behalf of a terminal. These are the
/// only message origins that are not themselves reactions.
#[derive(Debug, Clone, PartialEq)]
pub enum EuIntent {
    Attach,
    RegisterMobility(MobilityMode),
    Move(AccessPointId),
    LinkReport,
    ExternalSession,
    SendData(u32),
}

/// Terminal-originated message for a driver intent; pure like the handlers.
pub fn eu_initiate(state: &EuState, intent: &EuIntent, ctx: &Ctx) -> (EuState, Draft) {
    let user = state.record.user;
    let mut next = state.clone();
    let draft = match intent {
        EuIntent::Attach => {
            let dst = match ctx.variant() {
                Variant::Ngn => tcf0(),
                Variant::Engn => nassf0(),
            };
            Draft::new(
                MessageKind::SetupRequest,
                dst,
                None,
                Payload::Setup {
                    user,
                    service: ServiceKind::Attachment,
                },
            )
        }
        EuIntent::RegisterMobility(mode) => {
            next.record.mobility = Some(*mode);
            Draft::new(
                MessageKind::MobilityRegister,
                mssf0(),
                state.session,
                Payload::MobilityReg { user, mode: *mode },
            )
        }
        EuIntent::Move(new_ap) => Draft::new(
            MessageKind::LocationBindingUpdate,
            mssf0(),
            state.session,
            Payload::Movement {
                user,
                new_ap: *new_ap,
            },
        ),
        EuIntent::LinkReport => Draft::new(
            MessageKind::GenericSignaling,
            mssf0(),
            state.session,
            Payload::Signal {
                tag: "linkReport".to_string(),
                user: Some(user),
            },
        ),
        EuIntent::ExternalSession => Draft::new(
            MessageKind::SetupRequest,
            NodeId::new(FunctionRole::ExternalApp, 0),
            state.session,
            Payload::Setup {
                user,
                service: ServiceKind::External,
            },
        ),
        EuIntent::SendData(size) => Draft::new(
            MessageKind::DataPayload,
            NodeId::new(FunctionRole::ExternalApp, 0),
            state.session,
            Payload::Data { size: *size },
        ),
    };
    (next, draft)
}

// ---------------------------------------------------------------------------
// End user
// ---------------------------------------------------------------------------

fn eu_handle(state: &EuState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let user = state.record.user;
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::SetupResponse, Payload::SessionRef { session }) => {
            s.session = Some(*session);
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::AuthChallenge, Payload::Challenge { .. }) => {
            s.record.reg_state = RegState::Authenticating;
            s.record.auth_state = crate::model::AuthState::Challenged;
            let valid = ctx
                .fixture(user)
                .map(|f| f.credentials_valid)
                .unwrap_or(true);
            let reply = Draft::new(
                MessageKind::AuthResponse,
                msg.src,
                msg.session,
                Payload::Credentials { user, valid },
            );
            HandleResult::next(RoleState::EndUser(s), vec![reply])
        }
        (MessageKind::AuthResult, Payload::AuthOutcome { success, .. }) => {
            if *success {
                s.record.auth_state = crate::model::AuthState::Authenticated;
                s.record.reg_state = RegState::Registered;
            } else {
                s.record.auth_state = crate::model::AuthState::Failed;
                s.record.reg_state = RegState::Detached;
                s.session = None;
            }
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (
            MessageKind::IpConfigAssign,
            Payload::IpConfig {
                permanent_ip,
                temporary_ip,
                logical_id,
            },
        ) => {
            if s.record.reg_state != RegState::Registered {
                return HandleResult::unexpected(
                    RoleState::EndUser(s),
                    "address assignment while not registered",
                );
            }
            s.record.permanent_ip = Some(*permanent_ip);
            s.record.temporary_ip = Some(*temporary_ip);
            s.record.logical_id = Some(*logical_id);
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::NetworkConfigInfo, Payload::NetworkInfo { .. }) => {
            if s.record.reg_state != RegState::Registered {
                return HandleResult::unexpected(
                    RoleState::EndUser(s),
                    "network configuration while not registered",
                );
            }
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::HandoverPolicyInfo, Payload::Policy { policy, .. }) => {
            s.policy = Some(policy.clone());
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::CandidateLinkList, Payload::Candidates { candidates, .. }) => {
            let accepts = ctx
                .fixture(user)
                .map(|f| f.accepts_handover)
                .unwrap_or(true);
            if candidates.is_empty() || !accepts {
                return HandleResult::next(RoleState::EndUser(s), vec![]);
            }
            let preferred = ctx.fixture(user).and_then(|f| f.handover_target);
            let target = preferred
                .filter(|t| candidates.contains(t))
                .unwrap_or(candidates[0]);
            let trigger = Draft::new(
                MessageKind::HandoverTrigger,
                msg.src,
                msg.session,
                Payload::Trigger { user, target },
            );
            HandleResult::next(RoleState::EndUser(s), vec![trigger])
        }
        (
            MessageKind::LocationBindingAck,
            Payload::Binding {
                temporary_ip,
                attachment_point,
                epoch,
                ..
            },
        ) => {
            s.binding_epoch = *epoch;
            s.record.attachment_point = *attachment_point;
            if s.record.reg_state == RegState::Registered {
                s.record.temporary_ip = Some(*temporary_ip);
            }
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::HandoverComplete, Payload::Complete { session, .. }) => {
            s.session = Some(*session);
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (MessageKind::DataPayload, Payload::Data { .. }) => {
            HandleResult::next(RoleState::EndUser(s), vec![])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::EndUser(s),
            format!("end user cannot handle {kind:?} here"),
        ),
    }
}

// ---------------------------------------------------------------------------
// Transport function
// ---------------------------------------------------------------------------

fn tf_handle(state: &TfState, msg: &Message) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (
            MessageKind::ResourceAllocCommand,
            Payload::ResourceCommand {
                session,
                path,
                qos_rate,
            },
        ) => {
            s.installed.insert(*session, (path.clone(), *qos_rate));
            let confirm = Draft::new(
                MessageKind::ResourceAllocConfirm,
                msg.src,
                Some(*session),
                Payload::SessionRef { session: *session },
            );
            HandleResult::next(RoleState::TransportFunction(s), vec![confirm])
        }
        (MessageKind::ResourceReleaseCommand, Payload::SessionRef { session }) => {
            if s.installed.remove(session).is_none() {
                return HandleResult::unexpected(
                    RoleState::TransportFunction(s),
                    format!("release for uninstalled {session}"),
                );
            }
            HandleResult::next(RoleState::TransportFunction(s), vec![])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::TransportFunction(s),
            format!("transport function cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// Transport control function
// ---------------------------------------------------------------------------

fn tcf_handle(state: &TcfState, msg: &Message, ctx: &Ctx) -> HandleResult {
    match ctx.variant() {
        Variant::Ngn => tcf_handle_ngn(state, msg, ctx),
        Variant::Engn => tcf_handle_engn(state, msg, ctx),
    }
}

fn release_draft(head: TfId, session: SessionId) -> Draft {
    Draft::new(
        MessageKind::ResourceReleaseCommand,
        tf_node(head),
        Some(session),
        Payload::SessionRef { session },
    )
}

/// Mark a pending allocation confirmed; fails (without mutating) when the
/// session is unknown, already resolved, or released while in flight.
fn tcf_confirm(s: &mut TcfState, session: SessionId) -> Option<(SessRec, Option<NodeId>)> {
    if !s.pending.contains_key(&session) {
        return None;
    }
    let rec = s.sessions.get_mut(&session)?;
    if rec.state != ResourceState::Requested {
        return None;
    }
    rec.state = ResourceState::Allocated;
    let head = *rec.path.first().expect("allocated sessions have a path");
    let qos = rec.qos;
    let rec = rec.clone();
    *s.tf_load.entry(head).or_insert(0.0) += qos;
    let requester = s.pending.remove(&session).expect("checked above");
    Some((rec, requester))
}

fn tcf_handle_ngn(state: &TcfState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::SetupRequest, Payload::Setup { user, service })
            if *service == ServiceKind::Attachment =>
        {
            if matches!(
                s.ngn_attach.get(user),
                Some(NgnAttach {
                    stage: NgnStage::Done,
                    ..
                })
            ) {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("{user} is already attached"),
                );
            }
            let qos = ctx.qos(*user);
            let Some(tf) = s.admit(ctx, ctx.home_ap(*user), qos) else {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("no feasible path for {user}"),
                );
            };
            let (session, command) = s.allocate(*user, tcf0(), tf, qos, None);
            s.ngn_attach.insert(
                *user,
                NgnAttach {
                    session,
                    stage: NgnStage::AwaitConfirm,
                },
            );
            HandleResult::next(RoleState::TransportControl(s), vec![command])
        }
        (MessageKind::ResourceAllocConfirm, Payload::SessionRef { session }) => {
            let Some((rec, requester)) = tcf_confirm(&mut s, *session) else {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("confirm for unknown {session}"),
                );
            };
            debug_assert!(requester.is_none(), "NGN allocations are TCF-driven");
            let user = rec.user;
            if let Some(attach) = s.ngn_attach.get_mut(&user) {
                attach.stage = NgnStage::Challenged;
            }
            let nonce = s.next_nonce;
            s.next_nonce += 1;
            let drafts = vec![
                Draft::new(
                    MessageKind::SetupResponse,
                    eu_node(user),
                    Some(*session),
                    Payload::SessionRef { session: *session },
                ),
                Draft::new(
                    MessageKind::AuthChallenge,
                    eu_node(user),
                    Some(*session),
                    Payload::Challenge { nonce },
                ),
            ];
            HandleResult::next(RoleState::TransportControl(s), drafts)
        }
        (MessageKind::AuthResponse, Payload::Credentials { user, valid }) => {
            let Some(NgnAttach {
                session,
                stage: NgnStage::Challenged,
            }) = s.ngn_attach.get(user).cloned()
            else {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("credentials from unchallenged {user}"),
                );
            };
            if *valid {
                let permanent_ip = Ip(1000 + s.next_ip);
                let temporary_ip = Ip(2000 + s.next_ip);
                s.next_ip += 1;
                let logical_id = s.next_logical;
                s.next_logical += 1;
                s.ngn_attach.get_mut(user).expect("present").stage = NgnStage::Done;
                let drafts = vec![
                    Draft::new(
                        MessageKind::AuthResult,
                        eu_node(*user),
                        Some(session),
                        Payload::AuthOutcome {
                            user: *user,
                            success: true,
                        },
                    ),
                    Draft::new(
                        MessageKind::IpConfigAssign,
                        eu_node(*user),
                        Some(session),
                        Payload::IpConfig {
                            permanent_ip,
                            temporary_ip,
                            logical_id,
                        },
                    ),
                    Draft::new(
                        MessageKind::NetworkConfigInfo,
                        eu_node(*user),
                        Some(session),
                        Payload::NetworkInfo { dns: Ip(53) },
                    ),
                ];
                HandleResult::next(RoleState::TransportControl(s), drafts)
            } else {
                s.ngn_attach.remove(user);
                let mut drafts = vec![Draft::new(
                    MessageKind::AuthResult,
                    eu_node(*user),
                    Some(session),
                    Payload::AuthOutcome {
                        user: *user,
                        success: false,
                    },
                )];
                drafts.extend(s.release(session));
                HandleResult::next(RoleState::TransportControl(s), drafts)
            }
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::TransportControl(s),
            format!("NGN transport control cannot handle {kind:?}"),
        ),
    }
}

fn tcf_handle_engn(state: &TcfState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (
            MessageKind::ResourceAllocRequest,
            Payload::ResourceRequest {
                user,
                service,
                qos_rate,
                target_ap,
                ..
            },
        ) => {
            let ap = target_ap.unwrap_or_else(|| ctx.home_ap(*user));
            let Some(tf) = s.admit(ctx, ap, *qos_rate) else {
                let refusal = Draft::new(
                    MessageKind::ResourceAllocResponse,
                    msg.src,
                    None,
                    Payload::ResourceResponse {
                        user: *user,
                        session: None,
                        path: vec![],
                        success: false,
                    },
                );
                return HandleResult::next(RoleState::TransportControl(s), vec![refusal]);
            };
            let network_end = match service {
                ServiceKind::Attachment => nassf0(),
                ServiceKind::Mobility => mssf0(),
                ServiceKind::External => NodeId::new(FunctionRole::ExternalApp, 0),
            };
            let (_, command) = s.allocate(*user, network_end, tf, *qos_rate, Some(msg.src));
            HandleResult::next(RoleState::TransportControl(s), vec![command])
        }
        (MessageKind::ResourceAllocConfirm, Payload::SessionRef { session }) => {
            let Some((rec, requester)) = tcf_confirm(&mut s, *session) else {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("confirm for unknown {session}"),
                );
            };
            let requester = requester.expect("eNGN allocations always have a requester");
            let response = Draft::new(
                MessageKind::ResourceAllocResponse,
                requester,
                None,
                Payload::ResourceResponse {
                    user: rec.user,
                    session: Some(*session),
                    path: rec.path.clone(),
                    success: true,
                },
            );
            HandleResult::next(RoleState::TransportControl(s), vec![response])
        }
        (MessageKind::ResourceReleaseCommand, Payload::SessionRef { session }) => {
            let Some(forward) = s.release(*session) else {
                return HandleResult::unexpected(
                    RoleState::TransportControl(s),
                    format!("release for unknown or already released {session}"),
                );
            };
            HandleResult::next(RoleState::TransportControl(s), vec![forward])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::TransportControl(s),
            format!("eNGN transport control only handles resource control, not {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// NASSF
// ---------------------------------------------------------------------------

fn nassf_handle(state: &NassfState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::SetupRequest, Payload::Setup { user, service })
            if *service == ServiceKind::Attachment =>
        {
            if s.registered.contains_key(user) {
                return HandleResult::unexpected(
                    RoleState::Nassf(s),
                    format!("{user} is already registered"),
                );
            }
            s.phases.insert(*user, NassfPhase::AwaitResponse);
            let request = Draft::new(
                MessageKind::ResourceAllocRequest,
                nasssuf0(),
                None,
                Payload::ResourceRequest {
                    user: *user,
                    service: ServiceKind::Attachment,
                    qos_rate: ctx.qos(*user),
                    target_ap: None,
                    mode: None,
                },
            );
            HandleResult::next(RoleState::Nassf(s), vec![request])
        }
        (
            MessageKind::ResourceAllocResponse,
            Payload::ResourceResponse {
                user,
                session,
                path,
                success,
            },
        ) => {
            if !matches!(s.phases.get(user), Some(NassfPhase::AwaitResponse)) {
                return HandleResult::unexpected(
                    RoleState::Nassf(s),
                    format!("unsolicited resource response for {user}"),
                );
            }
            if !success {
                s.phases.remove(user);
                return HandleResult::next(RoleState::Nassf(s), vec![]);
            }
            let session = session.expect("successful responses carry a session");
            s.phases.insert(
                *user,
                NassfPhase::Challenged {
                    session,
                    path: path.clone(),
                },
            );
            let nonce = s.next_nonce;
            s.next_nonce += 1;
            let drafts = vec![
                Draft::new(
                    MessageKind::SetupResponse,
                    eu_node(*user),
                    Some(session),
                    Payload::SessionRef { session },
                ),
                Draft::new(
                    MessageKind::AuthChallenge,
                    eu_node(*user),
                    Some(session),
                    Payload::Challenge { nonce },
                ),
            ];
            HandleResult::next(RoleState::Nassf(s), drafts)
        }
        (MessageKind::AuthResponse, Payload::Credentials { user, valid }) => {
            let Some(NassfPhase::Challenged { session, .. }) = s.phases.get(user).cloned() else {
                return HandleResult::unexpected(
                    RoleState::Nassf(s),
                    format!("credentials from unchallenged {user}"),
                );
            };
            if *valid {
                let permanent_ip = Ip(1000 + s.next_ip);
                let temporary_ip = Ip(2000 + s.next_ip);
                s.next_ip += 1;
                let logical_id = s.next_logical;
                s.next_logical += 1;
                s.registered.insert(
                    *user,
                    RegRec {
                        logical_id,
                        permanent_ip,
                        temporary_ip,
                    },
                );
                s.phases.insert(*user, NassfPhase::Done { session });
                let drafts = vec![
                    Draft::new(
                        MessageKind::AuthResult,
                        eu_node(*user),
                        Some(session),
                        Payload::AuthOutcome {
                            user: *user,
                            success: true,
                        },
                    ),
                    Draft::new(
                        MessageKind::IpConfigAssign,
                        eu_node(*user),
                        Some(session),
                        Payload::IpConfig {
                            permanent_ip,
                            temporary_ip,
                            logical_id,
                        },
                    ),
                    Draft::new(
                        MessageKind::NetworkConfigInfo,
                        eu_node(*user),
                        Some(session),
                        Payload::NetworkInfo { dns: Ip(53) },
                    ),
                    Draft::new(
                        MessageKind::ProfileUpdate,
                        nasssuf0(),
                        None,
                        Payload::Profile {
                            user: *user,
                            mode: None,
                            logical_id: Some(logical_id),
                            permanent_ip: Some(permanent_ip),
                            temporary_ip: Some(temporary_ip),
                            attachment_point: Some(ctx.home_ap(*user)),
                        },
                    ),
                ];
                HandleResult::next(RoleState::Nassf(s), drafts)
            } else {
                s.phases.remove(user);
                let drafts = vec![
                    Draft::new(
                        MessageKind::AuthResult,
                        eu_node(*user),
                        Some(session),
                        Payload::AuthOutcome {
                            user: *user,
                            success: false,
                        },
                    ),
                    Draft::new(
                        MessageKind::ResourceReleaseCommand,
                        nasssuf0(),
                        Some(session),
                        Payload::SessionRef { session },
                    ),
                ];
                HandleResult::next(RoleState::Nassf(s), drafts)
            }
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::Nassf(s),
            format!("attachment SSF cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// NASSSuF
// ---------------------------------------------------------------------------

fn nasssuf_handle(state: &NasssufState, msg: &Message) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::ResourceAllocRequest, Payload::ResourceRequest { user, .. }) => {
            s.pending.insert(*user, msg.src);
            let forward = Draft::new(
                MessageKind::ResourceAllocRequest,
                tcf0(),
                None,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::Nasssuf(s), vec![forward])
        }
        (MessageKind::ResourceAllocResponse, Payload::ResourceResponse { user, .. }) => {
            let Some(requester) = s.pending.remove(user) else {
                return HandleResult::unexpected(
                    RoleState::Nasssuf(s),
                    format!("unsolicited resource response for {user}"),
                );
            };
            let forward = Draft::new(
                MessageKind::ResourceAllocResponse,
                requester,
                None,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::Nasssuf(s), vec![forward])
        }
        (MessageKind::ResourceReleaseCommand, Payload::SessionRef { .. }) => {
            let forward = Draft::new(
                MessageKind::ResourceReleaseCommand,
                tcf0(),
                msg.session,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::Nasssuf(s), vec![forward])
        }
        (
            MessageKind::ProfileUpdate,
            Payload::Profile {
                user,
                mode,
                logical_id,
                permanent_ip,
                temporary_ip,
                attachment_point,
            },
        ) => {
            if msg.src.role == FunctionRole::Nassf {
                // Profile write after successful attachment.
                s.profiles.insert(
                    *user,
                    ProfileRec {
                        logical_id: logical_id.expect("attachment profile has an id"),
                        permanent_ip: permanent_ip.expect("attachment profile has an address"),
                        temporary_ip: temporary_ip.expect("attachment profile has an address"),
                        attachment_point: attachment_point
                            .expect("attachment profile has a location"),
                        authenticated: true,
                        mobility: None,
                    },
                );
                return HandleResult::next(RoleState::Nasssuf(s), vec![]);
            }
            // Mobility service added to the profile; answer with identity.
            let Some(profile) = s.profiles.get_mut(user) else {
                return HandleResult::unexpected(
                    RoleState::Nasssuf(s),
                    format!("profile update for unknown {user}"),
                );
            };
            profile.mobility = *mode;
            let profile = profile.clone();
            let reply = Draft::new(
                MessageKind::ProfileUpdate,
                msg.src,
                None,
                Payload::Profile {
                    user: *user,
                    mode: *mode,
                    logical_id: Some(profile.logical_id),
                    permanent_ip: Some(profile.permanent_ip),
                    temporary_ip: Some(profile.temporary_ip),
                    attachment_point: Some(profile.attachment_point),
                },
            );
            HandleResult::next(RoleState::Nasssuf(s), vec![reply])
        }
        (MessageKind::GenericSignaling, Payload::Signal { tag, user }) if tag == "authVerify" => {
            let user = user.expect("authVerify names a user");
            let verified = s
                .profiles
                .get(&user)
                .map(|p| p.authenticated)
                .unwrap_or(false);
            let reply = Draft::new(
                MessageKind::GenericSignaling,
                msg.src,
                None,
                Payload::Signal {
                    tag: if verified {
                        "authVerified".to_string()
                    } else {
                        "authFailed".to_string()
                    },
                    user: Some(user),
                },
            );
            HandleResult::next(RoleState::Nasssuf(s), vec![reply])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::Nasssuf(s),
            format!("attachment support function cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// MSSF
// ---------------------------------------------------------------------------

fn mssf_handle(state: &MssfState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::MobilityRegister, Payload::MobilityReg { user, mode }) => {
            if s.reg.contains_key(user) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("{user} is already registered for mobility"),
                );
            }
            s.reg.insert(
                *user,
                MobRec {
                    mode: *mode,
                    phase: MobPhase::AwaitAuthVerify,
                    session: None,
                    path: vec![],
                    permanent_ip: None,
                    temporary_ip: None,
                    attachment_point: None,
                },
            );
            let verify = Draft::new(
                MessageKind::GenericSignaling,
                nasssuf0(),
                None,
                Payload::Signal {
                    tag: "authVerify".to_string(),
                    user: Some(*user),
                },
            );
            HandleResult::next(RoleState::Mssf(s), vec![verify])
        }
        (MessageKind::GenericSignaling, Payload::Signal { tag, user })
            if msg.src.role == FunctionRole::Nasssuf =>
        {
            let user = user.expect("verification answers name a user");
            let Some(rec) = s.reg.get_mut(&user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("verification answer for unknown {user}"),
                );
            };
            if !matches!(rec.phase, MobPhase::AwaitAuthVerify) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("unsolicited verification answer for {user}"),
                );
            }
            if tag == "authVerified" {
                rec.phase = MobPhase::AwaitProfile;
                let mode = rec.mode;
                let update = Draft::new(
                    MessageKind::ProfileUpdate,
                    nasssuf0(),
                    None,
                    Payload::Profile {
                        user,
                        mode: Some(mode),
                        logical_id: None,
                        permanent_ip: None,
                        temporary_ip: None,
                        attachment_point: None,
                    },
                );
                HandleResult::next(RoleState::Mssf(s), vec![update])
            } else {
                s.reg.remove(&user);
                HandleResult::next(RoleState::Mssf(s), vec![])
            }
        }
        (
            MessageKind::ProfileUpdate,
            Payload::Profile {
                user,
                permanent_ip,
                temporary_ip,
                attachment_point,
                ..
            },
        ) => {
            let Some(rec) = s.reg.get_mut(user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("profile answer for unknown {user}"),
                );
            };
            if !matches!(rec.phase, MobPhase::AwaitProfile) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("unsolicited profile answer for {user}"),
                );
            }
            rec.permanent_ip = *permanent_ip;
            rec.temporary_ip = *temporary_ip;
            rec.attachment_point = *attachment_point;
            rec.phase = MobPhase::AwaitSession;
            let mode = rec.mode;
            let request = Draft::new(
                MessageKind::ResourceAllocRequest,
                msssuf0(),
                None,
                Payload::ResourceRequest {
                    user: *user,
                    service: ServiceKind::Mobility,
                    qos_rate: ctx.qos(*user),
                    target_ap: *attachment_point,
                    mode: Some(mode),
                },
            );
            HandleResult::next(RoleState::Mssf(s), vec![request])
        }
        (
            MessageKind::ResourceAllocResponse,
            Payload::ResourceResponse {
                user,
                session,
                path,
                success,
            },
        ) => {
            if let Some(pend) = s.pending_ho.remove(user) {
                // Handover resource outcome.
                if !success {
                    return HandleResult::next(RoleState::Mssf(s), vec![]);
                }
                let session = session.expect("successful responses carry a session");
                let rec = s.reg.get_mut(user).expect("handover implies registration");
                rec.session = Some(session);
                rec.path = path.clone();
                rec.attachment_point = Some(pend.target);
                let (permanent_ip, temporary_ip) = (
                    rec.permanent_ip.expect("registered users have an identity"),
                    rec.temporary_ip.expect("registered users have an address"),
                );
                let entry = s
                    .bindings
                    .update(permanent_ip, temporary_ip, pend.target)
                    .expect("handover implies an existing binding")
                    .clone();
                let drafts = vec![
                    Draft::new(
                        MessageKind::LocationBindingAck,
                        eu_node(*user),
                        Some(session),
                        Payload::Binding {
                            user: *user,
                            permanent_ip: entry.permanent_ip,
                            temporary_ip: entry.temporary_ip,
                            attachment_point: entry.attachment_point,
                            epoch: entry.epoch,
                        },
                    ),
                    Draft::new(
                        MessageKind::HandoverComplete,
                        eu_node(*user),
                        Some(session),
                        Payload::Complete {
                            user: *user,
                            session,
                        },
                    ),
                ];
                return HandleResult::next(RoleState::Mssf(s), drafts);
            }
            // Registration session outcome.
            let Some(rec) = s.reg.get_mut(user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("resource response for unknown {user}"),
                );
            };
            if !matches!(rec.phase, MobPhase::AwaitSession) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("unsolicited resource response for {user}"),
                );
            }
            if !success {
                s.reg.remove(user);
                return HandleResult::next(RoleState::Mssf(s), vec![]);
            }
            let session = session.expect("successful responses carry a session");
            rec.session = Some(session);
            rec.path = path.clone();
            rec.phase = MobPhase::Ready;
            let (permanent_ip, temporary_ip, ap) = (
                rec.permanent_ip.expect("profile answer supplied identity"),
                rec.temporary_ip.expect("profile answer supplied address"),
                rec.attachment_point
                    .expect("profile answer supplied location"),
            );
            let entry = s
                .bindings
                .register(*user, permanent_ip, temporary_ip, ap)
                .clone();
            // The initial binding ack doubles as the registration grant;
            // it rides the session that was just allocated.
            let ack = Draft::new(
                MessageKind::LocationBindingAck,
                eu_node(*user),
                Some(session),
                Payload::Binding {
                    user: *user,
                    permanent_ip: entry.permanent_ip,
                    temporary_ip: entry.temporary_ip,
                    attachment_point: entry.attachment_point,
                    epoch: entry.epoch,
                },
            );
            HandleResult::next(RoleState::Mssf(s), vec![ack])
        }
        (MessageKind::LocationBindingUpdate, Payload::Movement { user, new_ap }) => {
            let Some(rec) = s.reg.get(user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("{user} is not registered for mobility"),
                );
            };
            if !matches!(rec.phase, MobPhase::Ready) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("{user} has no established mobility session"),
                );
            }
            let current = rec.attachment_point.expect("ready implies location");
            if *new_ap == current {
                // Same-location refresh: rebind in place.
                let permanent_ip = rec.permanent_ip.expect("ready implies identity");
                let temporary_ip = rec.temporary_ip.expect("ready implies address");
                let session = rec.session;
                let entry = s
                    .bindings
                    .update(permanent_ip, temporary_ip, current)
                    .expect("registered users are bound")
                    .clone();
                let ack = Draft::new(
                    MessageKind::LocationBindingAck,
                    eu_node(*user),
                    session,
                    Payload::Binding {
                        user: *user,
                        permanent_ip: entry.permanent_ip,
                        temporary_ip: entry.temporary_ip,
                        attachment_point: entry.attachment_point,
                        epoch: entry.epoch,
                    },
                );
                return HandleResult::next(RoleState::Mssf(s), vec![ack]);
            }
            match rec.mode {
                MobilityMode::NetworkBased => {
                    let mode = rec.mode;
                    let old_session = rec.session;
                    s.pending_ho.insert(
                        *user,
                        HoPend {
                            old_session,
                            target: *new_ap,
                        },
                    );
                    let request = Draft::new(
                        MessageKind::HandoverRequest,
                        msssuf0(),
                        old_session,
                        Payload::HandoverReq {
                            user: *user,
                            target: Some(*new_ap),
                            mode,
                        },
                    );
                    HandleResult::next(RoleState::Mssf(s), vec![request])
                }
                MobilityMode::HostBased => HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("host-based {user} must trigger handover itself"),
                ),
            }
        }
        (MessageKind::GenericSignaling, Payload::Signal { tag, user }) if tag == "linkReport" => {
            let user = user.expect("link reports name a user");
            let Some(rec) = s.reg.get(&user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("link report from unregistered {user}"),
                );
            };
            if rec.mode != MobilityMode::HostBased || !matches!(rec.phase, MobPhase::Ready) {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("link report from non-host-based {user}"),
                );
            }
            let ap = rec.attachment_point.expect("ready implies location");
            let query = Draft::new(
                MessageKind::GenericSignaling,
                msssuf0(),
                None,
                Payload::Movement { user, new_ap: ap },
            );
            HandleResult::next(RoleState::Mssf(s), vec![query])
        }
        (MessageKind::HandoverDecision, Payload::Decision { user, target }) => {
            // Informational in network mode: the resource request is
            // already in flight alongside this decision.
            let pending = s
                .pending_ho
                .get(user)
                .map(|p| p.target == *target)
                .unwrap_or(false);
            if !pending {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("decision for {user} without a pending handover"),
                );
            }
            HandleResult::next(RoleState::Mssf(s), vec![])
        }
        (MessageKind::CandidateLinkList, Payload::Candidates { user, candidates }) => {
            let Some(rec) = s.reg.get(user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("candidate list for unknown {user}"),
                );
            };
            let forward = Draft::new(
                MessageKind::CandidateLinkList,
                eu_node(*user),
                rec.session,
                Payload::Candidates {
                    user: *user,
                    candidates: candidates.clone(),
                },
            );
            HandleResult::next(RoleState::Mssf(s), vec![forward])
        }
        (MessageKind::HandoverTrigger, Payload::Trigger { user, target }) => {
            let Some(rec) = s.reg.get(user) else {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("trigger from unregistered {user}"),
                );
            };
            if rec.mode != MobilityMode::HostBased {
                return HandleResult::unexpected(
                    RoleState::Mssf(s),
                    format!("trigger from network-based {user}"),
                );
            }
            let mode = rec.mode;
            let old_session = rec.session;
            s.pending_ho.insert(
                *user,
                HoPend {
                    old_session,
                    target: *target,
                },
            );
            let request = Draft::new(
                MessageKind::HandoverRequest,
                msssuf0(),
                old_session,
                Payload::HandoverReq {
                    user: *user,
                    target: Some(*target),
                    mode,
                },
            );
            HandleResult::next(RoleState::Mssf(s), vec![request])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::Mssf(s),
            format!("mobility SSF cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// MSSSuF
// ---------------------------------------------------------------------------

fn msssuf_handle(state: &MsssufState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        // Mobility session establishment forwarded toward the TCF.
        (MessageKind::ResourceAllocRequest, Payload::ResourceRequest { user, mode, .. }) => {
            s.pending.insert(
                *user,
                MsPend::Registration {
                    mode: mode.unwrap_or(MobilityMode::NetworkBased),
                },
            );
            let forward = Draft::new(
                MessageKind::ResourceAllocRequest,
                tcf0(),
                None,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::Msssuf(s), vec![forward])
        }
        (MessageKind::HandoverRequest, Payload::HandoverReq { user, target, mode }) => {
            let target = target.expect("handover requests carry a target");
            let old_session = msg.session;
            s.pending.insert(*user, MsPend::Handover { old_session });
            let mut drafts = Vec::new();
            if *mode == MobilityMode::NetworkBased {
                // The network decides; host-based users already decided.
                drafts.push(Draft::new(
                    MessageKind::HandoverDecision,
                    msg.src,
                    old_session,
                    Payload::Decision {
                        user: *user,
                        target,
                    },
                ));
            }
            drafts.push(Draft::new(
                MessageKind::ResourceAllocRequest,
                tcf0(),
                None,
                Payload::ResourceRequest {
                    user: *user,
                    service: ServiceKind::Mobility,
                    qos_rate: ctx.qos(*user),
                    target_ap: Some(target),
                    mode: None,
                },
            ));
            HandleResult::next(RoleState::Msssuf(s), drafts)
        }
        (MessageKind::ResourceAllocResponse, Payload::ResourceResponse { user, success, .. }) => {
            let Some(pend) = s.pending.remove(user) else {
                return HandleResult::unexpected(
                    RoleState::Msssuf(s),
                    format!("unsolicited resource response for {user}"),
                );
            };
            let mut drafts = Vec::new();
            match pend {
                MsPend::Registration { mode } => {
                    drafts.push(Draft::new(
                        MessageKind::ResourceAllocResponse,
                        mssf0(),
                        None,
                        msg.payload.clone(),
                    ));
                    if *success && mode == MobilityMode::HostBased {
                        // Host-based terminals receive the handover policy
                        // over the session that was just set up.
                        let session = match &msg.payload {
                            Payload::ResourceResponse { session, .. } => *session,
                            _ => None,
                        };
                        drafts.push(Draft::new(
                            MessageKind::HandoverPolicyInfo,
                            eu_node(*user),
                            session,
                            Payload::Policy {
                                user: *user,
                                policy: HANDOVER_POLICY.to_string(),
                            },
                        ));
                    }
                }
                MsPend::Handover { old_session } => {
                    if *success {
                        if let Some(old) = old_session {
                            // Make-before-break: new path is up, release old.
                            drafts.push(Draft::new(
                                MessageKind::ResourceReleaseCommand,
                                tcf0(),
                                Some(old),
                                Payload::SessionRef { session: old },
                            ));
                        }
                    }
                    drafts.push(Draft::new(
                        MessageKind::ResourceAllocResponse,
                        mssf0(),
                        None,
                        msg.payload.clone(),
                    ));
                }
            }
            HandleResult::next(RoleState::Msssuf(s), drafts)
        }
        // Neighbor query for a host-based terminal: feasible links are the
        // topology neighbors of its current attachment point.
        (MessageKind::GenericSignaling, Payload::Movement { user, new_ap }) => {
            let candidates = ctx
                .scenario
                .topology
                .access_point(*new_ap)
                .map(|ap| ap.neighbors.clone())
                .unwrap_or_default();
            let list = Draft::new(
                MessageKind::CandidateLinkList,
                msg.src,
                None,
                Payload::Candidates {
                    user: *user,
                    candidates,
                },
            );
            HandleResult::next(RoleState::Msssuf(s), vec![list])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::Msssuf(s),
            format!("mobility support function cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// Service support (external applications)
// ---------------------------------------------------------------------------

fn svcsup_handle(state: &SvcSupState, msg: &Message) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::ResourceAllocRequest, Payload::ResourceRequest { user, .. }) => {
            s.pending.insert(*user, msg.src);
            let forward = Draft::new(
                MessageKind::ResourceAllocRequest,
                tcf0(),
                None,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::ServiceSupport(s), vec![forward])
        }
        (MessageKind::ResourceAllocResponse, Payload::ResourceResponse { user, .. }) => {
            let Some(requester) = s.pending.remove(user) else {
                return HandleResult::unexpected(
                    RoleState::ServiceSupport(s),
                    format!("unsolicited resource response for {user}"),
                );
            };
            let forward = Draft::new(
                MessageKind::ResourceAllocResponse,
                requester,
                None,
                msg.payload.clone(),
            );
            HandleResult::next(RoleState::ServiceSupport(s), vec![forward])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::ServiceSupport(s),
            format!("service support cannot handle {kind:?}"),
        ),
    }
}

// ---------------------------------------------------------------------------
// External application
// ---------------------------------------------------------------------------

fn extapp_handle(state: &ExtAppState, msg: &Message, ctx: &Ctx) -> HandleResult {
    let mut s = state.clone();
    match (&msg.kind, &msg.payload) {
        (MessageKind::SetupRequest, Payload::Setup { user, service })
            if *service == ServiceKind::External =>
        {
            s.phases.insert(*user, ExtPhase::AwaitResponse);
            let request = Draft::new(
                MessageKind::ResourceAllocRequest,
                svcsup0(),
                None,
                Payload::ResourceRequest {
                    user: *user,
                    service: ServiceKind::External,
                    qos_rate: ctx.qos(*user),
                    target_ap: None,
                    mode: None,
                },
            );
            HandleResult::next(RoleState::ExternalApp(s), vec![request])
        }
        (
            MessageKind::ResourceAllocResponse,
            Payload::ResourceResponse {
                user,
                session,
                success,
                ..
            },
        ) => {
            if !matches!(s.phases.get(user), Some(ExtPhase::AwaitResponse)) {
                return HandleResult::unexpected(
                    RoleState::ExternalApp(s),
                    format!("unsolicited resource response for {user}"),
                );
            }
            if !success {
                s.phases.remove(user);
                return HandleResult::next(RoleState::ExternalApp(s), vec![]);
            }
            let session = session.expect("successful responses carry a session");
            s.phases.insert(*user, ExtPhase::Ready { session });
            let response = Draft::new(
                MessageKind::SetupResponse,
                eu_node(*user),
                Some(session),
                Payload::SessionRef { session },
            );
            HandleResult::next(RoleState::ExternalApp(s), vec![response])
        }
        (MessageKind::DataPayload, Payload::Data { size }) => {
            let user = match msg.src.role {
                FunctionRole::EndUser => UserId(u64::from(msg.src.index)),
                _ => {
                    return HandleResult::unexpected(
                        RoleState::ExternalApp(s),
                        "data from a non-terminal".to_string(),
                    )
                }
            };
            let Some(ExtPhase::Ready { session }) = s.phases.get(&user).cloned() else {
                return HandleResult::unexpected(
                    RoleState::ExternalApp(s),
                    format!("data from {user} without a session"),
                );
            };
            let echo = Draft::new(
                MessageKind::DataPayload,
                eu_node(user),
                Some(session),
                Payload::Data { size: *size },
            );
            HandleResult::next(RoleState::ExternalApp(s), vec![echo])
        }
        (kind, _) => HandleResult::unexpected(
            RoleState::ExternalApp(s),
            format!("external application cannot handle {kind:?}"),
        ),
    }
}
