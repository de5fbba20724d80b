//! Shared vocabulary of the control-plane model: architecture variants,
//! function roles and their strata, end-user and session records, plus the
//! scenario configuration (`config`), topology (`topology`) and processor
//! budget helpers (`budget`).

mod budget;
mod config;
mod topology;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use budget::equal_budget_split;
pub use config::{
    scenario_from_json, validate_scenario, CostEntry, CostTable, FaultSpec, FlowShape, FlowSpec,
    ModelError, Population, RawScenario, RawStage, UserFixture, ValidatedScenario, Workload,
};
pub use topology::{AccessPoint, AccessPointId, TfId, TfNode, Topology};

/// Which control-plane architecture a scenario models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Existing NGN: RACF/NACF/MMCF inside transport control, signaling
    /// terminates at the transport stratum.
    Ngn,
    /// Evolved NGN: signaling support functions in the service and
    /// application strata, transport control reduced to resource commands.
    Engn,
}

impl Variant {
    /// Performance pools this variant schedules work on, in canonical order.
    pub fn default_pools(self) -> &'static [PoolRole] {
        match self {
            Variant::Ngn => &[
                PoolRole::EndUser,
                PoolRole::TransportFunction,
                PoolRole::TransportControl,
            ],
            Variant::Engn => &[
                PoolRole::EndUser,
                PoolRole::TransportFunction,
                PoolRole::TransportControl,
                PoolRole::SignalingService,
            ],
        }
    }

    /// Pool set when the generic signaling-service pool is split per
    /// support function (eNGN only).
    pub fn split_pools(self) -> &'static [PoolRole] {
        match self {
            Variant::Ngn => self.default_pools(),
            Variant::Engn => &[
                PoolRole::EndUser,
                PoolRole::TransportFunction,
                PoolRole::TransportControl,
                PoolRole::Nassf,
                PoolRole::Nasssuf,
                PoolRole::Mssf,
                PoolRole::Msssuf,
            ],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Ngn => write!(f, "ngn"),
            Variant::Engn => write!(f, "engn"),
        }
    }
}

/// Strata of the Y.2325 reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Stratum {
    EndUser,
    Transport,
    Service,
    Application,
}

/// Functional entities that can send or receive control-plane messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FunctionRole {
    EndUser,
    /// Transport function (media/forwarding element).
    TransportFunction,
    /// Transport control function; houses RACF and, in the existing NGN,
    /// NACF and MMCF behavior as well.
    TransportControl,
    /// Network attachment signaling support function (application stratum, eNGN).
    Nassf,
    /// Network attachment signaling support support-function (service stratum, eNGN).
    Nasssuf,
    /// Mobility signaling support function (application stratum, eNGN).
    Mssf,
    /// Mobility signaling support support-function (service stratum, eNGN).
    Msssuf,
    /// Generic service-stratum support seat for third-party applications (eNGN).
    ServiceSupport,
    /// Third-party application endpoint (application stratum, eNGN).
    ExternalApp,
}

impl FunctionRole {
    pub fn stratum(self) -> Stratum {
        match self {
            FunctionRole::EndUser => Stratum::EndUser,
            FunctionRole::TransportFunction | FunctionRole::TransportControl => Stratum::Transport,
            FunctionRole::Nasssuf | FunctionRole::Msssuf | FunctionRole::ServiceSupport => {
                Stratum::Service
            }
            FunctionRole::Nassf | FunctionRole::Mssf | FunctionRole::ExternalApp => {
                Stratum::Application
            }
        }
    }

    /// Whether the role exists in the given architecture.
    pub fn in_variant(self, variant: Variant) -> bool {
        match self {
            FunctionRole::EndUser
            | FunctionRole::TransportFunction
            | FunctionRole::TransportControl => true,
            _ => variant == Variant::Engn,
        }
    }

    /// Short prefix used in node identifiers and trace files.
    pub fn tag(self) -> &'static str {
        match self {
            FunctionRole::EndUser => "eu",
            FunctionRole::TransportFunction => "tf",
            FunctionRole::TransportControl => "tcf",
            FunctionRole::Nassf => "nassf",
            FunctionRole::Nasssuf => "nasssuf",
            FunctionRole::Mssf => "mssf",
            FunctionRole::Msssuf => "msssuf",
            FunctionRole::ServiceSupport => "svcsup",
            FunctionRole::ExternalApp => "extapp",
        }
    }
}

/// Processor pools the performance model schedules on. Support functions
/// share one `SignalingService` pool unless a scenario splits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PoolRole {
    EndUser,
    TransportFunction,
    TransportControl,
    SignalingService,
    Nassf,
    Nasssuf,
    Mssf,
    Msssuf,
}

impl PoolRole {
    pub fn parse(name: &str) -> Option<PoolRole> {
        Some(match name {
            "endUser" => PoolRole::EndUser,
            "transportFunction" => PoolRole::TransportFunction,
            "transportControl" => PoolRole::TransportControl,
            "signalingService" => PoolRole::SignalingService,
            "nassf" => PoolRole::Nassf,
            "nasssuf" => PoolRole::Nasssuf,
            "mssf" => PoolRole::Mssf,
            "msssuf" => PoolRole::Msssuf,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolRole::EndUser => "endUser",
            PoolRole::TransportFunction => "transportFunction",
            PoolRole::TransportControl => "transportControl",
            PoolRole::SignalingService => "signalingService",
            PoolRole::Nassf => "nassf",
            PoolRole::Nasssuf => "nasssuf",
            PoolRole::Mssf => "mssf",
            PoolRole::Msssuf => "msssuf",
        }
    }
}

impl fmt::Display for PoolRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Demand classes for processing steps; each carries a service rate in the
/// scenario rate table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ActionKind {
    /// End-user idle period between transactions (closed workload only).
    Think,
    /// Terminal-side processing of a signaling message.
    UserSignaling,
    /// Transport-control processing of terminated end-user signaling (NGN).
    ControlSignaling,
    /// Resource allocation command execution (TCF and TF).
    ResourceControl,
    /// TF relay leg of end-user signaling in the existing NGN.
    RelaySignaling,
    /// TF forwarding leg in the evolved NGN, where signaling rides as data.
    DataForward,
    /// Support-function processing in the eNGN service/application strata.
    ServiceSignaling,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Think,
        ActionKind::UserSignaling,
        ActionKind::ControlSignaling,
        ActionKind::ResourceControl,
        ActionKind::RelaySignaling,
        ActionKind::DataForward,
        ActionKind::ServiceSignaling,
    ];

    pub fn parse(name: &str) -> Option<ActionKind> {
        Some(match name {
            "think" => ActionKind::Think,
            "userSignaling" => ActionKind::UserSignaling,
            "controlSignaling" => ActionKind::ControlSignaling,
            "resourceControl" => ActionKind::ResourceControl,
            "relaySignaling" => ActionKind::RelaySignaling,
            "dataForward" => ActionKind::DataForward,
            "serviceSignaling" => ActionKind::ServiceSignaling,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Think => "think",
            ActionKind::UserSignaling => "userSignaling",
            ActionKind::ControlSignaling => "controlSignaling",
            ActionKind::ResourceControl => "resourceControl",
            ActionKind::RelaySignaling => "relaySignaling",
            ActionKind::DataForward => "dataForward",
            ActionKind::ServiceSignaling => "serviceSignaling",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Role-tagged node identity, written `tag:index` (e.g. `eu:0`, `tf:1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub role: FunctionRole,
    pub index: u32,
}

impl NodeId {
    pub fn new(role: FunctionRole, index: u32) -> NodeId {
        NodeId { role, index }
    }

    pub fn parse(text: &str) -> Option<NodeId> {
        let (tag, index) = text.split_once(':')?;
        let role = match tag {
            "eu" => FunctionRole::EndUser,
            "tf" => FunctionRole::TransportFunction,
            "tcf" => FunctionRole::TransportControl,
            "nassf" => FunctionRole::Nassf,
            "nasssuf" => FunctionRole::Nasssuf,
            "mssf" => FunctionRole::Mssf,
            "msssuf" => FunctionRole::Msssuf,
            "svcsup" => FunctionRole::ServiceSupport,
            "extapp" => FunctionRole::ExternalApp,
            _ => return None,
        };
        Some(NodeId {
            role,
            index: index.parse().ok()?,
        })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role.tag(), self.index)
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        NodeId::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid node id `{text}`")))
    }
}

/// Registration lifecycle of an end user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RegState {
    Detached,
    Authenticating,
    Registered,
}

/// Authentication status, tracked separately so a user can be registered
/// for transport while a later challenge is still outstanding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AuthState {
    None,
    Challenged,
    Authenticated,
    Failed,
}

/// Mobility service mode selected at registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MobilityMode {
    /// Network decides handover (MSSSuF makes the decision).
    NetworkBased,
    /// Terminal decides handover from a candidate list.
    HostBased,
}

impl fmt::Display for MobilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MobilityMode::NetworkBased => write!(f, "networkBased"),
            MobilityMode::HostBased => write!(f, "hostBased"),
        }
    }
}

/// Opaque address; distinct permanent and temporary values per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ip(pub u64);

impl fmt::Display for Ip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ip-{}", self.0)
    }
}

/// Stable end-user identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Allocated transport session identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Everything the network knows about one end user.
///
/// Invariants (enforced by the state machines, checked in tests):
/// `temporary_ip` is present only while `reg_state == Registered`;
/// `logical_id` is assigned at most once and never reused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndUserRecord {
    pub user: UserId,
    pub reg_state: RegState,
    pub auth_state: AuthState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permanent_ip: Option<Ip>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporary_ip: Option<Ip>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logical_id: Option<u64>,
    pub attachment_point: AccessPointId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MobilityMode>,
}

impl EndUserRecord {
    pub fn detached(user: UserId, attachment_point: AccessPointId) -> Self {
        EndUserRecord {
            user,
            reg_state: RegState::Detached,
            auth_state: AuthState::None,
            permanent_ip: None,
            temporary_ip: None,
            logical_id: None,
            attachment_point,
            mobility: None,
        }
    }

    /// Record-level consistency; violations indicate a machine bug.
    pub fn check(&self) -> Result<(), String> {
        if self.temporary_ip.is_some() && self.reg_state != RegState::Registered {
            return Err(format!(
                "{}: temporary ip present while {:?}",
                self.user, self.reg_state
            ));
        }
        if self.reg_state == RegState::Registered && self.auth_state != AuthState::Authenticated {
            return Err(format!("{}: registered but not authenticated", self.user));
        }
        Ok(())
    }
}

/// Resource lifecycle of a transport session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ResourceState {
    Requested,
    Allocated,
    Released,
}

/// An allocated (or in-flight) transport session between a user terminal
/// and a network-side endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Session {
    pub id: SessionId,
    pub user_end: UserId,
    /// Role and index of the network-side endpoint, e.g. the NASSF that
    /// anchors an attachment session.
    pub network_end: String,
    /// Transport functions on the allocated path, in order.
    pub path: Vec<TfId>,
    /// QoS rate demand admitted against each path TF's capacity.
    pub qos_rate: f64,
    pub state: ResourceState,
}

/// Aggregate performance metrics produced by any engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    /// Completed transactions per unit time.
    pub throughput: f64,
    /// Mean time from transaction start to completion.
    pub mean_response: f64,
    /// Busy fraction per pool, in [0, 1].
    pub utilization: BTreeMap<PoolRole, f64>,
    /// Transactions counted toward the metrics (0 for analytic engines).
    pub completions: u64,
    /// Central 95% confidence half-widths keyed by metric name
    /// ("throughput", "meanResponse", "util.<pool>"); empty when exact.
    pub ci_half_width: BTreeMap<String, f64>,
}
