//! Control-plane protocol model: message vocabulary, per-role state
//! machines (`machines`), flow drivers over a synchronous FIFO pump
//! (`flows`), the mobility binding table (`binding`), and the trace
//! invariant checker (`invariants`).

pub mod binding;
pub mod flows;
pub mod invariants;
pub mod machines;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::model::{
    AccessPointId, EndUserRecord, Ip, MobilityMode, NodeId, Session, SessionId, TfId, UserId,
    Variant,
};

pub use binding::{BindingEntry, BindingTable};
pub use flows::{
    apply_faults, run_script, FlowError, FlowKind, FlowOutcome, ScenarioRun, ScriptStep, World,
};
pub use invariants::{check_trace_invariants, Violation};

/// Every distinct control-plane message kind exchanged by the built-in
/// services and the external-application session setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MessageKind {
    SetupRequest,
    SetupResponse,
    ResourceAllocRequest,
    ResourceAllocCommand,
    ResourceAllocConfirm,
    ResourceAllocResponse,
    ResourceReleaseCommand,
    AuthChallenge,
    AuthResponse,
    AuthResult,
    IpConfigAssign,
    NetworkConfigInfo,
    MobilityRegister,
    ProfileUpdate,
    LocationBindingUpdate,
    LocationBindingAck,
    CandidateLinkList,
    HandoverPolicyInfo,
    HandoverRequest,
    HandoverDecision,
    HandoverTrigger,
    HandoverComplete,
    GenericSignaling,
    DataPayload,
}

/// Interface classes the architecture rules are written against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MessageClass {
    /// Resource allocation commands; the only class allowed on the
    /// TCF-TF interface in the evolved NGN.
    ResourceControl,
    /// Signaling exchanged with end users.
    EndUserSignaling,
    /// Coordination between network functions.
    Coordination,
    /// Media/application payload.
    Data,
}

impl MessageKind {
    pub fn class(self) -> MessageClass {
        use MessageKind::*;
        match self {
            ResourceAllocCommand | ResourceAllocConfirm | ResourceReleaseCommand => {
                MessageClass::ResourceControl
            }
            ResourceAllocRequest
            | ResourceAllocResponse
            | HandoverRequest
            | HandoverDecision
            | ProfileUpdate
            | GenericSignaling => MessageClass::Coordination,
            DataPayload => MessageClass::Data,
            SetupRequest
            | SetupResponse
            | AuthChallenge
            | AuthResponse
            | AuthResult
            | IpConfigAssign
            | NetworkConfigInfo
            | MobilityRegister
            | LocationBindingUpdate
            | LocationBindingAck
            | CandidateLinkList
            | HandoverPolicyInfo
            | HandoverTrigger
            | HandoverComplete => MessageClass::EndUserSignaling,
        }
    }
}

/// Service a session was set up for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ServiceKind {
    Attachment,
    Mobility,
    External,
}

/// Message body. Internally tagged so trace files stay self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Payload {
    Empty,
    Setup {
        user: UserId,
        service: ServiceKind,
    },
    ResourceRequest {
        user: UserId,
        service: ServiceKind,
        qos_rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_ap: Option<AccessPointId>,
        /// Mobility mode, carried on registration requests so the MSSSuF
        /// knows whether to deliver handover policies to the terminal.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<MobilityMode>,
    },
    ResourceCommand {
        session: SessionId,
        path: Vec<TfId>,
        qos_rate: f64,
    },
    ResourceResponse {
        user: UserId,
        #[serde(skip_serializing_if = "Option::is_none")]
        session: Option<SessionId>,
        path: Vec<TfId>,
        success: bool,
    },
    SessionRef {
        session: SessionId,
    },
    Challenge {
        nonce: u64,
    },
    Credentials {
        user: UserId,
        valid: bool,
    },
    AuthOutcome {
        user: UserId,
        success: bool,
    },
    IpConfig {
        permanent_ip: Ip,
        temporary_ip: Ip,
        logical_id: u64,
    },
    NetworkInfo {
        dns: Ip,
    },
    MobilityReg {
        user: UserId,
        mode: MobilityMode,
    },
    Profile {
        user: UserId,
        #[serde(skip_serializing_if = "Option::is_none")]
        mode: Option<MobilityMode>,
        #[serde(skip_serializing_if = "Option::is_none")]
        logical_id: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        permanent_ip: Option<Ip>,
        #[serde(skip_serializing_if = "Option::is_none")]
        temporary_ip: Option<Ip>,
        #[serde(skip_serializing_if = "Option::is_none")]
        attachment_point: Option<AccessPointId>,
    },
    Binding {
        user: UserId,
        permanent_ip: Ip,
        temporary_ip: Ip,
        attachment_point: AccessPointId,
        epoch: u64,
    },
    Movement {
        user: UserId,
        new_ap: AccessPointId,
    },
    Candidates {
        user: UserId,
        candidates: Vec<AccessPointId>,
    },
    Policy {
        user: UserId,
        policy: String,
    },
    HandoverReq {
        user: UserId,
        #[serde(skip_serializing_if = "Option::is_none")]
        target: Option<AccessPointId>,
        mode: MobilityMode,
    },
    Decision {
        user: UserId,
        target: AccessPointId,
    },
    Trigger {
        user: UserId,
        target: AccessPointId,
    },
    Complete {
        user: UserId,
        session: SessionId,
    },
    Signal {
        tag: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        user: Option<UserId>,
    },
    Data {
        size: u32,
    },
}

impl Payload {
    /// End user this payload concerns, when it names one.
    pub fn user(&self) -> Option<UserId> {
        match self {
            Payload::Setup { user, .. }
            | Payload::ResourceRequest { user, .. }
            | Payload::ResourceResponse { user, .. }
            | Payload::Credentials { user, .. }
            | Payload::AuthOutcome { user, .. }
            | Payload::MobilityReg { user, .. }
            | Payload::Profile { user, .. }
            | Payload::Binding { user, .. }
            | Payload::Movement { user, .. }
            | Payload::Candidates { user, .. }
            | Payload::Policy { user, .. }
            | Payload::HandoverReq { user, .. }
            | Payload::Decision { user, .. }
            | Payload::Trigger { user, .. }
            | Payload::Complete { user, .. } => Some(*user),
            Payload::Signal { user, .. } => *user,
            _ => None,
        }
    }
}

/// One control-plane message as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Message {
    /// 1-based position in the trace; strictly increasing.
    pub seq: u64,
    /// Pump delivery step that caused this message; non-decreasing.
    pub logical_time: u64,
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    /// Transport functions traversed between src and dst, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub via: Vec<NodeId>,
    /// Session the message rides on, once one is allocated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionId>,
    pub payload: Payload,
}

impl Message {
    /// Message kind as written in trace files.
    pub fn kind_name(&self) -> String {
        format!("{:?}", self.kind)
    }

    /// End user the message concerns: payload user, else an EU endpoint.
    pub fn user(&self) -> Option<UserId> {
        self.payload.user().or_else(|| {
            for node in [self.src, self.dst] {
                if node.role == crate::model::FunctionRole::EndUser {
                    return Some(UserId(u64::from(node.index)));
                }
            }
            None
        })
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "#{} {:?} {} -> {}",
            self.seq, self.kind, self.src, self.dst
        )?;
        if !self.via.is_empty() {
            let tags: Vec<String> = self.via.iter().map(|v| v.to_string()).collect();
            write!(f, " via [{}]", tags.join(","))?;
        }
        if let Some(s) = self.session {
            write!(f, " ({s})")?;
        }
        Ok(())
    }
}

/// A message the pump refused to deliver: the receiving machine had no
/// transition for it. State is unchanged; the event is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnexpectedNote {
    pub seq: u64,
    pub node: NodeId,
    pub reason: String,
}

/// Final world state snapshot attached to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub struct WorldSnapshot {
    pub users: BTreeMap<UserId, EndUserRecord>,
    pub sessions: BTreeMap<SessionId, Session>,
    pub bindings: Vec<BindingEntry>,
}

/// Ordered message trace plus the final world state it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trace {
    pub variant: Variant,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unexpected: Vec<UnexpectedNote>,
    pub final_state: WorldSnapshot,
}

impl Trace {
    /// Write one message per line (JSONL). The trace file format is the
    /// message sequence; world state travels in the `Trace` value itself.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for msg in &self.messages {
            serde_json::to_writer(&mut w, msg)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Read a message sequence back from JSONL.
    pub fn read_jsonl<R: BufRead>(variant: Variant, r: R) -> io::Result<Trace> {
        let mut messages = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let msg: Message = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            messages.push(msg);
        }
        Ok(Trace {
            variant,
            messages,
            unexpected: Vec::new(),
            final_state: WorldSnapshot::default(),
        })
    }

    pub fn kinds(&self) -> Vec<MessageKind> {
        self.messages.iter().map(|m| m.kind).collect()
    }
}
