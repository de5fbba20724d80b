//! Architecture invariants checked over finished traces.
//!
//! Each rule has a stable id so fixtures and tests can assert exactly
//! which rule fired. Rules only flag what the trace itself evidences:
//! a trace that starts from a prepared world (say, registration without
//! the preceding attachment messages) is not a violation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{FunctionRole, SessionId, UserId, Variant};

use super::{Message, MessageClass, MessageKind, Payload, Trace};

/// One rule violation, anchored at the offending message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub rule: String,
    pub seq: u64,
    pub detail: String,
}

fn push(v: &mut Vec<Violation>, rule: &str, seq: u64, detail: String) {
    v.push(Violation {
        rule: rule.to_string(),
        seq,
        detail,
    });
}

fn is_eu(msg: &Message) -> Option<UserId> {
    for node in [msg.src, msg.dst] {
        if node.role == FunctionRole::EndUser {
            return Some(UserId(u64::from(node.index)));
        }
    }
    None
}

/// Check every invariant against a trace; empty result means clean.
pub fn check_trace_invariants(trace: &Trace) -> Vec<Violation> {
    let mut v = Vec::new();
    check_seq(trace, &mut v);
    check_setup(trace, &mut v);
    match trace.variant {
        Variant::Ngn => check_ngn_interfaces(trace, &mut v),
        Variant::Engn => {
            check_engn_interfaces(trace, &mut v);
            check_session_riding(trace, &mut v);
            check_mobility_order(trace, &mut v);
            check_binding_epochs(trace, &mut v);
            check_handover_teardown(trace, &mut v);
        }
    }
    v.sort_by(|a, b| (a.seq, &a.rule).cmp(&(b.seq, &b.rule)));
    v
}

/// SEQ-1: sequence numbers count 1,2,3,... and logical time never runs
/// backwards.
fn check_seq(trace: &Trace, v: &mut Vec<Violation>) {
    let mut last_lt = 0u64;
    for (i, msg) in trace.messages.iter().enumerate() {
        let want = (i + 1) as u64;
        if msg.seq != want {
            push(
                v,
                "SEQ-1",
                msg.seq,
                format!("expected seq {want}, found {}", msg.seq),
            );
        }
        if msg.logical_time < last_lt {
            push(
                v,
                "SEQ-1",
                msg.seq,
                format!(
                    "logical time went backwards: {} after {last_lt}",
                    msg.logical_time
                ),
            );
        }
        last_lt = last_lt.max(msg.logical_time);
    }
}

/// SETUP-1: a setup response to a user needs an earlier unanswered setup
/// request from that user.
fn check_setup(trace: &Trace, v: &mut Vec<Violation>) {
    let mut requested: BTreeMap<UserId, u64> = BTreeMap::new();
    let mut answered: BTreeMap<UserId, u64> = BTreeMap::new();
    for msg in &trace.messages {
        match msg.kind {
            MessageKind::SetupRequest if msg.src.role == FunctionRole::EndUser => {
                *requested
                    .entry(UserId(u64::from(msg.src.index)))
                    .or_insert(0) += 1;
            }
            MessageKind::SetupResponse if msg.dst.role == FunctionRole::EndUser => {
                let user = UserId(u64::from(msg.dst.index));
                let seen = answered.entry(user).or_insert(0);
                *seen += 1;
                if *seen > requested.get(&user).copied().unwrap_or(0) {
                    push(
                        v,
                        "SETUP-1",
                        msg.seq,
                        format!("setup response to {user} without a matching request"),
                    );
                }
            }
            _ => {}
        }
    }
}

/// NGN-1: in the existing NGN all end-user signaling terminates at the
/// transport control function (reached through TF relays).
fn check_ngn_interfaces(trace: &Trace, v: &mut Vec<Violation>) {
    for msg in &trace.messages {
        if msg.src.role == FunctionRole::EndUser && msg.dst.role != FunctionRole::TransportControl {
            push(
                v,
                "NGN-1",
                msg.seq,
                format!("end-user signaling addressed to {}", msg.dst),
            );
        }
        if msg.dst.role == FunctionRole::EndUser && msg.src.role != FunctionRole::TransportControl {
            push(
                v,
                "NGN-1",
                msg.seq,
                format!("end-user signaling originated by {}", msg.src),
            );
        }
    }
}

/// ENGN-1: the evolved architecture has no TCF-EU interface. ENGN-2: the
/// TCF-TF interface carries resource control only.
fn check_engn_interfaces(trace: &Trace, v: &mut Vec<Violation>) {
    for msg in &trace.messages {
        let roles = (msg.src.role, msg.dst.role);
        let tcf_eu = matches!(
            roles,
            (FunctionRole::TransportControl, FunctionRole::EndUser)
                | (FunctionRole::EndUser, FunctionRole::TransportControl)
        );
        if tcf_eu {
            push(
                v,
                "ENGN-1",
                msg.seq,
                format!(
                    "{} exchanged between transport control and end user",
                    msg.kind_name()
                ),
            );
        }
        let tcf_tf = matches!(
            roles,
            (
                FunctionRole::TransportControl,
                FunctionRole::TransportFunction
            ) | (
                FunctionRole::TransportFunction,
                FunctionRole::TransportControl
            )
        );
        if tcf_tf && msg.kind.class() != MessageClass::ResourceControl {
            push(
                v,
                "ENGN-2",
                msg.seq,
                format!(
                    "{} on the transport control/transport interface",
                    msg.kind_name()
                ),
            );
        }
    }
}

/// ENGN-3: once a user holds a session (first setup response), end-user
/// signaling for that user rides a session that the trace has not
/// released yet. Sessions never seen being released are taken as live.
fn check_session_riding(trace: &Trace, v: &mut Vec<Violation>) {
    let mut released: BTreeSet<SessionId> = BTreeSet::new();
    let mut holds_session: BTreeSet<UserId> = BTreeSet::new();
    for msg in &trace.messages {
        if msg.kind.class() == MessageClass::EndUserSignaling {
            if let Some(user) = is_eu(msg) {
                if holds_session.contains(&user) {
                    match msg.session {
                        None => push(
                            v,
                            "ENGN-3",
                            msg.seq,
                            format!("{} for {user} rides no session", msg.kind_name()),
                        ),
                        Some(s) if released.contains(&s) => push(
                            v,
                            "ENGN-3",
                            msg.seq,
                            format!("{} for {user} rides released {s}", msg.kind_name()),
                        ),
                        Some(_) => {}
                    }
                }
            }
        }
        if msg.kind == MessageKind::SetupResponse && msg.dst.role == FunctionRole::EndUser {
            holds_session.insert(UserId(u64::from(msg.dst.index)));
        }
        if msg.kind == MessageKind::ResourceReleaseCommand {
            if let Some(s) = msg.session {
                released.insert(s);
            }
        }
    }
}

/// MOB-1: mobility registration requires successful authentication. Only
/// ordering the trace itself shows is judged: a register after a failed
/// authentication, or before an authentication that only succeeds later.
fn check_mobility_order(trace: &Trace, v: &mut Vec<Violation>) {
    for (i, msg) in trace.messages.iter().enumerate() {
        if msg.kind != MessageKind::MobilityRegister {
            continue;
        }
        let Some(user) = msg.user() else { continue };
        let auth_of = |m: &Message| match (&m.kind, &m.payload) {
            (MessageKind::AuthResult, Payload::AuthOutcome { user: u, success }) if *u == user => {
                Some(*success)
            }
            _ => None,
        };
        let before = trace.messages[..i].iter().rev().find_map(auth_of);
        match before {
            Some(false) => push(
                v,
                "MOB-1",
                msg.seq,
                format!("{user} registered for mobility after failed authentication"),
            ),
            Some(true) => {}
            None => {
                if trace.messages[i..].iter().any(|m| auth_of(m) == Some(true)) {
                    push(
                        v,
                        "MOB-1",
                        msg.seq,
                        format!("{user} registered for mobility before authentication"),
                    );
                }
            }
        }
    }
}

/// MOB-2: per user, location binding acknowledgement epochs step by
/// exactly one; the first epoch a trace shows is unconstrained.
fn check_binding_epochs(trace: &Trace, v: &mut Vec<Violation>) {
    let mut last: BTreeMap<UserId, u64> = BTreeMap::new();
    for msg in &trace.messages {
        let (MessageKind::LocationBindingAck, Payload::Binding { user, epoch, .. }) =
            (&msg.kind, &msg.payload)
        else {
            continue;
        };
        if let Some(prev) = last.insert(*user, *epoch) {
            if *epoch != prev + 1 {
                push(
                    v,
                    "MOB-2",
                    msg.seq,
                    format!("binding epoch for {user} moved {prev} -> {epoch}"),
                );
            }
        }
    }
}

/// MOB-3: a completed handover releases the old path first (transport
/// control commands the transport function before completion is
/// announced), the old session stays released, and the new session is
/// still live at completion time. The new session may be torn down
/// later, when it serves as the old path of a subsequent handover.
fn check_handover_teardown(trace: &Trace, v: &mut Vec<Violation>) {
    for (i, msg) in trace.messages.iter().enumerate() {
        let (MessageKind::HandoverComplete, Payload::Complete { user, session }) =
            (&msg.kind, &msg.payload)
        else {
            continue;
        };
        // The matching request names the session being replaced.
        let request = trace.messages[..i]
            .iter()
            .rev()
            .find(|m| m.kind == MessageKind::HandoverRequest && m.user() == Some(*user));
        let Some(request) = request else { continue };
        let Some(old) = request.session else { continue };
        let torn_down = trace.messages[..i].iter().any(|m| {
            m.seq > request.seq
                && m.kind == MessageKind::ResourceReleaseCommand
                && m.src.role == FunctionRole::TransportControl
                && m.dst.role == FunctionRole::TransportFunction
                && m.session == Some(old)
        });
        if !torn_down {
            push(
                v,
                "MOB-3",
                msg.seq,
                format!("handover for {user} completed before {old} was torn down"),
            );
        }
        if let Some(rec) = trace.final_state.sessions.get(&old) {
            if rec.state != crate::model::ResourceState::Released {
                push(
                    v,
                    "MOB-3",
                    msg.seq,
                    format!("old {old} still {:?} after handover", rec.state),
                );
            }
        }
        let new_torn_down = trace.messages[..=i].iter().any(|m| {
            m.kind == MessageKind::ResourceReleaseCommand
                && m.src.role == FunctionRole::TransportControl
                && m.dst.role == FunctionRole::TransportFunction
                && m.session == Some(*session)
        });
        if new_torn_down {
            push(
                v,
                "MOB-3",
                msg.seq,
                format!("new {session} was torn down before handover completion"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, FaultSpec, MobilityMode, ModelError, UserFixture};
    use crate::protocol::flows::{apply_faults, ScenarioRun};
    use crate::testutil::{fixture, raw_fixture};

    fn renumber(trace: &mut Trace) {
        for (i, msg) in trace.messages.iter_mut().enumerate() {
            msg.seq = (i + 1) as u64;
        }
    }

    fn rules(violations: &[Violation]) -> Vec<&str> {
        violations.iter().map(|v| v.rule.as_str()).collect()
    }

    fn attach_trace() -> Trace {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.trace()
    }

    fn faulted_attach(fault: FaultSpec) -> Trace {
        let mut raw = raw_fixture("default-engn.json");
        raw.faults = vec![fault];
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let mut trace = run.trace();
        apply_faults(&mut trace, &scenario).unwrap();
        trace
    }

    #[test]
    fn canonical_flows_are_clean() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.coordination(UserId(0)).unwrap();
        run.external_session(UserId(0)).unwrap();
        assert!(check_trace_invariants(&run.trace()).is_empty());
    }

    #[test]
    fn tampered_sequence_numbers_fire_seq_1() {
        let mut trace = attach_trace();
        trace.messages[3].seq = 99;
        let v = check_trace_invariants(&trace);
        assert!(rules(&v).contains(&"SEQ-1"), "{v:?}");
    }

    #[test]
    fn backwards_logical_time_fires_seq_1() {
        let mut trace = attach_trace();
        let n = trace.messages.len();
        trace.messages[n - 1].logical_time = 0;
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["SEQ-1"]);
    }

    #[test]
    fn unsolicited_setup_response_fires_setup_1() {
        let trace = faulted_attach(FaultSpec {
            after_seq: 14,
            kind: MessageKind::SetupResponse,
            src: "nassf:0".to_string(),
            dst: "eu:0".to_string(),
            session: Some(1),
            payload: None,
        });
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["SETUP-1"]);
    }

    #[test]
    fn transport_control_signaling_a_user_fires_engn_1() {
        let trace = faulted_attach(FaultSpec {
            after_seq: 9,
            kind: MessageKind::AuthChallenge,
            src: "tcf:0".to_string(),
            dst: "eu:0".to_string(),
            session: Some(1),
            payload: None,
        });
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["ENGN-1"]);
    }

    #[test]
    fn coordination_on_the_resource_interface_fires_engn_2() {
        let trace = faulted_attach(FaultSpec {
            after_seq: 4,
            kind: MessageKind::GenericSignaling,
            src: "tcf:0".to_string(),
            dst: "tf:0".to_string(),
            session: None,
            payload: None,
        });
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["ENGN-2"]);
    }

    #[test]
    fn sessionless_user_signaling_fires_engn_3() {
        let trace = faulted_attach(FaultSpec {
            after_seq: 13,
            kind: MessageKind::NetworkConfigInfo,
            src: "nassf:0".to_string(),
            dst: "eu:0".to_string(),
            session: None,
            payload: None,
        });
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["ENGN-3"]);
    }

    #[test]
    fn signaling_on_a_released_session_fires_engn_3() {
        // Rejected credentials release session 1; a later message riding
        // it is a violation.
        let mut bad = UserFixture::new(0, crate::model::AccessPointId(0));
        bad.credentials_valid = false;
        let mut raw = raw_fixture("default-engn.json");
        raw.users = vec![bad];
        raw.faults = vec![FaultSpec {
            after_seq: 14,
            kind: MessageKind::NetworkConfigInfo,
            src: "nassf:0".to_string(),
            dst: "eu:0".to_string(),
            session: Some(1),
            payload: None,
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let mut trace = run.trace();
        apply_faults(&mut trace, &scenario).unwrap();
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["ENGN-3"]);
        assert!(v[0].detail.contains("released"));
    }

    #[test]
    fn register_before_authentication_fires_mob_1() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::NetworkBased)
            .unwrap();
        let mut trace = run.trace();
        // Move the register message ahead of the authentication result.
        let reg = trace
            .messages
            .iter()
            .position(|m| m.kind == MessageKind::MobilityRegister)
            .unwrap();
        let msg = trace.messages.remove(reg);
        trace.messages.insert(4, msg);
        renumber(&mut trace);
        let v = check_trace_invariants(&trace);
        assert!(rules(&v).contains(&"MOB-1"), "{v:?}");
    }

    #[test]
    fn register_after_failed_authentication_fires_mob_1() {
        let mut bad = UserFixture::new(0, crate::model::AccessPointId(0));
        bad.credentials_valid = false;
        let mut raw = raw_fixture("default-engn.json");
        raw.users = vec![bad];
        raw.faults = vec![FaultSpec {
            after_seq: 14,
            kind: MessageKind::MobilityRegister,
            src: "eu:0".to_string(),
            dst: "mssf:0".to_string(),
            session: None,
            payload: None,
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let mut trace = run.trace();
        apply_faults(&mut trace, &scenario).unwrap();
        let v = check_trace_invariants(&trace);
        assert!(rules(&v).contains(&"MOB-1"), "{v:?}");
    }

    #[test]
    fn duplicate_binding_epoch_fires_mob_2() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::NetworkBased)
            .unwrap();
        let mut trace = run.trace();
        // Repeat the last binding ack verbatim: the epoch does not step.
        let ack = trace
            .messages
            .iter()
            .rfind(|m| m.kind == MessageKind::LocationBindingAck)
            .unwrap()
            .clone();
        trace.messages.push(ack);
        renumber(&mut trace);
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["MOB-2"]);
    }

    #[test]
    fn completing_handover_without_teardown_fires_mob_3() {
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.coordination(UserId(0)).unwrap();
        let mut trace = run.trace();
        // Drop the transport-level release of the old path.
        trace.messages.retain(|m| {
            !(m.kind == MessageKind::ResourceReleaseCommand
                && m.src.role == FunctionRole::TransportControl
                && m.dst.role == FunctionRole::TransportFunction)
        });
        renumber(&mut trace);
        let v = check_trace_invariants(&trace);
        assert!(rules(&v).contains(&"MOB-3"), "{v:?}");
    }

    #[test]
    fn consecutive_handovers_are_clean() {
        // The first handover's new session legitimately becomes the
        // second one's old session and is torn down then; only a release
        // before its own completion is a violation.
        let scenario = fixture("default-engn.json");
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        run.mobility_register(UserId(0), MobilityMode::NetworkBased)
            .unwrap();
        run.handover_network(UserId(0), None).unwrap();
        run.handover_network(UserId(0), None).unwrap();
        let v = check_trace_invariants(&run.trace());
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn ngn_user_signaling_must_terminate_at_transport_control() {
        let mut raw = raw_fixture("default-ngn.json");
        raw.faults = vec![FaultSpec {
            after_seq: 9,
            kind: MessageKind::GenericSignaling,
            src: "eu:0".to_string(),
            dst: "tf:0".to_string(),
            session: None,
            payload: None,
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let mut run = ScenarioRun::new(&scenario);
        run.attach(UserId(0)).unwrap();
        let mut trace = run.trace();
        apply_faults(&mut trace, &scenario).unwrap();
        let v = check_trace_invariants(&trace);
        assert_eq!(rules(&v), vec!["NGN-1"]);
    }

    #[test]
    fn fault_payloads_must_parse() {
        let mut raw = raw_fixture("default-engn.json");
        raw.faults = vec![FaultSpec {
            after_seq: 1,
            kind: MessageKind::LocationBindingAck,
            src: "mssf:0".to_string(),
            dst: "eu:0".to_string(),
            session: None,
            payload: Some(serde_json::json!({"type": "nonsense"})),
        }];
        let scenario = validate_scenario(&raw).unwrap();
        let mut trace = attach_trace();
        assert!(matches!(
            apply_faults(&mut trace, &scenario),
            Err(ModelError::InvalidFaults(_))
        ));
    }
}
