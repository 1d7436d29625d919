//! Live proctoring service.
//!
//! Clients speak newline-delimited JSON over TCP, one response line per
//! request line:
//!
//! ```text
//! -> {"kind":"connect","session_id":"s1","ip":"175.116.139.44"}
//! <- {"status":"ok","decision":{"session_id":"s1","set_id":"C","kind":"RandomAssignment"}}
//! -> {"kind":"submit","session_id":"s1","ip":"175.116.139.44","record":{...}}
//! <- {"status":"ok"}
//! -> {"kind":"heartbeat","session_id":"s9","ip":"10.0.0.1"}
//! <- {"status":"error","error":{"code":"OutOfOrder","message":"..."}}
//! ```
//!
//! `connect` runs the IP agent. A connect from an address that already holds
//! a session raises a `RepeatIp` alert. `submit` classifies the record; an
//! abnormal result raises `AbnormalBehavior` and reassigns the session's
//! question set. Any event whose address differs from the one the session
//! connected from raises `IpChange` and is handled like an abnormal result.
//!
//! All state lives behind one lock, so events are processed one at a time in
//! arrival order. Every decision is appended to the audit log and every alert
//! to the alert log; with an event log configured, accepted request lines are
//! recorded in processing order for later replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{Ipv4Addr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use examagent_core::encoding::{encode, BehaviorLabel, SpeedModel};
use examagent_core::ipagent::{DecisionKind, IpRegistry, SessionDecision, SessionId};
use examagent_core::models::{features_to_tensor, Network};
use examagent_core::records::{ExamRecord, ExamSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ClockKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Connect,
    Submit,
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub kind: EventKind,
    pub session_id: String,
    pub ip: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<ExamRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub session_id: String,
    pub set_id: String,
    pub kind: DecisionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    Malformed,
    BadIp,
    OutOfOrder,
    DuplicateSession,
    MissingRecord,
    BadRecord,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    fn ok(decision: Option<Decision>) -> Self {
        Self {
            status: Status::Ok,
            decision,
            error: None,
        }
    }

    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status: Status::Error,
            decision: None,
            error: Some(ErrorBody {
                code,
                message: message.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertCause {
    IpChange,
    RepeatIp,
    AbnormalBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub ts: u64,
    pub session_id: String,
    pub ip: Ipv4Addr,
    pub cause: AlertCause,
    /// Detector probability of the abnormal class; only for `AbnormalBehavior`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub action: Decision,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub ts: u64,
    pub ip: Ipv4Addr,
    pub session_id: String,
    pub kind: DecisionKind,
    pub set_id: String,
}

/// Everything one request produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub response: Response,
    pub alerts: Vec<Alert>,
    pub audit: Vec<AuditEntry>,
    /// The request was well formed and changed or inspected state; such
    /// lines belong in the event log.
    pub accepted: bool,
}

struct Session {
    id: SessionId,
    ip: Ipv4Addr,
}

/// Registry, detector and session table of one running exam.
pub struct Proctor {
    registry: IpRegistry,
    detector: Network<f32>,
    spec: ExamSpec,
    speed_model: SpeedModel,
    sessions: HashMap<String, Session>,
    rng: ChaCha8Rng,
    clock: ClockKind,
    tick: u64,
}

impl Proctor {
    pub fn new(
        detector: Network<f32>,
        spec: ExamSpec,
        speed_model: SpeedModel,
        seed: u64,
        clock: ClockKind,
    ) -> anyhow::Result<Self> {
        Ok(Self {
            registry: IpRegistry::for_exam(&spec)?,
            detector,
            spec,
            speed_model,
            sessions: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock,
            tick: 0,
        })
    }

    pub fn registry(&self) -> &IpRegistry {
        &self.registry
    }

    fn now(&mut self) -> u64 {
        self.tick += 1;
        match self.clock {
            ClockKind::Logical => self.tick,
            ClockKind::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        }
    }

    /// Handles one raw request line. Never panics on bad input.
    pub fn handle_line(&mut self, line: &str) -> Outcome {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => rejected(Response::error(ErrorCode::Malformed, e.to_string())),
        }
    }

    pub fn handle(&mut self, req: &Request) -> Outcome {
        let ip: Ipv4Addr = match req.ip.trim().parse() {
            Ok(ip) => ip,
            Err(_) => {
                return rejected(Response::error(
                    ErrorCode::BadIp,
                    format!("{:?} is not an IPv4 address", req.ip),
                ))
            }
        };
        match req.kind {
            EventKind::Connect => self.connect(&req.session_id, ip),
            EventKind::Heartbeat | EventKind::Submit => {
                let Some(session) = self.sessions.get(&req.session_id) else {
                    return rejected(Response::error(
                        ErrorCode::OutOfOrder,
                        format!("session {:?} has not connected", req.session_id),
                    ));
                };
                let (sid, registered_ip) = (session.id, session.ip);
                if req.kind == EventKind::Submit && req.record.is_none() {
                    return rejected(Response::error(ErrorCode::MissingRecord, "submit requires a record"));
                }
                if let Some(record) = &req.record {
                    if let Err(e) = record.validate(&self.spec) {
                        return rejected(Response::error(ErrorCode::BadRecord, e.to_string()));
                    }
                }
                if ip != registered_ip {
                    return self.reassign(&req.session_id, sid, ip, AlertCause::IpChange, None);
                }
                match (req.kind, &req.record) {
                    (EventKind::Submit, Some(record)) => self.submit(&req.session_id, sid, ip, record),
                    _ => accepted(Response::ok(None), vec![], vec![]),
                }
            }
        }
    }

    fn connect(&mut self, session: &str, ip: Ipv4Addr) -> Outcome {
        if self.sessions.contains_key(session) {
            return rejected(Response::error(
                ErrorCode::DuplicateSession,
                format!("session {session:?} is already connected"),
            ));
        }
        let decision = self.registry.register(ip, &mut self.rng);
        self.sessions.insert(session.to_string(), Session { id: decision.session_id, ip });
        let ts = self.now();
        let view = view(session, &decision);
        let audit = vec![audit_entry(ts, ip, &view)];
        let alerts = if decision.kind == DecisionKind::SpecificAssignment {
            vec![Alert {
                ts,
                session_id: session.to_string(),
                ip,
                cause: AlertCause::RepeatIp,
                confidence: None,
                action: view.clone(),
            }]
        } else {
            vec![]
        };
        accepted(Response::ok(Some(view)), alerts, audit)
    }

    fn submit(&mut self, session: &str, sid: SessionId, ip: Ipv4Addr, record: &ExamRecord) -> Outcome {
        let features = encode(record, &self.spec, &self.speed_model);
        let verdict = self.detector.classify(&features_to_tensor(&[features]));
        let (label, confidence) = match verdict.as_deref() {
            Ok([first]) => *first,
            Ok(_) => return rejected(Response::error(ErrorCode::Internal, "detector returned no verdict")),
            Err(e) => return rejected(Response::error(ErrorCode::Internal, e.to_string())),
        };
        if label != BehaviorLabel::Abnormal {
            return accepted(Response::ok(None), vec![], vec![]);
        }
        self.reassign(session, sid, ip, AlertCause::AbnormalBehavior, Some(confidence))
    }

    fn reassign(
        &mut self,
        session: &str,
        sid: SessionId,
        ip: Ipv4Addr,
        cause: AlertCause,
        confidence: Option<f64>,
    ) -> Outcome {
        let decision = match self.registry.flag_abnormal(sid, &mut self.rng) {
            Ok(d) => d,
            Err(e) => return rejected(Response::error(ErrorCode::Internal, e.to_string())),
        };
        let ts = self.now();
        let view = view(session, &decision);
        let alert = Alert {
            ts,
            session_id: session.to_string(),
            ip,
            cause,
            confidence,
            action: view.clone(),
        };
        accepted(Response::ok(Some(view.clone())), vec![alert], vec![audit_entry(ts, ip, &view)])
    }
}

fn view(session: &str, d: &SessionDecision) -> Decision {
    Decision {
        session_id: session.to_string(),
        set_id: d.set_id.to_string(),
        kind: d.kind,
    }
}

fn audit_entry(ts: u64, ip: Ipv4Addr, d: &Decision) -> AuditEntry {
    AuditEntry {
        ts,
        ip,
        session_id: d.session_id.clone(),
        kind: d.kind,
        set_id: d.set_id.clone(),
    }
}

fn accepted(response: Response, alerts: Vec<Alert>, audit: Vec<AuditEntry>) -> Outcome {
    Outcome {
        response,
        alerts,
        audit,
        accepted: true,
    }
}

fn rejected(response: Response) -> Outcome {
    Outcome {
        response,
        alerts: vec![],
        audit: vec![],
        accepted: false,
    }
}

/// Append-only NDJSON outputs. Any of them may be absent.
#[derive(Default)]
pub struct Sinks {
    pub alerts: Option<Box<dyn Write + Send>>,
    pub audit: Option<Box<dyn Write + Send>>,
    pub events: Option<Box<dyn Write + Send>>,
}

pub fn append_file(path: &Path) -> io::Result<Box<dyn Write + Send>> {
    let file: File = OpenOptions::new().create(true).append(true).open(path)?;
    Ok(Box::new(BufWriter::new(file)))
}

fn write_json<T: Serialize>(sink: &mut Option<Box<dyn Write + Send>>, value: &T) -> io::Result<()> {
    if let Some(w) = sink {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

/// Proctor plus its logs, shared between connection threads.
pub struct Service {
    proctor: Proctor,
    sinks: Sinks,
}

impl Service {
    pub fn new(proctor: Proctor, sinks: Sinks) -> Self {
        Self { proctor, sinks }
    }

    pub fn proctor(&self) -> &Proctor {
        &self.proctor
    }

    /// Processes one line and records its effects; returns the response line.
    pub fn process(&mut self, line: &str) -> io::Result<String> {
        let outcome = self.proctor.handle_line(line);
        if outcome.accepted {
            if let Some(w) = &mut self.sinks.events {
                writeln!(w, "{}", line.trim())?;
                w.flush()?;
            }
        }
        for entry in &outcome.audit {
            write_json(&mut self.sinks.audit, entry)?;
        }
        for alert in &outcome.alerts {
            write_json(&mut self.sinks.alerts, alert)?;
        }
        Ok(serde_json::to_string(&outcome.response)?)
    }
}

fn lock(shared: &Mutex<Service>) -> MutexGuard<'_, Service> {
    // a panicking connection thread must not take the whole service down
    shared.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

pub fn serve_connection(stream: TcpStream, shared: &Mutex<Service>) -> io::Result<()> {
    let mut writer = BufWriter::new(stream.try_clone()?);
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = lock(shared).process(&line)?;
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per client.
pub fn run(listener: TcpListener, shared: Arc<Mutex<Service>>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let shared = Arc::clone(&shared);
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, &shared) {
                eprintln!("connection closed with error: {e}");
            }
        });
    }
    Ok(())
}

/// Feeds a recorded event log through `service`, returning every response.
pub fn replay<R: BufRead>(events: R, service: &mut Service) -> io::Result<Vec<String>> {
    let mut responses = Vec::new();
    for line in events.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            responses.push(service.process(&line)?);
        }
    }
    Ok(responses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use examagent_core::models::{Architecture, NetworkConfig};
    use examagent_core::records::{Answer, QUESTION_COUNT};

    fn proctor() -> Proctor {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::build(NetworkConfig::baseline(Architecture::Dnn, 2), &mut rng).unwrap();
        Proctor::new(net, ExamSpec::standard(), SpeedModel::default(), 1, ClockKind::Logical).unwrap()
    }

    fn req(kind: EventKind, session: &str, ip: &str) -> Request {
        Request {
            kind,
            session_id: session.into(),
            ip: ip.into(),
            record: None,
        }
    }

    #[test]
    fn connect_assigns_and_repeat_ip_alerts() {
        let mut p = proctor();
        let a = p.handle(&req(EventKind::Connect, "a", "211.243.246.3"));
        assert_eq!(a.response.decision.unwrap().kind, DecisionKind::RandomAssignment);
        assert!(a.alerts.is_empty());
        let b = p.handle(&req(EventKind::Connect, "b", "211.243.246.3"));
        assert_eq!(b.response.decision.unwrap().kind, DecisionKind::SpecificAssignment);
        assert_eq!(b.alerts[0].cause, AlertCause::RepeatIp);
        assert_eq!(p.handle(&req(EventKind::Connect, "b", "1.2.3.4")).response.error.unwrap().code, ErrorCode::DuplicateSession);
    }

    #[test]
    fn out_of_order_changes_nothing() {
        let mut p = proctor();
        let o = p.handle(&req(EventKind::Heartbeat, "ghost", "1.2.3.4"));
        assert_eq!(o.response.error.unwrap().code, ErrorCode::OutOfOrder);
        assert!(!o.accepted);
        assert!(p.registry().is_empty());
    }

    #[test]
    fn ip_change_reassigns() {
        let mut p = proctor();
        let first = p.handle(&req(EventKind::Connect, "a", "10.1.1.1")).response.decision.unwrap();
        let o = p.handle(&req(EventKind::Heartbeat, "a", "10.1.1.2"));
        let d = o.response.decision.unwrap();
        assert_eq!(d.kind, DecisionKind::Reassignment);
        assert_ne!(d.set_id, first.set_id);
        assert_eq!(o.alerts[0].cause, AlertCause::IpChange);
        assert!(p.registry().lookup("10.1.1.1".parse().unwrap()).unwrap().suspicious);
    }

    #[test]
    fn malformed_input_is_answered() {
        let mut p = proctor();
        for line in ["", "{", "[]", r#"{"kind":"dance","session_id":"a","ip":"1.1.1.1"}"#] {
            assert_eq!(p.handle_line(line).response.error.unwrap().code, ErrorCode::Malformed);
        }
        assert_eq!(p.handle(&req(EventKind::Connect, "a", "1.1.1")).response.error.unwrap().code, ErrorCode::BadIp);
        p.handle(&req(EventKind::Connect, "a", "1.1.1.1"));
        assert_eq!(p.handle(&req(EventKind::Submit, "a", "1.1.1.1")).response.error.unwrap().code, ErrorCode::MissingRecord);
        let mut bad = req(EventKind::Submit, "a", "1.1.1.1");
        bad.record = Some(ExamRecord {
            id: "2000001".into(),
            answers: [Answer::new(1, 0); QUESTION_COUNT],
            grade: 5,
            duration_minutes: 3,
            ip: "1.1.1.1".parse().unwrap(),
        });
        assert_eq!(p.handle(&bad).response.error.unwrap().code, ErrorCode::BadRecord);
    }

    #[test]
    fn wire_format() {
        let r = Response::ok(Some(Decision {
            session_id: "s1".into(),
            set_id: "C".into(),
            kind: DecisionKind::RandomAssignment,
        }));
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"status":"ok","decision":{"session_id":"s1","set_id":"C","kind":"RandomAssignment"}}"#
        );
        let q: Request = serde_json::from_str(r#"{"kind":"connect","session_id":"s1","ip":"175.116.139.44"}"#).unwrap();
        assert_eq!(q, req(EventKind::Connect, "s1", "175.116.139.44"));
    }
}
