//! Newline-delimited JSON evaluator protocol over a child process's stdio or
//! a TCP stream.
//!
//! ```text
//! <- {"protocol":"morphoskill-eval","version":1,"tasks":[...],"pipelining":false}
//! -> {"type":"eval","request_id":"...","task":"Walker-v0","scale":5,"body":[[...]],"controller_seed":1,"budget_steps":512000}
//! <- {"type":"result","request_id":"...","fitness":3.2}
//! <- {"type":"error","request_id":"...","message":"..."}
//! ```

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::voxel::Body;

use super::{EvalError, EvalRequest, EvalResult, Evaluator, EvaluatorKind};

pub const PROTOCOL_NAME: &str = "morphoskill-eval";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub pipelining: bool,
}

impl Handshake {
    pub fn new(tasks: Vec<String>, pipelining: bool) -> Self {
        Handshake { protocol: PROTOCOL_NAME.into(), version: PROTOCOL_VERSION, tasks, pipelining }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "eval")]
pub struct WireRequest {
    pub request_id: String,
    pub task: String,
    pub scale: usize,
    pub body: Body,
    pub controller_seed: u64,
    pub budget_steps: u64,
}

impl From<&EvalRequest> for WireRequest {
    fn from(r: &EvalRequest) -> Self {
        WireRequest {
            request_id: r.request_id.clone(),
            task: r.task.clone(),
            scale: r.scale,
            body: r.body.clone(),
            controller_seed: r.controller_seed,
            budget_steps: r.budget_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireResponse {
    Result { request_id: String, fitness: f64 },
    Error { request_id: String, message: String },
}

impl WireResponse {
    pub fn request_id(&self) -> &str {
        match self {
            WireResponse::Result { request_id, .. } | WireResponse::Error { request_id, .. } => request_id,
        }
    }
}

/// Where an external evaluator lives: `tcp:HOST:PORT` or `exec:PROGRAM ARGS...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Exec(Vec<String>),
}

impl Endpoint {
    pub fn parse(spec: &str) -> Option<Self> {
        if let Some(addr) = spec.strip_prefix("tcp:") {
            let addr = addr.trim_start_matches("//");
            return (!addr.is_empty()).then(|| Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = spec.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            return (!argv.is_empty()).then_some(Endpoint::Exec(argv));
        }
        None
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<String>,
    abandoned: HashSet<String>,
}

impl Connection {
    fn send(&mut self, req: &WireRequest) -> Result<(), EvalError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| EvalError::EvaluatorUnavailable(e.to_string()))
    }

    /// Next response not belonging to an abandoned request.
    fn receive(&mut self, deadline: Instant, waited: Duration) -> Result<WireResponse, EvalError> {
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(l) => l,
                Err(RecvTimeoutError::Timeout) => return Err(EvalError::Timeout(waited.as_secs_f64())),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(EvalError::EvaluatorUnavailable("evaluator closed the stream".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: WireResponse = serde_json::from_str(&line)
                .map_err(|e| EvalError::ProtocolViolation(format!("{e}: {line}")))?;
            if self.abandoned.remove(resp.request_id()) {
                continue;
            }
            return Ok(resp);
        }
    }
}

pub struct ExternalEvaluator {
    handshake: Handshake,
    timeout: Duration,
    conn: Mutex<Connection>,
    alive: Arc<AtomicBool>,
    child: Mutex<Option<Child>>,
}

impl ExternalEvaluator {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, EvalError> {
        let unavailable = |e: std::io::Error| EvalError::EvaluatorUnavailable(e.to_string());
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(unavailable)?;
                let reader = stream.try_clone().map_err(unavailable)?;
                Self::from_streams(reader, stream, timeout)
            }
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(unavailable)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let ev = Self::from_streams(stdout, stdin, timeout)?;
                *ev.child.lock().unwrap() = Some(child);
                Ok(ev)
            }
        }
    }

    /// Wraps an already-open stream pair and performs the handshake.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, EvalError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        let alive = Arc::new(AtomicBool::new(true));
        let flag = alive.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            flag.store(false, Ordering::SeqCst);
        });
        let first = match rx.recv_timeout(timeout) {
            Ok(l) => l,
            Err(_) => return Err(EvalError::EvaluatorUnavailable("no handshake received".into())),
        };
        let handshake: Handshake = serde_json::from_str(&first)
            .map_err(|e| EvalError::ProtocolViolation(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL_NAME || handshake.version != PROTOCOL_VERSION {
            return Err(EvalError::ProtocolViolation(format!(
                "unsupported protocol {} v{}",
                handshake.protocol, handshake.version
            )));
        }
        Ok(ExternalEvaluator {
            handshake,
            timeout,
            conn: Mutex::new(Connection { writer: Box::new(writer), lines: rx, abandoned: HashSet::new() }),
            alive,
            child: Mutex::new(None),
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn result_from(&self, request_id: &str, outcome: Result<f64, EvalError>, started: Instant) -> EvalResult {
        let wall = started.elapsed().as_secs_f64();
        match outcome {
            Ok(f) => EvalResult::success(request_id, f, wall, EvaluatorKind::External),
            Err(e) => EvalResult::failure(request_id, e.to_string(), wall, EvaluatorKind::External),
        }
    }
}

fn interpret(resp: WireResponse, expected: &str) -> Result<f64, EvalError> {
    match resp {
        WireResponse::Result { request_id, fitness } if request_id == expected => {
            if fitness.is_finite() {
                Ok(fitness)
            } else {
                Err(EvalError::ProtocolViolation(format!("non-finite fitness for {request_id}")))
            }
        }
        WireResponse::Error { request_id, message } if request_id == expected => {
            Err(EvalError::ProtocolViolation(format!("evaluator error: {message}")))
        }
        other => Err(EvalError::ProtocolViolation(format!(
            "response for `{}` while waiting for `{expected}`",
            other.request_id()
        ))),
    }
}

/// Sends one request and waits for its reply.
pub fn external_evaluate(request: &EvalRequest, evaluator: &ExternalEvaluator) -> Result<f64, EvalError> {
    let mut conn = evaluator.conn.lock().unwrap();
    conn.send(&WireRequest::from(request))?;
    let deadline = Instant::now() + evaluator.timeout;
    match conn.receive(deadline, evaluator.timeout) {
        Ok(resp) => interpret(resp, &request.request_id),
        Err(e @ EvalError::Timeout(_)) => {
            conn.abandoned.insert(request.request_id.clone());
            Err(e)
        }
        Err(e) => Err(e),
    }
}

impl Evaluator for ExternalEvaluator {
    fn kind(&self) -> EvaluatorKind {
        EvaluatorKind::External
    }

    fn ensure_available(&self) -> Result<(), EvalError> {
        if self.alive.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(EvalError::EvaluatorUnavailable("evaluator stream closed".into()))
        }
    }

    fn evaluate(&self, request: &EvalRequest) -> EvalResult {
        let start = Instant::now();
        self.result_from(&request.request_id, external_evaluate(request, self), start)
    }

    fn evaluate_many(&self, requests: &[EvalRequest], _parallelism: usize) -> Vec<EvalResult> {
        if !self.handshake.pipelining {
            return requests.iter().map(|r| self.evaluate(r)).collect();
        }
        let start = Instant::now();
        let mut conn = self.conn.lock().unwrap();
        let mut outcomes: HashMap<String, Result<f64, EvalError>> = HashMap::new();
        let mut pending: HashSet<String> = HashSet::new();
        for r in requests {
            match conn.send(&WireRequest::from(r)) {
                Ok(()) => {
                    pending.insert(r.request_id.clone());
                }
                Err(e) => {
                    outcomes.insert(r.request_id.clone(), Err(e));
                }
            }
        }
        let deadline = Instant::now() + self.timeout;
        while !pending.is_empty() {
            match conn.receive(deadline, self.timeout) {
                Ok(resp) => {
                    let id = resp.request_id().to_string();
                    if pending.remove(&id) {
                        outcomes.insert(id.clone(), interpret(resp, &id));
                    } else {
                        log::warn!("ignoring unexpected response for `{id}`");
                    }
                }
                Err(e) => {
                    let timed_out = matches!(e, EvalError::Timeout(_));
                    for id in pending.drain() {
                        if timed_out {
                            conn.abandoned.insert(id.clone());
                        }
                        outcomes.insert(id, Err(e.clone()));
                    }
                }
            }
        }
        drop(conn);
        requests
            .iter()
            .map(|r| {
                let outcome = outcomes.remove(&r.request_id).expect("every request has an outcome");
                self.result_from(&r.request_id, outcome, start)
            })
            .collect()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().unwrap().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Serves the evaluator side of the protocol until `reader` reaches EOF.
/// Malformed lines that still carry a request id get a per-request error;
/// anything else is stream corruption and ends the session.
pub fn serve_protocol<R, W, F>(reader: R, mut writer: W, handshake: &Handshake, mut handler: F) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&WireRequest) -> Result<f64, String>,
{
    let emit = |w: &mut W, resp: &WireResponse| -> std::io::Result<()> {
        writeln!(w, "{}", serde_json::to_string(resp).expect("response serializes"))?;
        w.flush()
    };
    writeln!(writer, "{}", serde_json::to_string(handshake).expect("handshake serializes"))?;
    writer.flush()?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<WireRequest>(&line) {
            Ok(req) => match handler(&req) {
                Ok(fitness) => WireResponse::Result { request_id: req.request_id, fitness },
                Err(message) => WireResponse::Error { request_id: req.request_id, message },
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(|x| x.as_str()).map(str::to_string));
                match id {
                    Some(request_id) => WireResponse::Error { request_id, message: format!("malformed request: {e}") },
                    None => {
                        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("corrupt stream: {e}")))
                    }
                }
            }
        };
        emit(&mut writer, &resp)?;
    }
    Ok(())
}
