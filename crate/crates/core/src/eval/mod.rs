//! Fitness evaluation: the built-in surrogate and the external evaluator
//! protocol, behind one [`Evaluator`] trait.
//!
//! Every issued request costs one unit of the morphology-evaluation budget,
//! whether it succeeds or not. Invalid bodies are rejected before anything
//! is issued and therefore cost nothing.

mod external;
mod surrogate;

pub use external::{
    external_evaluate, serve_protocol, Endpoint, ExternalEvaluator, Handshake, WireRequest,
    WireResponse, PROTOCOL_NAME, PROTOCOL_VERSION,
};
pub use surrogate::{score, surrogate_fitness, MotifFeatures, ProfileWeights, TaskProfile};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxel::{is_valid, Body};

/// Controller training steps requested from external evaluators.
pub const DEFAULT_BUDGET_STEPS: u64 = 512_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("body is not a valid robot: {0}")]
    InvalidBody(String),
    #[error("evaluator unavailable: {0}")]
    EvaluatorUnavailable(String),
    #[error("evaluation timed out after {0:.1}s")]
    Timeout(f64),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub request_id: String,
    pub body: Body,
    pub task: String,
    pub scale: usize,
    pub controller_seed: u64,
    pub budget_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Surrogate,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub request_id: String,
    pub fitness: Option<f64>,
    pub wall_time: f64,
    pub evaluator: EvaluatorKind,
    pub error: Option<String>,
}

impl EvalResult {
    pub fn success(request_id: &str, fitness: f64, wall_time: f64, evaluator: EvaluatorKind) -> Self {
        EvalResult { request_id: request_id.to_string(), fitness: Some(fitness), wall_time, evaluator, error: None }
    }

    pub fn failure(request_id: &str, message: String, wall_time: f64, evaluator: EvaluatorKind) -> Self {
        EvalResult { request_id: request_id.to_string(), fitness: None, wall_time, evaluator, error: Some(message) }
    }
}

pub trait Evaluator: Send + Sync {
    fn kind(&self) -> EvaluatorKind;

    /// Fails when no request could currently be served.
    fn ensure_available(&self) -> Result<(), EvalError> {
        Ok(())
    }

    fn evaluate(&self, request: &EvalRequest) -> EvalResult;

    /// Evaluates many requests, returning results in request order.
    fn evaluate_many(&self, requests: &[EvalRequest], parallelism: usize) -> Vec<EvalResult> {
        fan_out(requests, parallelism, |r| self.evaluate(r))
    }
}

/// Runs `f` over `items` on up to `parallelism` scoped threads and restores
/// input order in the output.
pub fn fan_out<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

pub fn evaluate_batch(
    requests: &[EvalRequest],
    evaluator: &dyn Evaluator,
    parallelism: usize,
) -> Result<Vec<EvalResult>, EvalError> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = requests.iter().find(|r| !is_valid(&r.body)) {
        return Err(EvalError::InvalidBody(bad.request_id.clone()));
    }
    evaluator.ensure_available()?;
    Ok(evaluator.evaluate_many(requests, parallelism))
}

/// Motif-scoring evaluator. The profile is taken from the request's task
/// unless pinned.
#[derive(Debug, Clone, Default)]
pub struct SurrogateEvaluator {
    pub profile: Option<TaskProfile>,
}

impl SurrogateEvaluator {
    pub fn new(profile: Option<TaskProfile>) -> Self {
        SurrogateEvaluator { profile }
    }
}

impl Evaluator for SurrogateEvaluator {
    fn kind(&self) -> EvaluatorKind {
        EvaluatorKind::Surrogate
    }

    fn evaluate(&self, request: &EvalRequest) -> EvalResult {
        let start = Instant::now();
        let profile = self.profile.unwrap_or_else(|| TaskProfile::for_task(&request.task));
        match surrogate_fitness(&request.body, profile) {
            Ok(f) => EvalResult::success(&request.request_id, f, start.elapsed().as_secs_f64(), self.kind()),
            Err(e) => EvalResult::failure(&request.request_id, e.to_string(), start.elapsed().as_secs_f64(), self.kind()),
        }
    }
}

/// EvoGym env id for a task at a grid scale (`Walker-v0`, `Walker-v0-10x10`).
pub fn env_id(task: &str, scale: usize) -> String {
    if task.contains("-v") {
        return task.to_string();
    }
    if scale == 5 {
        format!("{task}-v0")
    } else {
        format!("{task}-v0-{scale}x{scale}")
    }
}
