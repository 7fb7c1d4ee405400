//! Prompt rendering, backend dispatch and response validation.
//!
//! Three backends ship with the crate: [`RemoteBackend`] talks to an
//! OpenAI-style chat-completion endpoint, [`ScriptedBackend`] replays fixture
//! files, and [`HeuristicBackend`] synthesizes schema-valid answers from the
//! structured context attached to each request, so a full search can run
//! with no model at all.

mod backend;
pub mod blocks;
mod heuristic;
pub mod parse;
pub mod prompts;

pub use backend::{RemoteBackend, RemoteConfig, ScriptedBackend, API_KEY_ENV};
pub use heuristic::HeuristicBackend;
pub use parse::{
    check_schema, extract_first_json_object, mutation_range_check, validate_add, validate_attribute,
    validate_cold_start, validate_diagnose, validate_merge, validate_propose, ProposeExpectation,
    ProposedChild, RangeClass, SlotOutcome, SlotSpec,
};
pub use prompts::{render_prompt, render_with_preamble, Substitutions, TemplateId, TransferContext};

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Propose,
    Attribute,
    Add,
    Diagnose,
    Merge,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Propose => "propose",
            OpKind::Attribute => "attribute",
            OpKind::Add => "add",
            OpKind::Diagnose => "diagnose",
            OpKind::Merge => "merge",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("template placeholder `{{{0}}}` has no value")]
    MissingPlaceholder(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out after {0:.1}s")]
    Timeout(f64),
    #[error("unparseable response: {0}")]
    ParseFailure(String),
}

/// Failure reported by a single backend call.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: connection reset, 5xx, and the like.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timed out after {0:.1}s")]
    Timeout(f64),
    /// Retrying cannot help: missing fixture, bad credentials.
    #[error("{0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub op_kind: OpKind,
    pub template: TemplateId,
    pub rendered_text: String,
    pub expected_schema: String,
    pub generation: u64,
    /// Call index among requests with the same op kind in this generation.
    pub ordinal: u64,
    pub metadata: Substitutions,
    /// Structured view of the prompt's inputs. Only the heuristic backend
    /// reads it; remote and scripted backends see the text alone.
    #[serde(default)]
    pub context: Value,
}

impl PromptRequest {
    pub fn with_ordinal(mut self, ordinal: u64) -> Self {
        self.ordinal = ordinal;
        self
    }

    pub fn with_context<T: Serialize>(mut self, context: &T) -> Self {
        self.context = serde_json::to_value(context).expect("context serializes");
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub raw_text: String,
    /// First JSON object found in the text, or the reason none was found.
    pub parsed: Result<Value, String>,
    /// The parsed object has the top-level shape of the expected schema.
    pub valid_schema: bool,
}

impl BackendResponse {
    pub fn from_text(template: TemplateId, raw_text: String) -> Self {
        let parsed = extract_first_json_object(&raw_text).ok_or_else(|| "no JSON object in response".to_string());
        let valid_schema = parsed.as_ref().is_ok_and(|v| check_schema(template, v).is_ok());
        BackendResponse { raw_text, parsed, valid_schema }
    }

    pub fn value(&self) -> Option<&Value> {
        self.parsed.as_ref().ok()
    }
}

pub trait ProposalBackend: Send + Sync {
    fn name(&self) -> String;

    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError>;

    /// Extra attempts after a transport failure.
    fn max_retries(&self) -> usize {
        1
    }
}

/// Sends `request` to `backend`, retrying transport failures.
pub fn dispatch(request: &PromptRequest, backend: &dyn ProposalBackend) -> Result<BackendResponse, LlmError> {
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(text) => return Ok(BackendResponse::from_text(request.template, text)),
            Err(BackendError::Unavailable(m)) => return Err(LlmError::BackendUnavailable(m)),
            Err(e) if attempt < backend.max_retries() => {
                log::warn!("{} {} call failed ({e}); retrying", backend.name(), request.op_kind.name());
                attempt += 1;
            }
            Err(BackendError::Timeout(s)) => return Err(LlmError::Timeout(s)),
            Err(BackendError::Transport(m)) => return Err(LlmError::BackendUnavailable(m)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub generation: u64,
    pub op_kind: OpKind,
    pub template: TemplateId,
    pub ordinal: u64,
    pub backend: String,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Append-only JSONL log of every prompt and raw response.
#[derive(Default)]
pub struct PromptAudit {
    file: Option<Mutex<File>>,
}

impl PromptAudit {
    pub fn disabled() -> Self {
        PromptAudit { file: None }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(PromptAudit { file: Some(Mutex::new(file)) })
    }

    pub fn record(&self, request: &PromptRequest, backend: &str, outcome: &Result<BackendResponse, LlmError>) {
        let Some(file) = &self.file else { return };
        let rec = AuditRecord {
            generation: request.generation,
            op_kind: request.op_kind,
            template: request.template,
            ordinal: request.ordinal,
            backend: backend.to_string(),
            prompt: request.rendered_text.clone(),
            response: outcome.as_ref().ok().map(|r| r.raw_text.clone()),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        let line = serde_json::to_string(&rec).expect("audit record serializes");
        let mut f = file.lock().unwrap();
        if let Err(e) = writeln!(f, "{line}") {
            log::error!("prompt audit write failed: {e}");
        }
    }
}

/// [`dispatch`] plus an audit record.
pub fn dispatch_logged(
    request: &PromptRequest,
    backend: &dyn ProposalBackend,
    audit: &PromptAudit,
) -> Result<BackendResponse, LlmError> {
    let out = dispatch(request, backend);
    audit.record(request, &backend.name(), &out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
        error: BackendError,
    }

    impl ProposalBackend for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }
        fn complete(&self, _: &PromptRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(r#"Sure! {"clusters": []} hope that helps"#.into())
            }
        }
    }

    fn merge_request() -> PromptRequest {
        let subs = Substitutions::new().text("skills_full_content", "(none)");
        render_prompt(TemplateId::Merge, &subs, 3).unwrap()
    }

    #[test]
    fn one_retry_then_unavailable() {
        let ok = Flaky { failures: 1, calls: AtomicUsize::new(0), error: BackendError::Transport("reset".into()) };
        let r = dispatch(&merge_request(), &ok).unwrap();
        assert!(r.valid_schema);
        assert_eq!(ok.calls.load(Ordering::SeqCst), 2);

        let down = Flaky { failures: 2, calls: AtomicUsize::new(0), error: BackendError::Transport("reset".into()) };
        assert!(matches!(dispatch(&merge_request(), &down), Err(LlmError::BackendUnavailable(_))));
        assert_eq!(down.calls.load(Ordering::SeqCst), 2);

        let slow = Flaky { failures: 2, calls: AtomicUsize::new(0), error: BackendError::Timeout(5.0) };
        assert_eq!(dispatch(&merge_request(), &slow), Err(LlmError::Timeout(5.0)));
    }

    #[test]
    fn audit_log_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.log.jsonl");
        let audit = PromptAudit::open(&path).unwrap();
        let b = Flaky { failures: 0, calls: AtomicUsize::new(0), error: BackendError::Timeout(0.0) };
        dispatch_logged(&merge_request(), &b, &audit).unwrap();
        dispatch_logged(&merge_request(), &b, &audit).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let recs: Vec<AuditRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].op_kind, OpKind::Merge);
        assert!(recs[0].prompt.contains("obvious duplicate L1 skill identities"));
    }
}
