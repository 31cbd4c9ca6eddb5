//! Sweep execution: model calls with retry, mock models, the record store
//! and the run manifest.
//!
//! The runner is the only concurrent part of the toolkit. Up to
//! `max_inflight` worker threads each build one instance, call the model
//! and hand the finished record to the calling thread, which is the single
//! writer of the store.

mod http;
mod manifest;
mod mock;
mod store;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use http::{chat_request_body, classify_http_response, thinking_fields, OpenAiCompatible, Provider};
pub use manifest::{file_sha256, JobSpec, RunManifest, Sweep, SweepInputs};
pub use mock::{FaultInjector, LossyMock, OracleMock};
pub use store::{read_records, write_records, RecordStore};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::levels::level_key;
use crate::prompt::RenderedPrompt;
use crate::score::RecordScore;
use crate::taskgen::{MathInstance, TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    ContextLengthError,
    TransportError,
    Refused,
}

/// Why a single model call failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    /// Network failure, timeout, rate limit or server error; worth retrying.
    Transient(String),
    /// Transport-level failure that retrying will not fix (bad key, bad URL).
    Fatal(String),
    /// The provider rejected the input as too long.
    ContextLength(String),
    /// The provider returned an error object or filtered the output.
    Refused(String),
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Transient(m) => write!(f, "transient: {m}"),
            CallError::Fatal(m) => write!(f, "fatal: {m}"),
            CallError::ContextLength(m) => write!(f, "context length: {m}"),
            CallError::Refused(m) => write!(f, "refused: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobTask {
    Lines(TaskInstance),
    Math(MathInstance),
}

/// One prompt to send, with the instance it was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub domain: Domain,
    pub prompt: RenderedPrompt,
    pub task: JobTask,
}

impl Job {
    pub fn doc_id(&self) -> &str {
        match &self.task {
            JobTask::Lines(i) => &i.doc_id,
            JobTask::Math(m) => &m.problem_id,
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match &self.task {
            JobTask::Lines(i) => i.task,
            JobTask::Math(_) => TaskKind::Math,
        }
    }

    pub fn wfr_level(&self) -> f64 {
        match &self.task {
            JobTask::Lines(i) => i.wfr_level,
            JobTask::Math(m) => m.wfr_level,
        }
    }

    pub fn frag_seed(&self) -> u64 {
        match &self.task {
            JobTask::Lines(i) => i.frag_seed,
            JobTask::Math(m) => m.frag_seed,
        }
    }

    fn record(&self, model: &str, target_seed: u64, completion: Completion) -> EvalRecord {
        let (truth_lines, gold, measured_wfr, target_seed) = match &self.task {
            JobTask::Lines(i) => (i.truth_lines.clone(), None, i.measured_wfr, i.target_seed),
            JobTask::Math(m) => (Vec::new(), Some(m.gold), m.measured_wfr, target_seed),
        };
        EvalRecord {
            doc_id: self.doc_id().to_owned(),
            domain: self.domain,
            task: self.task_kind(),
            wfr_level: self.wfr_level(),
            frag_seed: self.frag_seed(),
            target_seed,
            model: model.to_owned(),
            measured_wfr,
            raw_response: completion.raw_response,
            status: completion.status,
            latency_ms: completion.latency_ms,
            attempts: completion.attempts,
            error: completion.error,
            truth_lines,
            gold,
            score: None,
        }
    }
}

/// Identity of a record within a store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub model: String,
    pub doc_id: String,
    pub task: TaskKind,
    pub level: i64,
    pub frag_seed: u64,
    pub target_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub domain: Domain,
    pub task: TaskKind,
    pub wfr_level: f64,
    pub frag_seed: u64,
    pub target_seed: u64,
    pub model: String,
    pub measured_wfr: f64,
    pub raw_response: String,
    pub status: CallStatus,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub truth_lines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<RecordScore>,
}

impl EvalRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            model: self.model.clone(),
            doc_id: self.doc_id.clone(),
            task: self.task,
            level: level_key(self.wfr_level),
            frag_seed: self.frag_seed,
            target_seed: self.target_seed,
        }
    }
}

fn default_max_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_inflight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub endpoint: String,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub provider: Provider,
    #[serde(default)]
    pub thinking: bool,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl ModelConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint: String::new(),
            model_id: None,
            api_key_env: default_api_key_env(),
            provider: Provider::default(),
            thinking: false,
            max_retries: default_max_retries(),
            request_timeout_secs: default_timeout(),
            max_inflight: default_inflight(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inflight < 1 {
            return Err(Error::arg("max_inflight must be >= 1"));
        }
        Ok(())
    }

    /// Delay before retry `attempt` (0-based): base * 2^attempt, plus up to 25% jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let jitter = rand::thread_rng().gen_range(0.0..0.25);
        Duration::from_millis((base * (1.0 + jitter)) as u64)
    }
}

/// Something that answers prompts: an HTTP endpoint or a mock.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn respond(&self, job: &Job) -> std::result::Result<String, CallError>;

    /// Rejects sweeps this model cannot serve.
    fn check_levels(&self, _levels: &[f64]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub status: CallStatus,
    pub raw_response: String,
    pub attempts: u32,
    pub latency_ms: u64,
    pub error: Option<String>,
}

/// One logical call with retries. Transient failures are retried up to
/// `max_retries` times with exponential backoff; context-length rejections
/// and refusals return immediately.
pub fn complete(model: &dyn Model, job: &Job, config: &ModelConfig) -> Completion {
    let start = Instant::now();
    let mut attempts = 0;
    let (status, raw_response, error) = loop {
        attempts += 1;
        match model.respond(job) {
            Ok(text) => break (CallStatus::Ok, text, None),
            Err(CallError::ContextLength(m)) => break (CallStatus::ContextLengthError, String::new(), Some(m)),
            Err(CallError::Refused(m)) => break (CallStatus::Refused, String::new(), Some(m)),
            Err(CallError::Fatal(m)) => break (CallStatus::TransportError, String::new(), Some(m)),
            Err(CallError::Transient(m)) if attempts <= config.max_retries => {
                let delay = config.backoff(attempts - 1);
                log::warn!("{} on {}: {m}; retry {attempts} in {delay:?}", model.name(), job.doc_id());
                std::thread::sleep(delay);
            }
            Err(CallError::Transient(m)) => break (CallStatus::TransportError, String::new(), Some(m)),
        }
    };
    if attempts > 1 {
        log::info!("{} on {}: {:?} after {attempts} attempts", model.name(), job.doc_id(), status);
    }
    Completion {
        status,
        raw_response,
        attempts,
        latency_ms: start.elapsed().as_millis() as u64,
        error,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub planned: usize,
    pub skipped: usize,
    pub calls: usize,
    pub ok: usize,
    pub context_length_error: usize,
    pub transport_error: usize,
    pub refused: usize,
    pub build_errors: usize,
}

/// Runs every job of `sweep` not already in `store`. Call failures become
/// records with a non-ok status; they never stop the sweep.
pub fn run_sweep(sweep: &Sweep, model: &dyn Model, config: &ModelConfig, store: &mut RecordStore) -> Result<SweepSummary> {
    config.validate()?;
    model.check_levels(&sweep.manifest.wfr_levels)?;
    let specs = sweep.job_specs();
    let mut summary = SweepSummary { planned: specs.len(), ..Default::default() };
    let pending: Vec<&JobSpec> = specs
        .iter()
        .filter(|s| !store.contains(&sweep.key(s, model.name())))
        .collect();
    summary.skipped = specs.len() - pending.len();
    if pending.is_empty() {
        return Ok(summary);
    }

    let next = AtomicUsize::new(0);
    let workers = config.max_inflight.min(pending.len());
    let (tx, rx) = mpsc::channel::<Result<EvalRecord>>();
    let mut write_error = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = pending.get(i) else { break };
                let outcome = sweep.build_job(spec).map(|job| {
                    let completion = complete(model, &job, config);
                    job.record(model.name(), sweep.manifest.target_seed, completion)
                });
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for outcome in rx {
            match outcome {
                Ok(record) => {
                    summary.calls += 1;
                    match record.status {
                        CallStatus::Ok => summary.ok += 1,
                        CallStatus::ContextLengthError => summary.context_length_error += 1,
                        CallStatus::TransportError => summary.transport_error += 1,
                        CallStatus::Refused => summary.refused += 1,
                    }
                    if write_error.is_none() {
                        if let Err(e) = store.append(&record) {
                            write_error = Some(e);
                        }
                    }
                }
                Err(e) => {
                    log::error!("could not build instance: {e}");
                    summary.build_errors += 1;
                }
            }
        }
    });

    match write_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}
