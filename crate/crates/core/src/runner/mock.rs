use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use rand::Rng;

use super::{CallError, Job, JobTask, Model};
use crate::error::{Error, Result};
use crate::levels::level_key;
use crate::rng::{self, bernoulli};

fn job_purpose(job: &Job) -> String {
    format!("{}/{}/{}/{}", job.doc_id(), job.task_kind(), level_key(job.wfr_level()), job.frag_seed())
}

/// Answers every job perfectly.
#[derive(Debug, Clone)]
pub struct OracleMock {
    name: String,
}

impl OracleMock {
    pub fn new() -> Self {
        Self { name: "mock-oracle".into() }
    }

    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl Default for OracleMock {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for OracleMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, job: &Job) -> std::result::Result<String, CallError> {
        Ok(match &job.task {
            JobTask::Lines(i) => i.truth_lines.join("\n"),
            JobTask::Math(m) => format!("The answer is #### {}", m.gold),
        })
    }
}

/// Reports each truth line with a level-dependent probability and adds
/// spurious lines at a fixed rate. Answers are a pure function of the
/// seed and the job, so reruns reproduce.
#[derive(Debug, Clone)]
pub struct LossyMock {
    name: String,
    profile: Vec<(f64, f64)>,
    fp_rate: f64,
    seed: u64,
}

impl LossyMock {
    /// `profile` maps levels to recall; recall between keys is linearly
    /// interpolated.
    pub fn new(name: impl Into<String>, profile: &[(f64, f64)], fp_rate: f64, seed: u64) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::arg("lossy profile needs at least one point"));
        }
        let mut profile = profile.to_vec();
        profile.sort_by(|a, b| a.0.total_cmp(&b.0));
        if profile.windows(2).any(|w| level_key(w[0].0) == level_key(w[1].0)) {
            return Err(Error::arg("duplicate level in lossy profile"));
        }
        if profile.iter().any(|&(_, q)| !(0.0..=1.0).contains(&q)) {
            return Err(Error::arg("profile recall must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&fp_rate) {
            return Err(Error::arg("fp_rate must lie in [0, 1]"));
        }
        Ok(Self { name: name.into(), profile, fp_rate, seed })
    }

    /// Parses `0.0:0.9,0.5:0.4,1.0:0.7`.
    pub fn parse_profile(text: &str) -> Result<Vec<(f64, f64)>> {
        text.split(',')
            .map(|pair| {
                let (l, q) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::arg(format!("profile entry {pair:?} is not level:recall")))?;
                let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::arg(format!("bad number {s:?} in profile")));
                Ok((parse(l)?, parse(q)?))
            })
            .collect()
    }

    pub fn recall_at(&self, level: f64) -> f64 {
        let p = &self.profile;
        if level <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((l0, q0), (l1, q1)) = (w[0], w[1]);
            if level <= l1 {
                return q0 + (q1 - q0) * (level - l0) / (l1 - l0);
            }
        }
        p[p.len() - 1].1
    }
}

impl Model for LossyMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn check_levels(&self, levels: &[f64]) -> Result<()> {
        let lo = level_key(self.profile[0].0);
        let hi = level_key(self.profile[self.profile.len() - 1].0);
        match levels.iter().find(|&&l| level_key(l) < lo || level_key(l) > hi) {
            Some(l) => Err(Error::arg(format!("level {l} lies outside the lossy profile"))),
            None => Ok(()),
        }
    }

    fn respond(&self, job: &Job) -> std::result::Result<String, CallError> {
        let q = self.recall_at(job.wfr_level());
        let mut rng = rng::derived(self.seed, &job_purpose(job));
        match &job.task {
            JobTask::Lines(i) => {
                let truth = &i.truth_lines;
                let mut out: Vec<String> = truth.iter().filter(|_| bernoulli(&mut rng, q)).cloned().collect();
                for k in 0..truth.len().max(1) {
                    if bernoulli(&mut rng, self.fp_rate) {
                        out.push(format!("zz spurious line {k} {:08x}", rng.gen::<u32>()));
                    }
                }
                Ok(out.join("\n"))
            }
            JobTask::Math(m) => {
                let answer = if bernoulli(&mut rng, q) { m.gold } else { m.gold + rng.gen_range(1..100) as f64 };
                Ok(format!("The answer is #### {answer}"))
            }
        }
    }
}

/// Wraps a model and injects failures: the first `transient` calls for each
/// job fail transiently, and chosen jobs always fail with a context-length
/// error.
pub struct FaultInjector<M> {
    inner: M,
    transient: u32,
    context_rate: f64,
    context_seed: u64,
    context_jobs: HashSet<(String, i64, u64)>,
    calls: Mutex<HashMap<String, u32>>,
}

impl<M: Model> FaultInjector<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            transient: 0,
            context_rate: 0.0,
            context_seed: 0,
            context_jobs: HashSet::new(),
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn transient_failures(mut self, n: u32) -> Self {
        self.transient = n;
        self
    }

    /// Rejects a deterministic `rate` fraction of jobs as too long.
    pub fn context_length_rate(mut self, rate: f64, seed: u64) -> Self {
        self.context_rate = rate;
        self.context_seed = seed;
        self
    }

    /// Rejects exactly these `(doc_id, level_key, frag_seed)` jobs as too long.
    pub fn context_length_for(mut self, jobs: impl IntoIterator<Item = (String, i64, u64)>) -> Self {
        self.context_jobs.extend(jobs);
        self
    }

    pub fn calls(&self) -> u32 {
        self.calls.lock().unwrap().values().sum()
    }
}

impl<M: Model> Model for FaultInjector<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn check_levels(&self, levels: &[f64]) -> Result<()> {
        self.inner.check_levels(levels)
    }

    fn respond(&self, job: &Job) -> std::result::Result<String, CallError> {
        let purpose = job_purpose(job);
        let n = {
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(purpose.clone()).or_default();
            *c += 1;
            *c
        };
        let id = (job.doc_id().to_owned(), level_key(job.wfr_level()), job.frag_seed());
        if self.context_jobs.contains(&id)
            || (self.context_rate > 0.0 && bernoulli(&mut rng::derived(self.context_seed, &purpose), self.context_rate))
        {
            return Err(CallError::ContextLength("injected: input exceeds the context window".into()));
        }
        if n <= self.transient {
            return Err(CallError::Transient(format!("injected failure {n}")));
        }
        self.inner.respond(job)
    }
}
