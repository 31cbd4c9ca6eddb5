//! Absence-detection, insertion-detection and math task instances.
//!
//! Two seeds are kept apart: the target seed picks which lines are omitted
//! or where needles go, the fragmentation seed picks where spaces fall. A
//! document is fragmented once, as a whole, before any line is removed or
//! inserted, so a line looks the same in both contexts.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{body_lines, Document, DocumentSet, Domain, MathProblem};
use crate::error::{Error, Result};
use crate::perturb::{fragment, FragmentationSpec};
use crate::rng::{self, bernoulli};

/// Omission / insertion rate used throughout the main experiments.
pub const DEFAULT_TARGET_RATE: f64 = 0.1;
/// Default needle pool size per domain.
pub const DEFAULT_POOL_SIZE: usize = 100;
const HISTOGRAM_BUCKETS: usize = 10;
const HISTOGRAM_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Absence,
    Insertion,
    Math,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Absence => "absence",
            TaskKind::Insertion => "insertion",
            TaskKind::Math => "math",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absence" => Ok(TaskKind::Absence),
            "insertion" | "niah" => Ok(TaskKind::Insertion),
            "math" => Ok(TaskKind::Math),
            other => Err(Error::arg(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Omit,
    Insert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMask {
    pub doc_id: String,
    pub mode: MaskMode,
    /// Line indices to omit, or gap positions `0..=len` to insert before.
    pub indices: Vec<usize>,
    pub target_seed: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub doc_id: String,
    pub domain: Domain,
    pub task: TaskKind,
    pub wfr_level: f64,
    pub frag_seed: u64,
    pub target_seed: u64,
    pub mask_indices: Vec<usize>,
    pub original_context: Vec<String>,
    pub modified_context: Vec<String>,
    pub truth_lines: Vec<String>,
    /// Inserted-space offsets for each truth line; removing them gives the clean line.
    pub truth_insertions: Vec<Vec<usize>>,
    pub measured_wfr: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TaskInstance {
    pub fn clean_truth_lines(&self) -> Vec<String> {
        self.truth_lines
            .iter()
            .zip(&self.truth_insertions)
            .map(|(l, p)| crate::perturb::remove_insertions(l, p))
            .collect()
    }
}

/// A single fragmented math problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathInstance {
    pub problem_id: String,
    pub wfr_level: f64,
    pub frag_seed: u64,
    pub question: String,
    pub gold: f64,
    pub measured_wfr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedlePool {
    pub domain: Domain,
    pub needles: Vec<String>,
    /// Corpus per-line character-length range the buckets span.
    pub length_range: (usize, usize),
    pub corpus_histogram: Vec<usize>,
    pub pool_histogram: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl NeedlePool {
    /// A pool without histogram bookkeeping, for callers that author needles directly.
    pub fn from_needles(domain: Domain, needles: Vec<String>) -> Result<Self> {
        if needles.is_empty() {
            return Err(Error::Validation("needle pool is empty".into()));
        }
        if needles.iter().any(|n| n.contains('\n')) {
            return Err(Error::Validation("needle contains a newline".into()));
        }
        Ok(Self {
            domain,
            needles,
            length_range: (0, 0),
            corpus_histogram: Vec::new(),
            pool_histogram: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("target rate {rate} outside (0, 1)")))
    }
}

/// Selects targets for `doc`: every line (or gap, in insert mode) is picked
/// independently with probability `rate`. An empty draw falls back to one
/// uniformly chosen index so every task has at least one target.
pub fn select_targets(doc: &Document, rate: f64, target_seed: u64, mode: MaskMode) -> Result<TargetMask> {
    let mut rng = rng::derived(target_seed, &format!("targets/{mode:?}/{}", doc.id));
    select_targets_with(doc, rate, target_seed, mode, &mut rng)
}

pub fn select_targets_with<R: RngCore + ?Sized>(
    doc: &Document,
    rate: f64,
    target_seed: u64,
    mode: MaskMode,
    rng: &mut R,
) -> Result<TargetMask> {
    check_rate(rate)?;
    if doc.lines.len() < 2 {
        return Err(Error::arg(format!("document `{}` needs at least 2 lines", doc.id)));
    }
    let slots = match mode {
        MaskMode::Omit => doc.lines.len(),
        MaskMode::Insert => doc.lines.len() + 1,
    };
    let mut indices: Vec<usize> = (0..slots).filter(|_| bernoulli(rng, rate)).collect();
    if indices.is_empty() {
        indices.push(rng.gen_range(0..slots));
    }
    Ok(TargetMask { doc_id: doc.id.clone(), mode, indices, target_seed, rate })
}

fn check_mask(doc: &Document, mask: &TargetMask, mode: MaskMode) -> Result<()> {
    if mask.mode != mode {
        return Err(Error::Consistency(format!("mask mode {:?} where {mode:?} is required", mask.mode)));
    }
    if mask.doc_id != doc.id {
        return Err(Error::Consistency(format!("mask for `{}` applied to `{}`", mask.doc_id, doc.id)));
    }
    let limit = match mode {
        MaskMode::Omit => doc.lines.len(),
        MaskMode::Insert => doc.lines.len() + 1,
    };
    if mask.indices.is_empty() || mask.indices.iter().any(|&i| i >= limit) {
        return Err(Error::Consistency(format!("mask indices out of range for `{}`", doc.id)));
    }
    if mask.indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Consistency("mask indices must be strictly ascending".into()));
    }
    Ok(())
}

pub fn build_absence_instance(doc: &Document, mask: &TargetMask, spec: &FragmentationSpec) -> Result<TaskInstance> {
    check_mask(doc, mask, MaskMode::Omit)?;
    let frag = fragment(&doc.lines, spec)?;
    let omitted: BTreeSet<usize> = mask.indices.iter().copied().collect();

    let mut modified = Vec::with_capacity(doc.lines.len());
    let mut truth = Vec::with_capacity(omitted.len());
    let mut truth_insertions = Vec::with_capacity(omitted.len());
    for (i, (line, pos)) in frag.lines.iter().zip(&frag.insertion_positions).enumerate() {
        if omitted.contains(&i) {
            truth.push(line.clone());
            truth_insertions.push(pos.clone());
        } else {
            modified.push(line.clone());
        }
    }
    Ok(TaskInstance {
        doc_id: doc.id.clone(),
        domain: doc.domain,
        task: TaskKind::Absence,
        wfr_level: spec.p,
        frag_seed: spec.frag_seed,
        target_seed: mask.target_seed,
        mask_indices: mask.indices.clone(),
        original_context: frag.lines,
        modified_context: modified,
        truth_lines: truth,
        truth_insertions,
        measured_wfr: frag.measured_wfr,
        warnings: Vec::new(),
    })
}

/// Needles are drawn from the pool with a stream derived from the target
/// seed, then fragmented in the same stream as the document, after all of
/// its lines, so document spaces never depend on how many needles there are.
pub fn build_insertion_instance(
    doc: &Document,
    mask: &TargetMask,
    pool: &NeedlePool,
    spec: &FragmentationSpec,
) -> Result<TaskInstance> {
    check_mask(doc, mask, MaskMode::Insert)?;
    if pool.domain != doc.domain {
        return Err(Error::Consistency(format!(
            "{} needle pool used for {} document `{}`",
            pool.domain, doc.domain, doc.id
        )));
    }
    if pool.needles.is_empty() {
        return Err(Error::Validation("needle pool is empty".into()));
    }
    let k = mask.indices.len();
    let mut rng = rng::derived(mask.target_seed, &format!("needles/{}", doc.id));
    let mut warnings = Vec::new();
    let picks: Vec<usize> = if pool.needles.len() >= k {
        rand::seq::index::sample(&mut rng, pool.needles.len(), k).into_vec()
    } else {
        let msg = format!(
            "pool of {} needles is smaller than the {k} needed for `{}`; sampling with replacement",
            pool.needles.len(),
            doc.id
        );
        log::warn!("{msg}");
        warnings.push(msg);
        (0..k).map(|_| rng.gen_range(0..pool.needles.len())).collect()
    };

    let mut all: Vec<&str> = doc.lines.iter().map(String::as_str).collect();
    all.extend(picks.iter().map(|&i| pool.needles[i].as_str()));
    let frag = fragment(&all, spec)?;
    let n = doc.lines.len();
    let (doc_lines, needle_lines) = frag.lines.split_at(n);
    let needle_positions = &frag.insertion_positions[n..];

    let mut modified = Vec::with_capacity(n + k);
    let mut next = mask.indices.iter().zip(needle_lines).peekable();
    for (gap, line) in doc_lines.iter().map(Some).chain([None]).enumerate() {
        while let Some((_, needle)) = next.next_if(|(&g, _)| g == gap) {
            modified.push(needle.clone());
        }
        if let Some(line) = line {
            modified.push(line.clone());
        }
    }
    Ok(TaskInstance {
        doc_id: doc.id.clone(),
        domain: doc.domain,
        task: TaskKind::Insertion,
        wfr_level: spec.p,
        frag_seed: spec.frag_seed,
        target_seed: mask.target_seed,
        mask_indices: mask.indices.clone(),
        original_context: doc_lines.to_vec(),
        modified_context: modified,
        truth_lines: needle_lines.to_vec(),
        truth_insertions: needle_positions.to_vec(),
        measured_wfr: frag.measured_wfr,
        warnings,
    })
}

pub fn build_math_instance(problem: &MathProblem, spec: &FragmentationSpec) -> Result<MathInstance> {
    let gold = problem
        .gold()
        .ok_or_else(|| Error::Validation(format!("problem `{}` has no `####` answer", problem.id)))?;
    let lines: Vec<&str> = problem.question.split('\n').collect();
    let frag = fragment(&lines, spec)?;
    Ok(MathInstance {
        problem_id: problem.id.clone(),
        wfr_level: spec.p,
        frag_seed: spec.frag_seed,
        question: frag.lines.join("\n"),
        gold,
        measured_wfr: frag.measured_wfr,
    })
}

/// Reads needle candidates, one per line.
pub fn load_needle_candidates(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(body_lines(&text))
}

pub fn build_needle_pool_from_file(corpus: &DocumentSet, candidate_file: impl AsRef<Path>, n: usize) -> Result<NeedlePool> {
    build_needle_pool(corpus, &load_needle_candidates(candidate_file)?, n)
}

struct Buckets {
    min: usize,
    max: usize,
}

impl Buckets {
    fn of(&self, len: usize) -> Option<usize> {
        if len < self.min || len > self.max {
            return None;
        }
        if self.max == self.min {
            return Some(0);
        }
        let width = (self.max - self.min) as f64 / HISTOGRAM_BUCKETS as f64;
        Some((((len - self.min) as f64 / width) as usize).min(HISTOGRAM_BUCKETS - 1))
    }

    fn distance(&self, len: usize) -> usize {
        self.min.saturating_sub(len) + len.saturating_sub(self.max)
    }
}

/// Picks `n` needles whose per-line length histogram (10 equal-width buckets
/// over the corpus length range) follows the corpus histogram, filling each
/// bucket greedily in candidate order. Candidates that equal a corpus line
/// (case-insensitively) are rejected outright.
pub fn build_needle_pool(corpus: &DocumentSet, candidates: &[String], n: usize) -> Result<NeedlePool> {
    let domain = corpus
        .documents
        .first()
        .map(|d| d.domain)
        .ok_or_else(|| Error::arg("cannot build a needle pool for an empty corpus"))?;
    if n < 1 {
        return Err(Error::arg("pool size must be >= 1"));
    }

    let corpus_lines: HashSet<String> = corpus
        .iter()
        .flat_map(|d| d.lines.iter())
        .map(|l| l.trim().to_lowercase())
        .collect();
    if let Some(dup) = candidates.iter().find(|c| corpus_lines.contains(&c.trim().to_lowercase())) {
        return Err(Error::Validation(format!("needle candidate appears in the corpus: {dup}")));
    }
    let mut seen = HashSet::new();
    let candidates: Vec<&String> = candidates.iter().filter(|c| seen.insert(c.as_str())).collect();
    if candidates.len() < n {
        return Err(Error::arg(format!("{} distinct candidates for a pool of {n}", candidates.len())));
    }

    let lengths: Vec<usize> = corpus.iter().flat_map(|d| d.lines.iter()).map(|l| l.chars().count()).collect();
    let buckets = Buckets {
        min: lengths.iter().copied().min().unwrap_or(0),
        max: lengths.iter().copied().max().unwrap_or(0),
    };
    let mut corpus_hist = vec![0usize; HISTOGRAM_BUCKETS];
    for &len in &lengths {
        if let Some(b) = buckets.of(len) {
            corpus_hist[b] += 1;
        }
    }
    let targets = apportion(&corpus_hist, n);

    let mut chosen = vec![false; candidates.len()];
    let mut filled = [0usize; HISTOGRAM_BUCKETS];
    for (i, c) in candidates.iter().enumerate() {
        if let Some(b) = buckets.of(c.chars().count()) {
            if filled[b] < targets[b] {
                filled[b] += 1;
                chosen[i] = true;
            }
        }
    }

    let mut warnings = Vec::new();
    let short = n - chosen.iter().filter(|&&c| c).count();
    if short > 0 {
        let msg = format!("{short} needles could not be placed in their length bucket; filled with the closest remaining candidates");
        log::warn!("{msg}");
        warnings.push(msg);
        let mut rest: Vec<usize> = (0..candidates.len()).filter(|&i| !chosen[i]).collect();
        rest.sort_by_key(|&i| buckets.distance(candidates[i].chars().count()));
        for i in rest.into_iter().take(short) {
            chosen[i] = true;
        }
    }

    let needles: Vec<String> = candidates
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(c, _)| (*c).clone())
        .collect();
    let mut pool_hist = vec![0usize; HISTOGRAM_BUCKETS];
    for needle in &needles {
        let len = needle.chars().count();
        let b = buckets.of(len).unwrap_or(if len < buckets.min { 0 } else { HISTOGRAM_BUCKETS - 1 });
        pool_hist[b] += 1;
    }
    let total = lengths.len().max(1) as f64;
    for b in 0..HISTOGRAM_BUCKETS {
        let gap = (pool_hist[b] as f64 / n as f64 - corpus_hist[b] as f64 / total).abs();
        if gap > HISTOGRAM_TOLERANCE {
            let msg = format!("length bucket {b} differs from the corpus by {:.1} points", gap * 100.0);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    Ok(NeedlePool {
        domain,
        needles,
        length_range: (buckets.min, buckets.max),
        corpus_histogram: corpus_hist,
        pool_histogram: pool_hist,
        warnings,
    })
}

/// Largest-remainder apportionment of `n` seats over `weights`.
fn apportion(weights: &[usize], n: usize) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|&w| w as f64 * n as f64 / total as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let left = n - seats.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        seats[i] += 1;
    }
    seats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::FragmentationSpec;
    use proptest::prelude::*;

    fn doc(n: usize) -> Document {
        let lines = (0..n).map(|i| format!("line number {i} says something")).collect();
        Document::new("doc", Domain::Legal, lines).unwrap()
    }

    /// Yields the maximum value `high` times (every Bernoulli draw fails),
    /// then zeros so range sampling terminates.
    struct HighThenLow {
        high: usize,
    }
    impl rand::RngCore for HighThenLow {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            if self.high > 0 {
                self.high -= 1;
                u64::MAX
            } else {
                0
            }
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            rand::RngCore::try_fill_bytes(self, dest).unwrap()
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            for chunk in dest.chunks_mut(8) {
                let v = self.next_u64().to_le_bytes();
                chunk.copy_from_slice(&v[..chunk.len()]);
            }
            Ok(())
        }
    }

    #[test]
    fn floor_of_one_target() {
        let mask = select_targets_with(&doc(30), 0.1, 0, MaskMode::Omit, &mut HighThenLow { high: 30 }).unwrap();
        assert_eq!(mask.indices.len(), 1);
        assert!(mask.indices[0] < 30);
    }

    #[test]
    fn expected_target_count() {
        let d = doc(100);
        let mean = (0..200u64)
            .map(|s| select_targets(&d, 0.1, s, MaskMode::Omit).unwrap().indices.len() as f64)
            .sum::<f64>()
            / 200.0;
        assert!((mean - 10.0).abs() < 1.0, "mean targets {mean}");
    }

    #[test]
    fn masks_are_deterministic() {
        let d = doc(40);
        assert_eq!(select_targets(&d, 0.1, 5, MaskMode::Insert).unwrap(), select_targets(&d, 0.1, 5, MaskMode::Insert).unwrap());
    }

    #[test]
    fn bad_rates_and_short_docs() {
        assert!(select_targets(&doc(10), 0.0, 1, MaskMode::Omit).is_err());
        assert!(select_targets(&doc(10), 1.0, 1, MaskMode::Omit).is_err());
        assert!(select_targets(&doc(1), 0.5, 1, MaskMode::Omit).is_err());
    }

    #[test]
    fn single_omission() {
        let d = Document::new("d", Domain::Legal, vec!["L0".into(), "L1".into(), "L2".into()]).unwrap();
        let mask = TargetMask { doc_id: "d".into(), mode: MaskMode::Omit, indices: vec![1], target_seed: 0, rate: 0.1 };
        let inst = build_absence_instance(&d, &mask, &FragmentationSpec::random_slot(0.0, 0)).unwrap();
        assert_eq!(inst.modified_context, vec!["L0", "L2"]);
        assert_eq!(inst.truth_lines, vec!["L1"]);
        assert_eq!(inst.original_context, d.lines);
    }

    #[test]
    fn mask_mismatch_is_rejected() {
        let d = doc(5);
        let mut mask = select_targets(&d, 0.3, 1, MaskMode::Omit).unwrap();
        let spec = FragmentationSpec::random_slot(0.2, 1);
        mask.doc_id = "other".into();
        assert!(matches!(build_absence_instance(&d, &mask, &spec), Err(Error::Consistency(_))));
        let insert = select_targets(&d, 0.3, 1, MaskMode::Insert).unwrap();
        assert!(build_absence_instance(&d, &insert, &spec).is_err());
    }

    #[test]
    fn single_needle_at_front() {
        let d = Document::new("d", Domain::Legal, vec!["L0".into(), "L1".into()]).unwrap();
        let pool = NeedlePool::from_needles(Domain::Legal, vec!["N0".into()]).unwrap();
        let mask = TargetMask { doc_id: "d".into(), mode: MaskMode::Insert, indices: vec![0], target_seed: 0, rate: 0.1 };
        let inst = build_insertion_instance(&d, &mask, &pool, &FragmentationSpec::random_slot(0.0, 0)).unwrap();
        assert_eq!(inst.modified_context, vec!["N0", "L0", "L1"]);
        assert_eq!(inst.truth_lines, vec!["N0"]);
    }

    #[test]
    fn needles_get_fragmented_and_domain_checked() {
        let d = doc(20);
        let pool = NeedlePool::from_needles(Domain::Legal, vec!["Notwithstanding the provisions of this clause".into()]).unwrap();
        let mask = TargetMask { doc_id: "doc".into(), mode: MaskMode::Insert, indices: vec![20], target_seed: 3, rate: 0.1 };
        let inst = build_insertion_instance(&d, &mask, &pool, &FragmentationSpec::random_slot(0.3, 7)).unwrap();
        assert_ne!(inst.truth_lines[0], pool.needles[0]);
        assert_eq!(inst.clean_truth_lines()[0], pool.needles[0]);
        assert_eq!(inst.modified_context.last(), Some(&inst.truth_lines[0]));

        let math_pool = NeedlePool::from_needles(Domain::Math, vec!["x".into()]).unwrap();
        assert!(build_insertion_instance(&d, &mask, &math_pool, &FragmentationSpec::random_slot(0.3, 7)).is_err());
    }

    #[test]
    fn small_pool_falls_back_with_warning() {
        let d = doc(10);
        let pool = NeedlePool::from_needles(Domain::Legal, vec!["only one needle".into()]).unwrap();
        let mask = TargetMask { doc_id: "doc".into(), mode: MaskMode::Insert, indices: vec![1, 4, 9], target_seed: 0, rate: 0.1 };
        let inst = build_insertion_instance(&d, &mask, &pool, &FragmentationSpec::random_slot(0.0, 0)).unwrap();
        assert_eq!(inst.truth_lines.len(), 3);
        assert_eq!(inst.warnings.len(), 1);
    }

    #[test]
    fn math_instance() {
        let p = MathProblem { id: "p".into(), question: "How many cats?".into(), answer: "#### 3".into() };
        let inst = build_math_instance(&p, &FragmentationSpec::random_slot(1.0, 0)).unwrap();
        assert_eq!(inst.question, "H o w m a n y c a t s ?");
        assert_eq!(inst.gold, 3.0);
        let bad = MathProblem { answer: "none".into(), ..p };
        assert!(build_math_instance(&bad, &FragmentationSpec::random_slot(1.0, 0)).is_err());
    }

    fn corpus_of(lines: Vec<String>) -> DocumentSet {
        DocumentSet { documents: vec![Document::new("c", Domain::Legal, lines).unwrap()], source_path: "mem".into(), sample_seed: None }
    }

    #[test]
    fn pool_size_and_degenerate_histogram() {
        let corpus = corpus_of(vec!["a".repeat(50); 10]);
        let candidates: Vec<String> = (0..150).map(|i| format!("{:b<50}", format!("n{i}"))).collect();
        let pool = build_needle_pool(&corpus, &candidates, 100).unwrap();
        assert_eq!(pool.needles.len(), 100);
        assert!(pool.warnings.is_empty(), "{:?}", pool.warnings);
        assert_eq!(pool.pool_histogram[0], 100);
    }

    #[test]
    fn pool_rejects_corpus_lines() {
        let corpus = corpus_of(vec!["The Parties agree.".into(), "other".into()]);
        let err = build_needle_pool(&corpus, &["the parties AGREE.".to_string(), "fresh".into()], 1).unwrap_err();
        assert!(err.to_string().contains("the parties AGREE."));
    }

    #[test]
    fn pool_follows_corpus_histogram() {
        // half short lines, half long lines
        let mut lines: Vec<String> = (0..50).map(|i| format!("{:x<10}", i)).collect();
        lines.extend((0..50).map(|i| format!("{:y<100}", i)));
        let corpus = corpus_of(lines);
        let mut candidates: Vec<String> = (0..80).map(|i| format!("{:s<12}", format!("c{i}"))).collect();
        candidates.extend((0..80).map(|i| format!("{:l<98}", format!("c{i}"))));
        let pool = build_needle_pool(&corpus, &candidates, 20).unwrap();
        assert_eq!(pool.pool_histogram[0], 10);
        assert_eq!(pool.pool_histogram[9], 10);
        assert!(pool.warnings.is_empty());
    }

    #[test]
    fn infeasible_histogram_warns() {
        let mut lines: Vec<String> = (0..50).map(|i| format!("{:x<10}", i)).collect();
        lines.extend((0..50).map(|i| format!("{:y<100}", i)));
        let candidates: Vec<String> = (0..30).map(|i| format!("{:s<12}", format!("c{i}"))).collect();
        let pool = build_needle_pool(&corpus_of(lines), &candidates, 20).unwrap();
        assert_eq!(pool.needles.len(), 20);
        assert!(!pool.warnings.is_empty());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(&[1, 1, 1], 10).iter().sum::<usize>(), 10);
        assert_eq!(apportion(&[3, 0, 1], 4), vec![3, 0, 1]);
    }

    fn doc_strategy() -> impl Strategy<Value = Document> {
        prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,5}", 2..30)
            .prop_map(|lines| Document::new("p", Domain::Legal, lines).unwrap())
    }

    proptest! {
        #[test]
        fn absence_reconstruction(d in doc_strategy(), ts in any::<u64>(), fs in any::<u64>(), p in 0.0f64..=1.0) {
            let mask = select_targets(&d, 0.2, ts, MaskMode::Omit).unwrap();
            let inst = build_absence_instance(&d, &mask, &FragmentationSpec::random_slot(p, fs)).unwrap();
            prop_assert_eq!(inst.truth_lines.len(), mask.indices.len());
            let mut rebuilt = inst.modified_context.clone();
            for (&i, line) in mask.indices.iter().zip(&inst.truth_lines) {
                rebuilt.insert(i, line.clone());
            }
            prop_assert_eq!(&rebuilt, &inst.original_context);
            let clean: Vec<String> = mask.indices.iter().map(|&i| d.lines[i].clone()).collect();
            prop_assert_eq!(inst.clean_truth_lines(), clean);
        }

        #[test]
        fn insertion_reconstruction(d in doc_strategy(), ts in any::<u64>(), fs in any::<u64>(), p in 0.0f64..=1.0) {
            let pool = NeedlePool::from_needles(Domain::Legal, (0..8).map(|i| format!("needle sentence {i}")).collect()).unwrap();
            let mask = select_targets(&d, 0.2, ts, MaskMode::Insert).unwrap();
            let inst = build_insertion_instance(&d, &mask, &pool, &FragmentationSpec::random_slot(p, fs)).unwrap();
            prop_assert_eq!(inst.truth_lines.len(), mask.indices.len());
            // drop needles from the modified context, in order
            let mut rest = inst.modified_context.clone();
            for (j, &gap) in mask.indices.iter().enumerate().rev() {
                let removed = rest.remove(gap + j);
                prop_assert_eq!(&removed, &inst.truth_lines[j]);
            }
            prop_assert_eq!(&rest, &inst.original_context);
            for clean in inst.clean_truth_lines() {
                prop_assert!(pool.needles.contains(&clean));
            }
        }

        #[test]
        fn seeds_are_separable(d in doc_strategy(), ts in any::<u64>(), fs1 in any::<u64>(), fs2 in any::<u64>(), ts2 in any::<u64>()) {
            let mask = select_targets(&d, 0.2, ts, MaskMode::Omit).unwrap();
            let a = build_absence_instance(&d, &mask, &FragmentationSpec::random_slot(0.4, fs1)).unwrap();
            let b = build_absence_instance(&d, &mask, &FragmentationSpec::random_slot(0.9, fs2)).unwrap();
            prop_assert_eq!(&a.mask_indices, &b.mask_indices);
            // a different target seed leaves surviving lines spaced identically
            let other = select_targets(&d, 0.2, ts2, MaskMode::Omit).unwrap();
            let c = build_absence_instance(&d, &other, &FragmentationSpec::random_slot(0.4, fs1)).unwrap();
            prop_assert_eq!(&a.original_context, &c.original_context);
        }
    }
}
