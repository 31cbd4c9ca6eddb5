//! Corpus ingestion and evaluation-document construction.
//!
//! Corpus files are JSON Lines. Plain corpora carry `{"id", "text"}` per
//! record; GSM8K-style problem files carry `{"question", "answer"}` with an
//! optional `"id"`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default number of problems concatenated into one math document.
pub const DEFAULT_GROUP_SIZE: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Legal,
    GithubPr,
    Math,
}

impl Domain {
    /// The document-type label substituted into prompts.
    pub fn label(self) -> &'static str {
        match self {
            Domain::Legal => "Legal Documents",
            Domain::GithubPr => "Github PRs",
            Domain::Math => "Mathematical Reasoning",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Legal => "legal",
            Domain::GithubPr => "github_pr",
            Domain::Math => "math",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "legal" => Ok(Domain::Legal),
            "github_pr" | "github" | "pr" => Ok(Domain::GithubPr),
            "math" | "gsm8k" => Ok(Domain::Math),
            other => Err(Error::arg(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub domain: Domain,
    pub lines: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, domain: Domain, lines: Vec<String>) -> Result<Self> {
        let id = id.into();
        if lines.is_empty() {
            return Err(Error::Validation(format!("document `{id}` has no lines")));
        }
        if lines.iter().any(|l| l.contains('\n')) {
            return Err(Error::Validation(format!("document `{id}` has a line containing a newline")));
        }
        Ok(Self { id, domain, lines })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSet {
    pub documents: Vec<Document>,
    pub source_path: String,
    pub sample_seed: Option<u64>,
}

impl DocumentSet {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathProblem {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub answer: String,
}

impl MathProblem {
    /// The gold number following the last `####` marker of the solution.
    pub fn gold(&self) -> Option<f64> {
        let tail = &self.answer[self.answer.rfind("####")? + 4..];
        tail.trim().replace([',', '$'], "").parse().ok()
    }
}

/// Splits a record body into lines, dropping lines that are empty after
/// trimming and any trailing carriage return.
pub fn body_lines(text: &str) -> Vec<String> {
    text.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn non_blank_records(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty())
}

/// Reads a `{"id", "text"}` JSON Lines corpus.
pub fn load_documents(path: impl AsRef<Path>, domain: Domain) -> Result<DocumentSet> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    parse_documents(&content, domain, &path.display().to_string())
}

pub fn parse_documents(content: &str, domain: Domain, source: &str) -> Result<DocumentSet> {
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for (index, (_, raw)) in non_blank_records(content).enumerate() {
        let record: CorpusRecord =
            serde_json::from_str(raw).map_err(|e| Error::Parse { index, message: e.to_string() })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Parse { index, message: format!("duplicate id `{}`", record.id) });
        }
        let lines = body_lines(&record.text);
        if lines.is_empty() {
            return Err(Error::Parse { index, message: format!("record `{}` has an empty body", record.id) });
        }
        documents.push(Document { id: record.id, domain, lines });
    }
    Ok(DocumentSet { documents, source_path: source.to_owned(), sample_seed: None })
}

pub fn write_documents(set: &DocumentSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for doc in &set.documents {
        let record = CorpusRecord { id: doc.id.clone(), text: doc.lines.join("\n") };
        serde_json::to_writer(&mut out, &record)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Reads a `{"question", "answer"}` JSON Lines problem file. Missing ids
/// default to the record index.
pub fn load_math_problems(path: impl AsRef<Path>) -> Result<Vec<MathProblem>> {
    let path = path.as_ref();
    parse_math_problems(&read_to_string(path)?)
}

pub fn parse_math_problems(content: &str) -> Result<Vec<MathProblem>> {
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for (index, (_, raw)) in non_blank_records(content).enumerate() {
        let mut p: MathProblem =
            serde_json::from_str(raw).map_err(|e| Error::Parse { index, message: e.to_string() })?;
        if p.id.is_empty() {
            p.id = format!("q{index:05}");
        }
        if !seen.insert(p.id.clone()) {
            return Err(Error::Parse { index, message: format!("duplicate id `{}`", p.id) });
        }
        problems.push(p);
    }
    Ok(problems)
}

/// Loads a corpus for `domain`. A math corpus whose records carry
/// `question` fields is treated as a problem file and grouped into
/// documents of `group_size` problems.
pub fn load_corpus(path: impl AsRef<Path>, domain: Domain, group_size: usize) -> Result<DocumentSet> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let is_problem_file = non_blank_records(&content)
        .next()
        .and_then(|(_, l)| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("question").is_some());
    if domain == Domain::Math && is_problem_file {
        let problems = parse_math_problems(&content)?;
        let mut set = build_gsm8k_documents(&problems, group_size, None)?;
        set.source_path = path.display().to_string();
        Ok(set)
    } else {
        parse_documents(&content, domain, &path.display().to_string())
    }
}

/// Splits text into lines at newlines and at periods followed by whitespace
/// or end of text. The period stays on its line; a period between digits
/// (`3.5`) is never a split point because it is not followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for segment in text.split('\n') {
        let mut current = String::new();
        let mut chars = segment.chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            if c == '.' && chars.peek().map_or(true, |n| n.is_whitespace()) {
                push_trimmed(&mut out, &current);
                current.clear();
            }
        }
        push_trimmed(&mut out, &current);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_owned());
    }
}

/// Concatenates problems into documents of `group_size`: for each problem,
/// its question lines then its solution lines. With a seed the problems are
/// shuffled once before grouping; the final group may be shorter.
pub fn build_gsm8k_documents(problems: &[MathProblem], group_size: usize, seed: Option<u64>) -> Result<DocumentSet> {
    if group_size < 1 {
        return Err(Error::arg("group_size must be >= 1"));
    }
    if problems.is_empty() {
        return Err(Error::arg("no problems to group"));
    }
    let mut order: Vec<&MathProblem> = problems.iter().collect();
    if let Some(seed) = seed {
        order.shuffle(&mut rng::derived(seed, "gsm8k-group"));
    }
    let documents = order
        .chunks(group_size)
        .enumerate()
        .map(|(i, chunk)| {
            let lines = chunk
                .iter()
                .flat_map(|p| split_sentences(&p.question).into_iter().chain(split_sentences(&p.answer)))
                .collect();
            Document::new(format!("gsm8k-{i:04}"), Domain::Math, lines)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DocumentSet { documents, source_path: String::new(), sample_seed: seed })
}

/// `n` distinct indices out of `0..len`, sorted ascending.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 1 || n > len {
        return Err(Error::arg(format!("cannot sample {n} of {len}")));
    }
    let mut picked = rand::seq::index::sample(&mut rng::derived(seed, "sample"), len, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform sample without replacement that keeps the original order.
pub fn sample_documents(set: &DocumentSet, n: usize, seed: u64) -> Result<DocumentSet> {
    let documents = sample_indices(set.len(), n, seed)?
        .into_iter()
        .map(|i| set.documents[i].clone())
        .collect();
    Ok(DocumentSet { documents, source_path: set.source_path.clone(), sample_seed: Some(seed) })
}
