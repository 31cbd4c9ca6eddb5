//! Response parsing, Micro-F1 and math-answer scoring.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{CallStatus, EvalRecord};
use crate::taskgen::TaskKind;

/// Bumped whenever parsing rules or the boilerplate list change.
pub const PARSER_VERSION: &str = "v1";
const BOILERPLATE: &str = include_str!("../assets/boilerplate_prefixes.txt");
const MATH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Trimmed, case-insensitive, interior whitespace significant.
    #[default]
    Exact,
    /// Diagnostic: all whitespace removed before comparing.
    Relaxed,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "relaxed" => Ok(MatchMode::Relaxed),
            other => Err(Error::arg(format!("unknown match mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cleanup {
    /// The response line, trimmed.
    pub raw: String,
    /// Decorations stripped, outermost first.
    pub removed: Vec<String>,
    /// Index into `predicted_lines`, or `None` if the line was dropped as boilerplate.
    pub kept: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinePrediction {
    pub predicted_lines: Vec<String>,
    pub cleanup_log: Vec<Cleanup>,
}

impl LinePrediction {
    /// Bare predictions with no decorations, as a caller-built prediction.
    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Self {
        let mut p = LinePrediction::default();
        for line in lines {
            let t = line.as_ref().trim();
            if t.is_empty() {
                continue;
            }
            p.cleanup_log.push(Cleanup { raw: t.to_owned(), removed: vec![], kept: Some(p.predicted_lines.len()) });
            p.predicted_lines.push(t.to_owned());
        }
        p
    }

    fn candidates(&self) -> Vec<Vec<&str>> {
        let mut raw: Vec<Option<&str>> = vec![None; self.predicted_lines.len()];
        for c in &self.cleanup_log {
            if let Some(i) = c.kept {
                if !c.removed.is_empty() {
                    raw[i] = Some(&c.raw);
                }
            }
        }
        self.predicted_lines
            .iter()
            .zip(raw)
            .map(|(clean, raw)| raw.into_iter().chain(std::iter::once(clean.as_str())).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MicroCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::Add for MicroCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::iter::Sum for MicroCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn boilerplate_prefixes() -> &'static [String] {
    static PREFIXES: OnceLock<Vec<String>> = OnceLock::new();
    PREFIXES.get_or_init(|| {
        BOILERPLATE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect()
    })
}

fn is_boilerplate(line: &str) -> bool {
    if line.starts_with("```") {
        return true;
    }
    let lower = line.to_lowercase();
    lower.ends_with(':') && boilerplate_prefixes().iter().any(|p| lower.starts_with(p.as_str()))
}

fn strip_marker(line: &str) -> Option<(&str, &str)> {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let marker_len = if digits > 0 && matches!(line[digits..].chars().next(), Some('.' | ')')) {
        digits + 1
    } else if matches!(line.chars().next(), Some('-' | '*' | '•')) {
        line.chars().next().map_or(0, char::len_utf8)
    } else {
        return None;
    };
    let rest = &line[marker_len..];
    if rest.starts_with(char::is_whitespace) {
        Some((&line[..marker_len], rest.trim()))
    } else {
        None
    }
}

fn strip_quotes(line: &str) -> Option<(&str, &str)> {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    let first = line.chars().next()?;
    let last = line.chars().last()?;
    if line.chars().count() < 2 {
        return None;
    }
    PAIRS
        .iter()
        .find(|(o, c)| *o == first && *c == last)
        .map(|_| (&line[..first.len_utf8()], &line[first.len_utf8()..line.len() - last.len_utf8()]))
}

/// Splits a response into predicted lines: trims each line, strips one list
/// marker (`-`, `*`, `•`, `1.`, `1)`) and one pair of surrounding quotes,
/// and drops empty lines, code fences and answer headers. Interior spacing
/// is preserved.
pub fn parse_predicted_lines(raw_response: &str) -> LinePrediction {
    let mut out = LinePrediction::default();
    for line in raw_response.lines() {
        let raw = line.trim();
        if raw.is_empty() {
            continue;
        }
        if raw.starts_with("```") {
            out.cleanup_log.push(Cleanup { raw: raw.to_owned(), removed: Vec::new(), kept: None });
            continue;
        }
        let mut removed = Vec::new();
        let mut text = raw;
        if let Some((marker, rest)) = strip_marker(text) {
            removed.push(marker.to_owned());
            text = rest;
        }
        if let Some((quote, inner)) = strip_quotes(text) {
            removed.push(quote.to_owned());
            text = inner.trim();
        }
        let kept = if text.is_empty() || is_boilerplate(text) {
            None
        } else {
            out.predicted_lines.push(text.to_owned());
            Some(out.predicted_lines.len() - 1)
        };
        out.cleanup_log.push(Cleanup { raw: raw.to_owned(), removed, kept });
    }
    out
}

pub fn normalize(line: &str, mode: MatchMode) -> String {
    match mode {
        MatchMode::Exact => line.trim().to_lowercase(),
        MatchMode::Relaxed => line.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase(),
    }
}

/// Multiset matching of predictions against truth lines. A prediction may
/// match either in its cleaned form or, when decorations were stripped, in
/// its verbatim form (so a diff line starting with `-` still matches); the
/// pairing is a maximum matching, so no greedy choice can cost a hit.
pub fn score_instance<S: AsRef<str>>(predicted: &LinePrediction, truth_lines: &[S], mode: MatchMode) -> MicroCounts {
    let mut truth_by_key: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, t) in truth_lines.iter().enumerate() {
        truth_by_key.entry(normalize(t.as_ref(), mode)).or_default().push(i);
    }
    let adjacency: Vec<Vec<usize>> = predicted
        .candidates()
        .into_iter()
        .map(|forms| {
            let mut edges: Vec<usize> = Vec::new();
            for form in forms {
                if let Some(ts) = truth_by_key.get(&normalize(form, mode)) {
                    edges.extend(ts);
                }
            }
            edges.sort_unstable();
            edges.dedup();
            edges
        })
        .collect();
    let tp = max_matching(&adjacency, truth_lines.len());
    MicroCounts { tp, fp: predicted.predicted_lines.len() - tp, fn_: truth_lines.len() - tp }
}

/// Kuhn's augmenting-path matching; returns the matching size.
fn max_matching(adjacency: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].map_or(true, |w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; right];
    let mut size = 0;
    for u in 0..adjacency.len() {
        if adjacency[u].is_empty() {
            continue;
        }
        let mut seen = vec![false; right];
        if augment(u, adjacency, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Micro-averaged F1 over pooled counts. With no true positives the score
/// is 0; a pool with no predictions and no targets has no defined F1.
pub fn micro_f1(counts: &[MicroCounts]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::arg("micro_f1 of an empty list"));
    }
    let total: MicroCounts = counts.iter().copied().sum();
    if total.tp == 0 {
        if total.fp + total.fn_ == 0 {
            return Err(Error::arg("micro_f1 undefined: no predictions and no targets"));
        }
        return Ok(0.0);
    }
    let precision = total.tp as f64 / (total.tp + total.fp) as f64;
    let recall = total.tp as f64 / (total.tp + total.fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"####\s*\[?\s*\$?\s*([-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+))").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d[\d,]*(?:\.\d+)?").unwrap())
}

fn parse_number(text: &str) -> Option<f64> {
    text.replace(',', "").parse().ok()
}

/// The number after the final `####` marker, else the last number in the
/// response. Thousands separators are ignored.
pub fn extract_math_answer(raw_response: &str) -> Option<f64> {
    if let Some(c) = marker_re().captures_iter(raw_response).last() {
        if let Some(v) = parse_number(&c[1]) {
            return Some(v);
        }
    }
    let m = number_re().find_iter(raw_response).last()?;
    let value = parse_number(m.as_str())?;
    // a minus sign counts only when it is not a subtraction between operands
    let before: Vec<char> = raw_response[..m.start()].chars().rev().take(2).collect();
    let negative = before.first() == Some(&'-') && before.get(1).map_or(true, |c| !c.is_alphanumeric());
    Some(if negative { -value } else { value })
}

pub fn math_correct(extracted: Option<f64>, gold: f64) -> bool {
    extracted.is_some_and(|v| (v - gold).abs() <= MATH_TOLERANCE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub mode: MatchMode,
    pub parser_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicted_lines: Vec<String>,
    pub counts: MicroCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// Scores one stored record. Records that did not complete are left unscored.
pub fn score_record(record: &EvalRecord, mode: MatchMode) -> Option<RecordScore> {
    if record.status != CallStatus::Ok {
        return None;
    }
    let score = match record.task {
        TaskKind::Math => {
            let extracted = extract_math_answer(&record.raw_response);
            let correct = record.gold.map(|g| math_correct(extracted, g));
            RecordScore {
                mode,
                parser_version: PARSER_VERSION.into(),
                predicted_lines: Vec::new(),
                counts: MicroCounts::default(),
                extracted,
                correct,
            }
        }
        TaskKind::Absence | TaskKind::Insertion => {
            let prediction = parse_predicted_lines(&record.raw_response);
            let counts = score_instance(&prediction, &record.truth_lines, mode);
            RecordScore {
                mode,
                parser_version: PARSER_VERSION.into(),
                predicted_lines: prediction.predicted_lines,
                counts,
                extracted: None,
                correct: None,
            }
        }
    };
    Some(score)
}
