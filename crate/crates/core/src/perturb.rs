//! Word-boundary perturbations.
//!
//! An *intra-word slot* is the gap between two adjacent non-whitespace
//! characters; a run of `k` non-whitespace characters has `k - 1` slots.
//! Only space and tab count as whitespace, and characters are Unicode scalar
//! values, so a slot never falls inside a multi-byte character.
//!
//! Every function here records where it inserted characters, so the input
//! can always be recovered with [`FragmentationResult::defragment`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, bernoulli};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentationMode {
    /// Independent Bernoulli(p) insertion at every intra-word slot.
    RandomSlot,
    /// At most one insertion per run, after its first character.
    FixedSlot,
    /// At most one insertion per run, after its n-th character.
    NthSlot,
    /// Single inter-word spaces widened to two spaces or space+tab.
    InterwordControl,
}

impl std::str::FromStr for FragmentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "random_slot" | "random" => Ok(Self::RandomSlot),
            "fixed_slot" | "fixed" => Ok(Self::FixedSlot),
            "nth_slot" | "nth" => Ok(Self::NthSlot),
            "interword_control" | "interword" => Ok(Self::InterwordControl),
            other => Err(Error::arg(format!("unknown fragmentation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationSpec {
    pub mode: FragmentationMode,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub frag_seed: u64,
}

impl FragmentationSpec {
    pub fn random_slot(p: f64, frag_seed: u64) -> Self {
        Self { mode: FragmentationMode::RandomSlot, p, n: None, frag_seed }
    }

    pub fn fixed_slot(p: f64, frag_seed: u64) -> Self {
        Self { mode: FragmentationMode::FixedSlot, p, n: None, frag_seed }
    }

    pub fn nth_slot(n: usize, p: f64, frag_seed: u64) -> Self {
        Self { mode: FragmentationMode::NthSlot, p, n: Some(n), frag_seed }
    }

    pub fn interword(p: f64, frag_seed: u64) -> Self {
        Self { mode: FragmentationMode::InterwordControl, p, n: None, frag_seed }
    }

    /// Same mode and seed at a different level.
    pub fn at_level(&self, p: f64) -> Self {
        Self { p, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if self.mode == FragmentationMode::NthSlot {
            match self.n {
                Some(n) if n >= 1 => {}
                _ => return Err(Error::arg("nth_slot mode needs n >= 1")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationResult {
    pub lines: Vec<String>,
    pub inserted: usize,
    pub eligible: usize,
    pub measured_wfr: f64,
    /// Per line, the character offsets (in the output line) of inserted characters.
    pub insertion_positions: Vec<Vec<usize>>,
}

impl FragmentationResult {
    fn new(lines: Vec<String>, positions: Vec<Vec<usize>>, inserted: usize, eligible: usize) -> Self {
        Self {
            lines,
            inserted,
            eligible,
            measured_wfr: rate(inserted, eligible),
            insertion_positions: positions,
        }
    }

    /// Removes every recorded insertion, recovering the input lines.
    pub fn defragment(&self) -> Vec<String> {
        self.lines
            .iter()
            .zip(&self.insertion_positions)
            .map(|(line, pos)| remove_insertions(line, pos))
            .collect()
    }
}

pub fn is_whitespace(c: char) -> bool {
    c == ' ' || c == '\t'
}

fn rate(inserted: usize, eligible: usize) -> f64 {
    inserted as f64 / eligible.max(1) as f64
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::arg(format!("probability {p} outside [0, 1]")))
    }
}

/// Number of intra-word slots in a line.
pub fn intra_word_slots(line: &str) -> usize {
    non_space_runs(line).map(|r| r.len.saturating_sub(1)).sum()
}

/// Deletes the characters at the given (sorted) character offsets.
pub fn remove_insertions(line: &str, positions: &[usize]) -> String {
    let mut skip = positions.iter().copied().peekable();
    line.chars()
        .enumerate()
        .filter(|(i, _)| {
            if skip.peek() == Some(i) {
                skip.next();
                false
            } else {
                true
            }
        })
        .map(|(_, c)| c)
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Run {
    start: usize,
    len: usize,
}

fn non_space_runs(line: &str) -> impl Iterator<Item = Run> + '_ {
    let mut chars = line.chars().enumerate().peekable();
    std::iter::from_fn(move || {
        while let Some((_, c)) = chars.peek() {
            if is_whitespace(*c) {
                chars.next();
            } else {
                break;
            }
        }
        let (start, _) = chars.next()?;
        let mut len = 1;
        while let Some((_, c)) = chars.peek() {
            if is_whitespace(*c) {
                break;
            }
            chars.next();
            len += 1;
        }
        Some(Run { start, len })
    })
}

/// Dispatches on `spec.mode`.
pub fn fragment<S: AsRef<str>>(lines: &[S], spec: &FragmentationSpec) -> Result<FragmentationResult> {
    spec.validate()?;
    match spec.mode {
        FragmentationMode::RandomSlot => random_slot_fragment(lines, spec.p, spec.frag_seed),
        FragmentationMode::FixedSlot => fixed_slot_fragment(lines, spec.p, spec.frag_seed),
        FragmentationMode::NthSlot => nth_slot_fragment(lines, spec.n.unwrap_or(1), spec.p, spec.frag_seed),
        FragmentationMode::InterwordControl => interword_perturb(lines, spec.p, spec.frag_seed),
    }
}

/// Walks every line left to right and, at each intra-word slot, inserts a
/// space with probability `p`. One draw per slot, lines in order.
pub fn random_slot_fragment<S: AsRef<str>>(lines: &[S], p: f64, frag_seed: u64) -> Result<FragmentationResult> {
    check_p(p)?;
    let mut rng = rng::seeded(frag_seed);
    let (mut inserted, mut eligible) = (0, 0);
    let mut out_lines = Vec::with_capacity(lines.len());
    let mut positions = Vec::with_capacity(lines.len());

    for line in lines {
        let chars: Vec<char> = line.as_ref().chars().collect();
        let mut out = String::with_capacity(line.as_ref().len() * 2);
        let mut out_len = 0;
        let mut pos = Vec::new();
        for (i, &c) in chars.iter().enumerate() {
            out.push(c);
            out_len += 1;
            let slot = chars.get(i + 1).is_some_and(|&next| !is_whitespace(c) && !is_whitespace(next));
            if slot {
                eligible += 1;
                if bernoulli(&mut rng, p) {
                    pos.push(out_len);
                    out.push(' ');
                    out_len += 1;
                    inserted += 1;
                }
            }
        }
        out_lines.push(out);
        positions.push(pos);
    }
    Ok(FragmentationResult::new(out_lines, positions, inserted, eligible))
}

/// First-slot fragmentation: each run of length >= 2 contributes all of its
/// `len - 1` slots to `eligible` but receives at most one space, after its
/// first character.
pub fn fixed_slot_fragment<S: AsRef<str>>(lines: &[S], p: f64, frag_seed: u64) -> Result<FragmentationResult> {
    check_p(p)?;
    Ok(single_slot(lines, 1, p, frag_seed))
}

/// Like [`fixed_slot_fragment`] but the space goes after the `n`-th
/// character. Runs shorter than `n + 1` are never split (and consume no
/// draw) yet still count their slots as eligible.
pub fn nth_slot_fragment<S: AsRef<str>>(lines: &[S], n: usize, p: f64, frag_seed: u64) -> Result<FragmentationResult> {
    check_p(p)?;
    if n < 1 {
        return Err(Error::arg("nth_slot needs n >= 1"));
    }
    Ok(single_slot(lines, n, p, frag_seed))
}

fn single_slot<S: AsRef<str>>(lines: &[S], n: usize, p: f64, frag_seed: u64) -> FragmentationResult {
    let mut rng = rng::seeded(frag_seed);
    let (mut inserted, mut eligible) = (0, 0);
    let mut out_lines = Vec::with_capacity(lines.len());
    let mut positions = Vec::with_capacity(lines.len());

    for line in lines {
        let line = line.as_ref();
        // character indices after which a space goes
        let mut split_after = Vec::new();
        for run in non_space_runs(line) {
            if run.len < 2 {
                continue;
            }
            eligible += run.len - 1;
            if run.len > n && bernoulli(&mut rng, p) {
                split_after.push(run.start + n - 1);
                inserted += 1;
            }
        }
        let mut out = String::with_capacity(line.len() + split_after.len());
        let mut pos = Vec::with_capacity(split_after.len());
        let mut next = split_after.iter().peekable();
        for (i, c) in line.chars().enumerate() {
            out.push(c);
            if next.peek() == Some(&&i) {
                next.next();
                pos.push(i + pos.len() + 1);
                out.push(' ');
            }
        }
        out_lines.push(out);
        positions.push(pos);
    }
    FragmentationResult::new(out_lines, positions, inserted, eligible)
}

/// Inter-word whitespace control. Each single space between two
/// non-whitespace characters is, with probability `p`, widened to either two
/// spaces or a space followed by a tab (chosen uniformly). The widening
/// character is recorded as the insertion, so `defragment` still applies.
///
/// Here `eligible` counts single inter-word spaces and `measured_wfr` is the
/// replacement rate; no intra-word slot is ever touched.
pub fn interword_perturb<S: AsRef<str>>(lines: &[S], p: f64, frag_seed: u64) -> Result<FragmentationResult> {
    check_p(p)?;
    let mut rng = rng::seeded(frag_seed);
    let (mut inserted, mut eligible) = (0, 0);
    let mut out_lines = Vec::with_capacity(lines.len());
    let mut positions = Vec::with_capacity(lines.len());

    for line in lines {
        let chars: Vec<char> = line.as_ref().chars().collect();
        let mut out = String::with_capacity(line.as_ref().len() + 8);
        let mut out_len = 0;
        let mut pos = Vec::new();
        for (i, &c) in chars.iter().enumerate() {
            out.push(c);
            out_len += 1;
            let single_gap = c == ' '
                && i > 0
                && !is_whitespace(chars[i - 1])
                && chars.get(i + 1).is_some_and(|&next| !is_whitespace(next));
            if single_gap {
                eligible += 1;
                if bernoulli(&mut rng, p) {
                    let extra = if rand::Rng::gen_bool(&mut rng, 0.5) { ' ' } else { '\t' };
                    pos.push(out_len);
                    out.push(extra);
                    out_len += 1;
                    inserted += 1;
                }
            }
        }
        out_lines.push(out);
        positions.push(pos);
    }
    Ok(FragmentationResult::new(out_lines, positions, inserted, eligible))
}

/// Measures the fragmentation rate of `fragmented` against `original`.
///
/// `fragmented` must be obtainable from `original` by inserting at most one
/// space into each intra-word slot; slots are counted on the original.
pub fn measure_wfr<A: AsRef<str>, B: AsRef<str>>(original: &[A], fragmented: &[B]) -> Result<f64> {
    if original.len() != fragmented.len() {
        return Err(Error::Consistency(format!(
            "line count differs: {} original vs {} fragmented",
            original.len(),
            fragmented.len()
        )));
    }
    let (mut inserted, mut eligible) = (0, 0);
    for (idx, (o, f)) in original.iter().zip(fragmented).enumerate() {
        let o: Vec<char> = o.as_ref().chars().collect();
        let f: Vec<char> = f.as_ref().chars().collect();
        let mismatch = || Error::Consistency(format!("line {idx} is not an intra-word space insertion of the original"));
        let mut j = 0;
        for (i, &c) in o.iter().enumerate() {
            if f.get(j) != Some(&c) {
                return Err(mismatch());
            }
            j += 1;
            let slot = o.get(i + 1).is_some_and(|&next| !is_whitespace(c) && !is_whitespace(next));
            if slot {
                eligible += 1;
                // the next original char is non-whitespace, so a space here can only be an insertion
                if f.get(j) == Some(&' ') {
                    inserted += 1;
                    j += 1;
                }
            }
        }
        if j != f.len() {
            return Err(mismatch());
        }
    }
    Ok(rate(inserted, eligible))
}
