//! Byte-level BPE encoding and token-distribution entropy.
//!
//! Encoding is plain rank-ordered BPE over the whole byte string: start from
//! single bytes and repeatedly merge the adjacent pair whose concatenation
//! has the lowest rank (leftmost on ties) until no adjacent pair is in the
//! vocabulary. No pre-tokenization split is applied, so ids can differ from
//! production encoders that split on a regex first.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::corpus::DocumentSet;
use crate::error::{Error, Result};
use crate::perturb::FragmentationSpec;

pub type TokenId = u32;

#[derive(Debug, Clone)]
pub struct TokenModel {
    pub name: String,
    ranks: HashMap<Vec<u8>, TokenId>,
    tokens: HashMap<TokenId, Vec<u8>>,
}

impl TokenModel {
    /// All 256 single bytes, each ranked by its byte value.
    pub fn byte_level(name: impl Into<String>) -> Self {
        let mut m = Self { name: name.into(), ranks: HashMap::new(), tokens: HashMap::new() };
        for b in 0..=255u8 {
            m.ranks.insert(vec![b], TokenId::from(b));
            m.tokens.insert(TokenId::from(b), vec![b]);
        }
        m
    }

    /// Adds `bytes` with the next free rank. Re-adding an existing token is a no-op.
    pub fn push_token(&mut self, bytes: &[u8]) -> TokenId {
        if let Some(&r) = self.ranks.get(bytes) {
            return r;
        }
        let rank = self.tokens.keys().max().map_or(0, |m| m + 1);
        self.ranks.insert(bytes.to_vec(), rank);
        self.tokens.insert(rank, bytes.to_vec());
        rank
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank(&self, bytes: &[u8]) -> Option<TokenId> {
        self.ranks.get(bytes).copied()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(&id).map(Vec::as_slice)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Option<Vec<u8>> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(self.token_bytes(*id)?);
        }
        Some(out)
    }
}

/// Reads a rank file: one `base64(token_bytes) rank` pair per line.
pub fn load_token_model(rank_file: impl AsRef<Path>) -> Result<TokenModel> {
    let path = rank_file.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map_or_else(|| "ranks".to_owned(), |s| s.to_string_lossy().into_owned());
    parse_token_model(&text, &name)
}

pub fn parse_token_model(text: &str, name: &str) -> Result<TokenModel> {
    let mut ranks = HashMap::new();
    let mut tokens = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Format { line: line_no, message };
        let (b64, rank) = line
            .split_once(' ')
            .ok_or_else(|| bad("expected `base64 rank`".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| bad(format!("bad base64: {e}")))?;
        let rank: TokenId = rank.trim().parse().map_err(|e| bad(format!("bad rank: {e}")))?;
        if bytes.is_empty() {
            return Err(bad("empty token".into()));
        }
        if tokens.insert(rank, bytes.clone()).is_some() {
            return Err(bad(format!("duplicate rank {rank}")));
        }
        if ranks.insert(bytes, rank).is_some() {
            return Err(bad("duplicate token bytes".into()));
        }
    }
    if let Some(b) = (0..=255u8).find(|b| !ranks.contains_key(&vec![*b])) {
        return Err(Error::Format { line: 0, message: format!("single-byte token 0x{b:02x} is missing") });
    }
    Ok(TokenModel { name: name.to_owned(), ranks, tokens })
}

/// Writes `model` in rank-file format, ordered by rank.
pub fn write_token_model(model: &TokenModel) -> String {
    let mut ids: Vec<&TokenId> = model.tokens.keys().collect();
    ids.sort();
    let mut out = String::new();
    for id in ids {
        out.push_str(&base64::engine::general_purpose::STANDARD.encode(&model.tokens[id]));
        out.push(' ');
        out.push_str(&id.to_string());
        out.push('\n');
    }
    out
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    rank: TokenId,
    left: usize,
    left_end: usize,
    right_end: usize,
}

/// Greedy lowest-rank BPE. Segments form a linked list over byte offsets;
/// stale heap entries are skipped by checking the recorded segment ends.
pub fn encode(model: &TokenModel, text: &str) -> Vec<TokenId> {
    encode_bytes(model, text.as_bytes())
}

pub fn encode_bytes(model: &TokenModel, bytes: &[u8]) -> Vec<TokenId> {
    let n = bytes.len();
    if n == 0 {
        return Vec::new();
    }
    // segment i starts at byte i; valid only while alive[i]
    let mut end: Vec<usize> = (1..=n).collect();
    let mut next: Vec<Option<usize>> = (1..=n).map(|i| (i < n).then_some(i)).collect();
    let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
    let mut alive = vec![true; n];
    let mut heap = BinaryHeap::new();

    let pair = |left: usize, end: &[usize], next: &[Option<usize>]| -> Option<Candidate> {
        let right = next[left]?;
        let rank = model.rank(&bytes[left..end[right]])?;
        Some(Candidate { rank, left, left_end: end[left], right_end: end[right] })
    };

    for i in 0..n.saturating_sub(1) {
        if let Some(c) = pair(i, &end, &next) {
            heap.push(Reverse(c));
        }
    }

    while let Some(Reverse(c)) = heap.pop() {
        let left = c.left;
        let Some(right) = next[left] else { continue };
        if !alive[left] || end[left] != c.left_end || end[right] != c.right_end {
            continue;
        }
        end[left] = end[right];
        alive[right] = false;
        next[left] = next[right];
        if let Some(after) = next[right] {
            prev[after] = Some(left);
        }
        if let Some(before) = prev[left] {
            if let Some(c) = pair(before, &end, &next) {
                heap.push(Reverse(c));
            }
        }
        if let Some(c) = pair(left, &end, &next) {
            heap.push(Reverse(c));
        }
    }

    let mut ids = Vec::new();
    let mut cursor = Some(0);
    while let Some(i) = cursor {
        let id = model
            .rank(&bytes[i..end[i]])
            .expect("every surviving segment is a single byte or a ranked merge");
        ids.push(id);
        cursor = next[i];
    }
    ids
}

/// Shannon entropy, in bits, of the empirical distribution of `ids`.
pub fn token_entropy(ids: &[TokenId]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for id in ids {
        *counts.entry(*id).or_default() += 1;
    }
    let total = ids.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    if h <= 0.0 {
        0.0
    } else {
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub doc_id: String,
    #[serde(rename = "wfr")]
    pub wfr_level: f64,
    #[serde(rename = "tokens")]
    pub token_count: usize,
    pub entropy_bits: f64,
}

/// Fragments every document at every level with `base` (its `p` is
/// replaced by each level), encodes the newline-joined text and records its
/// entropy. Points come out document-major, levels in the given order.
pub fn entropy_curve(docs: &DocumentSet, levels: &[f64], base: &FragmentationSpec, model: &TokenModel) -> Result<Vec<EntropyPoint>> {
    if levels.is_empty() {
        return Err(Error::arg("entropy curve needs at least one level"));
    }
    let mut points = Vec::with_capacity(docs.len() * levels.len());
    for doc in docs.iter() {
        for &level in levels {
            let frag = crate::perturb::fragment(&doc.lines, &base.at_level(level))?;
            let ids = encode(model, &frag.lines.join("\n"));
            points.push(EntropyPoint {
                doc_id: doc.id.clone(),
                wfr_level: level,
                token_count: ids.len(),
                entropy_bits: token_entropy(&ids),
            });
        }
    }
    Ok(points)
}

/// Mean entropy per level, levels ascending.
pub fn mean_by_level(points: &[EntropyPoint]) -> Vec<(f64, f64)> {
    let mut by_level: std::collections::BTreeMap<i64, (f64, f64, usize)> = Default::default();
    for p in points {
        let e = by_level.entry(crate::levels::level_key(p.wfr_level)).or_insert((p.wfr_level, 0.0, 0));
        e.1 += p.entropy_bits;
        e.2 += 1;
    }
    by_level.into_values().map(|(l, sum, n)| (l, sum / n as f64)).collect()
}

pub fn write_entropy_csv<W: std::io::Write>(points: &[EntropyPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_entropy_csv<R: std::io::Read>(input: R) -> Result<Vec<EntropyPoint>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<EntropyPoint>, _>>()
        .map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Format { line, message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct restatement of the merge rule: scan all pairs, merge the
    /// lowest-ranked leftmost one, repeat.
    fn naive(model: &TokenModel, bytes: &[u8]) -> Vec<TokenId> {
        let mut parts: Vec<Vec<u8>> = bytes.iter().map(|b| vec![*b]).collect();
        loop {
            let best = (0..parts.len().saturating_sub(1))
                .filter_map(|i| model.rank(&[parts[i].as_slice(), parts[i + 1].as_slice()].concat()).map(|r| (r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let right = parts.remove(i + 1);
            parts[i].extend(right);
        }
        parts.iter().map(|p| model.rank(p).unwrap()).collect()
    }

    fn toy(merges: &[&str]) -> TokenModel {
        let mut m = TokenModel::byte_level("toy");
        for t in merges {
            m.push_token(t.as_bytes());
        }
        m
    }

    #[test]
    fn no_merges_means_bytes() {
        assert_eq!(encode(&toy(&[]), "abc"), vec![97, 98, 99]);
        assert!(encode(&toy(&[]), "").is_empty());
    }

    #[test]
    fn single_merge() {
        let m = toy(&["ab"]);
        let ids = encode(&m, "abc");
        assert_eq!(ids, vec![256, 99]);
        assert_eq!(m.token_bytes(ids[0]), Some(&b"ab"[..]));
    }

    #[test]
    fn rank_order_beats_position() {
        let m = toy(&["bc", "ab"]);
        assert_eq!(encode(&m, "abc"), vec![97, 256]);
        let m = toy(&["aa"]);
        assert_eq!(encode(&m, "aaa"), vec![256, 97]);
    }

    #[test]
    fn rank_file_round_trip_and_errors() {
        let m = toy(&["ab"]);
        let text = write_token_model(&m);
        let back = parse_token_model(&text, "toy").unwrap();
        assert_eq!(back.len(), 257);
        assert_eq!(back.rank(b"ab"), Some(256));

        let corrupt = text.replacen("YWI=", "@@@", 1);
        assert!(matches!(parse_token_model(&corrupt, "x"), Err(Error::Format { line: 257, .. })));
        let dup = format!("{text}YWI= 300\n");
        assert!(matches!(parse_token_model(&dup, "x"), Err(Error::Format { .. })));
        let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_token_model(&missing, "x"), Err(Error::Format { line: 0, .. })));
    }

    #[test]
    fn entropy_hand_cases() {
        assert_eq!(token_entropy(&[7, 7, 7]), 0.0);
        assert!((token_entropy(&[1, 2]) - 1.0).abs() < 1e-12);
        assert!((token_entropy(&[1, 1, 2, 3]) - 1.5).abs() < 1e-12);
        assert_eq!(token_entropy(&[]), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let pts = vec![EntropyPoint { doc_id: "d".into(), wfr_level: 0.5, token_count: 10, entropy_bits: 2.25 }];
        let mut buf = Vec::new();
        write_entropy_csv(&pts, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("doc_id,wfr,tokens,entropy_bits\n"));
        assert_eq!(read_entropy_csv(buf.as_slice()).unwrap(), pts);
    }

    fn merge_list() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[abc]{2,4}", 0..20)
    }

    proptest! {
        #[test]
        fn matches_naive_reference(merges in merge_list(), text in "[abc ]{0,24}") {
            let refs: Vec<&str> = merges.iter().map(String::as_str).collect();
            let m = toy(&refs);
            prop_assert_eq!(encode(&m, &text), naive(&m, text.as_bytes()));
        }

        #[test]
        fn bytes_round_trip(merges in merge_list(), text in "\\PC{0,40}") {
            let refs: Vec<&str> = merges.iter().map(String::as_str).collect();
            let m = toy(&refs);
            let ids = encode(&m, &text);
            prop_assert_eq!(m.decode(&ids).unwrap(), text.as_bytes().to_vec());
        }

        #[test]
        fn entropy_bounds_and_permutation(mut ids in prop::collection::vec(0u32..12, 0..60)) {
            let h = token_entropy(&ids);
            let distinct = ids.iter().collect::<std::collections::HashSet<_>>().len();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (distinct.max(1) as f64).log2() + 1e-12);
            ids.reverse();
            ids.sort_by_key(|x| x % 5);
            prop_assert!((token_entropy(&ids) - h).abs() < 1e-12);
        }
    }
}
