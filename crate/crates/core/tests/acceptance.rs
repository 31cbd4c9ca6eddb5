//! Acceptance checks. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fragbench_core::analyze::{self, Curve, Metric, DEFAULT_DELTA};
use fragbench_core::corpus::{Document, DocumentSet, Domain};
use fragbench_core::levels::{default_levels, level_key};
use fragbench_core::perturb::{self, FragmentationMode, FragmentationSpec};
use fragbench_core::runner::{
    self, CallStatus, EvalRecord, FaultInjector, LossyMock, ModelConfig, RecordStore, RunManifest, Sweep, SweepInputs,
};
use fragbench_core::score::{self, micro_f1, MatchMode, MicroCounts};
use fragbench_core::taskgen::{self, MaskMode, TaskKind};
use fragbench_core::tokenstats::{self, EntropyPoint, TokenModel};

/// Exact-equality tolerance for fragmentation rates.
const RATE_TOL: f64 = 0.0;
/// Allowed gap between mean measured rate and p.
const MEAN_WFR_TOL: f64 = 0.05;
const ENTROPY_TOL: f64 = 1e-12;
const ENTROPY_BUMP_BITS: f64 = 0.2;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t < limit, "took {t:?}, limit {limit:?}");
    Ok(t)
}

fn random_line(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'Q', 'z', '7', '.', ',', 'é', 'ß', '漢', '😀', ' ', ' ', ' ', '\t'];
    let len = rng.gen_range(0..40);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn slot_runs(line: &str) -> Vec<usize> {
    line.split([' ', '\t']).map(|w| w.chars().count()).filter(|&n| n > 0).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let modes = [
        FragmentationSpec::random_slot(0.0, 0),
        FragmentationSpec::fixed_slot(0.0, 0),
        FragmentationSpec::nth_slot(2, 0.0, 0),
        FragmentationSpec::nth_slot(4, 0.0, 0),
        FragmentationSpec::interword(0.0, 0),
    ];
    let mut checked = 0;
    for doc in 0..1000u64 {
        let lines: Vec<String> = (0..rng.gen_range(1..6)).map(|_| random_line(&mut rng)).collect();
        let runs: Vec<usize> = lines.iter().flat_map(|l| slot_runs(l)).collect();
        for base in &modes {
            for level in default_levels() {
                let spec = base.at_level(level).with_seed(doc);
                let r = perturb::fragment(&lines, &spec).map_err(|e| e.to_string())?;
                ensure!(r.defragment() == lines, "round trip failed for {lines:?} under {spec:?}");
                let expected = r.inserted as f64 / r.eligible.max(1) as f64;
                ensure!((r.measured_wfr - expected).abs() <= RATE_TOL, "rate {} != {expected}", r.measured_wfr);
                if level == 0.0 {
                    ensure!(r.lines == lines, "p=0 changed {lines:?}");
                }
                if level == 1.0 {
                    let full = match spec.mode {
                        FragmentationMode::RandomSlot => runs.iter().map(|n| n - 1).sum::<usize>(),
                        FragmentationMode::FixedSlot => runs.iter().filter(|&&n| n >= 2).count(),
                        FragmentationMode::NthSlot => runs.iter().filter(|&&n| n > spec.n.unwrap()).count(),
                        FragmentationMode::InterwordControl => r.eligible,
                    };
                    ensure!(r.inserted == full, "p=1 inserted {} expected {full} under {spec:?}", r.inserted);
                }
                if spec.mode == FragmentationMode::RandomSlot {
                    let measured = perturb::measure_wfr(&lines, &r.lines).map_err(|e| e.to_string())?;
                    ensure!(measured == r.measured_wfr, "measure_wfr disagrees");
                }
                checked += 1;
            }
        }
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!("{checked} fragmentations exact, {t:.2?}"))
}

trait WithSeed {
    fn with_seed(self, seed: u64) -> Self;
}
impl WithSeed for FragmentationSpec {
    fn with_seed(self, frag_seed: u64) -> Self {
        Self { frag_seed, ..self }
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let line = ["abcdefghijk"];
    let mut parts = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let mut total = 0.0;
        for seed in 0..1000 {
            total += perturb::random_slot_fragment(&line, p, seed).map_err(|e| e.to_string())?.measured_wfr;
        }
        let mean = total / 1000.0;
        ensure!((mean - p).abs() <= MEAN_WFR_TOL, "p={p}: mean {mean}");
        parts.push(format!("p={p} mean={mean:.4}"));
    }
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!("{}, {t:.2?}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let r = perturb::fixed_slot_fragment(&["hello world"], 1.0, 0).map_err(|e| e.to_string())?;
    ensure!(r.lines == ["h ello w orld"], "got {:?}", r.lines);
    ensure!(r.measured_wfr == 0.25, "rate {}", r.measured_wfr);
    Ok("\"h ello w orld\", rate 0.25".into())
}

fn corpus(n: usize, lines: usize, seed: u64) -> DocumentSet {
    let words = ["ledger", "harbor", "quantum", "ribbon", "velvet", "cobalt", "meadow", "lantern", "pistol", "orchid", "a", "of"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = (0..n)
        .map(|d| {
            let body = (0..lines)
                .map(|i| {
                    let mut w: Vec<&str> = (0..rng.gen_range(4..10)).map(|_| words[rng.gen_range(0..words.len())]).collect();
                    let tag = format!("L{d}x{i}");
                    w.push(&tag);
                    w.join(" ")
                })
                .collect();
            Document::new(format!("doc{d:02}"), Domain::Legal, body).unwrap()
        })
        .collect();
    DocumentSet { documents, source_path: "synthetic".into(), sample_seed: None }
}

fn criterion_4() -> Outcome {
    let set = corpus(10, 40, 4);
    let target_seed = 17;
    let mut instances = 0;
    for doc in set.iter() {
        let mask = taskgen::select_targets(doc, 0.1, target_seed, MaskMode::Omit).map_err(|e| e.to_string())?;
        let clean: Vec<&String> = mask.indices.iter().map(|&i| &doc.lines[i]).collect();
        for frag_seed in 0..10 {
            for level in default_levels() {
                let again = taskgen::select_targets(doc, 0.1, target_seed, MaskMode::Omit).map_err(|e| e.to_string())?;
                let spec = FragmentationSpec::random_slot(level, frag_seed);
                let inst = taskgen::build_absence_instance(doc, &again, &spec).map_err(|e| e.to_string())?;
                ensure!(inst.mask_indices == mask.indices, "{}: mask moved at level {level}", doc.id);
                let defrag = inst.clean_truth_lines();
                ensure!(defrag.iter().collect::<Vec<_>>() == clean, "{}: truth mismatch at {level}/{frag_seed}", doc.id);
                instances += 1;
            }
        }
    }
    Ok(format!("{instances} instances, 0 mismatches"))
}

fn decorate(line: &str, i: usize, rng: &mut ChaCha8Rng) -> String {
    let cased: String = line
        .chars()
        .map(|c| match rng.gen_range(0..3) {
            0 => c.to_uppercase().next().unwrap(),
            1 => c.to_lowercase().next().unwrap(),
            _ => c,
        })
        .collect();
    match i % 4 {
        0 => format!("- {cased}"),
        1 => format!("{}. {cased}", i + 1),
        2 => format!("* {cased}"),
        _ => cased,
    }
}

fn criterion_5() -> Outcome {
    let set = corpus(50, 30, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut pooled = Vec::new();
    for (d, doc) in set.iter().enumerate() {
        let mask = taskgen::select_targets(doc, 0.1, d as u64, MaskMode::Omit).map_err(|e| e.to_string())?;
        for k in 0..10 {
            let spec = FragmentationSpec::random_slot(k as f64 / 10.0, k);
            let inst = taskgen::build_absence_instance(doc, &mask, &spec).map_err(|e| e.to_string())?;
            let response = std::iter::once("Here are the missing lines:".to_string())
                .chain(inst.truth_lines.iter().enumerate().map(|(i, l)| decorate(l, i, &mut rng)))
                .collect::<Vec<_>>()
                .join("\n");
            let counts = score::score_instance(&score::parse_predicted_lines(&response), &inst.truth_lines, MatchMode::Exact);
            ensure!(counts.fp == 0 && counts.fn_ == 0, "{}: {counts:?} for {response:?}", doc.id);
            pooled.push(counts);
        }
    }
    let f1 = micro_f1(&pooled).map_err(|e| e.to_string())?;
    ensure!(f1 == 1.0, "oracle F1 {f1}");
    let worked = score::score_instance(&score::LinePrediction::from_lines(&["A", "B"]), &["A", "C"], MatchMode::Exact);
    ensure!(worked == MicroCounts::new(1, 1, 1), "worked example counts {worked:?}");
    let f = micro_f1(&[worked]).map_err(|e| e.to_string())?;
    ensure!(f == 0.5, "worked example F1 {f}");
    Ok(format!("{} instances at F1 1.0; {{A,B}} vs {{A,C}} = {f}", pooled.len()))
}

fn criterion_6() -> Outcome {
    let a = score::extract_math_answer("Adding them up. The answer is #### 42");
    ensure!(a == Some(42.0), "marker case gave {a:?}");
    let b = score::extract_math_answer("so she has 7 apples");
    ensure!(b == Some(7.0), "fallback case gave {b:?}");
    let c = score::extract_math_answer("The answer is #### 13.00");
    ensure!(score::math_correct(c, 13.0), "13.00 vs 13 gave {c:?}");
    Ok("42, 7, 13.00 = 13".into())
}

fn toy_model() -> TokenModel {
    let mut m = TokenModel::byte_level("toy");
    for t in [
        "ab", "bc", "ca", "aa", "abc", "cab", "bb", "abab", "cc", "bca", "aab", "ccc", "abca", "ba", "cabc", "bab", "aaa", "bcab", "cba",
        "abcabc",
    ] {
        m.push_token(t.as_bytes());
    }
    m
}

/// Straightforward BPE: merge the lowest-ranked adjacent pair (leftmost on
/// ties) until no adjacent pair forms a known token.
fn reference_encode(model: &TokenModel, bytes: &[u8]) -> Vec<u32> {
    let mut parts: Vec<Vec<u8>> = bytes.iter().map(|&b| vec![b]).collect();
    loop {
        let mut best: Option<(u32, usize)> = None;
        for i in 0..parts.len().saturating_sub(1) {
            let joined = [parts[i].as_slice(), parts[i + 1].as_slice()].concat();
            if let Some(r) = model.rank(&joined) {
                if best.map_or(true, |(br, _)| r < br) {
                    best = Some((r, i));
                }
            }
        }
        let Some((_, i)) = best else { break };
        let right = parts.remove(i + 1);
        parts[i].extend(right);
    }
    parts.iter().map(|p| model.rank(p).unwrap()).collect()
}

fn criterion_7() -> Outcome {
    let cases: [(&[u32], f64); 3] = [(&[1, 2], 1.0), (&[1, 1, 2, 3], 1.5), (&[4, 4, 4, 4], 0.0)];
    for (ids, want) in cases {
        let got = tokenstats::token_entropy(ids);
        ensure!((got - want).abs() <= ENTROPY_TOL, "entropy of {ids:?} = {got}, want {want}");
    }
    let model = toy_model();
    ensure!(model.len() == 256 + 20, "toy model has {} tokens", model.len());
    let mut strings = 0u64;
    let mut buf = Vec::new();
    for len in 0..=12u32 {
        for code in 0..3u64.pow(len) {
            buf.clear();
            let mut c = code;
            for _ in 0..len {
                buf.push(b"abc"[(c % 3) as usize]);
                c /= 3;
            }
            let fast = tokenstats::encode_bytes(&model, &buf);
            let slow = reference_encode(&model, &buf);
            ensure!(fast == slow, "encoding of {:?} differs: {fast:?} vs {slow:?}", String::from_utf8_lossy(&buf));
            strings += 1;
        }
    }
    Ok(format!("entropy cases exact; {strings} strings encode identically"))
}

fn mock_sweep(profile: &[(f64, f64)], docs: &DocumentSet) -> Result<(Curve, Vec<EvalRecord>), String> {
    let mut m = RunManifest::new("accept", TaskKind::Absence, Domain::Legal, "synthetic");
    m.frag_seeds = vec![0, 1, 2];
    m.target_seed = 8;
    let inputs = SweepInputs { docs: docs.clone(), ..Default::default() };
    let sweep = Sweep::new(&m, &inputs).map_err(|e| e.to_string())?;
    let model = LossyMock::new("lossy", profile, 0.0, 99).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("records.jsonl");
    let mut store = RecordStore::open(&path).map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::new("lossy");
    cfg.max_inflight = 8;
    let s = runner::run_sweep(&sweep, &model, &cfg, &mut store).map_err(|e| e.to_string())?;
    ensure!(s.ok == 10 * 11 * 3, "sweep summary {s:?}");
    let records = runner::read_records(&path).map_err(|e| e.to_string())?;
    let curve = analyze::aggregate_curve(&records, Metric::MicroF1).map_err(|e| e.to_string())?;
    Ok((curve, records))
}

const U_PROFILE: [(f64, f64); 3] = [(0.0, 0.9), (0.5, 0.4), (1.0, 0.7)];

fn criterion_8(f1_out: &mut Option<Curve>) -> Outcome {
    let start = Instant::now();
    let docs = corpus(10, 100, 8);
    let (curve, _) = mock_sweep(&U_PROFILE, &docs)?;
    let v = analyze::detect_valley(&curve, DEFAULT_DELTA).map_err(|e| e.to_string())?;
    let at = level_key(v.level_at_min);
    ensure!([400, 500, 600].contains(&at), "minimum at {}", v.level_at_min);
    ensure!(v.depth >= 0.3, "depth {}", v.depth);
    ensure!(v.rebound >= 0.15, "rebound {}", v.rebound);
    ensure!(v.is_u_shaped, "not U-shaped: {v:?}");
    let (mono, _) = mock_sweep(&[(0.0, 0.9), (1.0, 0.3)], &docs)?;
    let mv = analyze::detect_valley(&mono, DEFAULT_DELTA).map_err(|e| e.to_string())?;
    ensure!(!mv.is_u_shaped, "monotone profile flagged as U: {mv:?}");
    let t = within(Duration::from_secs(60), start)?;
    *f1_out = Some(curve);
    Ok(format!(
        "min {:.3} at {}, depth {:.3}, rebound {:.3}; monotone not U; {t:.2?}",
        v.f1_min, v.level_at_min, v.depth, v.rebound
    ))
}

/// Long words over a two-letter alphabet, each a single token when intact.
fn criterion_9(f1: Option<&Curve>) -> Outcome {
    let f1 = f1.ok_or("criterion 8 produced no F1 curve")?;
    let words = ["abaabbab", "bbabaaba", "aabbabab", "babbaaba"];
    let mut model = TokenModel::byte_level("prefix-toy");
    for w in words {
        for end in 2..=w.len() {
            model.push_token(&w.as_bytes()[..end]);
        }
        model.push_token(format!(" {w}").as_bytes());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let documents = (0..10)
        .map(|d| {
            let lines = (0..20)
                .map(|_| (0..12).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" "))
                .collect();
            Document::new(format!("syn{d}"), Domain::Legal, lines).unwrap()
        })
        .collect();
    let docs = DocumentSet { documents, source_path: "synthetic".into(), sample_seed: None };
    let points: Vec<EntropyPoint> = tokenstats::entropy_curve(&docs, &default_levels(), &FragmentationSpec::random_slot(0.0, 0), &model)
        .map_err(|e| e.to_string())?;
    let ent = analyze::entropy_to_curve(&points).map_err(|e| e.to_string())?;
    let means = ent.means();
    let (first, last) = (means[0], means[means.len() - 1]);
    let peak = means[1..means.len() - 1].iter().cloned().fold(f64::MIN, f64::max);
    ensure!(
        peak - first >= ENTROPY_BUMP_BITS && peak - last >= ENTROPY_BUMP_BITS,
        "entropy not inverted-U: {means:?}"
    );
    let off = analyze::entropy_offset(f1, &ent).map_err(|e| e.to_string())?;
    ensure!(off.offset < 0.0, "offset {off:?}");
    Ok(format!(
        "entropy {first:.2} -> peak {peak:.2} -> {last:.2} bits; peak at {}, F1 min at {}, offset {:.1}",
        off.level_entropy_peak, off.level_f1_min, off.offset
    ))
}

fn criterion_10() -> Outcome {
    let docs = corpus(10, 30, 10);
    let mut m = RunManifest::new("exclusion", TaskKind::Absence, Domain::Legal, "synthetic");
    m.frag_seeds = vec![0, 1, 2];
    let inputs = SweepInputs { docs, ..Default::default() };
    let sweep = Sweep::new(&m, &inputs).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let specs = sweep.job_specs();
    let picked = rand::seq::index::sample(&mut rng, specs.len(), 100);
    let failing: Vec<(String, i64, u64)> = picked
        .iter()
        .map(|i| {
            let k = sweep.key(&specs[i], "lossy");
            (k.doc_id, k.level, k.frag_seed)
        })
        .collect();
    let model = FaultInjector::new(LossyMock::new("lossy", &U_PROFILE, 0.05, 3).map_err(|e| e.to_string())?)
        .context_length_for(failing);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("r.jsonl");
    let mut store = RecordStore::open(&path).map_err(|e| e.to_string())?;
    let s = runner::run_sweep(&sweep, &model, &ModelConfig::new("lossy"), &mut store).map_err(|e| e.to_string())?;
    ensure!(s.context_length_error == 100, "injected {} context errors", s.context_length_error);

    let mut records = runner::read_records(&path).map_err(|e| e.to_string())?;
    // Give failed records a score that would visibly drag any curve down.
    for r in &mut records {
        r.score = score::score_record(r, MatchMode::Exact);
        if r.status == CallStatus::ContextLengthError {
            let mut poison = score::score_record(&EvalRecord { status: CallStatus::Ok, ..r.clone() }, MatchMode::Exact).unwrap();
            poison.counts = MicroCounts::new(0, 1000, 1000);
            r.score = Some(poison);
        }
    }
    let all = analyze::aggregate_curve(&records, Metric::MicroF1).map_err(|e| e.to_string())?;
    let ok_only: Vec<EvalRecord> = records.iter().filter(|r| r.status == CallStatus::Ok).cloned().collect();
    let clean = analyze::aggregate_curve(&ok_only, Metric::MicroF1).map_err(|e| e.to_string())?;
    ensure!(all.excluded == 100, "excluded {}", all.excluded);
    ensure!(all.points == clean.points, "context-length records leaked into the curve");
    let n: HashMap<i64, usize> = all.points.iter().map(|p| (level_key(p.level), p.n)).collect();
    ensure!(n.values().all(|&k| k <= 3), "more samples than seeds: {n:?}");
    Ok(format!("100 injected, 100 excluded, curve identical to ok-only curve across {} levels", all.points.len()))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {name}: PASS ({detail})");
            true
        }
        Err(why) => {
            println!("criterion {name}: FAIL ({why})");
            false
        }
    }
}

fn main() {
    let mut f1 = None;
    let results = [
        run("1 fragmentation exactness", criterion_1),
        run("2 wfr statistics", criterion_2),
        run("3 fixed-slot semantics", criterion_3),
        run("4 task separability", criterion_4),
        run("5 scoring oracle", criterion_5),
        run("6 math extraction", criterion_6),
        run("7 entropy correctness", criterion_7),
        run("8 end-to-end mock valley", || criterion_8(&mut f1)),
        run("9 entropy offset", || criterion_9(f1.as_ref())),
        run("10 exclusion bookkeeping", criterion_10),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
