use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fragbench_core::analyze::{self, Curve, Metric, Summary, DEFAULT_DELTA};
use fragbench_core::corpus::{self, Document, DocumentSet, Domain, DEFAULT_GROUP_SIZE};
use fragbench_core::levels::parse_levels;
use fragbench_core::perturb::{self, FragmentationMode, FragmentationSpec};
use fragbench_core::prompt::IclLevel;
use fragbench_core::runner::{self, LossyMock, Model, ModelConfig, OpenAiCompatible, OracleMock, RecordStore, RunManifest, Sweep, SweepInputs};
use fragbench_core::score::{self, MatchMode};
use fragbench_core::taskgen::{TaskKind, DEFAULT_POOL_SIZE, DEFAULT_TARGET_RATE};
use fragbench_core::tokenstats;

#[derive(Parser)]
#[command(name = "fragbench", version, about = "Word-boundary fragmentation benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fragment every document of a corpus and write the result as a corpus.
    Fragment(FragmentArgs),
    /// Generate task instances with rendered prompts as JSON lines.
    GenTasks(SweepArgs),
    /// Write a run manifest describing a sweep.
    Manifest(ManifestArgs),
    /// Run a manifest against a model, appending to a record store.
    Run(RunArgs),
    /// Score records into a new file.
    Score(ScoreArgs),
    /// Tokenization entropy of the fragmented corpus at each level.
    Entropy(EntropyArgs),
    /// Aggregate records into curves and valley/offset reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_domain)]
    domain: Domain,
    /// Problems per document when grouping math questions into documents.
    #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
    group_size: usize,
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
}

impl CorpusArgs {
    fn load(&self) -> Result<DocumentSet> {
        let set = corpus::load_corpus(&self.corpus, self.domain, self.group_size)
            .with_context(|| format!("loading {}", self.corpus.display()))?;
        Ok(match self.sample_n {
            Some(n) => corpus::sample_documents(&set, n, self.sample_seed)?,
            None => set,
        })
    }
}

#[derive(Args)]
struct FragmentArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "random_slot", value_parser = parse_mode)]
    mode: FragmentationMode,
    #[arg(long)]
    p: f64,
    /// Slot position for nth-slot mode.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    frag_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_domain)]
    domain: Domain,
    #[arg(long, value_parser = parse_task)]
    task: TaskKind,
    #[arg(long, default_value_t = DEFAULT_TARGET_RATE)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    target_seed: u64,
    /// Comma-separated fragmentation seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    frag_seed: Vec<u64>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0.0:1.0:0.1")]
    wfr_levels: String,
    #[arg(long, default_value = "random_slot", value_parser = parse_mode)]
    mode: FragmentationMode,
    #[arg(long)]
    n: Option<usize>,
    /// Candidate needle file (one line per candidate) for insertion tasks.
    #[arg(long)]
    needle_pool: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
    group_size: usize,
    /// Prepend the three worked examples (absence tasks only).
    #[arg(long)]
    icl: bool,
    /// Fragment the examples at this fixed level instead of the instance level.
    #[arg(long, requires = "icl")]
    icl_level: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

impl SweepArgs {
    fn manifest(&self, name: &str) -> Result<RunManifest> {
        let abs = |p: &Path| std::fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()));
        let mut m = RunManifest::new(name, self.task, self.domain, abs(&self.corpus)?.display().to_string());
        m.needle_candidates = match &self.needle_pool {
            Some(p) => Some(abs(p)?.display().to_string()),
            None => None,
        };
        m.needle_pool_size = self.pool_size;
        m.wfr_levels = parse_levels(&self.wfr_levels)?;
        m.frag_seeds = self.frag_seed.clone();
        m.target_seed = self.target_seed;
        m.rate = self.rate;
        m.fragmentation = self.mode;
        m.nth = self.n;
        m.icl = self.icl.then(|| self.icl_level.map_or(IclLevel::Matched, IclLevel::Fixed));
        m.sample_n = self.sample_n;
        m.sample_seed = self.sample_seed;
        m.group_size = self.group_size;
        m.stamp_hashes(Path::new("/"))?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Args)]
struct ManifestArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, default_value = "sweep")]
    name: String,
    /// Model names recorded in the manifest (informational).
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `mock-oracle`, `mock-lossy`, or a name from --models-file.
    #[arg(long)]
    model: String,
    /// JSON array of model configurations.
    #[arg(long)]
    models_file: Option<PathBuf>,
    #[arg(long)]
    max_inflight: Option<usize>,
    #[arg(long)]
    store: PathBuf,
    /// Recall profile for mock-lossy, e.g. `0:0.9,0.5:0.4,1:0.7`.
    #[arg(long, default_value = "0:0.9,0.5:0.4,1:0.7")]
    profile: String,
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    #[arg(long, default_value_t = 0)]
    mock_seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "exact", value_parser = parse_match_mode)]
    mode: MatchMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Rank file: one `base64 rank` pair per line.
    #[arg(long)]
    ranks: PathBuf,
    #[arg(long, default_value = "0.0:1.0:0.1")]
    wfr_levels: String,
    #[arg(long, default_value = "random_slot", value_parser = parse_mode)]
    mode: FragmentationMode,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    frag_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    entropy_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value = "exact", value_parser = parse_match_mode)]
    mode: MatchMode,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.parse().map_err(|e: fragbench_core::Error| e.to_string())
}
fn parse_mode(s: &str) -> Result<FragmentationMode, String> {
    s.parse().map_err(|e: fragbench_core::Error| e.to_string())
}
fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: fragbench_core::Error| e.to_string())
}
fn parse_match_mode(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: fragbench_core::Error| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fragment(args: &FragmentArgs) -> Result<()> {
    let set = args.corpus.load()?;
    let spec = FragmentationSpec { mode: args.mode, p: args.p, n: args.n, frag_seed: args.frag_seed };
    spec.validate()?;
    let mut documents = Vec::with_capacity(set.len());
    let stdout = std::io::stdout();
    let mut report = stdout.lock();
    writeln!(report, "doc_id\tinserted\teligible\tmeasured_wfr")?;
    for doc in set.iter() {
        let r = perturb::fragment(&doc.lines, &spec)?;
        writeln!(report, "{}\t{}\t{}\t{:.6}", doc.id, r.inserted, r.eligible, r.measured_wfr)?;
        documents.push(Document::new(doc.id.clone(), doc.domain, r.lines)?);
    }
    let out = DocumentSet { documents, source_path: set.source_path.clone(), sample_seed: set.sample_seed };
    corpus::write_documents(&out, &args.out)?;
    Ok(())
}

fn gen_tasks(args: &SweepArgs) -> Result<()> {
    let manifest = args.manifest("gen-tasks")?;
    let inputs = SweepInputs::load(&manifest, Path::new("/"))?;
    if let Some(pool) = &inputs.pool {
        for w in &pool.warnings {
            log::warn!("needle pool: {w}");
        }
    }
    let sweep = Sweep::new(&manifest, &inputs)?;
    let mut out = create(&args.out)?;
    let mut count = 0;
    for spec in sweep.job_specs() {
        let job = sweep.build_job(&spec)?;
        serde_json::to_writer(&mut out, &job)?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    eprintln!("wrote {count} instances to {}", args.out.display());
    Ok(())
}

fn write_manifest(args: &ManifestArgs, out: &Path) -> Result<()> {
    let mut m = args.sweep.manifest(&args.name)?;
    m.models = args.models.clone();
    m.save(out)?;
    eprintln!("wrote manifest {}", out.display());
    Ok(())
}

fn load_model(args: &RunArgs) -> Result<(Box<dyn Model>, ModelConfig)> {
    let mut config = match args.model.as_str() {
        "mock-oracle" | "mock-lossy" => ModelConfig::new(&args.model),
        name => {
            let Some(path) = &args.models_file else {
                bail!("model {name} needs --models-file");
            };
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let configs: Vec<ModelConfig> = serde_json::from_str(&text)?;
            configs
                .into_iter()
                .find(|c| c.name == name)
                .with_context(|| format!("model {name} not in {}", path.display()))?
        }
    };
    if let Some(n) = args.max_inflight {
        config.max_inflight = n;
    }
    let model: Box<dyn Model> = match args.model.as_str() {
        "mock-oracle" => Box::new(OracleMock::new()),
        "mock-lossy" => Box::new(LossyMock::new("mock-lossy", &LossyMock::parse_profile(&args.profile)?, args.fp_rate, args.mock_seed)?),
        _ => Box::new(OpenAiCompatible::new(config.clone())?),
    };
    Ok((model, config))
}

fn run(args: &RunArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let inputs = SweepInputs::load(&manifest, base)?;
    let sweep = Sweep::new(&manifest, &inputs)?;
    let (model, config) = load_model(args)?;
    let mut store = RecordStore::open(&args.store)?;
    let summary = runner::run_sweep(&sweep, model.as_ref(), &config, &mut store)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn score_records(args: &ScoreArgs) -> Result<()> {
    if args.out == args.records {
        bail!("--out must differ from --records; the raw store is never rewritten");
    }
    let mut records = runner::read_records(&args.records)?;
    for r in &mut records {
        r.score = score::score_record(r, args.mode);
    }
    runner::write_records(&records, &args.out)?;
    eprintln!("scored {} records into {}", records.len(), args.out.display());
    Ok(())
}

fn entropy(args: &EntropyArgs) -> Result<()> {
    let set = args.corpus.load()?;
    let model = tokenstats::load_token_model(&args.ranks)?;
    let levels = parse_levels(&args.wfr_levels)?;
    let base = FragmentationSpec { mode: args.mode, p: 0.0, n: args.n, frag_seed: args.frag_seed };
    let points = tokenstats::entropy_curve(&set, &levels, &base, &model)?;
    tokenstats::write_entropy_csv(&points, create(&args.out)?)?;
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut records = runner::read_records(&args.records)?;
    for r in &mut records {
        if r.score.is_none() {
            r.score = score::score_record(r, args.mode);
        }
    }
    let mut groups: BTreeMap<(String, TaskKind), Vec<_>> = BTreeMap::new();
    for r in records {
        groups.entry((r.model.clone(), r.task)).or_default().push(r);
    }
    let mut curves = Vec::new();
    let mut summary = Summary { delta: args.delta, valleys: Vec::new(), offsets: Vec::new(), excluded_records: 0 };
    for ((model, task), recs) in &groups {
        let metric = if *task == TaskKind::Math { Metric::Accuracy } else { Metric::MicroF1 };
        let mut curve = match analyze::aggregate_curve(recs, metric) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("{model}/{task}: {e}");
                summary.excluded_records += recs.len();
                continue;
            }
        };
        curve.label = format!("{model}/{task}");
        summary.excluded_records += curve.excluded;
        match analyze::detect_valley(&curve, args.delta) {
            Ok(v) => summary.valleys.push(v),
            Err(e) => log::warn!("{}: {e}", curve.label),
        }
        curves.push(curve);
    }
    if let Some(path) = &args.entropy_csv {
        let points = tokenstats::read_entropy_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
        let ent = analyze::entropy_to_curve(&points)?;
        let paired: Vec<&Curve> = curves.iter().filter(|c| c.metric != Metric::EntropyBits).collect();
        for c in paired {
            match analyze::entropy_offset(c, &ent) {
                Ok(o) => summary.offsets.push(o),
                Err(e) => log::warn!("{}: {e}", c.label),
            }
        }
        curves.push(ent);
    }
    if curves.is_empty() {
        bail!("no curve could be built from {}", args.records.display());
    }
    analyze::emit_report(&curves, &summary, &args.out_dir)?;
    for v in &summary.valleys {
        println!(
            "{}: min {:.3} at {:.1}, depth {:.3}, rebound {:.3}, u_shaped {}",
            v.label, v.f1_min, v.level_at_min, v.depth, v.rebound, v.is_u_shaped
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fragment(a) => fragment(a),
        Command::GenTasks(a) => gen_tasks(a),
        Command::Manifest(a) => write_manifest(a, &a.sweep.out),
        Command::Run(a) => run(a),
        Command::Score(a) => score_records(a),
        Command::Entropy(a) => entropy(a),
        Command::Report(a) => report(a),
    }
}
