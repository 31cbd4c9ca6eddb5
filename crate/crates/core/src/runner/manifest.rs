use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Job, JobTask, RecordKey};
use crate::corpus::{self, DocumentSet, Domain, MathProblem, DEFAULT_GROUP_SIZE};
use crate::error::{Error, Result};
use crate::levels::{default_levels, level_key};
use crate::perturb::{FragmentationMode, FragmentationSpec};
use crate::prompt::{self, IclLevel, TEMPLATE_VERSION};
use crate::taskgen::{self, MaskMode, NeedlePool, TargetMask, TaskKind, DEFAULT_POOL_SIZE, DEFAULT_TARGET_RATE};

fn default_rate() -> f64 {
    DEFAULT_TARGET_RATE
}
fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}
fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}
fn default_mode() -> FragmentationMode {
    FragmentationMode::RandomSlot
}

/// Everything needed to regenerate every instance of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub task: TaskKind,
    pub domain: Domain,
    pub corpus_path: String,
    /// SHA-256 of the corpus file, hex.
    pub corpus_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_candidates: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_hash: Option<String>,
    #[serde(default = "default_pool_size")]
    pub needle_pool_size: usize,
    pub wfr_levels: Vec<f64>,
    pub frag_seeds: Vec<u64>,
    pub target_seed: u64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_mode")]
    pub fragmentation: FragmentationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icl: Option<IclLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_n: Option<usize>,
    #[serde(default)]
    pub sample_seed: u64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default)]
    pub models: Vec<String>,
    pub template_version: String,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub created_unix: u64,
}

impl RunManifest {
    /// A manifest with the standard grid: eleven levels, seeds 0..3, rate 0.1.
    pub fn new(name: impl Into<String>, task: TaskKind, domain: Domain, corpus_path: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            task,
            domain,
            corpus_path: corpus_path.into(),
            corpus_hash: String::new(),
            needle_candidates: None,
            needle_hash: None,
            needle_pool_size: DEFAULT_POOL_SIZE,
            wfr_levels: default_levels(),
            frag_seeds: vec![0, 1, 2],
            target_seed: 0,
            rate: DEFAULT_TARGET_RATE,
            fragmentation: FragmentationMode::RandomSlot,
            nth: None,
            icl: None,
            sample_n: None,
            sample_seed: 0,
            group_size: DEFAULT_GROUP_SIZE,
            models: Vec::new(),
            template_version: TEMPLATE_VERSION.into(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Fills in the corpus (and needle) hashes from the files on disk.
    pub fn stamp_hashes(&mut self, base_dir: &Path) -> Result<()> {
        self.corpus_hash = file_sha256(resolve(base_dir, &self.corpus_path))?;
        if let Some(c) = &self.needle_candidates {
            self.needle_hash = Some(file_sha256(resolve(base_dir, c))?);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.wfr_levels.is_empty() || self.frag_seeds.is_empty() {
            return Err(Error::arg("manifest needs at least one level and one fragmentation seed"));
        }
        if self.wfr_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::arg("levels must lie in [0, 1]"));
        }
        let mut keys: Vec<i64> = self.wfr_levels.iter().map(|&l| level_key(l)).collect();
        keys.sort_unstable();
        keys.dedup();
        if keys.len() != self.wfr_levels.len() {
            return Err(Error::arg("duplicate levels in manifest"));
        }
        if self.task != TaskKind::Math && !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::arg(format!("target rate {} outside (0, 1)", self.rate)));
        }
        if self.task == TaskKind::Insertion && self.needle_candidates.is_none() {
            return Err(Error::arg("insertion sweeps need needle_candidates"));
        }
        if self.icl.is_some() && self.task != TaskKind::Absence {
            return Err(Error::arg("ICL demonstrations apply to absence sweeps only"));
        }
        FragmentationSpec { mode: self.fragmentation, p: 0.0, n: self.nth, frag_seed: 0 }.validate()?;
        if self.template_version != TEMPLATE_VERSION {
            return Err(Error::arg(format!(
                "manifest uses templates {} but this build ships {TEMPLATE_VERSION}",
                self.template_version
            )));
        }
        Ok(())
    }

    fn spec(&self, level: f64, frag_seed: u64) -> FragmentationSpec {
        FragmentationSpec { mode: self.fragmentation, p: level, n: self.nth, frag_seed }
    }
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    base.join(p)
}

/// Corpus material a sweep draws from.
#[derive(Debug, Clone, Default)]
pub struct SweepInputs {
    pub docs: DocumentSet,
    pub problems: Vec<MathProblem>,
    pub pool: Option<NeedlePool>,
}

impl SweepInputs {
    /// Loads the files named by `manifest`, relative to `base_dir`, and
    /// checks them against the recorded hashes.
    pub fn load(manifest: &RunManifest, base_dir: &Path) -> Result<Self> {
        let corpus_path = resolve(base_dir, &manifest.corpus_path);
        let hash = file_sha256(&corpus_path)?;
        if !manifest.corpus_hash.is_empty() && hash != manifest.corpus_hash {
            return Err(Error::Consistency(format!(
                "corpus {} changed since the manifest was written",
                corpus_path.display()
            )));
        }
        if manifest.task == TaskKind::Math {
            let problems = corpus::load_math_problems(&corpus_path)?;
            return Ok(Self { problems, ..Default::default() });
        }
        let docs = corpus::load_corpus(&corpus_path, manifest.domain, manifest.group_size)?;
        let pool = match &manifest.needle_candidates {
            Some(c) if manifest.task == TaskKind::Insertion => {
                let path = resolve(base_dir, c);
                if let Some(expected) = &manifest.needle_hash {
                    if &file_sha256(&path)? != expected {
                        return Err(Error::Consistency(format!("needle file {} changed", path.display())));
                    }
                }
                Some(taskgen::build_needle_pool_from_file(&docs, &path, manifest.needle_pool_size)?)
            }
            _ => None,
        };
        Ok(Self { docs, problems: Vec::new(), pool })
    }
}

/// A grid point: which document or problem, at which level and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobSpec {
    pub unit: usize,
    pub level: f64,
    pub frag_seed: u64,
}

/// A manifest bound to its inputs. Target masks are drawn once per
/// document here and reused at every level and fragmentation seed.
pub struct Sweep<'a> {
    pub manifest: &'a RunManifest,
    inputs: &'a SweepInputs,
    units: Vec<usize>,
    masks: Vec<Option<TargetMask>>,
}

impl<'a> Sweep<'a> {
    pub fn new(manifest: &'a RunManifest, inputs: &'a SweepInputs) -> Result<Self> {
        manifest.validate()?;
        let available = match manifest.task {
            TaskKind::Math => inputs.problems.len(),
            _ => inputs.docs.len(),
        };
        let units = match manifest.sample_n {
            Some(n) => corpus::sample_indices(available, n, manifest.sample_seed)?,
            None => (0..available).collect(),
        };
        let mask_mode = match manifest.task {
            TaskKind::Absence => Some(MaskMode::Omit),
            TaskKind::Insertion => Some(MaskMode::Insert),
            TaskKind::Math => None,
        };
        if manifest.task == TaskKind::Insertion && inputs.pool.is_none() {
            return Err(Error::arg("insertion sweep without a needle pool"));
        }
        let masks = units
            .iter()
            .map(|&u| {
                mask_mode
                    .map(|mode| taskgen::select_targets(&inputs.docs.documents[u], manifest.rate, manifest.target_seed, mode))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, inputs, units, masks })
    }

    pub fn masks(&self) -> impl Iterator<Item = &TargetMask> {
        self.masks.iter().flatten()
    }

    pub fn job_specs(&self) -> Vec<JobSpec> {
        let mut specs = Vec::with_capacity(self.units.len() * self.manifest.wfr_levels.len() * self.manifest.frag_seeds.len());
        for unit in 0..self.units.len() {
            for &frag_seed in &self.manifest.frag_seeds {
                for &level in &self.manifest.wfr_levels {
                    specs.push(JobSpec { unit, level, frag_seed });
                }
            }
        }
        specs
    }

    fn unit_id(&self, unit: usize) -> &str {
        let idx = self.units[unit];
        match self.manifest.task {
            TaskKind::Math => &self.inputs.problems[idx].id,
            _ => &self.inputs.docs.documents[idx].id,
        }
    }

    pub fn key(&self, spec: &JobSpec, model: &str) -> RecordKey {
        RecordKey {
            model: model.to_owned(),
            doc_id: self.unit_id(spec.unit).to_owned(),
            task: self.manifest.task,
            level: level_key(spec.level),
            frag_seed: spec.frag_seed,
            target_seed: self.manifest.target_seed,
        }
    }

    pub fn build_job(&self, spec: &JobSpec) -> Result<Job> {
        let m = self.manifest;
        let frag = m.spec(spec.level, spec.frag_seed);
        let idx = self.units[spec.unit];
        let label = m.domain.label();
        match m.task {
            TaskKind::Math => {
                let instance = taskgen::build_math_instance(&self.inputs.problems[idx], &frag)?;
                let prompt = prompt::render_math_prompt(&instance.question)?;
                Ok(Job { domain: m.domain, prompt, task: JobTask::Math(instance) })
            }
            TaskKind::Absence => {
                let doc = &self.inputs.docs.documents[idx];
                let mask = self.masks[spec.unit].as_ref().expect("absence sweeps draw masks");
                let instance = taskgen::build_absence_instance(doc, mask, &frag)?;
                let icl = m.icl.map(|lvl| prompt::icl_examples_for(&instance, lvl)).transpose()?;
                let prompt = prompt::render_absence_prompt(&instance, label, icl.as_deref())?;
                Ok(Job { domain: m.domain, prompt, task: JobTask::Lines(instance) })
            }
            TaskKind::Insertion => {
                let doc = &self.inputs.docs.documents[idx];
                let mask = self.masks[spec.unit].as_ref().expect("insertion sweeps draw masks");
                let pool = self.inputs.pool.as_ref().expect("checked in Sweep::new");
                let instance = taskgen::build_insertion_instance(doc, mask, pool, &frag)?;
                let prompt = prompt::render_insertion_prompt(&instance, label)?;
                Ok(Job { domain: m.domain, prompt, task: JobTask::Lines(instance) })
            }
        }
    }
}
