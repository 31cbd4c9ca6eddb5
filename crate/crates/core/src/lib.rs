//! Word-boundary fragmentation benchmark toolkit.
//!
//! Perturb text by inserting spaces inside words, build line-recall and
//! math tasks from the perturbed text, run them against models, score the
//! answers and look for a dip in the resulting curves.

pub mod analyze;
pub mod corpus;
pub mod error;
pub mod levels;
pub mod perturb;
pub mod prompt;
pub mod rng;
pub mod runner;
pub mod score;
pub mod taskgen;
pub mod tokenstats;

pub use analyze::{Curve, CurvePoint, Metric, OffsetReport, ValleyReport};
pub use corpus::{Document, DocumentSet, Domain, MathProblem};
pub use error::{Error, Result};
pub use perturb::{FragmentationMode, FragmentationResult, FragmentationSpec};
pub use prompt::{IclLevel, RenderedPrompt};
pub use runner::{CallStatus, EvalRecord, Job, Model, ModelConfig, RunManifest};
pub use score::{MatchMode, MicroCounts};
pub use taskgen::{MathInstance, NeedlePool, TargetMask, TaskInstance, TaskKind};
pub use tokenstats::{EntropyPoint, TokenModel};
