//! Prompt rendering for the absence, insertion and math tasks.
//!
//! Template texts live in `assets/templates/` and are compiled in. Bump
//! [`TEMPLATE_VERSION`] whenever any of them changes so stored runs stay
//! attributable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::random_slot_fragment;
use crate::taskgen::{TaskInstance, TaskKind};

pub const TEMPLATE_VERSION: &str = "v1";

const ABSENCE_SYSTEM: &str = include_str!("../assets/templates/absence_system.txt");
const ABSENCE_USER: &str = include_str!("../assets/templates/absence_user.txt");
const INSERTION_SYSTEM: &str = include_str!("../assets/templates/insertion_system.txt");
const INSERTION_USER: &str = include_str!("../assets/templates/insertion_user.txt");
const MATH_USER: &str = include_str!("../assets/templates/math_user.txt");
const ICL_PREFIX: &str = include_str!("../assets/templates/icl_prefix.txt");
const ICL_EXAMPLE: &str = include_str!("../assets/templates/icl_example.txt");
const ICL_ASSET: &str = include_str!("../assets/icl_examples.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub icl_used: bool,
    pub domain_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub original_context: Vec<String>,
    pub modified_context: Vec<String>,
    pub answer_lines: Vec<String>,
}

/// How demonstration examples are fragmented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum IclLevel {
    /// Same level as the instance being prompted.
    #[default]
    Matched,
    Fixed(f64),
}

#[derive(Debug, Deserialize)]
struct IclAsset {
    examples: Vec<IclSource>,
}

#[derive(Debug, Deserialize)]
struct IclSource {
    lines: Vec<String>,
    omitted: Vec<usize>,
}

/// The shipped demonstrations, random-slot fragmented at `level` with `frag_seed`.
pub fn icl_examples(level: f64, frag_seed: u64) -> Result<Vec<IclExample>> {
    let asset: IclAsset = serde_json::from_str(ICL_ASSET)?;
    asset
        .examples
        .iter()
        .map(|src| {
            let frag = random_slot_fragment(&src.lines, level, frag_seed)?;
            let mut modified = Vec::new();
            let mut answer = Vec::new();
            for (i, line) in frag.lines.iter().enumerate() {
                if src.omitted.contains(&i) {
                    answer.push(line.clone());
                } else {
                    modified.push(line.clone());
                }
            }
            Ok(IclExample { original_context: frag.lines, modified_context: modified, answer_lines: answer })
        })
        .collect()
}

/// Examples for `instance` under the given level policy.
pub fn icl_examples_for(instance: &TaskInstance, level: IclLevel) -> Result<Vec<IclExample>> {
    match level {
        IclLevel::Matched => icl_examples(instance.wfr_level, instance.frag_seed),
        IclLevel::Fixed(p) => icl_examples(p, instance.frag_seed),
    }
}

fn template(raw: &str) -> &str {
    raw.strip_suffix('\n').unwrap_or(raw)
}

/// Substitutes `{name}` placeholders in one left-to-right pass; substituted
/// text is never rescanned. Braces that do not enclose a bare identifier are
/// copied through, and an identifier with no binding is an error.
pub fn fill(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + bindings.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::arg(format!("template placeholder `{{{name}}}` has no value")))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

fn render_icl_prefix(examples: &[IclExample]) -> Result<String> {
    let blocks = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            fill(
                template(ICL_EXAMPLE),
                &[
                    ("number", &(i + 1).to_string()),
                    ("original_context", &ex.original_context.join("\n")),
                    ("modified_context", &ex.modified_context.join("\n")),
                    ("answer_lines", &ex.answer_lines.join("\n")),
                ],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    fill(template(ICL_PREFIX), &[("icl_examples", &blocks.join("\n---\n"))])
}

fn require(instance: &TaskInstance, task: TaskKind) -> Result<()> {
    if instance.task == task {
        Ok(())
    } else {
        Err(Error::arg(format!("expected a {task} instance, got {}", instance.task)))
    }
}

pub fn render_absence_prompt(
    instance: &TaskInstance,
    domain_label: &str,
    icl: Option<&[IclExample]>,
) -> Result<RenderedPrompt> {
    require(instance, TaskKind::Absence)?;
    let original = instance.original_context.join("\n");
    let modified = instance.modified_context.join("\n");
    let system_text = fill(template(ABSENCE_SYSTEM), &[("document_type", domain_label)])?;
    let standard = fill(
        template(ABSENCE_USER),
        &[
            ("document_type", domain_label),
            ("original_context", &original),
            ("modified_context", &modified),
        ],
    )?;
    let (user_text, icl_used) = match icl {
        Some(examples) if !examples.is_empty() => (format!("{}\n{standard}", render_icl_prefix(examples)?), true),
        _ => (standard, false),
    };
    Ok(RenderedPrompt { system_text, user_text, icl_used, domain_label: domain_label.to_owned() })
}

/// Insertion prompts never carry demonstrations.
pub fn render_insertion_prompt(instance: &TaskInstance, domain_label: &str) -> Result<RenderedPrompt> {
    require(instance, TaskKind::Insertion)?;
    if instance.truth_lines.is_empty() {
        return Err(Error::arg("insertion instance without needles"));
    }
    let system_text = fill(template(INSERTION_SYSTEM), &[("document_type", domain_label)])?;
    let user_text = fill(
        template(INSERTION_USER),
        &[
            ("document_type", domain_label),
            ("original_context", &instance.original_context.join("\n")),
            ("modified_context", &instance.modified_context.join("\n")),
        ],
    )?;
    Ok(RenderedPrompt { system_text, user_text, icl_used: false, domain_label: domain_label.to_owned() })
}

/// The math prompt has no system message.
pub fn render_math_prompt(question_text: &str) -> Result<RenderedPrompt> {
    if question_text.trim().is_empty() {
        return Err(Error::arg("empty math question"));
    }
    Ok(RenderedPrompt {
        system_text: String::new(),
        user_text: fill(template(MATH_USER), &[("question", question_text)])?,
        icl_used: false,
        domain_label: crate::corpus::Domain::Math.label().to_owned(),
    })
}
