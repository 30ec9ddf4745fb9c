//! Three-stage scene graph generation: prompt -> tuples, then tuples ->
//! questions and tuples -> dependencies.
//!
//! Every stage has its own preamble. The question and dependency stages see
//! the prompt followed by a blank line and the accepted tuple lines, verbatim.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationBackend};
use crate::codec::{self, LineParseError, ParseMode, Parsed, QuarantinedLine};
use crate::dataset::PromptRecord;
use crate::graph::{build_graph, GraphError, SceneGraph};

/// Placeholder a preamble template reserves for the stage input.
pub const INPUT_SLOT: &str = "${INPUT}";

#[derive(Debug, Error)]
pub enum PreambleError {
    #[error("{name}: expected exactly one {INPUT_SLOT} slot, found {found}")]
    Slot { name: String, found: usize },
    #[error("{name}: no 'output format:' line")]
    NoOutputFormat { name: String },
    #[error("{name}: example block is empty")]
    NoExamples { name: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A preamble template: task description, an `output format:` line, an
/// in-context example block and one input slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preamble {
    template: String,
    examples: std::ops::Range<usize>,
}

impl Preamble {
    pub fn parse(name: &str, template: impl Into<String>) -> Result<Self, PreambleError> {
        let template = template.into();
        let found = template.matches(INPUT_SLOT).count();
        if found != 1 {
            return Err(PreambleError::Slot {
                name: name.to_string(),
                found,
            });
        }
        let slot = template.find(INPUT_SLOT).unwrap_or(0);
        let head = &template[..slot];
        let format_line = head
            .match_indices('\n')
            .map(|(i, _)| i + 1)
            .chain(std::iter::once(0))
            .filter(|&start| head[start..].to_lowercase().starts_with("output format:"))
            .min()
            .ok_or_else(|| PreambleError::NoOutputFormat {
                name: name.to_string(),
            })?;
        let examples_start = head[format_line..]
            .find('\n')
            .map_or(head.len(), |i| format_line + i + 1);
        // The line holding the slot is part of the query, not the examples.
        let examples_end = head.rfind('\n').map_or(0, |i| i + 1).max(examples_start);
        if head[examples_start..examples_end].trim().is_empty() {
            return Err(PreambleError::NoExamples {
                name: name.to_string(),
            });
        }
        Ok(Preamble {
            template,
            examples: examples_start..examples_end,
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn examples(&self) -> &str {
        self.template[self.examples.clone()].trim()
    }

    /// The template with the input substituted, for backends that take one string.
    pub fn render(&self, input: &str) -> String {
        self.template.replacen(INPUT_SLOT, input, 1)
    }
}

fn load_preamble(dir: &Path, file: &str) -> Result<Preamble, PreambleError> {
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|source| PreambleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Preamble::parse(file, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tuples,
    Questions,
    Dependencies,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Tuples, Stage::Questions, Stage::Dependencies];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tuples => "tuples",
            Stage::Questions => "questions",
            Stage::Dependencies => "dependencies",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreambleSet {
    pub tuples: Preamble,
    pub questions: Preamble,
    pub dependencies: Preamble,
}

impl PreambleSet {
    /// The templates shipped with the engine.
    pub fn builtin() -> Self {
        let p = |name, text: &str| Preamble::parse(name, text).expect("builtin preamble is valid");
        PreambleSet {
            tuples: p("tuples.txt", include_str!("../data/preambles/tuples.txt")),
            questions: p("questions.txt", include_str!("../data/preambles/questions.txt")),
            dependencies: p(
                "dependencies.txt",
                include_str!("../data/preambles/dependencies.txt"),
            ),
        }
    }

    /// Loads `tuples.txt`, `questions.txt` and `dependencies.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PreambleError> {
        Ok(PreambleSet {
            tuples: load_preamble(dir, "tuples.txt")?,
            questions: load_preamble(dir, "questions.txt")?,
            dependencies: load_preamble(dir, "dependencies.txt")?,
        })
    }

    pub fn get(&self, stage: Stage) -> &Preamble {
        match stage {
            Stage::Tuples => &self.tuples,
            Stage::Questions => &self.questions,
            Stage::Dependencies => &self.dependencies,
        }
    }

    /// A scripted mock that recognises this set's stages.
    pub fn scripted_backend(&self, name: &str) -> crate::backends::ScriptedGenerator {
        Stage::ALL.into_iter().fold(
            crate::backends::ScriptedGenerator::new(name),
            |g, s| g.with_stage(s.as_str(), self.get(s).template()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryConfig {
    /// Re-requests per stage after the first attempt.
    pub max_retries: u32,
    pub parse_mode: ParseMode,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_retries: 2,
            parse_mode: ParseMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    /// Raw completion of every attempt, in order.
    pub completions: Vec<String>,
    pub warnings: Vec<LineParseError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quarantine: Vec<QuarantinedLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    pub retries: u32,
}

impl StageTrace {
    fn new(stage: Stage) -> Self {
        StageTrace {
            stage,
            completions: Vec::new(),
            warnings: Vec::new(),
            quarantine: Vec::new(),
            failures: Vec::new(),
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt_id: String,
    pub stages: Vec<StageTrace>,
    /// `id_map[i]` is the id the model used for normalized id `i + 1`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub id_map: Vec<u32>,
}

impl GenerationTrace {
    pub fn stage(&self, stage: Stage) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("prompt {prompt_id}: empty prompt text")]
    EmptyPrompt { prompt_id: String },
    #[error("prompt {prompt_id}, {stage} stage: {source}")]
    Backend {
        prompt_id: String,
        stage: Stage,
        source: BackendError,
    },
    #[error("prompt {prompt_id}, {stage} stage: unparseable after {attempts} attempt(s): {reason}")]
    StageParse {
        prompt_id: String,
        stage: Stage,
        attempts: u32,
        reason: String,
        raw: String,
    },
    #[error("prompt {prompt_id}: invalid graph: {source}")]
    GraphInvalid {
        prompt_id: String,
        source: GraphError,
    },
}

impl PipelineError {
    pub fn prompt_id(&self) -> &str {
        match self {
            PipelineError::EmptyPrompt { prompt_id }
            | PipelineError::Backend { prompt_id, .. }
            | PipelineError::StageParse { prompt_id, .. }
            | PipelineError::GraphInvalid { prompt_id, .. } => prompt_id,
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, PipelineError::Backend { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: SceneGraph,
    pub trace: GenerationTrace,
}

/// A failed generation together with everything the model said along the way.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct Failed {
    pub error: PipelineError,
    pub trace: GenerationTrace,
}

pub fn stage_input(prompt: &str, tuple_lines: &[String]) -> String {
    format!("{prompt}\n\n{}", tuple_lines.join("\n"))
}

fn run_stage<T>(
    backend: &dyn GenerationBackend,
    prompt_id: &str,
    preamble: &Preamble,
    input: &str,
    config: &RetryConfig,
    trace: &mut StageTrace,
    parse: impl Fn(&str) -> Result<Parsed<T>, String>,
) -> Result<Parsed<T>, PipelineError> {
    let stage = trace.stage;
    let mut attempt = 0;
    loop {
        let last = attempt >= config.max_retries;
        match backend.complete(preamble.template(), input) {
            Err(e) if e.is_transient() && !last => {
                trace.failures.push(e.to_string());
            }
            Err(source) => {
                return Err(PipelineError::Backend {
                    prompt_id: prompt_id.to_string(),
                    stage,
                    source,
                })
            }
            Ok(text) => {
                trace.completions.push(text.clone());
                match parse(&text) {
                    Ok(parsed) => {
                        trace.warnings = parsed.warnings.clone();
                        trace.quarantine = parsed.quarantine.clone();
                        return Ok(parsed);
                    }
                    Err(reason) if last => {
                        return Err(PipelineError::StageParse {
                            prompt_id: prompt_id.to_string(),
                            stage,
                            attempts: attempt + 1,
                            reason,
                            raw: text,
                        })
                    }
                    Err(reason) => trace.failures.push(reason),
                }
            }
        }
        attempt += 1;
        trace.retries = attempt;
    }
}

/// Runs the three stages for one prompt and validates the resulting graph.
///
/// Parse failures and transient backend errors are retried up to
/// `config.max_retries` times per stage. Structural problems in the final
/// graph are reported as they are; nothing is repaired.
pub fn generate_dsg(
    prompt: &PromptRecord,
    backend: &dyn GenerationBackend,
    preambles: &PreambleSet,
    config: &RetryConfig,
) -> Result<Generated, Failed> {
    let mut trace = GenerationTrace {
        prompt_id: prompt.prompt_id.clone(),
        stages: Vec::new(),
        id_map: Vec::new(),
    };
    match generate_inner(prompt, backend, preambles, config, &mut trace) {
        Ok(graph) => {
            trace.id_map = graph.original_ids().to_vec();
            Ok(Generated { graph, trace })
        }
        Err(error) => Err(Failed { error, trace }),
    }
}

fn generate_inner(
    prompt: &PromptRecord,
    backend: &dyn GenerationBackend,
    preambles: &PreambleSet,
    config: &RetryConfig,
    trace: &mut GenerationTrace,
) -> Result<SceneGraph, PipelineError> {
    let pid = prompt.prompt_id.as_str();
    let text = prompt.text.trim();
    if text.is_empty() {
        return Err(PipelineError::EmptyPrompt {
            prompt_id: pid.to_string(),
        });
    }
    let mode = config.parse_mode;

    let mut st = StageTrace::new(Stage::Tuples);
    let tuples = run_stage(backend, pid, &preambles.tuples, text, config, &mut st, |raw| {
        let p = codec::parse_tuples(raw, mode).map_err(|e| e.to_string())?;
        if p.items.is_empty() {
            return Err("no tuples".to_string());
        }
        Ok(p)
    });
    trace.stages.push(st);
    let tuples = tuples?;
    let tuple_ids: BTreeSet<u32> = tuples.items.iter().map(|t| t.id).collect();
    let input = stage_input(text, &tuples.source_lines);

    let mut st = StageTrace::new(Stage::Questions);
    let questions = run_stage(backend, pid, &preambles.questions, &input, config, &mut st, |raw| {
        let p = codec::parse_questions(raw, mode).map_err(|e| e.to_string())?;
        let ids: BTreeSet<u32> = p.items.iter().map(|q| q.id).collect();
        if ids != tuple_ids {
            let missing: Vec<_> = tuple_ids.difference(&ids).collect();
            let extra: Vec<_> = ids.difference(&tuple_ids).collect();
            return Err(format!(
                "question ids do not match tuple ids (missing {missing:?}, extra {extra:?})"
            ));
        }
        Ok(p)
    });
    trace.stages.push(st);
    let questions = questions?;

    let mut st = StageTrace::new(Stage::Dependencies);
    let deps = run_stage(backend, pid, &preambles.dependencies, &input, config, &mut st, |raw| {
        codec::parse_dependencies(raw, mode).map_err(|e| e.to_string())
    });
    trace.stages.push(st);
    let deps = deps?;

    build_graph(pid, tuples.items, questions.items, deps.items).map_err(|source| {
        PipelineError::GraphInvalid {
            prompt_id: pid.to_string(),
            source,
        }
    })
}

/// Runs [`generate_dsg`] over many prompts with at most `parallelism` in
/// flight. Results come back in input order; one failure never affects the
/// other prompts.
pub fn generate_batch(
    prompts: &[PromptRecord],
    backend: &dyn GenerationBackend,
    preambles: &PreambleSet,
    config: &RetryConfig,
    parallelism: usize,
) -> Vec<Result<Generated, Failed>> {
    let run = |p: &PromptRecord| generate_dsg(p, backend, preambles, config);
    if parallelism <= 1 {
        return prompts.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| prompts.par_iter().map(run).collect()),
        Err(_) => prompts.iter().map(run).collect(),
    }
}
