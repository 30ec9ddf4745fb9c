//! The `dsg` command line.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 backend failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendError, GenerationBackend, HttpGenerator, HttpQa, Limited, QaBackend, SceneOracle, ScriptEntry,
};
use crate::codec::ParseMode;
use crate::dataset::{self, DatasetError, HumanQuestionAnswer, ImageEntry, LikertRecord, PromptRecord};
use crate::fixtures;
use crate::graph::{SceneGraph, SemanticTuple};
use crate::io::{self, write_atomic, write_jsonl, IoError};
use crate::metrics::{
    self, check_dependency_validity, judge_duplicates, judge_matches, qg_quality, AtomicityLabel, Judge,
    JudgeKind, JudgePreambles, LexicalJudge, MatchJudgment, MetricsError, QgQualityResult,
};
use crate::pipeline::{generate_batch, PreambleSet, RetryConfig};
use crate::report::{self, build_report, verify_report, write_report, Provenance, ReportError, ReportInputs};
use crate::scoring::{evaluate_batch, BatchOptions, ErrorPolicy, ItemEvaluation, ScoreMode};

pub const TOKEN_ENV: &str = "DSG_BACKEND_TOKEN";

#[derive(Debug, Parser)]
#[command(name = "dsg", version, about = "Question-based text-to-image alignment evaluation")]
struct Cli {
    /// Settings file of `key = value` lines; keys are long flag names. Flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate question graphs from prompts.
    Generate(GenerateArgs),
    /// Answer graph questions against images and score them.
    Score(ScoreArgs),
    /// Question-generation quality metrics.
    Metrics(MetricsArgs),
    /// Rank correlation between item scores and human ratings.
    Correlate(CorrelateArgs),
    /// Aggregate evaluations into report tables.
    Report(ReportArgs),
    /// Check data files for schema and reference errors.
    ValidateData(ValidateArgs),
    /// Run the built-in fixture pipeline with mock backends.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct ConnArgs {
    /// Per-request timeout.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Concurrent requests allowed against one backend.
    #[arg(long, default_value_t = crate::backends::DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    prompts: PathBuf,
    /// `http(s)://host:port` or `scripted:FILE`.
    #[arg(long)]
    backend: String,
    /// Directory with tuples.txt, questions.txt and dependencies.txt.
    #[arg(long)]
    preambles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.traces.jsonl`.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, value_enum, default_value_t = ParseMode::Strict)]
    parse_mode: ParseMode,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    #[command(flatten)]
    conn: ConnArgs,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    graphs: PathBuf,
    /// Image manifest: JSONL or TSV of prompt_id, image_ref[, model].
    #[arg(long)]
    images: PathBuf,
    /// `http(s)://host:port` or `oracle:FILE`.
    #[arg(long)]
    qa_backend: String,
    #[arg(long, value_enum, default_value_t = ScoreMode::Skip)]
    mode: ScoreMode,
    #[arg(long, value_enum, default_value_t = ErrorPolicy::FailItem)]
    error_policy: ErrorPolicy,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.errors.jsonl`; written only when items fail.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Send local image files inline instead of by reference.
    #[arg(long)]
    inline_images: bool,
    #[command(flatten)]
    conn: ConnArgs,
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    graphs: PathBuf,
    /// Reference tuples per prompt; enables recall.
    #[arg(long)]
    human_tuples: Option<PathBuf>,
    /// `baseline`, `http(s)://host:port` or `scripted:FILE`.
    #[arg(long, default_value = "baseline")]
    judge: String,
    /// Prompt texts shown to a model judge.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// JSONL of prompt_id, question_id, atomic.
    #[arg(long)]
    atomicity: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    conn: ConnArgs,
}

#[derive(Debug, Args, Serialize)]
struct CorrelateArgs {
    /// Evaluations JSONL from `dsg score`.
    #[arg(long)]
    item_scores: PathBuf,
    #[arg(long)]
    likert: PathBuf,
    /// Also write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    evaluations: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    /// Needed for the per-subcategory table.
    #[arg(long)]
    graphs: Option<PathBuf>,
    #[arg(long)]
    likert: Option<PathBuf>,
    /// Human per-question answers.
    #[arg(long)]
    answers: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    /// `qg.jsonl` written by `dsg metrics`.
    #[arg(long)]
    qg: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = report::DEFAULT_MIN_SAMPLES)]
    min_samples: usize,
    /// Fixed provenance timestamp, for reproducible summaries.
    #[arg(long)]
    timestamp: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    likert: Option<PathBuf>,
    #[arg(long)]
    answers: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    human_tuples: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SelftestArgs {
    #[arg(long, default_value_t = 20)]
    prompts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Backend(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Backend(m) => f.write_str(m),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(IoError, DatasetError, crate::pipeline::PreambleError, crate::metrics::StatsError);

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Backend(b) => b.into(),
            e => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Metrics(m) => m.into(),
            e => CliError::Invalid(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Score(a) => cmd_score(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Report(a) => cmd_report(a),
        Command::ValidateData(a) => cmd_validate(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn flag_present(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&prefix)
    })
}

/// Appends settings from `--config FILE` for flags the command line does not
/// already set.
fn apply_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = io::read_to_string(&path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;

    let cmd = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a.to_string_lossy().as_ref()));
    let known: BTreeSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| s.get_arguments().filter_map(|a| a.get_long().map(str::to_string)))
        .collect();
    let Some(sub) = sub else {
        return Ok(argv);
    };
    let mut extra = Vec::new();
    for (key, value) in &table {
        let long = key.replace('_', "-");
        if !known.contains(&long) {
            return Err(CliError::Invalid(format!(
                "{}: unknown setting {key:?}",
                path.display()
            )));
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(long.as_str())) else {
            continue;
        };
        if flag_present(&argv, &long) {
            continue;
        }
        let takes_value = arg.get_action().takes_values();
        match value {
            toml::Value::Boolean(b) if !takes_value => {
                if *b {
                    extra.push(OsString::from(format!("--{long}")));
                }
            }
            toml::Value::String(s) => extra.push(OsString::from(format!("--{long}={s}"))),
            toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => {
                extra.push(OsString::from(format!("--{long}={value}")))
            }
            other => {
                return Err(CliError::Invalid(format!(
                    "{}: setting {key:?} has unsupported value {other}",
                    path.display()
                )))
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}

fn config_hash_of<T: Serialize>(command: &str, args: &T) -> String {
    let canonical = format!(
        "{command}\n{}",
        serde_json::to_string(args).expect("arguments serialize")
    );
    report::config_hash(&canonical)
}

fn token() -> Option<String> {
    std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

fn is_http(spec: &str) -> bool {
    spec.starts_with("http://") || spec.starts_with("https://")
}

fn read_script(path: &Path) -> Result<Vec<ScriptEntry>, CliError> {
    let text = io::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())));
    }
    Ok(io::parse_jsonl(&path.display().to_string(), &text)?
        .into_iter()
        .map(|(_, e)| e)
        .collect())
}

fn generation_backend(
    spec: &str,
    conn: &ConnArgs,
    scripted: impl FnOnce() -> crate::backends::ScriptedGenerator,
) -> Result<Box<dyn GenerationBackend>, CliError> {
    if is_http(spec) {
        let g = HttpGenerator::new(spec, Duration::from_secs(conn.timeout_secs), token())?;
        return Ok(Box::new(Limited::new(g, conn.max_in_flight)));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        let g = scripted();
        g.script_entries(read_script(Path::new(path))?);
        return Ok(Box::new(g));
    }
    Err(CliError::Invalid(format!(
        "unsupported backend {spec:?}; expected http(s)://... or scripted:FILE"
    )))
}

/// One scene for `oracle:FILE` backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleScene {
    pub image_ref: String,
    pub tuples: Vec<SemanticTuple>,
}

fn qa_backend(spec: &str, conn: &ConnArgs, inline: bool) -> Result<Box<dyn QaBackend>, CliError> {
    if is_http(spec) {
        let q = HttpQa::new(spec, Duration::from_secs(conn.timeout_secs), token())?.with_inline_images(inline);
        return Ok(Box::new(Limited::new(q, conn.max_in_flight)));
    }
    if let Some(path) = spec.strip_prefix("oracle:") {
        let scenes: Vec<OracleScene> = io::read_jsonl(Path::new(path))?;
        let mut o = SceneOracle::new();
        for s in &scenes {
            o.add_scene(s.image_ref.clone(), &s.tuples);
        }
        return Ok(Box::new(o));
    }
    Err(CliError::Invalid(format!(
        "unsupported QA backend {spec:?}; expected http(s)://... or oracle:FILE"
    )))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct TraceRow<'a> {
    prompt_id: &'a str,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    trace: &'a crate::pipeline::GenerationTrace,
}

fn cmd_generate(a: &GenerateArgs) -> CliResult {
    let prompts = dataset::load_prompts(&a.prompts)?;
    let preambles = match &a.preambles {
        Some(dir) => PreambleSet::load_dir(dir)?,
        None => PreambleSet::builtin(),
    };
    let backend = generation_backend(&a.backend, &a.conn, || preambles.scripted_backend("scripted"))?;
    let config = RetryConfig {
        max_retries: a.max_retries,
        parse_mode: a.parse_mode,
    };
    let results = generate_batch(&prompts, backend.as_ref(), &preambles, &config, a.parallelism);

    let mut graphs = Vec::new();
    let mut traces = Vec::new();
    let (mut backend_failures, mut other_failures) = (0usize, 0usize);
    for r in &results {
        match r {
            Ok(g) => {
                graphs.push(&g.graph);
                traces.push(TraceRow {
                    prompt_id: &g.trace.prompt_id,
                    ok: true,
                    error: None,
                    trace: &g.trace,
                });
            }
            Err(f) => {
                eprintln!("{}", f.error);
                if f.error.is_backend() {
                    backend_failures += 1;
                } else {
                    other_failures += 1;
                }
                traces.push(TraceRow {
                    prompt_id: f.error.prompt_id(),
                    ok: false,
                    error: Some(f.error.to_string()),
                    trace: &f.trace,
                });
            }
        }
    }
    write_jsonl(&a.out, &graphs)?;
    let trace_path = a.traces.clone().unwrap_or_else(|| with_suffix(&a.out, ".traces.jsonl"));
    write_jsonl(&trace_path, &traces)?;
    eprintln!(
        "generated {}/{} graphs (config {})",
        graphs.len(),
        prompts.len(),
        &config_hash_of("generate", a)[..12]
    );
    let failed = backend_failures + other_failures;
    if backend_failures > 0 {
        return Err(CliError::Backend(format!("{failed} prompt(s) failed, {backend_failures} on backend errors")));
    }
    if other_failures > 0 {
        return Err(CliError::Invalid(format!("{failed} prompt(s) failed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ErrorRow {
    error: String,
    backend: bool,
}

fn cmd_score(a: &ScoreArgs) -> CliResult {
    let graphs = dataset::load_graphs(&a.graphs)?;
    let manifest = dataset::load_image_manifest(&a.images)?;
    let backend = qa_backend(&a.qa_backend, &a.conn, a.inline_images)?;
    let opts = BatchOptions {
        mode: a.mode,
        policy: a.error_policy,
        parallelism: a.parallelism,
    };
    let results = evaluate_batch(&graphs, &dataset::images_by_prompt(&manifest), backend.as_ref(), opts);
    let mut evaluations = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(e) => evaluations.push(e),
            Err(e) => {
                eprintln!("{e}");
                errors.push(ErrorRow {
                    error: e.to_string(),
                    backend: e.is_backend(),
                });
            }
        }
    }
    write_jsonl(&a.out, &evaluations)?;
    if !errors.is_empty() {
        let path = a.errors.clone().unwrap_or_else(|| with_suffix(&a.out, ".errors.jsonl"));
        write_jsonl(&path, &errors)?;
    }
    eprintln!(
        "scored {} item(s), {} failed (config {})",
        evaluations.len(),
        errors.len(),
        &config_hash_of("score", a)[..12]
    );
    if errors.iter().any(|e| e.backend) {
        return Err(CliError::Backend(format!("{} item(s) failed", errors.len())));
    }
    if !errors.is_empty() {
        return Err(CliError::Invalid(format!("{} item(s) failed", errors.len())));
    }
    Ok(())
}

/// One row of `qg.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QgRecord {
    pub prompt_id: String,
    pub judge: JudgeKind,
    pub quality: QgQualityResult,
    pub matches: Vec<MatchJudgment>,
}

#[derive(Deserialize)]
struct AtomicityRow {
    prompt_id: String,
    question_id: u32,
    atomic: bool,
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult {
    let graphs = dataset::load_graphs(&a.graphs)?;
    let references: HashMap<String, Vec<SemanticTuple>> = match &a.human_tuples {
        Some(p) => dataset::load_human_tuples(p)?
            .into_iter()
            .map(|s| (s.prompt_id, s.tuples))
            .collect(),
        None => HashMap::new(),
    };
    let prompt_text: HashMap<String, String> = match &a.prompts {
        Some(p) => dataset::load_prompts(p)?
            .into_iter()
            .map(|p| (p.prompt_id, p.text))
            .collect(),
        None => HashMap::new(),
    };
    let mut atomicity: HashMap<String, Vec<AtomicityLabel>> = HashMap::new();
    if let Some(p) = &a.atomicity {
        for r in io::read_jsonl::<AtomicityRow>(p)? {
            atomicity.entry(r.prompt_id).or_default().push(AtomicityLabel {
                question_id: r.question_id,
                atomic: r.atomic,
            });
        }
    }

    let judge_preambles = JudgePreambles::builtin();
    let model_backend;
    let judge = if a.judge == "baseline" {
        Judge::Lexical(LexicalJudge::default())
    } else {
        model_backend = generation_backend(&a.judge, &a.conn, || judge_preambles.scripted_backend("scripted-judge"))?;
        Judge::Model {
            backend: model_backend.as_ref(),
            preambles: &judge_preambles,
        }
    };
    let kind = match judge {
        Judge::Lexical(_) => JudgeKind::LexicalBaseline,
        Judge::Model { .. } => JudgeKind::LlmBackend,
    };

    let mut records = Vec::new();
    let mut validity = Vec::new();
    for g in &graphs {
        let pid = g.prompt_id();
        let prompt = prompt_text.get(pid).map(String::as_str).unwrap_or("");
        let reference = references.get(pid).map(Vec::as_slice);
        let matches = judge_matches(g, prompt, reference, &judge)?.value;
        let duplicates = judge_duplicates(g, prompt, &judge)?.value;
        let quality = qg_quality(
            g,
            reference,
            &matches,
            &duplicates,
            atomicity.get(pid).map(Vec::as_slice),
        )?;
        validity.push(serde_json::json!({
            "prompt_id": pid,
            "edges": check_dependency_validity(g).edges,
        }));
        records.push(QgRecord {
            prompt_id: pid.to_string(),
            judge: kind,
            quality,
            matches,
        });
    }

    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Invalid(format!("{}: {e}", a.out.display())))?;
    write_jsonl(&a.out.join("qg.jsonl"), &records)?;
    write_jsonl(&a.out.join("dependency_validity.jsonl"), &validity)?;
    let mut csv = String::from("prompt_id,precision,recall,uniqueness,dependency_valid_ratio,atomicity\n");
    for r in &records {
        let q = &r.quality;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.prompt_id,
            report::fmt3(q.precision.value()),
            q.recall.map(|x| report::fmt3(x.value())).unwrap_or_default(),
            report::fmt3(q.uniqueness.value()),
            report::fmt3(q.dependency_valid_ratio.value()),
            q.atomicity.map(|x| report::fmt3(x.value())).unwrap_or_default(),
        ));
    }
    write_atomic(&a.out.join("qg_quality.csv"), csv.as_bytes())?;
    eprintln!("metrics for {} graph(s) written to {}", records.len(), a.out.display());
    Ok(())
}

fn correlate_items(
    evaluations: &[ItemEvaluation],
    likert: &[LikertRecord],
) -> Result<metrics::CorrelationResult, CliError> {
    let ratings = dataset::mean_likert(likert);
    let scores: BTreeMap<(String, String), f64> = evaluations
        .iter()
        .map(|e| ((e.prompt_id.clone(), e.image_ref.clone()), e.average_score))
        .collect();
    let unpaired: Vec<String> = ratings
        .keys()
        .filter(|k| !scores.contains_key(*k))
        .chain(scores.keys().filter(|k| !ratings.contains_key(*k)))
        .map(|(p, i)| format!("{p}|{i}"))
        .collect();
    if !unpaired.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} item(s) lack either a score or a rating, first {}",
            unpaired.len(),
            unpaired[0]
        )));
    }
    let x: Vec<f64> = scores.values().copied().collect();
    let y: Vec<f64> = ratings.values().copied().collect();
    Ok(metrics::correlate(&x, &y)?)
}

fn cmd_correlate(a: &CorrelateArgs) -> CliResult {
    let evaluations: Vec<ItemEvaluation> = io::read_jsonl(&a.item_scores)?;
    let likert = dataset::load_likert(&a.likert)?;
    let r = correlate_items(&evaluations, &likert)?;
    let json = serde_json::to_string_pretty(&r).expect("result serializes");
    println!("{json}");
    if let Some(out) = &a.out {
        write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn cmd_report(a: &ReportArgs) -> CliResult {
    let evaluations: Vec<ItemEvaluation> = io::read_jsonl(&a.evaluations)?;
    let prompts = dataset::load_prompts(&a.prompts)?;
    let graphs = a.graphs.as_deref().map(dataset::load_graphs).transpose()?;
    let likert = a.likert.as_deref().map(dataset::load_likert).transpose()?;
    let answers = a.answers.as_deref().map(dataset::load_human_answers).transpose()?;
    let images = a.images.as_deref().map(dataset::load_image_manifest).transpose()?;
    let qg: Option<Vec<QgQualityResult>> = a
        .qg
        .as_deref()
        .map(io::read_jsonl::<QgRecord>)
        .transpose()?
        .map(|rows| rows.into_iter().map(|r| r.quality).collect());

    let answerers: BTreeSet<&str> = evaluations
        .iter()
        .flat_map(|e| e.answers.iter().map(|r| r.answerer_id.as_str()))
        .collect();
    let provenance = Provenance {
        config_hash: config_hash_of("report", a),
        backends: BTreeMap::from([(
            "qa".to_string(),
            answerers.into_iter().collect::<Vec<_>>().join(","),
        )]),
        generated_at: a.timestamp.clone().unwrap_or_else(now),
    };
    let inputs = ReportInputs {
        evaluations: &evaluations,
        prompts: &prompts,
        graphs: graphs.as_deref(),
        images: images.as_deref(),
        likert: likert.as_deref(),
        human_answers: answers.as_deref(),
        qg: qg.as_deref(),
    };
    let r = build_report(&inputs, provenance, a.min_samples)?;
    verify_report(&r, &evaluations)?;
    let files = write_report(&r, &a.out)?;
    eprintln!("wrote {} to {}", files.join(", "), a.out.display());
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> CliResult {
    let prompts = dataset::load_prompts(&a.prompts)?;
    let graphs = dataset::load_graphs(&a.graphs)?;
    let likert: Vec<LikertRecord> = a.likert.as_deref().map(dataset::load_likert).transpose()?.unwrap_or_default();
    let answers: Vec<HumanQuestionAnswer> = a
        .answers
        .as_deref()
        .map(dataset::load_human_answers)
        .transpose()?
        .unwrap_or_default();
    let images: Vec<ImageEntry> = a
        .images
        .as_deref()
        .map(dataset::load_image_manifest)
        .transpose()?
        .unwrap_or_default();
    if let Some(p) = &a.human_tuples {
        dataset::load_human_tuples(p)?;
    }
    let mut violations = dataset::check_references(&prompts, &graphs, &likert, &answers)
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>();
    let known: BTreeSet<&str> = prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    violations.extend(
        images
            .iter()
            .filter(|i| !known.contains(i.prompt_id.as_str()))
            .map(|i| format!("image for unknown prompt: prompt {}, image {}", i.prompt_id, i.image_ref)),
    );
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in &prompts {
        *counts.entry(p.source.to_string()).or_default() += 1;
    }
    println!("prompts: {}", prompts.len());
    for (s, n) in &counts {
        println!("  {s}: {n}");
    }
    println!("graphs: {}", graphs.len());
    println!("likert rows: {}", likert.len());
    println!("answer rows: {}", answers.len());
    for v in &violations {
        println!("violation: {v}");
    }
    if violations.is_empty() {
        println!("OK");
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} reference violation(s)", violations.len())))
    }
}

fn selftest(n: usize, seed: u64) -> Result<(), String> {
    let scenes = fixtures::synthetic_corpus(n, seed);
    let preambles = PreambleSet::builtin();
    let generator = fixtures::scripted_generator(&scenes, &preambles);
    let prompts: Vec<PromptRecord> = scenes.iter().map(|s| s.prompt.clone()).collect();
    let mut graphs: Vec<SceneGraph> = Vec::new();
    for (r, s) in generate_batch(&prompts, &generator, &preambles, &RetryConfig::default(), 4)
        .into_iter()
        .zip(&scenes)
    {
        let g = r.map_err(|f| f.to_string())?.graph;
        if g != s.graph() {
            return Err(format!("{}: generated graph differs from the fixture", s.prompt.prompt_id));
        }
        graphs.push(g);
    }

    // image "intact/<id>" shows the whole scene; "damaged/<id>" lacks the first entity
    let mut oracle = fixtures::scene_oracle(&scenes, |s| format!("intact/{}", s.prompt.prompt_id));
    let mut images = BTreeMap::new();
    let mut expected = HashMap::new();
    for (s, g) in scenes.iter().zip(&graphs) {
        let root = s.entities()[0];
        let removed = g.descendants(root).map_err(|e| e.to_string())?.len() + 1;
        let damaged = format!("damaged/{}", s.prompt.prompt_id);
        oracle.add_scene(damaged.clone(), s.tuples.iter().filter(|t| t.id != root));
        expected.insert(damaged.clone(), (g.len() - removed) as f64 / g.len() as f64);
        expected.insert(format!("intact/{}", s.prompt.prompt_id), 1.0);
        images.insert(
            s.prompt.prompt_id.clone(),
            vec![format!("intact/{}", s.prompt.prompt_id), damaged],
        );
    }
    let evaluations: Vec<ItemEvaluation> = evaluate_batch(&graphs, &images, &oracle, BatchOptions::default())
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for e in &evaluations {
        if e.average_score != expected[&e.image_ref] {
            return Err(format!(
                "{}: average {} but expected {}",
                e.image_ref, e.average_score, expected[&e.image_ref]
            ));
        }
    }
    let r = build_report(
        &ReportInputs {
            evaluations: &evaluations,
            prompts: &prompts,
            graphs: Some(&graphs),
            ..Default::default()
        },
        Provenance::default(),
        report::DEFAULT_MIN_SAMPLES,
    )
    .map_err(|e| e.to_string())?;
    verify_report(&r, &evaluations).map_err(|e| e.to_string())?;
    for g in &graphs {
        if check_dependency_validity(g).ratio.value() != 1.0 {
            return Err(format!("{}: dependency check below 1", g.prompt_id()));
        }
    }
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> CliResult {
    match selftest(a.prompts, a.seed) {
        Ok(()) => {
            println!("PASS");
            Ok(())
        }
        Err(e) => {
            println!("FAIL");
            Err(CliError::Invalid(e))
        }
    }
}
