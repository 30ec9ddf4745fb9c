//! Aggregated evaluation reports: per-model means by prompt source and by
//! semantic subcategory, plus optional QG, correlation and agreement blocks.
//!
//! Every cell lists the records it was computed from, and [`verify_report`]
//! recomputes each mean from those records.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{mean_likert, model_of, HumanQuestionAnswer, ImageEntry, LikertRecord, PromptRecord};
use crate::graph::SceneGraph;
use crate::io::{write_atomic, IoError};
use crate::metrics::{correlate, vqa_human_match_accuracy, CorrelationResult, MatchAccuracy, MetricsError, QgQualityResult};
use crate::scoring::ItemEvaluation;

/// Groups with fewer samples than this are flagged.
pub const DEFAULT_MIN_SAMPLES: usize = 30;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{what}: {} unmatched keys, first {:?}", keys.len(), keys.first())]
    KeyMismatch { what: &'static str, keys: Vec<String> },
    #[error("report has no evaluations")]
    Empty,
    #[error("cell {table}/{model}/{group}: stored mean {stored} but recomputed {recomputed}")]
    Inconsistent {
        table: &'static str,
        model: String,
        group: String,
        stored: f64,
        recomputed: f64,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    /// Role (e.g. `generator`, `qa`) to backend identifier.
    pub backends: BTreeMap<String, String>,
    pub generated_at: String,
}

/// SHA-256 of the canonical config text, hex encoded.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// One aggregate. `members` are `prompt_id|image_ref` for item-level cells and
/// `prompt_id|image_ref|question_id` for question-level cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub group: String,
    pub mean: f64,
    pub n: usize,
    pub low_sample: bool,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgSummary {
    pub graphs: usize,
    pub precision: f64,
    pub recall: Option<f64>,
    pub uniqueness: f64,
    pub dependency_valid_ratio: f64,
    pub atomicity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGroup {
    pub group: String,
    pub n: usize,
    pub low_sample: bool,
    /// Absent when the group is too small or constant.
    pub result: Option<CorrelationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub overall: CorrelationGroup,
    pub by_source: Vec<CorrelationGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub min_samples: usize,
    pub by_source: Vec<Cell>,
    pub by_subcategory: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qg: Option<QgSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_accuracy: Option<MatchAccuracy>,
}

/// Everything a report can be built from. Only evaluations and prompts are required.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportInputs<'a> {
    pub evaluations: &'a [ItemEvaluation],
    pub prompts: &'a [PromptRecord],
    pub graphs: Option<&'a [SceneGraph]>,
    /// Overrides the model name derived from `image_ref`.
    pub images: Option<&'a [ImageEntry]>,
    pub likert: Option<&'a [LikertRecord]>,
    pub human_answers: Option<&'a [HumanQuestionAnswer]>,
    pub qg: Option<&'a [QgQualityResult]>,
}

fn item_key(e: &ItemEvaluation) -> String {
    format!("{}|{}", e.prompt_id, e.image_ref)
}

fn mean(values: impl IntoIterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (sum / n as f64, n)
}

struct Lookup<'a> {
    model: HashMap<String, String>,
    source: HashMap<&'a str, String>,
    graphs: HashMap<&'a str, &'a SceneGraph>,
}

impl<'a> Lookup<'a> {
    fn new(inputs: &ReportInputs<'a>) -> Self {
        Lookup {
            model: inputs
                .images
                .unwrap_or_default()
                .iter()
                .map(|e| (e.image_ref.clone(), e.model()))
                .collect(),
            source: inputs
                .prompts
                .iter()
                .map(|p| (p.prompt_id.as_str(), p.source.to_string()))
                .collect(),
            graphs: inputs
                .graphs
                .unwrap_or_default()
                .iter()
                .map(|g| (g.prompt_id(), g))
                .collect(),
        }
    }

    fn model(&self, image_ref: &str) -> String {
        self.model
            .get(image_ref)
            .cloned()
            .unwrap_or_else(|| model_of(image_ref))
    }
}

fn check_keys(inputs: &ReportInputs<'_>, lookup: &Lookup<'_>) -> Result<(), ReportError> {
    let missing: Vec<String> = inputs
        .evaluations
        .iter()
        .filter(|e| !lookup.source.contains_key(e.prompt_id.as_str()))
        .map(item_key)
        .collect();
    if !missing.is_empty() {
        return Err(ReportError::KeyMismatch {
            what: "evaluations without a prompt record",
            keys: missing,
        });
    }
    if inputs.graphs.is_some() {
        let missing: Vec<String> = inputs
            .evaluations
            .iter()
            .filter(|e| match lookup.graphs.get(e.prompt_id.as_str()) {
                None => true,
                Some(g) => {
                    e.answers.iter().any(|a| !g.contains(a.question_id))
                        || e.scores.keys().any(|&q| !g.contains(q))
                }
            })
            .map(item_key)
            .collect();
        if !missing.is_empty() {
            return Err(ReportError::KeyMismatch {
                what: "evaluations that do not resolve against a graph",
                keys: missing,
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    let dup: Vec<String> = inputs
        .evaluations
        .iter()
        .map(item_key)
        .filter(|k| !seen.insert(k.clone()))
        .collect();
    if !dup.is_empty() {
        return Err(ReportError::KeyMismatch {
            what: "duplicate evaluation items",
            keys: dup,
        });
    }
    Ok(())
}

fn cells(groups: BTreeMap<(String, String), Vec<(String, f64)>>, min_samples: usize) -> Vec<Cell> {
    groups
        .into_iter()
        .map(|((model, group), mut rows)| {
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            let (m, n) = mean(rows.iter().map(|r| r.1));
            Cell {
                model,
                group,
                mean: m,
                n,
                low_sample: n < min_samples,
                members: rows.into_iter().map(|r| r.0).collect(),
            }
        })
        .collect()
}

fn correlation_group(group: String, x: &[f64], y: &[f64], min_samples: usize) -> CorrelationGroup {
    CorrelationGroup {
        group,
        n: x.len(),
        low_sample: x.len() < min_samples,
        result: correlate(x, y).ok(),
    }
}

fn correlation_block(
    inputs: &ReportInputs<'_>,
    lookup: &Lookup<'_>,
    likert: &[LikertRecord],
    min_samples: usize,
) -> Result<CorrelationBlock, ReportError> {
    let ratings = mean_likert(likert);
    let scored: BTreeMap<(String, String), f64> = inputs
        .evaluations
        .iter()
        .map(|e| ((e.prompt_id.clone(), e.image_ref.clone()), e.average_score))
        .collect();
    let unpaired: Vec<String> = ratings
        .keys()
        .filter(|k| !scored.contains_key(*k))
        .chain(scored.keys().filter(|k| !ratings.contains_key(*k)))
        .map(|(p, i)| format!("{p}|{i}"))
        .collect();
    if !unpaired.is_empty() {
        return Err(ReportError::KeyMismatch {
            what: "items with a score but no rating or vice versa",
            keys: unpaired,
        });
    }
    let mut all = (Vec::new(), Vec::new());
    let mut by_source: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, score) in &scored {
        let rating = ratings[key];
        all.0.push(*score);
        all.1.push(rating);
        let src = by_source.entry(lookup.source[key.0.as_str()].clone()).or_default();
        src.0.push(*score);
        src.1.push(rating);
    }
    Ok(CorrelationBlock {
        overall: correlation_group("all".into(), &all.0, &all.1, min_samples),
        by_source: by_source
            .into_iter()
            .map(|(s, (x, y))| correlation_group(s, &x, &y, min_samples))
            .collect(),
    })
}

fn qg_summary(results: &[QgQualityResult]) -> Option<QgSummary> {
    if results.is_empty() {
        return None;
    }
    let avg = |f: &dyn Fn(&QgQualityResult) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = results.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| mean(vals).0)
    };
    Some(QgSummary {
        graphs: results.len(),
        precision: avg(&|r| Some(r.precision.value()))?,
        recall: avg(&|r| r.recall.map(|x| x.value())),
        uniqueness: avg(&|r| Some(r.uniqueness.value()))?,
        dependency_valid_ratio: avg(&|r| Some(r.dependency_valid_ratio.value()))?,
        atomicity: avg(&|r| r.atomicity.map(|x| x.value())),
    })
}

/// Builds the report. Item cells average `average_score`; subcategory cells
/// average the final per-question scores of questions whose tuple has that
/// subcategory and need `graphs`.
pub fn build_report(
    inputs: &ReportInputs<'_>,
    provenance: Provenance,
    min_samples: usize,
) -> Result<EvalReport, ReportError> {
    if inputs.evaluations.is_empty() {
        return Err(ReportError::Empty);
    }
    let lookup = Lookup::new(inputs);
    check_keys(inputs, &lookup)?;

    let mut by_source: BTreeMap<(String, String), Vec<(String, f64)>> = BTreeMap::new();
    let mut by_sub: BTreeMap<(String, String), Vec<(String, f64)>> = BTreeMap::new();
    for e in inputs.evaluations {
        let model = lookup.model(&e.image_ref);
        let source = lookup.source[e.prompt_id.as_str()].clone();
        by_source
            .entry((model.clone(), source))
            .or_default()
            .push((item_key(e), e.average_score));
        if let Some(g) = lookup.graphs.get(e.prompt_id.as_str()) {
            for (&qid, &score) in &e.scores {
                let t = g.tuple(qid).expect("checked above");
                by_sub
                    .entry((model.clone(), t.subcategory.to_string()))
                    .or_default()
                    .push((format!("{}|{qid}", item_key(e)), f64::from(score)));
            }
        }
    }

    let correlation = match inputs.likert {
        Some(l) => Some(correlation_block(inputs, &lookup, l, min_samples)?),
        None => None,
    };
    let match_accuracy = match inputs.human_answers {
        Some(h) => Some(vqa_human_match_accuracy(
            inputs.evaluations,
            h,
            inputs.graphs.unwrap_or_default(),
            inputs.prompts,
        )?),
        None => None,
    };

    Ok(EvalReport {
        provenance,
        min_samples,
        by_source: cells(by_source, min_samples),
        by_subcategory: cells(by_sub, min_samples),
        qg: inputs.qg.and_then(qg_summary),
        correlation,
        match_accuracy,
    })
}

/// Recomputes every cell mean from the raw evaluations its members name.
pub fn verify_report(report: &EvalReport, evaluations: &[ItemEvaluation]) -> Result<(), ReportError> {
    let items: HashMap<String, &ItemEvaluation> = evaluations.iter().map(|e| (item_key(e), e)).collect();
    let missing = |k: &str| ReportError::KeyMismatch {
        what: "cell member not found in evaluations",
        keys: vec![k.to_string()],
    };
    let check = |table: &'static str, c: &Cell, values: Vec<f64>| {
        let (recomputed, n) = mean(values);
        if n != c.n || recomputed.to_bits() != c.mean.to_bits() {
            return Err(ReportError::Inconsistent {
                table,
                model: c.model.clone(),
                group: c.group.clone(),
                stored: c.mean,
                recomputed,
            });
        }
        Ok(())
    };
    for c in &report.by_source {
        let values = c
            .members
            .iter()
            .map(|m| items.get(m).map(|e| e.average_score).ok_or_else(|| missing(m)))
            .collect::<Result<Vec<_>, _>>()?;
        check("by_source", c, values)?;
    }
    for c in &report.by_subcategory {
        let values = c
            .members
            .iter()
            .map(|m| {
                let (item, qid) = m.rsplit_once('|').ok_or_else(|| missing(m))?;
                let qid: u32 = qid.parse().map_err(|_| missing(m))?;
                items
                    .get(item)
                    .and_then(|e| e.scores.get(&qid))
                    .map(|&s| f64::from(s))
                    .ok_or_else(|| missing(m))
            })
            .collect::<Result<Vec<_>, _>>()?;
        check("by_subcategory", c, values)?;
    }
    Ok(())
}

/// Fixed 3-decimal formatting, rounding exact ties to even.
///
/// The formatter rounds the exact binary value, so only values that are exact
/// decimal ties in binary (like 0.0625) hit the tie rule.
pub fn fmt3(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn opt3(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cell_csv(header: &str, cells: &[Cell]) -> String {
    let mut out = format!("model,{header},mean,n,low_sample\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&c.model),
            csv_field(&c.group),
            fmt3(c.mean),
            c.n,
            c.low_sample
        );
    }
    out
}

/// The CSV tables of a report, by file name. Deterministic for equal inputs.
pub fn render_csv(report: &EvalReport) -> BTreeMap<&'static str, String> {
    let mut files = BTreeMap::new();
    files.insert("by_source.csv", cell_csv("source", &report.by_source));
    if !report.by_subcategory.is_empty() {
        files.insert("by_subcategory.csv", cell_csv("subcategory", &report.by_subcategory));
    }
    if let Some(q) = &report.qg {
        let mut out = "graphs,precision,recall,uniqueness,dependency_valid_ratio,atomicity\n".to_string();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            q.graphs,
            fmt3(q.precision),
            opt3(q.recall),
            fmt3(q.uniqueness),
            fmt3(q.dependency_valid_ratio),
            opt3(q.atomicity)
        );
        files.insert("qg_quality.csv", out);
    }
    if let Some(c) = &report.correlation {
        let mut out = "group,n,spearman_rho,kendall_tau,low_sample\n".to_string();
        for g in std::iter::once(&c.overall).chain(&c.by_source) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&g.group),
                g.n,
                opt3(g.result.map(|r| r.spearman_rho)),
                opt3(g.result.map(|r| r.kendall_tau)),
                g.low_sample
            );
        }
        files.insert("correlation.csv", out);
    }
    if let Some(m) = &report.match_accuracy {
        let mut out = "grouping,group,matched,total,accuracy\n".to_string();
        let mut row = |kind: &str, group: &str, a: &crate::metrics::GroupAccuracy| {
            let _ = writeln!(
                out,
                "{kind},{},{},{},{}",
                csv_field(group),
                a.matched,
                a.total,
                fmt3(a.accuracy)
            );
        };
        row("overall", "all", &m.overall);
        for (k, a) in &m.by_category {
            row("category", k, a);
        }
        for (k, a) in &m.by_subcategory {
            row("subcategory", k, a);
        }
        for (k, a) in &m.by_source {
            row("source", k, a);
        }
        files.insert("match_accuracy.csv", out);
    }
    files
}

/// Writes the CSV tables and `summary.json` into `dir`, each atomically.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<String>, ReportError> {
    std::fs::create_dir_all(dir).map_err(crate::io::io_err(dir))?;
    let mut written = Vec::new();
    for (name, body) in render_csv(report) {
        write_atomic(&dir.join(name), body.as_bytes())?;
        written.push(name.to_string());
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    written.push("summary.json".into());
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;
    use crate::scoring::{Answer, AnswerRecord};

    fn prompt(id: &str, source: Source) -> PromptRecord {
        PromptRecord {
            prompt_id: id.into(),
            text: format!("text of {id}"),
            source,
            notes: None,
        }
    }

    fn eval(pid: &str, image: &str, scores: &[u8]) -> ItemEvaluation {
        let scores: BTreeMap<u32, u8> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (i as u32 + 1, s))
            .collect();
        ItemEvaluation {
            prompt_id: pid.into(),
            image_ref: image.into(),
            answers: scores
                .iter()
                .map(|(&id, &s)| AnswerRecord {
                    question_id: id,
                    answer: if s == 1 { Answer::Yes } else { Answer::No },
                    raw_text: String::new(),
                    answerer_id: "m".into(),
                })
                .collect(),
            average_score: crate::scoring::average(&scores).unwrap(),
            scores,
            flags: Default::default(),
        }
    }

    #[test]
    fn two_models_two_sources() {
        let prompts = [
            prompt("a1", Source::Tifa160),
            prompt("a2", Source::Tifa160),
            prompt("b1", Source::Whoops),
        ];
        let evals = [
            eval("a1", "m1/a1.png", &[1, 1]),    // 1.0
            eval("a2", "m1/a2.png", &[1, 0]),    // 0.5
            eval("b1", "m1/b1.png", &[0, 0]),    // 0.0
            eval("a1", "m2/a1.png", &[1, 0, 0, 0]), // 0.25
            eval("a2", "m2/a2.png", &[0, 0]),    // 0.0
            eval("b1", "m2/b1.png", &[1, 1, 1, 0]), // 0.75
        ];
        let r = build_report(
            &ReportInputs {
                evaluations: &evals,
                prompts: &prompts,
                ..Default::default()
            },
            Provenance::default(),
            DEFAULT_MIN_SAMPLES,
        )
        .unwrap();
        let got: Vec<(&str, &str, f64, usize)> = r
            .by_source
            .iter()
            .map(|c| (c.model.as_str(), c.group.as_str(), c.mean, c.n))
            .collect();
        assert_eq!(
            got,
            vec![
                ("m1", "tifa160", 0.75, 2),
                ("m1", "whoops", 0.0, 1),
                ("m2", "tifa160", 0.125, 2),
                ("m2", "whoops", 0.75, 1),
            ]
        );
        assert!(r.by_source.iter().all(|c| c.low_sample));
        assert!(r.correlation.is_none() && r.match_accuracy.is_none());
        verify_report(&r, &evals).unwrap();
        let csv = &render_csv(&r)["by_source.csv"];
        assert!(csv.contains("m2,tifa160,0.125,2,true\n"));
    }

    #[test]
    fn tampered_cell_fails_verification() {
        let prompts = [prompt("a1", Source::Tifa160)];
        let evals = [eval("a1", "m1/a1.png", &[1, 0])];
        let mut r = build_report(
            &ReportInputs {
                evaluations: &evals,
                prompts: &prompts,
                ..Default::default()
            },
            Provenance::default(),
            1,
        )
        .unwrap();
        assert_eq!(r.by_source[0].n, 1);
        assert!(!r.by_source[0].low_sample);
        r.by_source[0].mean = 0.6;
        assert!(matches!(
            verify_report(&r, &evals),
            Err(ReportError::Inconsistent { .. })
        ));
    }

    #[test]
    fn unknown_prompt_is_a_key_mismatch() {
        let evals = [eval("zz", "m1/zz.png", &[1])];
        let err = build_report(
            &ReportInputs {
                evaluations: &evals,
                prompts: &[],
                ..Default::default()
            },
            Provenance::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, ReportError::KeyMismatch { .. }));
    }

    #[test]
    fn half_even_formatting() {
        assert_eq!(fmt3(0.0625), "0.062");
        assert_eq!(fmt3(0.1875), "0.188");
        assert_eq!(fmt3(0.5), "0.500");
        assert_eq!(fmt3(2.0 / 3.0), "0.667");
        assert_eq!(fmt3(-0.0001), "0.000");
    }
}
