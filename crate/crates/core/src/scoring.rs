//! Dependency-aware answering and per-item scores.
//!
//! Questions are visited in topological order. A question whose parents are
//! not all scored 1 scores 0, however the backend answered it. In
//! [`ScoreMode::Skip`] such questions are never sent to the backend at all.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, QaBackend, QaQuery};
use crate::graph::SceneGraph;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Ask every question, then zero children of 0-scored parents.
    ZeroOut,
    /// Never ask a question whose parents are not all scored 1.
    #[default]
    Skip,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::ZeroOut => "zero_out",
            ScoreMode::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// A backend error on any question fails the whole item.
    #[default]
    FailItem,
    /// The question scores 0 and is flagged.
    ScoreZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Answer {
    Yes,
    No,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(rename = "id")]
    pub question_id: u32,
    pub answer: Answer,
    #[serde(rename = "raw")]
    pub raw_text: String,
    #[serde(rename = "answerer")]
    pub answerer_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFlags {
    /// Replies that were neither yes nor no; scored 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unparsed: Vec<u32>,
    /// Questions whose backend call failed under [`ErrorPolicy::ScoreZero`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backend_errors: Vec<u32>,
}

impl ItemFlags {
    fn is_empty(&self) -> bool {
        self.unparsed.is_empty() && self.backend_errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvaluation {
    pub prompt_id: String,
    pub image_ref: String,
    pub answers: Vec<AnswerRecord>,
    pub scores: BTreeMap<u32, u8>,
    #[serde(rename = "average")]
    pub average_score: f64,
    #[serde(default, skip_serializing_if = "ItemFlags::is_empty")]
    pub flags: ItemFlags,
}

impl ItemEvaluation {
    pub fn answer(&self, question_id: u32) -> Option<&AnswerRecord> {
        self.answers.iter().find(|a| a.question_id == question_id)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("prompt {prompt_id}: graph has no questions, score undefined")]
    EmptyGraph { prompt_id: String },
    #[error("prompt {prompt_id}, image {image_ref}, question {question_id}: {source}")]
    Backend {
        prompt_id: String,
        image_ref: String,
        question_id: u32,
        source: BackendError,
    },
    #[error("no graph for prompt {prompt_id} (image {image_ref})")]
    MissingGraph { prompt_id: String, image_ref: String },
}

impl ScoringError {
    pub fn is_backend(&self) -> bool {
        matches!(self, ScoringError::Backend { .. })
    }
}

/// Normalized reading of a backend reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredAnswer {
    pub score: u8,
    pub answer: Answer,
    pub unparsed: bool,
}

/// `"yes..."` scores 1, `"no..."` scores 0, anything else scores 0 and is flagged.
/// Case-insensitive, surrounding whitespace ignored.
pub fn answer_to_score(raw_text: &str) -> ScoredAnswer {
    let t = raw_text.trim().to_lowercase();
    if t.starts_with("yes") {
        ScoredAnswer {
            score: 1,
            answer: Answer::Yes,
            unparsed: false,
        }
    } else if t.starts_with("no") {
        ScoredAnswer {
            score: 0,
            answer: Answer::No,
            unparsed: false,
        }
    } else {
        ScoredAnswer {
            score: 0,
            answer: Answer::No,
            unparsed: true,
        }
    }
}

/// Applies zero-out to raw per-question scores in topological order, so a
/// zeroed ancestor propagates through every path below it.
///
/// `raw` must hold an entry for every question id of `g`.
pub fn propagate_zeros(g: &SceneGraph, raw: &BTreeMap<u32, u8>) -> BTreeMap<u32, u8> {
    let mut scores = raw.clone();
    for id in g.topological_order() {
        if g.parents(id).iter().any(|p| scores.get(p) == Some(&0)) {
            scores.insert(id, 0);
        }
    }
    scores
}

/// `sum / len`; `None` when there are no questions.
pub fn average(scores: &BTreeMap<u32, u8>) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let sum: u32 = scores.values().map(|&s| u32::from(s)).sum();
    Some(f64::from(sum) / scores.len() as f64)
}

/// Scores one image against one graph.
pub fn evaluate_item(
    g: &SceneGraph,
    image_ref: &str,
    backend: &dyn QaBackend,
    mode: ScoreMode,
    policy: ErrorPolicy,
) -> Result<ItemEvaluation, ScoringError> {
    if g.is_empty() {
        return Err(ScoringError::EmptyGraph {
            prompt_id: g.prompt_id().to_string(),
        });
    }
    let mut answers = BTreeMap::new();
    let mut raw_scores = BTreeMap::new();
    let mut flags = ItemFlags::default();

    for id in g.topological_order() {
        if mode == ScoreMode::Skip && g.parents(id).iter().any(|p| raw_scores.get(p) == Some(&0)) {
            raw_scores.insert(id, 0);
            answers.insert(
                id,
                AnswerRecord {
                    question_id: id,
                    answer: Answer::Skipped,
                    raw_text: String::new(),
                    answerer_id: backend.name().to_string(),
                },
            );
            continue;
        }
        let q = g.question(id).expect("dense ids");
        let query = QaQuery {
            image_ref,
            question: &q.text,
            tuple: g.tuple(q.tuple_id),
        };
        let (raw, scored) = match backend.ask(&query) {
            Ok(raw) => {
                let s = answer_to_score(&raw);
                if s.unparsed {
                    flags.unparsed.push(id);
                }
                (raw, s)
            }
            Err(source) if policy == ErrorPolicy::FailItem => {
                return Err(ScoringError::Backend {
                    prompt_id: g.prompt_id().to_string(),
                    image_ref: image_ref.to_string(),
                    question_id: id,
                    source,
                })
            }
            Err(_) => {
                flags.backend_errors.push(id);
                (
                    String::new(),
                    ScoredAnswer {
                        score: 0,
                        answer: Answer::No,
                        unparsed: false,
                    },
                )
            }
        };
        raw_scores.insert(id, scored.score);
        answers.insert(
            id,
            AnswerRecord {
                question_id: id,
                answer: scored.answer,
                raw_text: raw,
                answerer_id: backend.name().to_string(),
            },
        );
    }

    // In skip mode propagation already happened during traversal; running it
    // again is a no-op there and keeps both modes on the same code path.
    let scores = propagate_zeros(g, &raw_scores);
    let average_score = average(&scores).expect("non-empty graph");
    Ok(ItemEvaluation {
        prompt_id: g.prompt_id().to_string(),
        image_ref: image_ref.to_string(),
        answers: answers.into_values().collect(),
        scores,
        average_score,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub mode: ScoreMode,
    pub policy: ErrorPolicy,
    pub parallelism: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            mode: ScoreMode::Skip,
            policy: ErrorPolicy::FailItem,
            parallelism: 1,
        }
    }
}

/// Scores every `(graph, image)` pair. Output order follows `graphs`, then
/// each prompt's image order; prompts in `images` without a graph produce
/// [`ScoringError::MissingGraph`] records at the end.
pub fn evaluate_batch(
    graphs: &[SceneGraph],
    images: &BTreeMap<String, Vec<String>>,
    backend: &dyn QaBackend,
    opts: BatchOptions,
) -> Vec<Result<ItemEvaluation, ScoringError>> {
    let mut jobs: Vec<(Option<&SceneGraph>, &str, &str)> = Vec::new();
    for g in graphs {
        for img in images.get(g.prompt_id()).into_iter().flatten() {
            jobs.push((Some(g), g.prompt_id(), img));
        }
    }
    for (pid, imgs) in images {
        if !graphs.iter().any(|g| g.prompt_id() == pid) {
            for img in imgs {
                jobs.push((None, pid, img));
            }
        }
    }
    let run = |&(g, pid, img): &(Option<&SceneGraph>, &str, &str)| match g {
        Some(g) => evaluate_item(g, img, backend, opts.mode, opts.policy),
        None => Err(ScoringError::MissingGraph {
            prompt_id: pid.to_string(),
            image_ref: img.to_string(),
        }),
    };
    if opts.parallelism <= 1 {
        return jobs.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
    {
        Ok(pool) => pool.install(|| jobs.par_iter().map(run).collect()),
        Err(_) => jobs.iter().map(run).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::tuple;
    use crate::graph::{build_graph, DependencyEdge, QuestionNode, Subcategory};
    use std::collections::HashMap;
    use std::sync::Mutex;

    /// Answers from a fixed table keyed by question text and logs every call.
    struct Table {
        answers: HashMap<String, &'static str>,
        log: Mutex<Vec<String>>,
    }

    impl Table {
        fn new(pairs: &[(&str, &'static str)]) -> Self {
            Table {
                answers: pairs.iter().map(|(q, a)| (q.to_string(), *a)).collect(),
                log: Mutex::new(Vec::new()),
            }
        }
    }

    impl QaBackend for Table {
        fn name(&self) -> &str {
            "table"
        }

        fn ask(&self, q: &QaQuery<'_>) -> Result<String, BackendError> {
            self.log.lock().unwrap().push(q.question.to_string());
            self.answers
                .get(q.question)
                .map(|a| a.to_string())
                .ok_or(BackendError::Timeout)
        }
    }

    fn paint_chipped() -> SceneGraph {
        let tuples = vec![
            tuple(1, Subcategory::Whole, &["motorcycle"]),
            tuple(2, Subcategory::Color, &["blue", "motorcycle"]),
            tuple(3, Subcategory::Whole, &["doors"]),
            tuple(4, Subcategory::State, &["paint chipped", "doors"]),
        ];
        let questions = vec![
            QuestionNode::new(1, "q1"),
            QuestionNode::new(2, "q2"),
            QuestionNode::new(3, "q3"),
            QuestionNode::new(4, "q4"),
        ];
        let edges = vec![DependencyEdge::new(1, 2), DependencyEdge::new(3, 4)];
        build_graph("moto", tuples, questions, edges).unwrap()
    }

    fn chain() -> SceneGraph {
        let tuples = (1..=3)
            .map(|i| tuple(i, Subcategory::Whole, &[&format!("e{i}")]))
            .collect();
        let questions = (1..=3).map(|i| QuestionNode::new(i, format!("q{i}"))).collect();
        let edges = vec![DependencyEdge::new(1, 2), DependencyEdge::new(2, 3)];
        build_graph("chain", tuples, questions, edges).unwrap()
    }

    #[test]
    fn motorcycle_hand_trace() {
        let g = paint_chipped();
        let b = Table::new(&[("q1", "no"), ("q2", "yes"), ("q3", "yes"), ("q4", "yes")]);
        for mode in [ScoreMode::ZeroOut, ScoreMode::Skip] {
            let e = evaluate_item(&g, "img", &b, mode, ErrorPolicy::FailItem).unwrap();
            assert_eq!(e.scores.values().copied().collect::<Vec<_>>(), vec![0, 0, 1, 1]);
            assert_eq!(e.average_score, 0.5);
        }
        let e = evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::FailItem).unwrap();
        assert_eq!(e.answer(2).unwrap().answer, Answer::Skipped);
    }

    #[test]
    fn all_yes_is_perfect() {
        let g = paint_chipped();
        let b = Table::new(&[("q1", "Yes"), ("q2", "yes."), ("q3", "YES"), ("q4", "yes")]);
        let e = evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::FailItem).unwrap();
        assert_eq!(e.average_score, 1.0);
    }

    #[test]
    fn zero_out_is_transitive() {
        let g = chain();
        let b = Table::new(&[("q1", "no"), ("q2", "yes"), ("q3", "yes")]);
        let e = evaluate_item(&g, "img", &b, ScoreMode::ZeroOut, ErrorPolicy::FailItem).unwrap();
        assert_eq!(e.scores, BTreeMap::from([(1, 0), (2, 0), (3, 0)]));
        assert_eq!(e.average_score, 0.0);
        assert_eq!(b.log.lock().unwrap().len(), 3);

        let b = Table::new(&[("q1", "no"), ("q2", "yes"), ("q3", "yes")]);
        let e = evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::FailItem).unwrap();
        assert_eq!(e.average_score, 0.0);
        assert_eq!(*b.log.lock().unwrap(), vec!["q1"]);
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(answer_to_score("Yes").score, 1);
        let s = answer_to_score("  no, there is no motorcycle");
        assert_eq!((s.score, s.answer, s.unparsed), (0, Answer::No, false));
        let s = answer_to_score("maybe");
        assert_eq!((s.score, s.unparsed), (0, true));
        assert!(answer_to_score("").unparsed);
    }

    #[test]
    fn unparsed_replies_are_flagged() {
        let g = chain();
        let b = Table::new(&[("q1", "yes"), ("q2", "maybe"), ("q3", "yes")]);
        let e = evaluate_item(&g, "img", &b, ScoreMode::ZeroOut, ErrorPolicy::FailItem).unwrap();
        assert_eq!(e.flags.unparsed, vec![2]);
        assert_eq!(e.scores[&3], 0);
    }

    #[test]
    fn backend_error_policies() {
        let g = chain();
        let b = Table::new(&[("q1", "yes"), ("q3", "yes")]);
        let err = evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::FailItem).unwrap_err();
        assert!(matches!(err, ScoringError::Backend { question_id: 2, .. }));
        let e = evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::ScoreZero).unwrap();
        assert_eq!(e.flags.backend_errors, vec![2]);
        assert_eq!(e.average_score, 1.0 / 3.0);
    }

    #[test]
    fn empty_graph_has_no_score() {
        let g = SceneGraph::empty("e");
        let b = Table::new(&[]);
        assert!(matches!(
            evaluate_item(&g, "img", &b, ScoreMode::Skip, ErrorPolicy::FailItem),
            Err(ScoringError::EmptyGraph { .. })
        ));
    }

    #[test]
    fn evaluation_json_shape() {
        let g = chain();
        let b = Table::new(&[("q1", "yes"), ("q2", "no"), ("q3", "yes")]);
        let e = evaluate_item(&g, "m/chain.png", &b, ScoreMode::Skip, ErrorPolicy::FailItem).unwrap();
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["answers"][2]["answer"], "SKIPPED");
        assert_eq!(v["answers"][0]["raw"], "yes");
        assert_eq!(v["answers"][0]["answerer"], "table");
        assert_eq!(v["scores"]["1"], 1);
        assert!(v.get("flags").is_none());
        let back: ItemEvaluation = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn batch_cardinality_order_and_isolation() {
        let g1 = chain();
        let g2 = paint_chipped();
        let b = Table::new(&[
            ("q1", "yes"),
            ("q2", "yes"),
            ("q3", "yes"),
            ("q4", "no"),
        ]);
        let mut images = BTreeMap::new();
        images.insert("chain".to_string(), vec!["a".into(), "b".into(), "c".into()]);
        images.insert("moto".to_string(), vec!["a".into(), "b".into(), "c".into()]);
        let graphs = [g1, g2];
        let seq = evaluate_batch(&graphs, &images, &b, BatchOptions::default());
        assert_eq!(seq.len(), 6);
        let par = evaluate_batch(
            &graphs,
            &images,
            &b,
            BatchOptions {
                parallelism: 4,
                ..Default::default()
            },
        );
        assert_eq!(seq, par);
        assert_eq!(seq[3].as_ref().unwrap().prompt_id, "moto");

        images.insert("ghost".to_string(), vec!["z".into()]);
        let out = evaluate_batch(&graphs, &images, &b, BatchOptions::default());
        assert_eq!(out.len(), 7);
        assert!(matches!(out[6], Err(ScoringError::MissingGraph { .. })));
    }
}
