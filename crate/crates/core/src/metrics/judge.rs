//! Tuple/question match and duplicate judges.
//!
//! The lexical baseline is deterministic and always available. The model
//! judge sends the precision, recall and uniqueness preambles to a
//! generation backend and parses the replies.

use std::collections::{BTreeMap, BTreeSet};

use super::lexical::{content_tokens, overlap, DEFAULT_OVERLAP_THRESHOLD};
use super::{JudgeKind, MatchJudgment, MetricsError};
use crate::backends::{GenerationBackend, ScriptedGenerator};
use crate::codec;
use crate::graph::{SceneGraph, SemanticTuple};
use crate::pipeline::Preamble;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgePreambles {
    pub precision: Preamble,
    pub recall: Preamble,
    pub uniqueness: Preamble,
}

impl JudgePreambles {
    pub fn builtin() -> Self {
        let p = |name, text: &str| Preamble::parse(name, text).expect("builtin preamble is valid");
        JudgePreambles {
            precision: p("precision.txt", include_str!("../../data/preambles/precision.txt")),
            recall: p("recall.txt", include_str!("../../data/preambles/recall.txt")),
            uniqueness: p("uniqueness.txt", include_str!("../../data/preambles/uniqueness.txt")),
        }
    }

    pub fn scripted_backend(&self, name: &str) -> ScriptedGenerator {
        ScriptedGenerator::new(name)
            .with_stage("precision", self.precision.template())
            .with_stage("recall", self.recall.template())
            .with_stage("uniqueness", self.uniqueness.template())
    }
}

/// Token-overlap judge: a pair matches when the shared content tokens reach
/// `threshold` of the shorter side's token set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalJudge {
    pub threshold: f64,
}

impl Default for LexicalJudge {
    fn default() -> Self {
        LexicalJudge {
            threshold: DEFAULT_OVERLAP_THRESHOLD,
        }
    }
}

impl LexicalJudge {
    pub fn matches(&self, a: &str, b: &str) -> bool {
        overlap(&content_tokens(a), &content_tokens(b)) >= self.threshold
    }
}

fn tuple_text(t: &SemanticTuple) -> String {
    t.args.join(" ")
}

pub enum Judge<'a> {
    Lexical(LexicalJudge),
    Model {
        backend: &'a dyn GenerationBackend,
        preambles: &'a JudgePreambles,
    },
}

/// Judgments plus every raw model reply, for the trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgeOutput<T> {
    pub value: T,
    pub raw: Vec<String>,
}

fn reference_or_own<'g>(g: &'g SceneGraph, reference: Option<&'g [SemanticTuple]>) -> &'g [SemanticTuple] {
    reference.unwrap_or_else(|| g.tuples())
}

fn judge_input(prompt: &str, tuples: Option<&[SemanticTuple]>, g: &SceneGraph, prefix: &str) -> String {
    let mut s = format!("{}\n\n", prompt.trim());
    if let Some(t) = tuples {
        s.push_str("tuples:\n");
        s.push_str(&codec::encode_tuples(t));
        s.push('\n');
    }
    s.push_str("questions:\n");
    for q in g.questions() {
        s.push_str(&format!("{prefix}{} | {}\n", q.id, q.text));
    }
    s.trim_end().to_string()
}

/// Parses `q3`, `t3`, ` 3 ` and friends.
fn parse_ref(tok: &str) -> Option<u32> {
    let t = tok.trim().trim_start_matches(|c: char| c.is_ascii_alphabetic());
    t.trim().parse().ok().filter(|&v| v > 0)
}

fn parse_id_list(s: &str) -> Result<Vec<u32>, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") || s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| parse_ref(tok).ok_or_else(|| format!("bad id {:?}", tok.trim())))
        .collect()
}

/// Parses `ID | ID, ID` lines plus one summary line starting with `summary`.
fn parse_mapping(text: &str, summary: &str) -> Result<BTreeMap<u32, Vec<u32>>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.to_lowercase().starts_with(summary) {
            let (_, rest) = line.split_once(':').unwrap_or(("", ""));
            parse_id_list(rest).map_err(|e| format!("line {}: {e}", i + 1))?;
            continue;
        }
        let (id, rest) = line
            .split_once('|')
            .ok_or_else(|| format!("line {}: missing '|'", i + 1))?;
        let id = parse_ref(id).ok_or_else(|| format!("line {}: bad id {:?}", i + 1, id.trim()))?;
        let ids = parse_id_list(rest).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.entry(id).or_insert_with(Vec::new).extend(ids);
    }
    Ok(out)
}

/// Parses `duplicates: q1,q4` lines, one set per line.
pub fn parse_duplicates(text: &str) -> Result<Vec<BTreeSet<u32>>, String> {
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rest = line
            .to_lowercase()
            .strip_prefix("duplicates")
            .map(|r| r.trim_start_matches(|c: char| c == ':' || c.is_whitespace()).to_string())
            .ok_or_else(|| format!("line {}: expected 'duplicates:'", i + 1))?;
        let ids: BTreeSet<u32> = parse_id_list(&rest)
            .map_err(|e| format!("line {}: {e}", i + 1))?
            .into_iter()
            .collect();
        if ids.len() > 1 {
            sets.push(ids);
        }
    }
    Ok(sets)
}

/// One judgment per `(tuple, question)` pair. With a model judge a pair is
/// matched when either the precision or the recall reply links it.
pub fn judge_matches(
    g: &SceneGraph,
    prompt: &str,
    reference: Option<&[SemanticTuple]>,
    judge: &Judge<'_>,
) -> Result<JudgeOutput<Vec<MatchJudgment>>, MetricsError> {
    let tuples = reference_or_own(g, reference);
    match judge {
        Judge::Lexical(lex) => {
            let mut out = Vec::with_capacity(tuples.len() * g.len());
            for t in tuples {
                let tt = tuple_text(t);
                for q in g.questions() {
                    out.push(MatchJudgment {
                        tuple_id: t.id,
                        question_id: q.id,
                        matched: lex.matches(&tt, &q.text),
                        judge: JudgeKind::LexicalBaseline,
                    });
                }
            }
            Ok(JudgeOutput {
                value: out,
                raw: Vec::new(),
            })
        }
        Judge::Model { backend, preambles } => {
            let input = judge_input(prompt, Some(tuples), g, "");
            let precision = backend.complete(preambles.precision.template(), &input)?;
            let recall = backend.complete(preambles.recall.template(), &input)?;
            let by_question = parse_mapping(&precision, "wrong questions")
                .map_err(|m| MetricsError::JudgeParse { stage: "precision", message: m })?;
            let by_tuple = parse_mapping(&recall, "missed tuples")
                .map_err(|m| MetricsError::JudgeParse { stage: "recall", message: m })?;
            let mut linked = BTreeSet::new();
            for (q, ts) in &by_question {
                for t in ts {
                    linked.insert((*t, *q));
                }
            }
            for (t, qs) in &by_tuple {
                for q in qs {
                    linked.insert((*t, *q));
                }
            }
            let tuple_ids: BTreeSet<u32> = tuples.iter().map(|t| t.id).collect();
            if let Some(&(t, q)) = linked
                .iter()
                .find(|(t, q)| !tuple_ids.contains(t) || !g.contains(*q))
            {
                return Err(MetricsError::JudgeParse {
                    stage: "precision/recall",
                    message: format!("reply links unknown pair (tuple {t}, question {q})"),
                });
            }
            let mut out = Vec::new();
            for t in tuples {
                for q in g.questions() {
                    out.push(MatchJudgment {
                        tuple_id: t.id,
                        question_id: q.id,
                        matched: linked.contains(&(t.id, q.id)),
                        judge: JudgeKind::LlmBackend,
                    });
                }
            }
            Ok(JudgeOutput {
                value: out,
                raw: vec![precision, recall],
            })
        }
    }
}

/// Groups of questions the judge considers duplicates of each other.
///
/// The lexical baseline groups questions whose content-token sets are
/// identical and non-empty.
pub fn judge_duplicates(
    g: &SceneGraph,
    prompt: &str,
    judge: &Judge<'_>,
) -> Result<JudgeOutput<Vec<BTreeSet<u32>>>, MetricsError> {
    match judge {
        Judge::Lexical(_) => {
            let mut groups: BTreeMap<BTreeSet<String>, BTreeSet<u32>> = BTreeMap::new();
            for q in g.questions() {
                let toks = content_tokens(&q.text);
                if !toks.is_empty() {
                    groups.entry(toks).or_default().insert(q.id);
                }
            }
            let mut sets: Vec<_> = groups.into_values().filter(|s| s.len() > 1).collect();
            sets.sort();
            Ok(JudgeOutput {
                value: sets,
                raw: Vec::new(),
            })
        }
        Judge::Model { backend, preambles } => {
            let input = judge_input(prompt, None, g, "q");
            let raw = backend.complete(preambles.uniqueness.template(), &input)?;
            let sets = parse_duplicates(&raw)
                .map_err(|m| MetricsError::JudgeParse { stage: "uniqueness", message: m })?;
            if let Some(id) = sets.iter().flatten().find(|&&id| !g.contains(id)) {
                return Err(MetricsError::JudgeParse {
                    stage: "uniqueness",
                    message: format!("unknown question {id}"),
                });
            }
            Ok(JudgeOutput {
                value: sets,
                raw: vec![raw],
            })
        }
    }
}
