//! Pipe-delimited annotation format emitted by the generation stages.
//!
//! ```text
//! 1 | entity - whole (motorcycle)
//! 2 | attribute - color (blue, motorcycle)
//! ```
//!
//! Questions use `ID | question text`; dependencies use `CHILD | P1,P2` where
//! `0` (or nothing) marks a root. Arguments cannot contain `,` or `)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Category, DependencyEdge, QuestionNode, SceneGraph, SemanticTuple, Subcategory};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// The first bad line fails the whole completion.
    #[default]
    Strict,
    /// Bad lines are dropped and recorded as warnings.
    Lenient,
}

impl fmt::Display for ParseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseMode::Strict => "strict",
            ParseMode::Lenient => "lenient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("line {line_no}: {reason}")]
pub struct LineParseError {
    pub line_no: usize,
    pub reason: LineErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum LineErrorKind {
    #[error("missing '|' delimiter")]
    MissingDelimiter,
    #[error("bad id {0:?}")]
    BadId(String),
    #[error("empty payload")]
    EmptyPayload,
    #[error("expected 'category - subcategory (args)', found {0:?}")]
    Malformed(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("unknown subcategory {0:?}")]
    UnknownSubcategory(String),
    #[error("subcategory {subcategory} is not legal for {category}")]
    IllegalSubcategory {
        category: Category,
        subcategory: Subcategory,
    },
    #[error("{category} takes {expected} argument(s), found {found} (commas inside arguments are not supported)")]
    Arity {
        category: Category,
        expected: usize,
        found: usize,
    },
    #[error("empty argument")]
    EmptyArgument,
    #[error("bad parent id {0:?}")]
    BadParent(String),
    #[error("id {0} lists itself as a parent")]
    SelfLoop(u32),
}

impl LineErrorKind {
    fn at(self, line_no: usize) -> LineParseError {
        LineParseError {
            line_no,
            reason: self,
        }
    }
}

/// A line held back because its subcategory token is not in the typology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedLine {
    pub line_no: usize,
    pub text: String,
    pub subcategory: String,
}

/// One `id | payload` line before payload interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAnnotationLine {
    pub line_no: usize,
    pub id_part: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    /// The source line of each accepted item, verbatim.
    pub source_lines: Vec<String>,
    /// Lines dropped in lenient mode.
    pub warnings: Vec<LineParseError>,
    pub quarantine: Vec<QuarantinedLine>,
}

impl<T> Parsed<T> {
    fn new() -> Self {
        Parsed {
            items: Vec::new(),
            source_lines: Vec::new(),
            warnings: Vec::new(),
            quarantine: Vec::new(),
        }
    }
}

/// Splits `text` into non-blank `(line_no, line)` pairs; line numbers are 1-based.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn split_line(line_no: usize, line: &str) -> Result<RawAnnotationLine, LineParseError> {
    let (id_part, payload) = line
        .split_once('|')
        .ok_or_else(|| LineErrorKind::MissingDelimiter.at(line_no))?;
    Ok(RawAnnotationLine {
        line_no,
        id_part: id_part.trim().to_string(),
        payload: payload.trim().to_string(),
    })
}

fn parse_id(line_no: usize, s: &str) -> Result<u32, LineParseError> {
    match s.trim().parse::<u32>() {
        Ok(id) if id > 0 => Ok(id),
        _ => Err(LineErrorKind::BadId(s.trim().to_string()).at(line_no)),
    }
}

enum LineOutcome<T> {
    Item(T),
    Quarantine(QuarantinedLine),
}

fn parse_lines<T>(
    text: &str,
    mode: ParseMode,
    mut parse: impl FnMut(usize, &str) -> Result<LineOutcome<T>, LineParseError>,
) -> Result<Parsed<T>, LineParseError> {
    let mut out = Parsed::new();
    for (line_no, line) in content_lines(text) {
        match parse(line_no, line) {
            Ok(LineOutcome::Item(item)) => {
                out.items.push(item);
                out.source_lines.push(line.to_string());
            }
            Ok(LineOutcome::Quarantine(q)) => out.quarantine.push(q),
            Err(e) if mode == ParseMode::Lenient => out.warnings.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Parses the tuple-stage completion.
///
/// In strict mode an unknown subcategory is an error like any other; in
/// lenient mode the line is quarantined instead of dropped silently.
pub fn parse_tuples(text: &str, mode: ParseMode) -> Result<Parsed<SemanticTuple>, LineParseError> {
    parse_lines(text, mode, |line_no, line| {
        let raw = split_line(line_no, line)?;
        let id = parse_id(line_no, &raw.id_part)?;
        match parse_tuple_payload(id, &raw.payload) {
            Ok(t) => Ok(LineOutcome::Item(t)),
            Err(LineErrorKind::UnknownSubcategory(sub)) if mode == ParseMode::Lenient => {
                Ok(LineOutcome::Quarantine(QuarantinedLine {
                    line_no,
                    text: line.to_string(),
                    subcategory: sub,
                }))
            }
            Err(kind) => Err(kind.at(line_no)),
        }
    })
}

fn parse_tuple_payload(id: u32, payload: &str) -> Result<SemanticTuple, LineErrorKind> {
    if payload.is_empty() {
        return Err(LineErrorKind::EmptyPayload);
    }
    let malformed = || LineErrorKind::Malformed(payload.to_string());
    let open = payload.find('(').ok_or_else(malformed)?;
    let inner = payload[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
    if inner.contains(')') {
        return Err(malformed());
    }
    let head = &payload[..open];
    let (cat, sub) = head.split_once('-').ok_or_else(malformed)?;
    let cat = cat.trim().to_lowercase();
    let sub = sub.trim().to_lowercase();
    let category: Category = cat
        .parse()
        .map_err(|_| LineErrorKind::UnknownCategory(cat.clone()))?;
    let subcategory: Subcategory = sub
        .parse()
        .map_err(|_| LineErrorKind::UnknownSubcategory(sub.clone()))?;
    if subcategory.category() != category {
        return Err(LineErrorKind::IllegalSubcategory {
            category,
            subcategory,
        });
    }
    let args: Vec<String> = inner.split(',').map(|a| a.trim().to_string()).collect();
    if args.len() != category.arity() {
        return Err(LineErrorKind::Arity {
            category,
            expected: category.arity(),
            found: args.len(),
        });
    }
    if args.iter().any(String::is_empty) {
        return Err(LineErrorKind::EmptyArgument);
    }
    Ok(SemanticTuple {
        id,
        category,
        subcategory,
        args,
    })
}

/// Parses the question-stage completion; each question's `tuple_id` is its own id.
pub fn parse_questions(text: &str, mode: ParseMode) -> Result<Parsed<QuestionNode>, LineParseError> {
    parse_lines(text, mode, |line_no, line| {
        let raw = split_line(line_no, line)?;
        let id = parse_id(line_no, &raw.id_part)?;
        if raw.payload.is_empty() {
            return Err(LineErrorKind::EmptyPayload.at(line_no));
        }
        Ok(LineOutcome::Item(QuestionNode::new(id, raw.payload)))
    })
}

/// Parses the dependency-stage completion into edges. A line contributes one
/// edge per listed parent; `0` entries and empty lists contribute nothing.
pub fn parse_dependencies(
    text: &str,
    mode: ParseMode,
) -> Result<Parsed<DependencyEdge>, LineParseError> {
    let lines = parse_lines(text, mode, |line_no, line| {
        let raw = split_line(line_no, line)?;
        let child = parse_id(line_no, &raw.id_part)?;
        let mut parents: Vec<u32> = Vec::new();
        for tok in raw.payload.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let p: u32 = tok
                .parse()
                .map_err(|_| LineErrorKind::BadParent(tok.to_string()).at(line_no))?;
            if p == child {
                return Err(LineErrorKind::SelfLoop(child).at(line_no));
            }
            if p != 0 && !parents.contains(&p) {
                parents.push(p);
            }
        }
        Ok(LineOutcome::Item((child, parents)))
    })?;

    let mut out = Parsed::new();
    out.warnings = lines.warnings;
    for ((child, parents), src) in lines.items.into_iter().zip(lines.source_lines) {
        for p in parents {
            out.items.push(DependencyEdge::new(p, child));
            out.source_lines.push(src.clone());
        }
    }
    Ok(out)
}

pub fn encode_tuple(t: &SemanticTuple) -> String {
    format!(
        "{} | {} - {} ({})",
        t.id,
        t.category,
        t.subcategory,
        t.args.join(", ")
    )
}

/// Encoded annotation texts, one per generation stage.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedGraph {
    pub tuples: String,
    pub questions: String,
    pub dependencies: String,
}

fn join_lines(lines: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

pub fn encode_tuples(tuples: &[SemanticTuple]) -> String {
    join_lines(tuples.iter().map(encode_tuple))
}

/// Serializes a graph back into the three stage formats. Every question gets a
/// dependency line; roots are written as `id | 0`.
pub fn encode_graph(g: &SceneGraph) -> EncodedGraph {
    let questions = join_lines(g.questions().iter().map(|q| format!("{} | {}", q.id, q.text)));
    let dependencies = join_lines(g.ids().map(|id| {
        let ps = g.parents(id);
        if ps.is_empty() {
            format!("{id} | 0")
        } else {
            let ps: Vec<String> = ps.iter().map(u32::to_string).collect();
            format!("{id} | {}", ps.join(","))
        }
    }));
    EncodedGraph {
        tuples: encode_tuples(g.tuples()),
        questions,
        dependencies,
    }
}

/// Parses the three texts and builds a graph from them.
pub fn decode_graph(
    prompt_id: &str,
    encoded: &EncodedGraph,
    mode: ParseMode,
) -> Result<SceneGraph, DecodeError> {
    let tuples = parse_tuples(&encoded.tuples, mode).map_err(DecodeError::Tuples)?;
    let questions = parse_questions(&encoded.questions, mode).map_err(DecodeError::Questions)?;
    let deps = parse_dependencies(&encoded.dependencies, mode).map_err(DecodeError::Dependencies)?;
    Ok(crate::graph::build_graph(
        prompt_id,
        tuples.items,
        questions.items,
        deps.items,
    )?)
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("tuples: {0}")]
    Tuples(LineParseError),
    #[error("questions: {0}")]
    Questions(LineParseError),
    #[error("dependencies: {0}")]
    Dependencies(LineParseError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}
