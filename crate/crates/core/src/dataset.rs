//! Prompt files, human annotations and image manifests.
//!
//! Canonical storage is JSONL. Files ending in `.tsv` are read as
//! tab-separated tables with a header row, for spreadsheet exports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::SceneGraph;
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: row {row}: {message}")]
    Schema {
        path: String,
        row: usize,
        message: String,
    },
}

/// Where a prompt comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Tifa160,
    StanfordParagraphs,
    LocalizedNarratives,
    Countbench,
    Vrd,
    Diffusiondb,
    Midjourney,
    Posescript,
    Whoops,
    DrawtextCreative,
}

impl Source {
    pub const ALL: [Source; 10] = [
        Source::Tifa160,
        Source::StanfordParagraphs,
        Source::LocalizedNarratives,
        Source::Countbench,
        Source::Vrd,
        Source::Diffusiondb,
        Source::Midjourney,
        Source::Posescript,
        Source::Whoops,
        Source::DrawtextCreative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Tifa160 => "tifa160",
            Source::StanfordParagraphs => "stanford_paragraphs",
            Source::LocalizedNarratives => "localized_narratives",
            Source::Countbench => "countbench",
            Source::Vrd => "vrd",
            Source::Diffusiondb => "diffusiondb",
            Source::Midjourney => "midjourney",
            Source::Posescript => "posescript",
            Source::Whoops => "whoops",
            Source::DrawtextCreative => "drawtext_creative",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Source::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown source tag {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// Stable id for prompts that arrive without one.
pub fn text_hash_id(text: &str) -> String {
    let digest = Sha256::digest(text.trim().as_bytes());
    format!("t{}", &hex::encode(digest)[..12])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertRecord {
    pub prompt_id: String,
    pub image_ref: String,
    pub rater_id: String,
    pub rating: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanAnswer {
    #[serde(alias = "YES", alias = "Yes")]
    Yes,
    #[serde(alias = "NO", alias = "No")]
    No,
    /// The rater judged the question unanswerable for this image.
    #[serde(alias = "INVALID", alias = "Invalid")]
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanQuestionAnswer {
    pub prompt_id: String,
    pub image_ref: String,
    pub question_id: u32,
    pub rater_id: String,
    pub answer: HumanAnswer,
}

/// One image to evaluate. `model` defaults to the first path segment of `image_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub prompt_id: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl ImageEntry {
    pub fn model(&self) -> String {
        self.model
            .clone()
            .unwrap_or_else(|| model_of(&self.image_ref))
    }
}

/// `"model_name/prompt_id.png"` -> `"model_name"`; refs without a slash map to themselves.
pub fn model_of(image_ref: &str) -> String {
    let r = image_ref.trim_start_matches("./");
    match r.split_once('/') {
        Some((m, _)) if !m.is_empty() => m.to_string(),
        _ => r.to_string(),
    }
}

/// Reference tuples for one prompt, used as ground truth by the quality metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTupleSet {
    pub prompt_id: String,
    pub tuples: Vec<crate::graph::SemanticTuple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

fn is_tsv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
}

/// Reads rows as `(row_number, T)`; JSONL rows are numbered by line, TSV rows
/// by line with the header on line 1.
fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let name = path.display().to_string();
    let text = io::read_to_string(path)?;
    if is_tsv(path) {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .flexible(false)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<T>().enumerate() {
            let row = rec.map_err(|e| DatasetError::Schema {
                path: name.clone(),
                row: i + 2,
                message: e.to_string(),
            })?;
            rows.push((i + 2, row));
        }
        return Ok(rows);
    }
    io::parse_jsonl(&name, &text).map_err(|e| match e {
        IoError::Json { path, line, message } => DatasetError::Schema {
            path,
            row: line,
            message,
        },
        other => DatasetError::Io(other),
    })
}

#[derive(Deserialize)]
struct RawPrompt {
    #[serde(default)]
    prompt_id: Option<String>,
    text: String,
    source: String,
    #[serde(default)]
    notes: Option<String>,
}

/// Loads prompt records in file order.
pub fn load_prompts(path: &Path) -> Result<Vec<PromptRecord>, DatasetError> {
    let name = path.display().to_string();
    let schema = |row, message: String| DatasetError::Schema {
        path: name.clone(),
        row,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row, raw) in read_rows::<RawPrompt>(path)? {
        if raw.text.trim().is_empty() {
            return Err(schema(row, "empty prompt text".into()));
        }
        let source = raw.source.parse().map_err(|m| schema(row, m))?;
        let prompt_id = match raw.prompt_id {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => text_hash_id(&raw.text),
        };
        if !seen.insert(prompt_id.clone()) {
            return Err(schema(row, format!("duplicate prompt_id {prompt_id:?}")));
        }
        out.push(PromptRecord {
            prompt_id,
            text: raw.text,
            source,
            notes: raw.notes.filter(|n| !n.is_empty()),
        });
    }
    Ok(out)
}

pub fn load_likert(path: &Path) -> Result<Vec<LikertRecord>, DatasetError> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row, r) in read_rows::<LikertRecord>(path)? {
        let fail = |message: String| DatasetError::Schema {
            path: name.clone(),
            row,
            message,
        };
        if !(1..=5).contains(&r.rating) {
            return Err(fail(format!("rating {} outside 1-5", r.rating)));
        }
        if !seen.insert((r.prompt_id.clone(), r.image_ref.clone(), r.rater_id.clone())) {
            return Err(fail(format!(
                "duplicate rating for ({}, {}, {})",
                r.prompt_id, r.image_ref, r.rater_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_human_answers(path: &Path) -> Result<Vec<HumanQuestionAnswer>, DatasetError> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row, r) in read_rows::<HumanQuestionAnswer>(path)? {
        let key = (
            r.prompt_id.clone(),
            r.image_ref.clone(),
            r.rater_id.clone(),
            r.question_id,
        );
        if !seen.insert(key) {
            return Err(DatasetError::Schema {
                path: name.clone(),
                row,
                message: format!(
                    "duplicate answer for ({}, {}, {}, question {})",
                    r.prompt_id, r.image_ref, r.rater_id, r.question_id
                ),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_image_manifest(path: &Path) -> Result<Vec<ImageEntry>, DatasetError> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (row, r) in read_rows::<ImageEntry>(path)? {
        if !seen.insert((r.prompt_id.clone(), r.image_ref.clone())) {
            return Err(DatasetError::Schema {
                path: name.clone(),
                row,
                message: format!("duplicate image {:?} for {:?}", r.image_ref, r.prompt_id),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_human_tuples(path: &Path) -> Result<Vec<HumanTupleSet>, DatasetError> {
    Ok(read_rows::<HumanTupleSet>(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Loads a graphs JSONL file; every record is validated by `build_graph`.
pub fn load_graphs(path: &Path) -> Result<Vec<SceneGraph>, DatasetError> {
    Ok(read_rows::<SceneGraph>(path)?.into_iter().map(|(_, g)| g).collect())
}

/// Groups manifest rows by prompt, keeping manifest order within a prompt.
pub fn images_by_prompt(entries: &[ImageEntry]) -> BTreeMap<String, Vec<String>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in entries {
        map.entry(e.prompt_id.clone())
            .or_default()
            .push(e.image_ref.clone());
    }
    map
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReferenceViolation {
    pub kind: &'static str,
    pub prompt_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl fmt::Display for ReferenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: prompt {}", self.kind, self.prompt_id)?;
        if let Some(q) = self.question_id {
            write!(f, ", question {q}")?;
        }
        if let Some(i) = &self.image_ref {
            write!(f, ", image {i}")?;
        }
        Ok(())
    }
}

/// Lists every record that does not resolve against the prompts and graphs.
/// Nothing is dropped; callers decide what to do with violations.
pub fn check_references(
    prompts: &[PromptRecord],
    graphs: &[SceneGraph],
    likert: &[LikertRecord],
    answers: &[HumanQuestionAnswer],
) -> Vec<ReferenceViolation> {
    let prompt_ids: HashSet<&str> = prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    let by_prompt: HashMap<&str, &SceneGraph> =
        graphs.iter().map(|g| (g.prompt_id(), g)).collect();
    let mut out = Vec::new();
    for g in graphs {
        if !prompt_ids.contains(g.prompt_id()) {
            out.push(ReferenceViolation {
                kind: "graph without prompt",
                prompt_id: g.prompt_id().to_string(),
                question_id: None,
                image_ref: None,
            });
        }
    }
    for l in likert {
        if !prompt_ids.contains(l.prompt_id.as_str()) {
            out.push(ReferenceViolation {
                kind: "rating for unknown prompt",
                prompt_id: l.prompt_id.clone(),
                question_id: None,
                image_ref: Some(l.image_ref.clone()),
            });
        }
    }
    for a in answers {
        let resolved = by_prompt
            .get(a.prompt_id.as_str())
            .is_some_and(|g| g.contains(a.question_id));
        if !resolved {
            out.push(ReferenceViolation {
                kind: "answer for unknown question",
                prompt_id: a.prompt_id.clone(),
                question_id: Some(a.question_id),
                image_ref: Some(a.image_ref.clone()),
            });
        }
    }
    out
}

/// Mean rating per `(prompt_id, image_ref)` item, averaged over raters.
pub fn mean_likert(records: &[LikertRecord]) -> BTreeMap<(String, String), f64> {
    let mut sums: BTreeMap<(String, String), (u32, u32)> = BTreeMap::new();
    for r in records {
        let e = sums
            .entry((r.prompt_id.clone(), r.image_ref.clone()))
            .or_default();
        e.0 += u32::from(r.rating);
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, f64::from(s) / f64::from(n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        (dir, p)
    }

    #[test]
    fn prompts_jsonl_and_tsv_agree() {
        let (_d1, j) = file(
            "p.jsonl",
            "{\"prompt_id\":\"a\",\"text\":\"a cat\",\"source\":\"tifa160\"}\n{\"text\":\"a dog\",\"source\":\"whoops\",\"notes\":\"x\"}\n",
        );
        let (_d2, t) = file(
            "p.tsv",
            "prompt_id\ttext\tsource\tnotes\na\ta cat\ttifa160\t\n\ta dog\twhoops\tx\n",
        );
        let a = load_prompts(&j).unwrap();
        let b = load_prompts(&t).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].prompt_id, text_hash_id("a dog"));
        assert_eq!(a[1].notes.as_deref(), Some("x"));
    }

    #[test]
    fn empty_prompt_file() {
        let (_d, p) = file("p.jsonl", "");
        assert!(load_prompts(&p).unwrap().is_empty());
    }

    #[test]
    fn unknown_source_is_a_schema_error() {
        let (_d, p) = file(
            "p.jsonl",
            "{\"text\":\"a\",\"source\":\"tifa160\"}\n{\"text\":\"b\",\"source\":\"coco\"}\n",
        );
        match load_prompts(&p).unwrap_err() {
            DatasetError::Schema { row, message, .. } => {
                assert_eq!(row, 2);
                assert!(message.contains("coco"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn likert_validation() {
        let (_d, p) = file(
            "l.jsonl",
            "{\"prompt_id\":\"a\",\"image_ref\":\"m/a.png\",\"rater_id\":\"r1\",\"rating\":6}\n",
        );
        assert!(matches!(load_likert(&p), Err(DatasetError::Schema { row: 1, .. })));
        let row = "{\"prompt_id\":\"a\",\"image_ref\":\"m/a.png\",\"rater_id\":\"r1\",\"rating\":4}\n";
        let (_d, p) = file("l.jsonl", &format!("{row}{row}"));
        assert!(matches!(load_likert(&p), Err(DatasetError::Schema { row: 2, .. })));
    }

    #[test]
    fn human_answers_accept_any_case() {
        let (_d, p) = file(
            "h.tsv",
            "prompt_id\timage_ref\tquestion_id\trater_id\tanswer\na\tm/a.png\t1\tr1\tYES\na\tm/a.png\t1\tr2\tinvalid\n",
        );
        let rows = load_human_answers(&p).unwrap();
        assert_eq!(rows[0].answer, HumanAnswer::Yes);
        assert_eq!(rows[1].answer, HumanAnswer::Invalid);
    }

    #[test]
    fn model_from_image_ref() {
        assert_eq!(model_of("imagen/p1.png"), "imagen");
        assert_eq!(model_of("./sd/p1.png"), "sd");
        assert_eq!(model_of("p1.png"), "p1.png");
    }

    #[test]
    fn violations_are_listed() {
        let prompts = vec![PromptRecord {
            prompt_id: "a".into(),
            text: "a cat".into(),
            source: Source::Tifa160,
            notes: None,
        }];
        let graphs = vec![crate::graph::tests::motorcycle()];
        let answers = vec![HumanQuestionAnswer {
            prompt_id: "motorcycle".into(),
            image_ref: "m/x.png".into(),
            question_id: 9,
            rater_id: "r".into(),
            answer: HumanAnswer::Yes,
        }];
        let v = check_references(&prompts, &graphs, &[], &answers);
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].question_id, Some(9));
    }
}
