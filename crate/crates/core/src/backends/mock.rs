//! Deterministic stand-ins for real models.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationBackend, QaBackend, QaQuery};
use crate::graph::{SemanticTuple, TupleContent};

/// The prompt a stage input was built from: everything before the first blank line.
fn prompt_of(input: &str) -> &str {
    input.split_once("\n\n").map_or(input, |(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: String,
    pub prompt: String,
}

/// One scripted reply sequence, as stored in fixture files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub stage: String,
    pub prompt: String,
    pub replies: Vec<String>,
}

#[derive(Default)]
struct Script {
    replies: Vec<String>,
    served: usize,
}

/// Replays canned completions keyed by `(stage, prompt)`.
///
/// The stage is recognised from the preamble text, the prompt from the input.
/// Replies are served in order; the last one repeats once the list runs out.
pub struct ScriptedGenerator {
    name: String,
    stages: Vec<(String, String)>,
    scripts: Mutex<HashMap<(String, String), Script>>,
    log: Mutex<Vec<CallRecord>>,
}

impl ScriptedGenerator {
    pub fn new(name: impl Into<String>) -> Self {
        ScriptedGenerator {
            name: name.into(),
            stages: Vec::new(),
            scripts: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Registers the preamble text that identifies `stage`.
    pub fn with_stage(mut self, stage: impl Into<String>, preamble: impl Into<String>) -> Self {
        self.stages.push((preamble.into(), stage.into()));
        self
    }

    pub fn script(&self, stage: &str, prompt: &str, replies: Vec<String>) {
        self.scripts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(
                (stage.to_string(), prompt.to_string()),
                Script { replies, served: 0 },
            );
    }

    pub fn script_entries(&self, entries: impl IntoIterator<Item = ScriptEntry>) {
        for e in entries {
            self.script(&e.stage, &e.prompt, e.replies);
        }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl GenerationBackend for ScriptedGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError> {
        let stage = self
            .stages
            .iter()
            .find(|(p, _)| p == preamble)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| BackendError::MalformedResponse("unrecognised preamble".into()))?;
        let prompt = prompt_of(input).to_string();
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(CallRecord {
                stage: stage.clone(),
                prompt: prompt.clone(),
            });
        let mut scripts = self.scripts.lock().unwrap_or_else(|e| e.into_inner());
        let script = scripts.get_mut(&(stage.clone(), prompt.clone())).ok_or_else(|| {
            BackendError::HttpStatus {
                status: 404,
                message: format!("no script for stage {stage:?}, prompt {prompt:?}"),
            }
        })?;
        let reply = script
            .replies
            .get(script.served.min(script.replies.len().saturating_sub(1)))
            .cloned()
            .unwrap_or_default();
        script.served += 1;
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaCall {
    pub image_ref: String,
    pub question: String,
    pub tuple_id: Option<u32>,
}

/// Answers from a known scene: "yes" exactly when the question's source tuple
/// is part of the image's ground truth. Tuples compare by content, not id.
pub struct SceneOracle {
    scenes: HashMap<String, HashSet<TupleContent>>,
    log: Mutex<Vec<QaCall>>,
}

impl SceneOracle {
    pub fn new() -> Self {
        SceneOracle {
            scenes: HashMap::new(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_scene<'a>(
        mut self,
        image_ref: impl Into<String>,
        tuples: impl IntoIterator<Item = &'a SemanticTuple>,
    ) -> Self {
        self.add_scene(image_ref, tuples);
        self
    }

    pub fn add_scene<'a>(
        &mut self,
        image_ref: impl Into<String>,
        tuples: impl IntoIterator<Item = &'a SemanticTuple>,
    ) {
        self.scenes.insert(
            image_ref.into(),
            tuples.into_iter().map(SemanticTuple::content).collect(),
        );
    }

    pub fn calls(&self) -> Vec<QaCall> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear_calls(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

impl Default for SceneOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl QaBackend for SceneOracle {
    fn name(&self) -> &str {
        "scene-oracle"
    }

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError> {
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(QaCall {
                image_ref: query.image_ref.to_string(),
                question: query.question.to_string(),
                tuple_id: query.tuple.map(|t| t.id),
            });
        let scene = self
            .scenes
            .get(query.image_ref)
            .ok_or_else(|| BackendError::Unavailable(format!("unknown image {}", query.image_ref)))?;
        let tuple = query.tuple.ok_or_else(|| {
            BackendError::MalformedResponse("scene oracle needs the source tuple".into())
        })?;
        Ok(if scene.contains(&tuple.content()) { "yes" } else { "no" }.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Subcategory;

    fn t(id: u32, args: &[&str]) -> SemanticTuple {
        SemanticTuple::new(
            id,
            crate::graph::Category::Entity,
            Subcategory::Whole,
            args.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scripted_lookup_and_repeat() {
        let g = ScriptedGenerator::new("mock").with_stage("tuples", "PRE");
        g.script("tuples", "a cat", vec!["bad".into(), "good".into()]);
        assert_eq!(g.complete("PRE", "a cat").unwrap(), "bad");
        assert_eq!(g.complete("PRE", "a cat").unwrap(), "good");
        assert_eq!(g.complete("PRE", "a cat\n\n1 | x").unwrap(), "good");
        assert!(matches!(
            g.complete("PRE", "a dog"),
            Err(BackendError::HttpStatus { status: 404, .. })
        ));
        assert!(g.complete("OTHER", "a cat").is_err());
        assert_eq!(g.calls().len(), 4);
    }

    #[test]
    fn oracle_answers_from_scene() {
        let moto = t(1, &["motorcycle"]);
        let doors = t(3, &["doors"]);
        let oracle = SceneOracle::new().with_scene("img", [&moto]);
        let ask = |tuple| {
            oracle.ask(&QaQuery {
                image_ref: "img",
                question: "Is there a motorcycle?",
                tuple: Some(tuple),
            })
        };
        assert_eq!(ask(&moto).unwrap(), "yes");
        assert_eq!(ask(&doors).unwrap(), "no");
        assert_eq!(oracle.calls().len(), 2);
        assert!(oracle
            .ask(&QaQuery {
                image_ref: "missing",
                question: "q",
                tuple: Some(&moto),
            })
            .is_err());
    }
}
