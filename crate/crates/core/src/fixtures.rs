//! Deterministic synthetic data: small scenes with known graphs, and random
//! graphs for property tests.
//!
//! Every child question repeats its parents' head nouns, and no two tuples in
//! a scene share content, so a scene oracle can answer each question exactly.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backends::{SceneOracle, ScriptEntry, ScriptedGenerator};
use crate::codec::{encode_graph, encode_tuples};
use crate::dataset::{PromptRecord, Source};
use crate::graph::{build_graph, Category, DependencyEdge, QuestionNode, SceneGraph, SemanticTuple, Subcategory};
use crate::pipeline::{PreambleSet, Stage};

const NOUNS: &[&str] = &[
    "cat", "dog", "horse", "bird", "car", "bicycle", "boat", "tree", "lamp", "chair", "table",
    "book", "clock", "guitar", "umbrella", "teapot", "apple", "banana", "kite", "train", "bench",
    "vase", "mirror", "candle", "hat", "robot", "turtle", "rabbit", "bridge", "house",
];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "white", "black", "orange", "purple"];
const MATERIALS: &[&str] = &["wood", "metal", "glass", "stone", "paper"];
const SIZES: &[&str] = &["small", "large", "tiny", "huge"];
const SPATIAL: &[&str] = &["next to", "behind", "under", "on top of", "in front of"];
const ACTIONS: &[&str] = &["chasing", "watching", "facing"];
const STYLES: &[&str] = &["watercolor", "oil painting", "pencil sketch", "photograph"];

/// A scene whose ground-truth graph is known in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub prompt: PromptRecord,
    pub tuples: Vec<SemanticTuple>,
    pub questions: Vec<QuestionNode>,
    pub edges: Vec<DependencyEdge>,
}

impl SyntheticScene {
    pub fn graph(&self) -> SceneGraph {
        build_graph(
            &self.prompt.prompt_id,
            self.tuples.clone(),
            self.questions.clone(),
            self.edges.clone(),
        )
        .expect("synthetic scenes are valid")
    }

    /// Scripted completions that reproduce this scene's graph, one per stage.
    pub fn script_entries(&self) -> Vec<ScriptEntry> {
        let enc = encode_graph(&self.graph());
        let entry = |stage: Stage, text: String| ScriptEntry {
            stage: stage.as_str().to_string(),
            prompt: self.prompt.text.clone(),
            replies: vec![text],
        };
        vec![
            entry(Stage::Tuples, encode_tuples(&self.tuples)),
            entry(Stage::Questions, enc.questions),
            entry(Stage::Dependencies, enc.dependencies),
        ]
    }

    /// Ids of the entity tuples.
    pub fn entities(&self) -> Vec<u32> {
        self.tuples
            .iter()
            .filter(|t| t.category == Category::Entity)
            .map(|t| t.id)
            .collect()
    }
}

fn tuple(id: u32, sub: Subcategory, args: &[&str]) -> SemanticTuple {
    SemanticTuple::new(
        id,
        sub.category(),
        sub,
        args.iter().map(|a| a.to_string()).collect(),
    )
    .expect("arity matches")
}

struct SceneBuilder {
    tuples: Vec<SemanticTuple>,
    questions: Vec<QuestionNode>,
    edges: Vec<DependencyEdge>,
    phrases: Vec<String>,
}

impl SceneBuilder {
    fn push(&mut self, sub: Subcategory, args: &[&str], question: String, parents: &[u32]) -> u32 {
        let id = self.tuples.len() as u32 + 1;
        self.tuples.push(tuple(id, sub, args));
        self.questions.push(QuestionNode::new(id, question));
        self.edges
            .extend(parents.iter().map(|&p| DependencyEdge::new(p, id)));
        id
    }
}

fn synthetic_scene(rng: &mut ChaCha8Rng, index: usize, source: Source) -> SyntheticScene {
    let mut b = SceneBuilder {
        tuples: Vec::new(),
        questions: Vec::new(),
        edges: Vec::new(),
        phrases: Vec::new(),
    };
    let count = rng.gen_range(1..=3);
    let nouns: Vec<&str> = NOUNS.choose_multiple(rng, count).copied().collect();
    let mut entity_ids = Vec::new();
    for noun in &nouns {
        let id = b.push(Subcategory::Whole, &[noun], format!("Is there a {noun}?"), &[]);
        entity_ids.push(id);
        let mut words = Vec::new();
        if rng.gen_bool(0.6) {
            let c = *COLORS.choose(rng).unwrap();
            b.push(Subcategory::Color, &[c, noun], format!("Is the {noun} {c}?"), &[id]);
            words.push(c.to_string());
        }
        if rng.gen_bool(0.3) {
            let s = *SIZES.choose(rng).unwrap();
            b.push(Subcategory::Size, &[s, noun], format!("Is the {noun} {s}?"), &[id]);
            words.push(s.to_string());
        }
        words.push(noun.to_string());
        if rng.gen_bool(0.3) {
            let m = *MATERIALS.choose(rng).unwrap();
            b.push(
                Subcategory::Material,
                &[m, noun],
                format!("Is the {noun} made of {m}?"),
                &[id],
            );
            words.push(format!("made of {m}"));
        }
        b.phrases.push(format!("a {}", words.join(" ")));
    }
    for i in 0..nouns.len() {
        for j in i + 1..nouns.len() {
            if !rng.gen_bool(0.7) {
                continue;
            }
            let (a, c) = (nouns[i], nouns[j]);
            let (sub, rel) = if rng.gen_bool(0.7) {
                (Subcategory::Spatial, *SPATIAL.choose(rng).unwrap())
            } else {
                (Subcategory::Action, *ACTIONS.choose(rng).unwrap())
            };
            b.push(
                sub,
                &[rel, a, c],
                format!("Is the {a} {rel} the {c}?"),
                &[entity_ids[i], entity_ids[j]],
            );
            b.phrases.push(format!("the {a} is {rel} the {c}"));
        }
    }
    if rng.gen_bool(0.2) {
        let s = *STYLES.choose(rng).unwrap();
        b.push(Subcategory::Global, &[s], format!("Is this a {s}?"), &[]);
        b.phrases.push(format!("{s} style"));
    }
    SyntheticScene {
        prompt: PromptRecord {
            prompt_id: format!("syn{index:04}"),
            // the index keeps prompt texts unique across the corpus
            text: format!("{}, scene {index}", b.phrases.join(", ")),
            source,
            notes: None,
        },
        tuples: b.tuples,
        questions: b.questions,
        edges: b.edges,
    }
}

/// `n` scenes, sources assigned round-robin.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synthetic_scene(&mut rng, i, Source::ALL[i % Source::ALL.len()]))
        .collect()
}

/// A scripted generator that reproduces every scene's graph.
pub fn scripted_generator(scenes: &[SyntheticScene], preambles: &PreambleSet) -> ScriptedGenerator {
    let g = preambles.scripted_backend("scripted-synthetic");
    g.script_entries(scenes.iter().flat_map(SyntheticScene::script_entries));
    g
}

/// An oracle holding each scene's full tuple set under `image_ref(scene)`.
pub fn scene_oracle(scenes: &[SyntheticScene], image_ref: impl Fn(&SyntheticScene) -> String) -> SceneOracle {
    let mut o = SceneOracle::new();
    for s in scenes {
        o.add_scene(image_ref(s), &s.tuples);
    }
    o
}

/// Random acyclic edge set over ids `1..=n`. Edges follow a random hidden
/// order, so parents are not always the smaller id.
pub fn random_edges(rng: &mut impl Rng, n: u32, density: f64) -> Vec<DependencyEdge> {
    let mut order: Vec<u32> = (1..=n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.gen_bool(density) {
                edges.push(DependencyEdge::new(order[i], order[j]));
            }
        }
    }
    edges
}

const WORDS: &[&str] = &[
    "red", "tall", "old", "glass", "dog", "tree", "sitting on", "left of", "bright", "two",
    "cafe sign", "x", "Green", "wooden box", "stop", "neon",
];

/// A random valid graph with 1 to `max_nodes` nodes and arbitrary categories.
pub fn random_graph(rng: &mut impl Rng, max_nodes: u32) -> SceneGraph {
    let n = rng.gen_range(1..=max_nodes);
    let mut seen = BTreeSet::new();
    let mut tuples = Vec::new();
    for id in 1..=n {
        let sub = *Subcategory::ALL.choose(rng).unwrap();
        let args: Vec<String> = loop {
            let a: Vec<String> = (0..sub.category().arity())
                .map(|_| WORDS.choose(rng).unwrap().to_string())
                .collect();
            if seen.insert((sub, a.clone())) {
                break a;
            }
        };
        tuples.push(SemanticTuple::new(id, sub.category(), sub, args).unwrap());
    }
    let questions = (1..=n)
        .map(|id| {
            let words: Vec<&str> = (0..rng.gen_range(1..5))
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect();
            QuestionNode::new(id, format!("Is {}?", words.join(" ")))
        })
        .collect();
    let density = rng.gen_range(0.0..0.6);
    build_graph(
        format!("r{}", rng.gen::<u32>()),
        tuples,
        questions,
        random_edges(rng, n, density),
    )
    .expect("random graph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::check_dependency_validity;
    use std::collections::HashSet;

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let a = synthetic_corpus(40, 7);
        assert_eq!(a, synthetic_corpus(40, 7));
        let texts: HashSet<_> = a.iter().map(|s| s.prompt.text.clone()).collect();
        assert_eq!(texts.len(), 40);
        for s in &a {
            let g = s.graph();
            assert_eq!(check_dependency_validity(&g).ratio.value(), 1.0, "{}", s.prompt.text);
            let contents: HashSet<_> = s.tuples.iter().map(SemanticTuple::content).collect();
            assert_eq!(contents.len(), s.tuples.len());
        }
    }

    #[test]
    fn random_graphs_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let g = random_graph(&mut rng, 10);
            assert!((1..=10).contains(&g.len()));
        }
    }
}
