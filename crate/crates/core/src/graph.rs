//! Semantic tuples, questions and the dependency DAG that ties them together.
//!
//! A [`SceneGraph`] is only ever produced by [`build_graph`], which validates
//! every structural invariant and renumbers ids to a dense `1..=n` range.
//! Once built the graph is immutable.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Entity,
    Attribute,
    Relation,
    Global,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Entity,
        Category::Attribute,
        Category::Relation,
        Category::Global,
    ];

    /// Number of arguments a tuple of this category carries.
    pub fn arity(self) -> usize {
        match self {
            Category::Entity | Category::Global => 1,
            Category::Attribute => 2,
            Category::Relation => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Entity => "entity",
            Category::Attribute => "attribute",
            Category::Relation => "relation",
            Category::Global => "global",
        }
    }

    pub fn subcategories(self) -> &'static [Subcategory] {
        use Subcategory::*;
        match self {
            Category::Entity => &[Whole, Part],
            Category::Attribute => &[
                Color,
                Type,
                Material,
                Count,
                Texture,
                TextRendering,
                Shape,
                Size,
                Style,
                State,
            ],
            Category::Relation => &[Spatial, Action],
            Category::Global => &[Global],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcategory {
    Whole,
    Part,
    Color,
    Type,
    Material,
    Count,
    Texture,
    TextRendering,
    Shape,
    Size,
    Style,
    State,
    Spatial,
    Action,
    Global,
}

impl Subcategory {
    pub const ALL: [Subcategory; 15] = [
        Subcategory::Whole,
        Subcategory::Part,
        Subcategory::Color,
        Subcategory::Type,
        Subcategory::Material,
        Subcategory::Count,
        Subcategory::Texture,
        Subcategory::TextRendering,
        Subcategory::Shape,
        Subcategory::Size,
        Subcategory::Style,
        Subcategory::State,
        Subcategory::Spatial,
        Subcategory::Action,
        Subcategory::Global,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcategory::Whole => "whole",
            Subcategory::Part => "part",
            Subcategory::Color => "color",
            Subcategory::Type => "type",
            Subcategory::Material => "material",
            Subcategory::Count => "count",
            Subcategory::Texture => "texture",
            Subcategory::TextRendering => "text_rendering",
            Subcategory::Shape => "shape",
            Subcategory::Size => "size",
            Subcategory::Style => "style",
            Subcategory::State => "state",
            Subcategory::Spatial => "spatial",
            Subcategory::Action => "action",
            Subcategory::Global => "global",
        }
    }

    /// The single category this subcategory is legal under.
    pub fn category(self) -> Category {
        Category::ALL
            .into_iter()
            .find(|c| c.subcategories().contains(&self))
            .expect("every subcategory belongs to a category")
    }
}

impl fmt::Display for Subcategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subcategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

/// One atomic proposition: an entity, attribute, relation or global property.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticTuple {
    pub id: u32,
    pub category: Category,
    pub subcategory: Subcategory,
    pub args: Vec<String>,
}

impl SemanticTuple {
    pub fn new(
        id: u32,
        category: Category,
        subcategory: Subcategory,
        args: Vec<String>,
    ) -> Result<Self, GraphError> {
        let t = SemanticTuple {
            id,
            category,
            subcategory,
            args,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.id == 0 {
            return Err(GraphError::InvalidId { id: 0 });
        }
        if self.subcategory.category() != self.category {
            return Err(GraphError::IllegalSubcategory {
                id: self.id,
                category: self.category,
                subcategory: self.subcategory,
            });
        }
        if self.args.len() != self.category.arity() {
            return Err(GraphError::Arity {
                id: self.id,
                category: self.category,
                expected: self.category.arity(),
                found: self.args.len(),
            });
        }
        Ok(())
    }

    /// The tuple's content without its id, for comparing tuples across graphs.
    pub fn content(&self) -> TupleContent {
        TupleContent {
            category: self.category,
            subcategory: self.subcategory,
            args: self.args.iter().map(|a| a.trim().to_lowercase()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TupleContent {
    pub category: Category,
    pub subcategory: Subcategory,
    pub args: Vec<String>,
}

/// A yes/no question generated from one tuple. The expected answer is always yes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionNode {
    pub id: u32,
    pub text: String,
    pub tuple_id: u32,
}

impl QuestionNode {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        QuestionNode {
            id,
            text: text.into(),
            tuple_id: id,
        }
    }

    pub fn expected_answer(&self) -> bool {
        true
    }
}

/// `parent -> child`: the child question is only meaningful when the parent holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DependencyEdge {
    pub parent: u32,
    pub child: u32,
}

impl DependencyEdge {
    pub fn new(parent: u32, child: u32) -> Self {
        DependencyEdge { parent, child }
    }
}

impl Serialize for DependencyEdge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.parent, self.child].serialize(s)
    }
}

impl<'de> Deserialize<'de> for DependencyEdge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [parent, child] = <[u32; 2]>::deserialize(d)?;
        Ok(DependencyEdge { parent, child })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("dependency cycle: {}", join_ids(.cycle))]
    Cycle { cycle: Vec<u32> },
    #[error("{what} {from} references unknown id {missing}")]
    DanglingRef {
        what: &'static str,
        from: u32,
        missing: u32,
    },
    #[error("tuple {id}: {category} takes {expected} argument(s), found {found}")]
    Arity {
        id: u32,
        category: Category,
        expected: usize,
        found: usize,
    },
    #[error("tuple {id}: subcategory {subcategory} is not legal for {category}")]
    IllegalSubcategory {
        id: u32,
        category: Category,
        subcategory: Subcategory,
    },
    #[error("duplicate {what} id {id}")]
    DuplicateId { what: &'static str, id: u32 },
    #[error("invalid id {id}: ids must be positive")]
    InvalidId { id: u32 },
    #[error("question {question} must carry the id of its tuple, found tuple_id {tuple_id}")]
    QuestionTupleMismatch { question: u32, tuple_id: u32 },
    #[error("tuple {id} has no question")]
    MissingQuestion { id: u32 },
    #[error("edge {id} -> {id} is a self loop")]
    SelfLoop { id: u32 },
    #[error("unknown question id {id}")]
    UnknownId { id: u32 },
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// The serialized form of a graph: one JSON object per prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub prompt_id: String,
    pub tuples: Vec<SemanticTuple>,
    pub questions: Vec<QuestionNode>,
    pub edges: Vec<DependencyEdge>,
}

/// A validated Davidsonian scene graph.
///
/// Ids are dense: tuple `i` and question `i` live at index `i - 1`.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    prompt_id: String,
    tuples: Vec<SemanticTuple>,
    questions: Vec<QuestionNode>,
    edges: Vec<DependencyEdge>,
    parents: Vec<Vec<u32>>,
    children: Vec<Vec<u32>>,
    /// `original_ids[i]` is the id the input used for normalized id `i + 1`.
    original_ids: Vec<u32>,
}

/// Structural equality; the original-id sidecar is ignored.
impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.prompt_id == other.prompt_id
            && self.tuples == other.tuples
            && self.questions == other.questions
            && self.edges == other.edges
    }
}

impl Eq for SceneGraph {}

/// Validates the inputs and assembles a [`SceneGraph`] with ids renumbered to `1..=n`.
///
/// Ids are remapped in ascending order of the input ids. Duplicate edges
/// collapse into one. Nothing is repaired: any violated invariant is an error.
pub fn build_graph(
    prompt_id: impl Into<String>,
    tuples: Vec<SemanticTuple>,
    questions: Vec<QuestionNode>,
    edges: Vec<DependencyEdge>,
) -> Result<SceneGraph, GraphError> {
    let mut by_id: BTreeMap<u32, SemanticTuple> = BTreeMap::new();
    for t in tuples {
        t.validate()?;
        let id = t.id;
        if by_id.insert(id, t).is_some() {
            return Err(GraphError::DuplicateId { what: "tuple", id });
        }
    }

    let mut q_by_id: BTreeMap<u32, QuestionNode> = BTreeMap::new();
    for q in questions {
        if q.id == 0 {
            return Err(GraphError::InvalidId { id: 0 });
        }
        if !by_id.contains_key(&q.tuple_id) {
            return Err(GraphError::DanglingRef {
                what: "question",
                from: q.id,
                missing: q.tuple_id,
            });
        }
        if q.tuple_id != q.id {
            return Err(GraphError::QuestionTupleMismatch {
                question: q.id,
                tuple_id: q.tuple_id,
            });
        }
        let id = q.id;
        if q_by_id.insert(id, q).is_some() {
            return Err(GraphError::DuplicateId {
                what: "question",
                id,
            });
        }
    }
    if let Some(&id) = by_id.keys().find(|id| !q_by_id.contains_key(id)) {
        return Err(GraphError::MissingQuestion { id });
    }

    let mut edge_set = BTreeSet::new();
    for e in edges {
        if e.parent == e.child {
            return Err(GraphError::SelfLoop { id: e.parent });
        }
        for (end, other) in [(e.parent, e.child), (e.child, e.parent)] {
            if !q_by_id.contains_key(&end) {
                return Err(GraphError::DanglingRef {
                    what: "edge from",
                    from: other,
                    missing: end,
                });
            }
        }
        edge_set.insert(e);
    }

    let original_ids: Vec<u32> = by_id.keys().copied().collect();
    let remap: HashMap<u32, u32> = original_ids
        .iter()
        .enumerate()
        .map(|(i, &orig)| (orig, i as u32 + 1))
        .collect();
    let n = original_ids.len();

    let mut parents = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    let mut norm_edges: Vec<DependencyEdge> = edge_set
        .iter()
        .map(|e| DependencyEdge::new(remap[&e.parent], remap[&e.child]))
        .collect();
    norm_edges.sort();
    for e in &norm_edges {
        parents[e.child as usize - 1].push(e.parent);
        children[e.parent as usize - 1].push(e.child);
    }

    if let Some(cycle) = find_cycle(&parents) {
        let cycle = cycle
            .into_iter()
            .map(|id| original_ids[id as usize - 1])
            .collect();
        return Err(GraphError::Cycle { cycle });
    }

    let tuples = by_id
        .into_values()
        .map(|mut t| {
            t.id = remap[&t.id];
            t
        })
        .collect();
    let questions = q_by_id
        .into_values()
        .map(|mut q| {
            q.id = remap[&q.id];
            q.tuple_id = remap[&q.tuple_id];
            q
        })
        .collect();

    Ok(SceneGraph {
        prompt_id: prompt_id.into(),
        tuples,
        questions,
        edges: norm_edges,
        parents,
        children,
        original_ids,
    })
}

/// Kahn's algorithm over dense ids; on failure walks parent links among the
/// unresolved nodes to recover one concrete cycle, rotated to start at its
/// smallest id.
fn find_cycle(parents: &[Vec<u32>]) -> Option<Vec<u32>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p as usize - 1].push(c);
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut done = vec![false; n];
    while let Some(i) = stack.pop() {
        done[i] = true;
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                stack.push(c);
            }
        }
    }
    let start = (0..n).find(|&i| !done[i])?;

    // Every unresolved node has an unresolved parent, so walking parents must revisit.
    let mut seen_at = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while seen_at[cur] == usize::MAX {
        seen_at[cur] = path.len();
        path.push(cur);
        cur = parents[cur]
            .iter()
            .map(|&p| p as usize - 1)
            .filter(|&p| !done[p])
            .min()
            .expect("unresolved node has an unresolved parent");
    }
    let mut cycle: Vec<u32> = path[seen_at[cur]..]
        .iter()
        .rev()
        .map(|&i| i as u32 + 1)
        .collect();
    let min_pos = cycle
        .iter()
        .enumerate()
        .min_by_key(|(_, &id)| id)
        .map(|(i, _)| i)
        .unwrap_or(0);
    cycle.rotate_left(min_pos);
    Some(cycle)
}

impl SceneGraph {
    pub fn empty(prompt_id: impl Into<String>) -> Self {
        build_graph(prompt_id, Vec::new(), Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn from_record(record: GraphRecord) -> Result<Self, GraphError> {
        build_graph(
            record.prompt_id,
            record.tuples,
            record.questions,
            record.edges,
        )
    }

    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            prompt_id: self.prompt_id.clone(),
            tuples: self.tuples.clone(),
            questions: self.questions.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[SemanticTuple] {
        &self.tuples
    }

    pub fn questions(&self) -> &[QuestionNode] {
        &self.questions
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> {
        1..=self.len() as u32
    }

    pub fn contains(&self, id: u32) -> bool {
        id >= 1 && id as usize <= self.len()
    }

    pub fn tuple(&self, id: u32) -> Option<&SemanticTuple> {
        id.checked_sub(1).and_then(|i| self.tuples.get(i as usize))
    }

    pub fn question(&self, id: u32) -> Option<&QuestionNode> {
        id.checked_sub(1).and_then(|i| self.questions.get(i as usize))
    }

    /// Parents of `id` in ascending order; empty for roots or unknown ids.
    pub fn parents(&self, id: u32) -> &[u32] {
        id.checked_sub(1)
            .and_then(|i| self.parents.get(i as usize))
            .map_or(&[], Vec::as_slice)
    }

    pub fn children(&self, id: u32) -> &[u32] {
        id.checked_sub(1)
            .and_then(|i| self.children.get(i as usize))
            .map_or(&[], Vec::as_slice)
    }

    pub fn roots(&self) -> Vec<u32> {
        self.ids().filter(|&id| self.parents(id).is_empty()).collect()
    }

    /// Input id that was renumbered to `id`.
    pub fn original_id(&self, id: u32) -> Option<u32> {
        id.checked_sub(1)
            .and_then(|i| self.original_ids.get(i as usize))
            .copied()
    }

    pub fn original_ids(&self) -> &[u32] {
        &self.original_ids
    }

    /// Parents before children; ties go to the smallest id.
    pub fn topological_order(&self) -> Vec<u32> {
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<u32>> = self
            .ids()
            .filter(|&id| indegree[id as usize - 1] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &c in self.children(id) {
                let d = &mut indegree[c as usize - 1];
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        debug_assert_eq!(order.len(), self.len());
        order
    }

    /// Everything reachable from `id` through one or more edges.
    pub fn descendants(&self, id: u32) -> Result<BTreeSet<u32>, GraphError> {
        if !self.contains(id) {
            return Err(GraphError::UnknownId { id });
        }
        let mut out = BTreeSet::new();
        let mut stack = self.children(id).to_vec();
        while let Some(c) = stack.pop() {
            if out.insert(c) {
                stack.extend_from_slice(self.children(c));
            }
        }
        Ok(out)
    }

    /// Length of the longest root-to-node path, per id (roots are depth 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.len()];
        for id in self.topological_order() {
            let d = self
                .parents(id)
                .iter()
                .map(|&p| depth[p as usize - 1] + 1)
                .max()
                .unwrap_or(0);
            depth[id as usize - 1] = d;
        }
        depth
    }
}

impl Serialize for SceneGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = GraphRecord::deserialize(d)?;
        SceneGraph::from_record(record).map_err(serde::de::Error::custom)
    }
}

/// Free-function form of [`SceneGraph::topological_order`].
pub fn topological_order(g: &SceneGraph) -> Vec<u32> {
    g.topological_order()
}

/// Free-function form of [`SceneGraph::descendants`].
pub fn descendants(g: &SceneGraph, id: u32) -> Result<BTreeSet<u32>, GraphError> {
    g.descendants(id)
}
