//! Question-generation quality: precision, recall, uniqueness, atomicity and
//! dependency validity.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::lexical::content_tokens;
use super::{JudgeKind, MatchJudgment, MetricsError, Ratio};
use crate::graph::{DependencyEdge, SceneGraph, SemanticTuple};

/// A human label saying whether one question asks about exactly one fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicityLabel {
    pub question_id: u32,
    pub atomic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgQualityResult {
    pub precision: Ratio,
    /// Absent when no reference tuples were supplied.
    pub recall: Option<Ratio>,
    pub uniqueness: Ratio,
    pub duplicate_sets: Vec<BTreeSet<u32>>,
    pub dependency_valid_ratio: Ratio,
    /// Only ever computed from human labels.
    pub atomicity: Option<Ratio>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges overlapping duplicate sets; returns the merged groups of size > 1.
fn merge_duplicates(n: usize, sets: &[BTreeSet<u32>]) -> Vec<BTreeSet<u32>> {
    let mut parent: Vec<usize> = (0..=n).collect();
    for s in sets {
        let mut it = s.iter();
        if let Some(&first) = it.next() {
            for &other in it {
                let a = find(&mut parent, first as usize);
                let b = find(&mut parent, other as usize);
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<u32>> = Default::default();
    for id in 1..=n {
        let root = find(&mut parent, id);
        groups.entry(root).or_default().insert(id as u32);
    }
    groups.into_values().filter(|g| g.len() > 1).collect()
}

/// Computes the quality metrics for one graph.
///
/// `matches` are tuple/question judgments from a single judge. Tuple ids in
/// them refer to `reference` when given, otherwise to the graph's own tuples.
/// A question counts as matched when it matches at least one tuple; a tuple
/// counts as covered when at least one question matches it. Duplicate sets
/// that overlap are merged, and each merged set counts as one unique question.
pub fn qg_quality(
    g: &SceneGraph,
    reference: Option<&[SemanticTuple]>,
    matches: &[MatchJudgment],
    duplicates: &[BTreeSet<u32>],
    atomicity: Option<&[AtomicityLabel]>,
) -> Result<QgQualityResult, MetricsError> {
    if g.is_empty() {
        return Err(MetricsError::Empty {
            prompt_id: g.prompt_id().to_string(),
        });
    }
    let tuple_ids: HashSet<u32> = match reference {
        Some(r) => r.iter().map(|t| t.id).collect(),
        None => g.tuples().iter().map(|t| t.id).collect(),
    };

    let mut seen: HashSet<(u32, u32, JudgeKind)> = HashSet::new();
    let mut matched_q = BTreeSet::new();
    let mut covered_t = BTreeSet::new();
    for m in matches {
        if !g.contains(m.question_id) {
            return Err(MetricsError::UnknownId {
                what: "question",
                id: m.question_id,
            });
        }
        if !tuple_ids.contains(&m.tuple_id) {
            return Err(MetricsError::UnknownId {
                what: "tuple",
                id: m.tuple_id,
            });
        }
        if !seen.insert((m.tuple_id, m.question_id, m.judge)) {
            return Err(MetricsError::DuplicateJudgment {
                tuple_id: m.tuple_id,
                question_id: m.question_id,
            });
        }
        if m.matched {
            matched_q.insert(m.question_id);
            covered_t.insert(m.tuple_id);
        }
    }

    for set in duplicates {
        if let Some(&id) = set.iter().find(|&&id| !g.contains(id)) {
            return Err(MetricsError::UnknownId {
                what: "question",
                id,
            });
        }
    }
    let n = g.len();
    let duplicate_sets = merge_duplicates(n, duplicates);
    let collapsed: usize = duplicate_sets.iter().map(|s| s.len() - 1).sum();

    let atomicity = match atomicity {
        Some(labels) => {
            let mut atomic = 0;
            for l in labels {
                if !g.contains(l.question_id) {
                    return Err(MetricsError::UnknownId {
                        what: "question",
                        id: l.question_id,
                    });
                }
                atomic += u64::from(l.atomic);
            }
            Some(Ratio::new(atomic, labels.len() as u64))
        }
        None => None,
    };

    Ok(QgQualityResult {
        precision: Ratio::new(matched_q.len() as u64, n as u64),
        recall: reference.map(|r| Ratio::new(covered_t.len() as u64, r.len() as u64)),
        uniqueness: Ratio::new((n - collapsed) as u64, n as u64),
        duplicate_sets,
        dependency_valid_ratio: check_dependency_validity(g).ratio,
        atomicity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeValidity {
    pub edge: DependencyEdge,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyValidity {
    pub edges: Vec<EdgeValidity>,
    /// Valid edges over all edges; 1 for an edgeless graph.
    pub ratio: Ratio,
}

/// An edge is valid when the parent question shares at least one content
/// token with the child question.
pub fn check_dependency_validity(g: &SceneGraph) -> DependencyValidity {
    let tokens: Vec<BTreeSet<String>> = g
        .questions()
        .iter()
        .map(|q| content_tokens(&q.text))
        .collect();
    let edges: Vec<EdgeValidity> = g
        .edges()
        .iter()
        .map(|&e| {
            let p = &tokens[e.parent as usize - 1];
            let c = &tokens[e.child as usize - 1];
            EdgeValidity {
                edge: e,
                valid: p.intersection(c).next().is_some(),
            }
        })
        .collect();
    let valid = edges.iter().filter(|e| e.valid).count() as u64;
    let ratio = if edges.is_empty() {
        Ratio::new(1, 1)
    } else {
        Ratio::new(valid, edges.len() as u64)
    };
    DependencyValidity { edges, ratio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::tuple;
    use crate::graph::{build_graph, QuestionNode, Subcategory};

    fn graph(questions: &[&str], edges: &[(u32, u32)]) -> SceneGraph {
        let n = questions.len() as u32;
        build_graph(
            "p",
            (1..=n)
                .map(|i| tuple(i, Subcategory::Whole, &[&format!("e{i}")]))
                .collect(),
            questions
                .iter()
                .enumerate()
                .map(|(i, q)| QuestionNode::new(i as u32 + 1, *q))
                .collect(),
            edges.iter().map(|&(p, c)| DependencyEdge::new(p, c)).collect(),
        )
        .unwrap()
    }

    fn judged(t: u32, q: u32, matched: bool) -> MatchJudgment {
        MatchJudgment {
            tuple_id: t,
            question_id: q,
            matched,
            judge: JudgeKind::Human,
        }
    }

    #[test]
    fn duplicate_pair_has_half_uniqueness() {
        let g = graph(&["is there a motorcycle?", "what type of vehicle is this?"], &[]);
        let reference = [tuple(1, Subcategory::Whole, &["motorcycle"])];
        let r = qg_quality(
            &g,
            Some(&reference),
            &[judged(1, 1, true), judged(1, 2, true)],
            &[BTreeSet::from([1, 2])],
            None,
        )
        .unwrap();
        assert_eq!(r.uniqueness, Ratio::new(1, 2));
        assert_eq!(r.uniqueness.value(), 0.5);
    }

    #[test]
    fn identity_case() {
        let g = graph(&["a?", "b?", "c?"], &[]);
        let m: Vec<_> = (1..=3).map(|i| judged(i, i, true)).collect();
        let reference = g.tuples().to_vec();
        let r = qg_quality(&g, Some(&reference), &m, &[], None).unwrap();
        assert_eq!(r.precision.value(), 1.0);
        assert_eq!(r.recall.unwrap().value(), 1.0);
        assert_eq!(r.uniqueness.value(), 1.0);
    }

    #[test]
    fn four_of_five_matched() {
        let g = graph(&["a?", "b?", "c?", "d?", "e?"], &[]);
        let reference: Vec<_> = (1..=4)
            .map(|i| tuple(i, Subcategory::Whole, &["x"]))
            .collect();
        let mut m: Vec<_> = (1..=4).map(|i| judged(i, i, true)).collect();
        m.push(judged(1, 5, false));
        let r = qg_quality(&g, Some(&reference), &m, &[], None).unwrap();
        assert_eq!(r.precision, Ratio::new(4, 5));
        assert_eq!(r.precision.value(), 0.8);
        assert_eq!(r.recall.unwrap().value(), 1.0);
    }

    #[test]
    fn recall_omitted_without_reference() {
        let g = graph(&["a?"], &[]);
        let r = qg_quality(&g, None, &[judged(1, 1, true)], &[], None).unwrap();
        assert!(r.recall.is_none());
        assert!(r.atomicity.is_none());
    }

    #[test]
    fn overlapping_duplicate_sets_merge() {
        let g = graph(&["a?", "b?", "c?", "d?"], &[]);
        let r = qg_quality(&g, None, &[], &[BTreeSet::from([1, 2]), BTreeSet::from([2, 3])], None)
            .unwrap();
        assert_eq!(r.duplicate_sets, vec![BTreeSet::from([1, 2, 3])]);
        assert_eq!(r.uniqueness, Ratio::new(2, 4));
    }

    #[test]
    fn bad_references() {
        let g = graph(&["a?"], &[]);
        assert!(matches!(
            qg_quality(&g, None, &[judged(1, 7, true)], &[], None),
            Err(MetricsError::UnknownId { what: "question", id: 7 })
        ));
        assert!(matches!(
            qg_quality(&g, None, &[judged(4, 1, true)], &[], None),
            Err(MetricsError::UnknownId { what: "tuple", id: 4 })
        ));
        assert!(matches!(
            qg_quality(&g, None, &[judged(1, 1, true), judged(1, 1, false)], &[], None),
            Err(MetricsError::DuplicateJudgment { .. })
        ));
    }

    #[test]
    fn atomicity_from_labels() {
        let g = graph(&["a?", "b?"], &[]);
        let labels = [
            AtomicityLabel { question_id: 1, atomic: true },
            AtomicityLabel { question_id: 2, atomic: false },
        ];
        let r = qg_quality(&g, None, &[], &[], Some(&labels)).unwrap();
        assert_eq!(r.atomicity, Some(Ratio::new(1, 2)));
    }

    #[test]
    fn dependency_validity_examples() {
        let g = graph(&["Is there a motorcycle?", "Is the motorcycle blue?"], &[(1, 2)]);
        assert_eq!(check_dependency_validity(&g).ratio.value(), 1.0);
        let g = graph(&["Is there a cat?", "Is the dog brown?"], &[(1, 2)]);
        let v = check_dependency_validity(&g);
        assert!(!v.edges[0].valid);
        assert_eq!(v.ratio.value(), 0.0);
        let g = graph(&["Is there a cat?"], &[]);
        assert_eq!(check_dependency_validity(&g).ratio.value(), 1.0);
    }
}
