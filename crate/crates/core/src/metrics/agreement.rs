//! Agreement between model answers and human answers, per question.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataset::{HumanAnswer, HumanQuestionAnswer, PromptRecord};
use crate::graph::SceneGraph;
use crate::scoring::{Answer, ItemEvaluation};

/// `(prompt_id, image_ref, question_id)`
pub type AnswerKey = (String, String, u32);

/// Majority vote over raters. `Invalid` abstains; ties resolve to no.
pub fn aggregate_human(answers: &[HumanQuestionAnswer]) -> BTreeMap<AnswerKey, bool> {
    let mut votes: BTreeMap<AnswerKey, (u32, u32)> = BTreeMap::new();
    for a in answers {
        let v = votes
            .entry((a.prompt_id.clone(), a.image_ref.clone(), a.question_id))
            .or_default();
        match a.answer {
            HumanAnswer::Yes => v.0 += 1,
            HumanAnswer::No => v.1 += 1,
            HumanAnswer::Invalid => {}
        }
    }
    votes.into_iter().map(|(k, (y, n))| (k, y > n)).collect()
}

/// Model answer per key; a skipped question counts as no.
pub fn model_answers(evaluations: &[ItemEvaluation]) -> BTreeMap<AnswerKey, bool> {
    evaluations
        .iter()
        .flat_map(|e| {
            e.answers.iter().map(move |a| {
                (
                    (e.prompt_id.clone(), e.image_ref.clone(), a.question_id),
                    a.answer == Answer::Yes,
                )
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub matched: u64,
    pub total: u64,
    pub accuracy: f64,
}

impl GroupAccuracy {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.matched += u64::from(hit);
        self.accuracy = self.matched as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchAccuracy {
    pub overall: GroupAccuracy,
    pub by_category: BTreeMap<String, GroupAccuracy>,
    pub by_subcategory: BTreeMap<String, GroupAccuracy>,
    pub by_source: BTreeMap<String, GroupAccuracy>,
}

/// Share of questions where the model's yes/no equals the human majority,
/// overall and grouped by the question's tuple category, subcategory and the
/// prompt's source. Both sides must cover exactly the same keys.
pub fn vqa_human_match_accuracy(
    evaluations: &[ItemEvaluation],
    human: &[HumanQuestionAnswer],
    graphs: &[SceneGraph],
    prompts: &[PromptRecord],
) -> Result<MatchAccuracy, MetricsError> {
    let model = model_answers(evaluations);
    let humans = aggregate_human(human);
    let model_keys: BTreeSet<&AnswerKey> = model.keys().collect();
    let human_keys: BTreeSet<&AnswerKey> = humans.keys().collect();
    let unpaired: Vec<AnswerKey> = model_keys
        .symmetric_difference(&human_keys)
        .map(|k| (*k).clone())
        .collect();
    if !unpaired.is_empty() {
        return Err(MetricsError::KeyMismatch { unpaired });
    }

    let graph_of: HashMap<&str, &SceneGraph> = graphs.iter().map(|g| (g.prompt_id(), g)).collect();
    let source_of: HashMap<&str, String> = prompts
        .iter()
        .map(|p| (p.prompt_id.as_str(), p.source.to_string()))
        .collect();

    let mut out = MatchAccuracy::default();
    for (key, m) in &model {
        let hit = *m == humans[key];
        out.overall.add(hit);
        let (pid, _, qid) = key;
        if let Some(t) = graph_of.get(pid.as_str()).and_then(|g| g.tuple(*qid)) {
            out.by_category
                .entry(t.category.to_string())
                .or_default()
                .add(hit);
            out.by_subcategory
                .entry(t.subcategory.to_string())
                .or_default()
                .add(hit);
        }
        let source = source_of
            .get(pid.as_str())
            .cloned()
            .unwrap_or_else(|| "unknown".to_string());
        out.by_source.entry(source).or_default().add(hit);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::tuple;
    use crate::graph::{build_graph, QuestionNode, Subcategory};
    use crate::scoring::AnswerRecord;

    fn human(pid: &str, q: u32, rater: &str, a: HumanAnswer) -> HumanQuestionAnswer {
        HumanQuestionAnswer {
            prompt_id: pid.into(),
            image_ref: "img".into(),
            question_id: q,
            rater_id: rater.into(),
            answer: a,
        }
    }

    fn eval(pid: &str, answers: &[Answer]) -> ItemEvaluation {
        ItemEvaluation {
            prompt_id: pid.into(),
            image_ref: "img".into(),
            answers: answers
                .iter()
                .enumerate()
                .map(|(i, a)| AnswerRecord {
                    question_id: i as u32 + 1,
                    answer: *a,
                    raw_text: String::new(),
                    answerer_id: "m".into(),
                })
                .collect(),
            scores: BTreeMap::new(),
            average_score: 0.0,
            flags: Default::default(),
        }
    }

    #[test]
    fn majority_vote() {
        use HumanAnswer::*;
        let rows = [
            human("p", 1, "a", Yes),
            human("p", 1, "b", No),
            human("p", 1, "c", Yes),
            human("p", 2, "a", Yes),
            human("p", 2, "b", No),
            human("p", 2, "c", Invalid),
        ];
        let agg = aggregate_human(&rows);
        assert!(agg[&("p".into(), "img".into(), 1)]);
        assert!(!agg[&("p".into(), "img".into(), 2)]);
    }

    #[test]
    fn seven_of_ten() {
        use Answer::*;
        let model = [Yes, Yes, Yes, Yes, Yes, Yes, Yes, No, No, No];
        let humans: Vec<_> = (1..=10)
            .map(|q| human("p", q, "r", HumanAnswer::Yes))
            .collect();
        let acc = vqa_human_match_accuracy(&[eval("p", &model)], &humans, &[], &[]).unwrap();
        assert_eq!((acc.overall.matched, acc.overall.total), (7, 10));
        assert_eq!(acc.overall.accuracy, 0.7);
        assert_eq!(acc.by_source["unknown"].total, 10);
    }

    #[test]
    fn grouped_by_category() {
        // 4 entity questions all agree; 6 attribute questions, 3 agree
        let mut tuples: Vec<_> = (1..=4)
            .map(|i| tuple(i, Subcategory::Whole, &[&format!("e{i}")]))
            .collect();
        tuples.extend((5..=10).map(|i| tuple(i, Subcategory::Color, &["red", &format!("e{i}")])));
        let questions = (1..=10).map(|i| QuestionNode::new(i, "q?")).collect();
        let g = build_graph("p", tuples, questions, vec![]).unwrap();
        let model = vec![Answer::Yes; 10];
        let humans: Vec<_> = (1..=10)
            .map(|q| {
                let a = if q <= 7 { HumanAnswer::Yes } else { HumanAnswer::No };
                human("p", q, "r", a)
            })
            .collect();
        let acc = vqa_human_match_accuracy(&[eval("p", &model)], &humans, &[g], &[]).unwrap();
        assert_eq!(acc.by_category["entity"].accuracy, 1.0);
        assert_eq!(acc.by_category["attribute"].accuracy, 0.5);
        assert_eq!(acc.by_subcategory["color"].total, 6);
    }

    #[test]
    fn disjoint_keys() {
        let err = vqa_human_match_accuracy(
            &[eval("p", &[Answer::Yes])],
            &[human("other", 1, "r", HumanAnswer::Yes)],
            &[],
            &[],
        )
        .unwrap_err();
        match err {
            MetricsError::KeyMismatch { unpaired } => assert_eq!(unpaired.len(), 2),
            e => panic!("{e}"),
        }
    }
}
