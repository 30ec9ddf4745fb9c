//! Evaluation metrics: question-generation quality, rank correlation with
//! human ratings and model/human answer agreement.

pub mod agreement;
pub mod correlation;
pub mod judge;
pub mod lexical;
pub mod qg;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backends::BackendError;

pub use agreement::{vqa_human_match_accuracy, GroupAccuracy, MatchAccuracy};
pub use correlation::{correlate, kendall_tau, spearman_rho, CorrelationResult, StatsError, TieStats};
pub use judge::{judge_duplicates, judge_matches, Judge, JudgePreambles, LexicalJudge};
pub use qg::{check_dependency_validity, qg_quality, AtomicityLabel, DependencyValidity, QgQualityResult};

/// An exact fraction. Serialized as `{"numerator", "denominator", "value"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Ratio { numerator, denominator }
    }

    /// `numerator / denominator`, or NaN for an empty denominator.
    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            return f64::NAN;
        }
        self.numerator as f64 / self.denominator as f64
    }
}

#[derive(Serialize, Deserialize)]
struct RatioRepr {
    numerator: u64,
    denominator: u64,
    #[serde(default, skip_deserializing)]
    value: Option<f64>,
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RatioRepr {
            numerator: self.numerator,
            denominator: self.denominator,
            value: Some(self.value()).filter(|v| v.is_finite()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RatioRepr::deserialize(d)?;
        Ok(Ratio::new(r.numerator, r.denominator))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    LlmBackend,
    LexicalBaseline,
    Human,
}

/// Whether question `question_id` asks about tuple `tuple_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchJudgment {
    pub tuple_id: u32,
    pub question_id: u32,
    pub matched: bool,
    pub judge: JudgeKind,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("graph {prompt_id} has no questions")]
    Empty { prompt_id: String },
    #[error("unknown {what} id {id}")]
    UnknownId { what: &'static str, id: u32 },
    #[error("tuple {tuple_id} and question {question_id} judged more than once")]
    DuplicateJudgment { tuple_id: u32, question_id: u32 },
    #[error("could not parse {stage} judge reply: {message}")]
    JudgeParse { stage: &'static str, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{} keys present on only one side, first {:?}", unpaired.len(), unpaired.first())]
    KeyMismatch { unpaired: Vec<(String, String, u32)> },
    #[error(transparent)]
    Stats(#[from] StatsError),
}
