//! Compliance gate: robots exclusion rules and the viability checklist.

mod robots;
mod viability;

pub use robots::{is_allowed, parse_robots, product_token, Group, RobotsPolicy, Rule, RuleKind};
pub use viability::{
    assess_viability, assess_viability_with, question, Answer, AssessmentPolicy, ComplianceVerdict, Question,
    QuestionId, VerdictLevel, ViabilityAssessment, CHECKLIST,
};

#[derive(Debug, thiserror::Error)]
pub enum ComplianceError {
    #[error("no answer for {0}")]
    MissingAnswer(QuestionId),
    #[error("unknown question id {0:?} (expected Q1..Q11)")]
    UnknownQuestion(String),
    #[error("invalid answer {0:?} (expected yes, no or unknown)")]
    InvalidAnswer(String),
    #[error("{0} answered twice")]
    DuplicateQuestion(QuestionId),
    #[error("line {line}: expected `Qn: answer`, got {text:?}")]
    Syntax { line: usize, text: String },
}
