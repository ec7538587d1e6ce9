//! Corpus-level data quality: missing and implausible values, exclusion
//! criteria, postal-code imputation of the distance to the center, and a
//! check of how location jitter behaves under spatial aggregation.

mod exclusion;
mod impute;
mod obfuscation;
mod report;
mod rules;

pub use exclusion::{apply_exclusions, ExclusionCriteria, ExclusionLedger, BUILDING_LEVEL, REQUIRABLE};
pub use impute::{impute_distance_by_postal, ImputationSummary, PostalCentroids, FLAG_IMPUTED, FLAG_UNIMPUTED};
pub use obfuscation::{obfuscation_aggregation_check, obfuscation_aggregation_check_with, ObfuscationCheck};
pub use report::{quality_report, AttributeQuality, QualityReport};
pub use rules::{
    attribute_value, default_rules, is_qualified, Action, AttrValue, Attribute, Bound, PlausibilityRule, Predicate,
    RuleBook,
};

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid plausibility rule: {0}")]
    InvalidRule(String),
    #[error("unknown exclusion criterion {0:?}")]
    UnknownCriterion(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
