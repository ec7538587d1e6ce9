//! Rule-driven extraction of listing records, links and embedded
//! coordinates from HTML.

mod extract;
mod numeric;
mod record;
mod rules;

pub use extract::{extract_embedded_coords, extract_links, extract_record, id_from_url};
pub use numeric::{format_de, parse_numeric, render_de, Locale, NumericError, ParsedNumber, Qualifier, Unit};
pub use record::{read_jsonl, write_csv, write_jsonl, FieldIssue, IssueKind, ListingRecord, CSV_HEADER};
pub use rules::{
    ExtractionRuleSet, FieldRuleConfig, LinkRules, RuleSetConfig, Transform, AMENITY_PREFIX, FIELD_NAMES,
    NUMERIC_FIELDS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("unknown record field {0:?}")]
    UnknownField(String),
    #[error("field {0:?} has more than one rule")]
    DuplicateField(String),
    #[error("invalid selector for {field}: {message}")]
    InvalidSelector { field: String, message: String },
    #[error("invalid regex for {field}: {message}")]
    InvalidRegex { field: String, message: String },
    #[error("coordinate rule must have exactly 2 capture groups, found {0}")]
    CoordRuleGroups(usize),
    #[error("transforms for {field}: {message}")]
    TransformMismatch { field: String, message: String },
    #[error("rule set: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}
