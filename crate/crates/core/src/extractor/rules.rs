//! Declarative extraction rules, loaded from JSON and validated on load.

use std::collections::HashSet;

use regex::Regex;
use scraper::Selector;
use serde::{Deserialize, Serialize};

use super::numeric::Locale;
use super::ExtractError;

/// Record fields a rule may target. Amenities use `amenity:<tag>`.
pub const FIELD_NAMES: &[&str] = &[
    "id",
    "rent_net_eur",
    "size_sqm",
    "rooms",
    "year_built",
    "running_costs_eur",
    "energy_class",
    "raw_address",
    "postal_code",
];

pub const NUMERIC_FIELDS: &[&str] = &["rent_net_eur", "size_sqm", "rooms", "year_built", "running_costs_eur"];

pub const AMENITY_PREFIX: &str = "amenity:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Trim and collapse whitespace.
    Strip,
    /// Keep the first capture group (or whole match) of a regex.
    RegexCapture(String),
    /// Parse as a number with unit.
    Numeric,
    /// Keep a qualifier such as `ca.`; without it numbers are stored exact.
    Qualifier,
    /// The field is true iff the selector matches.
    BooleanPresence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRuleConfig {
    pub field: String,
    pub selector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    #[serde(default)]
    pub post: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkRules {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pagination: Option<String>,
}

/// Serialized form of [`ExtractionRuleSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSetConfig {
    pub locale: Locale,
    pub fields: Vec<FieldRuleConfig>,
    #[serde(default)]
    pub link_rules: LinkRules,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_rule: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum CompiledTransform {
    Strip,
    RegexCapture(Regex),
    Numeric,
    Qualifier,
    BooleanPresence,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledField {
    pub name: String,
    pub selector: Selector,
    pub attr: Option<String>,
    pub post: Vec<CompiledTransform>,
}

impl CompiledField {
    pub fn is_presence(&self) -> bool {
        self.post.iter().any(|t| matches!(t, CompiledTransform::BooleanPresence))
    }

    pub fn keeps_qualifier(&self) -> bool {
        self.post.iter().any(|t| matches!(t, CompiledTransform::Qualifier))
    }
}

/// Validated rule set: selectors parsed and regexes compiled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RuleSetConfig", into = "RuleSetConfig")]
pub struct ExtractionRuleSet {
    config: RuleSetConfig,
    pub(crate) fields: Vec<CompiledField>,
    pub(crate) coord_rule: Option<Regex>,
}

impl ExtractionRuleSet {
    pub fn new(config: RuleSetConfig) -> Result<Self, ExtractError> {
        let mut seen = HashSet::new();
        let mut fields = Vec::with_capacity(config.fields.len());
        for f in &config.fields {
            let known = FIELD_NAMES.contains(&f.field.as_str())
                || f.field.strip_prefix(AMENITY_PREFIX).is_some_and(|t| !t.trim().is_empty());
            if !known {
                return Err(ExtractError::UnknownField(f.field.clone()));
            }
            if !seen.insert(f.field.clone()) {
                return Err(ExtractError::DuplicateField(f.field.clone()));
            }
            let selector = Selector::parse(&f.selector).map_err(|e| ExtractError::InvalidSelector {
                field: f.field.clone(),
                message: e.to_string(),
            })?;
            let mut post = Vec::with_capacity(f.post.len());
            for t in &f.post {
                post.push(match t {
                    Transform::Strip => CompiledTransform::Strip,
                    Transform::RegexCapture(p) => {
                        CompiledTransform::RegexCapture(Regex::new(p).map_err(|e| ExtractError::InvalidRegex {
                            field: f.field.clone(),
                            message: e.to_string(),
                        })?)
                    }
                    Transform::Numeric => CompiledTransform::Numeric,
                    Transform::Qualifier => CompiledTransform::Qualifier,
                    Transform::BooleanPresence => CompiledTransform::BooleanPresence,
                });
            }
            let numeric = post.iter().any(|t| matches!(t, CompiledTransform::Numeric));
            let presence = post.iter().any(|t| matches!(t, CompiledTransform::BooleanPresence));
            let is_amenity = f.field.starts_with(AMENITY_PREFIX);
            if NUMERIC_FIELDS.contains(&f.field.as_str()) != numeric {
                return Err(ExtractError::TransformMismatch {
                    field: f.field.clone(),
                    message: "numeric fields need exactly the `numeric` transform, others must not use it".into(),
                });
            }
            if is_amenity != presence {
                return Err(ExtractError::TransformMismatch {
                    field: f.field.clone(),
                    message: "`boolean_presence` is for amenity fields only, and they require it".into(),
                });
            }
            fields.push(CompiledField {
                name: f.field.clone(),
                selector,
                attr: f.attr.clone(),
                post,
            });
        }
        for sel in [&config.link_rules.listing, &config.link_rules.pagination].into_iter().flatten() {
            Selector::parse(sel).map_err(|e| ExtractError::InvalidSelector {
                field: "link_rules".into(),
                message: e.to_string(),
            })?;
        }
        let coord_rule = match &config.coord_rule {
            Some(p) => {
                let re = Regex::new(p).map_err(|e| ExtractError::InvalidRegex {
                    field: "coord_rule".into(),
                    message: e.to_string(),
                })?;
                let groups = re.captures_len() - 1;
                if groups != 2 {
                    return Err(ExtractError::CoordRuleGroups(groups));
                }
                Some(re)
            }
            None => None,
        };
        Ok(ExtractionRuleSet {
            config,
            fields,
            coord_rule,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ExtractError> {
        let config: RuleSetConfig = serde_json::from_str(text).map_err(|e| ExtractError::Config(e.to_string()))?;
        Self::new(config)
    }

    pub fn config(&self) -> &RuleSetConfig {
        &self.config
    }

    pub fn locale(&self) -> Locale {
        self.config.locale
    }

    pub fn link_rules(&self) -> &LinkRules {
        &self.config.link_rules
    }

    pub fn coord_regex(&self) -> Option<&Regex> {
        self.coord_rule.as_ref()
    }

    /// Amenity tags this rule set can detect, in rule order.
    pub fn amenity_vocabulary(&self) -> Vec<String> {
        self.fields
            .iter()
            .filter_map(|f| f.name.strip_prefix(AMENITY_PREFIX).map(str::to_string))
            .collect()
    }
}

impl TryFrom<RuleSetConfig> for ExtractionRuleSet {
    type Error = ExtractError;

    fn try_from(c: RuleSetConfig) -> Result<Self, Self::Error> {
        Self::new(c)
    }
}

impl From<ExtractionRuleSet> for RuleSetConfig {
    fn from(r: ExtractionRuleSet) -> Self {
        r.config
    }
}
