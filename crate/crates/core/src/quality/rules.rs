//! Plausibility rules over listing attributes.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::extractor::{ListingRecord, Qualifier};
use crate::geo::{BBox, GeoPoint, PointQuality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Rent,
    Size,
    PricePerSqm,
    RunningCosts,
    Rooms,
    YearBuilt,
    EnergyClass,
    PostalCode,
    /// Geocoded coordinates. Imputed points count as missing.
    Coords,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::Rent,
        Attribute::Size,
        Attribute::PricePerSqm,
        Attribute::RunningCosts,
        Attribute::Rooms,
        Attribute::YearBuilt,
        Attribute::EnergyClass,
        Attribute::PostalCode,
        Attribute::Coords,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Attribute::Rent => "Net rent (monthly)",
            Attribute::Size => "Size",
            Attribute::PricePerSqm => "Rent per m²",
            Attribute::RunningCosts => "Running costs",
            Attribute::Rooms => "Rooms",
            Attribute::YearBuilt => "Year built",
            Attribute::EnergyClass => "Energy class",
            Attribute::PostalCode => "Postal code",
            Attribute::Coords => "Coordinates",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Num(f64),
    Text(String),
    Point(GeoPoint),
}

/// Value of `attr` on `rec`, or `None` when missing.
pub fn attribute_value(rec: &ListingRecord, attr: Attribute) -> Option<AttrValue> {
    use AttrValue::*;
    match attr {
        Attribute::Rent => rec.rent_net_eur.map(|n| Num(n.value)),
        Attribute::Size => rec.size_sqm.map(|n| Num(n.value)),
        Attribute::PricePerSqm => match (rec.rent_net_eur, rec.size_sqm) {
            (Some(r), Some(s)) if s.value != 0.0 => Some(Num(r.value / s.value)),
            _ => None,
        },
        Attribute::RunningCosts => rec.running_costs_eur.map(|n| Num(n.value)),
        Attribute::Rooms => rec.rooms.map(|n| Num(n.value)),
        Attribute::YearBuilt => rec.year_built.map(|y| Num(y as f64)),
        Attribute::EnergyClass => rec.energy_class.clone().map(Text),
        Attribute::PostalCode => rec.postal_code.clone().map(Text),
        Attribute::Coords => rec.coords.filter(|p| p.quality != PointQuality::Imputed).map(Point),
    }
}

/// Whether the attribute's number carried a qualifier such as `ca.`.
pub fn is_qualified(rec: &ListingRecord, attr: Attribute) -> bool {
    let q = match attr {
        Attribute::Rent => rec.rent_net_eur.map(|n| n.qualifier),
        Attribute::Size => rec.size_sqm.map(|n| n.qualifier),
        Attribute::RunningCosts => rec.running_costs_eur.map(|n| n.qualifier),
        Attribute::Rooms => rec.rooms.map(|n| n.qualifier),
        _ => None,
    };
    q.is_some_and(|q| q != Qualifier::Exact)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

impl Bound {
    pub fn inclusive(value: f64) -> Self {
        Bound { value, inclusive: true }
    }

    pub fn exclusive(value: f64) -> Self {
        Bound { value, inclusive: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Range {
        #[serde(default)]
        min: Option<Bound>,
        #[serde(default)]
        max: Option<Bound>,
    },
    Pattern { regex: String },
    WithinBbox { bbox: BBox },
    /// Cross-field: a listing tagged `renovated` whose year is after `year`
    /// probably reports the renovation year.
    RenovatedBuiltAfter { year: i32 },
}

impl Predicate {
    pub fn is_cross_field(&self) -> bool {
        matches!(self, Predicate::RenovatedBuiltAfter { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    Flag,
    NullOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityRule {
    pub id: String,
    pub attribute: Attribute,
    pub predicate: Predicate,
    #[serde(default)]
    pub action: Action,
}

/// Rules with compiled patterns, checked for consistency.
#[derive(Debug, Clone)]
pub struct RuleBook {
    rules: Vec<PlausibilityRule>,
    patterns: Vec<Option<Regex>>,
}

impl RuleBook {
    pub fn new(rules: Vec<PlausibilityRule>) -> Result<Self, QualityError> {
        let mut ids = std::collections::HashSet::new();
        let mut patterns = Vec::with_capacity(rules.len());
        for r in &rules {
            if !ids.insert(r.id.clone()) {
                return Err(QualityError::InvalidRule(format!("duplicate rule id {:?}", r.id)));
            }
            let compiled = match &r.predicate {
                Predicate::Range { min, max } => {
                    if min.is_none() && max.is_none() {
                        return Err(QualityError::InvalidRule(format!("{}: range without bounds", r.id)));
                    }
                    if let (Some(lo), Some(hi)) = (min, max) {
                        if !(lo.value < hi.value) {
                            return Err(QualityError::InvalidRule(format!("{}: min must be below max", r.id)));
                        }
                    }
                    None
                }
                Predicate::Pattern { regex } => Some(
                    Regex::new(regex).map_err(|e| QualityError::InvalidRule(format!("{}: {e}", r.id)))?,
                ),
                Predicate::WithinBbox { bbox } => {
                    bbox.validate().map_err(|e| QualityError::InvalidRule(format!("{}: {e}", r.id)))?;
                    None
                }
                Predicate::RenovatedBuiltAfter { .. } => None,
            };
            patterns.push(compiled);
        }
        Ok(RuleBook { rules, patterns })
    }

    pub fn rules(&self) -> &[PlausibilityRule] {
        &self.rules
    }

    pub fn from_json(text: &str) -> Result<Self, QualityError> {
        Self::new(serde_json::from_str(text).map_err(|e| QualityError::InvalidRule(e.to_string()))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    /// Ids of rules the record violates, in rule order. Missing values never
    /// violate a rule.
    pub fn violations<'a>(&'a self, rec: &ListingRecord) -> Vec<&'a PlausibilityRule> {
        self.rules
            .iter()
            .zip(&self.patterns)
            .filter(|(r, re)| violates(rec, r, re.as_ref()))
            .map(|(r, _)| r)
            .collect()
    }

    /// Apply rule actions: flag as `implausible:<rule id>`, or null the value.
    pub fn apply(&self, corpus: &mut [ListingRecord]) {
        for rec in corpus.iter_mut() {
            let hits: Vec<PlausibilityRule> = self.violations(rec).into_iter().cloned().collect();
            for r in hits {
                rec.flag(format!("implausible:{}", r.id));
                if r.action == Action::NullOut && !r.predicate.is_cross_field() {
                    null_out(rec, r.attribute);
                }
            }
        }
    }
}

fn violates(rec: &ListingRecord, rule: &PlausibilityRule, re: Option<&Regex>) -> bool {
    if let Predicate::RenovatedBuiltAfter { year } = rule.predicate {
        return rec.amenities.contains("renovated") && rec.year_built.is_some_and(|y| y > year);
    }
    let Some(v) = attribute_value(rec, rule.attribute) else {
        return false;
    };
    match (&rule.predicate, v) {
        (Predicate::Range { min, max }, AttrValue::Num(x)) => {
            let lo_ok = min.is_none_or(|b| if b.inclusive { x >= b.value } else { x > b.value });
            let hi_ok = max.is_none_or(|b| if b.inclusive { x <= b.value } else { x < b.value });
            !(lo_ok && hi_ok)
        }
        (Predicate::Pattern { .. }, AttrValue::Text(t)) => !re.is_some_and(|re| re.is_match(&t)),
        (Predicate::WithinBbox { bbox }, AttrValue::Point(p)) => !bbox.contains(&p),
        _ => false,
    }
}

fn null_out(rec: &mut ListingRecord, attr: Attribute) {
    match attr {
        Attribute::Rent => rec.rent_net_eur = None,
        Attribute::Size => rec.size_sqm = None,
        Attribute::PricePerSqm => {
            rec.rent_net_eur = None;
            rec.size_sqm = None;
        }
        Attribute::RunningCosts => rec.running_costs_eur = None,
        Attribute::Rooms => rec.rooms = None,
        Attribute::YearBuilt => rec.year_built = None,
        Attribute::EnergyClass => rec.energy_class = None,
        Attribute::PostalCode => rec.postal_code = None,
        Attribute::Coords => {
            rec.coords = None;
            rec.dist_center_m = None;
        }
    }
}

/// Default checks for a corpus scraped in `scrape_year`.
pub fn default_rules(scrape_year: i32, bbox: Option<BBox>) -> Vec<PlausibilityRule> {
    let range = |id: &str, attribute, min, max| PlausibilityRule {
        id: id.into(),
        attribute,
        predicate: Predicate::Range { min, max },
        action: Action::Flag,
    };
    let mut rules = vec![
        range(
            "year_built_range",
            Attribute::YearBuilt,
            Some(Bound::inclusive(1200.0)),
            Some(Bound::inclusive((scrape_year + 2) as f64)),
        ),
        range("rent_positive", Attribute::Rent, Some(Bound::exclusive(0.0)), None),
        range("size_positive", Attribute::Size, Some(Bound::exclusive(0.0)), None),
        range(
            "price_per_sqm_range",
            Attribute::PricePerSqm,
            Some(Bound::exclusive(1.0)),
            Some(Bound::exclusive(100.0)),
        ),
        range(
            "running_costs_range",
            Attribute::RunningCosts,
            Some(Bound::inclusive(0.0)),
            Some(Bound::inclusive(2000.0)),
        ),
        range("rooms_range", Attribute::Rooms, Some(Bound::exclusive(0.0)), Some(Bound::inclusive(20.0))),
        PlausibilityRule {
            id: "postal_code_format".into(),
            attribute: Attribute::PostalCode,
            predicate: Predicate::Pattern { regex: r"^\d{5}$".into() },
            action: Action::Flag,
        },
    ];
    if let Some(bbox) = bbox {
        rules.push(PlausibilityRule {
            id: "coords_in_bbox".into(),
            attribute: Attribute::Coords,
            predicate: Predicate::WithinBbox { bbox },
            action: Action::Flag,
        });
    }
    rules.push(PlausibilityRule {
        id: "renovated_built_after_2010".into(),
        attribute: Attribute::YearBuilt,
        predicate: Predicate::RenovatedBuiltAfter { year: 2010 },
        action: Action::Flag,
    });
    rules
}
