use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::rules::{attribute_value, is_qualified, Attribute, RuleBook};
use super::QualityError;
use crate::extractor::ListingRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeQuality {
    pub attribute: Attribute,
    pub missing: usize,
    /// Present values violating at least one non-cross-field rule.
    pub implausible: usize,
    /// Numbers carrying a qualifier such as `ca.` or `mind.`.
    pub qualified: usize,
    pub missing_pct: f64,
    pub implausible_pct: f64,
    pub valid_pct: f64,
    /// Hits per rule id, including cross-field checks.
    pub rule_hits: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub corpus_size: usize,
    pub records_retained: usize,
    pub attributes: Vec<AttributeQuality>,
    /// Days between the first and last scrape date without any record.
    pub gap_days: Vec<NaiveDate>,
}

fn pct(count: usize, n: usize) -> f64 {
    (count as f64 * 100.0 / n as f64 * 100.0).round() / 100.0
}

pub fn quality_report(corpus: &[ListingRecord], rules: &RuleBook) -> Result<QualityReport, QualityError> {
    let n = corpus.len();
    if n == 0 {
        return Err(QualityError::EmptyCorpus);
    }
    let mut attributes = Vec::with_capacity(Attribute::ALL.len());
    let violations: Vec<_> = corpus.iter().map(|r| rules.violations(r)).collect();
    for attr in Attribute::ALL {
        let mut missing = 0;
        let mut implausible = 0;
        let mut qualified = 0;
        let mut rule_hits = BTreeMap::new();
        for r in rules.rules().iter().filter(|r| r.attribute == attr) {
            rule_hits.insert(r.id.clone(), 0);
        }
        for (rec, hits) in corpus.iter().zip(&violations) {
            let hits: Vec<_> = hits.iter().filter(|r| r.attribute == attr).collect();
            for h in &hits {
                *rule_hits.entry(h.id.clone()).or_default() += 1;
            }
            if attribute_value(rec, attr).is_none() {
                missing += 1;
                continue;
            }
            if is_qualified(rec, attr) {
                qualified += 1;
            }
            if hits.iter().any(|h| !h.predicate.is_cross_field()) {
                implausible += 1;
            }
        }
        let missing_pct = pct(missing, n);
        let implausible_pct = pct(implausible, n);
        attributes.push(AttributeQuality {
            attribute: attr,
            missing,
            implausible,
            qualified,
            missing_pct,
            implausible_pct,
            valid_pct: pct(n - missing - implausible, n),
            rule_hits,
        });
    }
    Ok(QualityReport {
        corpus_size: n,
        records_retained: n,
        attributes,
        gap_days: gap_days(corpus),
    })
}

fn gap_days(corpus: &[ListingRecord]) -> Vec<NaiveDate> {
    let days: BTreeSet<NaiveDate> = corpus.iter().map(|r| r.scraped_at.date_naive()).collect();
    let (Some(&first), Some(&last)) = (days.first(), days.last()) else {
        return Vec::new();
    };
    first.iter_days().take_while(|d| *d <= last).filter(|d| !days.contains(d)).collect()
}

impl QualityReport {
    pub fn attribute(&self, a: Attribute) -> Option<&AttributeQuality> {
        self.attributes.iter().find(|q| q.attribute == a)
    }

    /// Aligned text table: one row per attribute with missing and
    /// implausible percentages.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let w = self.attributes.iter().map(|a| a.attribute.label().chars().count()).max().unwrap_or(9).max(9);
        let _ = writeln!(s, "{:<w$}  {:>9}  {:>13}  {:>9}", "Attribute", "Missing %", "Implausible %", "Qualified");
        let _ = writeln!(s, "{}", "-".repeat(w + 39));
        for a in &self.attributes {
            let label = a.attribute.label();
            let pad = w - label.chars().count();
            let _ = writeln!(
                s,
                "{label}{}  {:>9.2}  {:>13.2}  {:>9}",
                " ".repeat(pad),
                a.missing_pct,
                a.implausible_pct,
                a.qualified
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(w + 39));
        let _ = writeln!(s, "Records: {} (retained {})", self.corpus_size, self.records_retained);
        let _ = writeln!(s, "Days without records: {}", self.gap_days.len());
        let cross: Vec<String> = self
            .attributes
            .iter()
            .flat_map(|a| a.rule_hits.iter())
            .filter(|(_, &c)| c > 0)
            .map(|(id, c)| format!("{id}={c}"))
            .collect();
        if !cross.is_empty() {
            let _ = writeln!(s, "Rule hits: {}", cross.join(", "));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
