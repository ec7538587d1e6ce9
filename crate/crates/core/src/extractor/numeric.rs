//! Locale-aware parsing of listing numbers such as `ca. 56,5 m²`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locale {
    De,
    En,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Eur,
    Sqm,
    Rooms,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    #[default]
    Exact,
    Approx,
    AtLeast,
    AtMost,
}

impl Qualifier {
    pub fn as_str(self) -> &'static str {
        match self {
            Qualifier::Exact => "exact",
            Qualifier::Approx => "approx",
            Qualifier::AtLeast => "at_least",
            Qualifier::AtMost => "at_most",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsedNumber {
    pub value: f64,
    pub unit: Unit,
    pub qualifier: Qualifier,
}

impl ParsedNumber {
    pub fn exact(value: f64, unit: Unit) -> Self {
        ParsedNumber {
            value,
            unit,
            qualifier: Qualifier::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NumericError {
    #[error("no digits in {0:?}")]
    NoDigits(String),
    #[error("not a finite number: {0:?}")]
    NotFinite(String),
}

struct Patterns {
    number: Regex,
    approx: Regex,
    at_least: Regex,
    at_most: Regex,
    eur: Regex,
    sqm: Regex,
    rooms: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        number: Regex::new(r"-?\d+(?:[.,]\d+)*").unwrap(),
        approx: Regex::new(r"(?i)(?:^|\s|\()(?:ca\.?|circa|approx\.?|approximately|about|~|rund)(?:\s|$|\d)").unwrap(),
        at_least: Regex::new(r"(?i)(?:^|\s)(?:mind\.|mindestens|at\s+least|ab)(?:\s|$)").unwrap(),
        at_most: Regex::new(r"(?i)(?:^|\s)(?:bis\s+zu|max\.|maximal|höchstens|at\s+most|up\s+to)(?:\s|$)").unwrap(),
        eur: Regex::new(r"(?i)€|\beur\b|\beuro\b").unwrap(),
        sqm: Regex::new(r"(?i)m²|\bm2\b|\bqm\b|\bsqm\b").unwrap(),
        rooms: Regex::new(r"(?i)\bzimmer\b|\bzi\.|\brooms?\b").unwrap(),
    })
}

/// Parse the first number in `text`, with its unit and qualifier.
///
/// In the `de` locale `.` groups thousands and `,` is the decimal mark; a
/// lone `.` that does not separate groups of three digits is read as a
/// decimal point. `en` is the reverse.
pub fn parse_numeric(text: &str, locale: Locale) -> Result<ParsedNumber, NumericError> {
    let p = patterns();
    let m = p.number.find(text).ok_or_else(|| NumericError::NoDigits(text.to_string()))?;
    let value = parse_digits(m.as_str(), locale).ok_or_else(|| NumericError::NotFinite(text.to_string()))?;

    let qualifier = if p.approx.is_match(text) {
        Qualifier::Approx
    } else if p.at_least.is_match(text) {
        Qualifier::AtLeast
    } else if p.at_most.is_match(text) {
        Qualifier::AtMost
    } else {
        Qualifier::Exact
    };
    let rest = &text[m.end()..];
    let unit = [(&p.eur, Unit::Eur), (&p.sqm, Unit::Sqm), (&p.rooms, Unit::Rooms)]
        .into_iter()
        .find(|(re, _)| re.is_match(rest) || re.is_match(&text[..m.start()]))
        .map_or(Unit::None, |(_, u)| u);
    Ok(ParsedNumber { value, unit, qualifier })
}

fn parse_digits(s: &str, locale: Locale) -> Option<f64> {
    let (group, decimal) = match locale {
        Locale::De => ('.', ','),
        Locale::En => (',', '.'),
    };
    let normalized = if s.contains(decimal) {
        s.replace(group, "").replace(decimal, ".")
    } else if s.contains(group) {
        let digits = s.trim_start_matches('-');
        let mut groups = digits.split(group);
        let head = groups.next().unwrap_or("");
        let grouped = !head.is_empty() && head.len() <= 3 && groups.all(|g| g.len() == 3);
        if grouped {
            s.replace(group, "")
        } else if s.matches(group).count() == 1 {
            s.replace(group, ".")
        } else {
            return None;
        }
    } else {
        s.to_string()
    };
    normalized.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// German rendering that [`parse_numeric`] reads back exactly.
pub fn render_de(n: &ParsedNumber) -> String {
    let prefix = match n.qualifier {
        Qualifier::Exact => "",
        Qualifier::Approx => "ca. ",
        Qualifier::AtLeast => "mind. ",
        Qualifier::AtMost => "bis zu ",
    };
    let suffix = match n.unit {
        Unit::Eur => " €",
        Unit::Sqm => " m²",
        Unit::Rooms => " Zimmer",
        Unit::None => "",
    };
    format!("{prefix}{}{suffix}", format_de(n.value))
}

/// Shortest round-tripping decimal with German separators.
pub fn format_de(v: f64) -> String {
    let s = format!("{v}");
    let (neg, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let mut grouped = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push('.');
        }
        grouped.push(c);
    }
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    out.push_str(&grouped);
    if !frac.is_empty() {
        out.push(',');
        out.push_str(frac);
    }
    out
}
