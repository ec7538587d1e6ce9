use std::collections::HashSet;

use chrono::{DateTime, Utc};
use regex::Regex;
use scraper::{ElementRef, Html, Selector};
use url::Url;

use super::numeric::{parse_numeric, ParsedNumber, Qualifier, Unit};
use super::record::{FieldIssue, IssueKind, ListingRecord};
use super::rules::{CompiledField, CompiledTransform, ExtractionRuleSet, AMENITY_PREFIX};
use super::ExtractError;
use crate::geo::{GeoPoint, PointQuality};

enum Value {
    Text(String),
    Number(ParsedNumber),
}

/// Listing id used when no rule supplies one: the last path segment of the
/// URL without its extension.
pub fn id_from_url(url: &str) -> String {
    let path = Url::parse(url).map(|u| u.path().to_string()).unwrap_or_else(|_| url.to_string());
    let last = path.trim_end_matches('/').rsplit('/').next().unwrap_or("");
    let stem = last.split('.').next().unwrap_or(last);
    if stem.is_empty() {
        url.to_string()
    } else {
        stem.to_string()
    }
}

fn element_text(el: &ElementRef, attr: Option<&str>) -> Option<String> {
    match attr {
        Some(a) => el.value().attr(a).map(str::to_string),
        None => Some(el.text().collect::<String>()),
    }
}

fn apply_field(doc: &Html, rule: &CompiledField, rules: &ExtractionRuleSet) -> Result<Option<Value>, FieldIssue> {
    let name = rule.name.as_str();
    let Some(el) = doc.select(&rule.selector).next() else {
        return Err(FieldIssue::new(name, IssueKind::Missing, "selector matched nothing"));
    };
    let mut text = element_text(&el, rule.attr.as_deref())
        .ok_or_else(|| FieldIssue::new(name, IssueKind::Missing, format!("attribute {:?} absent", rule.attr)))?;
    let mut number = None;
    for t in &rule.post {
        match t {
            CompiledTransform::Strip => text = text.split_whitespace().collect::<Vec<_>>().join(" "),
            CompiledTransform::RegexCapture(re) => {
                let caps = re
                    .captures(&text)
                    .ok_or_else(|| FieldIssue::new(name, IssueKind::Unparseable, format!("no match for /{re}/ in {text:?}")))?;
                text = caps.get(1).or_else(|| caps.get(0)).map_or("", |m| m.as_str()).to_string();
            }
            CompiledTransform::Numeric => {
                if text.trim().is_empty() {
                    return Err(FieldIssue::new(name, IssueKind::Missing, "empty text"));
                }
                let mut n = parse_numeric(&text, rules.locale())
                    .map_err(|e| FieldIssue::new(name, IssueKind::Unparseable, e.to_string()))?;
                if !rule.keeps_qualifier() {
                    n.qualifier = Qualifier::Exact;
                }
                number = Some(n);
            }
            CompiledTransform::Qualifier | CompiledTransform::BooleanPresence => {}
        }
    }
    if let Some(n) = number {
        return Ok(Some(Value::Number(n)));
    }
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(FieldIssue::new(name, IssueKind::Missing, "empty text"));
    }
    Ok(Some(Value::Text(text)))
}

fn check_number(field: &str, n: ParsedNumber, units: &[Unit], positive: bool) -> Result<ParsedNumber, FieldIssue> {
    if !units.contains(&n.unit) {
        return Err(FieldIssue::new(field, IssueKind::ImplausibleFormat, format!("unexpected unit {:?}", n.unit)));
    }
    if positive && n.value <= 0.0 || n.value < 0.0 {
        return Err(FieldIssue::new(field, IssueKind::ImplausibleFormat, format!("non-positive value {}", n.value)));
    }
    Ok(n)
}

fn assign(rec: &mut ListingRecord, field: &str, v: Value) -> Result<(), FieldIssue> {
    let expect_number = |v: Value| match v {
        Value::Number(n) => Ok(n),
        Value::Text(t) => Err(FieldIssue::new(field, IssueKind::Unparseable, t)),
    };
    let text = |v: Value| match v {
        Value::Text(t) => t,
        Value::Number(n) => n.value.to_string(),
    };
    match field {
        "id" => rec.id = text(v),
        "rent_net_eur" => rec.rent_net_eur = Some(check_number(field, expect_number(v)?, &[Unit::Eur, Unit::None], true)?),
        "size_sqm" => rec.size_sqm = Some(check_number(field, expect_number(v)?, &[Unit::Sqm, Unit::None], true)?),
        "rooms" => rec.rooms = Some(check_number(field, expect_number(v)?, &[Unit::Rooms, Unit::None], true)?),
        "running_costs_eur" => {
            rec.running_costs_eur = Some(check_number(field, expect_number(v)?, &[Unit::Eur, Unit::None], false)?)
        }
        "year_built" => {
            let n = expect_number(v)?;
            if n.value.fract() != 0.0 || n.unit != Unit::None || n.value.abs() > i32::MAX as f64 {
                return Err(FieldIssue::new(field, IssueKind::ImplausibleFormat, format!("not a year: {}", n.value)));
            }
            rec.year_built = Some(n.value as i32);
        }
        "energy_class" => rec.energy_class = Some(text(v)),
        "raw_address" => rec.raw_address = Some(text(v)),
        "postal_code" => rec.postal_code = Some(text(v)),
        other => unreachable!("field {other} passed validation"),
    }
    Ok(())
}

fn decode(html: &[u8]) -> Result<&str, String> {
    if html.iter().all(|b| b.is_ascii_whitespace()) {
        return Err("empty document".into());
    }
    let s = std::str::from_utf8(html).map_err(|e| format!("not UTF-8: {e}"))?;
    if !s.contains('<') {
        return Err("no markup".into());
    }
    Ok(s)
}

/// Extract one listing. Each rule either fills its field or yields an issue;
/// a bad field never affects the others.
pub fn extract_record(
    html: &[u8],
    rules: &ExtractionRuleSet,
    url: &str,
    scraped_at: DateTime<Utc>,
) -> (ListingRecord, Vec<FieldIssue>) {
    let mut rec = ListingRecord::empty(id_from_url(url), url, scraped_at);
    let text = match decode(html) {
        Ok(t) => t,
        Err(why) => return (rec, vec![FieldIssue::new("document", IssueKind::Fatal, why)]),
    };
    let doc = Html::parse_document(text);
    let mut issues = Vec::new();
    for rule in &rules.fields {
        if rule.is_presence() {
            if doc.select(&rule.selector).next().is_some() {
                let tag = rule.name.strip_prefix(AMENITY_PREFIX).unwrap_or(&rule.name);
                rec.amenities.insert(tag.to_string());
            }
            continue;
        }
        let outcome = apply_field(&doc, rule, rules).and_then(|v| match v {
            Some(v) => assign(&mut rec, &rule.name, v),
            None => Ok(()),
        });
        if let Err(issue) = outcome {
            issues.push(issue);
        }
    }
    if let Some(re) = rules.coord_regex() {
        let (point, issue) = extract_embedded_coords(text.as_bytes(), re);
        rec.coords_embedded = point;
        issues.extend(issue);
    }
    (rec, issues)
}

/// Absolute http(s) links matched by `selector`, fragments stripped, first
/// occurrence kept.
pub fn extract_links(html: &[u8], selector: &str, base_url: &Url) -> Result<Vec<Url>, ExtractError> {
    let sel = Selector::parse(selector).map_err(|e| ExtractError::InvalidSelector {
        field: "links".into(),
        message: e.to_string(),
    })?;
    let doc = Html::parse_document(&String::from_utf8_lossy(html));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for el in doc.select(&sel) {
        let Some(href) = el.value().attr("href") else { continue };
        let Ok(mut u) = base_url.join(href.trim()) else { continue };
        if !matches!(u.scheme(), "http" | "https") {
            continue;
        }
        u.set_fragment(None);
        if seen.insert(u.to_string()) {
            out.push(u);
        }
    }
    Ok(out)
}

/// First `(lat, lon)` pair captured by `coord_rule` anywhere in the page.
pub fn extract_embedded_coords(html: &[u8], coord_rule: &Regex) -> (Option<GeoPoint>, Option<FieldIssue>) {
    const FIELD: &str = "coords_embedded";
    let text = String::from_utf8_lossy(html);
    let Some(c) = coord_rule.captures(&text) else {
        return (None, Some(FieldIssue::new(FIELD, IssueKind::Missing, "no coordinates in page")));
    };
    let parse = |i: usize| c.get(i).and_then(|m| m.as_str().trim().parse::<f64>().ok());
    let (Some(lat), Some(lon)) = (parse(1), parse(2)) else {
        return (None, Some(FieldIssue::new(FIELD, IssueKind::Unparseable, c[0].to_string())));
    };
    match GeoPoint::new(lat, lon, PointQuality::Embedded) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(FieldIssue::new(FIELD, IssueKind::ImplausibleFormat, e.to_string()))),
    }
}
