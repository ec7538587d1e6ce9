//! HTML templates in common listing-portal idioms: definition lists,
//! data attributes and coordinates embedded in a script block.

use crate::extractor::{render_de, ParsedNumber};
use crate::geo::GeoPoint;

pub(crate) struct ListingView {
    pub id: String,
    pub city: String,
    pub rent: Option<ParsedNumber>,
    pub size: Option<ParsedNumber>,
    pub rooms: Option<ParsedNumber>,
    pub year: Option<i32>,
    pub running_costs: Option<ParsedNumber>,
    pub energy_class: Option<String>,
    pub address: String,
    pub amenities: Vec<String>,
    pub embedded: GeoPoint,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn amenity_label(tag: &str) -> &str {
    match tag {
        "balcony" => "Balkon",
        "parking" => "Stellplatz",
        "basement" => "Keller",
        "kitchen" => "Einbauküche",
        "senior_friendly" => "Seniorengerecht",
        "renovated" => "Saniert",
        other => other,
    }
}

pub(crate) fn render_listing(v: &ListingView) -> String {
    let mut facts = String::new();
    let mut fact = |label: &str, class: &str, value: Option<String>| {
        if let Some(value) = value {
            facts.push_str(&format!("    <dt>{label}</dt><dd class=\"{class}\">{}</dd>\n", esc(&value)));
        }
    };
    fact("Kaltmiete", "rent", v.rent.as_ref().map(render_de));
    fact("Wohnfläche", "size", v.size.as_ref().map(render_de));
    fact("Zimmer", "rooms", v.rooms.as_ref().map(render_de));
    fact("Baujahr", "year", v.year.map(|y| y.to_string()));
    fact("Nebenkosten", "running-costs", v.running_costs.as_ref().map(render_de));
    fact("Energieeffizienzklasse", "energy-class", v.energy_class.clone());
    let features: String = v
        .amenities
        .iter()
        .map(|a| format!("<li data-feature=\"{}\">{}</li>", esc(a), esc(amenity_label(a))))
        .collect();
    let title = match &v.rooms {
        Some(r) => format!("{}-Zimmer-Wohnung in {}", render_de(&ParsedNumber { unit: crate::extractor::Unit::None, ..*r }), v.city),
        None => format!("Wohnung in {}", v.city),
    };
    format!(
        "<!doctype html>
<html lang=\"de\">
<head><meta charset=\"utf-8\"><title>{title}</title></head>
<body>
<article class=\"listing\" data-id=\"{id}\">
  <h1>{title}</h1>
  <dl class=\"facts\">
{facts}  </dl>
  <p class=\"address\">{address}</p>
  <ul class=\"features\">{features}</ul>
</article>
<div id=\"map\"></div>
<script>window.mapConfig = {{lat:{lat},lng:{lng},zoom:15}};</script>
</body>
</html>
",
        title = esc(&title),
        id = esc(&v.id),
        address = esc(&v.address),
        lat = v.embedded.lat,
        lng = v.embedded.lon,
    )
}

pub(crate) fn render_index(city: &str, page: usize, links: &[String], featured: Option<&str>, next: Option<&str>) -> String {
    let mut items = String::new();
    if let Some(f) = featured {
        items.push_str(&format!("    <li class=\"featured\"><a class=\"result-link\" href=\"{}\">Top-Angebot</a></li>\n", esc(f)));
    }
    for l in links {
        items.push_str(&format!("    <li><a class=\"result-link\" href=\"{}\">Angebot</a></li>\n", esc(l)));
    }
    let nav = next.map_or(String::new(), |n| format!("  <a class=\"next\" href=\"{}\">Weiter</a>\n", esc(n)));
    format!(
        "<!doctype html>
<html lang=\"de\">
<head><meta charset=\"utf-8\"><title>Wohnungen in {city}, Seite {page}</title></head>
<body>
  <ul class=\"results\">
{items}  </ul>
{nav}</body>
</html>
",
        city = esc(city),
    )
}

pub(crate) fn render_private() -> String {
    "<!doctype html>\n<html lang=\"de\"><body><p>Nur für angemeldete Nutzer.</p></body></html>\n".to_string()
}

/// Extraction rules matching the templates above.
pub fn rules_json(vocab: &[String]) -> String {
    let mut fields = vec![
        serde_json::json!({"field": "id", "selector": "article.listing", "attr": "data-id"}),
        serde_json::json!({"field": "rent_net_eur", "selector": "dd.rent", "post": ["strip", "numeric", "qualifier"]}),
        serde_json::json!({"field": "size_sqm", "selector": "dd.size", "post": ["strip", "numeric", "qualifier"]}),
        serde_json::json!({"field": "rooms", "selector": "dd.rooms", "post": ["strip", "numeric", "qualifier"]}),
        serde_json::json!({"field": "year_built", "selector": "dd.year", "post": ["strip", "numeric"]}),
        serde_json::json!({"field": "running_costs_eur", "selector": "dd.running-costs", "post": ["strip", "numeric", "qualifier"]}),
        serde_json::json!({"field": "energy_class", "selector": "dd.energy-class", "post": ["strip"]}),
        serde_json::json!({"field": "raw_address", "selector": "p.address", "post": ["strip"]}),
        serde_json::json!({"field": "postal_code", "selector": "p.address", "post": [{"regex_capture": "\\b(\\d{5})\\b"}]}),
    ];
    for a in vocab {
        fields.push(serde_json::json!({
            "field": format!("amenity:{a}"),
            "selector": format!("li[data-feature=\"{a}\"]"),
            "post": ["boolean_presence"],
        }));
    }
    let rules = serde_json::json!({
        "locale": "de",
        "fields": fields,
        "link_rules": {"listing": "a.result-link", "pagination": "a.next"},
        "coord_rule": "lat:\\s*(-?\\d+(?:\\.\\d+)?)\\s*,\\s*lng:\\s*(-?\\d+(?:\\.\\d+)?)",
    });
    let mut s = serde_json::to_string_pretty(&rules).expect("static json");
    s.push('\n');
    s
}
