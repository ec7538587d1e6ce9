//! German-style postal address normalization.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressFlag {
    /// Postal code and town came before the street.
    Reordered,
    NoiseRemoved,
    MissingHouseNumber,
    /// No street-like token found.
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Address {
    pub street: Option<String>,
    pub house_number: Option<String>,
    pub postal_code: Option<String>,
    pub city: Option<String>,
    pub raw: String,
    #[serde(default)]
    pub flags: Vec<AddressFlag>,
}

impl Address {
    pub fn has_flag(&self, f: AddressFlag) -> bool {
        self.flags.contains(&f)
    }

    pub fn is_resolvable(&self) -> bool {
        !self.has_flag(AddressFlag::Unresolvable)
    }

    /// `Street Nr, PLZ City`, leaving out absent parts.
    pub fn canonical(&self) -> String {
        let street = match (&self.street, &self.house_number) {
            (Some(s), Some(n)) => Some(format!("{s} {n}")),
            (Some(s), None) => Some(s.clone()),
            _ => None,
        };
        let place = match (&self.postal_code, &self.city) {
            (Some(p), Some(c)) => Some(format!("{p} {c}")),
            (Some(p), None) => Some(p.clone()),
            (None, Some(c)) => Some(c.clone()),
            (None, None) => None,
        };
        [street, place].into_iter().flatten().collect::<Vec<_>>().join(", ")
    }
}

/// Regexes for tokens that confuse geocoders: neighbourhood names in
/// parentheses, building qualifiers and similar.
#[derive(Debug, Clone)]
pub struct NoisePatterns {
    patterns: Vec<Regex>,
}

pub const DEFAULT_NOISE_PATTERNS: &[&str] = &[
    r"\([^)]*\)",
    r"(?i)\b(?:Gebäude|Haus|Aufgang|Block|Eingang|Building)\s+[A-Z0-9]{1,2}\b",
    r"(?i)\b(?:Vorderhaus|Hinterhaus|Seitenflügel|Gartenhaus)\b",
    r"(?i)\bOT\s+[\p{L}-]+",
    r"\s+-\s+[^,]+$",
];

impl NoisePatterns {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let patterns = patterns.iter().map(|p| Regex::new(p.as_ref())).collect::<Result<_, _>>()?;
        Ok(NoisePatterns { patterns })
    }

    pub fn german() -> Self {
        Self::new(DEFAULT_NOISE_PATTERNS).expect("default noise patterns compile")
    }

    fn strip(&self, s: &str) -> (String, bool) {
        let mut out = s.to_string();
        let mut changed = false;
        for re in &self.patterns {
            let next = re.replace_all(&out, "").into_owned();
            if next != out {
                changed = true;
                out = next;
            }
        }
        (out, changed)
    }
}

impl Default for NoisePatterns {
    fn default() -> Self {
        Self::german()
    }
}

struct Patterns {
    plz_city: Regex,
    plz_only: Regex,
    street_number: Regex,
    glued_plz: Regex,
    street_suffix: Regex,
    spaces: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        plz_city: Regex::new(r"^(\d{5})\s+(\D.*)$").unwrap(),
        plz_only: Regex::new(r"^(\d{5})$").unwrap(),
        street_number: Regex::new(r"^(.*\p{L}.*?)\s+(\d+\s?[a-zA-Z]?(?:\s?[-/]\s?\d+\s?[a-zA-Z]?)?)$").unwrap(),
        glued_plz: Regex::new(r"^(.*\S)\s+(\d{5}\s+\D.*)$").unwrap(),
        street_suffix: Regex::new(
            r"(?i)(str\.|straße|strasse|weg|platz|allee|ring|gasse|damm|ufer|chaussee|markt|steg|pfad|hof|promenade|zeile|berg|winkel)$",
        )
        .unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
    })
}

pub fn normalize_address(raw: &str, city_hint: &str) -> Address {
    normalize_address_with(raw, city_hint, &NoisePatterns::german())
}

pub fn normalize_address_with(raw: &str, city_hint: &str, noise: &NoisePatterns) -> Address {
    let pats = patterns();
    let mut flags = Vec::new();

    let (cleaned, noisy) = noise.strip(raw);
    if noisy {
        flags.push(AddressFlag::NoiseRemoved);
    }

    let mut parts: Vec<String> = Vec::new();
    for part in cleaned.split([',', ';', '\n']) {
        let p = pats.spaces.replace_all(part.trim(), " ").into_owned();
        if p.is_empty() {
            continue;
        }
        // "Street 5 04109 Leipzig" without a comma
        if let Some(c) = pats.glued_plz.captures(&p) {
            parts.push(c[1].to_string());
            parts.push(c[2].to_string());
        } else {
            parts.push(p);
        }
    }

    let mut street = None;
    let mut number = None;
    let mut plz = None;
    let mut city = None;
    let mut street_idx = None;
    let mut place_idx = None;

    let mut used = vec![false; parts.len()];
    // first pass: postal code parts and the numbered street
    for (i, p) in parts.iter().enumerate() {
        if let Some(c) = pats.plz_city.captures(p) {
            if plz.is_none() {
                plz = Some(c[1].to_string());
                city = Some(c[2].trim().to_string());
                place_idx = Some(i);
            }
            used[i] = true;
        } else if let Some(c) = pats.plz_only.captures(p) {
            if plz.is_none() {
                plz = Some(c[1].to_string());
                place_idx = Some(i);
            }
            used[i] = true;
        } else if street.is_none() {
            if let Some(c) = pats.street_number.captures(p) {
                street = Some(c[1].trim().to_string());
                number = Some(c[2].replace(' ', ""));
                street_idx = Some(i);
                used[i] = true;
            }
        }
    }
    // second pass: a street without number, then a bare town name
    for (i, p) in parts.iter().enumerate() {
        if used[i] {
            continue;
        }
        if street.is_none() && pats.street_suffix.is_match(p) {
            street = Some(p.clone());
            street_idx = Some(i);
        } else if city.is_none() && !p.chars().any(|c| c.is_ascii_digit()) {
            city = Some(p.clone());
            place_idx.get_or_insert(i);
        }
    }

    if let (Some(s), Some(pl)) = (street_idx, place_idx) {
        if pl < s {
            flags.push(AddressFlag::Reordered);
        }
    }
    if street.is_none() {
        flags.push(AddressFlag::Unresolvable);
    } else if number.is_none() {
        flags.push(AddressFlag::MissingHouseNumber);
    }
    if city.is_none() && !city_hint.trim().is_empty() {
        city = Some(city_hint.trim().to_string());
    }

    Address {
        street,
        house_number: number,
        postal_code: plz,
        city,
        raw: raw.to_string(),
        flags,
    }
}
