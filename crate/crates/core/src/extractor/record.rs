//! The listing record and its JSONL / CSV encodings.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::numeric::ParsedNumber;
use super::ExtractError;
use crate::geo::{Address, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Missing,
    Unparseable,
    ImplausibleFormat,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub kind: IssueKind,
    pub detail: String,
}

impl FieldIssue {
    pub fn new(field: &str, kind: IssueKind, detail: impl Into<String>) -> Self {
        FieldIssue {
            field: field.to_string(),
            kind,
            detail: detail.into(),
        }
    }
}

/// One scraped listing. The fields after `scraped_at` are filled by the
/// location stage and stay empty straight out of extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub id: String,
    pub url: String,
    pub rent_net_eur: Option<ParsedNumber>,
    pub size_sqm: Option<ParsedNumber>,
    pub rooms: Option<ParsedNumber>,
    pub year_built: Option<i32>,
    pub running_costs_eur: Option<ParsedNumber>,
    #[serde(default)]
    pub amenities: BTreeSet<String>,
    pub energy_class: Option<String>,
    pub raw_address: Option<String>,
    pub postal_code: Option<String>,
    pub coords_embedded: Option<GeoPoint>,
    pub scraped_at: DateTime<Utc>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<Address>,
    /// Point used for analysis: geocoded, or imputed from the postal code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geocode_status: Option<String>,
    #[serde(default)]
    pub outside_bbox: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_center_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ListingRecord {
    pub fn empty(id: impl Into<String>, url: impl Into<String>, scraped_at: DateTime<Utc>) -> Self {
        ListingRecord {
            id: id.into(),
            url: url.into(),
            rent_net_eur: None,
            size_sqm: None,
            rooms: None,
            year_built: None,
            running_costs_eur: None,
            amenities: BTreeSet::new(),
            energy_class: None,
            raw_address: None,
            postal_code: None,
            coords_embedded: None,
            scraped_at,
            address: None,
            coords: None,
            geocode_status: None,
            outside_bbox: false,
            dist_center_m: None,
            flags: Vec::new(),
        }
    }

    pub fn flag(&mut self, f: impl Into<String>) {
        let f = f.into();
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }

    pub fn has_flag(&self, f: &str) -> bool {
        self.flags.iter().any(|x| x == f)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[ListingRecord]) -> Result<(), ExtractError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| ExtractError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ExtractError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| ExtractError::Io(e.to_string()))
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ListingRecord>, ExtractError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ExtractError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExtractError::Config(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Column order of the record CSV.
pub const CSV_HEADER: &[&str] = &[
    "id",
    "url",
    "scraped_at",
    "rent_net_eur",
    "rent_qualifier",
    "size_sqm",
    "size_qualifier",
    "rooms",
    "rooms_qualifier",
    "year_built",
    "running_costs_eur",
    "running_costs_qualifier",
    "energy_class",
    "amenities",
    "raw_address",
    "postal_code",
    "embedded_lat",
    "embedded_lon",
    "street",
    "house_number",
    "city",
    "lat",
    "lon",
    "coord_quality",
    "geocode_status",
    "outside_bbox",
    "dist_center_m",
    "flags",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(w: W, records: &[ListingRecord]) -> Result<(), ExtractError> {
    let io = |e: csv::Error| ExtractError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(w);
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let num = |n: &Option<ParsedNumber>| (opt(n.map(|p| p.value)), opt(n.map(|p| p.qualifier.as_str())));
        let (rent, rent_q) = num(&r.rent_net_eur);
        let (size, size_q) = num(&r.size_sqm);
        let (rooms, rooms_q) = num(&r.rooms);
        let (rc, rc_q) = num(&r.running_costs_eur);
        let addr = r.address.as_ref();
        let row = [
            r.id.clone(),
            r.url.clone(),
            r.scraped_at.to_rfc3339(),
            rent,
            rent_q,
            size,
            size_q,
            rooms,
            rooms_q,
            opt(r.year_built),
            rc,
            rc_q,
            r.energy_class.clone().unwrap_or_default(),
            r.amenities.iter().cloned().collect::<Vec<_>>().join(";"),
            r.raw_address.clone().unwrap_or_default(),
            r.postal_code.clone().unwrap_or_default(),
            opt(r.coords_embedded.map(|p| p.lat)),
            opt(r.coords_embedded.map(|p| p.lon)),
            opt(addr.and_then(|a| a.street.clone())),
            opt(addr.and_then(|a| a.house_number.clone())),
            opt(addr.and_then(|a| a.city.clone())),
            opt(r.coords.map(|p| p.lat)),
            opt(r.coords.map(|p| p.lon)),
            opt(r.coords.map(|p| p.quality.as_str())),
            r.geocode_status.clone().unwrap_or_default(),
            r.outside_bbox.to_string(),
            opt(r.dist_center_m),
            r.flags.join(";"),
        ];
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| ExtractError::Io(e.to_string()))
}
