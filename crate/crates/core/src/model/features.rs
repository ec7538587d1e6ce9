//! Model-ready feature rows built from the cleaned corpus.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::extractor::ListingRecord;
use crate::geo::{distance_to_center, GeoPoint};

pub const DEFAULT_VOCAB: &[&str] = &["balcony", "parking", "basement", "kitchen", "senior_friendly", "renovated"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    /// Net rent per square meter.
    pub target: f64,
    pub dist_center_m: f64,
    pub size_sqm: f64,
    pub year_built: f64,
    /// Number of vocabulary amenities present.
    pub nfeatures: u32,
    #[serde(default)]
    pub rooms: Option<f64>,
    /// One flag per vocabulary entry, in vocabulary order.
    #[serde(default)]
    pub amenities: Vec<bool>,
    #[serde(default)]
    pub plz: Option<String>,
}

impl FeatureRow {
    /// Numeric value of a named feature: `dist_center_m`, `size_sqm`,
    /// `year_built`, `nfeatures`, `rooms` or `amenity:<i>` by vocabulary
    /// position.
    pub fn feature(&self, name: &str) -> Option<f64> {
        match name {
            "dist_center_m" => Some(self.dist_center_m),
            "size_sqm" => Some(self.size_sqm),
            "year_built" => Some(self.year_built),
            "nfeatures" => Some(self.nfeatures as f64),
            "rooms" => self.rooms,
            other => {
                let i: usize = other.strip_prefix("amenity:")?.parse().ok()?;
                self.amenities.get(i).map(|&b| if b { 1.0 } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub vocab: Vec<String>,
    pub rows: Vec<FeatureRow>,
    /// Records dropped for a missing core feature.
    pub dropped: usize,
}

/// One row per record that has rent, size, year and a location. Target is
/// rent divided by size.
pub fn build_features(corpus: &[ListingRecord], center: &GeoPoint, vocab: &[String]) -> FeatureSet {
    let mut rows = Vec::with_capacity(corpus.len());
    let mut dropped = 0;
    for rec in corpus {
        let dist = rec.dist_center_m.or_else(|| rec.coords.map(|p| distance_to_center(&p, center)));
        let (Some(rent), Some(size), Some(year), Some(dist)) = (rec.rent_net_eur, rec.size_sqm, rec.year_built, dist)
        else {
            dropped += 1;
            continue;
        };
        if !(size.value > 0.0) {
            dropped += 1;
            continue;
        }
        let amenities: Vec<bool> = vocab.iter().map(|v| rec.amenities.contains(v)).collect();
        rows.push(FeatureRow {
            id: rec.id.clone(),
            target: rent.value / size.value,
            dist_center_m: dist,
            size_sqm: size.value,
            year_built: year as f64,
            nfeatures: amenities.iter().filter(|&&b| b).count() as u32,
            rooms: rec.rooms.map(|r| r.value),
            amenities,
            plz: rec.address.as_ref().and_then(|a| a.postal_code.clone()).or_else(|| rec.postal_code.clone()),
        });
    }
    FeatureSet {
        vocab: vocab.to_vec(),
        rows,
        dropped,
    }
}

impl FeatureSet {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["id", "target", "dist_center_m", "size_sqm", "year_built", "nfeatures", "rooms", "plz"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.vocab.iter().map(|v| format!("amenity_{v}")));
        h
    }

    /// CSV: core columns, then one 0/1 column per amenity.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.id.clone(),
                r.target.to_string(),
                r.dist_center_m.to_string(),
                r.size_sqm.to_string(),
                r.year_built.to_string(),
                r.nfeatures.to_string(),
                r.rooms.map(|v| v.to_string()).unwrap_or_default(),
                r.plz.clone().unwrap_or_default(),
            ];
            rec.extend(r.amenities.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ModelError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let vocab: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_prefix("amenity_").map(str::to_string))
            .collect();
        let bad = |what: &str, v: &str| ModelError::InvalidInput(format!("feature CSV: bad {what} {v:?}"));
        let num = |v: &str, what: &str| v.parse::<f64>().map_err(|_| bad(what, v));
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            rows.push(FeatureRow {
                id: get(0).to_string(),
                target: num(get(1), "target")?,
                dist_center_m: num(get(2), "dist_center_m")?,
                size_sqm: num(get(3), "size_sqm")?,
                year_built: num(get(4), "year_built")?,
                nfeatures: get(5).parse().map_err(|_| bad("nfeatures", get(5)))?,
                rooms: if get(6).is_empty() { None } else { Some(num(get(6), "rooms")?) },
                plz: if get(7).is_empty() { None } else { Some(get(7).to_string()) },
                amenities: (0..vocab.len()).map(|i| get(8 + i) == "1").collect(),
            });
        }
        Ok(FeatureSet { vocab, rows, dropped: 0 })
    }
}
