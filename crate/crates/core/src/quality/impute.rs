use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::extractor::ListingRecord;
use crate::geo::{distance_to_center, GeoPoint, PointQuality};

pub const FLAG_IMPUTED: &str = "distance_imputed_from_postal_code";
pub const FLAG_UNIMPUTED: &str = "distance_not_imputable";

/// Representative point per postal code.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostalCentroids(pub BTreeMap<String, GeoPoint>);

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    plz: String,
    lat: f64,
    lon: f64,
}

impl PostalCentroids {
    /// CSV with header `plz,lat,lon`.
    pub fn from_csv<R: Read>(r: R) -> Result<Self, QualityError> {
        let mut out = BTreeMap::new();
        for row in csv::Reader::from_reader(r).deserialize::<Row>() {
            let row = row?;
            let p = GeoPoint::new(row.lat, row.lon, PointQuality::Geocoded)
                .map_err(|e| QualityError::InvalidInput(format!("centroid {}: {e}", row.plz)))?;
            out.insert(row.plz, p);
        }
        Ok(PostalCentroids(out))
    }

    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<(), QualityError> {
        let mut w = csv::Writer::from_writer(w);
        for (plz, p) in &self.0 {
            w.serialize(Row {
                plz: plz.clone(),
                lat: p.lat,
                lon: p.lon,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, plz: &str) -> Option<&GeoPoint> {
        self.0.get(plz)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationSummary {
    pub imputed: usize,
    pub unimputed: usize,
}

/// Give records without a location the distance of their postal code's
/// centroid. Records that already have coordinates or a distance are left
/// alone; records with no usable postal code are flagged.
pub fn impute_distance_by_postal(
    corpus: &mut [ListingRecord],
    centroids: &PostalCentroids,
    center: &GeoPoint,
    centroid_radius_m: f64,
) -> ImputationSummary {
    let mut s = ImputationSummary::default();
    for rec in corpus.iter_mut() {
        if rec.coords.is_some() || rec.dist_center_m.is_some() {
            continue;
        }
        let plz = rec
            .address
            .as_ref()
            .and_then(|a| a.postal_code.clone())
            .or_else(|| rec.postal_code.clone());
        match plz.as_deref().and_then(|p| centroids.get(p)) {
            Some(c) => {
                let point = GeoPoint::imputed(c.lat, c.lon, centroid_radius_m).expect("centroid validated on load");
                rec.dist_center_m = Some(distance_to_center(&point, center));
                rec.coords = Some(point);
                rec.flag(FLAG_IMPUTED);
                s.imputed += 1;
            }
            None => {
                rec.flag(FLAG_UNIMPUTED);
                s.unimputed += 1;
            }
        }
    }
    s
}
