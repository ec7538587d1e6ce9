//! Spatial prediction grids: one fixed apartment profile evaluated at the
//! center of every square cell covering a bounding box.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{FeatureRow, FittedModel, ModelError};
use crate::geo::{distance_to_center, BBox, GeoPoint, LocalProjection, PointQuality};
use crate::quality::PostalCentroids;

/// Apartment characteristics held constant across the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub size_sqm: f64,
    pub rooms: f64,
    pub year_built: f64,
    pub amenities: Vec<String>,
}

impl Default for FeatureProfile {
    /// A 55 m² two-room apartment built in 2000 with balcony, parking and
    /// basement.
    fn default() -> Self {
        FeatureProfile {
            size_sqm: 55.0,
            rooms: 2.0,
            year_built: 2000.0,
            amenities: vec!["balcony".into(), "parking".into(), "basement".into()],
        }
    }
}

impl FeatureProfile {
    pub fn row(&self, id: &str, dist_center_m: f64, plz: Option<String>, vocab: &[String]) -> FeatureRow {
        let amenities: Vec<bool> = vocab.iter().map(|v| self.amenities.contains(v)).collect();
        FeatureRow {
            id: id.to_string(),
            target: f64::NAN,
            dist_center_m,
            size_sqm: self.size_sqm,
            year_built: self.year_built,
            nfeatures: amenities.iter().filter(|&&b| b).count() as u32,
            rooms: Some(self.rooms),
            amenities,
            plz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub center: GeoPoint,
    pub dist_center_m: f64,
    pub plz: Option<String>,
    pub pred_eur_sqm: f64,
    /// Closed ring of (lon, lat) corners.
    pub ring: [[f64; 2]; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub cell_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub profile: FeatureProfile,
    pub cells: Vec<GridCell>,
}

/// Square cells of side `cell_m`, laid out in a local plane projection from
/// the bbox's south-west corner; cells whose center falls outside the bbox
/// are dropped. With `centroids`, each cell takes the postal code of the
/// nearest centroid.
pub fn prediction_grid(
    model: &FittedModel,
    bbox: &BBox,
    cell_m: f64,
    profile: &FeatureProfile,
    center: &GeoPoint,
    centroids: Option<&PostalCentroids>,
) -> Result<PredictionGrid, ModelError> {
    bbox.validate().map_err(|e| ModelError::Validation(e.to_string()))?;
    if !(cell_m.is_finite() && cell_m > 0.0) {
        return Err(ModelError::Validation(format!("cell size {cell_m} must be positive")));
    }
    let proj = LocalProjection::new(&bbox.center());
    let (x0, y0) = proj.forward(bbox.lat_min, bbox.lon_min);
    let (x1, y1) = proj.forward(bbox.lat_max, bbox.lon_max);
    let nx = (((x1 - x0) / cell_m) - 1e-9).ceil().max(1.0) as usize;
    let ny = (((y1 - y0) / cell_m) - 1e-9).ceil().max(1.0) as usize;
    if nx.saturating_mul(ny) > 4_000_000 {
        return Err(ModelError::Validation(format!("{nx}×{ny} cells is too many")));
    }
    let mut cells = Vec::new();
    for r in 0..ny {
        for c in 0..nx {
            let (cx, cy) = (x0 + (c as f64 + 0.5) * cell_m, y0 + (r as f64 + 0.5) * cell_m);
            let (lat, lon) = proj.inverse(cx, cy);
            let Ok(p) = GeoPoint::new(lat, lon, PointQuality::Geocoded) else {
                continue;
            };
            if !bbox.contains(&p) {
                continue;
            }
            let dist = distance_to_center(&p, center);
            let plz = centroids.and_then(|cs| {
                cs.0.iter()
                    .map(|(k, q)| (k, distance_to_center(&p, q)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k.clone())
            });
            let row = profile.row(&format!("cell_{r}_{c}"), dist, plz.clone(), &model.vocab);
            let pred = model.predict(&row)?;
            if !pred.is_finite() {
                return Err(ModelError::InvalidInput(format!("non-finite prediction in cell {r},{c}")));
            }
            let corner = |dx: f64, dy: f64| {
                let (la, lo) = proj.inverse(x0 + (c as f64 + dx) * cell_m, y0 + (r as f64 + dy) * cell_m);
                [lo, la]
            };
            cells.push(GridCell {
                row: r,
                col: c,
                center: p,
                dist_center_m: dist,
                plz,
                pred_eur_sqm: pred,
                ring: [corner(0.0, 0.0), corner(1.0, 0.0), corner(1.0, 1.0), corner(0.0, 1.0), corner(0.0, 0.0)],
            });
        }
    }
    Ok(PredictionGrid {
        cell_m,
        nx,
        ny,
        profile: profile.clone(),
        cells,
    })
}

impl PredictionGrid {
    /// FeatureCollection of polygon cells with a `pred_eur_sqm` property.
    pub fn to_geojson(&self) -> serde_json::Value {
        let features: Vec<_> = self
            .cells
            .iter()
            .map(|c| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [c.ring]},
                    "properties": {
                        "row": c.row,
                        "col": c.col,
                        "dist_center_m": c.dist_center_m,
                        "plz": c.plz,
                        "pred_eur_sqm": c.pred_eur_sqm,
                    },
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }

    pub fn write_geojson<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(&mut w, &self.to_geojson())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Header `row,col,lat,lon,dist_center_m,plz,pred_eur_sqm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["row", "col", "lat", "lon", "dist_center_m", "plz", "pred_eur_sqm"])?;
        for c in &self.cells {
            w.write_record([
                c.row.to_string(),
                c.col.to_string(),
                c.center.lat.to_string(),
                c.center.lon.to_string(),
                c.dist_center_m.to_string(),
                c.plz.clone().unwrap_or_default(),
                c.pred_eur_sqm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
