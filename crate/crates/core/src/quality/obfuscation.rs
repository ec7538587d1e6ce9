use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::geo::{distance_to_center, GeoPoint, LocalProjection, PointQuality};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationCheck {
    pub mean_point_error_m: f64,
    /// Mean over cells of the distance between the centroid of the jittered
    /// points and the centroid of the same listings' true points.
    pub mean_cell_centroid_error_m: f64,
    /// Cells entering the centroid statistic.
    pub cells: usize,
    /// Cells left out for holding fewer than the required points.
    pub sparse_cells: usize,
    pub min_points_per_cell: usize,
}

/// Per cell: summed true xy, summed jittered xy, count.
type CellSums = ([f64; 2], [f64; 2], usize);

/// How much location jitter survives aggregation to square cells. Cell
/// membership follows the true position, i.e. a known areal unit; the jitter
/// is then independent of membership and averages out within each cell.
pub fn obfuscation_aggregation_check(
    points_true: &[GeoPoint],
    points_jittered: &[GeoPoint],
    cell_size_m: f64,
) -> Result<ObfuscationCheck, QualityError> {
    obfuscation_aggregation_check_with(points_true, points_jittered, cell_size_m, 1)
}

/// As [`obfuscation_aggregation_check`], averaging the centroid error only
/// over cells with at least `min_points` listings.
pub fn obfuscation_aggregation_check_with(
    points_true: &[GeoPoint],
    points_jittered: &[GeoPoint],
    cell_size_m: f64,
    min_points: usize,
) -> Result<ObfuscationCheck, QualityError> {
    if points_true.len() != points_jittered.len() {
        return Err(QualityError::InvalidInput(format!(
            "{} true points but {} jittered",
            points_true.len(),
            points_jittered.len()
        )));
    }
    if points_true.is_empty() {
        return Err(QualityError::EmptyCorpus);
    }
    if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
        return Err(QualityError::InvalidInput(format!("cell size {cell_size_m} must be positive")));
    }
    let n = points_true.len() as f64;
    let lat0 = points_true.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon0 = points_true.iter().map(|p| p.lon).sum::<f64>() / n;
    let origin = GeoPoint {
        lat: lat0,
        lon: lon0,
        quality: PointQuality::Geocoded,
        positional_error_m: None,
    };
    let proj = LocalProjection::new(&origin);

    let mut point_err = 0.0;
    let mut cells: BTreeMap<(i64, i64), CellSums> = BTreeMap::new();
    for (t, j) in points_true.iter().zip(points_jittered) {
        point_err += distance_to_center(j, t);
        let (tx, ty) = proj.forward(t.lat, t.lon);
        let (jx, jy) = proj.forward(j.lat, j.lon);
        let key = ((tx / cell_size_m).floor() as i64, (ty / cell_size_m).floor() as i64);
        let e = cells.entry(key).or_insert(([0.0; 2], [0.0; 2], 0));
        e.0[0] += tx;
        e.0[1] += ty;
        e.1[0] += jx;
        e.1[1] += jy;
        e.2 += 1;
    }
    let dense: Vec<_> = cells.values().filter(|c| c.2 >= min_points.max(1)).collect();
    if dense.is_empty() {
        return Err(QualityError::InvalidInput(format!("no cell holds {min_points} points")));
    }
    let mut cell_err = 0.0;
    for (st, sj, c) in &dense {
        let c = *c as f64;
        cell_err += f64::hypot(sj[0] / c - st[0] / c, sj[1] / c - st[1] / c);
    }
    Ok(ObfuscationCheck {
        mean_point_error_m: point_err / n,
        mean_cell_centroid_error_m: cell_err / dense.len() as f64,
        cells: dense.len(),
        sparse_cells: cells.len() - dense.len(),
        min_points_per_cell: dense.iter().map(|c| c.2).min().unwrap_or(0),
    })
}
