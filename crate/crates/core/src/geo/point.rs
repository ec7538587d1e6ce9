use serde::{Deserialize, Serialize};

use super::GeoError;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointQuality {
    Embedded,
    Geocoded,
    Imputed,
    Obfuscated,
}

impl PointQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            PointQuality::Embedded => "embedded",
            PointQuality::Geocoded => "geocoded",
            PointQuality::Imputed => "imputed",
            PointQuality::Obfuscated => "obfuscated",
        }
    }
}

/// WGS84 position with a provenance flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub quality: PointQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positional_error_m: Option<f64>,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, quality: PointQuality) -> Result<Self, GeoError> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(GeoPoint {
            lat,
            lon,
            quality,
            positional_error_m: None,
        })
    }

    pub fn imputed(lat: f64, lon: f64, positional_error_m: f64) -> Result<Self, GeoError> {
        let mut p = GeoPoint::new(lat, lon, PointQuality::Imputed)?;
        p.positional_error_m = Some(positional_error_m.max(0.0));
        Ok(p)
    }

    pub fn with_quality(mut self, quality: PointQuality) -> Self {
        self.quality = quality;
        self
    }

    /// Point displaced by `east_m`/`north_m`, such that
    /// `distance_to_center(self, result)` equals `hypot(east_m, north_m)`.
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> GeoPoint {
        let lat2 = self.lat + (north_m / EARTH_RADIUS_M).to_degrees();
        let mean = ((self.lat + lat2) / 2.0).to_radians();
        let lon2 = self.lon + (east_m / (EARTH_RADIUS_M * mean.cos())).to_degrees();
        GeoPoint {
            lat: lat2,
            lon: lon2,
            quality: self.quality,
            positional_error_m: self.positional_error_m,
        }
    }
}

/// Euclidean distance in meters on an equirectangular projection at the
/// pair's mean latitude. Symmetric, and within 0.1% of the great-circle
/// distance at city scale.
pub fn distance_to_center(p: &GeoPoint, center: &GeoPoint) -> f64 {
    let dlat = (p.lat - center.lat).to_radians();
    let dlon = (p.lon - center.lon).to_radians();
    let mean = ((p.lat + center.lat) / 2.0).to_radians();
    let x = dlon * mean.cos();
    EARTH_RADIUS_M * (x * x + dlat * dlat).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Containment {
    Inside,
    Outside,
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, GeoError> {
        let b = BBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite())
            && self.lat_min <= self.lat_max
            && self.lon_min <= self.lon_max;
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidBBox(*self))
        }
    }

    /// Closed-bounds containment.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: (self.lat_min + self.lat_max) / 2.0,
            lon: (self.lon_min + self.lon_max) / 2.0,
            quality: PointQuality::Geocoded,
            positional_error_m: None,
        }
    }
}

pub fn bbox_filter(p: &GeoPoint, bbox: &BBox) -> Containment {
    if bbox.contains(p) {
        Containment::Inside
    } else {
        Containment::Outside
    }
}

/// Plane coordinates in meters around a fixed origin (equirectangular at the
/// origin's latitude). Used for grids and cell aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    origin_lat: f64,
    origin_lon: f64,
    cos_lat: f64,
}

impl LocalProjection {
    pub fn new(origin: &GeoPoint) -> Self {
        LocalProjection {
            origin_lat: origin.lat,
            origin_lon: origin.lon,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    /// (east, north) in meters.
    pub fn forward(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = EARTH_RADIUS_M * (lon - self.origin_lon).to_radians() * self.cos_lat;
        let y = EARTH_RADIUS_M * (lat - self.origin_lat).to_radians();
        (x, y)
    }

    /// (lat, lon) for plane coordinates.
    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.origin_lat + (y / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin_lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees();
        (lat, lon)
    }
}
