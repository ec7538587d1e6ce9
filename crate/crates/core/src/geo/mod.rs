//! Location resolution: address normalization, gazetteer geoparsing,
//! geocoding, plausibility of coordinates and distance to the city center.

mod address;
mod gazetteer;
mod geocode;
mod locate;
mod point;

pub use address::{normalize_address, normalize_address_with, Address, AddressFlag, NoisePatterns, DEFAULT_NOISE_PATTERNS};
pub use gazetteer::{geoparse, Gazetteer, GazetteerEntry, ToponymKind, ToponymMatch};
pub use geocode::{
    geocode, BackendError, Candidate, GeocodeBackend, GeocodeFailure, GeocodeQuery, Geocoder, NominatimBackend,
    StubBackend,
};
pub use locate::{locate_records, LocateConfig, LocateSummary, FLAG_EMBEDDED_FALLBACK, STATUS_GEOCODED, STATUS_NO_ADDRESS};
pub use point::{
    bbox_filter, distance_to_center, BBox, Containment, GeoPoint, LocalProjection, PointQuality, EARTH_RADIUS_M,
};

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("bounding box {0:?} is not well-ordered")]
    InvalidBBox(BBox),
    #[error("empty toponym")]
    EmptyToponym,
    #[error("duplicate gazetteer entry {0:?}")]
    DuplicateToponym(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
