//! Deterministic synthetic listing sites with known ground truth, and a
//! fixture server to crawl them.

mod generate;
mod render;
mod server;
mod spec;

pub use generate::{
    generate_site, index_path, Anomaly, GroundTruthManifest, ListingTruth, Site, Zone, CENTROIDS_FILE,
    GAZETTEER_FILE, MANIFEST_FILE, RULES_FILE, SITE_DIR,
};
pub use render::rules_json;
pub use server::{serve, FailureScript, RequestLogEntry, ServerHandle};
pub use spec::{AnomalyRates, HedonicSpec, JitterSpec, RobotsSpec, SyntheticSiteSpec, MISSABLE};

#[derive(Debug, thiserror::Error)]
pub enum SitegenError {
    #[error("invalid site spec: {0}")]
    InvalidSpec(String),
    #[error("server: {0}")]
    Server(String),
    #[error("geo: {0}")]
    Geo(#[from] crate::geo::GeoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
