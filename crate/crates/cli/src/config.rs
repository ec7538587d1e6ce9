//! Pipeline configuration file. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use geoharvest_core::fetcher::{SearchQuery, TimeWindow, DEFAULT_URL_TEMPLATE};
use geoharvest_core::geo::{BBox, GeoPoint, LocateConfig, PointQuality};
use geoharvest_core::model::{FeatureProfile, ForestParams, GamSpec, ModelKind};
use geoharvest_core::quality::ExclusionCriteria;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::CliError;

/// Host the fixture transport pretends to be.
pub const FIXTURE_BASE_URL: &str = "http://fixture.invalid/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A generated site tree read from disk, with simulated time.
    FixtureDir(PathBuf),
    /// A live host.
    BaseUrl(Url),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub place: String,
    #[serde(default = "default_object")]
    pub object_type: String,
    #[serde(default)]
    pub sort_orders: Vec<String>,
    #[serde(default = "default_template")]
    pub url_template: String,
    #[serde(default = "default_max_pages")]
    pub max_pages: usize,
}

fn default_object() -> String {
    "wohnungen".into()
}

fn default_template() -> String {
    DEFAULT_URL_TEMPLATE.into()
}

fn default_max_pages() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Politeness {
    pub min_delay_s: f64,
    /// Local-time hours such as `22-5`.
    pub window: Option<String>,
    pub max_retries: u32,
    pub user_agent: String,
}

impl Default for Politeness {
    fn default() -> Self {
        Politeness {
            min_delay_s: 10.0,
            window: None,
            max_retries: 3,
            user_agent: format!("geoharvest/{} (research crawler)", env!("CARGO_PKG_VERSION")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeocoderConfig {
    /// Offline lookup in a gazetteer CSV.
    Stub { gazetteer: PathBuf },
    /// A Nominatim-compatible service.
    Nominatim {
        base_url: Url,
        #[serde(default = "default_interval")]
        min_interval_s: f64,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

fn default_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub lat: f64,
    pub lon: f64,
}

/// What to fit. Missing specs take the defaults for the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub gam: Option<GamSpec>,
    #[serde(default)]
    pub forest: Option<ForestParams>,
    /// Forest inputs include rooms, amenity indicators and postal codes.
    #[serde(default = "default_true")]
    pub extended: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::RandomForest,
            gam: None,
            forest: None,
            extended: true,
        }
    }
}

impl ModelSpec {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn gam_spec(&self, n_amenities: usize) -> GamSpec {
        match (&self.gam, self.kind) {
            (Some(s), _) => s.clone(),
            (None, ModelKind::GamShrinkage) => GamSpec::shrinkage_extended(n_amenities),
            (None, _) => GamSpec::simple(),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    /// Replaces `spec` when set.
    pub spec_file: Option<PathBuf>,
    /// Training rows; the rest is the holdout. Defaults to 80%.
    pub train_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub cell_m: f64,
    pub profile: FeatureProfile,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_m: 500.0,
            profile: FeatureProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target: Target,
    pub query: QueryConfig,
    /// Extraction rule set (JSON).
    pub rules: PathBuf,
    /// Answers to the viability checklist.
    pub assessment: PathBuf,
    #[serde(default)]
    pub politeness: Politeness,
    pub geocoder: GeocoderConfig,
    pub city: String,
    pub center: Center,
    pub bbox: BBox,
    #[serde(default)]
    pub embedded_fallback: bool,
    /// Postal-code centroids for distance imputation and grid postal codes.
    #[serde(default)]
    pub centroids: Option<PathBuf>,
    #[serde(default = "default_centroid_radius")]
    pub centroid_radius_m: f64,
    /// Plausibility rules (JSON); the defaults when absent.
    #[serde(default)]
    pub quality_rules: Option<PathBuf>,
    #[serde(default = "default_scrape_year")]
    pub scrape_year: i32,
    #[serde(default = "default_exclusion")]
    pub exclusion: ExclusionCriteria,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Start of simulated time for fixture targets.
    #[serde(default = "default_fixture_start")]
    pub fixture_start: DateTime<Utc>,
}

fn default_centroid_radius() -> f64 {
    1000.0
}

fn default_scrape_year() -> i32 {
    2024
}

fn default_seed() -> u64 {
    42
}

fn default_fixture_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
}

fn default_exclusion() -> ExclusionCriteria {
    ExclusionCriteria {
        require: ["rent_net_eur", "size_sqm", "year_built", "dist_center_m", "inside_bbox"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        building_level_geolocation: false,
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

impl PipelineConfig {
    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Target::FixtureDir(d) = &mut self.target {
            fix(d);
        }
        fix(&mut self.rules);
        fix(&mut self.assessment);
        match &mut self.geocoder {
            GeocoderConfig::Stub { gazetteer } => fix(gazetteer),
            GeocoderConfig::Nominatim { cache, .. } => {
                if let Some(c) = cache {
                    fix(c);
                }
            }
        }
        for p in [&mut self.centroids, &mut self.quality_rules, &mut self.model.spec_file, &mut self.out]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let mut must_exist: Vec<&Path> = vec![&self.rules, &self.assessment];
        match &self.target {
            Target::FixtureDir(d) => {
                if !d.is_dir() {
                    return bad(format!("fixture directory {} does not exist", d.display()));
                }
            }
            Target::BaseUrl(u) => {
                if !matches!(u.scheme(), "http" | "https") || u.host_str().is_none() {
                    return bad(format!("target {u} is not an http(s) URL"));
                }
            }
        }
        if let GeocoderConfig::Stub { gazetteer } = &self.geocoder {
            must_exist.push(gazetteer);
        }
        must_exist.extend(self.centroids.as_deref());
        must_exist.extend(self.quality_rules.as_deref());
        must_exist.extend(self.model.spec_file.as_deref());
        for p in must_exist {
            if !p.is_file() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        if let Some(w) = &self.politeness.window {
            TimeWindow::parse(w).map_err(|e| CliError::Validation(e.to_string()))?;
        }
        if !(self.politeness.min_delay_s.is_finite() && self.politeness.min_delay_s >= 0.0) {
            return bad(format!("min_delay_s {} must be >= 0", self.politeness.min_delay_s));
        }
        self.bbox.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        let center = self.center_point()?;
        if !self.bbox.contains(&center) {
            return bad("center lies outside the bbox".into());
        }
        if !(self.grid.cell_m.is_finite() && self.grid.cell_m > 0.0) {
            return bad(format!("grid cell size {} must be positive", self.grid.cell_m));
        }
        if self.query.place.trim().is_empty() {
            return bad("query.place is empty".into());
        }
        Ok(())
    }

    pub fn center_point(&self) -> Result<GeoPoint, CliError> {
        GeoPoint::new(self.center.lat, self.center.lon, PointQuality::Geocoded)
            .map_err(|e| CliError::Validation(format!("center: {e}")))
    }

    pub fn base_url(&self) -> Url {
        match &self.target {
            Target::FixtureDir(_) => Url::parse(FIXTURE_BASE_URL).expect("static URL"),
            Target::BaseUrl(u) => u.clone(),
        }
    }

    pub fn search_query(&self) -> SearchQuery {
        SearchQuery {
            base_url: self.base_url(),
            place: self.query.place.clone(),
            object_type: self.query.object_type.clone(),
            sort_orders: self.query.sort_orders.clone(),
            url_template: self.query.url_template.clone(),
            max_pages: self.query.max_pages,
        }
    }

    pub fn locate_config(&self) -> Result<LocateConfig, CliError> {
        Ok(LocateConfig {
            city: self.city.clone(),
            center: self.center_point()?,
            bbox: self.bbox,
            embedded_fallback: self.embedded_fallback,
        })
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        match &self.model.spec_file {
            Some(p) => ModelSpec::from_file(p),
            None => Ok(self.model.spec.clone()),
        }
    }
}
