use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SitegenError;
use crate::geo::{BBox, GeoPoint, PointQuality};

/// Noise-free rent per square meter as a sum of effects, plus Gaussian
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HedonicSpec {
    pub base: f64,
    /// `dist_amp · exp(−d / dist_scale_m)`.
    pub dist_amp: f64,
    pub dist_scale_m: f64,
    /// Added inside `center_radius_m`.
    pub center_step: f64,
    pub center_radius_m: f64,
    /// Width of the logistic edge of the central area; 0 makes it a hard
    /// step.
    pub center_edge_m: f64,
    /// `size_amp · exp(−(s − 20) / size_scale)`.
    pub size_amp: f64,
    pub size_scale: f64,
    /// `year_amp · cos(2π (y − 1880) / 140)`.
    pub year_amp: f64,
    pub newbuild_year: i32,
    pub newbuild_step: f64,
    /// Extra premium for new buildings inside `center_radius_m`.
    pub newbuild_center_bonus: f64,
    pub amenity_effects: BTreeMap<String, f64>,
    pub amenity_probs: BTreeMap<String, f64>,
    /// Standard deviation of the per-postal-code effects.
    pub zone_sd: f64,
    pub noise_sd: f64,
    /// Floor applied to the noisy rent per square meter.
    pub min_eur_sqm: f64,
}

impl Default for HedonicSpec {
    fn default() -> Self {
        let amen = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        HedonicSpec {
            base: 5.5,
            dist_amp: 4.0,
            dist_scale_m: 5000.0,
            center_step: 0.8,
            center_radius_m: 3000.0,
            center_edge_m: 500.0,
            size_amp: 1.8,
            size_scale: 25.0,
            year_amp: 0.8,
            newbuild_year: 2010,
            newbuild_step: 1.0,
            newbuild_center_bonus: 3.5,
            amenity_effects: amen(&[
                ("balcony", 0.6),
                ("parking", 0.2),
                ("basement", 0.0),
                ("kitchen", 1.0),
                ("senior_friendly", -0.3),
                ("renovated", 0.8),
            ]),
            amenity_probs: amen(&[
                ("balcony", 0.55),
                ("parking", 0.3),
                ("basement", 0.6),
                ("kitchen", 0.45),
                ("senior_friendly", 0.15),
                ("renovated", 0.35),
            ]),
            zone_sd: 0.2,
            noise_sd: 1.0,
            min_eur_sqm: 1.5,
        }
    }
}

impl HedonicSpec {
    pub fn vocab(&self) -> Vec<String> {
        self.amenity_probs.keys().cloned().collect()
    }

    /// Expected rent per square meter without zone effect and noise.
    pub fn mean(&self, dist_m: f64, size_sqm: f64, year: i32, amenities: &[String]) -> f64 {
        let new = year >= self.newbuild_year;
        let central = if self.center_edge_m > 0.0 {
            1.0 / (1.0 + ((dist_m - self.center_radius_m) / self.center_edge_m).exp())
        } else {
            f64::from(u8::from(dist_m < self.center_radius_m))
        };
        let mut m = self.base
            + self.dist_amp * (-dist_m / self.dist_scale_m).exp()
            + self.size_amp * (-(size_sqm - 20.0) / self.size_scale).exp()
            + self.year_amp * (std::f64::consts::TAU * (year - 1880) as f64 / 140.0).cos();
        m += self.center_step * central;
        if new {
            m += self.newbuild_step;
        }
        if new {
            m += self.newbuild_center_bonus * central;
        }
        for a in amenities {
            m += self.amenity_effects.get(a).copied().unwrap_or(0.0);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub min_m: f64,
    pub max_m: f64,
    pub pct: f64,
}

/// Anomaly rates in `[0, 1]`, each applied per listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyRates {
    /// Per field: rent_net_eur, size_sqm, rooms, year_built,
    /// running_costs_eur, energy_class.
    pub missing: BTreeMap<String, f64>,
    /// A numeric field rendered with an approximate or bounding qualifier.
    pub qualifier: f64,
    /// Postal code and town before the street.
    pub reverted_address: f64,
    /// Building qualifiers or district suffixes around the address.
    pub address_noise: f64,
    pub jitter: JitterSpec,
    /// Listing located in a neighbouring town.
    pub out_of_bbox: f64,
    /// Misspelled street that no geocoder resolves.
    pub address_corruption: f64,
}

pub const MISSABLE: &[&str] = &["rent_net_eur", "size_sqm", "rooms", "year_built", "running_costs_eur", "energy_class"];

impl Default for AnomalyRates {
    fn default() -> Self {
        AnomalyRates {
            missing: BTreeMap::new(),
            qualifier: 0.0,
            reverted_address: 0.0,
            address_noise: 0.0,
            jitter: JitterSpec {
                min_m: 150.0,
                max_m: 200.0,
                pct: 0.0,
            },
            out_of_bbox: 0.0,
            address_corruption: 0.0,
        }
    }
}

impl AnomalyRates {
    pub fn none() -> Self {
        Self::default()
    }

    /// Rates in the proportions seen on a real listing portal.
    pub fn realistic() -> Self {
        let missing = [
            ("rent_net_eur", 0.0),
            ("size_sqm", 0.0),
            ("rooms", 0.02),
            ("year_built", 0.33),
            ("running_costs_eur", 0.05),
            ("energy_class", 0.57),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
        AnomalyRates {
            missing,
            qualifier: 0.03,
            reverted_address: 0.1,
            address_noise: 0.1,
            jitter: JitterSpec {
                min_m: 150.0,
                max_m: 200.0,
                pct: 0.3,
            },
            out_of_bbox: 0.0175,
            address_corruption: 0.055,
        }
    }

    pub fn missing_rate(&self, field: &str) -> f64 {
        self.missing.get(field).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotsSpec {
    pub disallow: Vec<String>,
    pub crawl_delay_s: Option<f64>,
}

impl Default for RobotsSpec {
    fn default() -> Self {
        RobotsSpec {
            disallow: vec!["/private/".into()],
            crawl_delay_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSiteSpec {
    pub n_listings: usize,
    /// Index pages per sort order.
    pub pages: usize,
    pub seed: u64,
    pub city: String,
    /// URL slug of the city.
    pub place: String,
    pub center_lat: f64,
    pub center_lon: f64,
    pub bbox: BBox,
    pub n_zones: usize,
    /// Typical distance of listings from the center.
    pub spread_m: f64,
    /// Share of listings placed uniformly over the bbox instead.
    pub uniform_share: f64,
    pub sort_orders: Vec<String>,
    pub scrape_year: i32,
    pub hedonic: HedonicSpec,
    pub anomalies: AnomalyRates,
    pub robots: RobotsSpec,
}

impl Default for SyntheticSiteSpec {
    fn default() -> Self {
        SyntheticSiteSpec {
            n_listings: 200,
            pages: 10,
            seed: 42,
            city: "Musterstadt".into(),
            place: "musterstadt".into(),
            center_lat: 51.34,
            center_lon: 12.37,
            bbox: BBox {
                lat_min: 51.25,
                lat_max: 51.43,
                lon_min: 12.22,
                lon_max: 12.52,
            },
            n_zones: 16,
            spread_m: 3500.0,
            uniform_share: 0.0,
            sort_orders: vec!["relevance".into()],
            scrape_year: 2024,
            hedonic: HedonicSpec::default(),
            anomalies: AnomalyRates::none(),
            robots: RobotsSpec::default(),
        }
    }
}

impl SyntheticSiteSpec {
    pub fn from_json(text: &str) -> Result<Self, SitegenError> {
        let s: SyntheticSiteSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: self.center_lat,
            lon: self.center_lon,
            quality: PointQuality::Geocoded,
            positional_error_m: None,
        }
    }

    pub fn listings_per_page(&self) -> usize {
        self.n_listings.div_ceil(self.pages.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<(), SitegenError> {
        let bad = |m: String| Err(SitegenError::InvalidSpec(m));
        if self.n_listings == 0 || self.pages == 0 || self.n_zones == 0 {
            return bad("n_listings, pages and n_zones must be positive".into());
        }
        if self.n_zones > 900 {
            return bad(format!("{} zones exceed the postal code range", self.n_zones));
        }
        if self.bbox.validate().is_err() || !self.bbox.contains(&self.center()) {
            return bad("bbox must be well-ordered and contain the center".into());
        }
        if self.sort_orders.is_empty() || self.place.is_empty() || self.city.trim().is_empty() {
            return bad("sort_orders, place and city must be non-empty".into());
        }
        let a = &self.anomalies;
        let mut rates: Vec<(String, f64)> = vec![
            ("qualifier".into(), a.qualifier),
            ("reverted_address".into(), a.reverted_address),
            ("address_noise".into(), a.address_noise),
            ("jitter.pct".into(), a.jitter.pct),
            ("out_of_bbox".into(), a.out_of_bbox),
            ("address_corruption".into(), a.address_corruption),
            ("uniform_share".into(), self.uniform_share),
        ];
        for (k, v) in &a.missing {
            if !MISSABLE.contains(&k.as_str()) {
                return bad(format!("field {k:?} cannot be made missing"));
            }
            rates.push((format!("missing.{k}"), *v));
        }
        rates.extend(self.hedonic.amenity_probs.iter().map(|(k, v)| (format!("amenity {k}"), *v)));
        for (k, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("rate {k} = {v} outside [0, 1]"));
            }
        }
        if a.out_of_bbox + a.address_corruption > 1.0 {
            return bad("out_of_bbox + address_corruption exceed 1".into());
        }
        if !(0.0 <= a.jitter.min_m && a.jitter.min_m <= a.jitter.max_m) {
            return bad(format!("jitter range [{}, {}] is invalid", a.jitter.min_m, a.jitter.max_m));
        }
        let h = &self.hedonic;
        if !(h.noise_sd >= 0.0 && h.zone_sd >= 0.0 && h.dist_scale_m > 0.0 && h.size_scale > 0.0 && h.center_edge_m >= 0.0) {
            return bad("hedonic scales must be positive".into());
        }
        if h.amenity_effects.keys().any(|k| !h.amenity_probs.contains_key(k)) {
            return bad("every amenity effect needs a probability".into());
        }
        Ok(())
    }
}
