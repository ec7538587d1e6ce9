use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::{render_index, render_listing, render_private, ListingView};
use super::spec::{HedonicSpec, SyntheticSiteSpec, MISSABLE};
use super::SitegenError;
use crate::extractor::{ParsedNumber, Qualifier, Unit};
use crate::geo::{distance_to_center, Gazetteer, GazetteerEntry, GeoPoint, LocalProjection, PointQuality, ToponymKind};
use crate::model::FeatureRow;
use crate::quality::PostalCentroids;

const STREET_STEMS: &[&str] = &[
    "Linden", "Eichen", "Ahorn", "Birken", "Kastanien", "Ulmen", "Buchen", "Erlen", "Pappel", "Tannen", "Rosen",
    "Tulpen", "Nelken", "Flieder", "Goethe", "Schiller", "Lessing", "Herder", "Bach", "Mozart", "Händel", "Schumann",
    "Wagner", "Brahms", "Kant", "Hegel", "Leibniz", "Fichte", "Humboldt", "Fontane",
];
const STREET_KINDS: &[&str] = &["straße", "weg", "allee", "platz", "ring", "gasse"];
const ENERGY_CLASSES: &[&str] = &["A+", "A", "B", "C", "D", "E", "F", "G", "H"];
const STREET_NOISE: &[&str] = &["(Gebäude B)", "Haus 2", "Hinterhaus", "(Zentrum)"];
const QUALIFIABLE: &[&str] = &["rent_net_eur", "size_sqm", "running_costs_eur"];
/// Building-era shares and year ranges.
const ERAS: &[(f64, i32, i32)] = &[
    (0.35, 1880, 1918),
    (0.10, 1919, 1948),
    (0.30, 1949, 1990),
    (0.12, 1991, 2009),
    (0.13, 2010, 2024),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Anomaly {
    Missing { field: String },
    Qualifier { field: String, qualifier: Qualifier },
    RevertedAddress,
    AddressNoise { token: String },
    Jitter { meters: f64 },
    OutOfBbox,
    AddressCorruption { rendered_street: String },
}

impl Anomaly {
    /// Key under which the manifest counts this anomaly.
    pub fn key(&self) -> String {
        match self {
            Anomaly::Missing { field } => format!("missing:{field}"),
            Anomaly::Qualifier { field, .. } => format!("qualifier:{field}"),
            Anomaly::RevertedAddress => "reverted_address".into(),
            Anomaly::AddressNoise { .. } => "address_noise".into(),
            Anomaly::Jitter { .. } => "jitter".into(),
            Anomaly::OutOfBbox => "out_of_bbox".into(),
            Anomaly::AddressCorruption { .. } => "address_corruption".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingTruth {
    pub id: String,
    pub path: String,
    /// Features as generated, before any value was hidden or qualified.
    pub row: FeatureRow,
    /// Rent per square meter without noise or zone effect.
    pub mean_eur_sqm: f64,
    pub zone_effect: f64,
    pub rent_net_eur: f64,
    pub running_costs_eur: f64,
    pub energy_class: String,
    pub true_point: GeoPoint,
    pub embedded_point: GeoPoint,
    pub canonical_address: String,
    pub rendered_address: String,
    pub anomalies: Vec<Anomaly>,
}

impl ListingTruth {
    pub fn has(&self, key: &str) -> bool {
        self.anomalies.iter().any(|a| a.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub plz: String,
    pub centroid: GeoPoint,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub spec: SyntheticSiteSpec,
    pub vocab: Vec<String>,
    pub zones: Vec<Zone>,
    pub listings: Vec<ListingTruth>,
    /// Index page paths per sort order, in pagination order.
    pub index_pages: BTreeMap<String, Vec<String>>,
    pub robots_txt: String,
    /// Injected anomalies by kind.
    pub counts: BTreeMap<String, usize>,
}

impl GroundTruthManifest {
    pub fn count(&self, key: &str) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn rows(&self) -> Vec<FeatureRow> {
        self.listings.iter().map(|l| l.row.clone()).collect()
    }

    pub fn listing(&self, id: &str) -> Option<&ListingTruth> {
        self.listings.iter().find(|l| l.id == id)
    }
}

/// A rendered site held in memory: relative path to file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub files: BTreeMap<String, Vec<u8>>,
    pub manifest: GroundTruthManifest,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GAZETTEER_FILE: &str = "gazetteer.csv";
pub const CENTROIDS_FILE: &str = "postal_centroids.csv";
pub const RULES_FILE: &str = "rules.json";
pub const SITE_DIR: &str = "site";

impl Site {
    /// Writes `site/` (the served tree) plus the manifest, gazetteer,
    /// postal centroids and extraction rules next to it.
    pub fn write_to(&self, dir: &Path) -> Result<(), SitegenError> {
        let root = dir.join(SITE_DIR);
        for (rel, body) in &self.files {
            let p = root.join(rel.trim_start_matches('/'));
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, body)?;
        }
        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        let mut buf = Vec::new();
        self.gazetteer()?.to_csv(&mut buf)?;
        fs::write(dir.join(GAZETTEER_FILE), buf)?;
        let mut buf = Vec::new();
        self.postal_centroids()
            .to_csv(&mut buf)
            .map_err(|e| SitegenError::InvalidSpec(e.to_string()))?;
        fs::write(dir.join(CENTROIDS_FILE), buf)?;
        fs::write(dir.join(RULES_FILE), super::render::rules_json(&self.manifest.vocab))?;
        Ok(())
    }

    /// City, one district per postal code, and every listing's true
    /// address at house-number precision.
    pub fn gazetteer(&self) -> Result<Gazetteer, SitegenError> {
        let m = &self.manifest;
        let mut entries = vec![GazetteerEntry {
            toponym: m.spec.city.clone(),
            kind: ToponymKind::City,
            point: m.spec.center(),
        }];
        entries.extend(m.zones.iter().map(|z| GazetteerEntry {
            toponym: z.plz.clone(),
            kind: ToponymKind::District,
            point: z.centroid,
        }));
        entries.extend(m.listings.iter().map(|l| GazetteerEntry {
            toponym: l.canonical_address.clone(),
            kind: ToponymKind::Address,
            point: l.true_point,
        }));
        Ok(Gazetteer::new(entries)?)
    }

    pub fn postal_centroids(&self) -> PostalCentroids {
        PostalCentroids(self.manifest.zones.iter().map(|z| (z.plz.clone(), z.centroid)).collect())
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>()
}

/// Zone centroids: one at the center, then rings of 6k zones at 2.2k km.
fn zones(spec: &SyntheticSiteSpec, rng: &mut ChaCha8Rng) -> Vec<Zone> {
    let center = spec.center();
    let normal = Normal::new(0.0, spec.hedonic.zone_sd).expect("validated sd");
    let mut out = Vec::with_capacity(spec.n_zones);
    let mut ring = 0usize;
    while out.len() < spec.n_zones {
        let slots = if ring == 0 { 1 } else { 6 * ring };
        for s in 0..slots {
            if out.len() == spec.n_zones {
                break;
            }
            let a = TAU * (s as f64 + 0.5 * (ring % 2) as f64) / slots as f64;
            let r = 2200.0 * ring as f64;
            let i = out.len();
            out.push(Zone {
                plz: format!("{:05}", 4100 + 7 * i),
                centroid: center.offset_m(r * a.cos(), r * a.sin()),
                effect: normal.sample(rng),
            });
        }
        ring += 1;
    }
    out
}

fn nearest_zone<'a>(zones: &'a [Zone], p: &GeoPoint) -> &'a Zone {
    zones
        .iter()
        .min_by(|a, b| distance_to_center(p, &a.centroid).total_cmp(&distance_to_center(p, &b.centroid)))
        .expect("at least one zone")
}

fn street_names() -> Vec<String> {
    STREET_STEMS
        .iter()
        .flat_map(|s| STREET_KINDS.iter().map(move |k| format!("{s}{k}")))
        .collect()
}

/// Every random number a listing needs, drawn in a fixed order so that the
/// base listing does not depend on the anomaly rates.
struct Draws {
    /// Offset of the true position from the center, east and north.
    east_m: f64,
    north_m: f64,
    far_angle: f64,
    far_radius: f64,
    u_location: f64,
    size: f64,
    u_era: f64,
    u_year: f64,
    u_amenities: Vec<f64>,
    u_half_room: f64,
    noise: f64,
    costs_per_sqm: f64,
    energy: usize,
    street: usize,
    u_missing: Vec<f64>,
    u_qualifier: f64,
    qualifier_field: usize,
    qualifier_kind: usize,
    u_reverted: f64,
    u_noise: f64,
    noise_token: usize,
    u_jitter: f64,
    jitter_m: f64,
    jitter_angle: f64,
    corrupt_pos: f64,
}

impl Draws {
    fn take(rng: &mut ChaCha8Rng, spec: &SyntheticSiteSpec, n_amen: usize, n_streets: usize) -> Self {
        let half = Normal::new(0.0, spec.spread_m).expect("validated spread");
        let center = spec.center();
        let proj = LocalProjection::new(&center);
        let (x0, y0) = proj.forward(spec.bbox.lat_min, spec.bbox.lon_min);
        let (x1, y1) = proj.forward(spec.bbox.lat_max, spec.bbox.lon_max);
        let anywhere = uniform(rng) < spec.uniform_share;
        let (mut east_m, mut north_m) = (0.0, 0.0);
        for _ in 0..1000 {
            (east_m, north_m) = if anywhere {
                (x0 + (x1 - x0) * uniform(rng), y0 + (y1 - y0) * uniform(rng))
            } else {
                let angle = uniform(rng) * TAU;
                let radius = half.sample(rng).abs();
                (radius * angle.cos(), radius * angle.sin())
            };
            if spec.bbox.contains(&center.offset_m(east_m, north_m)) {
                break;
            }
            (east_m, north_m) = (0.0, 0.0);
        }
        let size_dist = Normal::new(62f64.ln(), 0.35).expect("constant");
        let noise = Normal::new(0.0, spec.hedonic.noise_sd).expect("validated sd");
        Draws {
            east_m,
            north_m,
            far_angle: uniform(rng) * TAU,
            far_radius: 25_000.0 + 15_000.0 * uniform(rng),
            u_location: uniform(rng),
            size: size_dist.sample(rng).exp(),
            u_era: uniform(rng),
            u_year: uniform(rng),
            u_amenities: (0..n_amen).map(|_| uniform(rng)).collect(),
            u_half_room: uniform(rng),
            noise: noise.sample(rng),
            costs_per_sqm: 1.8 + 1.4 * uniform(rng),
            energy: rng.gen_range(0..ENERGY_CLASSES.len()),
            street: rng.gen_range(0..n_streets),
            u_missing: MISSABLE.iter().map(|_| uniform(rng)).collect(),
            u_qualifier: uniform(rng),
            qualifier_field: rng.gen_range(0..QUALIFIABLE.len()),
            qualifier_kind: rng.gen_range(0..3),
            u_reverted: uniform(rng),
            u_noise: uniform(rng),
            noise_token: rng.gen_range(0..STREET_NOISE.len()),
            u_jitter: uniform(rng),
            jitter_m: uniform(rng),
            jitter_angle: uniform(rng) * TAU,
            corrupt_pos: uniform(rng),
        }
    }
}

fn year_from(u_era: f64, u_year: f64) -> i32 {
    let mut acc = 0.0;
    for &(share, lo, hi) in ERAS {
        acc += share;
        if u_era < acc {
            return lo + ((hi - lo + 1) as f64 * u_year).floor().min((hi - lo) as f64) as i32;
        }
    }
    let (_, lo, hi) = ERAS[ERAS.len() - 1];
    lo + ((hi - lo + 1) as f64 * u_year).floor().min((hi - lo) as f64) as i32
}

/// Drops one letter of the street stem so no geocoder can resolve it.
fn corrupt_street(street: &str, pos: f64) -> String {
    let stem_len = STREET_STEMS
        .iter()
        .find(|s| street.starts_with(*s))
        .map_or(street.chars().count(), |s| s.chars().count());
    let cut = 1 + ((stem_len - 1) as f64 * pos).floor().min((stem_len - 2) as f64) as usize;
    street
        .chars()
        .enumerate()
        .filter(|(i, _)| *i != cut)
        .map(|(_, c)| c)
        .collect()
}

/// Builds the whole site from the spec. The same spec always yields the
/// same bytes.
pub fn generate_site(spec: &SyntheticSiteSpec) -> Result<Site, SitegenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h: &HedonicSpec = &spec.hedonic;
    let vocab = h.vocab();
    let zones = zones(spec, &mut rng);
    let streets = street_names();
    let mut next_number: BTreeMap<usize, u32> = BTreeMap::new();
    let center = spec.center();
    let a = &spec.anomalies;
    let mut listings = Vec::with_capacity(spec.n_listings);
    let mut views = Vec::with_capacity(spec.n_listings);

    for i in 0..spec.n_listings {
        let d = Draws::take(&mut rng, spec, vocab.len(), streets.len());
        let id = format!("w{:05}", i + 1);
        let mut anomalies = Vec::new();

        let outside = d.u_location < a.out_of_bbox;
        let corrupted = !outside && d.u_location < a.out_of_bbox + a.address_corruption;
        let true_point = if outside {
            anomalies.push(Anomaly::OutOfBbox);
            center.offset_m(d.far_radius * d.far_angle.cos(), d.far_radius * d.far_angle.sin())
        } else {
            center.offset_m(d.east_m, d.north_m)
        };
        let dist = distance_to_center(&true_point, &center);
        let zone = nearest_zone(&zones, &true_point);

        let size = round2(d.size.clamp(18.0, 180.0));
        let year = year_from(d.u_era, d.u_year).min(spec.scrape_year);
        let amenities: Vec<bool> = vocab
            .iter()
            .zip(&d.u_amenities)
            .map(|(name, u)| {
                let allowed = name != "renovated" || year < h.newbuild_year;
                allowed && *u < h.amenity_probs[name]
            })
            .collect();
        let present: Vec<String> = vocab.iter().zip(&amenities).filter(|(_, b)| **b).map(|(n, _)| n.clone()).collect();
        let mut rooms = (size / 27.0).round().clamp(1.0, 6.0);
        if d.u_half_room < 0.2 && size > 40.0 && rooms < 6.0 {
            rooms += 0.5;
        }
        let mean = h.mean(dist, size, year, &present);
        let per_sqm = (mean + zone.effect + d.noise).max(h.min_eur_sqm);
        let rent = round2(per_sqm * size);
        let costs = round2(d.costs_per_sqm * size);
        let energy = ENERGY_CLASSES[d.energy].to_string();

        let street = &streets[d.street];
        let nr = next_number.entry(d.street).or_insert(0);
        *nr += 1;
        let nr = *nr;
        let canonical = format!("{street} {nr}, {} {}", zone.plz, spec.city);
        let mut shown_street = street.clone();
        if corrupted {
            shown_street = corrupt_street(street, d.corrupt_pos);
            anomalies.push(Anomaly::AddressCorruption {
                rendered_street: shown_street.clone(),
            });
        }
        let mut street_part = format!("{shown_street} {nr}");
        if d.u_noise < a.address_noise {
            let token = STREET_NOISE[d.noise_token];
            street_part = format!("{street_part} {token}");
            anomalies.push(Anomaly::AddressNoise { token: token.into() });
        }
        let place_part = format!("{} {}", zone.plz, spec.city);
        let rendered_address = if d.u_reverted < a.reverted_address {
            anomalies.push(Anomaly::RevertedAddress);
            format!("{place_part}, {street_part}")
        } else {
            format!("{street_part}, {place_part}")
        };

        let mut embedded = true_point.with_quality(PointQuality::Embedded);
        if d.u_jitter < a.jitter.pct {
            let m = a.jitter.min_m + (a.jitter.max_m - a.jitter.min_m) * d.jitter_m;
            embedded = embedded.offset_m(m * d.jitter_angle.cos(), m * d.jitter_angle.sin());
            anomalies.push(Anomaly::Jitter { meters: m });
        }

        let mut missing = BTreeMap::new();
        for (field, u) in MISSABLE.iter().zip(&d.u_missing) {
            let hidden = *u < a.missing_rate(field);
            if hidden {
                anomalies.push(Anomaly::Missing { field: field.to_string() });
            }
            missing.insert(*field, hidden);
        }
        let mut qualifiers = BTreeMap::new();
        let qfield = QUALIFIABLE[d.qualifier_field];
        if d.u_qualifier < a.qualifier && !missing[qfield] {
            let q = [Qualifier::Approx, Qualifier::AtLeast, Qualifier::AtMost][d.qualifier_kind];
            qualifiers.insert(qfield, q);
            anomalies.push(Anomaly::Qualifier {
                field: qfield.into(),
                qualifier: q,
            });
        }
        let num = |field: &str, value: f64, unit: Unit| -> Option<ParsedNumber> {
            (!missing[field]).then(|| ParsedNumber {
                value,
                unit,
                qualifier: qualifiers.get(field).copied().unwrap_or(Qualifier::Exact),
            })
        };
        let path = format!("/expose/{id}.html");
        views.push(ListingView {
            id: id.clone(),
            city: spec.city.clone(),
            rent: num("rent_net_eur", rent, Unit::Eur),
            size: num("size_sqm", size, Unit::Sqm),
            rooms: num("rooms", rooms, Unit::Rooms),
            year: (!missing["year_built"]).then_some(year),
            running_costs: num("running_costs_eur", costs, Unit::Eur),
            energy_class: (!missing["energy_class"]).then(|| energy.clone()),
            address: rendered_address.clone(),
            amenities: present.clone(),
            embedded,
        });
        listings.push(ListingTruth {
            id: id.clone(),
            path,
            row: FeatureRow {
                id,
                target: rent / size,
                dist_center_m: dist,
                size_sqm: size,
                year_built: year as f64,
                nfeatures: present.len() as u32,
                rooms: Some(rooms),
                amenities,
                plz: Some(zone.plz.clone()),
            },
            mean_eur_sqm: mean,
            zone_effect: zone.effect,
            rent_net_eur: rent,
            running_costs_eur: costs,
            energy_class: energy,
            true_point,
            embedded_point: embedded,
            canonical_address: canonical,
            rendered_address,
            anomalies,
        });
    }

    let mut files = BTreeMap::new();
    for v in &views {
        files.insert(format!("/expose/{}.html", v.id), render_listing(v).into_bytes());
    }
    let per_page = spec.listings_per_page();
    let mut index_pages = BTreeMap::new();
    for sort in &spec.sort_orders {
        let mut order: Vec<usize> = (0..listings.len()).collect();
        match sort.as_str() {
            "price" => order.sort_by(|&x, &y| listings[x].rent_net_eur.total_cmp(&listings[y].rent_net_eur)),
            "newest" => order.reverse(),
            _ => {}
        }
        let chunks: Vec<&[usize]> = order.chunks(per_page).collect();
        let mut paths = Vec::new();
        for (p, chunk) in chunks.iter().enumerate() {
            let path = index_path(&spec.place, sort, p + 1);
            let next = (p + 1 < chunks.len()).then(|| index_path(&spec.place, sort, p + 2));
            let links: Vec<String> = chunk.iter().map(|&k| listings[k].path.clone()).collect();
            let featured = (p == 0).then(|| "/private/featured.html".to_string());
            files.insert(
                path.clone(),
                render_index(&spec.city, p + 1, &links, featured.as_deref(), next.as_deref()).into_bytes(),
            );
            paths.push(path);
        }
        index_pages.insert(sort.clone(), paths);
    }
    files.insert("/private/featured.html".into(), render_private().into_bytes());
    let robots_txt = robots_body(spec);
    files.insert("/robots.txt".into(), robots_txt.clone().into_bytes());

    let mut counts = BTreeMap::new();
    for l in &listings {
        for an in &l.anomalies {
            *counts.entry(an.key()).or_insert(0) += 1;
        }
    }
    Ok(Site {
        files,
        manifest: GroundTruthManifest {
            spec: spec.clone(),
            vocab,
            zones,
            listings,
            index_pages,
            robots_txt,
            counts,
        },
    })
}

pub fn index_path(place: &str, sort: &str, page: usize) -> String {
    format!("/liste/{place}/wohnungen/sort-{sort}/page-{page}.html")
}

fn robots_body(spec: &SyntheticSiteSpec) -> String {
    let mut s = String::from("User-agent: *\n");
    for d in &spec.robots.disallow {
        s.push_str(&format!("Disallow: {d}\n"));
    }
    if let Some(c) = spec.robots.crawl_delay_s {
        s.push_str(&format!("Crawl-delay: {c}\n"));
    }
    s
}
