//! Location stage for extracted records: normalize the raw address,
//! geocode it, check the bounding box and compute the distance to the
//! center.

use serde::{Deserialize, Serialize};

use super::{distance_to_center, normalize_address, BBox, GeoPoint, GeocodeBackend, GeocodeFailure, Geocoder};
use crate::extractor::ListingRecord;

pub const STATUS_GEOCODED: &str = "geocoded";
pub const STATUS_NO_ADDRESS: &str = "no_address";
pub const FLAG_EMBEDDED_FALLBACK: &str = "coords_from_embedded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateConfig {
    pub city: String,
    pub center: GeoPoint,
    pub bbox: BBox,
    /// Use page-embedded coordinates when geocoding fails. They may be
    /// deliberately jittered, so this is off by default.
    #[serde(default)]
    pub embedded_fallback: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocateSummary {
    pub geocoded: usize,
    pub no_address: usize,
    pub empty_address: usize,
    pub no_match: usize,
    pub backend_error: usize,
    pub embedded_fallback: usize,
    pub outside_bbox: usize,
}

impl LocateSummary {
    /// Share of records with an address that geocoded successfully.
    pub fn success_rate(&self) -> f64 {
        let attempted = self.geocoded + self.empty_address + self.no_match + self.backend_error;
        if attempted == 0 {
            0.0
        } else {
            self.geocoded as f64 / attempted as f64
        }
    }
}

/// Fills the location fields of every record in place.
pub fn locate_records<B: GeocodeBackend>(
    records: &mut [ListingRecord],
    geocoder: &Geocoder<B>,
    cfg: &LocateConfig,
) -> LocateSummary {
    let mut s = LocateSummary::default();
    for rec in records.iter_mut() {
        rec.coords = None;
        rec.outside_bbox = false;
        rec.dist_center_m = None;
        let outcome = match rec.raw_address.as_deref() {
            Some(raw) => {
                let addr = normalize_address(raw, &cfg.city);
                let r = geocoder.geocode(&addr);
                rec.address = Some(addr);
                Some(r)
            }
            None => None,
        };
        match outcome {
            Some(Ok(p)) => {
                s.geocoded += 1;
                rec.geocode_status = Some(STATUS_GEOCODED.into());
                rec.coords = Some(p);
            }
            Some(Err(f)) => {
                match f {
                    GeocodeFailure::EmptyAddress => s.empty_address += 1,
                    GeocodeFailure::NoMatch => s.no_match += 1,
                    GeocodeFailure::BackendError(_) => s.backend_error += 1,
                }
                rec.geocode_status = Some(f.reason().into());
            }
            None => {
                s.no_address += 1;
                rec.geocode_status = Some(STATUS_NO_ADDRESS.into());
            }
        }
        if rec.coords.is_none() && cfg.embedded_fallback {
            if let Some(p) = rec.coords_embedded {
                s.embedded_fallback += 1;
                rec.coords = Some(p);
                rec.flag(FLAG_EMBEDDED_FALLBACK);
            }
        }
        if let Some(p) = rec.coords {
            rec.outside_bbox = !cfg.bbox.contains(&p);
            s.outside_bbox += rec.outside_bbox as usize;
            rec.dist_center_m = Some(distance_to_center(&p, &cfg.center));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Gazetteer, GazetteerEntry, PointQuality, StubBackend, ToponymKind};
    use chrono::{TimeZone, Utc};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon, PointQuality::Geocoded).unwrap()
    }

    #[test]
    fn statuses_and_distances() {
        let gaz = Gazetteer::new(vec![
            GazetteerEntry {
                toponym: "Musterweg 1, 04109 Leipzig".into(),
                kind: ToponymKind::Address,
                point: pt(51.35, 12.38),
            },
            GazetteerEntry {
                toponym: "Fernweg 2, 04109 Leipzig".into(),
                kind: ToponymKind::Address,
                point: pt(52.5, 13.4),
            },
        ])
        .unwrap();
        let geocoder = Geocoder::new(StubBackend::new(gaz));
        let cfg = LocateConfig {
            city: "Leipzig".into(),
            center: pt(51.34, 12.37),
            bbox: BBox::new(51.2, 51.5, 12.2, 12.6).unwrap(),
            embedded_fallback: false,
        };
        let at = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let mk = |id: &str, raw: Option<&str>| {
            let mut r = ListingRecord::empty(id, "", at);
            r.raw_address = raw.map(str::to_string);
            r.coords_embedded = Some(pt(51.36, 12.36).with_quality(PointQuality::Embedded));
            r
        };
        let mut recs = vec![
            mk("a", Some("04109 Leipzig, Musterweg 1")),
            mk("b", Some("Fernweg 2, 04109 Leipzig")),
            mk("c", Some("Nirgendwo 9, 04109 Leipzig")),
            mk("d", None),
        ];
        let s = locate_records(&mut recs, &geocoder, &cfg);
        assert_eq!((s.geocoded, s.no_match, s.no_address, s.outside_bbox), (2, 1, 1, 1));
        assert_eq!(recs[0].dist_center_m, Some(distance_to_center(&pt(51.35, 12.38), &cfg.center)));
        assert!(recs[1].outside_bbox);
        assert_eq!(recs[2].geocode_status.as_deref(), Some("no_match"));
        assert_eq!(recs[2].coords, None);
        assert!((s.success_rate() - 2.0 / 3.0).abs() < 1e-12);

        let cfg2 = LocateConfig {
            embedded_fallback: true,
            ..cfg
        };
        locate_records(&mut recs, &geocoder, &cfg2);
        assert!(recs[2].has_flag(FLAG_EMBEDDED_FALLBACK));
        assert_eq!(recs[2].coords.unwrap().quality, PointQuality::Embedded);
    }
}
