//! Geocoding through a pluggable backend, with a persistent result cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{Address, Gazetteer, GeoError, GeoPoint, PointQuality, ToponymKind};
use crate::clock::Clock;
use crate::net::Transport;

/// Search request in the shape of the Nominatim `/search` endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeocodeQuery {
    /// Free-form address string.
    pub q: String,
    pub street: Option<String>,
    pub city: Option<String>,
    pub postalcode: Option<String>,
}

impl GeocodeQuery {
    pub fn from_address(addr: &Address) -> Self {
        let street = match (&addr.street, &addr.house_number) {
            (Some(s), Some(n)) => Some(format!("{n} {s}")),
            (Some(s), None) => Some(s.clone()),
            _ => None,
        };
        GeocodeQuery {
            q: addr.canonical(),
            street,
            city: addr.city.clone(),
            postalcode: addr.postal_code.clone(),
        }
    }
}

/// One ranked search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lat: f64,
    pub lon: f64,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("geocoding backend error: {0}")]
pub struct BackendError(pub String);

pub trait GeocodeBackend: Send + Sync {
    /// Ranked candidates, best first; empty when nothing matches.
    fn search(&self, query: &GeocodeQuery) -> Result<Vec<Candidate>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum GeocodeFailure {
    #[error("address has neither city nor postal code")]
    EmptyAddress,
    #[error("no match")]
    NoMatch,
    #[error("backend error: {0}")]
    BackendError(String),
}

impl GeocodeFailure {
    pub fn reason(&self) -> &'static str {
        match self {
            GeocodeFailure::EmptyAddress => "empty_address",
            GeocodeFailure::NoMatch => "no_match",
            GeocodeFailure::BackendError(_) => "backend_error",
        }
    }
}

/// Uncached single lookup: first-ranked candidate wins.
pub fn geocode(addr: &Address, backend: &dyn GeocodeBackend) -> Result<GeoPoint, GeocodeFailure> {
    if addr.city.is_none() && addr.postal_code.is_none() {
        return Err(GeocodeFailure::EmptyAddress);
    }
    let hits = backend
        .search(&GeocodeQuery::from_address(addr))
        .map_err(|e| GeocodeFailure::BackendError(e.0))?;
    let first = hits.first().ok_or(GeocodeFailure::NoMatch)?;
    GeoPoint::new(first.lat, first.lon, PointQuality::Geocoded)
        .map_err(|e| GeocodeFailure::BackendError(format!("invalid coordinate from backend: {e}")))
}

/// Offline backend answering from a gazetteer. Full addresses resolve at
/// house-number precision, partial ones fall back to street, district or
/// city entries the way a public geocoder would.
#[derive(Debug, Clone)]
pub struct StubBackend {
    gazetteer: Arc<Gazetteer>,
}

impl StubBackend {
    pub fn new(gazetteer: Gazetteer) -> Self {
        StubBackend {
            gazetteer: Arc::new(gazetteer),
        }
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, GeoError> {
        let f = fs::File::open(path)?;
        Ok(Self::new(Gazetteer::from_csv(f)?))
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }
}

impl GeocodeBackend for StubBackend {
    fn search(&self, query: &GeocodeQuery) -> Result<Vec<Candidate>, BackendError> {
        let g = &self.gazetteer;
        let to_candidates = |entries: Vec<&super::GazetteerEntry>| -> Vec<Candidate> {
            entries
                .into_iter()
                .map(|e| Candidate {
                    lat: e.point.lat,
                    lon: e.point.lon,
                    display_name: e.toponym.clone(),
                })
                .collect()
        };

        let has_number = query
            .street
            .as_deref()
            .is_some_and(|s| s.split_whitespace().next().is_some_and(|t| t.starts_with(|c: char| c.is_ascii_digit())));

        if has_number {
            // house-number precision or nothing
            return Ok(to_candidates(
                g.lookup(&query.q).into_iter().filter(|e| e.kind == ToponymKind::Address).collect(),
            ));
        }
        if let Some(street) = &query.street {
            return Ok(to_candidates(
                g.lookup(street).into_iter().filter(|e| e.kind == ToponymKind::Street).collect(),
            ));
        }
        for name in [&query.postalcode, &query.city].into_iter().flatten() {
            let hits: Vec<_> = g
                .lookup(name)
                .into_iter()
                .filter(|e| matches!(e.kind, ToponymKind::District | ToponymKind::City))
                .collect();
            if !hits.is_empty() {
                return Ok(to_candidates(hits));
            }
        }
        Ok(Vec::new())
    }
}

/// Client for a Nominatim-compatible `/search` endpoint. Requests are spaced
/// at least `min_interval` apart.
pub struct NominatimBackend {
    base: Url,
    user_agent: String,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    min_interval: Duration,
    last_request: Mutex<Option<Duration>>,
}

#[derive(Debug, Deserialize)]
struct NominatimHit {
    #[serde(deserialize_with = "number_or_string")]
    lat: f64,
    #[serde(deserialize_with = "number_or_string")]
    lon: f64,
    #[serde(default)]
    display_name: String,
}

fn number_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match NumOrStr::deserialize(d)? {
        NumOrStr::Num(n) => Ok(n),
        NumOrStr::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

impl NominatimBackend {
    pub fn new(base: Url, user_agent: &str, transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        NominatimBackend {
            base,
            user_agent: user_agent.to_string(),
            transport,
            clock,
            min_interval: Duration::from_secs(1),
            last_request: Mutex::new(None),
        }
    }

    pub fn with_min_interval(mut self, d: Duration) -> Self {
        self.min_interval = d;
        self
    }

    pub fn request_url(&self, query: &GeocodeQuery) -> Url {
        let mut url = self.base.join("search").unwrap_or_else(|_| self.base.clone());
        {
            let mut qp = url.query_pairs_mut();
            if query.street.is_some() || query.postalcode.is_some() {
                if let Some(s) = &query.street {
                    qp.append_pair("street", s);
                }
                if let Some(c) = &query.city {
                    qp.append_pair("city", c);
                }
                if let Some(p) = &query.postalcode {
                    qp.append_pair("postalcode", p);
                }
            } else {
                qp.append_pair("q", &query.q);
            }
            qp.append_pair("format", "json");
            qp.append_pair("limit", "1");
        }
        url
    }
}

impl GeocodeBackend for NominatimBackend {
    fn search(&self, query: &GeocodeQuery) -> Result<Vec<Candidate>, BackendError> {
        let url = self.request_url(query);
        {
            let mut last = self.last_request.lock().unwrap();
            if let Some(t) = *last {
                self.clock.sleep_until(t + self.min_interval);
            }
            *last = Some(self.clock.monotonic());
        }
        let resp = self
            .transport
            .get(&url, &self.user_agent)
            .map_err(|e| BackendError(e.to_string()))?;
        if resp.status != 200 {
            return Err(BackendError(format!("HTTP {}", resp.status)));
        }
        let hits: Vec<NominatimHit> =
            serde_json::from_slice(&resp.body).map_err(|e| BackendError(format!("bad response: {e}")))?;
        Ok(hits
            .into_iter()
            .map(|h| Candidate {
                lat: h.lat,
                lon: h.lon,
                display_name: h.display_name,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
enum CacheEntry {
    Found { lat: f64, lon: f64 },
    NoMatch,
}

/// Cached geocoder. Successful lookups and definite no-matches are cached;
/// backend errors are retried and never cached.
pub struct Geocoder<B: GeocodeBackend> {
    backend: B,
    cache: RwLock<BTreeMap<String, CacheEntry>>,
    cache_path: Option<PathBuf>,
    max_retries: u32,
    write_lock: Mutex<()>,
}

impl<B: GeocodeBackend> Geocoder<B> {
    pub fn new(backend: B) -> Self {
        Geocoder {
            backend,
            cache: RwLock::new(BTreeMap::new()),
            cache_path: None,
            max_retries: 2,
            write_lock: Mutex::new(()),
        }
    }

    /// Load (or start) a cache persisted at `path`.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> Result<Self, GeoError> {
        let path = path.into();
        if path.exists() {
            let data = fs::read(&path)?;
            let map: BTreeMap<String, CacheEntry> = serde_json::from_slice(&data)?;
            *self.cache.get_mut().unwrap() = map;
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn geocode(&self, addr: &Address) -> Result<GeoPoint, GeocodeFailure> {
        if addr.city.is_none() && addr.postal_code.is_none() {
            return Err(GeocodeFailure::EmptyAddress);
        }
        let key = addr.canonical().to_lowercase();
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return match hit {
                CacheEntry::Found { lat, lon } => Ok(GeoPoint::new(*lat, *lon, PointQuality::Geocoded)
                    .map_err(|e| GeocodeFailure::BackendError(e.to_string()))?),
                CacheEntry::NoMatch => Err(GeocodeFailure::NoMatch),
            };
        }
        let mut attempt = 0;
        let result = loop {
            match geocode(addr, &self.backend) {
                Err(GeocodeFailure::BackendError(e)) if attempt < self.max_retries => {
                    log::warn!("geocoding {key:?} failed ({e}), retrying");
                    attempt += 1;
                }
                other => break other,
            }
        };
        let entry = match &result {
            Ok(p) => Some(CacheEntry::Found { lat: p.lat, lon: p.lon }),
            Err(GeocodeFailure::NoMatch) => Some(CacheEntry::NoMatch),
            Err(_) => None,
        };
        if let Some(entry) = entry {
            let _guard = self.write_lock.lock().unwrap();
            self.cache.write().unwrap().insert(key, entry);
        }
        result
    }

    /// Write the cache to its file, if one was configured.
    pub fn save(&self) -> Result<(), GeoError> {
        if let Some(path) = &self.cache_path {
            let _guard = self.write_lock.lock().unwrap();
            let data = serde_json::to_vec_pretty(&*self.cache.read().unwrap())?;
            fs::write(path, data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimulatedClock;
    use crate::geo::{normalize_address, GazetteerEntry};
    use crate::net::{HttpResponse, TransportError};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn gaz() -> Gazetteer {
        let p = |lat, lon| GeoPoint::new(lat, lon, PointQuality::Geocoded).unwrap();
        Gazetteer::new(vec![
            GazetteerEntry { toponym: "Leipzig".into(), kind: ToponymKind::City, point: p(51.3397, 12.3731) },
            GazetteerEntry {
                toponym: "Musterstr. 5, 04109 Leipzig".into(),
                kind: ToponymKind::Address,
                point: p(51.3411, 12.3702),
            },
            GazetteerEntry { toponym: "Musterstr.".into(), kind: ToponymKind::Street, point: p(51.341, 12.37) },
        ])
        .unwrap()
    }

    #[test]
    fn stub_resolves_full_address() {
        let stub = StubBackend::new(gaz());
        let a = normalize_address("04109 Leipzig, Musterstr. 5", "Leipzig");
        let p = geocode(&a, &stub).unwrap();
        assert_eq!((p.lat, p.lon), (51.3411, 12.3702));
        assert_eq!(p.quality, PointQuality::Geocoded);
    }

    #[test]
    fn corrupted_street_is_no_match() {
        let stub = StubBackend::new(gaz());
        let a = normalize_address("Mustresrt. 5, 04109 Leipzig", "Leipzig");
        assert_eq!(geocode(&a, &stub), Err(GeocodeFailure::NoMatch));
    }

    #[test]
    fn empty_address_violates_precondition() {
        let stub = StubBackend::new(gaz());
        let a = Address { street: None, house_number: None, postal_code: None, city: None, raw: String::new(), flags: vec![] };
        assert_eq!(geocode(&a, &stub), Err(GeocodeFailure::EmptyAddress));
    }

    #[test]
    fn partial_addresses_fall_back() {
        let stub = StubBackend::new(gaz());
        let street_only = normalize_address("Musterstr., 04109 Leipzig", "Leipzig");
        assert_eq!(geocode(&street_only, &stub).unwrap().lat, 51.341);
        let city_only = normalize_address("Leipzig", "Leipzig");
        assert_eq!(geocode(&city_only, &stub).unwrap().lat, 51.3397);
    }

    struct Flaky {
        fail_first: usize,
        calls: AtomicUsize,
        inner: StubBackend,
    }

    impl GeocodeBackend for Flaky {
        fn search(&self, q: &GeocodeQuery) -> Result<Vec<Candidate>, BackendError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                return Err(BackendError("503".into()));
            }
            self.inner.search(q)
        }
    }

    #[test]
    fn cache_is_transparent_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let backend = Flaky { fail_first: 1, calls: AtomicUsize::new(0), inner: StubBackend::new(gaz()) };
        let g = Geocoder::new(backend).with_cache_file(&path).unwrap();
        let a = normalize_address("Musterstr. 5, 04109 Leipzig", "Leipzig");
        let bad = normalize_address("Nirgendwo 1, 04109 Leipzig", "Leipzig");
        let first = g.geocode(&a);
        assert!(first.is_ok());
        assert_eq!(g.geocode(&a), first);
        assert_eq!(g.geocode(&bad), Err(GeocodeFailure::NoMatch));
        let calls = g.backend().calls.load(Ordering::SeqCst);
        assert_eq!(calls, 3); // one failure, one success, one no-match
        assert_eq!(g.geocode(&bad), Err(GeocodeFailure::NoMatch));
        assert_eq!(g.backend().calls.load(Ordering::SeqCst), calls);
        g.save().unwrap();

        let never = Flaky { fail_first: usize::MAX, calls: AtomicUsize::new(0), inner: StubBackend::new(gaz()) };
        let g2 = Geocoder::new(never).with_cache_file(&path).unwrap();
        assert_eq!(g2.geocode(&a), first);
        assert_eq!(g2.backend().calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn backend_errors_exhaust_retries() {
        let backend = Flaky { fail_first: usize::MAX, calls: AtomicUsize::new(0), inner: StubBackend::new(gaz()) };
        let g = Geocoder::new(backend).with_max_retries(2);
        let a = normalize_address("Musterstr. 5, 04109 Leipzig", "Leipzig");
        assert!(matches!(g.geocode(&a), Err(GeocodeFailure::BackendError(_))));
        assert_eq!(g.backend().calls.load(Ordering::SeqCst), 3);
        assert_eq!(g.cache_len(), 0);
    }

    struct Recorder {
        seen: Mutex<Vec<(String, Duration)>>,
        clock: Arc<SimulatedClock>,
        body: &'static str,
    }

    impl Transport for Recorder {
        fn get(&self, url: &Url, ua: &str) -> Result<HttpResponse, TransportError> {
            assert_eq!(ua, "geoharvest-test");
            self.seen.lock().unwrap().push((url.to_string(), self.clock.monotonic()));
            Ok(HttpResponse { status: 200, body: self.body.as_bytes().to_vec() })
        }
    }

    #[test]
    fn nominatim_wire_format_and_rate_limit() {
        use chrono::TimeZone;
        let clock = Arc::new(SimulatedClock::new(chrono::Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()));
        let rec = Arc::new(Recorder {
            seen: Mutex::new(Vec::new()),
            clock: clock.clone(),
            body: r#"[{"lat":"51.3411","lon":"12.3702","display_name":"5, Musterstr., Leipzig"},{"lat":1,"lon":2}]"#,
        });
        let nb = NominatimBackend::new(Url::parse("http://geo.local/").unwrap(), "geoharvest-test", rec.clone(), clock.clone());
        let a = normalize_address("Musterstr. 5, 04109 Leipzig", "Leipzig");
        let p = geocode(&a, &nb).unwrap();
        assert_eq!((p.lat, p.lon), (51.3411, 12.3702));
        geocode(&a, &nb).unwrap();
        let seen = rec.seen.lock().unwrap();
        assert_eq!(
            seen[0].0,
            "http://geo.local/search?street=5+Musterstr.&city=Leipzig&postalcode=04109&format=json&limit=1"
        );
        assert!(seen[1].1 - seen[0].1 >= Duration::from_secs(1));
    }
}
