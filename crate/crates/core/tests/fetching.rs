use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{TimeZone, Utc};
use geoharvest_core::clock::{Clock, SimulatedClock};
use geoharvest_core::compliance::{parse_robots, RobotsPolicy};
use geoharvest_core::extractor::ExtractionRuleSet;
use geoharvest_core::fetcher::*;
use geoharvest_core::net::{HttpResponse, Transport, TransportError};
use url::Url;

/// In-memory site: path → body, with optional scripted status sequences.
struct Scripted {
    clock: Arc<SimulatedClock>,
    pages: HashMap<String, String>,
    script: Mutex<HashMap<String, Vec<u16>>>,
    hits: Mutex<Vec<(String, Duration)>>,
    latency: Duration,
}

impl Scripted {
    fn new(clock: Arc<SimulatedClock>) -> Self {
        Scripted {
            clock,
            pages: HashMap::new(),
            script: Mutex::new(HashMap::new()),
            hits: Mutex::new(Vec::new()),
            latency: Duration::from_millis(300),
        }
    }

    fn page(mut self, path: &str, body: &str) -> Self {
        self.pages.insert(path.into(), body.into());
        self
    }

    fn script(self, path: &str, codes: &[u16]) -> Self {
        self.script.lock().unwrap().insert(path.into(), codes.to_vec());
        self
    }

    fn hits_for(&self, path: &str) -> usize {
        self.hits.lock().unwrap().iter().filter(|(p, _)| p == path).count()
    }
}

impl Transport for Scripted {
    fn get(&self, url: &Url, _ua: &str) -> Result<HttpResponse, TransportError> {
        self.hits.lock().unwrap().push((url.path().to_string(), self.clock.monotonic()));
        self.clock.advance(self.latency);
        if let Some(codes) = self.script.lock().unwrap().get_mut(url.path()) {
            if !codes.is_empty() {
                let c = codes.remove(0);
                if c == 0 {
                    return Err(TransportError::Network("connection reset".into()));
                }
                if c != 200 {
                    return Ok(HttpResponse { status: c, body: Vec::new() });
                }
            }
        }
        match self.pages.get(url.path()) {
            Some(b) => Ok(HttpResponse { status: 200, body: b.clone().into_bytes() }),
            None => Ok(HttpResponse { status: 404, body: Vec::new() }),
        }
    }
}

fn clock() -> Arc<SimulatedClock> {
    Arc::new(SimulatedClock::new(Utc.with_ymd_and_hms(2021, 3, 1, 1, 0, 0).unwrap()))
}

fn url(p: &str) -> Url {
    Url::parse("http://fixture.local").unwrap().join(p).unwrap()
}

fn policy(text: &str) -> RobotsPolicy {
    parse_robots(text, "fixture.local")
}

type Collected = Arc<Mutex<Vec<FetchResult>>>;

fn collect() -> (Collected, impl FnMut(FetchResult) -> Result<(), String>) {
    let out = Arc::new(Mutex::new(Vec::new()));
    let o = out.clone();
    (out, move |r| {
        o.lock().unwrap().push(r);
        Ok(())
    })
}

#[test]
fn delays_hold_between_consecutive_requests() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").page("/b", "B").page("/c", "C"));
    let plan = FetchPlan::new(vec![url("/a"), url("/b"), url("/c")], 10.0, "geoharvest-test");
    let (results, mut sink) = collect();
    let log = run_plan(&plan, &policy(""), t.clone(), c.clone(), &mut sink).unwrap();
    let results = results.lock().unwrap();
    assert!(results.iter().all(|r| r.status == FetchStatus::Ok && r.body.is_some()));
    assert!(log.min_same_host_gap_s().unwrap() >= 10.0);
    let hits = t.hits.lock().unwrap();
    for w in hits.windows(2) {
        assert!(w[1].1 - w[0].1 >= Duration::from_secs(10));
    }
}

#[test]
fn disallowed_url_is_never_requested() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").page("/private/x", "secret"));
    let plan = FetchPlan::new(vec![url("/private/x"), url("/a")], 1.0, "geoharvest-test");
    let (results, mut sink) = collect();
    run_plan(&plan, &policy("User-agent: *\nDisallow: /private/"), t.clone(), c, &mut sink).unwrap();
    let results = results.lock().unwrap();
    assert_eq!(results[0].status, FetchStatus::SkippedDisallowed);
    assert_eq!(results[0].body, None);
    assert_eq!(t.hits_for("/private/x"), 0);
}

#[test]
fn ignoring_robots_is_loud() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/private/x", "secret"));
    let mut plan = FetchPlan::new(vec![url("/private/x")], 1.0, "geoharvest-test");
    plan.respect_robots = false;
    let (_, mut sink) = collect();
    let log = run_plan(&plan, &policy("User-agent: *\nDisallow: /private/"), t.clone(), c, &mut sink).unwrap();
    assert_eq!(t.hits_for("/private/x"), 1);
    assert!(log.warnings().any(|w| w.note.as_deref().unwrap().contains("--unsafe-ignore-robots")));
}

#[test]
fn transient_errors_are_retried_with_backoff() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").script("/a", &[503, 503, 200]));
    let mut plan = FetchPlan::new(vec![url("/a")], 10.0, "geoharvest-test");
    plan.max_retries = 3;
    let (results, mut sink) = collect();
    run_plan(&plan, &policy(""), t.clone(), c, &mut sink).unwrap();
    let r = &results.lock().unwrap()[0];
    assert_eq!((r.status.clone(), r.attempt), (FetchStatus::Ok, 3));
    let hits = t.hits.lock().unwrap();
    let gap = |i: usize| (hits[i + 1].1 - hits[i].1).as_secs_f64();
    // backoff 10 s then 20 s, measured from the end of the failed request
    assert!((gap(0) - 10.3).abs() < 1e-9 && (gap(1) - 20.3).abs() < 1e-9, "{} {}", gap(0), gap(1));
}

#[test]
fn retries_are_bounded_and_client_errors_terminal() {
    let c = clock();
    let t = Arc::new(
        Scripted::new(c.clone())
            .script("/down", &[503, 503, 503, 503, 503])
            .script("/flaky", &[0, 200])
            .page("/flaky", "ok"),
    );
    let mut plan = FetchPlan::new(vec![url("/down"), url("/gone"), url("/flaky")], 1.0, "geoharvest-test");
    plan.max_retries = 2;
    let (results, mut sink) = collect();
    run_plan(&plan, &policy(""), t.clone(), c, &mut sink).unwrap();
    let r = results.lock().unwrap();
    assert_eq!((r[0].status.clone(), r[0].attempt), (FetchStatus::HttpError(503), 3));
    assert_eq!((r[1].status.clone(), r[1].attempt), (FetchStatus::HttpError(404), 1));
    assert_eq!((r[2].status.clone(), r[2].attempt), (FetchStatus::Ok, 2));
}

#[test]
fn crawl_delay_raises_minimum() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").page("/b", "B"));
    let plan = FetchPlan::new(vec![url("/a"), url("/b")], 10.0, "geoharvest-test");
    let (_, mut sink) = collect();
    let log = run_plan(&plan, &policy("User-agent: *\nCrawl-delay: 15\n"), t, c, &mut sink).unwrap();
    assert!(log.min_same_host_gap_s().unwrap() >= 15.0);
}

#[test]
fn out_of_window_urls_are_skipped() {
    let c = Arc::new(SimulatedClock::new(Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap()));
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A"));
    let mut plan = FetchPlan::new(vec![url("/a")], 1.0, "geoharvest-test");
    plan.window = Some(TimeWindow::parse("22-5").unwrap());
    let (results, mut sink) = collect();
    run_plan(&plan, &policy(""), t.clone(), c, &mut sink).unwrap();
    assert_eq!(results.lock().unwrap()[0].status, FetchStatus::SkippedWindow);
    assert_eq!(t.hits_for("/a"), 0);
    assert!(TimeWindow::parse("22-5").unwrap().contains(23));
    assert!(!TimeWindow::parse("22-5").unwrap().contains(5));
    assert!(TimeWindow::parse("25-3").is_err());
}

#[test]
fn plan_validation() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()));
    let (_, mut sink) = collect();
    let foreign = FetchPlan::new(vec![Url::parse("http://elsewhere/a").unwrap()], 1.0, "ua");
    assert!(matches!(
        run_plan(&foreign, &policy(""), t.clone(), c.clone(), &mut sink),
        Err(FetchError::ForeignHost { .. })
    ));
    let bad = FetchPlan::new(vec![url("/a")], -1.0, "ua");
    assert!(matches!(run_plan(&bad, &policy(""), t.clone(), c.clone(), &mut sink), Err(FetchError::Validation(_))));
    let no_ua = FetchPlan::new(vec![url("/a")], 1.0, " ");
    assert!(matches!(run_plan(&no_ua, &policy(""), t, c, &mut sink), Err(FetchError::Validation(_))));
}

#[test]
fn sink_failure_keeps_partial_log() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").page("/b", "B"));
    let plan = FetchPlan::new(vec![url("/a"), url("/b")], 1.0, "ua");
    let mut n = 0;
    let mut sink = |_r: FetchResult| {
        n += 1;
        if n == 1 {
            Err("disk full".to_string())
        } else {
            Ok(())
        }
    };
    match run_plan(&plan, &policy(""), t.clone(), c, &mut sink) {
        Err(FetchError::Sink { message, partial }) => {
            assert_eq!(message, "disk full");
            assert_eq!(partial.results().count(), 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(t.hits_for("/b"), 0);
}

#[test]
fn outcomes_do_not_depend_on_consumer_speed() {
    let run = |slow: bool| {
        let c = clock();
        let t = Arc::new(Scripted::new(c.clone()).page("/a", "A").script("/b", &[503, 200]).page("/b", "B"));
        let plan = FetchPlan::new(vec![url("/a"), url("/b"), url("/c")], 5.0, "ua");
        let cc = c.clone();
        let mut statuses = Vec::new();
        let mut sink = |r: FetchResult| {
            if slow {
                cc.advance(Duration::from_secs(30));
            }
            statuses.push(r.status);
            Ok(())
        };
        run_plan(&plan, &policy(""), t, c.clone(), &mut sink).unwrap();
        statuses
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn robots_fetch_outcomes() {
    let c = clock();
    let t = Arc::new(
        Scripted::new(c.clone())
            .page("/robots.txt", "User-agent: *\nDisallow: /private/\n")
    );
    let mut f = Fetcher::new(t, c.clone(), "ua", 1.0);
    let p = f.fetch_robots(&url("/"));
    assert_eq!(p.host, "fixture.local");
    assert!(!geoharvest_core::compliance::is_allowed(&p, "/private/a", "ua"));

    let missing = Arc::new(Scripted::new(c.clone()));
    let p = Fetcher::new(missing, c.clone(), "ua", 1.0).fetch_robots(&url("/"));
    assert!(p.groups.is_empty());

    let down = Arc::new(Scripted::new(c.clone()).script("/robots.txt", &[500, 500, 500, 500]));
    let p = Fetcher::new(down, c, "ua", 1.0).fetch_robots(&url("/"));
    assert!(!geoharvest_core::compliance::is_allowed(&p, "/anything", "ua"));
}

fn list_page(links: &[&str], next: Option<&str>) -> String {
    let mut s = String::from("<html><body>");
    for l in links {
        s.push_str(&format!(r#"<a class="result-link" href="{l}">x</a>"#));
    }
    if let Some(n) = next {
        s.push_str(&format!(r#"<a class="next" href="{n}">next</a>"#));
    }
    s + "</body></html>"
}

fn link_rules(listing: &str) -> ExtractionRuleSet {
    ExtractionRuleSet::from_json(&format!(
        r#"{{"locale":"de","fields":[],"link_rules":{{"listing":"{listing}","pagination":"a.next"}}}}"#
    ))
    .unwrap()
}

fn query(orders: &[&str]) -> SearchQuery {
    SearchQuery {
        base_url: url("/"),
        place: "leipzig".into(),
        object_type: "wohnungen".into(),
        sort_orders: orders.iter().map(|s| s.to_string()).collect(),
        url_template: DEFAULT_URL_TEMPLATE.into(),
        max_pages: 100,
    }
}

#[test]
fn sort_orders_are_merged_without_duplicates() {
    let c = clock();
    let t = Arc::new(
        Scripted::new(c.clone())
            .page("/liste/leipzig/wohnungen/sort-price/page-1.html", &list_page(&["/e/1.html", "/e/2.html", "/e/3.html"], Some("page-2.html")))
            .page("/liste/leipzig/wohnungen/sort-price/page-2.html", &list_page(&["/e/4.html", "/e/5.html"], None))
            .page("/liste/leipzig/wohnungen/sort-date/page-1.html", &list_page(&["/e/5.html", "/e/4.html", "/e/3.html", "/e/2.html", "/e/1.html"], None)),
    );
    let mut f = Fetcher::new(t, c, "ua", 10.0);
    let e = enumerate_listings(&mut f, &query(&["price", "date"]), &link_rules("a.result-link"), &policy(""));
    let got: Vec<&str> = e.listing_urls.iter().map(|u| u.path()).collect();
    assert_eq!(got, ["/e/1.html", "/e/2.html", "/e/3.html", "/e/4.html", "/e/5.html"]);
    assert_eq!(e.pages_fetched, 3);
    assert!(e.warnings.is_empty());
    assert!(f.log().min_same_host_gap_s().unwrap() >= 10.0);
}

#[test]
fn no_matching_links_gives_empty_list_and_warning() {
    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()).page("/liste/leipzig/wohnungen/sort-price/page-1.html", &list_page(&["/e/1.html"], None)));
    let mut f = Fetcher::new(t, c, "ua", 1.0);
    let e = enumerate_listings(&mut f, &query(&["price"]), &link_rules("a.nothing"), &policy(""));
    assert!(e.listing_urls.is_empty());
    assert_eq!(e.warnings.len(), 1);

    let c = clock();
    let t = Arc::new(Scripted::new(c.clone()));
    let mut f = Fetcher::new(t, c, "ua", 1.0);
    let e = enumerate_listings(&mut f, &query(&["price"]), &link_rules("a.result-link"), &policy(""));
    assert!(e.listing_urls.is_empty() && !e.warnings.is_empty());
}
