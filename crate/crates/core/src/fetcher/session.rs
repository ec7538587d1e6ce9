use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use url::Url;

use super::{authority, AuditEvent, AuditRecord, FetchError, FetchLog, FetchPlan, FetchResult, FetchStatus, TimeWindow};
use crate::clock::Clock;
use crate::compliance::{is_allowed, RobotsPolicy};
use crate::net::Transport;

/// Consumer of terminal fetch results, called in completion order.
pub trait ResultSink {
    fn accept(&mut self, result: FetchResult) -> Result<(), String>;
}

impl<F: FnMut(FetchResult) -> Result<(), String>> ResultSink for F {
    fn accept(&mut self, result: FetchResult) -> Result<(), String> {
        self(result)
    }
}

/// A crawl session. Tracks when each host last finished serving a request,
/// so the delay holds across plans, listing enumeration and robots fetches.
pub struct Fetcher {
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    user_agent: String,
    min_delay: Duration,
    max_retries: u32,
    window: Option<TimeWindow>,
    last_done: HashMap<String, Duration>,
    log: FetchLog,
}

fn transient(status: &FetchStatus) -> bool {
    match status {
        FetchStatus::HttpError(c) => (500..600).contains(c),
        FetchStatus::NetworkError => true,
        _ => false,
    }
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>, clock: Arc<dyn Clock>, user_agent: &str, min_delay_s: f64) -> Self {
        Fetcher {
            transport,
            clock,
            user_agent: user_agent.to_string(),
            min_delay: Duration::from_secs_f64(min_delay_s.max(0.0)),
            max_retries: 3,
            window: None,
            last_done: HashMap::new(),
            log: FetchLog::default(),
        }
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_window(mut self, window: Option<TimeWindow>) -> Self {
        self.window = window;
        self
    }

    pub fn user_agent(&self) -> &str {
        &self.user_agent
    }

    pub fn log(&self) -> &FetchLog {
        &self.log
    }

    pub fn into_log(self) -> FetchLog {
        self.log
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Effective delay: the configured minimum, raised to the robots
    /// crawl-delay when one applies to our agent.
    pub fn apply_policy(&mut self, policy: &RobotsPolicy) {
        if let Some(d) = policy.crawl_delay_for(&self.user_agent) {
            let d = Duration::from_secs_f64(d);
            if d > self.min_delay {
                self.min_delay = d;
            }
        }
    }

    pub fn min_delay(&self) -> Duration {
        self.min_delay
    }

    pub fn record(&mut self, event: AuditEvent, url: &str, status: Option<String>, attempt: Option<u32>, note: Option<String>) {
        let rec = AuditRecord {
            seq: self.log.audit.len() as u64,
            at: self.clock.wall(),
            t_s: self.clock.monotonic().as_secs_f64(),
            event,
            url: url.to_string(),
            status,
            attempt,
            note,
        };
        log::debug!("{:?} {} {:?}", rec.event, rec.url, rec.status);
        self.log.audit.push(rec);
    }

    pub fn warn(&mut self, url: &str, note: impl Into<String>) {
        let note = note.into();
        log::warn!("{note}");
        self.record(AuditEvent::Warning, url, None, None, Some(note));
    }

    /// One request after waiting out the host's delay.
    fn request(&mut self, url: &Url, attempt: u32, extra_wait: Duration) -> (FetchStatus, Option<Vec<u8>>) {
        let host = authority(url);
        if let Some(&done) = self.last_done.get(&host) {
            self.clock.sleep_until(done + self.min_delay.max(extra_wait));
        }
        self.record(AuditEvent::Request, url.as_str(), None, Some(attempt), None);
        let outcome = self.transport.get(url, &self.user_agent);
        self.last_done.insert(host, self.clock.monotonic());
        let (status, body, note) = match outcome {
            Ok(r) if (200..300).contains(&r.status) => (FetchStatus::Ok, Some(r.body), None),
            Ok(r) => (FetchStatus::HttpError(r.status), None, None),
            Err(e) => (FetchStatus::NetworkError, None, Some(e.to_string())),
        };
        self.record(AuditEvent::Response, url.as_str(), Some(status.label()), Some(attempt), note);
        (status, body)
    }

    /// Fetch with retries. Transient failures back off by
    /// `min_delay * 2^(k-1)` before retry `k`.
    pub fn fetch(&mut self, url: &Url) -> FetchResult {
        if let Some(w) = self.window {
            let hour = self.clock.local_hour();
            if !w.contains(hour) {
                return self.finish(url, FetchStatus::SkippedWindow, None, 0);
            }
        }
        let mut attempt = 1;
        let mut wait = Duration::ZERO;
        loop {
            let (status, body) = self.request(url, attempt, wait);
            if !transient(&status) || attempt > self.max_retries {
                return self.finish(url, status, body, attempt);
            }
            wait = self.min_delay * 2u32.saturating_pow(attempt - 1);
            attempt += 1;
        }
    }

    fn finish(&mut self, url: &Url, status: FetchStatus, body: Option<Vec<u8>>, attempt: u32) -> FetchResult {
        self.record(AuditEvent::Result, url.as_str(), Some(status.label()), Some(attempt), None);
        FetchResult {
            url: url.clone(),
            status,
            body,
            fetched_at: self.clock.wall(),
            attempt,
        }
    }

    /// Retrieve and parse `/robots.txt` for the host of `base`. A missing
    /// file allows everything; an unreachable one (5xx or network error)
    /// disallows everything.
    pub fn fetch_robots(&mut self, base: &Url) -> RobotsPolicy {
        let host = authority(base);
        let mut url = base.clone();
        url.set_path("/robots.txt");
        url.set_query(None);
        url.set_fragment(None);
        let r = self.fetch(&url);
        let at = r.fetched_at;
        match r.status {
            FetchStatus::Ok => RobotsPolicy::parse(&String::from_utf8_lossy(r.body.as_deref().unwrap_or_default()), &host, at),
            FetchStatus::HttpError(c) if (400..500).contains(&c) => {
                let mut p = RobotsPolicy::permissive(&host);
                p.fetched_at = at;
                p
            }
            other => {
                self.warn(url.as_str(), format!("robots.txt unreachable ({}); treating the host as fully disallowed", other.label()));
                let mut p = RobotsPolicy::parse("User-agent: *\nDisallow: /\n", &host, at);
                p.warnings.push("robots.txt unreachable".into());
                p
            }
        }
    }

    /// Run a plan against one host. Every seed URL yields exactly one
    /// terminal result, delivered to `sink`. A failing sink stops the run and
    /// the log so far is returned inside the error.
    pub fn run_plan(&mut self, plan: &FetchPlan, policy: &RobotsPolicy, sink: &mut dyn ResultSink) -> Result<(), FetchError> {
        plan.validate()?;
        for u in &plan.seed_urls {
            if authority(u) != policy.host {
                return Err(FetchError::ForeignHost {
                    url: u.to_string(),
                    host: policy.host.clone(),
                });
            }
        }
        self.user_agent = plan.user_agent.clone();
        self.max_retries = plan.max_retries;
        self.window = plan.window;
        let configured = Duration::from_secs_f64(plan.min_delay_s);
        if configured > self.min_delay {
            self.min_delay = configured;
        }
        self.apply_policy(policy);
        if !plan.respect_robots {
            self.warn(
                &policy.host,
                "WARNING: robots.txt enforcement disabled (--unsafe-ignore-robots); disallowed paths will be requested",
            );
        }
        for url in &plan.seed_urls {
            let result = if plan.respect_robots && !is_allowed(policy, url_path(url).as_str(), &plan.user_agent) {
                self.finish(url, FetchStatus::SkippedDisallowed, None, 0)
            } else {
                self.fetch(url)
            };
            if let Err(message) = sink.accept(result) {
                self.warn(url.as_str(), format!("sink failed: {message}"));
                return Err(FetchError::Sink {
                    message,
                    partial: self.log.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Path plus query, the string robots rules are matched against.
pub(crate) fn url_path(url: &Url) -> String {
    match url.query() {
        Some(q) => format!("{}?{q}", url.path()),
        None => url.path().to_string(),
    }
}

/// Run `plan` in a fresh session and return its log.
pub fn run_plan(
    plan: &FetchPlan,
    policy: &RobotsPolicy,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    sink: &mut dyn ResultSink,
) -> Result<FetchLog, FetchError> {
    let mut f = Fetcher::new(transport, clock, &plan.user_agent, plan.min_delay_s);
    f.run_plan(plan, policy, sink)?;
    Ok(f.into_log())
}

