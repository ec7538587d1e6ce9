//! Polite page retrieval: one serialized queue per host, a minimum delay
//! between requests, optional time-of-day window, bounded retries with
//! exponential backoff and a complete audit trail.

mod listing;
mod session;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

pub use listing::{enumerate_listings, Enumeration, SearchQuery, DEFAULT_URL_TEMPLATE};
pub use session::{run_plan, Fetcher, ResultSink};

/// Local-time hours `[start_hour, end_hour)`; wraps past midnight when
/// `start_hour > end_hour`. Equal hours mean the whole day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl TimeWindow {
    pub fn contains(&self, hour: u32) -> bool {
        match self.start_hour.cmp(&self.end_hour) {
            std::cmp::Ordering::Less => (self.start_hour..self.end_hour).contains(&hour),
            std::cmp::Ordering::Greater => hour >= self.start_hour || hour < self.end_hour,
            std::cmp::Ordering::Equal => true,
        }
    }

    /// Parse `22-5` style ranges.
    pub fn parse(s: &str) -> Result<Self, FetchError> {
        let bad = || FetchError::Validation(format!("window {s:?} is not START-END with hours in 0..24"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let w = TimeWindow {
            start_hour: a.trim().parse().map_err(|_| bad())?,
            end_hour: b.trim().parse().map_err(|_| bad())?,
        };
        if w.start_hour >= 24 || w.end_hour >= 24 {
            return Err(bad());
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPlan {
    pub seed_urls: Vec<Url>,
    pub min_delay_s: f64,
    #[serde(default)]
    pub window: Option<TimeWindow>,
    pub max_retries: u32,
    pub user_agent: String,
    #[serde(default = "default_true")]
    pub respect_robots: bool,
}

fn default_true() -> bool {
    true
}

impl FetchPlan {
    pub fn new(seed_urls: Vec<Url>, min_delay_s: f64, user_agent: &str) -> Self {
        FetchPlan {
            seed_urls,
            min_delay_s,
            window: None,
            max_retries: 3,
            user_agent: user_agent.to_string(),
            respect_robots: true,
        }
    }

    pub fn validate(&self) -> Result<(), FetchError> {
        if !(self.min_delay_s.is_finite() && self.min_delay_s >= 0.0) {
            return Err(FetchError::Validation(format!("min_delay_s must be >= 0, got {}", self.min_delay_s)));
        }
        if self.user_agent.trim().is_empty() {
            return Err(FetchError::Validation("user_agent is empty".into()));
        }
        if let Some(w) = self.window {
            if w.start_hour >= 24 || w.end_hour >= 24 {
                return Err(FetchError::Validation(format!("window hours out of range: {w:?}")));
            }
        }
        if self.max_retries > 10 {
            return Err(FetchError::Validation(format!("max_retries {} is above 10", self.max_retries)));
        }
        for u in &self.seed_urls {
            if !matches!(u.scheme(), "http" | "https") || u.host_str().is_none() {
                return Err(FetchError::Validation(format!("not an http(s) URL: {u}")));
            }
        }
        Ok(())
    }
}

/// `host[:port]`, the key for per-host queues and robots policies.
pub fn authority(url: &Url) -> String {
    match (url.host_str(), url.port()) {
        (Some(h), Some(p)) => format!("{h}:{p}"),
        (Some(h), None) => h.to_string(),
        _ => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "code", rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    HttpError(u16),
    NetworkError,
    SkippedDisallowed,
    SkippedWindow,
}

impl FetchStatus {
    pub fn label(&self) -> String {
        match self {
            FetchStatus::Ok => "ok".into(),
            FetchStatus::HttpError(c) => format!("http_error({c})"),
            FetchStatus::NetworkError => "network_error".into(),
            FetchStatus::SkippedDisallowed => "skipped_disallowed".into(),
            FetchStatus::SkippedWindow => "skipped_window".into(),
        }
    }
}

/// Terminal outcome for one URL. `body` is present iff the status is ok.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchResult {
    pub url: Url,
    pub status: FetchStatus,
    pub body: Option<Vec<u8>>,
    pub fetched_at: DateTime<Utc>,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    Request,
    Response,
    Result,
    Warning,
}

/// One line of the append-only audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    /// Seconds on the session's monotonic clock.
    pub t_s: f64,
    pub event: AuditEvent,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchLog {
    pub audit: Vec<AuditRecord>,
}

impl FetchLog {
    pub fn requests(&self) -> impl Iterator<Item = &AuditRecord> {
        self.audit.iter().filter(|r| r.event == AuditEvent::Request)
    }

    pub fn results(&self) -> impl Iterator<Item = &AuditRecord> {
        self.audit.iter().filter(|r| r.event == AuditEvent::Result)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &AuditRecord> {
        self.audit.iter().filter(|r| r.event == AuditEvent::Warning)
    }

    /// Smallest gap in seconds between consecutive requests to one host.
    pub fn min_same_host_gap_s(&self) -> Option<f64> {
        let mut last: std::collections::HashMap<String, f64> = Default::default();
        let mut min: Option<f64> = None;
        for r in self.requests() {
            let host = Url::parse(&r.url).map(|u| authority(&u)).unwrap_or_default();
            if let Some(prev) = last.insert(host, r.t_s) {
                let gap = r.t_s - prev;
                min = Some(min.map_or(gap, |m| m.min(gap)));
            }
        }
        min
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.audit {
            s.push_str(&serde_json::to_string(r).expect("audit records serialize"));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("invalid fetch plan: {0}")]
    Validation(String),
    #[error("URL {url} is not on host {host} covered by the robots policy")]
    ForeignHost { url: String, host: String },
    #[error("result sink failed: {message}")]
    Sink { message: String, partial: FetchLog },
}
