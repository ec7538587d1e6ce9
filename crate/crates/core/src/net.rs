//! HTTP access. All socket use in the crate goes through [`HttpTransport`],
//! which honours a per-thread network permission so that offline stages can
//! be checked for accidental network access.

use std::cell::Cell;
use std::fs;
use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use url::Url;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("network access denied in this stage: {0}")]
    Denied(String),
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &Url, user_agent: &str) -> Result<HttpResponse, TransportError>;
}

thread_local! {
    static NETWORK_ALLOWED: Cell<bool> = const { Cell::new(true) };
    static ATTEMPTS: Cell<u64> = const { Cell::new(0) };
    static DENIED: Cell<u64> = const { Cell::new(0) };
}

/// Run `f` with network access forbidden on this thread.
pub fn with_network_denied<T>(f: impl FnOnce() -> T) -> T {
    let prev = NETWORK_ALLOWED.with(|c| c.replace(false));
    let out = f();
    NETWORK_ALLOWED.with(|c| c.set(prev));
    out
}

pub fn network_allowed() -> bool {
    NETWORK_ALLOWED.with(Cell::get)
}

/// Socket requests attempted on this thread, allowed or not.
pub fn request_attempts() -> u64 {
    ATTEMPTS.with(Cell::get)
}

/// Requests refused because the thread was in a network-denied section.
pub fn denied_attempts() -> u64 {
    DENIED.with(Cell::get)
}

/// Blocking HTTP/1.1 client.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).redirects(5).build(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &Url, user_agent: &str) -> Result<HttpResponse, TransportError> {
        ATTEMPTS.with(|c| c.set(c.get() + 1));
        if !network_allowed() {
            DENIED.with(|c| c.set(c.get() + 1));
            return Err(TransportError::Denied(url.to_string()));
        }
        let resp = match self.agent.get(url.as_str()).set("User-Agent", user_agent).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(TransportError::Network(t.to_string())),
        };
        let status = resp.status();
        let mut body = Vec::new();
        resp.into_reader()
            .take(64 * 1024 * 1024)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Serves URL paths from a directory, for offline runs against a generated
/// site. Missing files are 404; directories map to `index.html`.
#[derive(Debug, Clone)]
pub struct FileTransport {
    root: PathBuf,
}

impl FileTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileTransport { root: root.into() }
    }

    pub fn resolve(&self, url_path: &str) -> Option<PathBuf> {
        resolve_under(&self.root, url_path)
    }
}

impl Transport for FileTransport {
    fn get(&self, url: &Url, _user_agent: &str) -> Result<HttpResponse, TransportError> {
        let not_found = HttpResponse {
            status: 404,
            body: b"not found".to_vec(),
        };
        let Some(path) = self.resolve(url.path()) else {
            return Ok(not_found);
        };
        match fs::read(&path) {
            Ok(body) => Ok(HttpResponse { status: 200, body }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(not_found),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

/// Map a URL path onto a file below `root`, refusing `..` escapes.
pub(crate) fn resolve_under(root: &Path, url_path: &str) -> Option<PathBuf> {
    let rel = url_path.trim_start_matches('/');
    let mut out = root.to_path_buf();
    for comp in Path::new(rel).components() {
        match comp {
            Component::Normal(c) => out.push(c),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}
