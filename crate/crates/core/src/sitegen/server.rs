//! Fixture HTTP server for a generated site tree, with scripted failures
//! and a request log stamped by one monotonic clock.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::SitegenError;

/// Paths that answer with a programmed sequence of status codes before
/// falling through to the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureScript(pub BTreeMap<String, Vec<u16>>);

impl FailureScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, path: &str, statuses: &[u16]) -> Self {
        self.0.insert(path.to_string(), statuses.to_vec());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub seq: u64,
    /// Seconds since the server started.
    pub t_s: f64,
    pub method: String,
    pub path: String,
    pub status: u16,
    pub user_agent: Option<String>,
}

pub struct ServerHandle {
    addr: std::net::SocketAddr,
    server: Arc<tiny_http::Server>,
    log: Arc<Mutex<Vec<RequestLogEntry>>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap().clone()
    }

    /// Line-delimited JSON, one request per line.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.log() {
            serde_json::to_writer(&mut w, &e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn stop(mut self) -> Vec<RequestLogEntry> {
        self.shutdown();
        self.log()
    }

    /// Blocks until the server is stopped from another thread.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn resolve(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let p = root.join(rel);
    p.is_file().then_some(p)
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("txt") => "text/plain; charset=utf-8",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

/// Serves `dir` on `127.0.0.1:port` (0 picks a free port). Requests are
/// handled one at a time in arrival order.
pub fn serve(dir: &Path, port: u16, script: FailureScript) -> Result<ServerHandle, SitegenError> {
    if !dir.is_dir() {
        return Err(SitegenError::InvalidSpec(format!("{} is not a directory", dir.display())));
    }
    let server = tiny_http::Server::http(("127.0.0.1", port)).map_err(|e| SitegenError::Server(e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| SitegenError::Server("not an IP listener".into()))?;
    let server = Arc::new(server);
    let log = Arc::new(Mutex::new(Vec::new()));
    let root = dir.to_path_buf();
    let mut scripted: BTreeMap<String, VecDeque<u16>> = script.0.into_iter().map(|(k, v)| (k, v.into())).collect();
    let (srv, lg) = (server.clone(), log.clone());
    let thread = std::thread::spawn(move || {
        let start = Instant::now();
        for (seq, req) in srv.incoming_requests().enumerate() {
            let t_s = start.elapsed().as_secs_f64();
            let path = req.url().to_string();
            let ua = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("User-Agent"))
                .map(|h| h.value.to_string());
            let method = req.method().to_string();
            let forced = scripted.get_mut(&path).and_then(|q| q.pop_front());
            let (status, resp) = match (forced, resolve(&root, &path)) {
                (Some(code), _) => (code, tiny_http::Response::from_string(format!("scripted {code}\n"))),
                (None, Some(file)) => match std::fs::read(&file) {
                    Ok(body) => {
                        let ct = tiny_http::Header::from_bytes("Content-Type", content_type(&file)).expect("static header");
                        (200, tiny_http::Response::from_data(body).with_header(ct))
                    }
                    Err(_) => (500, tiny_http::Response::from_string("read error\n")),
                },
                (None, None) => (404, tiny_http::Response::from_string("not found\n")),
            };
            lg.lock().unwrap().push(RequestLogEntry {
                seq: seq as u64,
                t_s,
                method,
                path,
                status,
                user_agent: ua,
            });
            let _ = req.respond(resp.with_status_code(status));
        }
    });
    Ok(ServerHandle {
        addr,
        server,
        log,
        thread: Some(thread),
    })
}
