//! HTTP plumbing with record/replay cassettes.
//!
//! Every outbound request goes through the [`Transport`] trait. The live
//! transport talks to the network; the recording transport wraps it and
//! writes one JSON cassette per request; the replay transport answers from a
//! cassette directory with no network at all, keyed by request hash. Headers
//! (credentials) are never hashed or persisted.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::utc_now_iso8601;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("no cassette for request {request_hash} ({method} {url})")]
    CassetteMiss {
        request_hash: String,
        method: String,
        url: String,
    },
    #[error("cassette io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cassette parse: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub body: Option<String>,
    /// Sent on live calls only; excluded from hashing and cassettes.
    pub headers: Vec<(String, String)>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> HttpRequest {
        HttpRequest {
            method: "GET".to_string(),
            url: url.into(),
            body: None,
            headers: Vec::new(),
        }
    }

    pub fn post_json(url: impl Into<String>, body: impl Into<String>) -> HttpRequest {
        HttpRequest {
            method: "POST".to_string(),
            url: url.into(),
            body: Some(body.into()),
            headers: vec![("content-type".to_string(), "application/json".to_string())],
        }
    }

    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    /// When the exchange happened: cassette timestamp on replay, wall clock
    /// otherwise. Sources stamp facts with this so replays are byte-exact.
    pub fetched_at: String,
}

/// Stable identity of a request: SHA-256 over method, URL, and body.
pub fn request_hash(request: &HttpRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.method.as_bytes());
    hasher.update(b" ");
    hasher.update(request.url.as_bytes());
    hasher.update(b"\n");
    if let Some(body) = &request.body {
        hasher.update(body.as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One recorded exchange. Stored as a standalone JSON document; replay
/// matches on `request_hash`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub request_hash: String,
    pub url: String,
    pub method: String,
    pub status: u16,
    pub body: String,
    pub recorded_at: String,
}

pub trait Transport: Send + Sync {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Serializes requests beyond a configured rate. `min_interval` zero disables.
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> RateLimiter {
        RateLimiter {
            min_interval,
            last: Mutex::new(None),
        }
    }

    pub fn per_second(qps: f64) -> RateLimiter {
        let interval = if qps > 0.0 {
            Duration::from_secs_f64(1.0 / qps)
        } else {
            Duration::ZERO
        };
        RateLimiter::new(interval)
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Talks to the network through `ureq`. Non-2xx statuses are returned as
/// responses, not errors; callers decide what a status means.
pub struct LiveTransport {
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl LiveTransport {
    pub fn new(qps: f64, timeout: Duration) -> LiveTransport {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        LiveTransport {
            agent,
            limiter: RateLimiter::per_second(qps),
        }
    }
}

impl Transport for LiveTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.limiter.acquire();
        let result = match request.method.as_str() {
            "POST" => {
                let mut call = self.agent.post(&request.url);
                for (name, value) in &request.headers {
                    call = call.header(name, value);
                }
                call.send(request.body.as_deref().unwrap_or(""))
            }
            _ => {
                let mut call = self.agent.get(&request.url);
                for (name, value) in &request.headers {
                    call = call.header(name, value);
                }
                call.call()
            }
        };
        let mut response = result.map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpResponse {
            status,
            body,
            fetched_at: utc_now_iso8601(),
        })
    }
}

/// Answers requests from a directory of cassettes; never touches the network.
pub struct ReplayTransport {
    cassettes: HashMap<String, Cassette>,
}

impl ReplayTransport {
    pub fn from_dir(dir: &Path) -> Result<ReplayTransport, TransportError> {
        let mut cassettes = HashMap::new();
        if dir.exists() {
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let text = fs::read_to_string(&path)?;
                let cassette: Cassette = serde_json::from_str(&text)
                    .map_err(|e| TransportError::Malformed(format!("{}: {e}", path.display())))?;
                cassettes.insert(cassette.request_hash.clone(), cassette);
            }
        }
        Ok(ReplayTransport { cassettes })
    }

    pub fn from_cassettes(list: Vec<Cassette>) -> ReplayTransport {
        ReplayTransport {
            cassettes: list
                .into_iter()
                .map(|c| (c.request_hash.clone(), c))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cassettes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cassettes.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let hash = request_hash(request);
        match self.cassettes.get(&hash) {
            Some(cassette) => Ok(HttpResponse {
                status: cassette.status,
                body: cassette.body.clone(),
                fetched_at: cassette.recorded_at.clone(),
            }),
            None => Err(TransportError::CassetteMiss {
                request_hash: hash,
                method: request.method.clone(),
                url: request.url.clone(),
            }),
        }
    }
}

/// Wraps another transport and writes one cassette file per exchange, named
/// by request hash so a later run replays byte-identically.
pub struct RecordingTransport {
    inner: Box<dyn Transport>,
    dir: PathBuf,
}

impl RecordingTransport {
    pub fn new(inner: Box<dyn Transport>, dir: impl Into<PathBuf>) -> RecordingTransport {
        RecordingTransport {
            inner,
            dir: dir.into(),
        }
    }
}

impl Transport for RecordingTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.execute(request)?;
        let hash = request_hash(request);
        let cassette = Cassette {
            request_hash: hash.clone(),
            url: request.url.clone(),
            method: request.method.clone(),
            status: response.status,
            body: response.body.clone(),
            recorded_at: response.fetched_at.clone(),
        };
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("{hash}.json"));
        fs::write(&path, serde_json::to_string_pretty(&cassette).unwrap())?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct CannedTransport {
        status: u16,
        body: String,
    }

    impl Transport for CannedTransport {
        fn execute(&self, _request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            Ok(HttpResponse {
                status: self.status,
                body: self.body.clone(),
                fetched_at: "2025-06-30T12:00:00Z".to_string(),
            })
        }
    }

    #[test]
    fn request_hash_ignores_headers_and_covers_body() {
        let bare = HttpRequest::get("https://host/page/summary/Influenza");
        let with_auth = bare.clone().with_header("authorization", "Bearer secret");
        assert_eq!(request_hash(&bare), request_hash(&with_auth));

        let post_a = HttpRequest::post_json("https://host/chat", r#"{"q":1}"#);
        let post_b = HttpRequest::post_json("https://host/chat", r#"{"q":2}"#);
        assert_ne!(request_hash(&post_a), request_hash(&post_b));
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recorder = RecordingTransport::new(
            Box::new(CannedTransport {
                status: 200,
                body: r#"{"extract":"ok"}"#.to_string(),
            }),
            dir.path(),
        );
        let request = HttpRequest::get("https://host/page/summary/Test");
        let live = recorder.execute(&request).unwrap();

        let cassette_path = dir.path().join(format!("{}.json", request_hash(&request)));
        let cassette: Cassette =
            serde_json::from_str(&fs::read_to_string(&cassette_path).unwrap()).unwrap();
        assert_eq!(cassette.method, "GET");
        assert_eq!(cassette.status, 200);
        assert_eq!(cassette.url, "https://host/page/summary/Test");
        assert!(!cassette.recorded_at.is_empty());

        let replay = ReplayTransport::from_dir(dir.path()).unwrap();
        let replayed = replay.execute(&request).unwrap();
        assert_eq!(replayed, live);
    }

    #[test]
    fn replay_miss_is_a_distinct_error() {
        let replay = ReplayTransport::from_cassettes(vec![]);
        let err = replay
            .execute(&HttpRequest::get("https://host/missing"))
            .unwrap_err();
        assert!(matches!(err, TransportError::CassetteMiss { .. }));
    }
}
