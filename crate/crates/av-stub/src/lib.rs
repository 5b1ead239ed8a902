//! In-process stand-in for the Alpha Vantage `/query` endpoint.
//!
//! Serves recorded JSON payloads from `fixtures/` and counts every request it
//! receives so tests can assert on cache hits.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

pub const VALID_INTERVALS: [&str; 5] = ["1min", "5min", "15min", "30min", "60min"];

const INVALID_CALL: &str = r#"{
    "Error Message": "Invalid API call. Please retry or visit the documentation (https://www.alphavantage.co/documentation/) for TIME_SERIES_INTRADAY."
}"#;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// What the stub answers for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn ok(body: String) -> Self {
        Self { status: 200, body }
    }
}

/// Routing over the recorded fixtures.
pub fn recorded_reply(params: &HashMap<String, String>) -> Reply {
    let get = |k: &str| params.get(k).map(String::as_str).unwrap_or("");
    if get("apikey").is_empty() {
        return Reply::ok(r#"{"Error Message": "the parameter apikey is invalid or missing."}"#.to_string());
    }
    let function = get("function");
    let symbol = get("symbol");
    let interval = get("interval");
    if symbol == "HTTP500" {
        return Reply {
            status: 500,
            body: "internal server error".to_string(),
        };
    }
    if matches!(function, "TIME_SERIES_INTRADAY" | "CRYPTO_INTRADAY" | "VWAP") && !VALID_INTERVALS.contains(&interval) {
        return Reply::ok(INVALID_CALL.to_string());
    }
    let file = match (function, symbol) {
        ("TIME_SERIES_DAILY", "AAPL") => "daily_aapl.json",
        ("DIGITAL_CURRENCY_DAILY", "ETH") => "daily_eth.json",
        ("TIME_SERIES_INTRADAY", "TSLA") => "intraday_tsla_5min.json",
        ("CRYPTO_INTRADAY", "ETH") => "crypto_intraday_eth_5min.json",
        ("VWAP", "TSLA") => "vwap_tsla_5min.json",
        (_, "EMPTY") => "empty_series.json",
        _ => return Reply::ok(INVALID_CALL.to_string()),
    };
    let body = std::fs::read_to_string(fixtures_dir().join(file)).expect("fixture readable");
    Reply::ok(body)
}

type Router = dyn Fn(&HashMap<String, String>) -> Reply + Send + Sync;

/// A running stub on an ephemeral localhost port. Stops on drop.
pub struct StubServer {
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<HashMap<String, String>>>>,
    base_url: String,
}

impl StubServer {
    /// Serves the recorded fixtures.
    pub fn recorded() -> Self {
        Self::with_router(recorded_reply)
    }

    pub fn with_router(router: impl Fn(&HashMap<String, String>) -> Reply + Send + Sync + 'static) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let router: Arc<Router> = Arc::new(router);
        let handle = {
            let server = server.clone();
            let hits = hits.clone();
            let log = log.clone();
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    hits.fetch_add(1, Ordering::SeqCst);
                    let url = url::Url::parse(&format!("http://stub{}", request.url())).expect("request url");
                    let params: HashMap<String, String> = url.query_pairs().into_owned().collect();
                    let reply = router(&params);
                    log.lock().expect("log poisoned").push(params);
                    let response = Response::from_string(reply.body)
                        .with_status_code(reply.status)
                        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"));
                    let _ = request.respond(response);
                }
            })
        };
        Self {
            server,
            handle: Some(handle),
            hits,
            log,
            base_url: format!("http://127.0.0.1:{port}/query"),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Query parameters of every request received, in arrival order.
    pub fn requests(&self) -> Vec<HashMap<String, String>> {
        self.log.lock().expect("log poisoned").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
