#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tokio::sync::watch;

use tether::api::{self, AppState};
use tether_core::activity::{ReplaySpeed, Trace};
use tether_core::config::Config;
use tether_core::llm::{Gateway, GatewayLimits, Provider, ProviderError};
use tether_core::service::{Options, Tether};

pub const TOKEN: &str = "test-token";

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

pub fn config_in(dir: &Path) -> Config {
    Config {
        data_dir: dir.to_path_buf(),
        ..Config::default()
    }
}

pub fn trace(name: &str) -> Trace {
    Trace::load(&core_fixture(name)).unwrap()
}

/// A provider that is always unreachable.
pub struct Down;

impl Provider for Down {
    fn name(&self) -> &str {
        "down"
    }

    fn generate(&self, _: &str, _: f64, _: Duration) -> Result<String, ProviderError> {
        Err(ProviderError::Transport("connection refused".into()))
    }

    fn embed(&self, _: &[String], _: Duration) -> Result<Vec<Vec<f64>>, ProviderError> {
        Err(ProviderError::Transport("connection refused".into()))
    }
}

pub fn down_gateway() -> Arc<Gateway> {
    Arc::new(Gateway::new(
        Arc::new(Down),
        GatewayLimits {
            timeout: Duration::from_millis(50),
            max_retries: 0,
            max_in_flight: 2,
            max_batch: 8,
            backoff_base: Duration::from_millis(1),
        },
    ))
}

/// An API server on an ephemeral loopback port, stopped on drop.
pub struct Server {
    pub base: String,
    pub tether: Arc<Tether>,
    stop: watch::Sender<bool>,
    thread: Option<JoinHandle<()>>,
    pub dir: tempfile::TempDir,
}

impl Server {
    /// Virtual clock at the idle fixture's epoch.
    pub fn start() -> Server {
        Server::start_with(|c| c, None)
    }

    pub fn start_with(edit: impl FnOnce(Config) -> Config, gateway: Option<Arc<Gateway>>) -> Server {
        let dir = tempfile::tempdir().unwrap();
        let config = edit(config_in(dir.path()));
        let epoch = trace("idle_nudge.jsonl").header.created_at;
        let options = Options {
            gateway,
            ..Options::virtual_at(epoch)
        };
        let tether = Arc::new(Tether::open(config.clone(), options).unwrap());
        let (stop, stop_rx) = watch::channel(false);
        let state = AppState::new(Arc::clone(&tether), TOKEN.into(), stop_rx.clone());
        let ui = config.api.ui_dir.clone();
        let app = api::router(state, ui.as_deref());

        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                api::serve(listener, app, stop_rx).await.unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Server {
            base: format!("http://{addr}"),
            tether,
            stop,
            thread: Some(thread),
            dir,
        }
    }

    pub fn replay(&self, name: &str) {
        self.tether.replay_trace(&trace(name), ReplaySpeed::Instant).unwrap();
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get(&self, path: &str) -> ureq::Request {
        ureq::get(&self.url(path)).set("Authorization", &format!("Bearer {TOKEN}"))
    }

    pub fn post(&self, path: &str) -> ureq::Request {
        ureq::post(&self.url(path)).set("Authorization", &format!("Bearer {TOKEN}"))
    }

    pub fn put(&self, path: &str) -> ureq::Request {
        ureq::put(&self.url(path)).set("Authorization", &format!("Bearer {TOKEN}"))
    }

    /// Stops the server and waits for open connections to close.
    pub fn shutdown(&mut self) {
        let _ = self.stop.send(true);
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Status and JSON body of a response, successful or not.
pub fn json(result: Result<ureq::Response, ureq::Error>) -> (u16, serde_json::Value) {
    let response = match result {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport error: {e}"),
    };
    let status = response.status();
    (status, response.into_json().unwrap())
}
