//! Process lifecycle for `tether run`.
//!
//! One tick thread owns the clock: each poll it drains the live monitor (if
//! any) into the pipeline and then advances the focus engine, so idle
//! triggers fire even when no events arrive. The HTTP server runs on a
//! tokio runtime next to it. SIGINT or SIGTERM stops both; every store
//! append is already synced, so shutdown only has to stop new writes.

use std::fs::File;
use std::io::{ErrorKind, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::Utc;
use thiserror::Error;
use tokio::sync::watch;

use tether_core::activity::x11::X11Adapter;
use tether_core::activity::LiveMonitor;
use tether_core::config::Config;
use tether_core::service::{Options, ServiceError, Tether};

use crate::api::{self, AppState};

const LOCK_FILE: &str = "tether.lock";
const INDEX_RETRY_EVERY: Duration = Duration::from_secs(60);
const COMPACT_EVERY: Duration = Duration::from_secs(24 * 3600);

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("data directory {0} is in use by another tether process")]
    Locked(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> DaemonError {
    let context = context.into();
    move |source| DaemonError::Io { context, source }
}

/// Exclusive hold on a data directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
}

pub fn lock_data_dir(dir: &Path) -> Result<DirLock, DaemonError> {
    std::fs::create_dir_all(dir).map_err(io(format!("create {}", dir.display())))?;
    let path = dir.join(LOCK_FILE);
    let file = File::create(&path).map_err(io(format!("open {}", path.display())))?;
    match file.try_lock() {
        Ok(()) => Ok(DirLock { _file: file }),
        Err(std::fs::TryLockError::WouldBlock) => Err(DaemonError::Locked(dir.to_path_buf())),
        Err(std::fs::TryLockError::Error(e)) => Err(io(format!("lock {}", path.display()))(e)),
    }
}

/// Reads the API token, creating a fresh one readable only by the owner.
pub fn load_or_create_token(path: &Path) -> Result<String, DaemonError> {
    match std::fs::read_to_string(path) {
        Ok(token) if !token.trim().is_empty() => return Ok(token.trim().to_string()),
        Ok(_) => {}
        Err(e) if e.kind() == ErrorKind::NotFound => {}
        Err(e) => return Err(io(format!("read {}", path.display()))(e)),
    }
    let token: String = rand::random::<[u8; 32]>().iter().map(|b| format!("{b:02x}")).collect();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(format!("create {}", parent.display())))?;
    }
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut options, 0o600);
    let mut file = options.open(path).map_err(io(format!("write {}", path.display())))?;
    writeln!(file, "{token}").map_err(io(format!("write {}", path.display())))?;
    Ok(token)
}

pub struct RunOptions {
    pub headless: bool,
}

/// Runs until a termination signal arrives.
pub fn run(config: Config, opts: RunOptions) -> Result<(), DaemonError> {
    let _lock = lock_data_dir(&config.data_dir)?;
    let options = Options {
        native_notifications: config.notifier.native,
        ..Options::live()
    };
    let tether = Arc::new(Tether::open(config.clone(), options)?);
    compact(&tether, &config);
    let token = load_or_create_token(&config.token_path())?;

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io("start runtime"))?;
    let (stop_tx, stop_rx) = watch::channel(false);
    let state = AppState::new(Arc::clone(&tether), token, stop_rx.clone());
    let ui_dir = config.api.ui_dir.as_ref().map(|d| config.resolve(d));
    let app = api::router(state, ui_dir.as_deref());

    let addr = SocketAddr::from(([127, 0, 0, 1], config.api.port));
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(addr))
        .map_err(io(format!("bind {addr}")))?;
    let bound = listener.local_addr().map_err(io("read bound address"))?;
    // scripts and tests read this line to find the port
    println!("listening=http://{bound}");
    let _ = std::io::stdout().flush();
    tracing::info!(%bound, headless = opts.headless, "daemon started");

    let stop = Arc::new(AtomicBool::new(false));
    let ticker = spawn_ticker(Arc::clone(&tether), &config, opts.headless, Arc::clone(&stop));

    let served = runtime.block_on(async move {
        let server = tokio::spawn(api::serve(listener, app, stop_rx));
        wait_for_signal().await;
        tracing::info!("shutting down");
        let _ = stop_tx.send(true);
        server.await
    });
    stop.store(true, Ordering::SeqCst);
    let _ = ticker.join();
    match served {
        Ok(result) => result.map_err(io("serve")),
        Err(e) => Err(io("serve")(std::io::Error::other(e))),
    }
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "SIGTERM handler unavailable");
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn compact(tether: &Tether, config: &Config) {
    match tether.store().compact(Utc::now(), config.store.retention_days) {
        Ok(bytes) => tracing::debug!(bytes, "store compacted"),
        Err(e) => tracing::warn!(error = %e, "compaction failed"),
    }
}

fn spawn_ticker(tether: Arc<Tether>, config: &Config, headless: bool, stop: Arc<AtomicBool>) -> JoinHandle<()> {
    let poll = Duration::from_millis(config.monitor.poll_interval_ms.max(50));
    let mut monitor = if headless || !config.features.monitoring {
        None
    } else {
        match X11Adapter::connect() {
            Ok(adapter) => Some(LiveMonitor::new(
                adapter,
                config.monitor.bucket_seconds,
                config.redact_titles,
            )),
            Err(e) => {
                tracing::warn!(error = %e, "no desktop session; running without activity monitoring");
                None
            }
        }
    };
    let config = config.clone();
    std::thread::spawn(move || {
        let mut since_retry = Duration::ZERO;
        let mut since_compact = Duration::ZERO;
        while !stop.load(Ordering::SeqCst) {
            let now = tether.now();
            if let Some(m) = monitor.as_mut() {
                match m.capture_sample(now) {
                    Ok(events) => {
                        for ev in events {
                            if let Err(e) = tether.ingest(&ev) {
                                tracing::warn!(error = %e, "event dropped");
                            }
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, "sample dropped"),
                }
            }
            if let Err(e) = tether.advance(now) {
                tracing::warn!(error = %e, "advance failed");
            }
            since_retry += poll;
            if since_retry >= INDEX_RETRY_EVERY {
                since_retry = Duration::ZERO;
                tether.retry_pending_index();
            }
            since_compact += poll;
            if since_compact >= COMPACT_EVERY {
                since_compact = Duration::ZERO;
                compact(&tether, &config);
            }
            std::thread::sleep(poll);
        }
    })
}
