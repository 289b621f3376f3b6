//! All subsystems opened over one data directory.
//!
//! Layout: `meta.db` (catalog, jobs, scoring, chat), `blobs/`, `series/`,
//! `jobs/` (per-job work directories) and `runners.toml`.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::blob::BlobStore;
use crate::catalog::Catalog;
use crate::chat::Chat;
use crate::clock::now_ms;
use crate::db::Db;
use crate::error::{Error, Result};
use crate::executor::{ClusterConfig, Executor, RunnerRegistry, DEFAULT_RUNNERS_TOML};
use crate::gateway::config::ServiceConfig;
use crate::scoring::Scoring;
use crate::timeseries::SeriesStore;

pub struct Platform {
    pub config: ServiceConfig,
    pub db: Arc<Db>,
    pub catalog: Arc<Catalog>,
    pub series: SeriesStore,
    pub executor: Executor,
    pub scoring: Scoring,
    pub chat: Arc<Chat>,
}

impl Platform {
    /// Open (or create) the data directory and recover from whatever state
    /// a previous process left behind.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let dir = &config.data_dir;
        fs::create_dir_all(dir).map_err(|e| Error::ConfigInvalid(format!("data_dir {}: {e}", dir.display())))?;
        let db = Arc::new(Db::open(&dir.join("meta.db"))?);
        let blobs = Arc::new(BlobStore::open(dir.join("blobs"))?);
        let catalog = Arc::new(Catalog::new(Arc::clone(&db), blobs, config.session_ttl_ms));
        let secret = match &config.admin_secret {
            Some(s) => s.clone(),
            None => {
                let mut raw = [0u8; 12];
                getrandom::fill(&mut raw).map_err(|e| Error::Storage(e.to_string()))?;
                hex::encode(raw)
            }
        };
        if catalog.bootstrap_admin(&config.admin_name, &secret)?.is_some() && config.admin_secret.is_none() {
            tracing::warn!(name = %config.admin_name, secret = %secret, "created initial admin account");
        }

        let registry_path = config.runners_path.clone().unwrap_or_else(|| dir.join("runners.toml"));
        if config.runners_path.is_none() && !registry_path.exists() {
            fs::write(&registry_path, DEFAULT_RUNNERS_TOML)?;
        }
        let registry = RunnerRegistry::load(&registry_path)?;
        let cluster = ClusterConfig {
            slots: config.slots,
            default_timeout_ms: config.default_timeout_ms,
            workdir_root: dir.join("jobs"),
        };
        let executor = Executor::new(Arc::clone(&db), Arc::clone(&catalog), cluster, registry, Some(registry_path))?;
        let interrupted = executor.recover(now_ms())?;
        if !interrupted.is_empty() {
            tracing::warn!(jobs = interrupted.len(), "marked jobs interrupted by the previous shutdown as FAILED");
        }
        let series = SeriesStore::open(&dir.join("series"))?;
        let scoring = Scoring::new(Arc::clone(&db), Arc::clone(&catalog));
        let chat = Arc::new(Chat::new(Arc::clone(&db)));
        Ok(Platform { config, db, catalog, series, executor, scoring, chat })
    }

    pub fn data_dir(&self) -> &PathBuf {
        &self.config.data_dir
    }

    /// One scheduler step plus the expiration sweep when it is due.
    pub fn maintain(&self, now: i64) -> Result<()> {
        self.executor.tick(now)?;
        let due = self.catalog.last_sweep()?.is_none_or(|last| now - last >= self.config.sweep_interval_ms);
        if due {
            let expired = self.catalog.sweep_expirations(now)?;
            tracing::debug!(expired = expired.len(), "expiration sweep");
        }
        Ok(())
    }

    /// Run [`Platform::maintain`] on a background thread until the returned
    /// handle is stopped.
    pub fn start_worker(self: &Arc<Self>) -> Worker {
        let stop = Arc::new(AtomicBool::new(false));
        let platform = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let interval = Duration::from_millis(self.config.tick_interval_ms);
        let thread = std::thread::Builder::new()
            .name("shareal-worker".into())
            .spawn(move || {
                while !flag.load(Ordering::Acquire) {
                    if let Err(e) = platform.maintain(now_ms()) {
                        tracing::error!(error = %e, "background maintenance failed");
                    }
                    std::thread::sleep(interval);
                }
            })
            .expect("spawn worker thread");
        Worker { stop, thread: Some(thread) }
    }
}

pub struct Worker {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Worker {
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.stop();
    }
}
