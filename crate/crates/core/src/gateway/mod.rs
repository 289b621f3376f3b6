//! HTTP API under `/api`, bearer-token sessions and service startup.
//!
//! Every error leaves the server as
//! `{"error": {"code": "<stable code>", "message": "<text>"}}` with a 4xx
//! status for request problems and 5xx for storage faults.

pub mod config;
mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequestParts};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::watch;

use crate::auth::Principal;
use crate::clock::now_ms;
use crate::error::Error;
use crate::platform::{Platform, Worker};
use config::ServiceConfig;

pub use routes::{PUBLIC_ROUTES, ROUTES};

/// Uploads are buffered in memory before they reach the blob store.
const MAX_REQUEST_BYTES: usize = 512 * 1024 * 1024;
const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    /// Flips to `true` when the service is stopping; ends open streams.
    stopping: watch::Receiver<bool>,
}

/// An error on its way to the wire.
#[derive(Debug)]
pub enum ApiError {
    Op(Error),
    UnknownRoute,
    MethodNotAllowed,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Op(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::Unauthorized | Error::BadCredentials => StatusCode::UNAUTHORIZED,
        Error::NotAuthorized => StatusCode::FORBIDDEN,
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::DuplicateName(_) | Error::DuplicateBinding | Error::AlreadyTerminal(_) | Error::ResultMissing => {
            StatusCode::CONFLICT
        }
        Error::DatasetExpired => StatusCode::GONE,
        Error::BodyTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
        Error::BadRequest(_) => StatusCode::BAD_REQUEST,
        Error::Storage(_) | Error::StorageCorrupt(_) | Error::BindFailure(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match &self {
            ApiError::Op(e) => {
                if e.is_server_fault() {
                    tracing::error!(error = %e, "request failed");
                }
                (status_of(e), e.code(), e.to_string())
            }
            ApiError::UnknownRoute => (StatusCode::NOT_FOUND, "unknown-route", "no such endpoint".to_string()),
            ApiError::MethodNotAllowed => {
                (StatusCode::METHOD_NOT_ALLOWED, "method-not-allowed", "method not allowed here".to_string())
            }
        };
        (status, Json(json!({"error": {"code": code, "message": message}}))).into_response()
    }
}

/// The authenticated caller, from `Authorization: Bearer <token>`.
pub struct Auth(pub Principal);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(Error::Unauthorized)?;
        Ok(Auth(state.platform.catalog.authorize(token)?))
    }
}

pub fn router(platform: Arc<Platform>) -> Router {
    router_with_stop(platform, watch::channel(false).1)
}

fn router_with_stop(platform: Arc<Platform>, stopping: watch::Receiver<bool>) -> Router {
    let state = AppState { platform, stopping };
    Router::new()
        .nest("/api", routes::api())
        .fallback(|| async { ApiError::UnknownRoute })
        .method_not_allowed_fallback(|| async { ApiError::MethodNotAllowed })
        .layer(DefaultBodyLimit::max(MAX_REQUEST_BYTES))
        .with_state(state)
}

/// A running service: listener, scheduler and sweeper.
pub struct Service {
    platform: Arc<Platform>,
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    worker: Worker,
}

impl Service {
    /// Open the data directory, recover, bind and start serving.
    pub async fn start(config: ServiceConfig) -> crate::Result<Service> {
        let addr = config.listen_addr()?;
        let platform = tokio::task::spawn_blocking(move || Platform::open(config))
            .await
            .map_err(|e| Error::Storage(e.to_string()))??;
        let platform = Arc::new(platform);
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::BindFailure(format!("{addr}: {e}")))?;
        let addr = listener.local_addr()?;
        let worker = platform.start_worker();
        let (stop, stopping) = watch::channel(false);
        let app = router_with_stop(Arc::clone(&platform), stopping.clone());
        let mut signal = stopping;
        let server = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = signal.wait_for(|s| *s).await;
                })
                .await
        });
        tracing::info!(%addr, "service listening");
        Ok(Service { platform, addr, stop, server, worker })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.platform
    }

    /// Serve until `signal` completes, then shut down.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> crate::Result<()> {
        signal.await;
        self.shutdown().await
    }

    /// Stop accepting connections, give in-flight requests up to five
    /// seconds, then stop the scheduler and fail whatever is still running.
    pub async fn shutdown(mut self) -> crate::Result<()> {
        let _ = self.stop.send(true);
        match tokio::time::timeout(DRAIN_TIMEOUT, &mut self.server).await {
            Ok(joined) => {
                if let Ok(Err(e)) = joined {
                    tracing::warn!(error = %e, "listener ended with an error");
                }
            }
            Err(_) => {
                tracing::warn!("in-flight requests did not finish in time");
                self.server.abort();
            }
        }
        let platform = Arc::clone(&self.platform);
        let mut worker = self.worker;
        tokio::task::spawn_blocking(move || {
            worker.stop();
            platform.executor.shutdown(now_ms()).map(|_| ())
        })
        .await
        .map_err(|e| Error::Storage(e.to_string()))?
    }
}

#[cfg(test)]
mod tests;
