//! Collaborative data-analytics platform.
//!
//! One process hosts every subsystem behind a single HTTP gateway:
//!
//! - [`catalog`]: users, datasets, analytics and facilities with sharing
//!   policies, content-addressed blobs and keyword search.
//! - [`timeseries`]: telemetry ingestion into an append-only segment store,
//!   range/bucket queries and CSV extraction into the catalog.
//! - [`executor`]: a simulated batch cluster running analytics against
//!   datasets as local subprocesses under a FIFO slot limit.
//! - [`scoring`]: facility metrics built from analytic scores and their
//!   weighted composite.
//! - [`chat`]: rooms with densely sequenced, durable messages and live
//!   subscriptions.
//! - [`gateway`]: the HTTP API, sessions, configuration and service startup.
//!
//! [`Platform`] wires the subsystems together over one data directory.

pub mod auth;
pub mod blob;
pub mod catalog;
pub mod chat;
pub mod clock;
pub mod db;
pub mod error;
pub mod executor;
pub mod gateway;
pub mod ids;
pub mod platform;
pub mod scoring;
pub mod timeseries;

pub use auth::{Principal, Role, User};
pub use catalog::{AccessPolicy, Analytic, Catalog, Dataset, Facility, ResourceKind, Visibility};
pub use chat::{Chat, Message, Room};
pub use error::{Error, Result};
pub use executor::{Executor, Job, JobSpec, JobState};
pub use gateway::config::ServiceConfig;
pub use ids::{AnalyticId, DatasetId, FacilityId, JobId, MetricId, RoomId, UserId};
pub use platform::Platform;
pub use scoring::{CompositeScore, MetricBinding, ScoreSample, Scoring};
pub use timeseries::{SeriesQuery, SeriesStore, TelemetryPoint};
