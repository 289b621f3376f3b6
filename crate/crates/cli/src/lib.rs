//! Blocking HTTP client for the platform API, shared by the `shareal`
//! binary and the end-to-end tests.

pub mod client;

pub use client::{ApiFailure, Client};
