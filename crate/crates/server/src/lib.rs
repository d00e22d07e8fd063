//! Command-line runner and HTTP session service for the rewriting engine.

pub mod cli;
pub mod service;

pub use service::{router, serve, Service, ServiceConfig, ASYNC_AFTER, DEFAULT_LISTEN};
