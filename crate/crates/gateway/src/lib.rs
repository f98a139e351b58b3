//! HTTP/JSON annotation service and command-line front end.

pub mod api;
pub mod cli;
pub mod error;
pub mod reports;
pub mod server;
pub mod service;
pub mod token;
