//! Core of a prompt-driven web application builder.
//!
//! A user describes pages in plain language. The crate composes the model
//! prompts around that text ([`prompt`]), sends them through a temperature-0
//! gateway ([`gateway`]), writes the files the model emits into the project
//! workspace ([`projector`]), snapshots every change ([`version`]) and runs
//! the generated application ([`runner`]). [`analytics`] reproduces the
//! study reports from prompt logs.

pub mod analytics;
pub mod catalog;
pub mod clock;
pub mod digest;
pub mod error;
pub mod gateway;
pub mod ignore;
pub mod model;
pub mod path;
pub mod projector;
pub mod prompt;
pub mod runner;
pub mod store;
pub mod version;

pub use error::{Error, ErrorKind, Result};
