//! Run configuration, report, and artifact-format types behind the `boed`
//! binary, split out so tests can parse what the tool writes.

pub mod config;
pub mod csvio;
pub mod report;
