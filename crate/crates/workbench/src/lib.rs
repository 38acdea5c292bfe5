//! Command-line tool, HTTP service and file-backed persistence for the
//! frame-analysis workbench.

pub mod cli;
pub mod config;
pub mod http_backend;
pub mod service;
pub mod store;
pub mod workspace;

pub use config::WorkbenchConfig;
pub use workspace::{Access, Workspace, WorkspaceError};
