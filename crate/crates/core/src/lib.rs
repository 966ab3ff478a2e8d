pub mod backends;
pub mod cotracking;
pub mod eval;
pub mod error;
pub mod graph;
pub mod memorize;
pub mod model;
pub mod prompts;
pub mod reasoning;
pub mod store;

pub use error::{Error, Result};
