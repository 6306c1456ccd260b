pub mod bench;
pub mod cost;
pub mod error;
pub mod estimate;
pub mod ir;
pub mod mapping;
pub mod oracle;
pub mod parse;
pub mod planner;
pub mod relexpr;
pub mod sql;
pub mod stats;
pub mod unfold;

pub use error::{Error, Result};
