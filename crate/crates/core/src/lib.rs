//! Age-of-information simulation for multihop queueing networks.

pub mod dist;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod par;
pub mod policy;
pub mod stream;
pub mod traffic;

pub use error::{Error, Result};
