pub mod corpus;
pub mod error;
pub mod metrics;
pub mod ntm;
pub mod numerics;
pub mod sampling;
pub mod variants;
pub mod vicreg;

pub use error::{Error, Result};
