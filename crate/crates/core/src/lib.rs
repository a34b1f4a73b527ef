//! Pure-exploration best-arm identification in linear bandits by phased
//! elimination, with the sampling allocation learned online through a
//! two-player game.

pub mod env;
pub mod error;
pub mod experiments;
pub mod learners;
pub mod linalg;
pub mod oracle;
pub mod peleg;
pub mod selftest;

pub use env::Instance;
pub use error::{Error, Result};
pub use peleg::{PelegConfig, RunResult};
