//! Multi-scale video frame synthesis: a pyramid generator conditioned on a
//! time ratio, with transitive-consistency training, metrics, synthetic data
//! generation and checkpointing.

pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod features;
pub mod frame;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use frame::{Frame, TimeRatio};
