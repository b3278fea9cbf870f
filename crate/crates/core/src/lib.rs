//! Anchor-based Gaussian map construction, compression and incremental sharing.

pub mod build;
pub mod codec;
pub mod enhance;
pub mod error;
pub mod harness;
pub mod image;
pub mod increment;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod refine;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
