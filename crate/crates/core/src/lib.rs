//! Single-panorama 3D Gaussian scene reconstruction.

pub mod depthfusion;
pub mod depthprovider;
pub mod error;
pub mod evalmetrics;
pub mod geometry;
pub mod imaging;
pub mod lifting;
pub mod pipeline;
pub mod pfm;
pub mod renderer;
pub mod scene;
pub mod synthscene;

pub use error::{Error, Result};
