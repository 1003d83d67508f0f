//! Functional image representation with a hypernetwork.
//!
//! A convolutional [`hypernet::HyperNet`] maps a fixed-size image patch to the
//! flat parameter vector [`targetnet::ThetaVector`] of a small coordinate
//! network. Evaluating that network on any grid renders the patch at any
//! resolution; tiling patches gives [`superres::upscale`], and blending
//! parameter vectors gives the [`weightgeo`] interpolations.

pub mod checkpoint;
mod error;
pub mod hypernet;
pub mod image;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod superres;
pub mod targetnet;
pub mod weightgeo;

pub use error::{Error, Result};
pub use hypernet::{HyperNet, HyperNetConfig, PhiParameters};
pub use image::Image;
pub use targetnet::{CoordGrid, TargetNetConfig, ThetaVector};
