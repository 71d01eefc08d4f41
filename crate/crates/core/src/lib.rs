//! Radiance-field toolkit built around gradient-origin embeddings.
//!
//! The crate covers the full desk-scale pipeline: pinhole cameras and ray
//! sampling ([`geometry`]), voxel/triplane/MLP field parameterizations with
//! hand-written query VJPs ([`fields`]), a differentiable emission-absorption
//! renderer ([`renderer`]), the gradient-origin encoder ([`goembed`]),
//! optimizers and training loops ([`training`]), DDPM-style diffusion over
//! field parameters ([`diffusion`]), a synthetic multi-view dataset generator
//! ([`datagen`]), and the on-disk formats shared with the CLI ([`io`]).

pub mod datagen;
pub mod diffusion;
mod error;
pub mod fields;
pub mod geometry;
pub mod goembed;
pub mod image_buf;
pub mod io;
pub mod nn;
pub mod renderer;
pub mod rng;
pub mod tokens;
pub mod training;

pub use error::{Error, Result};
pub use image_buf::Image;
