//! Octree level-of-detail store for multi-timestep particle datasets.
//!
//! The pipeline: [`synth`] generates (or [`snapshot`] reads) raw particle
//! tables, [`build`] turns them into a dataset directory of quantized
//! [`block`]s with a per-interval [`index`], and the view-dependent side
//! ([`camera`], [`cut`], [`render`]) selects and draws a budgeted subset.

// `!(a > b)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod block;
pub mod build;
mod bytes;
pub mod cache;
pub mod camera;
pub mod cut;
pub mod dataset;
pub mod density;
pub mod error;
pub mod geom;
pub mod hash;
pub mod image;
pub mod index;
pub mod render;
pub mod selection;
pub mod snapshot;
pub mod subsample;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Aabb, NodePath, QPos, Vec3};
