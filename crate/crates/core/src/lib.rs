//! Doubly stochastic normalization of the Gaussian kernel and robust
//! inference built on it: density estimation, noise and signal magnitude
//! recovery, corrected distances, and graph Laplacian normalizations.
//!
//! ```
//! use dsnorm::{geometry, kernel, scaling, density};
//!
//! let sample = geometry::sample_circle(200, 0.16 * std::f64::consts::PI.powi(2), 1.0, 1).unwrap();
//! let k = kernel::gaussian_kernel(&kernel::pairwise_sq_dists(&sample.clean_points).unwrap(), 0.1).unwrap();
//! let sol = scaling::sinkhorn_symmetric_with(&k, &scaling::ScalingOptions::simulation()).unwrap();
//! let w = scaling::assemble_W(&k, &sol).unwrap();
//! let q = density::ds_kde(&w, 2.0).unwrap().with_dim(1).unwrap();
//! assert_eq!(q.raw.len(), 200);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod counts;
pub mod density;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod laplacian;
pub mod numerics;
pub mod rng;
pub mod scaling;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
