//! Sampling, random walks and electrical estimates on the root component of
//! the wired minimal spanning forest of the Poisson-weighted infinite tree.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > a)` also rejects NaN

pub mod dist;
pub mod error;
pub mod experiments;
pub mod invasion;
pub mod kernel;
pub mod msf;
pub mod mst;
pub mod pgwa;
pub mod quad;
pub mod resistance;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod walk;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tree::{SizedTree, VertexId};
