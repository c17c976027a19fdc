//! Correlated variational auto-encoders.
//!
//! Graph-structured VAEs whose latent prior couples neighbouring data points
//! through a pairwise Gaussian with correlation `τ`. On graphs with cycles
//! the objective averages over all maximal acyclic subgraphs, which reduces
//! to a per-edge weight computed from the Laplacian pseudoinverse.

pub mod datagen;
pub mod error;
pub mod gaussian;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{mas_edge_weights, EdgeWeightMap, Graph};
pub use metrics::{DistanceMatrix, DistanceMode, EvalReport};
pub use model::{CvaeModel, Likelihood, TrainConfig, Variant};
pub use numerics::Matrix;
