//! From an affinity matrix to the diffusion operator `W`: geometric
//! symmetrization, symmetric Sinkhorn scaling (with pruning of unscalable
//! nodes) and squaring.

mod affinity;
mod csr;
pub mod io;
mod operator;
mod sinkhorn;

pub use affinity::{
    build_gaussian_affinity, build_knn_affinity, distance_quantile, symmetrize_geometric, AffinityMatrix,
    DEFAULT_KERNEL_FLOOR,
};
pub use operator::{square_psd, Component, DiffusionOperator};
pub use sinkhorn::{
    prune_and_scale, sinkhorn_scale, ScaledMatrix, ScalingResult, SinkhornOptions, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use crate::error::Result;

/// Symmetrize, scale (pruning if needed) and square.
pub fn build_operator(k: &AffinityMatrix, opts: SinkhornOptions) -> Result<DiffusionOperator> {
    let scaled = prune_and_scale(&symmetrize_geometric(k), opts)?;
    square_psd(&scaled)
}
