//! Shared inputs for the benchmarks.

use gwalk_core::graph::{build_gaussian_affinity, DEFAULT_KERNEL_FLOOR};
use gwalk_core::simlab::{sample_circle, CircleModel};
use gwalk_core::{build_operator, decompose, AffinityMatrix, ComponentSpectrum, DiffusionOperator, SinkhornOptions};

pub fn circle_model(n: usize) -> CircleModel {
    CircleModel { n, p: 0.5, b: 0.5, omega: 1.0, sigma: 0.01, seed: 11 }
}

/// Gaussian kernel and labels for one draw of the circle model.
pub fn circle_kernel(n: usize) -> (AffinityMatrix, Vec<u8>) {
    let sample = sample_circle(&circle_model(n), 0).expect("valid model");
    let k = build_gaussian_affinity(&sample.points, 0.01, false, DEFAULT_KERNEL_FLOOR).expect("finite points");
    (k, sample.labels)
}

pub struct Fixture {
    pub kernel: AffinityMatrix,
    pub op: DiffusionOperator,
    pub spectra: Vec<ComponentSpectrum>,
    /// Labels aligned with the retained nodes.
    pub labels: Vec<u8>,
}

pub fn fixture(n: usize) -> Fixture {
    let (kernel, labels) = circle_kernel(n);
    let op = build_operator(&kernel, SinkhornOptions::default()).expect("scalable kernel");
    let spectra = decompose(&op).expect("PSD operator");
    let labels = op.original_index().iter().map(|&k| labels[k]).collect();
    Fixture { kernel, op, spectra, labels }
}
