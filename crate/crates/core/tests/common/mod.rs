#![allow(dead_code)]

use gwalk_core::graph::{build_operator, AffinityMatrix, SinkhornOptions};
use gwalk_core::spectral::{decompose, ComponentSpectrum};
use gwalk_core::DiffusionOperator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// `[W^1, W^2, ..., W^tmax]` by repeated multiplication.
pub fn powers(w: &[f64], n: usize, tmax: u64) -> Vec<Vec<f64>> {
    let mut out = vec![w.to_vec()];
    for _ in 1..tmax {
        let next = matmul(out.last().unwrap(), w, n);
        out.push(next);
    }
    out
}

pub fn row(m: &[f64], n: usize, i: usize) -> &[f64] {
    &m[i * n..(i + 1) * n]
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<w, z - p> / ||w||` from an explicit distribution.
pub fn direct_statistic(w: &[f64], z: &[u8], p: f64) -> f64 {
    let num: f64 = w.iter().zip(z).map(|(&wi, &zi)| wi * (f64::from(zi) - p)).sum();
    num / norm(w)
}

/// A random nonnegative, generally asymmetric kernel on `n` nodes that stays
/// connected (and aperiodic) after symmetrization: a random spanning tree
/// in both directions, positive diagonal, plus extra edges with probability
/// `density`.
pub fn random_connected_kernel(rng: &mut impl Rng, n: usize, density: f64) -> AffinityMatrix {
    let mut entries = Vec::new();
    for i in 0..n {
        entries.push((i, i, rng.random_range(0.1..1.0)));
    }
    for i in 1..n {
        let j = rng.random_range(0..i);
        entries.push((i, j, rng.random_range(0.1..1.0)));
        entries.push((j, i, rng.random_range(0.1..1.0)));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                entries.push((i, j, rng.random_range(0.05..1.0)));
            }
        }
    }
    AffinityMatrix::new(n, entries, None).unwrap()
}

pub struct Case {
    pub op: DiffusionOperator,
    pub spectra: Vec<ComponentSpectrum>,
    pub dense: Vec<f64>,
}

pub fn case_from_kernel(k: &AffinityMatrix) -> Case {
    let op = build_operator(k, SinkhornOptions::default()).unwrap();
    let spectra = decompose(&op).unwrap();
    let dense = op.to_dense();
    Case { op, spectra, dense }
}

/// Random connected graphs with `n` in `[lo, hi]` and random sparsity.
pub fn corpus(seed: u64, count: usize, lo: usize, hi: usize) -> Vec<Case> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.random_range(lo..=hi);
            let density = r.random_range(0.0..0.5);
            case_from_kernel(&random_connected_kernel(&mut r, n, density))
        })
        .collect()
}

pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    let q: f64 = rng.random_range(0.1..0.9);
    (0..n).map(|_| u8::from(rng.random::<f64>() < q)).collect()
}
