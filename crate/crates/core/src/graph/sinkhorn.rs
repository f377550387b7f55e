use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::affinity::AffinityMatrix;
use super::csr::Csr;
use crate::error::{Error, Result};
use crate::json;

/// Default bound on `max |row sum - 1|` for the scaled kernel. Squaring at
/// most doubles the row error, so this keeps `W` inside `1e-10`.
pub const DEFAULT_TOL: f64 = 1e-11;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Window over which the row error must keep shrinking.
const STALL_WINDOW: usize = 100;
/// Past this many iterations, less than 1% progress per window counts as a
/// stall. Before it, only a window with no progress at all does.
const STALL_PATIENCE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    #[serde(serialize_with = "json::reals")]
    pub d: Vec<f64>,
    pub iterations: usize,
    #[serde(serialize_with = "json::real")]
    pub max_row_err: f64,
    /// Original indices of removed nodes, in removal order.
    pub pruned_nodes: Vec<usize>,
}

/// The symmetric doubly stochastic matrix `W~ = D K~ D` on the retained nodes.
#[derive(Debug, Clone)]
pub struct ScaledMatrix {
    pub(crate) csr: Csr,
    pub(crate) original_index: Vec<usize>,
    pub(crate) node_ids: Vec<String>,
    pub(crate) scaling: ScalingResult,
}

impl ScaledMatrix {
    pub fn n(&self) -> usize {
        self.csr.n
    }

    pub fn scaling(&self) -> &ScalingResult {
        &self.scaling
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.csr.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let (cols, vals) = self.csr.row(i);
            for (&j, &w) in cols.iter().zip(vals) {
                out[i * n + j] = w;
            }
        }
        out
    }
}

fn max_row_error(csr: &Csr, d: &[f64], r: &mut [f64]) -> f64 {
    let mut err = 0.0f64;
    for i in 0..csr.n {
        let (cols, vals) = csr.row(i);
        let kd: f64 = cols.iter().zip(vals).map(|(&j, &w)| w * d[j]).sum();
        r[i] = d[i] * kd;
        err = err.max((r[i] - 1.0).abs());
    }
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

/// Symmetric Sinkhorn iteration `d_i <- d_i / sqrt(r_i)` where `r_i` is the
/// current row sum of `D K D`. Returns the scaling vector, iteration count
/// and final error.
fn scale(csr: &Csr, opts: SinkhornOptions) -> Result<(Vec<f64>, usize, f64)> {
    let n = csr.n;
    let sums = csr.row_sums();
    if let Some(i) = sums.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        debug!("row {i} has sum {} and cannot be scaled", sums[i]);
        return Err(Error::NotScalable { iterations: 0, max_row_err: f64::INFINITY });
    }
    let mut d: Vec<f64> = sums.iter().map(|s| 1.0 / s.sqrt()).collect();
    let mut r = vec![0.0; n];
    let mut history = [f64::INFINITY; STALL_WINDOW];
    let mut iter = 0usize;
    loop {
        let err = max_row_error(csr, &d, &mut r);
        if err <= opts.tol {
            return Ok((d, iter, err));
        }
        let past = history[iter % STALL_WINDOW];
        let stalled = iter >= STALL_WINDOW
            && (err >= past || (iter >= STALL_PATIENCE && err > 0.99 * past));
        if !err.is_finite() || stalled || iter >= opts.max_iter {
            return Err(Error::NotScalable { iterations: iter, max_row_err: err });
        }
        history[iter % STALL_WINDOW] = err;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di /= ri.sqrt();
        }
        iter += 1;
    }
}

fn build(k: &AffinityMatrix, keep: Vec<usize>, d: Vec<f64>, iterations: usize, err: f64, pruned: Vec<usize>) -> ScaledMatrix {
    let mut csr = Csr::restricted(k, &keep);
    for i in 0..csr.n {
        let range = csr.row_ptr[i]..csr.row_ptr[i + 1];
        for p in range {
            let j = csr.cols[p];
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            // Same operation order for (i, j) and (j, i) keeps W~ exactly symmetric.
            csr.vals[p] = (d[a] * csr.vals[p]) * d[b];
        }
    }
    let node_ids = keep.iter().map(|&i| k.node_ids()[i].clone()).collect();
    ScaledMatrix {
        csr,
        original_index: keep,
        node_ids,
        scaling: ScalingResult { d, iterations, max_row_err: err, pruned_nodes: pruned },
    }
}

fn check_symmetric(k: &AffinityMatrix) -> Result<()> {
    if k.is_symmetric() {
        Ok(())
    } else {
        Err(Error::invalid("kernel passed to Sinkhorn scaling is not symmetric"))
    }
}

/// Scales a symmetric nonnegative kernel to doubly stochastic form
/// `W~_ij = d_i K~_ij d_j`.
pub fn sinkhorn_scale(ktilde: &AffinityMatrix, opts: SinkhornOptions) -> Result<ScaledMatrix> {
    check_symmetric(ktilde)?;
    let keep: Vec<usize> = (0..ktilde.n()).collect();
    let csr = Csr::restricted(ktilde, &keep);
    let (d, iterations, err) = scale(&csr, opts)?;
    Ok(build(ktilde, keep, d, iterations, err, Vec::new()))
}

/// Like [`sinkhorn_scale`], but on failure repeatedly removes the sparsest
/// node (fewest nonzeros, then smallest weighted degree, then lowest index)
/// until the remaining submatrix scales.
pub fn prune_and_scale(ktilde: &AffinityMatrix, opts: SinkhornOptions) -> Result<ScaledMatrix> {
    check_symmetric(ktilde)?;
    let mut keep: Vec<usize> = (0..ktilde.n()).collect();
    let mut pruned = Vec::new();
    loop {
        if keep.len() < 2 {
            return Err(Error::Degenerate(format!(
                "only {} node(s) left after pruning {} unscalable node(s)",
                keep.len(),
                pruned.len()
            )));
        }
        let csr = Csr::restricted(ktilde, &keep);
        match scale(&csr, opts) {
            Ok((d, iterations, err)) => {
                if !pruned.is_empty() {
                    warn!("pruned {} node(s) to make the kernel scalable", pruned.len());
                }
                return Ok(build(ktilde, keep, d, iterations, err, pruned));
            }
            Err(Error::NotScalable { iterations, max_row_err }) => {
                let victim = (0..csr.n)
                    .min_by(|&a, &b| {
                        let (ca, va) = csr.row(a);
                        let (cb, vb) = csr.row(b);
                        let wa: f64 = va.iter().sum();
                        let wb: f64 = vb.iter().sum();
                        ca.len().cmp(&cb.len()).then(wa.total_cmp(&wb)).then(a.cmp(&b))
                    })
                    .expect("nonempty");
                debug!(
                    "scaling failed after {iterations} iterations (error {max_row_err:.3e}); pruning node {}",
                    keep[victim]
                );
                pruned.push(keep.remove(victim));
            }
            Err(e) => return Err(e),
        }
    }
}
