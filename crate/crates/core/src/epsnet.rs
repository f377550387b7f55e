//! Per-node random-walk time steps forming an epsilon-net over the scan
//! statistics, and the power-penalty function used to tune epsilon.

use rayon::prelude::*;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::DiffusionOperator;
use crate::json::{self, Real};
use crate::spectral::{power_tables, ComponentSpectrum, PowerTable};

/// Horizons are saturated here; nothing in double precision moves past it.
pub const MAX_STEP: u64 = 1 << 62;

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must lie in (0, 1), got {eps}")))
    }
}

/// `ln(1 / lambda)` computed without cancellation for `lambda` near one.
fn ln_inv(lambda: f64) -> f64 {
    -(lambda - 1.0).ln_1p()
}

fn ceil_steps(x: f64) -> u64 {
    if x >= MAX_STEP as f64 {
        MAX_STEP
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// `T_l = ceil(ln(n_l / eps) / ln(1 / lambda_2))`, or 1 when `lambda_2 = 0`.
pub fn horizon(n_l: usize, lambda2: f64, eps: f64) -> Result<u64> {
    check_epsilon(eps)?;
    if !(lambda2 < 1.0) {
        return Err(Error::NoSpectralGap(lambda2));
    }
    if lambda2 <= 0.0 {
        return Ok(1);
    }
    Ok(ceil_steps((n_l as f64 / eps).ln() / ln_inv(lambda2)).max(1))
}

/// Time steps for local node `i`: the backward recursion from `horizon`,
/// each step the smallest `t` with `||W^(t+1)||^2 <= ||W^tau||^2 (1 + eps^2/n_l)`.
/// Returned ascending, starting at 1 and ending at `horizon`.
pub fn select_steps(spec: &ComponentSpectrum, i: usize, eps: f64, horizon: u64) -> Vec<u64> {
    select_steps_impl(spec, None, i, eps, horizon)
}

fn select_steps_impl(
    spec: &ComponentSpectrum,
    table: Option<&PowerTable>,
    i: usize,
    eps: f64,
    horizon: u64,
) -> Vec<u64> {
    let norm = |t: u64| match table {
        Some(tb) => spec.row_norm_sq_with(tb, i, t),
        None => spec.row_norm_sq(i, t),
    };
    let growth = 1.0 + eps * eps / spec.size() as f64;
    let mut steps = vec![horizon];
    let mut tau = horizon;
    while tau > 1 {
        let bound = norm(tau) * growth;
        let ok = |t: u64| norm(t + 1) <= bound;
        // `tau - 1` always qualifies. Gallop down to bracket the smallest
        // qualifying t, then bisect; the map t -> ||W^(t+1)||^2 is monotone.
        let mut hi = tau - 1;
        let mut stride = 1;
        let lo = loop {
            if hi == 1 {
                break 0;
            }
            let probe = hi.saturating_sub(stride).max(1);
            if ok(probe) {
                hi = probe;
                stride = stride.saturating_mul(2);
            } else {
                break probe;
            }
        };
        // Invariant: ok(hi), and lo == 0 or !ok(lo).
        let (mut lo, mut hi) = (lo, hi);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        steps.push(hi);
        tau = hi;
    }
    steps.reverse();
    steps
}

/// `pi(t)`: the net step used to approximate time `t`.
pub fn pi_map(steps: &[u64], t: u64) -> u64 {
    let last = *steps.last().expect("nonempty step list");
    if t <= 1 {
        return steps[0];
    }
    if t > last {
        return last;
    }
    steps[steps.partition_point(|&s| s < t)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeNet {
    pub steps: Vec<u64>,
    /// `||W_i^t||_2` at each step.
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNet {
    epsilon: f64,
    nodes: Vec<NodeNet>,
    horizons: Vec<u64>,
    total: u64,
}

impl EpsNet {
    pub fn build(op: &DiffusionOperator, spectra: &[ComponentSpectrum], eps: f64) -> Result<Self> {
        check_epsilon(eps)?;
        let horizons = spectra
            .iter()
            .map(|s| horizon(s.size(), s.lambda2(), eps))
            .collect::<Result<Vec<_>>>()?;
        let tables = power_tables(spectra, &horizons);
        let nodes: Vec<NodeNet> = (0..op.n())
            .into_par_iter()
            .map(|i| {
                let (c, local) = op.locate(i);
                let (spec, table) = (&spectra[c], &tables[c]);
                let steps = select_steps_impl(spec, Some(table), local, eps, horizons[c]);
                let norms = steps.iter().map(|&t| spec.row_norm_sq_with(table, local, t).sqrt()).collect();
                NodeNet { steps, norms }
            })
            .collect();
        let total = nodes.iter().map(|n| n.steps.len() as u64).sum();
        Ok(Self { epsilon: eps, nodes, horizons, total })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn node(&self, i: usize) -> &NodeNet {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeNet] {
        &self.nodes
    }

    pub fn horizons(&self) -> &[u64] {
        &self.horizons
    }

    /// `sum_i M_i`, the number of hypotheses.
    pub fn total_count(&self) -> u64 {
        self.total
    }
}

impl Serialize for EpsNet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct PerNode<'a>(&'a [NodeNet]);
        impl Serialize for PerNode<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                #[derive(Serialize)]
                struct Entry<'a> {
                    i: usize,
                    steps: &'a [u64],
                    #[serde(serialize_with = "json::reals")]
                    norms: &'a [f64],
                }
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for (i, n) in self.0.iter().enumerate() {
                    seq.serialize_element(&Entry { i, steps: &n.steps, norms: &n.norms })?;
                }
                seq.end()
            }
        }
        #[derive(Serialize)]
        struct Horizon {
            #[serde(rename = "T")]
            t: u64,
        }
        let comps: Vec<Horizon> = self.horizons.iter().map(|&t| Horizon { t }).collect();
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("epsilon", &Real(self.epsilon))?;
        m.serialize_entry("per_node", &PerNode(&self.nodes))?;
        m.serialize_entry("per_component", &comps)?;
        m.end()
    }
}

/// `min{ceil(ln(n/eps)/ln(1/lambda)), ceil(ln n / ln(1 + eps^2/n))}`, with
/// `ln(1/lambda)` passed directly. Infinite `ln_inv_lambda` (lambda = 0)
/// keeps only the second term.
fn count_bound(n: f64, ln_inv_lambda: f64, eps: f64) -> f64 {
    let second = (n.ln() / (eps * eps / n).ln_1p()).ceil();
    if ln_inv_lambda.is_infinite() {
        second
    } else {
        let first = ((n / eps).ln() / ln_inv_lambda).ceil();
        first.min(second)
    }
}

fn penalty(n: f64, alpha: f64, ln_inv_lambda: f64, eps: f64) -> f64 {
    eps + (0.5 * (n / alpha * count_bound(n, ln_inv_lambda, eps)).ln()).sqrt()
}

/// The upper bound `h_hat_{n, alpha, lambda}(eps)` on the power penalty.
pub fn h_penalty(n: f64, alpha: f64, lambda: f64, eps: f64) -> f64 {
    penalty(n, alpha, if lambda <= 0.0 { f64::INFINITY } else { ln_inv(lambda) }, eps)
}

/// [`h_penalty`] parameterized by the spectral gap `1 - lambda`, which stays
/// exact for gaps below machine epsilon.
pub fn h_penalty_gap(n: f64, alpha: f64, gap: f64, eps: f64) -> f64 {
    penalty(n, alpha, if gap >= 1.0 { f64::INFINITY } else { -(-gap).ln_1p() }, eps)
}

/// The exact penalty `h(eps)` summed over components given as
/// `(n_l, lambda_2)` pairs.
pub fn h_exact(components: &[(usize, f64)], alpha: f64, eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for &(n_l, lambda2) in components {
        let t = horizon(n_l, lambda2, eps)? as f64;
        let n = n_l as f64;
        let second = (n.ln() / (eps * eps / n).ln_1p()).ceil();
        total += n / alpha * t.min(second).max(1.0);
    }
    Ok(eps + (0.5 * total.ln()).sqrt())
}

/// Log-spaced candidate values of epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        Self { lo: 1e-4, hi: 0.5, points: 2000 }
    }
}

impl EpsGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        let step = (self.hi / self.lo).ln() / (self.points - 1) as f64;
        (0..self.points).map(|k| self.lo * (step * k as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsTuning {
    #[serde(serialize_with = "json::reals")]
    pub grid: Vec<f64>,
    #[serde(serialize_with = "json::reals")]
    pub h_values: Vec<f64>,
    #[serde(serialize_with = "json::real")]
    pub best_eps: f64,
    #[serde(serialize_with = "json::real")]
    pub best_h: f64,
}

/// Minimizes [`h_penalty_gap`] over the grid. Ties go to the smaller epsilon.
pub fn tune_epsilon(n: f64, alpha: f64, gap: f64, grid: &EpsGrid) -> Result<EpsTuning> {
    if !(n >= 2.0) || !(alpha > 0.0 && alpha < 1.0) || !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::invalid(format!("bad tuning parameters n = {n}, alpha = {alpha}, gap = {gap}")));
    }
    if !(grid.lo > 0.0 && grid.lo <= grid.hi && grid.hi < 1.0 && grid.points >= 1) {
        return Err(Error::invalid("epsilon grid must lie inside (0, 1)"));
    }
    let values = grid.values();
    let h: Vec<f64> = values.iter().map(|&e| h_penalty_gap(n, alpha, gap, e)).collect();
    let best = (0..h.len()).fold(0, |b, k| if h[k] < h[b] { k } else { b });
    Ok(EpsTuning { best_eps: values[best], best_h: h[best], grid: values, h_values: h })
}

pub const TABLE_N: [f64; 4] = [1e3, 1e4, 1e5, 1e6];
pub const TABLE_ALPHA: [f64; 3] = [1e-1, 1e-2, 1e-3];
pub const TABLE_GAP: [f64; 9] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-9, 1e-12, 1e-16];

fn nearest_log(axis: &[f64], x: f64) -> f64 {
    let lx = x.ln();
    axis.iter()
        .copied()
        .min_by(|a, b| (a.ln() - lx).abs().total_cmp(&(b.ln() - lx).abs()))
        .expect("nonempty axis")
}

/// Epsilon from the reference table: snap `(n, alpha, gap)` to the nearest
/// table cell (in log scale) and return the tuned epsilon for that cell.
pub fn table_epsilon(n: f64, alpha: f64, gap: f64) -> Result<f64> {
    let cell = (
        nearest_log(&TABLE_N, n),
        nearest_log(&TABLE_ALPHA, alpha),
        nearest_log(&TABLE_GAP, gap.max(f64::MIN_POSITIVE)),
    );
    Ok(tune_epsilon(cell.0, cell.1, cell.2, &EpsGrid::default())?.best_eps)
}
