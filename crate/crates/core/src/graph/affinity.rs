use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cutoff below which Gaussian kernel entries are dropped.
pub const DEFAULT_KERNEL_FLOOR: f64 = 1e-12;

/// A nonnegative sparse similarity matrix `K` over `n` nodes.
///
/// Entries are kept sorted by `(row, col)` with strictly positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    node_ids: Vec<String>,
}

impl AffinityMatrix {
    /// Builds a matrix from a coordinate list. Zero weights are dropped and
    /// repeated coordinates are summed.
    pub fn new(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        node_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let node_ids = match node_ids {
            Some(ids) if ids.len() != n => {
                return Err(Error::invalid(format!(
                    "{} node ids supplied for {n} nodes",
                    ids.len()
                )))
            }
            Some(ids) => ids,
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("entry ({i}, {j}) out of range for n = {n}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("entry ({i}, {j}) has invalid weight {w}")));
            }
            if w > 0.0 {
                raw.push((i, j, w));
            }
        }
        // Stable sort keeps repeated coordinates in input order, so their sum
        // does not depend on the sort implementation.
        raw.sort_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (i, j, w) in raw {
            match entries.last_mut() {
                Some(last) if (last.0, last.1) == (i, j) => last.2 += w,
                _ => entries.push((i, j, w)),
            }
        }
        Ok(Self { n, entries, node_ids })
    }

    /// Builds a matrix from a dense row-major buffer.
    pub fn from_dense(n: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n * n {
            return Err(Error::invalid(format!("dense buffer of length {} is not {n}x{n}", dense.len())));
        }
        Self::new(
            n,
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j, dense[i * n + j]))),
            None,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn with_node_ids(mut self, node_ids: Vec<String>) -> Result<Self> {
        if node_ids.len() != self.n {
            return Err(Error::invalid(format!(
                "{} node ids supplied for {} nodes",
                node_ids.len(),
                self.n
            )));
        }
        self.node_ids = node_ids;
        Ok(self)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for &(i, j, w) in &self.entries {
            out[i * self.n + j] = w;
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(i, j)))
            .map(|pos| self.entries[pos].2)
            .unwrap_or(0.0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|&(i, j, w)| self.get(j, i) == w)
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).unwrap_or(0);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::invalid(format!(
                "point {i} has dimension {} (expected {dim})",
                p.len()
            )));
        }
        if p.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid(format!("point {i} has a NaN coordinate")));
        }
    }
    Ok(dim)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric k-nearest-neighbour graph with unit weights: `i` and `j` are
/// linked when either is among the other's `k` nearest points. Distance ties
/// go to the lower index.
pub fn build_knn_affinity(points: &[Vec<f64>], k: usize) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("kNN graph needs at least two points"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {})", n)));
    }
    check_points(points)?;
    let mut entries = Vec::with_capacity(2 * n * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&points[i], &points[j]), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        order.select_nth_unstable_by(k - 1, cmp);
        for &(_, j) in &order[..k] {
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
    }
    // Mutual neighbours would otherwise be summed to weight 2.
    entries.sort_by_key(|a| (a.0, a.1));
    entries.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    AffinityMatrix::new(n, entries, None)
}

/// Gaussian kernel `exp(-|x_i - x_j|^2 / sigma)`, dropping entries below
/// `floor`.
pub fn build_gaussian_affinity(
    points: &[Vec<f64>],
    sigma: f64,
    zero_diagonal: bool,
    floor: f64,
) -> Result<AffinityMatrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    check_points(points)?;
    let n = points.len();
    let mut entries = Vec::new();
    for i in 0..n {
        if !zero_diagonal {
            entries.push((i, i, 1.0));
        }
        for j in (i + 1)..n {
            let w = (-squared_distance(&points[i], &points[j]) / sigma).exp();
            if w >= floor && w > 0.0 {
                entries.push((i, j, w));
                entries.push((j, i, w));
            }
        }
    }
    AffinityMatrix::new(n, entries, None)
}

/// The `q`-quantile of all pairwise Euclidean distances, interpolating
/// linearly between order statistics. Handy for picking a kernel bandwidth.
pub fn distance_quantile(points: &[Vec<f64>], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    check_points(points)?;
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("need at least two points for pairwise distances"));
    }
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| squared_distance(&points[i], &points[j]).sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    let pos = q * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(d[lo] + (pos - lo as f64) * (d[hi] - d[lo]))
}

/// `K~_ij = sqrt(K_ij K_ji)`. One-directional edges vanish.
pub fn symmetrize_geometric(k: &AffinityMatrix) -> AffinityMatrix {
    let entries: Vec<_> = k
        .entries
        .iter()
        .filter_map(|&(i, j, w)| {
            let back = if i == j { w } else { k.get(j, i) };
            (back > 0.0).then(|| (i, j, (w * back).sqrt()))
        })
        .collect();
    AffinityMatrix { n: k.n, entries, node_ids: k.node_ids.clone() }
}
