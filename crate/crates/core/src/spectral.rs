//! Per-component eigendecompositions of `W` and the evaluators built on
//! them: `||W_i^t||^2`, `<W_i^t, v>` and the full row `W_i^t`.
//!
//! Every evaluator skips eigenpairs whose contribution `lambda^t` has fallen
//! below a cutoff far under double-precision resolution of the result, so
//! large `t` costs only the handful of slowly decaying modes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::binio::*;
use crate::error::{Error, Result};
use crate::graph::DiffusionOperator;
use crate::linalg;

/// Eigenvalues in `[-CLAMP_TOL, 0)` are roundoff and silently set to zero.
pub const CLAMP_TOL: f64 = 1e-8;
/// Eigenvalues below `-PSD_TOL` mean the operator was not built correctly.
pub const PSD_TOL: f64 = 1e-6;

/// Dropped terms of `||W_i^t||^2` sum to at most `1e-18 / n_l`, a relative
/// error of `1e-18` since the norm is at least `1 / n_l`.
const NORM_CUTOFF: f64 = 1e-18;
/// Dropped terms of `<W_i^t, v>` are bounded by `lambda^t * ||v||`.
const ROW_CUTOFF: f64 = 1e-17;

const MAGIC: &[u8; 8] = b"GWSPEC01";

/// Cached powers shared by all tables of one operator (64 MiB).
const TABLE_BUDGET: usize = 1 << 23;

/// Cached `lambda_k^t` for consecutive `t`, as built by
/// [`ComponentSpectrum::power_table`].
#[derive(Debug, Clone)]
pub struct PowerTable {
    /// Powers for step `t` are `values[offsets[t - 1]..offsets[t]]`.
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl PowerTable {
    /// Largest step covered by the table.
    pub fn max_step(&self) -> u64 {
        (self.offsets.len() - 1) as u64
    }

    fn get(&self, t: u64) -> Option<&[f64]> {
        let t = usize::try_from(t).ok()?;
        (t >= 1 && t < self.offsets.len()).then(|| &self.values[self.offsets[t - 1]..self.offsets[t]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpectrum {
    component: usize,
    size: usize,
    /// Descending, clamped to `[0, 1]`.
    values: Vec<f64>,
    /// `ln(lambda_k)`, `-inf` for zero eigenvalues.
    ln_values: Vec<f64>,
    /// Node-major: entry `i` of eigenvector `k` is `vectors[i * size + k]`.
    vectors: Vec<f64>,
    /// `ln` of the cutoffs above, shifted by `ln(size)`.
    ln_norm_cut: f64,
    ln_row_cut: f64,
}

impl ComponentSpectrum {
    fn from_sorted(component: usize, size: usize, values: Vec<f64>, vectors: Vec<f64>) -> Self {
        let ln_values = values
            .iter()
            .map(|&l| if l > 0.0 { (l - 1.0).ln_1p() } else { f64::NEG_INFINITY })
            .collect();
        let ln_size = (size as f64).ln();
        Self {
            component,
            size,
            values,
            ln_values,
            vectors,
            ln_norm_cut: NORM_CUTOFF.ln() - ln_size,
            ln_row_cut: ROW_CUTOFF.ln() - ln_size,
        }
    }

    /// Eigendecomposition of one dense component block.
    pub fn compute(component: usize, block: &[f64], size: usize) -> Result<Self> {
        let (asc, colmajor) = linalg::symmetric_eigen(block, size)?;
        let mut values = Vec::with_capacity(size);
        let mut vectors = vec![0.0; size * size];
        for (k, src) in (0..size).rev().enumerate() {
            let mut l = asc[src];
            if l < -PSD_TOL {
                return Err(Error::NotPsd { component, value: l });
            }
            if l < -CLAMP_TOL {
                warn!("component {component}: clamping eigenvalue {l:.3e} to zero");
            }
            l = l.clamp(0.0, 1.0);
            values.push(l);
            let col = &colmajor[src * size..(src + 1) * size];
            // Fix the sign so the largest-magnitude entry is positive; the
            // first index wins ties.
            let pivot = col
                .iter()
                .enumerate()
                .fold(0, |best, (j, x)| if x.abs() > col[best].abs() { j } else { best });
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (i, &x) in col.iter().enumerate() {
                vectors[i * size + k] = sign * x;
            }
        }
        Ok(Self::from_sorted(component, size, values, vectors))
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry `i` of eigenvector `k`.
    pub fn vector(&self, k: usize, i: usize) -> f64 {
        self.vectors[i * self.size + k]
    }

    /// Second largest eigenvalue, zero for a singleton.
    pub fn lambda2(&self) -> f64 {
        self.values.get(1).copied().unwrap_or(0.0)
    }

    /// Number of leading modes with `exp(scale * ln lambda) >= exp(cut)`.
    fn active(&self, scale: f64, cut: f64) -> usize {
        self.ln_values.partition_point(|&l| scale * l >= cut)
    }

    fn node(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.size..(i + 1) * self.size]
    }

    fn power(&self, k: usize, t: u64) -> f64 {
        (t as f64 * self.ln_values[k]).exp()
    }

    /// `lambda_k^t` for the active modes at each `t <= tmax`. Stops early
    /// once the table would hold more than `budget` values; larger `t` then
    /// fall back to direct evaluation.
    pub fn power_table(&self, tmax: u64, budget: usize) -> PowerTable {
        let mut offsets = vec![0];
        let mut values = Vec::new();
        let mut t = 1;
        while t <= tmax {
            let active = self.active(t as f64, self.ln_row_cut);
            if values.len() + active > budget {
                break;
            }
            values.extend((0..active).map(|k| self.power(k, t)));
            offsets.push(values.len());
            t += 1;
        }
        PowerTable { offsets, values }
    }

    /// `||W_i^t||_2^2 = sum_k psi_k[i]^2 lambda_k^(2t)` for local node `i`.
    pub fn row_norm_sq(&self, i: usize, t: u64) -> f64 {
        self.norm_sq_impl(None, i, t)
    }

    /// [`row_norm_sq`](Self::row_norm_sq) reading powers from `table`; the
    /// result is bitwise identical.
    pub fn row_norm_sq_with(&self, table: &PowerTable, i: usize, t: u64) -> f64 {
        self.norm_sq_impl(table.get(t), i, t)
    }

    fn norm_sq_impl(&self, powers: Option<&[f64]>, i: usize, t: u64) -> f64 {
        debug_assert!(t >= 1);
        // lambda^(2t) is formed as (lambda^t)^2 on both paths.
        let active = self.active(2.0 * t as f64, self.ln_norm_cut);
        let psi = self.node(i);
        match powers {
            Some(pw) => (0..active).map(|k| psi[k] * psi[k] * (pw[k] * pw[k])).sum(),
            None => (0..active)
                .map(|k| {
                    let p = self.power(k, t);
                    psi[k] * psi[k] * (p * p)
                })
                .sum(),
        }
    }

    /// `<psi_k, v>` for every mode, with `v` indexed by local position.
    pub fn projections(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.size);
        let mut out = vec![0.0; self.size];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &p) in out.iter_mut().zip(self.node(i)) {
                    *o += vi * p;
                }
            }
        }
        out
    }

    /// `<W_i^t, v> = sum_k psi_k[i] lambda_k^t <psi_k, v>` given the
    /// projections of `v`.
    pub fn statistic_numerator(&self, projections: &[f64], i: usize, t: u64) -> f64 {
        debug_assert!(t >= 1);
        let active = self.active(t as f64, self.ln_row_cut);
        let psi = self.node(i);
        (0..active).map(|k| psi[k] * self.power(k, t) * projections[k]).sum()
    }

    /// [`statistic_numerator`](Self::statistic_numerator) reading powers
    /// from `table`; the result is bitwise identical.
    pub fn statistic_numerator_with(&self, table: &PowerTable, projections: &[f64], i: usize, t: u64) -> f64 {
        match table.get(t) {
            Some(pw) => {
                let psi = self.node(i);
                pw.iter().enumerate().map(|(k, &p)| psi[k] * p * projections[k]).sum()
            }
            None => self.statistic_numerator(projections, i, t),
        }
    }

    /// The distribution `W_i^t` over the component, with roundoff negatives
    /// clamped to zero and renormalized to sum to one.
    pub fn materialize_row(&self, i: usize, t: u64) -> Vec<f64> {
        let active = self.active(t as f64, self.ln_row_cut);
        let psi = self.node(i);
        let coef: Vec<f64> = (0..active).map(|k| psi[k] * self.power(k, t)).collect();
        let mut row: Vec<f64> = (0..self.size)
            .map(|j| {
                let pj = self.node(j);
                coef.iter().zip(pj).map(|(c, p)| c * p).sum::<f64>().max(0.0)
            })
            .collect();
        let total: f64 = row.iter().sum();
        for x in &mut row {
            *x /= total;
        }
        row
    }
}

/// Decomposes every component of `W`, in component order.
pub fn decompose(op: &DiffusionOperator) -> Result<Vec<ComponentSpectrum>> {
    op.components()
        .par_iter()
        .enumerate()
        .map(|(c, comp)| ComponentSpectrum::compute(c, &comp.block, comp.size()))
        .collect()
}

/// Power tables for every component up to its horizon, splitting a fixed
/// memory budget by component size.
pub fn power_tables(spectra: &[ComponentSpectrum], horizons: &[u64]) -> Vec<PowerTable> {
    let n: usize = spectra.iter().map(ComponentSpectrum::size).sum();
    spectra
        .par_iter()
        .zip(horizons)
        .map(|(s, &h)| s.power_table(h, (TABLE_BUDGET / n.max(1) * s.size()).max(1024)))
        .collect()
}

/// `lambda_{<1}`: the largest second eigenvalue over all components.
pub fn lambda_below_one(spectra: &[ComponentSpectrum]) -> f64 {
    spectra.iter().map(ComponentSpectrum::lambda2).fold(0.0, f64::max)
}

/// Writes spectra to a binary cache tagged with the operator's content hash.
pub fn save_spectra(path: &Path, op: &DiffusionOperator, spectra: &[ComponentSpectrum]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&op.content_hash())?;
    put_u64(&mut w, spectra.len() as u64)?;
    for s in spectra {
        put_u64(&mut w, s.component as u64)?;
        put_u64(&mut w, s.size as u64)?;
        put_f64s(&mut w, &s.values)?;
        put_f64s(&mut w, &s.vectors)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads cached spectra, or `None` if the cache belongs to another operator.
pub fn load_spectra(path: &Path, op: &DiffusionOperator) -> Result<Option<Vec<ComponentSpectrum>>> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, MAGIC)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if hash != op.content_hash() {
        return Ok(None);
    }
    let count = get_usize(&mut r)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let component = get_usize(&mut r)?;
        let size = get_usize(&mut r)?;
        let values = get_f64s(&mut r)?;
        let vectors = get_f64s(&mut r)?;
        if values.len() != size || vectors.len() != size * size {
            return Err(invalid_data("spectrum cache entry has inconsistent sizes").into());
        }
        out.push(ComponentSpectrum::from_sorted(component, size, values, vectors));
    }
    Ok(Some(out))
}

/// Loads spectra from `cache` when it matches `op`, otherwise decomposes and
/// refreshes the cache.
pub fn decompose_cached(op: &DiffusionOperator, cache: &Path) -> Result<Vec<ComponentSpectrum>> {
    if cache.exists() {
        match load_spectra(cache, op) {
            Ok(Some(s)) => return Ok(s),
            Ok(None) => log::info!("spectrum cache {} is stale; recomputing", cache.display()),
            Err(e) => warn!("ignoring unreadable spectrum cache {}: {e}", cache.display()),
        }
    }
    let spectra = decompose(op)?;
    save_spectra(cache, op, &spectra)?;
    Ok(spectra)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectra(n: usize, w: &[f64]) -> Vec<ComponentSpectrum> {
        decompose(&DiffusionOperator::from_dense(n, w).unwrap()).unwrap()
    }

    #[test]
    fn identity_gives_singletons() {
        let s = spectra(2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.len(), 2);
        for c in &s {
            assert_eq!(c.values(), &[1.0]);
            assert_eq!(c.vector(0, 0), 1.0);
            assert_eq!(c.lambda2(), 0.0);
            assert_eq!(c.row_norm_sq(0, 1), 1.0);
            assert_eq!(c.row_norm_sq(0, 1_000_000), 1.0);
        }
    }

    #[test]
    fn two_by_two() {
        let s = spectra(2, &[5.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0, 5.0 / 9.0]);
        let c = &s[0];
        assert!((c.values()[0] - 1.0).abs() < 1e-15);
        assert!((c.values()[1] - 1.0 / 9.0).abs() < 1e-15);
        let h = 0.5f64.sqrt();
        assert!((c.vector(0, 0) - h).abs() < 1e-15 && (c.vector(0, 1) - h).abs() < 1e-15);
        assert!((c.row_norm_sq(0, 1) - 41.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_block() {
        let m = 4;
        let s = spectra(m, &vec![0.25; m * m]);
        let c = &s[0];
        assert!((c.values()[0] - 1.0).abs() < 1e-14);
        assert!(c.values()[1..].iter().all(|&l| l < 1e-14));
        for t in [1, 2, 50] {
            assert!((c.row_norm_sq(2, t) - 0.25).abs() < 1e-14);
        }
        let row = c.materialize_row(1, 3);
        assert!(row.iter().all(|&x| (x - 0.25).abs() < 1e-14));
    }

    #[test]
    fn zero_vector_projects_to_zero() {
        let s = spectra(2, &[5.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0, 5.0 / 9.0]);
        let p = s[0].projections(&[0.0, 0.0]);
        assert_eq!(s[0].statistic_numerator(&p, 0, 3), 0.0);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let w = [0.0, 1.0, 1.0, 0.0];
        assert!(matches!(
            decompose(&DiffusionOperator::from_dense(2, &w).unwrap()),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let op = DiffusionOperator::from_dense(2, &[5.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0, 5.0 / 9.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.bin");
        let s = decompose_cached(&op, &path).unwrap();
        assert_eq!(load_spectra(&path, &op).unwrap().unwrap(), s);
        let other = DiffusionOperator::from_dense(1, &[1.0]).unwrap();
        assert!(load_spectra(&path, &other).unwrap().is_none());
    }
}
