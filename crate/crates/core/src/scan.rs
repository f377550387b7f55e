//! The scan test: statistics over the epsilon-net, the Bonferroni threshold,
//! the unknown-prior correction and the rejection report.

use std::collections::HashMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::epsnet::{EpsNet, NodeNet};
use crate::error::{Error, Result};
use crate::graph::io::LabelFile;
use crate::graph::DiffusionOperator;
use crate::json;
use crate::spectral::{power_tables, ComponentSpectrum, PowerTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum Prior {
    Known(#[serde(serialize_with = "json::real")] f64),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Look for neighbourhoods where label 1 is over-represented.
    Greater,
    /// Same test on the negated labels.
    Less,
}

/// Binary labels aligned with the retained nodes of an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    z: Vec<u8>,
    prior: Prior,
    direction: Direction,
}

impl LabelSet {
    pub fn new(z: Vec<u8>, prior: Prior, direction: Direction) -> Result<Self> {
        if let Some(i) = z.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!("label {} at position {i} is not 0 or 1", z[i])));
        }
        if let Prior::Known(p) = prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("class prior must lie in (0, 1), got {p}")));
            }
        }
        Ok(Self { z, prior, direction })
    }

    pub fn labels(&self) -> &[u8] {
        &self.z
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn with_direction(&self, direction: Direction) -> Self {
        Self { direction, ..self.clone() }
    }

    /// Labels as tested: negated for [`Direction::Less`].
    pub fn effective(&self) -> Vec<u8> {
        match self.direction {
            Direction::Greater => self.z.clone(),
            Direction::Less => self.z.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// Aligns labels read from disk with the retained nodes of `op`.
///
/// Keyed labels are matched by node id. Unkeyed labels must cover either
/// the retained nodes or every node of the input kernel; labels of pruned
/// nodes are dropped with a warning.
pub fn align_labels(op: &DiffusionOperator, file: &LabelFile) -> Result<Vec<u8>> {
    let n = op.n();
    let input_n = n + op.scaling().pruned_nodes.len();
    let mismatch = || Error::LabelMismatch { labels: file.labels.len(), nodes: n };
    match &file.ids {
        Some(ids) => {
            let by_id: HashMap<&str, u8> = ids.iter().map(String::as_str).zip(file.labels.iter().copied()).collect();
            let z = op
                .node_ids()
                .iter()
                .map(|id| by_id.get(id.as_str()).copied())
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(mismatch)?;
            if by_id.len() > n {
                warn!("dropped {} label(s) for nodes not in the tested graph", by_id.len() - n);
            }
            Ok(z)
        }
        None if file.labels.len() == n => Ok(file.labels.clone()),
        None if file.labels.len() == input_n => {
            warn!("dropped {} label(s) of pruned nodes", input_n - n);
            Ok(op.original_index().iter().map(|&k| file.labels[k]).collect())
        }
        None => Err(mismatch()),
    }
}

/// One-sided Clopper-Pearson upper bound: the `q` with
/// `P[Binomial(n, q) <= k] = tail`. Returns 1 when `k = n`.
pub fn clopper_pearson_upper(k: u64, n: u64, tail: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("Clopper-Pearson bound needs at least one trial"));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} successes out of {n} trials")));
    }
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::invalid(format!("tail probability must lie in (0, 1), got {tail}")));
    }
    if k == n {
        return Ok(1.0);
    }
    let target = tail.ln();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // The CDF decreases in q. 200 halvings exhaust double precision.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-15 {
            break;
        }
        if ln_binomial_cdf(k, n, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `ln P[Binomial(n, q) <= k]` by log-sum-exp over the pmf terms.
fn ln_binomial_cdf(k: u64, n: u64, q: f64) -> f64 {
    let (lq, lp) = (q.ln(), (-q).ln_1p());
    let mut ln_choose = 0.0;
    let mut terms = Vec::with_capacity(k as usize + 1);
    for j in 0..=k {
        if j > 0 {
            ln_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        let jl = if j == 0 { 0.0 } else { j as f64 * lq };
        let rest = if n == j { 0.0 } else { (n - j) as f64 * lp };
        terms.push(ln_choose + jl + rest);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Bonferroni scan threshold `sqrt(0.5 ln(total / alpha))`.
pub fn threshold(total_hypotheses: u64, alpha: f64) -> f64 {
    (0.5 * (total_hypotheses as f64 / alpha).ln()).sqrt()
}

/// `S(W_i^t) = (<W_i^t, z> - p) / ||W_i^t||_2`.
pub fn scan_statistic(spec: &ComponentSpectrum, projections: &[f64], i: usize, t: u64, p: f64) -> f64 {
    (spec.statistic_numerator(projections, i, t) - p) / spec.row_norm_sq(i, t).sqrt()
}

/// Label projections for every component, ready for statistic evaluation.
pub struct Scan<'a> {
    op: &'a DiffusionOperator,
    spectra: &'a [ComponentSpectrum],
    projections: Vec<Vec<f64>>,
    p: f64,
}

impl<'a> Scan<'a> {
    pub fn new(op: &'a DiffusionOperator, spectra: &'a [ComponentSpectrum], z: &[u8], p: f64) -> Result<Self> {
        if z.len() != op.n() {
            return Err(Error::LabelMismatch { labels: z.len(), nodes: op.n() });
        }
        let projections = op
            .components()
            .iter()
            .zip(spectra)
            .map(|(c, s)| {
                let v: Vec<f64> = c.nodes.iter().map(|&i| f64::from(z[i])).collect();
                s.projections(&v)
            })
            .collect();
        Ok(Self { op, spectra, projections, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Statistic of retained node `i` at an arbitrary time `t >= 1`.
    pub fn statistic(&self, i: usize, t: u64) -> f64 {
        let (c, local) = self.op.locate(i);
        scan_statistic(&self.spectra[c], &self.projections[c], local, t, self.p)
    }

    /// Statistics at the net steps of node `i`, reusing the cached norms.
    pub fn net_statistics(&self, i: usize, node: &NodeNet) -> Vec<f64> {
        self.net_statistics_impl(None, i, node)
    }

    fn net_statistics_impl(&self, tables: Option<&[PowerTable]>, i: usize, node: &NodeNet) -> Vec<f64> {
        let (c, local) = self.op.locate(i);
        let (spec, proj) = (&self.spectra[c], &self.projections[c]);
        let numerator = |t: u64| match tables {
            Some(tb) => spec.statistic_numerator_with(&tb[c], proj, local, t),
            None => spec.statistic_numerator(proj, local, t),
        };
        node.steps
            .iter()
            .zip(&node.norms)
            .map(|(&t, &norm)| (numerator(t) - self.p) / norm)
            .collect()
    }

    /// Applies `f` to every node and its net statistics, in parallel, with
    /// results in node order.
    pub fn map_nodes<R, F>(&self, net: &EpsNet, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, &NodeNet, &[f64]) -> R + Sync,
    {
        let tables = power_tables(self.spectra, net.horizons());
        (0..self.op.n())
            .into_par_iter()
            .map(|i| {
                let node = net.node(i);
                f(i, node, &self.net_statistics_impl(Some(&tables), i, node))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub node_id: String,
    pub i: usize,
    pub t: u64,
    #[serde(serialize_with = "json::real")]
    pub statistic: f64,
    #[serde(serialize_with = "json::real")]
    pub gamma_hat: f64,
    /// `gamma_hat * ||W_i^t||_2`, a lower bound on `<W_i^t, s>`.
    #[serde(serialize_with = "json::real")]
    pub effect_lower_bound: f64,
    #[serde(serialize_with = "json::real")]
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSummary {
    pub size: usize,
    #[serde(serialize_with = "json::real")]
    pub lambda2: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub rejected_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    #[serde(serialize_with = "json::real")]
    pub alpha: f64,
    #[serde(serialize_with = "json::real")]
    pub epsilon: f64,
    pub prior: Prior,
    pub direction: Direction,
    /// Significance level used in the threshold (halved for unknown prior).
    #[serde(serialize_with = "json::real")]
    pub alpha_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub config: ReportConfig,
    #[serde(serialize_with = "json::real")]
    pub threshold: f64,
    pub total_hypotheses: u64,
    #[serde(serialize_with = "json::real")]
    pub p_used: f64,
    /// Number of rejections before any truncation of the list below.
    pub total_rejections: u64,
    /// Sorted by statistic, descending; ties by smaller `t`, then smaller `i`.
    pub rejections: Vec<Rejection>,
    pub components: Vec<ComponentSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    pub alpha: f64,
    /// Keep only this many of the strongest rejections in the report.
    pub max_rejections: Option<usize>,
}

impl TestOptions {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, max_rejections: None }
    }
}

fn rejection_order(a: &Rejection, b: &Rejection) -> std::cmp::Ordering {
    b.statistic.total_cmp(&a.statistic).then(a.t.cmp(&b.t)).then(a.i.cmp(&b.i))
}

/// Effective prior and significance level for a label set.
pub fn resolve_prior(labels: &LabelSet, alpha: f64) -> Result<(f64, f64)> {
    match labels.prior {
        Prior::Known(p) => Ok((
            match labels.direction {
                Direction::Greater => p,
                Direction::Less => 1.0 - p,
            },
            alpha,
        )),
        Prior::Unknown => {
            let z = labels.effective();
            let k = z.iter().map(|&v| u64::from(v)).sum();
            let p = clopper_pearson_upper(k, z.len() as u64, alpha / 2.0)?;
            Ok((p, alpha / 2.0))
        }
    }
}

pub fn run_test(
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    net: &EpsNet,
    labels: &LabelSet,
    alpha: f64,
) -> Result<TestReport> {
    run_test_with(op, spectra, net, labels, &TestOptions::new(alpha))
}

pub fn run_test_with(
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    net: &EpsNet,
    labels: &LabelSet,
    opts: &TestOptions,
) -> Result<TestReport> {
    run_test_with_max(op, spectra, net, labels, opts).map(|(report, _)| report)
}

/// The largest statistic over the whole net, rejected or not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanMax {
    pub i: usize,
    pub t: u64,
    pub statistic: f64,
}

/// [`run_test_with`] that also returns the largest scanned statistic (ties
/// go to the smaller `t`, then the smaller `i`).
pub fn run_test_with_max(
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    net: &EpsNet,
    labels: &LabelSet,
    opts: &TestOptions,
) -> Result<(TestReport, ScanMax)> {
    let alpha = opts.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let total = net.total_count();
    if total == 0 {
        return Err(Error::EmptyNet);
    }
    let (p, alpha_eff) = resolve_prior(labels, alpha)?;
    let thr = threshold(total, alpha_eff);
    let scan = Scan::new(op, spectra, &labels.effective(), p)?;
    let keep = opts.max_rejections;
    let per_node: Vec<(usize, Vec<Rejection>, ScanMax)> = scan.map_nodes(net, |i, node, stats| {
        let best = (0..stats.len())
            .fold(0, |b, j| if stats[j] > stats[b] { j } else { b });
        let best = ScanMax { i, t: node.steps[best], statistic: stats[best] };
        let mut out: Vec<Rejection> = stats
            .iter()
            .enumerate()
            .filter(|(_, &s)| s - thr > 0.0)
            .map(|(j, &s)| Rejection {
                node_id: String::new(),
                i,
                t: node.steps[j],
                statistic: s,
                gamma_hat: s - thr,
                effect_lower_bound: (s - thr) * node.norms[j],
                norm: node.norms[j],
            })
            .collect();
        let count = out.len();
        if let Some(k) = keep {
            out.sort_by(rejection_order);
            out.truncate(k);
        }
        (count, out, best)
    });

    let mut rejected_nodes = vec![0usize; spectra.len()];
    let mut total_rejections = 0u64;
    let mut best = per_node[0].2;
    for (_, _, b) in &per_node {
        if b.statistic > best.statistic || (b.statistic == best.statistic && b.t < best.t) {
            best = *b;
        }
    }
    for (i, (count, _, _)) in per_node.iter().enumerate() {
        total_rejections += *count as u64;
        if *count > 0 {
            rejected_nodes[op.locate(i).0] += 1;
        }
    }
    let mut rejections: Vec<Rejection> = per_node.into_iter().flat_map(|(_, r, _)| r).collect();
    rejections.sort_by(rejection_order);
    if let Some(k) = keep {
        rejections.truncate(k);
    }
    for r in &mut rejections {
        r.node_id = op.node_ids()[r.i].clone();
    }
    let components = spectra
        .iter()
        .zip(net.horizons())
        .zip(rejected_nodes)
        .map(|((s, &horizon), rejected_nodes)| ComponentSummary {
            size: s.size(),
            lambda2: s.lambda2(),
            horizon,
            rejected_nodes,
        })
        .collect();
    let report = TestReport {
        config: ReportConfig {
            alpha,
            epsilon: net.epsilon(),
            prior: labels.prior,
            direction: labels.direction,
            alpha_effective: alpha_eff,
        },
        threshold: thr,
        total_hypotheses: total,
        p_used: p,
        total_rejections,
        rejections,
        components,
    };
    Ok((report, best))
}

/// Writes every scanned pair as `node_id,i,t,statistic,gamma_hat`,
/// including those with `gamma_hat <= 0`.
pub fn write_scan_dump(
    w: &mut impl Write,
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    net: &EpsNet,
    labels: &LabelSet,
    alpha: f64,
) -> Result<()> {
    let (p, alpha_eff) = resolve_prior(labels, alpha)?;
    let thr = threshold(net.total_count(), alpha_eff);
    let scan = Scan::new(op, spectra, &labels.effective(), p)?;
    writeln!(w, "node_id,i,t,statistic,gamma_hat")?;
    for i in 0..op.n() {
        let node = net.node(i);
        for (&t, s) in node.steps.iter().zip(scan.net_statistics(i, node)) {
            writeln!(
                w,
                "{},{i},{t},{},{}",
                op.node_ids()[i],
                json::format_real(s),
                json::format_real(s - thr)
            )?;
        }
    }
    Ok(())
}

/// The random-walk distribution behind a rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    /// Retained node indices of the component, with their probabilities.
    pub nodes: Vec<usize>,
    pub probabilities: Vec<f64>,
    /// Smallest set of nodes (by decreasing probability) holding at least
    /// the requested mass.
    pub top_nodes: Vec<usize>,
    pub top_mass: f64,
}

/// Materializes `W_i^t` and its smallest `q`-mass support.
pub fn report_distribution(
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    i: usize,
    t: u64,
    q: f64,
) -> Distribution {
    let (c, local) = op.locate(i);
    let probabilities = spectra[c].materialize_row(local, t);
    let nodes = op.components()[c].nodes.clone();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    let mut top_nodes = Vec::new();
    let mut top_mass = 0.0;
    for k in order {
        if top_mass >= q {
            break;
        }
        top_mass += probabilities[k];
        top_nodes.push(nodes[k]);
    }
    Distribution { nodes, probabilities, top_nodes, top_mass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::decompose;

    #[test]
    fn threshold_and_gamma_arithmetic() {
        let thr = threshold(1000, 0.05);
        assert!((5.0 - thr - 2.774_748_603_804_94).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_boundaries() {
        assert_eq!(clopper_pearson_upper(10, 10, 0.025).unwrap(), 1.0);
        for n in [10u64, 100, 1000] {
            let closed = 1.0 - 0.025f64.powf(1.0 / n as f64);
            assert!((clopper_pearson_upper(0, n, 0.025).unwrap() - closed).abs() < 1e-10);
        }
        assert!(clopper_pearson_upper(0, 0, 0.025).is_err());
    }

    #[test]
    fn singleton_statistic() {
        let op = DiffusionOperator::from_dense(1, &[1.0]).unwrap();
        let spectra = decompose(&op).unwrap();
        let scan = Scan::new(&op, &spectra, &[0], 0.5).unwrap();
        assert_eq!(scan.statistic(0, 1), -0.5);
    }

    #[test]
    fn uniform_block_statistic() {
        let m = 8;
        let op = DiffusionOperator::from_dense(m, &vec![1.0 / m as f64; m * m]).unwrap();
        let spectra = decompose(&op).unwrap();
        let z = [1, 1, 1, 0, 0, 0, 0, 0];
        let scan = Scan::new(&op, &spectra, &z, 0.5).unwrap();
        let expect = (m as f64).sqrt() * (3.0 / 8.0 - 0.5);
        for i in 0..m {
            assert!((scan.statistic(i, 2) - expect).abs() < 1e-12);
        }
        let ones = Scan::new(&op, &spectra, &[1; 8], 0.3).unwrap();
        assert!((ones.statistic(4, 1) - 0.7 * (m as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn keyed_labels_align_by_id() {
        let op = DiffusionOperator::from_dense(2, &[0.5; 4]).unwrap();
        let file = LabelFile { ids: Some(vec!["1".into(), "x".into(), "0".into()]), labels: vec![1, 1, 0] };
        assert_eq!(align_labels(&op, &file).unwrap(), vec![0, 1]);
        let short = LabelFile { ids: None, labels: vec![1] };
        assert!(matches!(align_labels(&op, &short), Err(Error::LabelMismatch { .. })));
    }
}
