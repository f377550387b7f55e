//! Synthetic experiments on the unit circle: sampling, the ground-truth
//! discrepancy `s`, the closed-form and numerical signal strength `gamma`,
//! and Monte-Carlo estimates of power and localization error.

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::epsnet::{tune_epsilon, EpsGrid, EpsNet};
use crate::error::{Error, Result};
use crate::graph::{build_gaussian_affinity, build_operator, DiffusionOperator, SinkhornOptions, DEFAULT_KERNEL_FLOOR};
use crate::json;
use crate::scan::{report_distribution, run_test_with_max, Direction, LabelSet, Prior, TestOptions};
use crate::spectral::{decompose, lambda_below_one, ComponentSpectrum};

/// How many of the strongest rejections are examined for the TV error.
const TV_CANDIDATES: usize = 32;

/// Two densities on the circle that differ by `+-b cos(omega theta)` around
/// `theta = 0`, mixed with class prior `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleModel {
    pub n: usize,
    #[serde(serialize_with = "json::real")]
    pub p: f64,
    #[serde(serialize_with = "json::real")]
    pub b: f64,
    #[serde(serialize_with = "json::real")]
    pub omega: f64,
    #[serde(serialize_with = "json::real")]
    pub sigma: f64,
    pub seed: u64,
}

impl CircleModel {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("circle model needs at least two points"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b must lie in [0, 1], got {}", self.b)));
        }
        if !(self.omega > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::invalid("omega and sigma must be positive"));
        }
        let amp = 2.0 * self.p * (1.0 - self.p) * self.b;
        if self.p + amp > 1.0 || self.p - amp < 0.0 {
            return Err(Error::invalid("p +- s(theta) leaves [0, 1]"));
        }
        Ok(())
    }

    fn half_width(&self) -> f64 {
        1.5 * PI / self.omega
    }

    /// `s(theta) = 2 p (1 - p) b cos(omega theta)` for `|theta| < 3 pi / (2 omega)`.
    pub fn s(&self, theta: f64) -> f64 {
        if theta.abs() < self.half_width() {
            2.0 * self.p * (1.0 - self.p) * self.b * (self.omega * theta).cos()
        } else {
            0.0
        }
    }

    pub fn f1(&self, theta: f64) -> f64 {
        let bump = if theta.abs() < self.half_width() { self.b * (self.omega * theta).cos() } else { 0.0 };
        (1.0 + bump) / (2.0 * PI)
    }

    pub fn f0(&self, theta: f64) -> f64 {
        let bump = if theta.abs() < self.half_width() { self.b * (self.omega * theta).cos() } else { 0.0 };
        (1.0 - bump) / (2.0 * PI)
    }

    /// Total masses of `f1` and `f0` over `[-pi, pi)` in closed form. They
    /// are both 1 only when the bump integrates to zero, e.g. `omega = 1`.
    pub fn density_masses(&self) -> (f64, f64) {
        let w = self.half_width().min(PI);
        let bump = self.b * 2.0 * (self.omega * w).sin() / self.omega / (2.0 * PI);
        (1.0 + bump, 1.0 - bump)
    }

    /// `(8 / (pi e))^(1/4) b p (1 - p) sqrt(n / omega)`.
    pub fn gamma_theory(&self) -> f64 {
        (8.0 / (PI * E)).powf(0.25) * self.b * self.p * (1.0 - self.p) * (self.n as f64 / self.omega).sqrt()
    }
}

/// One draw from the circle model.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleSample {
    pub theta: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub s_values: Vec<f64>,
    /// The uniforms thresholded into labels; kept so a sweep over `b` can
    /// reuse the same randomness.
    pub label_uniforms: Vec<f64>,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial))
}

/// Samples angles and label uniforms for trial `trial`. All angles are
/// drawn before any label uniform, so the geometry does not depend on `b`.
pub fn sample_circle(model: &CircleModel, trial: u64) -> Result<CircleSample> {
    model.validate()?;
    let mut rng = trial_rng(model.seed, trial);
    let theta: Vec<f64> = (0..model.n).map(|_| -PI + 2.0 * PI * rng.random::<f64>()).collect();
    let label_uniforms: Vec<f64> = (0..model.n).map(|_| rng.random::<f64>()).collect();
    let points = theta.iter().map(|t| vec![t.cos(), t.sin()]).collect();
    let mut sample = CircleSample { theta, points, labels: Vec::new(), s_values: Vec::new(), label_uniforms };
    relabel(model, &mut sample);
    Ok(sample)
}

/// Recomputes labels and `s` for a model that shares the sample's geometry.
pub fn relabel(model: &CircleModel, sample: &mut CircleSample) {
    sample.s_values = sample.theta.iter().map(|&t| model.s(t)).collect();
    sample.labels = sample
        .s_values
        .iter()
        .zip(&sample.label_uniforms)
        .map(|(&s, &v)| u8::from(v < model.p + s))
        .collect();
}

/// The continuum signal strength, maximized over the diffusion scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaOracle {
    pub gamma: f64,
    /// Maximizing `tau` of the Gaussian `exp(-theta^2 / tau)`.
    pub tau: f64,
}

/// `sup_tau sqrt(n / 2 pi) int G_tau s / sqrt(int G_tau^2)` by trapezoid
/// quadrature on `[-pi, pi]` and a golden-section search in `ln tau`.
pub fn gamma_oracle(model: &CircleModel, quadrature_points: usize) -> Result<GammaOracle> {
    if quadrature_points < 10_000 {
        return Err(Error::invalid("gamma oracle needs at least 1e4 quadrature points"));
    }
    let m = quadrature_points;
    let h = 2.0 * PI / m as f64;
    let nodes: Vec<(f64, f64, f64)> = (0..=m)
        .map(|k| {
            let th = -PI + h * k as f64;
            let w = if k == 0 || k == m { 0.5 * h } else { h };
            (th, w, model.s(th))
        })
        .collect();
    let objective = |ln_tau: f64| {
        let tau = ln_tau.exp();
        let (mut num, mut den) = (0.0, 0.0);
        for &(th, w, s) in &nodes {
            let g = (-th * th / tau).exp();
            num += w * g * s;
            den += w * g * g;
        }
        (model.n as f64 / (2.0 * PI)).sqrt() * num / den.sqrt()
    };
    if model.b == 0.0 {
        return Ok(GammaOracle { gamma: 0.0, tau: 1.0 / (model.omega * model.omega) });
    }
    // Coarse log grid over a wide range, then golden-section refinement
    // around the best cell.
    let (lo, hi) = ((1e-4f64).ln(), (100.0f64).ln());
    let cells = 400;
    let step = (hi - lo) / cells as f64;
    let best = (0..=cells)
        .map(|k| lo + step * k as f64)
        .map(|x| (x, objective(x)))
        .fold((lo, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let g = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..100 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
    }
    let x = 0.5 * (a + b);
    Ok(GammaOracle { gamma: objective(x).max(best.1), tau: x.exp() })
}

/// Smallest `b` and largest `omega` at which the closed-form `gamma` clears
/// `h + sqrt(0.5 ln(1 / (1 - rho)))`.
pub fn power_condition(n: usize, b: f64, omega: f64, p: f64, h: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    let need = h + (0.5 * (1.0 / (1.0 - rho)).ln()).sqrt();
    let c = (8.0 / (PI * E)).powf(0.25);
    let pq = p * (1.0 - p);
    let b_min = need / (c * pq * (n as f64 / omega).sqrt());
    let omega_max = n as f64 * b * b * pq * pq * c * c / (need * need);
    Ok((b_min, omega_max))
}

/// Epsilon policy for simulated trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsChoice {
    Fixed(f64),
    /// Minimize the penalty bound for the trial's own `n`, `alpha` and gap.
    Tuned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub alpha: f64,
    pub epsilon: EpsChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub rejected: bool,
    pub total_rejections: u64,
    /// Largest statistic over the whole net, rejected or not.
    #[serde(serialize_with = "json::real")]
    pub best_statistic: f64,
    pub best_pair: (usize, u64),
    /// Smallest total-variation distance between a reported distribution
    /// and the uniform distribution on `{s > 0}`; 1 if nothing was rejected.
    #[serde(serialize_with = "json::real")]
    pub tv_error: f64,
    /// Mass the strongest rejection puts on `{s > 0}`; 0 if nothing was
    /// rejected.
    #[serde(serialize_with = "json::real")]
    pub top_region_mass: f64,
    #[serde(serialize_with = "json::real")]
    pub epsilon: f64,
    #[serde(serialize_with = "json::real")]
    pub threshold: f64,
}

/// Graph, spectra and net for one trial's geometry, reusable across `b`.
pub struct CircleGraph {
    pub sample: CircleSample,
    pub op: DiffusionOperator,
    pub spectra: Vec<ComponentSpectrum>,
}

impl CircleGraph {
    pub fn build(model: &CircleModel, trial: u64) -> Result<Self> {
        let sample = sample_circle(model, trial)?;
        let k = build_gaussian_affinity(&sample.points, model.sigma, false, DEFAULT_KERNEL_FLOOR)?;
        let op = build_operator(&k, SinkhornOptions::default())?;
        let spectra = decompose(&op)?;
        Ok(Self { sample, op, spectra })
    }

    pub fn net(&self, settings: &TrialSettings) -> Result<EpsNet> {
        let eps = match settings.epsilon {
            EpsChoice::Fixed(e) => e,
            EpsChoice::Tuned => {
                let gap = 1.0 - lambda_below_one(&self.spectra);
                tune_epsilon(self.op.n() as f64, settings.alpha, gap, &EpsGrid::default())?.best_eps
            }
        };
        EpsNet::build(&self.op, &self.spectra, eps)
    }

    /// Runs the known-prior test for `model` (which must share this graph's
    /// geometry) against the provided net.
    pub fn trial(&mut self, model: &CircleModel, net: &EpsNet, alpha: f64) -> Result<TrialOutcome> {
        relabel(model, &mut self.sample);
        let op = &self.op;
        let z: Vec<u8> = op.original_index().iter().map(|&k| self.sample.labels[k]).collect();
        let s: Vec<f64> = op.original_index().iter().map(|&k| self.sample.s_values[k]).collect();
        let labels = LabelSet::new(z, Prior::Known(model.p), Direction::Greater)?;
        let opts = TestOptions { alpha, max_rejections: Some(TV_CANDIDATES) };
        let (report, best) = run_test_with_max(op, &self.spectra, net, &labels, &opts)?;

        let region: Vec<bool> = s.iter().map(|&v| v > 0.0).collect();
        let region_size = region.iter().filter(|&&r| r).count();
        let mut tv_error = 1.0f64;
        let mut top_region_mass = 0.0;
        for (rank, r) in report.rejections.iter().enumerate() {
            let dist = report_distribution(op, &self.spectra, r.i, r.t, 0.9);
            let on_region: f64 =
                dist.nodes.iter().zip(&dist.probabilities).filter(|(&j, _)| region[j]).map(|(_, &w)| w).sum();
            if rank == 0 {
                top_region_mass = on_region;
            }
            if region_size > 0 {
                // TV against the uniform target: mass off the region counts
                // fully, on-region mass is compared with 1 / |region|.
                let target = 1.0 / region_size as f64;
                let mut on_nodes = vec![0.0; op.n()];
                for (&j, &w) in dist.nodes.iter().zip(&dist.probabilities) {
                    on_nodes[j] = w;
                }
                let tv = 0.5
                    * (0..op.n())
                        .map(|j| if region[j] { (on_nodes[j] - target).abs() } else { on_nodes[j] })
                        .sum::<f64>();
                tv_error = tv_error.min(tv);
            }
        }
        Ok(TrialOutcome {
            rejected: report.total_rejections > 0,
            total_rejections: report.total_rejections,
            best_statistic: best.statistic,
            best_pair: (best.i, best.t),
            tv_error: tv_error.clamp(0.0, 1.0),
            top_region_mass,
            epsilon: net.epsilon(),
            threshold: report.threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub model: CircleModel,
    pub trials: usize,
    #[serde(serialize_with = "json::real")]
    pub reject_rate: f64,
    #[serde(serialize_with = "json::real")]
    pub mean_tv_error: f64,
    #[serde(serialize_with = "json::real")]
    pub mean_best_statistic: f64,
    #[serde(serialize_with = "json::real")]
    pub gamma_theory: f64,
    pub outcomes: Vec<TrialOutcome>,
}

impl MonteCarloSummary {
    fn from_outcomes(model: CircleModel, outcomes: Vec<TrialOutcome>) -> Self {
        let k = outcomes.len() as f64;
        let mean = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / k;
        Self {
            model,
            trials: outcomes.len(),
            reject_rate: mean(&|o| f64::from(u8::from(o.rejected))),
            mean_tv_error: mean(&|o| o.tv_error),
            mean_best_statistic: mean(&|o| o.best_statistic),
            gamma_theory: model.gamma_theory(),
            outcomes,
        }
    }
}

/// Runs `trials` independent trials of `model`; trial `k` is seeded with
/// `model.seed + k`.
pub fn monte_carlo(model: &CircleModel, trials: usize, settings: &TrialSettings) -> Result<MonteCarloSummary> {
    Ok(monte_carlo_sweep(model, &[model.b], trials, settings)?.remove(0))
}

/// Like [`monte_carlo`] for several values of `b`. Each trial builds its
/// graph, spectra and net once and reuses them for every `b`, so the
/// summaries share geometry and label randomness.
pub fn monte_carlo_sweep(
    model: &CircleModel,
    bs: &[f64],
    trials: usize,
    settings: &TrialSettings,
) -> Result<Vec<MonteCarloSummary>> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let models: Vec<CircleModel> = bs.iter().map(|&b| CircleModel { b, ..*model }).collect();
    for m in &models {
        m.validate()?;
    }
    let per_trial: Vec<Vec<TrialOutcome>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut graph = CircleGraph::build(model, k)?;
            let net = graph.net(settings)?;
            models.iter().map(|m| graph.trial(m, &net, settings.alpha)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(models
        .iter()
        .enumerate()
        .map(|(bi, m)| MonteCarloSummary::from_outcomes(*m, per_trial.iter().map(|t| t[bi].clone()).collect()))
        .collect())
}
