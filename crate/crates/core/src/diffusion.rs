//! Noise schedules, forward corruption, wrapped-normal score and losses.
//!
//! The lattice follows a DDPM chain with a cosine `ᾱ` schedule; fractional
//! coordinates follow a score-based chain on the torus with exponentially
//! spaced `σ_t`. Both tables are indexed `0..=T` with the `t = 0` entry being
//! the clean state (`ᾱ_0 = 1`, `σ_0 = 0`).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::{canonical_diff, wrap_scalar};
use crate::linalg::{Mat3, Vec3};
use crate::rng;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_SIGMA_MIN: f64 = 0.005;
pub const DEFAULT_SIGMA_MAX: f64 = 0.6;
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;
/// Largest admissible total-variation distance between the terminal
/// wrapped normal and the uniform distribution.
pub const TERMINAL_TV_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("bad schedule parameters: {0}")]
    BadScheduleParams(String),
    #[error("timestep {t} outside 1..={max}")]
    BadTimestep { t: usize, max: usize },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedules {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

fn cosine_f(t: f64, steps: f64) -> f64 {
    let x = (t / steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
    x.cos().powi(2)
}

pub fn make_schedules(steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Schedules, DiffusionError> {
    let bad = |m: String| Err(DiffusionError::BadScheduleParams(m));
    if steps < 2 {
        return bad(format!("T must be >= 2, got {steps}"));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return bad(format!("need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"));
    }
    let tv = wrapped_normal_tv_from_uniform(sigma_max);
    if tv > TERMINAL_TV_BOUND {
        return bad(format!(
            "sigma_max {sigma_max} leaves the terminal distribution {tv:.2e} from uniform in total variation"
        ));
    }
    let tf = steps as f64;
    let mut betas = vec![0.0; steps + 1];
    let mut alpha_bars = vec![1.0; steps + 1];
    for t in 1..=steps {
        let b = (1.0 - cosine_f(t as f64, tf) / cosine_f(t as f64 - 1.0, tf)).min(MAX_BETA);
        betas[t] = b;
        alpha_bars[t] = alpha_bars[t - 1] * (1.0 - b);
    }
    let ratio = sigma_max / sigma_min;
    let mut sigmas = vec![0.0; steps + 1];
    for (t, s) in sigmas.iter_mut().enumerate().skip(1) {
        *s = sigma_min * ratio.powf((t - 1) as f64 / (tf - 1.0));
    }
    Ok(Schedules {
        config: ScheduleConfig {
            steps,
            sigma_min,
            sigma_max,
        },
        betas,
        alpha_bars,
        sigmas,
    })
}

impl Schedules {
    pub fn from_config(c: &ScheduleConfig) -> Result<Self, DiffusionError> {
        make_schedules(c.steps, c.sigma_min, c.sigma_max)
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn check_timestep(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.config.steps {
            return Err(DiffusionError::BadTimestep {
                t,
                max: self.config.steps,
            });
        }
        Ok(())
    }
}

/// Affine lattice standardization `(L − mean) / std` applied before the
/// lattice chain and inverted after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeNorm {
    pub mean: Mat3,
    pub std: f64,
}

/// Smallest admissible standardization scale, in Å.
pub const MIN_LATTICE_STD: f64 = 0.1;

impl LatticeNorm {
    pub fn identity() -> Self {
        Self {
            mean: [[0.0; 3]; 3],
            std: 1.0,
        }
    }

    /// Entrywise mean matrix and a single RMS scale over all entries.
    pub fn fit(lattices: &[Mat3]) -> Self {
        if lattices.is_empty() {
            return Self::identity();
        }
        let n = lattices.len() as f64;
        let mut mean = [[0.0; 3]; 3];
        for l in lattices {
            for i in 0..3 {
                for j in 0..3 {
                    mean[i][j] += l[i][j] / n;
                }
            }
        }
        let mut var = 0.0;
        for l in lattices {
            for i in 0..3 {
                for j in 0..3 {
                    var += (l[i][j] - mean[i][j]).powi(2);
                }
            }
        }
        let std = (var / (9.0 * n)).sqrt().max(MIN_LATTICE_STD);
        Self { mean, std }
    }

    pub fn standardize(&self, l: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| (l[i][j] - self.mean[i][j]) / self.std))
    }

    pub fn destandardize(&self, l: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| l[i][j] * self.std + self.mean[i][j]))
    }
}

/// Standard-normal noise for one crystal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePair {
    pub eps_x: Vec<Vec3>,
    pub eps_l: Mat3,
}

impl NoisePair {
    pub fn sample(n: usize, r: &mut impl Rng) -> Self {
        let mut v3 = || [rng::normal(r), rng::normal(r), rng::normal(r)];
        let eps_l = [v3(), v3(), v3()];
        let eps_x = (0..n).map(|_| v3()).collect();
        Self { eps_x, eps_l }
    }
}

/// `L_t = √ᾱ_t L_0 + √(1−ᾱ_t) ε`.
pub fn forward_lattice(l0: &Mat3, t: usize, eps: &Mat3, s: &Schedules) -> Result<Mat3, DiffusionError> {
    s.check_timestep(t)?;
    Ok(lattice_mix(l0, eps, s.alpha_bar(t)))
}

pub(crate) fn lattice_mix(l0: &Mat3, eps: &Mat3, alpha_bar: f64) -> Mat3 {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt());
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a * l0[i][j] + b * eps[i][j];
        }
    }
    out
}

/// `X_t = wrap(X_0 + σ_t ε)`.
pub fn forward_coords(x0: &[Vec3], t: usize, eps: &[Vec3], s: &Schedules) -> Result<Vec<Vec3>, DiffusionError> {
    s.check_timestep(t)?;
    if x0.len() != eps.len() {
        return Err(DiffusionError::ShapeMismatch(x0.len(), eps.len()));
    }
    Ok(coords_shift(x0, eps, s.sigma(t)))
}

pub(crate) fn coords_shift(x0: &[Vec3], eps: &[Vec3], sigma: f64) -> Vec<Vec3> {
    x0.iter()
        .zip(eps)
        .map(|(x, e)| std::array::from_fn(|k| wrap_scalar(x[k] + sigma * e[k])))
        .collect()
}

/// Number of periodic images summed on each side for a given σ.
pub fn image_cutoff(sigma: f64) -> i64 {
    // ⌈5σ⌉+2 covers σ ≲ 1; the 8.5σ term keeps the neglected tail below
    // ~1e-15 of the sum for wider kernels.
    let a = (5.0 * sigma).ceil() as i64 + 2;
    let b = (8.5 * sigma).ceil() as i64;
    a.max(b).max(3)
}

/// Score `d/dd log Σ_k exp(−(d+k)²/2σ²)` of the 1-D wrapped normal.
/// `d` is reduced to its canonical representative first.
pub fn wn_score_scalar(d: f64, sigma: f64) -> f64 {
    let d = canonical_diff(d);
    let kc = image_cutoff(sigma);
    let inv = 1.0 / (sigma * sigma);
    // log-sum-exp weights, shifted by the largest exponent (the k = 0 image)
    let e0 = -d * d * 0.5 * inv;
    // images are paired as ±k so that d = 0 yields exactly zero
    let (mut num, mut den) = (d, 1.0);
    for k in (1..=kc).rev() {
        let (yp, ym) = (d + k as f64, d - k as f64);
        let wp = (-yp * yp * 0.5 * inv - e0).exp();
        let wm = (-ym * ym * 0.5 * inv - e0).exp();
        num += wp * yp + wm * ym;
        den += wp + wm;
    }
    -inv * num / den
}

/// Entrywise wrapped-normal score.
pub fn wn_score(d: &[Vec3], sigma: f64) -> Result<Vec<Vec3>, DiffusionError> {
    if !(sigma > 0.0) {
        return Err(DiffusionError::NonPositiveSigma(sigma));
    }
    Ok(d.iter()
        .map(|v| std::array::from_fn(|k| wn_score_scalar(v[k], sigma)))
        .collect())
}

/// Log-density (up to a constant) of the 1-D wrapped normal.
pub fn wn_log_density(d: f64, sigma: f64) -> f64 {
    let d = canonical_diff(d);
    let kc = image_cutoff(sigma);
    let inv = 1.0 / (sigma * sigma);
    let e0 = -d * d * 0.5 * inv;
    let s: f64 = (-kc..=kc)
        .map(|k| {
            let y = d + k as f64;
            (-y * y * 0.5 * inv - e0).exp()
        })
        .sum();
    e0 + s.ln()
}

/// Normalized wrapped-normal density on `[0,1)`.
pub fn wn_density(d: f64, sigma: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI).sqrt() * sigma;
    wn_log_density(d, sigma).exp() / norm
}

/// Total-variation distance between a zero-mean wrapped normal and U(0,1),
/// by midpoint quadrature.
pub fn wrapped_normal_tv_from_uniform(sigma: f64) -> f64 {
    let n = 4096;
    (0..n)
        .map(|i| {
            let d = (i as f64 + 0.5) / n as f64 - 0.5;
            (wn_density(d, sigma) - 1.0).abs()
        })
        .sum::<f64>()
        * 0.5
        / n as f64
}

/// Training target `σ·∇ log q(X_t | X_0)` for the coordinate denoiser.
pub fn coord_target(x0: &[Vec3], xt: &[Vec3], sigma: f64) -> Result<Vec<Vec3>, DiffusionError> {
    if x0.len() != xt.len() {
        return Err(DiffusionError::ShapeMismatch(x0.len(), xt.len()));
    }
    if !(sigma > 0.0) {
        return Err(DiffusionError::NonPositiveSigma(sigma));
    }
    Ok(x0
        .iter()
        .zip(xt)
        .map(|(a, b)| std::array::from_fn(|k| sigma * wn_score_scalar(b[k] - a[k], sigma)))
        .collect())
}

/// Mean squared difference over all entries.
pub fn coord_loss(target: &[Vec3], pred: &[Vec3]) -> Result<f64, DiffusionError> {
    if target.len() != pred.len() {
        return Err(DiffusionError::ShapeMismatch(target.len(), pred.len()));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = target
        .iter()
        .zip(pred)
        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2)))
        .sum();
    Ok(s / (3 * target.len()) as f64)
}

pub fn lattice_loss(eps: &Mat3, pred: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (eps[i][j] - pred[i][j]).powi(2);
        }
    }
    s / 9.0
}
