//! Hybrid sampling: keep the proposed atom types, inject the proposed
//! coordinates and lattice at timestep `τ`, and run the reverse chains down
//! to `t = 0`.
//!
//! Each reverse step is an ancestral DDPM update on the lattice followed by a
//! wrapped predictor and a Langevin corrector on the fractional coordinates.
//! The denoiser predicts `σ_t·∇log q`, so its coordinate output is divided by
//! `σ_t` to obtain the score used in both coordinate updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::{wrap_scalar, Crystal, GeometryError};
use crate::denoiser::{self, DenoiserError, DenoiserOutput, DenoiserParams};
use crate::diffusion::{LatticeNorm, Schedules};
use crate::linalg::{self, Mat3, Vec3};
use crate::par::{self, Execution};
use crate::proposer::{Propose, Proposal, ProposerError};
use crate::rng;
use crate::text::Prompt;

pub const DEFAULT_STEP_SIZE: f64 = 1e-5;
pub const DEFAULT_INFERENCE_STEPS: usize = 900;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("tau {tau} outside 0..={max}")]
    TauOutOfRange { tau: usize, max: usize },
    #[error("chain diverged at t={t}")]
    NonFiniteState { t: usize },
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error("sampled lattice is unusable: {0}")]
    DegenerateOutput(GeometryError),
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
}

/// Anything that maps `(A, X_t, L_t, t)` to `(ε̂_L, ε̂_X)`.
pub trait Denoise: Sync {
    fn denoise(&self, atoms: &[u8], x: &[Vec3], l: &Mat3, t: usize) -> Result<DenoiserOutput, DenoiserError>;
}

impl Denoise for DenoiserParams {
    fn denoise(&self, atoms: &[u8], x: &[Vec3], l: &Mat3, t: usize) -> Result<DenoiserOutput, DenoiserError> {
        denoiser::forward(self, atoms, x, l, t)
    }
}

/// Denoiser that always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoise for ZeroDenoiser {
    fn denoise(&self, _: &[u8], x: &[Vec3], _: &Mat3, _: usize) -> Result<DenoiserOutput, DenoiserError> {
        Ok(DenoiserOutput {
            eps_l: [[0.0; 3]; 3],
            eps_x: vec![[0.0; 3]; x.len()],
        })
    }
}

/// Source of the `ζ ~ N(0, I)` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    /// Every draw is zero; the chain becomes deterministic.
    Zero,
}

struct Noise {
    mode: NoiseMode,
    rng: ChaCha8Rng,
}

impl Noise {
    fn draw(&mut self) -> f64 {
        match self.mode {
            NoiseMode::Gaussian => rng::normal(&mut self.rng),
            NoiseMode::Zero => 0.0,
        }
    }

    fn mat(&mut self) -> Mat3 {
        std::array::from_fn(|_| std::array::from_fn(|_| self.draw()))
    }

    fn coords(&mut self, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| std::array::from_fn(|_| self.draw())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Injection timestep; `None` means `T/10`.
    pub tau: Option<usize>,
    pub step_size: f64,
    /// Reverse steps used when starting from `t = T`.
    pub inference_steps: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    pub trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau: None,
            step_size: DEFAULT_STEP_SIZE,
            inference_steps: DEFAULT_INFERENCE_STEPS,
            seed: 0,
            noise: NoiseMode::Gaussian,
            trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn tau_for(&self, sched: &Schedules) -> usize {
        self.tau.unwrap_or(sched.steps() / 10)
    }

    pub fn validate(&self, sched: &Schedules) -> Result<(), SampleError> {
        let tau = self.tau_for(sched);
        if tau > sched.steps() {
            return Err(SampleError::TauOutOfRange {
                tau,
                max: sched.steps(),
            });
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(SampleError::BadConfig("step_size must be positive".into()));
        }
        if self.inference_steps == 0 {
            return Err(SampleError::BadConfig("inference_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    /// Lattice after this step, in Å.
    pub lattice: Mat3,
    pub mean_abs_score: f64,
    pub mean_abs_eps_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMaterial {
    pub crystal: Crystal,
    /// `None` for structure prediction from pure noise.
    pub proposal: Option<Proposal>,
    pub tau_used: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<TraceStep>>,
}

/// Timesteps visited by the reverse chain starting at `tau`, paired with the
/// timestep each update moves to.
pub fn reverse_grid(tau: usize, total: usize, inference_steps: usize) -> Vec<(usize, usize)> {
    if tau == 0 {
        return Vec::new();
    }
    let ts: Vec<usize> = if tau == total && inference_steps < total {
        if inference_steps == 1 {
            vec![total]
        } else {
            let span = (total - 1) as f64 / (inference_steps - 1) as f64;
            (0..inference_steps)
                .map(|k| 1 + (k as f64 * span).round() as usize)
                .collect()
        }
    } else {
        (1..=tau).collect()
    };
    let mut out = Vec::with_capacity(ts.len());
    for k in (0..ts.len()).rev() {
        out.push((ts[k], if k == 0 { 0 } else { ts[k - 1] }));
    }
    out
}

fn wrap3(v: Vec3) -> Vec3 {
    std::array::from_fn(|k| wrap_scalar(v[k]))
}

/// The shared reverse loop. `l` is in standardized units on entry.
#[allow(clippy::too_many_arguments)]
fn reverse_chain<D: Denoise + ?Sized>(
    atoms: &[u8],
    mut x: Vec<Vec3>,
    mut l: Mat3,
    tau: usize,
    den: &D,
    sched: &Schedules,
    norm: &LatticeNorm,
    cfg: &SamplerConfig,
    noise: &mut Noise,
) -> Result<(Vec<Vec3>, Mat3, Option<Vec<TraceStep>>), SampleError> {
    let n = atoms.len();
    let mut trace = cfg.trace.then(Vec::new);
    for (t, prev) in reverse_grid(tau, sched.steps(), cfg.inference_steps) {
        let ab_t = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(prev);
        let beta = if prev + 1 == t {
            sched.beta(t)
        } else {
            1.0 - ab_t / ab_prev
        };
        let alpha = 1.0 - beta;
        let (s_t, s_prev) = (sched.sigma(t), sched.sigma(prev));

        let out = den.denoise(atoms, &x, &l, t)?;
        // lattice: ancestral step, no fresh noise on the final update
        let zl = noise.mat();
        let post_std = if prev == 0 {
            0.0
        } else {
            (beta * (1.0 - ab_prev) / (1.0 - ab_t)).sqrt()
        };
        let k = beta / (1.0 - ab_t).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let l_prev: Mat3 = std::array::from_fn(|i| {
            std::array::from_fn(|j| inv_sqrt_alpha * (l[i][j] - k * out.eps_l[i][j]) + post_std * zl[i][j])
        });

        // coordinates: predictor
        let dvar = s_t * s_t - s_prev * s_prev;
        let pred_std = s_prev * dvar.sqrt() / s_t;
        let zx = noise.coords(n);
        let x_half: Vec<Vec3> = x
            .iter()
            .zip(&out.eps_x)
            .zip(&zx)
            .map(|((xi, e), z)| wrap3(std::array::from_fn(|c| xi[c] + dvar * (e[c] / s_t) + pred_std * z[c])))
            .collect();

        // coordinates: corrector at the updated lattice
        let out2 = den.denoise(atoms, &x_half, &l_prev, t)?;
        let eta = cfg.step_size * s_prev / s_t;
        let corr_std = (2.0 * eta).sqrt();
        let zc = noise.coords(n);
        let x_prev: Vec<Vec3> = x_half
            .iter()
            .zip(&out2.eps_x)
            .zip(&zc)
            .map(|((xi, e), z)| wrap3(std::array::from_fn(|c| xi[c] + eta * (e[c] / s_t) + corr_std * z[c])))
            .collect();

        if !linalg::is_finite(&l_prev) || !x_prev.iter().flatten().all(|v| v.is_finite()) {
            return Err(SampleError::NonFiniteState { t });
        }
        if let Some(tr) = trace.as_mut() {
            let mean_abs = |v: &[Vec3]| v.iter().flatten().map(|e| e.abs()).sum::<f64>() / (3 * n) as f64;
            tr.push(TraceStep {
                t,
                lattice: norm.destandardize(&l_prev),
                mean_abs_score: mean_abs(&out.eps_x) / s_t,
                mean_abs_eps_l: out.eps_l.iter().flatten().map(|e| e.abs()).sum::<f64>() / 9.0,
            });
        }
        x = x_prev;
        l = l_prev;
    }
    Ok((x, l, trace))
}

fn noise_for(cfg: &SamplerConfig) -> Noise {
    Noise {
        mode: cfg.noise,
        rng: rng::stream(cfg.seed, &[3]),
    }
}

/// Refines a proposal from `τ` down to `t = 0`.
pub fn sample<D: Denoise + ?Sized>(
    proposal: &Proposal,
    den: &D,
    sched: &Schedules,
    norm: &LatticeNorm,
    cfg: &SamplerConfig,
) -> Result<GeneratedMaterial, SampleError> {
    cfg.validate(sched)?;
    let tau = cfg.tau_for(sched);
    let atoms = proposal.atom_types().to_vec();
    if atoms.is_empty() {
        return Err(SampleError::InvalidProposal("no atoms".into()));
    }
    if tau == 0 {
        return Ok(GeneratedMaterial {
            crystal: proposal.crystal.clone(),
            proposal: Some(proposal.clone()),
            tau_used: 0,
            seed: cfg.seed,
            trace: cfg.trace.then(Vec::new),
        });
    }
    let x: Vec<Vec3> = proposal.frac_coords().iter().map(|v| wrap3(*v)).collect();
    let l = norm.standardize(proposal.lattice());
    let mut noise = noise_for(cfg);
    let (x, l, trace) = reverse_chain(&atoms, x, l, tau, den, sched, norm, cfg, &mut noise)?;
    let crystal =
        Crystal::new(atoms, x, norm.destandardize(&l)).map_err(SampleError::DegenerateOutput)?;
    Ok(GeneratedMaterial {
        crystal,
        proposal: Some(proposal.clone()),
        tau_used: tau,
        seed: cfg.seed,
        trace,
    })
}

/// Structure prediction for fixed atom types, starting from pure noise at `t = T`.
pub fn sample_csp<D: Denoise + ?Sized>(
    atoms: &[u8],
    den: &D,
    sched: &Schedules,
    norm: &LatticeNorm,
    cfg: &SamplerConfig,
) -> Result<GeneratedMaterial, SampleError> {
    let cfg = SamplerConfig {
        tau: Some(sched.steps()),
        ..*cfg
    };
    cfg.validate(sched)?;
    if atoms.is_empty() {
        return Err(SampleError::InvalidProposal("no atoms".into()));
    }
    if let Some(&z) = atoms.iter().find(|&&z| !crate::elements::is_valid_z(z as u32)) {
        return Err(SampleError::InvalidProposal(format!("unknown element Z={z}")));
    }
    let mut init = rng::stream(cfg.seed, &[4]);
    let x: Vec<Vec3> = (0..atoms.len())
        .map(|_| [init.gen(), init.gen(), init.gen()])
        .collect();
    let l: Mat3 = std::array::from_fn(|_| std::array::from_fn(|_| rng::normal(&mut init)));
    let mut noise = noise_for(&cfg);
    let (x, l, trace) = reverse_chain(atoms, x, l, sched.steps(), den, sched, norm, &cfg, &mut noise)?;
    let crystal = Crystal::new(atoms.to_vec(), x, norm.destandardize(&l))
        .map_err(SampleError::DegenerateOutput)?;
    Ok(GeneratedMaterial {
        crystal,
        proposal: None,
        tau_used: sched.steps(),
        seed: cfg.seed,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub index: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub requested: usize,
    pub generated: usize,
    pub proposer_failures: usize,
    pub sampler_failures: usize,
    /// Raw proposer draws discarded by validation before acceptance.
    pub rejected_draws: u64,
    pub failures: Vec<BatchFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub items: Vec<GeneratedMaterial>,
    pub report: BatchReport,
}

/// Seeds of item `index` as `(proposer, sampler)`.
pub fn item_seeds(seed: u64, index: usize) -> (u64, u64) {
    let base = rng::derive_seed(seed, &[5, index as u64]);
    (rng::derive_seed(base, &[0]), rng::derive_seed(base, &[1]))
}

/// `n` independent propose → sample pipelines.
#[allow(clippy::too_many_arguments)]
pub fn generate_batch<P: Propose + ?Sized, D: Denoise + ?Sized>(
    prompt: &Prompt,
    n: usize,
    proposer: &P,
    den: &D,
    sched: &Schedules,
    norm: &LatticeNorm,
    cfg: &SamplerConfig,
    exec: Execution,
) -> Result<Batch, SampleError> {
    if n == 0 {
        return Err(SampleError::BadConfig("n must be >= 1".into()));
    }
    cfg.validate(sched)?;
    let results = par::map_range(n, exec, |i| {
        let (ps, ss) = item_seeds(cfg.seed, i);
        let proposal = proposer.propose(prompt, ps).map_err(|e| (i, "propose", e.to_string()))?;
        let item_cfg = SamplerConfig { seed: ss, ..*cfg };
        let attempts = proposal.attempts;
        sample(&proposal, den, sched, norm, &item_cfg)
            .map(|g| (g, attempts))
            .map_err(|e| (i, "sample", e.to_string()))
    });
    let mut report = BatchReport {
        requested: n,
        ..BatchReport::default()
    };
    let mut items = Vec::with_capacity(n);
    for r in results {
        match r {
            Ok((g, attempts)) => {
                report.rejected_draws += u64::from(attempts.saturating_sub(1));
                items.push(g);
            }
            Err((index, stage, message)) => {
                if stage == "propose" {
                    report.proposer_failures += 1;
                } else {
                    report.sampler_failures += 1;
                }
                report.failures.push(BatchFailure {
                    index,
                    stage: stage.into(),
                    message,
                });
            }
        }
    }
    report.generated = items.len();
    Ok(Batch { items, report })
}

/// Convenience wrapper for a proposer error surfaced outside a batch.
pub fn propose_error(e: ProposerError) -> SampleError {
    SampleError::InvalidProposal(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::min_periodic_distance;
    use crate::crystal::ImageSearch;
    use crate::diffusion::make_schedules;
    use crate::proposer::FileProposer;
    use crate::text::{build_prompt, PromptKind};
    use approx::assert_relative_eq;

    fn sched() -> Schedules {
        make_schedules(1000, 0.005, 0.6).unwrap()
    }

    fn proposal() -> Proposal {
        Proposal {
            crystal: Crystal::new(
                vec![38, 22, 8, 8, 8],
                vec![
                    [0.01, 0.02, 0.0],
                    [0.5, 0.49, 0.51],
                    [0.5, 0.5, 0.03],
                    [0.52, 0.0, 0.5],
                    [0.0, 0.5, 0.48],
                ],
                [[3.9, 0.05, 0.0], [0.0, 3.95, 0.0], [0.02, 0.0, 3.88]],
            )
            .unwrap(),
            source: "test".into(),
            prompt: build_prompt(PromptKind::Unconditional).unwrap(),
            attempts: 1,
        }
    }

    /// Denoiser with fixed outputs, for hand-traced updates.
    struct Constant(DenoiserOutput);

    impl Denoise for Constant {
        fn denoise(&self, _: &[u8], _: &[Vec3], _: &Mat3, _: usize) -> Result<DenoiserOutput, DenoiserError> {
            Ok(self.0.clone())
        }
    }

    /// Exact noise prediction when every training lattice is the
    /// standardized origin.
    struct PointMass {
        sched: Schedules,
    }

    impl Denoise for PointMass {
        fn denoise(&self, _: &[u8], x: &[Vec3], l: &Mat3, t: usize) -> Result<DenoiserOutput, DenoiserError> {
            let k = 1.0 / (1.0 - self.sched.alpha_bar(t)).sqrt();
            Ok(DenoiserOutput {
                eps_l: linalg::scale(l, k),
                eps_x: vec![[0.0; 3]; x.len()],
            })
        }
    }

    #[test]
    fn tau_zero_is_identity() {
        let p = proposal();
        let cfg = SamplerConfig {
            tau: Some(0),
            ..SamplerConfig::default()
        };
        let g = sample(&p, &ZeroDenoiser, &sched(), &LatticeNorm::identity(), &cfg).unwrap();
        assert_eq!(g.crystal, p.crystal);
        assert!(matches!(
            sample(
                &p,
                &ZeroDenoiser,
                &sched(),
                &LatticeNorm::identity(),
                &SamplerConfig {
                    tau: Some(1001),
                    ..cfg
                }
            ),
            Err(SampleError::TauOutOfRange { .. })
        ));
    }

    #[test]
    fn single_step_hand_trace() {
        let s = sched();
        let p = proposal();
        let cfg = SamplerConfig {
            tau: Some(1),
            noise: NoiseMode::Zero,
            ..SamplerConfig::default()
        };
        let g = sample(&p, &ZeroDenoiser, &s, &LatticeNorm::identity(), &cfg).unwrap();
        let a1 = 1.0 - s.beta(1);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(g.crystal.lattice()[i][j], p.lattice()[i][j] / a1.sqrt(), max_relative = 1e-12);
            }
        }
        assert_eq!(g.crystal.frac_coords(), p.frac_coords());

        // non-zero constant outputs exercise every coefficient of the update
        let el = [[0.3, -0.1, 0.2], [0.0, 0.5, -0.4], [0.1, 0.1, -0.2]];
        let ex = vec![[0.2, -0.3, 0.1]; 5];
        let den = Constant(DenoiserOutput {
            eps_l: el,
            eps_x: ex.clone(),
        });
        let cfg2 = SamplerConfig { tau: Some(2), ..cfg };
        let g = sample(&p, &den, &s, &LatticeNorm::identity(), &cfg2).unwrap();
        let mut l = *p.lattice();
        let mut x: Vec<Vec3> = p.frac_coords().to_vec();
        for t in [2usize, 1] {
            let (b, ab) = (s.beta(t), s.alpha_bar(t));
            for i in 0..3 {
                for j in 0..3 {
                    l[i][j] = (l[i][j] - b / (1.0 - ab).sqrt() * el[i][j]) / (1.0 - b).sqrt();
                }
            }
            let (st, sp) = (s.sigma(t), s.sigma(t - 1));
            let eta = DEFAULT_STEP_SIZE * sp / st;
            for (xi, e) in x.iter_mut().zip(&ex) {
                for c in 0..3 {
                    let half = wrap_scalar(xi[c] + (st * st - sp * sp) * e[c] / st);
                    xi[c] = wrap_scalar(half + eta * e[c] / st);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(g.crystal.lattice()[i][j], l[i][j], max_relative = 1e-12);
            }
        }
        for (u, v) in g.crystal.frac_coords().iter().zip(&x) {
            for c in 0..3 {
                assert!((u[c] - v[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_retains_atoms() {
        let s = sched();
        let p = proposal();
        let cfg = SamplerConfig {
            seed: 42,
            tau: Some(50),
            trace: true,
            ..SamplerConfig::default()
        };
        let a = sample(&p, &ZeroDenoiser, &s, &LatticeNorm::identity(), &cfg).unwrap();
        let b = sample(&p, &ZeroDenoiser, &s, &LatticeNorm::identity(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.crystal.atom_types(), p.atom_types());
        assert_eq!(a.trace.as_ref().unwrap().len(), 50);
        assert!(a
            .crystal
            .frac_coords()
            .iter()
            .flatten()
            .all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn strided_grid_when_starting_from_pure_noise() {
        let g = reverse_grid(1000, 1000, 900);
        assert_eq!(g.len(), 900);
        assert_eq!(g[0].0, 1000);
        assert_eq!(g.last().unwrap(), &(1, 0));
        assert!(g.windows(2).all(|w| w[0].1 == w[1].0 && w[1].0 < w[0].0));
        assert_eq!(reverse_grid(100, 1000, 900).len(), 100);
        assert!(reverse_grid(0, 1000, 900).is_empty());
    }

    #[test]
    fn csp_keeps_composition_and_wraps() {
        let s = make_schedules(60, 0.005, 0.6).unwrap();
        let cfg = SamplerConfig {
            seed: 3,
            inference_steps: 50,
            ..SamplerConfig::default()
        };
        let norm = LatticeNorm {
            mean: linalg::scale(&linalg::IDENTITY, 4.0),
            std: 0.2,
        };
        let atoms = [38, 22, 8, 8, 8];
        let den = PointMass { sched: s.clone() };
        for seed in 0..5 {
            let g = sample_csp(&atoms, &den, &s, &norm, &SamplerConfig { seed, ..cfg }).unwrap();
            assert_eq!(g.crystal.atom_types(), &atoms);
            assert_eq!(g.tau_used, 60);
            assert!(g.crystal.frac_coords().iter().flatten().all(|v| (0.0..1.0).contains(v)));
            // the exact denoiser of a point mass at the standardized origin
            // recovers the mean lattice
            for i in 0..3 {
                for j in 0..3 {
                    assert!((g.crystal.lattice()[i][j] - norm.mean[i][j]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn perturbation_grows_with_tau() {
        let s = sched();
        let p = proposal();
        let l = p.lattice();
        let mut means = Vec::new();
        for tau in [0, 100, 250] {
            let mut total = 0.0;
            for seed in 0..200 {
                let cfg = SamplerConfig {
                    tau: Some(tau),
                    seed,
                    ..SamplerConfig::default()
                };
                let g = sample(&p, &ZeroDenoiser, &s, &LatticeNorm::identity(), &cfg).unwrap();
                for (a, b) in g.crystal.frac_coords().iter().zip(p.frac_coords()) {
                    total += min_periodic_distance(a, b, l, ImageSearch::Wide).unwrap();
                }
            }
            means.push(total / 200.0);
        }
        assert_eq!(means[0], 0.0);
        assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
    }

    #[test]
    fn batch_matches_single_pipeline() {
        let s = sched();
        let p = proposal();
        let fp = FileProposer::new(vec![p.crystal.clone()], 4, "one").unwrap();
        let cfg = SamplerConfig {
            tau: Some(20),
            seed: 9,
            ..SamplerConfig::default()
        };
        let prompt = build_prompt(PromptKind::Unconditional).unwrap();
        let norm = LatticeNorm::identity();
        let b = generate_batch(&prompt, 1, &fp, &ZeroDenoiser, &s, &norm, &cfg, Execution::Sequential).unwrap();
        let (ps, ss) = item_seeds(9, 0);
        let single = sample(
            &fp.propose(&prompt, ps).unwrap(),
            &ZeroDenoiser,
            &s,
            &norm,
            &SamplerConfig { seed: ss, ..cfg },
        )
        .unwrap();
        assert_eq!(b.items, vec![single]);
        let seq = generate_batch(&prompt, 6, &fp, &ZeroDenoiser, &s, &norm, &cfg, Execution::Sequential).unwrap();
        let par = generate_batch(&prompt, 6, &fp, &ZeroDenoiser, &s, &norm, &cfg, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.report.generated, 6);

        let missing = build_prompt(PromptKind::Composition("KBr".into())).unwrap();
        let b = generate_batch(&missing, 3, &fp, &ZeroDenoiser, &s, &norm, &cfg, Execution::Sequential).unwrap();
        assert_eq!(b.report.proposer_failures, 3);
        assert!(b.items.is_empty());
    }

    #[test]
    fn permuting_proposal_permutes_output() {
        let s = sched();
        let p = proposal();
        let params = denoiser::init_params(
            1,
            denoiser::DenoiserConfig {
                hidden: 8,
                layers: 2,
                n_freq: 2,
            },
        )
        .unwrap();
        let cfg = SamplerConfig {
            tau: Some(30),
            noise: NoiseMode::Zero,
            ..SamplerConfig::default()
        };
        let norm = LatticeNorm {
            mean: linalg::scale(&linalg::IDENTITY, 3.9),
            std: 0.3,
        };
        let base = sample(&p, &params, &s, &norm, &cfg).unwrap();
        let perm = [3, 0, 4, 2, 1];
        let pp = Proposal {
            crystal: p.crystal.permuted(&perm),
            ..p.clone()
        };
        let out = sample(&pp, &params, &s, &norm, &cfg).unwrap();
        for (i, &k) in perm.iter().enumerate() {
            assert_eq!(out.crystal.atom_types()[i], base.crystal.atom_types()[k]);
            for c in 0..3 {
                let d = out.crystal.frac_coords()[i][c] - base.crystal.frac_coords()[k][c];
                assert!((d - d.round()).abs() < 1e-5);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((out.crystal.lattice()[i][j] - base.crystal.lattice()[i][j]).abs() < 1e-5);
            }
        }
    }
}
