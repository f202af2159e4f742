//! Denoiser training on the structure-prediction objective
//! `ℒ = ℒ_lattice + ℒ_coord`.
//!
//! Every random draw is derived from `(seed, step, slot)` or `(seed, epoch)`,
//! so a run is a pure function of its configuration and dataset, and resuming
//! from a checkpoint reproduces the uninterrupted run bit for bit. Batch
//! gradients are reduced over fixed chunks in slot order, which keeps the
//! sequential and parallel execution modes bit-identical as well.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::Crystal;
use crate::denoiser::{self, DenoiserConfig, DenoiserError, DenoiserParams};
use crate::diffusion::{self, DiffusionError, LatticeNorm, NoisePair, ScheduleConfig, Schedules};
use crate::linalg::{Mat3, Vec3};
use crate::par::{self, Execution};
use crate::rng;

/// Slots per gradient chunk. Fixed so the reduction tree does not depend on
/// the number of workers.
const CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: u64,
    pub standardize_lattice: bool,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 10,
            max_steps: None,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            checkpoint_every: 0,
            standardize_lattice: true,
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm > 0.0) {
            return bad("adam_eps and clip_norm must be positive");
        }
        self.denoiser.validate()?;
        Schedules::from_config(&self.schedule)?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        self.max_steps
            .unwrap_or(self.epochs as u64 * self.steps_per_epoch(dataset_len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub coord: f64,
    pub lattice: f64,
    pub total: f64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam step on flat slices; `t` is the 1-based step count.
pub fn adam_update_slice(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    h: &AdamHyper,
) -> Result<(), TrainError> {
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "params {}, grads {}, moments {}/{}",
            p.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    let bc1 = 1.0 - h.beta1.powf(t as f64);
    let bc2 = 1.0 - h.beta2.powf(t as f64);
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= h.lr * mh / (vh.sqrt() + h.eps);
    }
    Ok(())
}

pub fn adam_update(
    params: &mut DenoiserParams,
    grads: &DenoiserParams,
    m: &mut DenoiserParams,
    v: &mut DenoiserParams,
    t: u64,
    h: &AdamHyper,
) -> Result<(), TrainError> {
    if grads.config != params.config || m.config != params.config || v.config != params.config {
        return Err(TrainError::ShapeMismatch("parameter containers differ in config".into()));
    }
    let gs = grads.tensors();
    for (((p, g), mm), vv) in params
        .tensors_mut()
        .into_iter()
        .zip(gs)
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        adam_update_slice(p, g, mm, vv, t, h)?;
    }
    Ok(())
}

/// Complete training state; also the on-disk checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: DenoiserParams,
    pub adam_m: DenoiserParams,
    pub adam_v: DenoiserParams,
    pub step: u64,
    pub lattice_norm: LatticeNorm,
    pub log: Vec<LossRecord>,
}

impl Checkpoint {
    /// Fresh state: initialized parameters, zero moments, step 0.
    pub fn init(config: &TrainConfig, dataset: &[Crystal]) -> Result<Self, TrainError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let lattice_norm = if config.standardize_lattice {
            let ls: Vec<Mat3> = dataset.iter().map(|c| *c.lattice()).collect();
            LatticeNorm::fit(&ls)
        } else {
            LatticeNorm::identity()
        };
        let params = denoiser::init_params(config.seed, config.denoiser)?;
        Ok(Self {
            config: config.clone(),
            adam_m: DenoiserParams::zeros(config.denoiser),
            adam_v: DenoiserParams::zeros(config.denoiser),
            params,
            step: 0,
            lattice_norm,
            log: Vec::new(),
        })
    }

    pub fn schedules(&self) -> Result<Schedules, TrainError> {
        Ok(Schedules::from_config(&self.config.schedule)?)
    }
}

/// Dataset indices for every slot of a step, drawn from per-epoch shuffles
/// with wraparound across epoch boundaries.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for s in 0..batch_size as u64 {
        let pos = step * batch_size as u64 + s;
        let epoch = pos / n as u64;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::stream(seed, &[1, epoch]));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("set above").1[(pos % n as u64) as usize]);
    }
    out
}

struct SlotOutcome {
    coord: f64,
    lattice: f64,
}

struct Noised {
    t: usize,
    noise: NoisePair,
    lt: Mat3,
    xt: Vec<Vec3>,
    target: Vec<Vec3>,
}

fn noised(sched: &Schedules, norm: &LatticeNorm, crystal: &Crystal, r: &mut ChaCha8Rng) -> Result<Noised, TrainError> {
    let t = r.gen_range(1..=sched.steps());
    let noise = NoisePair::sample(crystal.num_atoms(), r);
    let l0 = norm.standardize(crystal.lattice());
    let lt = diffusion::forward_lattice(&l0, t, &noise.eps_l, sched)?;
    let xt = diffusion::forward_coords(crystal.frac_coords(), t, &noise.eps_x, sched)?;
    let target = diffusion::coord_target(crystal.frac_coords(), &xt, sched.sigma(t))?;
    Ok(Noised { t, noise, lt, xt, target })
}

/// Loss averaged over `draws` fixed `(crystal, t, noise)` samples; the same
/// `seed` always yields the same draws, so values are comparable across
/// parameter sets.
pub fn eval_loss(
    params: &DenoiserParams,
    sched: &Schedules,
    norm: &LatticeNorm,
    dataset: &[Crystal],
    seed: u64,
    draws: usize,
    exec: Execution,
) -> Result<LossRecord, TrainError> {
    if dataset.is_empty() || draws == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let parts = par::map_range(draws, exec, |k| {
        let crystal = &dataset[k % dataset.len()];
        let mut r = rng::stream(seed, &[6, k as u64]);
        let nz = noised(sched, norm, crystal, &mut r)?;
        let out = denoiser::forward(params, crystal.atom_types(), &nz.xt, &nz.lt, nz.t)?;
        let coord = diffusion::coord_loss(&nz.target, &out.eps_x)?;
        Ok::<_, TrainError>((coord, diffusion::lattice_loss(&nz.noise.eps_l, &out.eps_l)))
    });
    let (mut coord, mut lattice) = (0.0, 0.0);
    for p in parts {
        let (c, l) = p?;
        coord += c;
        lattice += l;
    }
    let (coord, lattice) = (coord / draws as f64, lattice / draws as f64);
    Ok(LossRecord {
        step: 0,
        coord,
        lattice,
        total: coord + lattice,
    })
}

/// Forward, loss and gradient for one crystal, accumulated into `grad`.
#[allow(clippy::too_many_arguments)]
fn slot_gradient(
    params: &DenoiserParams,
    sched: &Schedules,
    norm: &LatticeNorm,
    crystal: &Crystal,
    seed: u64,
    step: u64,
    slot: u64,
    weight: f64,
    grad: &mut DenoiserParams,
) -> Result<SlotOutcome, TrainError> {
    let mut r = rng::stream(seed, &[2, step, slot]);
    let Noised { t, noise, lt, xt, target } = noised(sched, norm, crystal, &mut r)?;
    let (out, cache) = denoiser::forward_cached(params, crystal.atom_types(), &xt, &lt, t)?;
    let lattice = diffusion::lattice_loss(&noise.eps_l, &out.eps_l);
    let coord = diffusion::coord_loss(&target, &out.eps_x)?;
    let n = crystal.num_atoms() as f64;
    let dl: Mat3 = std::array::from_fn(|i| {
        std::array::from_fn(|j| weight * 2.0 * (out.eps_l[i][j] - noise.eps_l[i][j]) / 9.0)
    });
    let dx: Vec<_> = out
        .eps_x
        .iter()
        .zip(&target)
        .map(|(e, y)| std::array::from_fn(|k| weight * 2.0 * (e[k] - y[k]) / (3.0 * n)))
        .collect();
    denoiser::backward(params, &cache, &dl, &dx, grad)?;
    Ok(SlotOutcome { coord, lattice })
}

/// Mean losses and the summed gradient of their mean over `batch`.
pub fn batch_gradient(
    params: &DenoiserParams,
    sched: &Schedules,
    norm: &LatticeNorm,
    batch: &[&Crystal],
    seed: u64,
    step: u64,
    exec: Execution,
) -> Result<(LossRecord, DenoiserParams), TrainError> {
    let b = batch.len();
    if b == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let weight = 1.0 / b as f64;
    let chunks = b.div_ceil(CHUNK);
    let parts = par::map_range(chunks, exec, |k| {
        let mut g = DenoiserParams::zeros(params.config);
        let (mut coord, mut lattice) = (0.0, 0.0);
        for slot in k * CHUNK..((k + 1) * CHUNK).min(b) {
            let o = slot_gradient(params, sched, norm, batch[slot], seed, step, slot as u64, weight, &mut g)?;
            coord += o.coord;
            lattice += o.lattice;
        }
        Ok::<_, TrainError>((coord, lattice, g))
    });
    let mut total = DenoiserParams::zeros(params.config);
    let (mut coord, mut lattice) = (0.0, 0.0);
    for part in parts {
        let (c, l, g) = part?;
        coord += c;
        lattice += l;
        total.add_assign(&g);
    }
    let (coord, lattice) = (coord * weight, lattice * weight);
    Ok((
        LossRecord {
            step,
            coord,
            lattice,
            total: coord + lattice,
        },
        total,
    ))
}

/// One optimizer step on `batch`; advances `state.step` and appends to the log.
pub fn train_step(state: &mut Checkpoint, batch: &[&Crystal], exec: Execution) -> Result<LossRecord, TrainError> {
    let sched = state.schedules()?;
    let step = state.step;
    let (rec, mut grad) = batch_gradient(
        &state.params,
        &sched,
        &state.lattice_norm,
        batch,
        state.config.seed,
        step,
        exec,
    )?;
    if !rec.total.is_finite() || !grad.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step,
            detail: format!("coord {} lattice {}", rec.coord, rec.lattice),
        });
    }
    let gnorm = grad.sq_norm().sqrt();
    if gnorm > state.config.clip_norm {
        grad.scale(state.config.clip_norm / gnorm);
    }
    let c = &state.config;
    let hyper = AdamHyper {
        lr: c.learning_rate,
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.adam_eps,
    };
    adam_update(&mut state.params, &grad, &mut state.adam_m, &mut state.adam_v, step + 1, &hyper)?;
    if !state.params.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step,
            detail: "parameters became non-finite".into(),
        });
    }
    state.step += 1;
    state.log.push(rec);
    Ok(rec)
}

/// Trains from scratch.
pub fn train(config: &TrainConfig, dataset: &[Crystal], exec: Execution) -> Result<Checkpoint, TrainError> {
    let state = Checkpoint::init(config, dataset)?;
    resume(state, dataset, exec, |_| Ok(()))
}

/// Continues `state` until the configured step count, calling `on_checkpoint`
/// every `checkpoint_every` steps.
pub fn resume(
    mut state: Checkpoint,
    dataset: &[Crystal],
    exec: Execution,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<(), TrainError>,
) -> Result<Checkpoint, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    state.config.validate()?;
    let total = state.config.total_steps(dataset.len());
    while state.step < total {
        let idx = batch_indices(state.config.seed, state.step, state.config.batch_size, dataset.len());
        let batch: Vec<&Crystal> = idx.iter().map(|&i| &dataset[i]).collect();
        train_step(&mut state, &batch, exec)?;
        let every = state.config.checkpoint_every;
        if every > 0 && state.step % every == 0 {
            on_checkpoint(&state)?;
        }
    }
    Ok(state)
}

const MAGIC: &[u8; 8] = b"CRYSGCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    lattice_norm: LatticeNorm,
    log: Vec<LossRecord>,
    tensors: Vec<(String, usize)>,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TrainError> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            lattice_norm: self.lattice_norm,
            log: self.log.clone(),
            tensors: self
                .params
                .tensor_names()
                .into_iter()
                .zip(self.params.tensors().iter().map(|t| t.len()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| TrainError::CorruptCheckpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for p in [&self.params, &self.adam_m, &self.adam_v] {
            let mut buf = Vec::with_capacity(p.num_params() * 8);
            for t in p.tensors() {
                for v in t {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TrainError> {
        let corrupt = |m: String| TrainError::CorruptCheckpoint(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| corrupt(e.to_string()))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|e| corrupt(e.to_string()))?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|e| corrupt(e.to_string()))?;
        let len = u64::from_le_bytes(b8) as usize;
        if len > 1 << 30 {
            return Err(corrupt("header too large".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|e| corrupt(e.to_string()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(e.to_string()))?;
        header.config.validate()?;
        let mut read_params = || -> Result<DenoiserParams, TrainError> {
            let mut p = DenoiserParams::zeros(header.config.denoiser);
            let expect: Vec<(String, usize)> = p
                .tensor_names()
                .into_iter()
                .zip(p.tensors().iter().map(|t| t.len()))
                .collect();
            if expect != header.tensors {
                return Err(corrupt("tensor layout does not match config".into()));
            }
            let mut raw = vec![0u8; p.num_params() * 8];
            r.read_exact(&mut raw).map_err(|e| corrupt(e.to_string()))?;
            let flat: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            p.load_flat(&flat)?;
            Ok(p)
        };
        let params = read_params()?;
        let adam_m = read_params()?;
        let adam_v = read_params()?;
        Ok(Self {
            config: header.config,
            params,
            adam_m,
            adam_v,
            step: header.step,
            lattice_norm: header.lattice_norm,
            log: header.log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use approx::assert_relative_eq;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            epochs: 2,
            seed: 5,
            denoiser: DenoiserConfig {
                hidden: 8,
                layers: 2,
                n_freq: 2,
            },
            schedule: ScheduleConfig {
                steps: 50,
                ..ScheduleConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn dataset() -> Vec<Crystal> {
        (0..5)
            .map(|k| {
                Crystal::new(
                    vec![11, 17],
                    vec![[0.0; 3], [0.5, 0.5, 0.5 + 0.01 * k as f64]],
                    linalg::scale(&linalg::IDENTITY, 5.4 + 0.1 * k as f64),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn adam_one_variable_oracle() {
        let h = AdamHyper {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update_slice(&mut p, &[0.5], &mut m, &mut v, 1, &h).unwrap();
        // first step: m̂ = g, v̂ = g², update = lr·g/(|g|+ε)
        assert_relative_eq!(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), max_relative = 1e-14);
        // second step by hand
        let (m2, v2) = (0.9 * 0.05 + 0.1 * -0.2, 0.999 * 0.00025 + 0.001 * 0.04);
        let (mh, vh) = (m2 / (1.0 - 0.81), v2 / (1.0 - 0.999f64.powi(2)));
        let expect = p[0] - 0.1 * mh / (vh.sqrt() + 1e-8);
        adam_update_slice(&mut p, &[-0.2], &mut m, &mut v, 2, &h).unwrap();
        assert_relative_eq!(p[0], expect, max_relative = 1e-14);
        assert!(adam_update_slice(&mut p, &[0.0, 1.0], &mut m, &mut v, 3, &h).is_err());
    }

    #[test]
    fn adam_zero_gradient_and_decay() {
        let h = AdamHyper {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let (mut p, mut m, mut v) = ([3.0], [0.0], [0.0]);
        adam_update_slice(&mut p, &[0.0], &mut m, &mut v, 1, &h).unwrap();
        assert_eq!(p[0], 3.0);
        let (mut m, mut v) = ([0.7], [0.2]);
        for t in 1..20_000 {
            adam_update_slice(&mut p, &[0.0], &mut m, &mut v, t, &h).unwrap();
        }
        assert!(m[0].abs() < 1e-12 && v[0].abs() < 1e-8);
    }

    #[test]
    fn batch_indices_cover_epochs() {
        let idx: Vec<usize> = (0..4).flat_map(|s| batch_indices(3, s, 5, 10)).collect();
        let mut first: Vec<usize> = idx[..10].to_vec();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let mut second: Vec<usize> = idx[10..].to_vec();
        second.sort();
        assert_eq!(second, (0..10).collect::<Vec<_>>());
        // wraparound when the batch exceeds the dataset
        assert_eq!(batch_indices(0, 0, 7, 2).len(), 7);
    }

    #[test]
    fn training_is_deterministic_and_mode_independent() {
        let data = dataset();
        let a = train(&tiny_config(), &data, Execution::Sequential).unwrap();
        let b = train(&tiny_config(), &data, Execution::Parallel).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        assert_eq!(a.log, b.log);
        assert_eq!(a.step, 4);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = dataset();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        let init = Checkpoint::init(&cfg, &data).unwrap();
        let done = train(&cfg, &data, Execution::Sequential).unwrap();
        assert_eq!(init.params.flatten(), done.params.flatten());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data = dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let done = train(&cfg, &data, Execution::Sequential).unwrap();
        let init = denoiser::init_params(cfg.seed, cfg.denoiser).unwrap();
        assert_eq!(done.params.flatten(), init.flatten());
        assert_eq!(done.step, 0);
        assert!(matches!(
            train(&cfg, &[], Execution::Sequential),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn every_layer_moves_after_a_step() {
        let data = dataset();
        let mut state = Checkpoint::init(&tiny_config(), &data).unwrap();
        let before = state.params.clone();
        let batch: Vec<&Crystal> = data.iter().collect();
        train_step(&mut state, &batch, Execution::Sequential).unwrap();
        for (name, (a, b)) in before
            .tensor_names()
            .iter()
            .zip(before.tensors().iter().zip(state.params.tensors()))
        {
            assert_ne!(*a, b, "tensor {name} did not change");
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_resume() {
        let data = dataset();
        let full = train(&tiny_config(), &data, Execution::Sequential).unwrap();
        let half_cfg = TrainConfig {
            max_steps: Some(2),
            ..tiny_config()
        };
        let half = train(&half_cfg, &data, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        half.write_to(&mut buf).unwrap();
        let mut restored = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(restored, half);
        restored.config.max_steps = None;
        let resumed = resume(restored, &data, Execution::Sequential, |_| Ok(())).unwrap();
        assert_eq!(resumed.params.flatten(), full.params.flatten());
        assert_eq!(resumed.log, full.log);

        let mut bad = buf.clone();
        bad[3] ^= 1;
        assert!(matches!(
            Checkpoint::read_from(&mut bad.as_slice()),
            Err(TrainError::CorruptCheckpoint(_))
        ));
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 8]).is_err());
    }

    #[test]
    fn loaded_params_reproduce_outputs() {
        let data = dataset();
        let state = train(&tiny_config(), &data, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        state.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        let c = &data[0];
        let a = denoiser::forward(&state.params, c.atom_types(), c.frac_coords(), c.lattice(), 7).unwrap();
        let b = denoiser::forward(&back.params, c.atom_types(), c.frac_coords(), c.lattice(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_is_sum_of_components() {
        let data = dataset();
        let state = train(&tiny_config(), &data, Execution::Sequential).unwrap();
        for r in &state.log {
            assert_eq!(r.total, r.coord + r.lattice);
        }
    }
}
