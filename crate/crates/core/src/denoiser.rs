//! Equivariant denoising network `Φ_θ(A, X_t, L_t, t) → (ε̂_L, ε̂_X)`.
//!
//! A fully connected message-passing stack over the atoms of one crystal:
//!
//! ```text
//! h⁰_i   = E[A_i] + W_t·sinusoid(t) + b_t
//! m_ij   = silu(W2·silu(W1a h_i + W1b h_j + W1g g(L) + W1f ψ(x_i − x_j) + b1) + b2)
//! m_i    = Σ_j m_ij                      (all j, including i)
//! h_i   += silu(W4·silu(W3 [h_i, m_i] + b3) + b4)
//! ε̂_X,i  = W_X h_i + b_X
//! ε̂_L    = M(mean_i h_i) · L,  M = reshape(W_L h̄ + b_L)
//! ```
//!
//! `g(L)` is the symmetric-log scaled Gram matrix `L Lᵀ` (rows of `L` are
//! lattice vectors), so rotating the cell as `L Rᵀ` leaves every hidden state
//! unchanged and maps `ε̂_L` to `ε̂_L Rᵀ`. Aggregations add values in sorted
//! order, which makes permutation equivariance exact rather than approximate.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elements;
use crate::linalg::{self, Mat3, Vec3};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DenoiserError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("invalid denoiser configuration: {0}")]
    BadConfig(String),
    #[error("unknown element Z={0}")]
    UnknownElement(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub n_freq: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 6,
            n_freq: 128,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.hidden == 0 || self.layers == 0 || self.n_freq == 0 {
            return Err(DenoiserError::BadConfig(format!(
                "hidden, layers and n_freq must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        6 * self.n_freq
    }

    pub fn time_dim(&self) -> usize {
        2 * self.hidden.div_ceil(2)
    }
}

/// Dense layer `y = W x + b`, `W` row-major with shape `out × inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out: usize,
    pub inp: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            out,
            inp,
            w: vec![0.0; out * inp],
            b: vec![0.0; out],
        }
    }

    fn zeros_unbiased(out: usize, inp: usize) -> Self {
        Self {
            out,
            inp,
            w: vec![0.0; out * inp],
            b: Vec::new(),
        }
    }

    fn init(out: usize, inp: usize, r: &mut impl Rng) -> Self {
        let mut l = Self::zeros(out, inp);
        let bound = (3.0 / inp as f64).sqrt();
        for w in &mut l.w {
            *w = r.gen_range(-bound..bound);
        }
        l
    }

    fn init_unbiased(out: usize, inp: usize, r: &mut impl Rng) -> Self {
        let mut l = Self::init(out, inp, r);
        l.b.clear();
        l
    }

    /// `y += W x` (no bias).
    fn apply_acc(&self, x: &[f64], y: &mut [f64]) {
        for (o, row) in y.iter_mut().zip(self.w.chunks_exact(self.inp)) {
            *o += dot(row, x);
        }
    }

    /// `y = W x + b`.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.b);
        self.apply_acc(x, y);
    }

    /// `dx += Wᵀ dy`.
    fn back_input(&self, dy: &[f64], dx: &mut [f64]) {
        for (&g, row) in dy.iter().zip(self.w.chunks_exact(self.inp)) {
            if g != 0.0 {
                axpy(g, row, dx);
            }
        }
    }

    /// `dW += dy xᵀ`, `db += dy`.
    fn back_params(grad: &mut Linear, dy: &[f64], x: &[f64], with_bias: bool) {
        for (&g, row) in dy.iter().zip(grad.w.chunks_exact_mut(grad.inp)) {
            if g != 0.0 {
                axpy(g, x, row);
            }
        }
        if with_bias {
            for (b, &g) in grad.b.iter_mut().zip(dy) {
                *b += g;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

fn symlog(g: f64) -> f64 {
    g.signum() * g.abs().ln_1p()
}

/// Adds rows `vals[j·d .. (j+1)·d]` for `j` in `0..n` into `out`, summing each
/// coordinate in ascending value order so the result ignores row order.
fn sorted_row_sum(vals: &[f64], n: usize, d: usize, out: &mut [f64], scratch: &mut Vec<f64>) {
    for k in 0..d {
        scratch.clear();
        scratch.extend((0..n).map(|j| vals[j * d + k]));
        scratch.sort_by(f64::total_cmp);
        out[k] = scratch.iter().sum();
    }
}

/// `sin(2πk·dx_j), cos(2πk·dx_j)` for `j = 0..3`, `k = 1..=n_freq`, laid out
/// axis-major with interleaved sin/cos pairs.
pub fn fourier_features(dx: &Vec3, n_freq: usize) -> Vec<f64> {
    let mut out = vec![0.0; 6 * n_freq];
    fourier_into(dx, n_freq, &mut out);
    out
}

fn fourier_into(dx: &Vec3, n_freq: usize, out: &mut [f64]) {
    for j in 0..3 {
        for k in 1..=n_freq {
            let (s, c) = (TAU * k as f64 * dx[j]).sin_cos();
            let base = j * 2 * n_freq + 2 * (k - 1);
            out[base] = s;
            out[base + 1] = c;
        }
    }
}

pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t * w).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

/// Scaled Gram features `symlog(L Lᵀ)`, row-major.
pub fn lattice_features(l: &Mat3) -> [f64; 9] {
    let g = linalg::gram(l);
    std::array::from_fn(|k| symlog(g[k / 3][k % 3]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub msg_self: Linear,
    pub msg_other: Linear,
    pub msg_lattice: Linear,
    pub msg_fourier: Linear,
    pub msg_out: Linear,
    pub node_in: Linear,
    pub node_out: Linear,
}

impl Layer {
    fn zeros(c: &DenoiserConfig) -> Self {
        let d = c.hidden;
        Self {
            msg_self: Linear::zeros_unbiased(d, d),
            msg_other: Linear::zeros_unbiased(d, d),
            msg_lattice: Linear::zeros(d, 9),
            msg_fourier: Linear::zeros_unbiased(d, c.feature_dim()),
            msg_out: Linear::zeros(d, d),
            node_in: Linear::zeros(d, 2 * d),
            node_out: Linear::zeros(d, d),
        }
    }

    fn init(c: &DenoiserConfig, r: &mut impl Rng) -> Self {
        let d = c.hidden;
        Self {
            msg_self: Linear::init_unbiased(d, d, r),
            msg_other: Linear::init_unbiased(d, d, r),
            msg_lattice: Linear::init(d, 9, r),
            msg_fourier: Linear::init_unbiased(d, c.feature_dim(), r),
            msg_out: Linear::init(d, d, r),
            node_in: Linear::init(d, 2 * d, r),
            node_out: Linear::init(d, d, r),
        }
    }

    fn linears(&self) -> [&Linear; 7] {
        [
            &self.msg_self,
            &self.msg_other,
            &self.msg_lattice,
            &self.msg_fourier,
            &self.msg_out,
            &self.node_in,
            &self.node_out,
        ]
    }

    fn linears_mut(&mut self) -> [&mut Linear; 7] {
        [
            &mut self.msg_self,
            &mut self.msg_other,
            &mut self.msg_lattice,
            &mut self.msg_fourier,
            &mut self.msg_out,
            &mut self.node_in,
            &mut self.node_out,
        ]
    }
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    /// `MAX_Z × d`, row `z − 1` for element `z`.
    pub embedding: Vec<f64>,
    pub time: Linear,
    pub layers: Vec<Layer>,
    pub head_x: Linear,
    pub head_l: Linear,
    version: u64,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors() == other.tensors()
    }
}

static NEXT_VERSION: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Self {
        let d = config.hidden;
        Self {
            config,
            embedding: vec![0.0; elements::MAX_Z as usize * d],
            time: Linear::zeros(d, config.time_dim()),
            layers: (0..config.layers).map(|_| Layer::zeros(&config)).collect(),
            head_x: Linear::zeros(3, d),
            head_l: Linear::zeros(9, d),
            version: fresh_version(),
        }
    }

    /// Tensor names in checkpoint order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string(), "time.w".into(), "time.b".into()];
        const LAYER: [&str; 7] = [
            "msg_self",
            "msg_other",
            "msg_lattice",
            "msg_fourier",
            "msg_out",
            "node_in",
            "node_out",
        ];
        for (k, layer) in self.layers.iter().enumerate() {
            for (n, lin) in LAYER.iter().zip(layer.linears()) {
                names.push(format!("layer{k}.{n}.w"));
                if !lin.b.is_empty() {
                    names.push(format!("layer{k}.{n}.b"));
                }
            }
        }
        for n in ["head_x", "head_l"] {
            names.push(format!("{n}.w"));
            names.push(format!("{n}.b"));
        }
        names
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embedding, &self.time.w, &self.time.b];
        for layer in &self.layers {
            for lin in layer.linears() {
                v.push(&lin.w);
                if !lin.b.is_empty() {
                    v.push(&lin.b);
                }
            }
        }
        for lin in [&self.head_x, &self.head_l] {
            v.push(&lin.w);
            v.push(&lin.b);
        }
        v
    }

    /// Mutable tensors in checkpoint order. Invalidates outstanding caches.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        let mut v: Vec<&mut [f64]> = vec![&mut self.embedding, &mut self.time.w, &mut self.time.b];
        for layer in &mut self.layers {
            for lin in layer.linears_mut() {
                v.push(&mut lin.w);
                if !lin.b.is_empty() {
                    v.push(&mut lin.b);
                }
            }
        }
        for lin in [&mut self.head_x, &mut self.head_l] {
            v.push(&mut lin.w);
            v.push(&mut lin.b);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites all tensors from a flat vector in checkpoint order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), DenoiserError> {
        if flat.len() != self.num_params() {
            return Err(DenoiserError::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &DenoiserParams) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= k;
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Fan-in scaled uniform weights, zero biases; the embedding table has unit variance.
pub fn init_params(seed: u64, config: DenoiserConfig) -> Result<DenoiserParams, DenoiserError> {
    config.validate()?;
    let mut r = rng::stream(seed, &[0xD3]);
    let d = config.hidden;
    let bound = 3f64.sqrt();
    let embedding = (0..elements::MAX_Z as usize * d)
        .map(|_| r.gen_range(-bound..bound))
        .collect();
    let time = Linear::init(d, config.time_dim(), &mut r);
    let layers = (0..config.layers).map(|_| Layer::init(&config, &mut r)).collect();
    let head_x = Linear::init(3, d, &mut r);
    let head_l = Linear::init(9, d, &mut r);
    Ok(DenoiserParams {
        config,
        embedding,
        time,
        layers,
        head_x,
        head_l,
        version: fresh_version(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps_l: Mat3,
    pub eps_x: Vec<Vec3>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    h_in: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    node_in: Vec<f64>,
    z3: Vec<f64>,
    z4: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    n: usize,
    atoms: Vec<u8>,
    lattice: Mat3,
    t_emb: Vec<f64>,
    g: [f64; 9],
    psi: Vec<f64>,
    layers: Vec<LayerCache>,
    h_final: Vec<f64>,
    h_mean: Vec<f64>,
}

pub fn forward(
    p: &DenoiserParams,
    atoms: &[u8],
    x: &[Vec3],
    l: &Mat3,
    t: usize,
) -> Result<DenoiserOutput, DenoiserError> {
    run(p, atoms, x, l, t, false).map(|(o, _)| o)
}

pub fn forward_cached(
    p: &DenoiserParams,
    atoms: &[u8],
    x: &[Vec3],
    l: &Mat3,
    t: usize,
) -> Result<(DenoiserOutput, ForwardCache), DenoiserError> {
    run(p, atoms, x, l, t, true).map(|(o, c)| (o, c.expect("cache requested")))
}

fn run(
    p: &DenoiserParams,
    atoms: &[u8],
    x: &[Vec3],
    l: &Mat3,
    t: usize,
    keep: bool,
) -> Result<(DenoiserOutput, Option<ForwardCache>), DenoiserError> {
    let c = p.config;
    let (n, d, nf) = (atoms.len(), c.hidden, c.feature_dim());
    if n == 0 || x.len() != n {
        return Err(DenoiserError::ShapeMismatch(format!(
            "{n} atom types, {} coordinates",
            x.len()
        )));
    }
    if let Some(&z) = atoms.iter().find(|&&z| !elements::is_valid_z(z as u32)) {
        return Err(DenoiserError::UnknownElement(z));
    }
    if !linalg::is_finite(l) || !x.iter().flatten().all(|v| v.is_finite()) {
        return Err(DenoiserError::NonFiniteActivation("input"));
    }

    let t_emb = time_embedding(t as f64, c.time_dim());
    let mut temb = vec![0.0; d];
    p.time.apply(&t_emb, &mut temb);
    let mut h = vec![0.0; n * d];
    for (i, &z) in atoms.iter().enumerate() {
        let row = &p.embedding[(z as usize - 1) * d..z as usize * d];
        for k in 0..d {
            h[i * d + k] = row[k] + temb[k];
        }
    }
    let g = lattice_features(l);
    let mut psi = vec![0.0; n * n * nf];
    for i in 0..n {
        for j in 0..n {
            let dx: Vec3 = std::array::from_fn(|k| x[i][k] - x[j][k]);
            fourier_into(&dx, c.n_freq, &mut psi[(i * n + j) * nf..(i * n + j + 1) * nf]);
        }
    }

    let mut caches = Vec::with_capacity(if keep { c.layers } else { 0 });
    let mut scratch = Vec::with_capacity(n);
    let mut a = vec![0.0; n * d];
    let mut b = vec![0.0; n * d];
    let mut gl = vec![0.0; d];
    let mut z1 = vec![0.0; n * n * d];
    let mut z2 = vec![0.0; n * n * d];
    let mut u1 = vec![0.0; d];
    let mut m_ij = vec![0.0; n * d];
    let mut node_in = vec![0.0; n * 2 * d];
    let mut z3 = vec![0.0; n * d];
    let mut u3 = vec![0.0; d];
    let mut z4 = vec![0.0; n * d];
    for layer in &p.layers {
        a.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            layer.msg_self.apply_acc(&h[i * d..(i + 1) * d], &mut a[i * d..(i + 1) * d]);
            layer.msg_other.apply_acc(&h[i * d..(i + 1) * d], &mut b[i * d..(i + 1) * d]);
        }
        layer.msg_lattice.apply(&g, &mut gl);
        for i in 0..n {
            for j in 0..n {
                let ij = i * n + j;
                let zz = &mut z1[ij * d..(ij + 1) * d];
                for k in 0..d {
                    zz[k] = a[i * d + k] + b[j * d + k] + gl[k];
                }
                layer.msg_fourier.apply_acc(&psi[ij * nf..(ij + 1) * nf], zz);
                for k in 0..d {
                    u1[k] = silu(zz[k]);
                }
                let z2r = &mut z2[ij * d..(ij + 1) * d];
                layer.msg_out.apply(&u1, z2r);
                for k in 0..d {
                    m_ij[j * d + k] = silu(z2r[k]);
                }
            }
            let row = &mut node_in[i * 2 * d..(i + 1) * 2 * d];
            row[..d].copy_from_slice(&h[i * d..(i + 1) * d]);
            sorted_row_sum(&m_ij, n, d, &mut row[d..], &mut scratch);
        }
        let h_in = if keep { h.clone() } else { Vec::new() };
        for i in 0..n {
            let z3r = &mut z3[i * d..(i + 1) * d];
            layer.node_in.apply(&node_in[i * 2 * d..(i + 1) * 2 * d], z3r);
            for k in 0..d {
                u3[k] = silu(z3r[k]);
            }
            let z4r = &mut z4[i * d..(i + 1) * d];
            layer.node_out.apply(&u3, z4r);
            for k in 0..d {
                h[i * d + k] += silu(z4r[k]);
            }
        }
        if keep {
            caches.push(LayerCache {
                h_in,
                z1: z1.clone(),
                z2: z2.clone(),
                node_in: node_in.clone(),
                z3: z3.clone(),
                z4: z4.clone(),
            });
        }
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(DenoiserError::NonFiniteActivation("hidden state"));
    }

    let mut eps_x = vec![[0.0; 3]; n];
    for (i, e) in eps_x.iter_mut().enumerate() {
        p.head_x.apply(&h[i * d..(i + 1) * d], e);
    }
    let mut h_mean = vec![0.0; d];
    sorted_row_sum(&h, n, d, &mut h_mean, &mut scratch);
    h_mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut mflat = [0.0; 9];
    p.head_l.apply(&h_mean, &mut mflat);
    let m: Mat3 = std::array::from_fn(|r| std::array::from_fn(|k| mflat[3 * r + k]));
    let eps_l = linalg::matmul(&m, l);
    if !linalg::is_finite(&eps_l) || !eps_x.iter().flatten().all(|v| v.is_finite()) {
        return Err(DenoiserError::NonFiniteActivation("output"));
    }
    let cache = keep.then(|| ForwardCache {
        version: p.version,
        n,
        atoms: atoms.to_vec(),
        lattice: *l,
        t_emb,
        g,
        psi,
        layers: caches,
        h_final: h,
        h_mean,
    });
    Ok((DenoiserOutput { eps_l, eps_x }, cache))
}

/// Accumulates parameter gradients of `⟨d_eps_l, ε̂_L⟩ + ⟨d_eps_x, ε̂_X⟩` into `grad`.
pub fn backward(
    p: &DenoiserParams,
    cache: &ForwardCache,
    d_eps_l: &Mat3,
    d_eps_x: &[Vec3],
    grad: &mut DenoiserParams,
) -> Result<(), DenoiserError> {
    if cache.version != p.version {
        return Err(DenoiserError::StaleCache);
    }
    if grad.config != p.config {
        return Err(DenoiserError::ShapeMismatch("gradient container config".into()));
    }
    let c = p.config;
    let (n, d, nf) = (cache.n, c.hidden, c.feature_dim());
    if d_eps_x.len() != n {
        return Err(DenoiserError::ShapeMismatch(format!(
            "{} coordinate gradients for {n} atoms",
            d_eps_x.len()
        )));
    }

    // heads
    let dm = linalg::matmul(d_eps_l, &linalg::transpose(&cache.lattice));
    let dm_flat: [f64; 9] = std::array::from_fn(|k| dm[k / 3][k % 3]);
    Linear::back_params(&mut grad.head_l, &dm_flat, &cache.h_mean, true);
    let mut dh_mean = vec![0.0; d];
    p.head_l.back_input(&dm_flat, &mut dh_mean);
    let mut dh = vec![0.0; n * d];
    for i in 0..n {
        let h_i = &cache.h_final[i * d..(i + 1) * d];
        Linear::back_params(&mut grad.head_x, &d_eps_x[i], h_i, true);
        let dhi = &mut dh[i * d..(i + 1) * d];
        p.head_x.back_input(&d_eps_x[i], dhi);
        axpy(1.0 / n as f64, &dh_mean, dhi);
    }

    let mut dz3 = vec![0.0; d];
    let mut dz4 = vec![0.0; d];
    let mut u3 = vec![0.0; d];
    let mut dnode = vec![0.0; 2 * d];
    let mut dmsg = vec![0.0; n * d];
    let mut da = vec![0.0; n * d];
    let mut db = vec![0.0; n * d];
    let mut dgl = vec![0.0; d];
    let mut dz2 = vec![0.0; d];
    let mut du1 = vec![0.0; d];
    let mut u1 = vec![0.0; d];
    for (li, (layer, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut grad.layers[li];
        // node update; the residual passes dh through unchanged
        for i in 0..n {
            let z4 = &lc.z4[i * d..(i + 1) * d];
            let z3 = &lc.z3[i * d..(i + 1) * d];
            for k in 0..d {
                dz4[k] = dh[i * d + k] * silu_grad(z4[k]);
                u3[k] = silu(z3[k]);
            }
            Linear::back_params(&mut gl.node_out, &dz4, &u3, true);
            dz3.iter_mut().for_each(|v| *v = 0.0);
            layer.node_out.back_input(&dz4, &mut dz3);
            for k in 0..d {
                dz3[k] *= silu_grad(z3[k]);
            }
            let inp = &lc.node_in[i * 2 * d..(i + 1) * 2 * d];
            Linear::back_params(&mut gl.node_in, &dz3, inp, true);
            dnode.iter_mut().for_each(|v| *v = 0.0);
            layer.node_in.back_input(&dz3, &mut dnode);
            for k in 0..d {
                dh[i * d + k] += dnode[k];
            }
            dmsg[i * d..(i + 1) * d].copy_from_slice(&dnode[d..]);
        }
        // messages
        da.iter_mut().for_each(|v| *v = 0.0);
        db.iter_mut().for_each(|v| *v = 0.0);
        dgl.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for j in 0..n {
                let ij = i * n + j;
                let z1 = &lc.z1[ij * d..(ij + 1) * d];
                let z2 = &lc.z2[ij * d..(ij + 1) * d];
                for k in 0..d {
                    dz2[k] = dmsg[i * d + k] * silu_grad(z2[k]);
                    u1[k] = silu(z1[k]);
                }
                Linear::back_params(&mut gl.msg_out, &dz2, &u1, true);
                du1.iter_mut().for_each(|v| *v = 0.0);
                layer.msg_out.back_input(&dz2, &mut du1);
                for k in 0..d {
                    let g = du1[k] * silu_grad(z1[k]);
                    du1[k] = g;
                    da[i * d + k] += g;
                    db[j * d + k] += g;
                    dgl[k] += g;
                }
                Linear::back_params(&mut gl.msg_fourier, &du1, &cache.psi[ij * nf..(ij + 1) * nf], false);
            }
        }
        Linear::back_params(&mut gl.msg_lattice, &dgl, &cache.g, true);
        for i in 0..n {
            let h_i = &lc.h_in[i * d..(i + 1) * d];
            Linear::back_params(&mut gl.msg_self, &da[i * d..(i + 1) * d], h_i, false);
            Linear::back_params(&mut gl.msg_other, &db[i * d..(i + 1) * d], h_i, false);
            let dhi = &mut dh[i * d..(i + 1) * d];
            layer.msg_self.back_input(&da[i * d..(i + 1) * d], dhi);
            layer.msg_other.back_input(&db[i * d..(i + 1) * d], dhi);
        }
    }

    // input embeddings
    let mut dtemb = vec![0.0; d];
    for (i, &z) in cache.atoms.iter().enumerate() {
        let dhi = &dh[i * d..(i + 1) * d];
        axpy(1.0, dhi, &mut grad.embedding[(z as usize - 1) * d..z as usize * d]);
        axpy(1.0, dhi, &mut dtemb);
    }
    Linear::back_params(&mut grad.time, &dtemb, &cache.t_emb, true);
    Ok(())
}
