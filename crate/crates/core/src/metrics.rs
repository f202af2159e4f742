//! Evaluation suite: validity, fingerprint coverage, property EMDs,
//! structure matching and composition match rate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::{self, canonical_diff, Composition, Crystal, LatticeParams};
use crate::elements::{self, MAX_Z};
use crate::linalg::{self, Mat3, Vec3};
use crate::par::{self, Execution};

/// Minimum interatomic distance in Å for a structurally valid crystal.
pub const MIN_DISTANCE: f64 = 0.5;
pub const RDF_BINS: usize = 32;
pub const RDF_CUTOFF: f64 = 8.0;
pub const FINGERPRINT_DIM: usize = MAX_Z as usize + RDF_BINS;
// Bounds the periodic image search in badly degenerate cells.
const MAX_IMAGE_RANGE: i64 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("paired sets differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid tolerance: {0}")]
    BadTolerance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchTolerances {
    pub stol: f64,
    /// Degrees.
    pub angle_tol: f64,
    /// Fractional length tolerance.
    pub ltol: f64,
}

impl Default for MatchTolerances {
    fn default() -> Self {
        Self {
            stol: 0.5,
            angle_tol: 10.0,
            ltol: 0.3,
        }
    }
}

impl MatchTolerances {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [("stol", self.stol), ("angle_tol", self.angle_tol), ("ltol", self.ltol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MetricsError::BadTolerance(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Norms of the columns of `L⁻¹`; bounds fractional offsets reachable within
/// a cartesian radius.
fn reciprocal_norms(l: &Mat3) -> [f64; 3] {
    let inv = linalg::inverse(l).unwrap_or([[f64::INFINITY; 3]; 3]);
    std::array::from_fn(|k| (0..3).map(|r| inv[r][k] * inv[r][k]).sum::<f64>().sqrt())
}

fn image_range(d: f64, radius: f64, rn: f64) -> (i64, i64) {
    let reach = (radius * rn).min(MAX_IMAGE_RANGE as f64);
    ((-reach - d).ceil() as i64, (reach - d).floor() as i64)
}

/// Shortest periodic image of the fractional difference `d`. Returns the
/// fractional vector and its cartesian length. Exact for any cell.
pub fn min_image(d: &Vec3, l: &Mat3, rn: &[f64; 3]) -> (Vec3, f64) {
    let d = [canonical_diff(d[0]), canonical_diff(d[1]), canonical_diff(d[2])];
    let mut best = (d, linalg::norm(&linalg::vec_mat(&d, l)));
    let r = best.1;
    let (lo0, hi0) = image_range(d[0], r, rn[0]);
    let (lo1, hi1) = image_range(d[1], r, rn[1]);
    let (lo2, hi2) = image_range(d[2], r, rn[2]);
    for i in lo0..=hi0 {
        for j in lo1..=hi1 {
            for k in lo2..=hi2 {
                let f = [d[0] + i as f64, d[1] + j as f64, d[2] + k as f64];
                let len = linalg::norm(&linalg::vec_mat(&f, l));
                if len < best.1 {
                    best = (f, len);
                }
            }
        }
    }
    best
}

/// Shortest nonzero lattice translation.
fn self_image_distance(l: &Mat3, rn: &[f64; 3]) -> f64 {
    let r = (0..3).map(|k| linalg::norm(&l[k])).fold(f64::INFINITY, f64::min);
    let reach: [i64; 3] = std::array::from_fn(|k| (r * rn[k]).min(MAX_IMAGE_RANGE as f64).floor() as i64);
    let mut best = r;
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -reach[2]..=reach[2] {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let len = linalg::norm(&linalg::vec_mat(&[i as f64, j as f64, k as f64], l));
                best = best.min(len);
            }
        }
    }
    best
}

/// Smallest distance between any two sites, counting each site's own
/// periodic images.
pub fn min_interatomic_distance(c: &Crystal) -> f64 {
    let l = c.lattice();
    let rn = reciprocal_norms(l);
    let x = c.frac_coords();
    let mut best = self_image_distance(l, &rn);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let d = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
            best = best.min(min_image(&d, l, &rn).1);
        }
    }
    best
}

pub fn structural_validity(c: &Crystal) -> bool {
    min_interatomic_distance(c) > MIN_DISTANCE
}

/// Whether one oxidation state per species can make the cell neutral.
pub fn charge_neutral(comp: &Composition) -> bool {
    if comp.num_elements() == 1 {
        return true;
    }
    let species: Vec<(i64, &[i8])> = comp
        .0
        .iter()
        .map(|(&z, &n)| (i64::from(n), elements::oxidation_states(z)))
        .collect();
    if species.iter().any(|(_, s)| s.is_empty()) {
        return false;
    }
    let mut lo = vec![0i64; species.len() + 1];
    let mut hi = vec![0i64; species.len() + 1];
    for k in (0..species.len()).rev() {
        let (n, s) = species[k];
        lo[k] = lo[k + 1] + n * i64::from(*s.iter().min().unwrap());
        hi[k] = hi[k + 1] + n * i64::from(*s.iter().max().unwrap());
    }
    fn search(k: usize, sum: i64, species: &[(i64, &[i8])], lo: &[i64], hi: &[i64]) -> bool {
        if sum + lo[k] > 0 || sum + hi[k] < 0 {
            return false;
        }
        if k == species.len() {
            return sum == 0;
        }
        let (n, states) = species[k];
        states
            .iter()
            .any(|&s| search(k + 1, sum + n * i64::from(s), species, lo, hi))
    }
    search(0, 0, &species, &lo, &hi)
}

pub fn compositional_validity(c: &Crystal) -> bool {
    charge_neutral(&c.composition())
}

/// Element-fraction histogram followed by a density-normalized radial
/// distribution histogram.
pub fn fingerprint(c: &Crystal) -> Vec<f64> {
    let mut fp = vec![0.0; FINGERPRINT_DIM];
    let n = c.num_atoms();
    for &z in c.atom_types() {
        fp[z as usize - 1] += 1.0 / n as f64;
    }
    let l = c.lattice();
    let rn = reciprocal_norms(l);
    let x = c.frac_coords();
    let width = RDF_CUTOFF / RDF_BINS as f64;
    let mut counts = [0u64; RDF_BINS];
    for xi in x {
        for xj in x {
            let d: Vec3 = std::array::from_fn(|k| canonical_diff(xj[k] - xi[k]));
            let (lo0, hi0) = image_range(d[0], RDF_CUTOFF, rn[0]);
            let (lo1, hi1) = image_range(d[1], RDF_CUTOFF, rn[1]);
            let (lo2, hi2) = image_range(d[2], RDF_CUTOFF, rn[2]);
            for a in lo0..=hi0 {
                for b in lo1..=hi1 {
                    for e in lo2..=hi2 {
                        let f = [d[0] + a as f64, d[1] + b as f64, d[2] + e as f64];
                        let r = linalg::norm(&linalg::vec_mat(&f, l));
                        if r > 1e-8 && r < RDF_CUTOFF {
                            counts[((r / width) as usize).min(RDF_BINS - 1)] += 1;
                        }
                    }
                }
            }
        }
    }
    let rho = n as f64 / c.volume();
    for (b, &k) in counts.iter().enumerate() {
        let (r0, r1) = (b as f64 * width, (b + 1) as f64 * width);
        let shell = 4.0 / 3.0 * std::f64::consts::PI * (r1.powi(3) - r0.powi(3));
        fp[MAX_Z as usize + b] = k as f64 / (n as f64 * rho * shell);
    }
    fp
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest(q: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter().map(|p| euclid(q, p)).fold(f64::INFINITY, f64::min)
}

/// `(COV-R, COV-P)` in percent.
pub fn coverage(
    gen: &[Vec<f64>],
    reference: &[Vec<f64>],
    threshold: f64,
    exec: Execution,
) -> Result<(f64, f64), MetricsError> {
    if gen.is_empty() {
        return Err(MetricsError::EmptySet("generated"));
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptySet("reference"));
    }
    let recall = par::map(reference, exec, |_, r| nearest(r, gen) <= threshold);
    let precision = par::map(gen, exec, |_, g| nearest(g, reference) <= threshold);
    let pct = |v: &[bool]| 100.0 * v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    Ok((pct(&recall), pct(&precision)))
}

/// Smallest threshold at which `quantile` of `held_out` lies within it of
/// some `train` fingerprint.
pub fn calibrate_threshold(
    train: &[Vec<f64>],
    held_out: &[Vec<f64>],
    quantile: f64,
    exec: Execution,
) -> Result<f64, MetricsError> {
    if train.is_empty() {
        return Err(MetricsError::EmptySet("train"));
    }
    if held_out.is_empty() {
        return Err(MetricsError::EmptySet("held-out"));
    }
    let mut d = par::map(held_out, exec, |_, h| nearest(h, train));
    d.sort_by(f64::total_cmp);
    let k = ((quantile.clamp(0.0, 1.0) * d.len() as f64).ceil() as usize).clamp(1, d.len());
    Ok(d[k - 1])
}

/// 1-Wasserstein distance between two empirical distributions.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::EmptySet("first"));
    }
    if b.is_empty() {
        return Err(MetricsError::EmptySet("second"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (x - prev) * (i as f64 / na - j as f64 / nb).abs();
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    Ok(total)
}

/// Minimum-cost perfect matching on a square cost matrix. Returns, for each
/// row, the assigned column.
pub fn assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; n];
    for j in 1..=n {
        rows[p[j] - 1] = j - 1;
    }
    rows
}

/// Best alignment found between two crystals, in units of `∛(V/N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rmse: f64,
    pub max_disp: f64,
}

/// Averaged lattice of two cells when their parameters agree within `tol`.
fn common_lattice(a: &Crystal, b: &Crystal, tol: &MatchTolerances) -> Option<Mat3> {
    let (pa, pb) = (a.params(), b.params());
    let (la, lb) = (pa.lengths(), pb.lengths());
    let (aa, ab) = (pa.angles(), pb.angles());
    for k in 0..3 {
        if (la[k] / lb[k]).ln().abs() > (1.0 + tol.ltol).ln() || (aa[k] - ab[k]).abs() > tol.angle_tol {
            return None;
        }
    }
    let mean = |k: usize, u: &[f64; 3], w: &[f64; 3]| 0.5 * (u[k] + w[k]);
    crystal::lattice_from_params(&LatticeParams::new(
        mean(0, &la, &lb),
        mean(1, &la, &lb),
        mean(2, &la, &lb),
        mean(0, &aa, &ab),
        mean(1, &aa, &ab),
        mean(2, &aa, &ab),
    ))
    .ok()
}

/// Per-species index lists of `c`, keyed by ascending atomic number.
fn species_groups(c: &Crystal) -> Vec<(u8, Vec<usize>)> {
    let mut groups: Vec<(u8, Vec<usize>)> = Vec::new();
    for (i, &z) in c.atom_types().iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| *g == z) {
            Some((_, v)) => v.push(i),
            None => groups.push((z, vec![i])),
        }
    }
    groups.sort_by_key(|(z, _)| *z);
    groups
}

/// Optimal assignment at translation `u`, returning the displacement from
/// each shifted `b` site to its partner in `a` (fractional).
fn assign_at(
    xa: &[Vec3],
    xb: &[Vec3],
    ga: &[(u8, Vec<usize>)],
    gb: &[(u8, Vec<usize>)],
    u: &Vec3,
    l: &Mat3,
    rn: &[f64; 3],
) -> Vec<(Vec3, f64)> {
    let mut disp = Vec::with_capacity(xa.len());
    for ((_, ia), (_, ib)) in ga.iter().zip(gb) {
        let table: Vec<Vec<(Vec3, f64)>> = ia
            .iter()
            .map(|&i| {
                ib.iter()
                    .map(|&j| {
                        let d: Vec3 = std::array::from_fn(|k| xa[i][k] - xb[j][k] - u[k]);
                        min_image(&d, l, rn)
                    })
                    .collect()
            })
            .collect();
        let cost: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|e| e.1 * e.1).collect()).collect();
        for (r, c) in assignment(&cost).into_iter().enumerate() {
            disp.push(table[r][c]);
        }
    }
    disp
}

/// Searches same-species assignments and translations minimizing the RMS
/// periodic displacement. `None` when the crystals fail the composition or
/// lattice pre-checks.
pub fn align(a: &Crystal, b: &Crystal, tol: &MatchTolerances) -> Option<Alignment> {
    if a.composition() != b.composition() {
        return None;
    }
    let l = common_lattice(a, b, tol)?;
    let rn = reciprocal_norms(&l);
    let n = a.num_atoms();
    let scale = (linalg::det(&l).abs() / n as f64).cbrt();
    let (ga, gb) = (species_groups(a), species_groups(b));
    let (xa, xb) = (a.frac_coords(), b.frac_coords());
    let mut best: Option<Alignment> = None;
    for ((_, ia), (_, ib)) in ga.iter().zip(&gb) {
        for &i in ia {
            for &j in ib {
                let mut u: Vec3 = std::array::from_fn(|k| xa[i][k] - xb[j][k]);
                let mut disp = assign_at(xa, xb, &ga, &gb, &u, &l, &rn);
                for _ in 0..20 {
                    let shift: Vec3 = std::array::from_fn(|k| disp.iter().map(|d| d.0[k]).sum::<f64>() / n as f64);
                    if linalg::norm(&linalg::vec_mat(&shift, &l)) < 1e-12 {
                        break;
                    }
                    for k in 0..3 {
                        u[k] += shift[k];
                    }
                    let next = assign_at(xa, xb, &ga, &gb, &u, &l, &rn);
                    let sq = |v: &[(Vec3, f64)]| v.iter().map(|d| d.1 * d.1).sum::<f64>();
                    let stalled = sq(&next) > sq(&disp) - 1e-15;
                    disp = next;
                    if stalled {
                        break;
                    }
                }
                let rmse = (disp.iter().map(|d| d.1 * d.1).sum::<f64>() / n as f64).sqrt() / scale;
                let max_disp = disp.iter().map(|d| d.1).fold(0.0, f64::max) / scale;
                if best.map_or(true, |bst| rmse < bst.rmse) {
                    best = Some(Alignment { rmse, max_disp });
                }
            }
        }
    }
    best
}

/// Normalized RMS displacement when `a` and `b` match within `tol`.
pub fn structure_match(a: &Crystal, b: &Crystal, tol: &MatchTolerances) -> Option<f64> {
    align(a, b, tol).filter(|al| al.max_disp <= tol.stol).map(|al| al.rmse)
}

/// Percentage of pairs whose reduced formulas agree.
pub fn composition_match_rate(gen: &[Crystal], targets: &[Composition]) -> Result<f64, MetricsError> {
    if gen.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            left: gen.len(),
            right: targets.len(),
        });
    }
    if gen.is_empty() {
        return Err(MetricsError::EmptySet("generated"));
    }
    let hits = gen
        .iter()
        .zip(targets)
        .filter(|(c, t)| c.composition().reduced() == t.reduced())
        .count();
    Ok(100.0 * hits as f64 / gen.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Unpaired generation: match rate is the share of references matched by
    /// any generated crystal.
    #[default]
    Gen,
    /// Paired structure prediction: item `i` is compared with reference `i`.
    Csp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub tolerances: MatchTolerances,
    pub coverage_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Gen,
            tolerances: MatchTolerances::default(),
            coverage_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub n_generated: usize,
    pub n_reference: usize,
    pub structural_validity: f64,
    pub compositional_validity: f64,
    pub reference_structural_validity: f64,
    pub reference_compositional_validity: f64,
    pub cov_recall: f64,
    pub cov_precision: f64,
    pub coverage_threshold: f64,
    pub emd_density: f64,
    pub emd_nelem: f64,
    pub match_rate: f64,
    pub rmse_mean: Option<f64>,
    pub composition_match: Option<f64>,
}

fn percent(flags: &[bool]) -> f64 {
    100.0 * flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

/// Densities (g/cm³) and element counts of a set.
pub fn property_values(set: &[Crystal]) -> (Vec<f64>, Vec<f64>) {
    let density = set
        .iter()
        .map(|c| crystal::density(c).expect("validated crystal"))
        .collect();
    let nelem = set.iter().map(|c| c.composition().num_elements() as f64).collect();
    (density, nelem)
}

/// Match rate and mean normalized RMSE over matched references.
pub fn match_statistics(
    gen: &[Crystal],
    reference: &[Crystal],
    mode: EvalMode,
    tol: &MatchTolerances,
    exec: Execution,
) -> Result<(f64, Option<f64>), MetricsError> {
    let per_ref: Vec<Option<f64>> = match mode {
        EvalMode::Csp => {
            if gen.len() != reference.len() {
                return Err(MetricsError::LengthMismatch {
                    left: gen.len(),
                    right: reference.len(),
                });
            }
            par::map_range(reference.len(), exec, |i| structure_match(&gen[i], &reference[i], tol))
        }
        EvalMode::Gen => par::map(reference, exec, |_, r| {
            gen.iter()
                .filter_map(|g| structure_match(g, r, tol))
                .min_by(f64::total_cmp)
        }),
    };
    let matched: Vec<f64> = per_ref.iter().flatten().copied().collect();
    let rate = 100.0 * matched.len() as f64 / reference.len() as f64;
    let rmse = (!matched.is_empty()).then(|| matched.iter().sum::<f64>() / matched.len() as f64);
    Ok((rate, rmse))
}

pub fn evaluate(
    gen: &[Crystal],
    reference: &[Crystal],
    cfg: &EvalConfig,
    targets: Option<&[Composition]>,
    exec: Execution,
) -> Result<MetricsReport, MetricsError> {
    if gen.is_empty() {
        return Err(MetricsError::EmptySet("generated"));
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptySet("reference"));
    }
    cfg.tolerances.validate()?;
    let validity = |set: &[Crystal]| {
        let s = par::map(set, exec, |_, c| structural_validity(c));
        let c = par::map(set, exec, |_, c| compositional_validity(c));
        (percent(&s), percent(&c))
    };
    let (sv, cv) = validity(gen);
    let (rsv, rcv) = validity(reference);
    let fg = par::map(gen, exec, |_, c| fingerprint(c));
    let fr = par::map(reference, exec, |_, c| fingerprint(c));
    let (cov_recall, cov_precision) = coverage(&fg, &fr, cfg.coverage_threshold, exec)?;
    let (dg, ng) = property_values(gen);
    let (dr, nr) = property_values(reference);
    let (match_rate, rmse_mean) = match_statistics(gen, reference, cfg.mode, &cfg.tolerances, exec)?;
    let composition_match = targets.map(|t| composition_match_rate(gen, t)).transpose()?;
    Ok(MetricsReport {
        mode: cfg.mode,
        n_generated: gen.len(),
        n_reference: reference.len(),
        structural_validity: sv,
        compositional_validity: cv,
        reference_structural_validity: rsv,
        reference_compositional_validity: rcv,
        cov_recall,
        cov_precision,
        coverage_threshold: cfg.coverage_threshold,
        emd_density: emd_1d(&dg, &dr)?,
        emd_nelem: emd_1d(&ng, &nr)?,
        match_rate,
        rmse_mean,
        composition_match,
    })
}

impl MetricsReport {
    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        let cols = [
            ("Struct.%", format!("{:.2}", self.structural_validity)),
            ("Comp.%", format!("{:.2}", self.compositional_validity)),
            ("COV-R%", format!("{:.2}", self.cov_recall)),
            ("COV-P%", format!("{:.2}", self.cov_precision)),
            ("rho EMD", format!("{:.4}", self.emd_density)),
            ("#Elem EMD", format!("{:.4}", self.emd_nelem)),
            ("Match%", format!("{:.2}", self.match_rate)),
            ("RMSE", opt(self.rmse_mean, 4)),
            ("CompMatch%", opt(self.composition_match, 2)),
        ];
        let widths: Vec<usize> = cols.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode={:?} generated={} reference={} coverage_threshold={:.4}",
            self.mode, self.n_generated, self.n_reference, self.coverage_threshold
        );
        let row = |f: &dyn Fn(&(&str, String)) -> String| {
            cols.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{:>w$}", f(c), w = *w))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "{}", row(&|c| c.0.to_string()));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        let _ = writeln!(out, "{}", row(&|c| c.1.clone()));
        out
    }
}

/// Shared-bin histogram of two samples as CSV (`lo,hi,generated,reference`).
pub fn histogram_csv(gen: &[f64], reference: &[f64], bins: usize) -> String {
    let all = gen.iter().chain(reference);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |v: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in v {
            h[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        h
    };
    let (hg, hr) = (count(gen), count(reference));
    let mut out = String::from("lo,hi,generated,reference\n");
    for b in 0..bins {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            lo + b as f64 * width,
            lo + (b + 1) as f64 * width,
            hg[b],
            hr[b]
        );
    }
    out
}
