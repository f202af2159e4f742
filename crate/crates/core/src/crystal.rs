//! Crystal data model and periodic-geometry utilities.
//!
//! A crystal is a set of atom types, fractional coordinates on the unit
//! torus `[0,1)³` and a lattice matrix whose rows are the lattice vectors.
//! The infinite periodic structure is never materialized; distance queries
//! search over integer image offsets instead.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elements;
use crate::linalg::{self, Mat3, Vec3};

/// Relative tolerance (against the cubed mean row length) below which a
/// lattice determinant counts as degenerate.
const SINGULAR_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("lattice length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("lattice angles ({0}, {1}, {2}) do not admit a valid cell")]
    DegenerateAngles(f64, f64, f64),
    #[error("lattice is singular or left-handed (det = {0})")]
    SingularLattice(f64),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("unknown element with atomic number {0}")]
    UnknownElement(u32),
    #[error("crystal has no atoms")]
    EmptyStructure,
    #[error("{atoms} atom types but {coords} coordinate rows")]
    ShapeMismatch { atoms: usize, coords: usize },
}

/// Cell lengths in Å and angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LatticeParams {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            a,
            b,
            c,
            alpha,
            beta,
            gamma,
        }
    }

    pub fn lengths(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Builds the row-vector lattice matrix for a set of cell parameters.
///
/// `l₁` lies along x, `l₂` in the xy plane, and the result is right-handed.
pub fn lattice_from_params(p: &LatticeParams) -> Result<Mat3, GeometryError> {
    for v in p.lengths().iter().chain(p.angles().iter()) {
        if !v.is_finite() {
            return Err(GeometryError::NonFiniteInput);
        }
    }
    for len in p.lengths() {
        if len <= 0.0 {
            return Err(GeometryError::NonPositiveLength(len));
        }
    }
    let degenerate = || GeometryError::DegenerateAngles(p.alpha, p.beta, p.gamma);
    if p.angles().iter().any(|&x| x <= 0.0 || x >= 180.0) {
        return Err(degenerate());
    }
    let (ca, cb, cg) = (
        p.alpha.to_radians().cos(),
        p.beta.to_radians().cos(),
        p.gamma.to_radians().cos(),
    );
    let sg = p.gamma.to_radians().sin();
    // Determinant of the normalized Gram matrix.
    let gram_det = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
    if gram_det <= 1e-12 {
        return Err(degenerate());
    }
    let cy = (ca - cb * cg) / sg;
    let cz = (1.0 - cb * cb - cy * cy).max(0.0).sqrt();
    Ok([
        [p.a, 0.0, 0.0],
        [p.b * cg, p.b * sg, 0.0],
        [p.c * cb, p.c * cy, p.c * cz],
    ])
}

fn check_lattice(l: &Mat3) -> Result<f64, GeometryError> {
    if !linalg::is_finite(l) {
        return Err(GeometryError::NonFiniteInput);
    }
    let d = linalg::det(l);
    let mean_len = l.iter().map(linalg::norm).sum::<f64>() / 3.0;
    if !(d > SINGULAR_REL_TOL * mean_len.powi(3)) {
        return Err(GeometryError::SingularLattice(d));
    }
    Ok(d)
}

fn angle_deg(u: &Vec3, v: &Vec3) -> f64 {
    let c = linalg::dot(u, v) / (linalg::norm(u) * linalg::norm(v));
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Recovers lengths and angles from a lattice matrix.
pub fn params_from_lattice(l: &Mat3) -> Result<LatticeParams, GeometryError> {
    check_lattice(l)?;
    Ok(LatticeParams {
        a: linalg::norm(&l[0]),
        b: linalg::norm(&l[1]),
        c: linalg::norm(&l[2]),
        alpha: angle_deg(&l[1], &l[2]),
        beta: angle_deg(&l[0], &l[2]),
        gamma: angle_deg(&l[0], &l[1]),
    })
}

/// Fractional part in `[0, 1)`.
pub fn wrap_scalar(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Canonical periodic difference in `[-0.5, 0.5)`.
pub fn canonical_diff(d: f64) -> f64 {
    let w = d - (d + 0.5).floor();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// Applies `X − ⌊X⌋` entrywise.
pub fn wrap_fractional(x: &[Vec3]) -> Result<Vec<Vec3>, GeometryError> {
    x.iter()
        .map(|row| {
            if row.iter().all(|v| v.is_finite()) {
                Ok(row.map(wrap_scalar))
            } else {
                Err(GeometryError::NonFiniteInput)
            }
        })
        .collect()
}

/// How far the periodic image search extends around the canonical difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ImageSearch {
    /// Offsets in `{-1, 0, 1}³`.
    #[default]
    Near,
    /// Offsets in `{-2, ..., 2}³` for strongly skewed cells.
    Wide,
}

impl ImageSearch {
    pub fn radius(self) -> i32 {
        match self {
            ImageSearch::Near => 1,
            ImageSearch::Wide => 2,
        }
    }
}

/// Smallest cartesian length of `(d + k)·L` over the offsets of `search`,
/// with `d` already reduced to its canonical representative.
pub(crate) fn min_image_len(d: &Vec3, l: &Mat3, search: ImageSearch) -> f64 {
    let r = search.radius();
    let mut best = f64::INFINITY;
    for i in -r..=r {
        for j in -r..=r {
            for k in -r..=r {
                let f = [d[0] + i as f64, d[1] + j as f64, d[2] + k as f64];
                let c = linalg::vec_mat(&f, l);
                let len2 = linalg::dot(&c, &c);
                if len2 < best {
                    best = len2;
                }
            }
        }
    }
    best.sqrt()
}

/// Minimum distance in Å between two fractional positions over periodic images.
pub fn min_periodic_distance(
    xi: &Vec3,
    xj: &Vec3,
    l: &Mat3,
    search: ImageSearch,
) -> Result<f64, GeometryError> {
    check_lattice(l)?;
    if !xi.iter().chain(xj.iter()).all(|v| v.is_finite()) {
        return Err(GeometryError::NonFiniteInput);
    }
    let d = [
        canonical_diff(xi[0] - xj[0]),
        canonical_diff(xi[1] - xj[1]),
        canonical_diff(xi[2] - xj[2]),
    ];
    Ok(min_image_len(&d, l, search))
}

/// Raw, unvalidated crystal record as stored in JSON-lines files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalRecord {
    pub atom_types: Vec<u32>,
    pub frac_coords: Vec<Vec3>,
    pub lattice: Mat3,
}

/// A validated crystal: `N ≥ 1` whitelisted atoms, wrapped coordinates,
/// right-handed non-degenerate lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CrystalRecord", into = "CrystalRecord")]
pub struct Crystal {
    atom_types: Vec<u8>,
    frac_coords: Vec<Vec3>,
    lattice: Mat3,
}

impl Crystal {
    /// Validates and constructs a crystal. Coordinates are wrapped into `[0,1)`.
    pub fn new(
        atom_types: Vec<u8>,
        frac_coords: Vec<Vec3>,
        lattice: Mat3,
    ) -> Result<Self, GeometryError> {
        if atom_types.is_empty() {
            return Err(GeometryError::EmptyStructure);
        }
        if atom_types.len() != frac_coords.len() {
            return Err(GeometryError::ShapeMismatch {
                atoms: atom_types.len(),
                coords: frac_coords.len(),
            });
        }
        if let Some(&z) = atom_types.iter().find(|&&z| !elements::is_valid_z(z as u32)) {
            return Err(GeometryError::UnknownElement(z as u32));
        }
        check_lattice(&lattice)?;
        let frac_coords = wrap_fractional(&frac_coords)?;
        Ok(Self {
            atom_types,
            frac_coords,
            lattice,
        })
    }

    pub fn atom_types(&self) -> &[u8] {
        &self.atom_types
    }

    pub fn frac_coords(&self) -> &[Vec3] {
        &self.frac_coords
    }

    pub fn lattice(&self) -> &Mat3 {
        &self.lattice
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_types.len()
    }

    pub fn volume(&self) -> f64 {
        linalg::det(&self.lattice)
    }

    pub fn params(&self) -> LatticeParams {
        params_from_lattice(&self.lattice).expect("validated lattice")
    }

    pub fn composition(&self) -> Composition {
        Composition::from_atoms(&self.atom_types)
    }

    /// Returns a copy with atoms reordered so that new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            atom_types: perm.iter().map(|&i| self.atom_types[i]).collect(),
            frac_coords: perm.iter().map(|&i| self.frac_coords[i]).collect(),
            lattice: self.lattice,
        }
    }

    /// Returns a copy with every coordinate shifted by `u` and wrapped.
    pub fn translated(&self, u: &Vec3) -> Self {
        Self {
            atom_types: self.atom_types.clone(),
            frac_coords: self
                .frac_coords
                .iter()
                .map(|x| [0, 1, 2].map(|k| wrap_scalar(x[k] + u[k])))
                .collect(),
            lattice: self.lattice,
        }
    }

    /// Returns a copy with the lattice physically rotated by `r` (det +1).
    pub fn rotated(&self, r: &Mat3) -> Self {
        Self {
            atom_types: self.atom_types.clone(),
            frac_coords: self.frac_coords.clone(),
            lattice: linalg::rotate_lattice(&self.lattice, r),
        }
    }
}

impl TryFrom<CrystalRecord> for Crystal {
    type Error = GeometryError;

    fn try_from(r: CrystalRecord) -> Result<Self, Self::Error> {
        let mut types = Vec::with_capacity(r.atom_types.len());
        for z in r.atom_types {
            if !elements::is_valid_z(z) {
                return Err(GeometryError::UnknownElement(z));
            }
            types.push(z as u8);
        }
        Crystal::new(types, r.frac_coords, r.lattice)
    }
}

impl From<Crystal> for CrystalRecord {
    fn from(c: Crystal) -> Self {
        CrystalRecord {
            atom_types: c.atom_types.into_iter().map(u32::from).collect(),
            frac_coords: c.frac_coords,
            lattice: c.lattice,
        }
    }
}

/// Mass density in g/cm³.
pub fn density(c: &Crystal) -> Result<f64, GeometryError> {
    let volume = check_lattice(c.lattice())?;
    let mass: f64 = c
        .atom_types()
        .iter()
        .map(|&z| elements::mass(z).expect("validated element"))
        .sum();
    Ok(mass / (elements::AVOGADRO * volume * 1e-24))
}

/// Element counts keyed by atomic number.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Composition(pub BTreeMap<u8, u32>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed formula {0:?}")]
pub struct FormulaError(pub String);

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Composition {
    pub fn from_atoms(atoms: &[u8]) -> Self {
        let mut m = BTreeMap::new();
        for &z in atoms {
            *m.entry(z).or_insert(0) += 1;
        }
        Composition(m)
    }

    /// Parses formulas such as `NaCl`, `SrTiO3` or `Na2Cl2`.
    pub fn parse_formula(s: &str) -> Result<Self, FormulaError> {
        let err = || FormulaError(s.to_string());
        let chars: Vec<char> = s.chars().collect();
        let mut i = 0;
        let mut m = BTreeMap::new();
        while i < chars.len() {
            if !chars[i].is_ascii_uppercase() {
                return Err(err());
            }
            let mut sym = chars[i].to_string();
            i += 1;
            if i < chars.len() && chars[i].is_ascii_lowercase() {
                sym.push(chars[i]);
                i += 1;
            }
            let z = elements::atomic_number(&sym).ok_or_else(err)?;
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let count: u32 = if start == i {
                1
            } else {
                chars[start..i]
                    .iter()
                    .collect::<String>()
                    .parse()
                    .map_err(|_| err())?
            };
            if count == 0 {
                return Err(err());
            }
            *m.entry(z).or_insert(0) += count;
        }
        if m.is_empty() {
            return Err(err());
        }
        Ok(Composition(m))
    }

    pub fn num_elements(&self) -> usize {
        self.0.len()
    }

    pub fn num_atoms(&self) -> u32 {
        self.0.values().sum()
    }

    /// Counts divided by their gcd.
    pub fn reduced(&self) -> Composition {
        let g = self.0.values().fold(0, |g, &c| gcd(g, c)).max(1);
        Composition(self.0.iter().map(|(&z, &c)| (z, c / g)).collect())
    }

    /// Reduced formula with elements in alphabetical symbol order, e.g. `ClNa`.
    pub fn reduced_formula(&self) -> String {
        let reduced = self.reduced();
        let mut parts: Vec<(&str, u32)> = reduced
            .0
            .iter()
            .map(|(&z, &c)| (elements::symbol(z).expect("valid element"), c))
            .collect();
        parts.sort_by(|a, b| a.0.cmp(b.0));
        parts
            .into_iter()
            .map(|(s, c)| if c == 1 { s.to_string() } else { format!("{s}{c}") })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parses one JSON crystal record.
pub fn parse_record(line: &str) -> Result<Crystal, String> {
    let rec: CrystalRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Crystal::try_from(rec).map_err(|e| e.to_string())
}

/// Reads a JSON-lines crystal record file. Blank lines are skipped; the
/// first invalid record aborts with its 1-based line number.
pub fn read_records(path: &Path) -> Result<Vec<Crystal>, RecordError> {
    let io_err = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let c = parse_record(&line).map_err(|message| RecordError::Parse {
            line: i + 1,
            message,
        })?;
        out.push(c);
    }
    Ok(out)
}

pub fn record_line(c: &Crystal) -> String {
    serde_json::to_string(c).expect("crystal serializes")
}

pub fn write_records(path: &Path, crystals: &[Crystal]) -> Result<(), RecordError> {
    let io_err = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for c in crystals {
        writeln!(w, "{}", record_line(c)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rotation_from_quaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn cubic_and_orthorhombic_params() {
        let l = lattice_from_params(&LatticeParams::new(5.0, 5.0, 5.0, 90.0, 90.0, 90.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 5.0 } else { 0.0 };
                assert!((l[i][j] - want).abs() < 1e-12);
            }
        }
        let l = lattice_from_params(&LatticeParams::new(2.0, 3.0, 4.0, 90.0, 90.0, 90.0)).unwrap();
        assert!((l[0][0] - 2.0).abs() < 1e-12);
        assert!((l[1][1] - 3.0).abs() < 1e-12);
        assert!((l[2][2] - 4.0).abs() < 1e-12);
        assert!(l[1][0].abs() < 1e-12 && l[2][0].abs() < 1e-12 && l[2][1].abs() < 1e-12);
    }

    #[test]
    fn hexagonal_dot_products() {
        let p = LatticeParams::new(1.0, 1.0, 1.0, 90.0, 90.0, 120.0);
        let l = lattice_from_params(&p).unwrap();
        // every pairwise dot product equals |li||lj|cos(angle between them)
        let expect = |i: usize, j: usize| -> f64 {
            let len = p.lengths();
            let ang = match (i.min(j), i.max(j)) {
                (0, 1) => p.gamma,
                (0, 2) => p.beta,
                (1, 2) => p.alpha,
                _ => 0.0,
            };
            len[i] * len[j] * ang.to_radians().cos()
        };
        for i in 0..3 {
            for j in 0..3 {
                let got = linalg::dot(&l[i], &l[j]);
                let want = if i == j { 1.0 } else { expect(i, j) };
                assert!((got - want).abs() < 1e-12, "({i},{j}) {got} vs {want}");
            }
        }
        assert!((linalg::dot(&l[0], &l[1]) + 0.5).abs() < 1e-12);
        assert!(linalg::det(&l) > 0.0);
    }

    #[test]
    fn lattice_param_errors() {
        assert_eq!(
            lattice_from_params(&LatticeParams::new(0.0, 1.0, 1.0, 90.0, 90.0, 90.0)),
            Err(GeometryError::NonPositiveLength(0.0))
        );
        assert!(matches!(
            lattice_from_params(&LatticeParams::new(1.0, 1.0, 1.0, 120.0, 120.0, 120.0)),
            Err(GeometryError::DegenerateAngles(..))
        ));
        assert!(matches!(
            lattice_from_params(&LatticeParams::new(1.0, 1.0, 1.0, 10.0, 10.0, 30.0)),
            Err(GeometryError::DegenerateAngles(..))
        ));
        assert!(matches!(
            params_from_lattice(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(GeometryError::SingularLattice(_))
        ));
    }

    #[test]
    fn params_of_diagonal_lattices() {
        let p = params_from_lattice(&[[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]]).unwrap();
        assert_eq!(p, LatticeParams::new(5.0, 5.0, 5.0, 90.0, 90.0, 90.0));
        let p = params_from_lattice(&[[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 4.0]]).unwrap();
        assert_eq!(p, LatticeParams::new(2.0, 3.0, 4.0, 90.0, 90.0, 90.0));
    }

    fn random_lattice(rng: &mut ChaCha8Rng) -> Mat3 {
        loop {
            let p = LatticeParams::new(
                rng.gen_range(2.0..12.0),
                rng.gen_range(2.0..12.0),
                rng.gen_range(2.0..12.0),
                rng.gen_range(50.0..130.0),
                rng.gen_range(50.0..130.0),
                rng.gen_range(50.0..130.0),
            );
            if let Ok(l) = lattice_from_params(&p) {
                return l;
            }
        }
    }

    #[test]
    fn params_invariant_under_random_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let l = random_lattice(&mut rng);
            let r = rotation_from_quaternion([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            let p0 = params_from_lattice(&l).unwrap();
            let p1 = params_from_lattice(&linalg::rotate_lattice(&l, &r)).unwrap();
            for (a, b) in p0.lengths().iter().zip(p1.lengths()) {
                assert!(close(*a, b, 1e-9));
            }
            for (a, b) in p0.angles().iter().zip(p1.angles()) {
                assert!(close(*a, b, 1e-9));
            }
            // round-trip through the canonical orientation
            let back = lattice_from_params(&p1).unwrap();
            let p2 = params_from_lattice(&back).unwrap();
            for (a, b) in p0.lengths().iter().zip(p2.lengths()) {
                assert!(close(*a, b, 1e-9));
            }
            for (a, b) in p0.angles().iter().zip(p2.angles()) {
                assert!(close(*a, b, 1e-9));
            }
        }
    }

    #[test]
    fn wrap_examples() {
        let w = wrap_fractional(&[[1.25, -0.30, 0.50]]).unwrap();
        assert!((w[0][0] - 0.25).abs() < 1e-12);
        assert!((w[0][1] - 0.70).abs() < 1e-12);
        assert_eq!(w[0][2], 0.50);
        assert_eq!(wrap_scalar(-1e-18), 0.0);
        assert_eq!(
            wrap_fractional(&[[f64::NAN, 0.0, 0.0]]),
            Err(GeometryError::NonFiniteInput)
        );
    }

    #[test]
    fn wrap_grid_idempotent_and_periodic() {
        for i in -300..=300 {
            let x = i as f64 / 97.0;
            let w = wrap_scalar(x);
            assert!((0.0..1.0).contains(&w));
            assert_eq!(wrap_scalar(w), w);
            for k in -3..=3 {
                let shifted = wrap_scalar(x + k as f64);
                let diff = canonical_diff(shifted - w);
                assert!(diff.abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn wrap_random_properties(x in -1e3f64..1e3, k in -50i32..50) {
            let w = wrap_scalar(x);
            prop_assert!((0.0..1.0).contains(&w));
            prop_assert_eq!(wrap_scalar(w), w);
            prop_assert!(canonical_diff(wrap_scalar(x + k as f64) - w).abs() < 1e-9);
        }

        #[test]
        fn periodic_distance_symmetry(
            a in prop::array::uniform3(-2.0f64..2.0),
            b in prop::array::uniform3(-2.0f64..2.0),
            k in prop::array::uniform3(-3i32..3),
        ) {
            let l = [[4.0, 0.0, 0.0], [0.8, 5.0, 0.0], [0.3, -0.5, 6.0]];
            let d = min_periodic_distance(&a, &b, &l, ImageSearch::Near).unwrap();
            let d_swap = min_periodic_distance(&b, &a, &l, ImageSearch::Near).unwrap();
            let shifted = [a[0] + k[0] as f64, a[1] + k[1] as f64, a[2] + k[2] as f64];
            let d_shift = min_periodic_distance(&shifted, &b, &l, ImageSearch::Near).unwrap();
            let d_wrap = min_periodic_distance(&a.map(wrap_scalar), &b, &l, ImageSearch::Near).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!((d - d_swap).abs() < 1e-12);
            prop_assert!((d - d_shift).abs() < 1e-9);
            prop_assert!((d - d_wrap).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_distance_examples() {
        let l = [[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0]];
        let d = min_periodic_distance(&[0.1, 0.0, 0.0], &[0.9, 0.0, 0.0], &l, ImageSearch::Near)
            .unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        let d = min_periodic_distance(&[0.3, 0.2, 0.1], &[0.3, 0.2, 0.1], &l, ImageSearch::Near)
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn periodic_distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            // near-cubic cells where the ±1 search is exact
            let l = lattice_from_params(&LatticeParams::new(
                rng.gen_range(3.0..8.0),
                rng.gen_range(3.0..8.0),
                rng.gen_range(3.0..8.0),
                rng.gen_range(75.0..105.0),
                rng.gen_range(75.0..105.0),
                rng.gen_range(75.0..105.0),
            ))
            .unwrap();
            let a: Vec3 = [rng.gen(), rng.gen(), rng.gen()];
            let b: Vec3 = [rng.gen(), rng.gen(), rng.gen()];
            let mut brute = f64::INFINITY;
            for i in -3..=3 {
                for j in -3..=3 {
                    for k in -3..=3 {
                        let f = [
                            a[0] - b[0] + i as f64,
                            a[1] - b[1] + j as f64,
                            a[2] - b[2] + k as f64,
                        ];
                        brute = brute.min(linalg::norm(&linalg::vec_mat(&f, &l)));
                    }
                }
            }
            let got = min_periodic_distance(&a, &b, &l, ImageSearch::Near).unwrap();
            assert!((got - brute).abs() < 1e-10, "{got} vs {brute}");
        }
    }

    #[test]
    fn wide_search_handles_skewed_cells() {
        let l = lattice_from_params(&LatticeParams::new(3.0, 3.0, 12.0, 90.0, 90.0, 25.0)).unwrap();
        let a = [0.0, 0.0, 0.0];
        let b = [0.45, -0.45, 0.0].map(wrap_scalar);
        let mut brute = f64::INFINITY;
        for i in -4..=4 {
            for j in -4..=4 {
                for k in -4..=4 {
                    let f = [
                        a[0] - b[0] + i as f64,
                        a[1] - b[1] + j as f64,
                        a[2] - b[2] + k as f64,
                    ];
                    brute = brute.min(linalg::norm(&linalg::vec_mat(&f, &l)));
                }
            }
        }
        let wide = min_periodic_distance(&a, &b, &l, ImageSearch::Wide).unwrap();
        assert!((wide - brute).abs() < 1e-10);
        let near = min_periodic_distance(&a, &b, &l, ImageSearch::Near).unwrap();
        assert!(near >= wide);
    }

    #[test]
    fn density_examples() {
        let h = Crystal::new(vec![1], vec![[0.0; 3]], linalg::IDENTITY).unwrap();
        let rho = density(&h).unwrap();
        let oracle = 1.008 / (6.022_140_76e23 * 1e-24);
        assert!((rho - oracle).abs() < 1e-9);
        assert!((rho - 1.674).abs() < 1e-3);

        let doubled = Crystal::new(vec![1], vec![[0.0; 3]], linalg::scale(&linalg::IDENTITY, 2.0))
            .unwrap();
        assert!((density(&doubled).unwrap() - rho / 8.0).abs() < 1e-12);

        let two = Crystal::new(vec![1, 1], vec![[0.0; 3], [0.5; 3]], linalg::IDENTITY).unwrap();
        assert!((density(&two).unwrap() - 2.0 * rho).abs() < 1e-12);
    }

    #[test]
    fn crystal_validation() {
        let l = linalg::IDENTITY;
        assert_eq!(
            Crystal::new(vec![], vec![], l),
            Err(GeometryError::EmptyStructure)
        );
        assert_eq!(
            Crystal::new(vec![101], vec![[0.0; 3]], l),
            Err(GeometryError::UnknownElement(101))
        );
        assert!(matches!(
            Crystal::new(vec![1], vec![[0.0; 3]], linalg::scale(&l, -1.0)),
            Err(GeometryError::SingularLattice(_))
        ));
        let c = Crystal::new(vec![1], vec![[1.5, -0.25, 0.0]], l).unwrap();
        assert_eq!(c.frac_coords()[0], [0.5, 0.75, 0.0]);
    }

    #[test]
    fn record_json_roundtrip_and_rejection() {
        let c = Crystal::new(vec![11, 17], vec![[0.0; 3], [0.5; 3]], linalg::scale(&linalg::IDENTITY, 5.64))
            .unwrap();
        let line = record_line(&c);
        assert!(line.starts_with("{\"atom_types\":[11,17],\"frac_coords\":"));
        assert_eq!(parse_record(&line).unwrap(), c);
        assert!(parse_record(r#"{"atom_types":[120],"frac_coords":[[0,0,0]],"lattice":[[1,0,0],[0,1,0],[0,0,1]]}"#).is_err());
    }

    #[test]
    fn formulas() {
        let na_cl = Composition::from_atoms(&[11, 17]);
        assert_eq!(na_cl.reduced_formula(), "ClNa");
        assert_eq!(Composition::from_atoms(&[8, 8, 22]).reduced_formula(), "O2Ti");
        assert_eq!(
            Composition::from_atoms(&[14, 14, 8, 8, 8, 8]).reduced_formula(),
            "O2Si"
        );
        let parsed = Composition::parse_formula("Na2Cl2").unwrap();
        assert_eq!(parsed.reduced_formula(), "ClNa");
        assert_eq!(
            Composition::parse_formula("SrTiO3").unwrap().num_atoms(),
            5
        );
        assert!(Composition::parse_formula("Xx2").is_err());
        assert!(Composition::parse_formula("na").is_err());
        assert!(Composition::parse_formula("").is_err());
        assert!(Composition::parse_formula("Na0").is_err());
    }
}
