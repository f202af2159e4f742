//! Synthetic ABX₃ perovskite corpus for desk-scale experiments.
//!
//! Cells are the ideal cubic arrangement with a lattice constant of
//! `2(r_B + r_X)`, independent per-axis strain and small Gaussian site
//! displacements. Only charge-balanced combinations whose Goldschmidt
//! tolerance factor lies in `[0.8, 1.1]` are emitted.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::crystal::{Crystal, GeometryError};
use crate::linalg::{Mat3, Vec3};
use crate::rng;

#[derive(Debug, Clone, Copy)]
struct Ion {
    z: u8,
    charge: i8,
    radius: f64,
}

const fn ion(z: u8, charge: i8, radius: f64) -> Ion {
    Ion { z, charge, radius }
}

// Shannon ionic radii in Å (12-fold for A, 6-fold for B).
const A_SITES: &[Ion] = &[
    ion(11, 1, 1.39),
    ion(19, 1, 1.64),
    ion(37, 1, 1.72),
    ion(55, 1, 1.88),
    ion(20, 2, 1.34),
    ion(38, 2, 1.44),
    ion(56, 2, 1.61),
    ion(82, 2, 1.49),
    ion(57, 3, 1.36),
];

const B_SITES: &[Ion] = &[
    ion(12, 2, 0.72),
    ion(28, 2, 0.69),
    ion(29, 2, 0.73),
    ion(30, 2, 0.74),
    ion(13, 3, 0.535),
    ion(26, 3, 0.645),
    ion(27, 3, 0.545),
    ion(31, 3, 0.62),
    ion(22, 4, 0.605),
    ion(40, 4, 0.72),
    ion(50, 4, 0.69),
    ion(72, 4, 0.71),
    ion(25, 4, 0.53),
    ion(41, 5, 0.64),
    ion(73, 5, 0.64),
];

const X_SITES: &[Ion] = &[ion(8, -2, 1.40), ion(9, -1, 1.33), ion(17, -1, 1.81)];

const IDEAL_SITES: [Vec3; 5] = [
    [0.0, 0.0, 0.0],
    [0.5, 0.5, 0.5],
    [0.5, 0.5, 0.0],
    [0.5, 0.0, 0.5],
    [0.0, 0.5, 0.5],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub seed: u64,
    /// Standard deviation of the per-axis relative strain.
    pub strain: f64,
    /// Standard deviation of site displacements, fractional units.
    pub displacement: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: 0,
            strain: 0.01,
            displacement: 0.005,
        }
    }
}

/// `(A, B, X)` atomic numbers of every admissible perovskite.
pub fn perovskite_chemistries() -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for a in A_SITES {
        for b in B_SITES {
            for x in X_SITES {
                if a.charge + b.charge + 3 * x.charge != 0 {
                    continue;
                }
                let t = (a.radius + x.radius) / (std::f64::consts::SQRT_2 * (b.radius + x.radius));
                if (0.8..=1.1).contains(&t) {
                    out.push([a.z, b.z, x.z]);
                }
            }
        }
    }
    out
}

fn radius(table: &[Ion], z: u8) -> f64 {
    table.iter().find(|i| i.z == z).map(|i| i.radius).unwrap_or(1.0)
}

/// Generates `cfg.size` perovskites, cycling through a shuffled list of
/// chemistries so every admissible one appears.
pub fn synthetic_perovskites(cfg: &CorpusConfig) -> Result<Vec<Crystal>, GeometryError> {
    let mut chems = perovskite_chemistries();
    let mut r = rng::stream(cfg.seed, &[7]);
    chems.shuffle(&mut r);
    let mut out = Vec::with_capacity(cfg.size);
    for i in 0..cfg.size {
        let [a, b, x] = chems[i % chems.len()];
        let a0 = 2.0 * (radius(B_SITES, b) + radius(X_SITES, x));
        let mut lattice: Mat3 = [[0.0; 3]; 3];
        for (k, row) in lattice.iter_mut().enumerate() {
            row[k] = a0 * (1.0 + cfg.strain * rng::normal(&mut r));
        }
        let coords: Vec<Vec3> = IDEAL_SITES
            .iter()
            .map(|s| std::array::from_fn(|k| s[k] + cfg.displacement * rng::normal(&mut r)))
            .collect();
        out.push(Crystal::new(vec![a, b, x, x, x], coords, lattice)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compositional_validity, structural_validity};

    #[test]
    fn every_record_is_valid_and_balanced() {
        let cfg = CorpusConfig {
            size: 300,
            ..CorpusConfig::default()
        };
        let set = synthetic_perovskites(&cfg).unwrap();
        assert_eq!(set.len(), 300);
        for c in &set {
            assert_eq!(c.num_atoms(), 5);
            assert!(structural_validity(c));
            assert!(compositional_validity(c), "{}", c.composition().reduced_formula());
        }
        assert!(perovskite_chemistries().len() >= 30);
        assert_eq!(set, synthetic_perovskites(&cfg).unwrap());
    }
}
