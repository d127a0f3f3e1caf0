//! Homogeneous Besov and Chemin-Lerner norms over the dyadic filter bank.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::SpectralField;
use crate::grid::GridSpec;
use crate::lp::partition::DyadicPartition;

/// Regularity `s`, integrability `p`, summability `r` and an optional time
/// exponent `q` (absent means `q = ∞`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovParams {
    pub s: f64,
    pub p: f64,
    pub r: f64,
    #[serde(default)]
    pub q: Option<f64>,
}

impl BesovParams {
    pub fn new(s: f64, p: f64, r: f64) -> Result<Self> {
        let params = BesovParams { s, p, r, q: None };
        params.validate()?;
        Ok(params)
    }

    /// The scale-invariant index `s = d/p − 1`, with `(p, r)` checked against
    /// the admissible range for dimension `d`.
    pub fn critical(dimension: usize, p: f64, r: f64) -> Result<Self> {
        let params = Self::new(dimension as f64 / p - 1.0, p, r)?;
        if !admissible(dimension, p, r) {
            return Err(Error::InvalidParameter(format!(
                "(p, r) = ({p}, {r}) outside the admissible range for d = {dimension}"
            )));
        }
        Ok(params)
    }

    pub fn with_s(self, s: f64) -> Self {
        BesovParams { s, ..self }
    }

    pub fn with_q(self, q: Option<f64>) -> Self {
        BesovParams { q, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.s.is_finite() {
            return Err(Error::InvalidParameter("s must be finite".into()));
        }
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "p must lie in [2, ∞), got {}",
                self.p
            )));
        }
        if !(self.r >= 2.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "r must lie in [2, ∞), got {}",
                self.r
            )));
        }
        if let Some(q) = self.q {
            if !(q >= 1.0) {
                return Err(Error::InvalidParameter(format!("q must be >= 1, got {q}")));
            }
        }
        Ok(())
    }
}

/// `2 ≤ r < ∞` when `p ≤ d`, and `2 ≤ r < 2p/(p − d)` when `p > d`.
pub fn admissible(dimension: usize, p: f64, r: f64) -> bool {
    let d = dimension as f64;
    if !(p >= 2.0 && p.is_finite() && r >= 2.0 && r.is_finite()) {
        return false;
    }
    if p <= d {
        true
    } else {
        r < 2.0 * p / (p - d)
    }
}

/// Rectangle-rule `L^p` norm of the pointwise Euclidean magnitude.
pub fn lp_norm_physical(grid: &GridSpec, comps: &[Vec<f64>], p: f64) -> f64 {
    if p.is_infinite() {
        return (0..grid.len())
            .map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
    }
    let sum: f64 = (0..grid.len())
        .map(|i| {
            let m2: f64 = comps.iter().map(|c| c[i] * c[i]).sum();
            if p == 2.0 {
                m2
            } else {
                m2.powf(0.5 * p)
            }
        })
        .sum();
    (sum * grid.cell_volume()).powf(1.0 / p)
}

/// `L^p` norm of a spectral field, computed on the grid.
pub fn lp_norm(u: &SpectralField, p: f64) -> f64 {
    if p == 2.0 {
        return u.l2_norm();
    }
    lp_norm_physical(u.grid(), &u.to_physical(), p)
}

/// `‖Δ_j g‖_{L^p(H)}` for every shell, where `g` is a family of fields
/// (the `H`-components) and the pointwise norm sums over components and
/// family members. A single-member family gives the plain block norms.
///
/// For `p = 2` the rectangle rule equals the Parseval sum, which is used
/// directly.
pub fn block_norms_family(family: &[&SpectralField], p: f64, partition: &DyadicPartition) -> Vec<f64> {
    let grid = *partition.grid();
    if family.is_empty() {
        return vec![0.0; partition.len()];
    }
    if p == 2.0 {
        let volume = grid.volume();
        return (0..partition.len())
            .map(|slot| {
                let filter = partition.filter_at(slot);
                let sum: f64 = family
                    .iter()
                    .flat_map(|u| u.components())
                    .map(|c| {
                        c.iter()
                            .zip(filter)
                            .map(|(v, &w)| w * w * v.norm_sqr())
                            .sum::<f64>()
                    })
                    .sum();
                (sum * volume).sqrt()
            })
            .collect();
    }

    let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut mag2 = vec![0.0f64; grid.len()];
    (0..partition.len())
        .map(|slot| {
            let filter = partition.filter_at(slot);
            mag2.iter_mut().for_each(|m| *m = 0.0);
            let mut any = false;
            for c in family.iter().flat_map(|u| u.components()) {
                let mut nonzero = false;
                for ((b, v), &w) in buf.iter_mut().zip(c).zip(filter) {
                    *b = v * w;
                    nonzero |= w != 0.0 && (v.re != 0.0 || v.im != 0.0);
                }
                if !nonzero {
                    continue;
                }
                any = true;
                fft::inverse(&grid, &mut buf);
                for (m, b) in mag2.iter_mut().zip(&buf) {
                    *m += b.re * b.re;
                }
            }
            if !any {
                return 0.0;
            }
            let sum: f64 = mag2.iter().map(|&m| m.powf(0.5 * p)).sum();
            (sum * grid.cell_volume()).powf(1.0 / p)
        })
        .collect()
}

/// `‖Δ_j u‖_{L^p}` for every shell `j_min..=j_max`.
pub fn block_norms(u: &SpectralField, p: f64, partition: &DyadicPartition) -> Vec<f64> {
    block_norms_family(&[u], p, partition)
}

/// `(Σ_j 2^{jsr} b_j^r)^{1/r}` from precomputed block norms.
pub fn besov_from_blocks(blocks: &[f64], s: f64, r: f64, j_min: i32) -> f64 {
    blocks
        .iter()
        .enumerate()
        .map(|(slot, &b)| {
            let j = j_min + slot as i32;
            ((j as f64) * s).exp2() * b
        })
        .map(|w| w.powf(r))
        .sum::<f64>()
        .powf(1.0 / r)
}

/// Homogeneous Besov norm `‖u‖_{Ḃ^s_{p,r}}` over the resolvable shells.
pub fn besov_norm(u: &SpectralField, params: &BesovParams, partition: &DyadicPartition) -> f64 {
    let blocks = block_norms(u, params.p, partition);
    besov_from_blocks(&blocks, params.s, params.r, partition.j_min())
}

/// Besov norm of an `H`-valued family (the pointwise norm sums the family).
pub fn besov_norm_family(
    family: &[&SpectralField],
    params: &BesovParams,
    partition: &DyadicPartition,
) -> f64 {
    let blocks = block_norms_family(family, params.p, partition);
    besov_from_blocks(&blocks, params.s, params.r, partition.j_min())
}

/// Trapezoidal `L^q` norm of uniformly spaced samples; `None` is the supremum.
pub fn time_norm(samples: impl Iterator<Item = f64> + Clone, dt: f64, q: Option<f64>) -> f64 {
    match q {
        None => samples.fold(0.0, f64::max),
        Some(q) => {
            let n = samples.clone().count();
            if n < 2 {
                return 0.0;
            }
            let sum: f64 = samples
                .enumerate()
                .map(|(m, v)| {
                    let w = if m == 0 || m == n - 1 { 0.5 } else { 1.0 };
                    w * v.powf(q)
                })
                .sum();
            (sum * dt).powf(1.0 / q)
        }
    }
}

/// Chemin-Lerner norm from per-sample block norms: time `L^q` per shell
/// first, then the weighted `ℓ^r` sum.
pub fn chemin_lerner_from_blocks(
    series: &[Vec<f64>],
    dt: f64,
    params: &BesovParams,
    j_min: i32,
) -> Result<f64> {
    let first = series.first().ok_or(Error::EmptyTrajectory)?;
    let per_shell: Vec<f64> = (0..first.len())
        .map(|slot| time_norm(series.iter().map(|b| b[slot]), dt, params.q))
        .collect();
    Ok(besov_from_blocks(&per_shell, params.s, params.r, j_min))
}

/// Chemin-Lerner norm `‖u‖_{L̃^q_T Ḃ^s_{p,r}}` of a uniformly sampled
/// trajectory given as `(t, u(t))` pairs.
pub fn chemin_lerner_norm(
    trajectory: &[(f64, SpectralField)],
    params: &BesovParams,
    partition: &DyadicPartition,
) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let dt = if trajectory.len() > 1 {
        let dt = trajectory[1].0 - trajectory[0].0;
        for w in trajectory.windows(2) {
            let step = w[1].0 - w[0].0;
            if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::GridMismatch("time samples are not uniform".into()));
            }
        }
        dt
    } else {
        0.0
    };
    let series: Vec<Vec<f64>> = trajectory
        .iter()
        .map(|(_, u)| block_norms(u, params.p, partition))
        .collect();
    chemin_lerner_from_blocks(&series, dt, params, partition.j_min())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissibility() {
        assert!(admissible(3, 2.0, 100.0));
        assert!(admissible(3, 3.0, 7.0));
        // p = 6, d = 3: r < 4.
        assert!(admissible(3, 6.0, 3.9));
        assert!(!admissible(3, 6.0, 4.0));
        assert!(!admissible(2, 1.5, 2.0));
        assert!(BesovParams::critical(3, 6.0, 4.0).is_err());
        let c = BesovParams::critical(2, 4.0, 2.0).unwrap();
        assert!((c.s + 0.5).abs() < 1e-15);
    }

    #[test]
    fn sup_norm_is_pointwise_max() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let mut a = vec![0.0; g.len()];
        let mut b = vec![0.0; g.len()];
        a[5] = 3.0;
        b[5] = -4.0;
        b[7] = 2.0;
        assert_eq!(lp_norm_physical(&g, &[a, b], f64::INFINITY), 5.0);
    }

    #[test]
    fn time_norm_rules() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(time_norm(v.iter().cloned(), 0.5, None), 3.0);
        // Trapezoid of squares: 0.5*(0.5*1 + 4 + 0.5*9) = 4.5.
        let got = time_norm(v.iter().cloned(), 0.5, Some(2.0));
        assert!((got - 4.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let p = DyadicPartition::build(&g).unwrap();
        let params = BesovParams::new(0.0, 2.0, 2.0).unwrap();
        assert!(matches!(
            chemin_lerner_norm(&[], &params, &p),
            Err(Error::EmptyTrajectory)
        ));
    }
}
