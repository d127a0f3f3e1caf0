//! Smooth dyadic filter bank `φ(2^{-j}ξ)` on the grid frequencies.

use std::ops::RangeInclusive;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Inner radius of the base annulus.
pub const RING_INNER: f64 = 0.75;
/// Outer radius of the base annulus.
pub const RING_OUTER: f64 = 8.0 / 3.0;

fn transition(t: f64) -> f64 {
    // C^∞ step from 0 (t <= 0) to 1 (t >= 1) built from exp(-1/t).
    fn h(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (-1.0 / t).exp()
        }
    }
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = h(t);
        a / (a + h(1.0 - t))
    }
}

/// Unnormalized bump: 1 on `[1, 2]`, zero outside `(3/4, 8/3)`.
pub fn bump(rho: f64) -> f64 {
    if rho <= RING_INNER || rho >= RING_OUTER {
        0.0
    } else if rho < 1.0 {
        transition((rho - RING_INNER) / (1.0 - RING_INNER))
    } else if rho <= 2.0 {
        1.0
    } else {
        transition((RING_OUTER - rho) / (RING_OUTER - 2.0))
    }
}

/// `Σ_{i∈ℤ} bump(2^{-i} ρ)`; invariant under `ρ ↦ 2ρ` and at least 1 for ρ > 0.
fn dyadic_sum(rho: f64) -> f64 {
    let centre = rho.log2().floor() as i32;
    (centre - 3..=centre + 3)
        .map(|i| bump(rho * (-(i as f64)).exp2()))
        .sum()
}

/// The radial profile `φ(ρ) = bump(ρ) / Σ_i bump(2^{-i}ρ)`.
///
/// `Σ_j φ(2^{-j}ρ) = 1` for every `ρ > 0` up to rounding.
pub fn profile(rho: f64) -> f64 {
    let b = bump(rho);
    if b == 0.0 {
        0.0
    } else {
        b / dyadic_sum(rho)
    }
}

/// Littlewood-Paley filters sampled on the grid, one array per shell.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    grid: GridSpec,
    j_min: i32,
    j_max: i32,
    filters: Vec<Vec<f64>>,
}

/// Shells whose plateau `2^j [1, 2]` lies inside the grid band.
fn core_shell_count(grid: &GridSpec) -> usize {
    let lo = grid.base_frequency();
    let nyquist = lo * (grid.points_per_axis / 2) as f64;
    let mut count = 0;
    let mut j = (lo.log2().floor() as i32) - 1;
    while (j as f64).exp2() <= nyquist {
        let plateau_lo = (j as f64).exp2();
        if plateau_lo >= lo * (1.0 - 1e-12) && 2.0 * plateau_lo <= nyquist * (1.0 + 1e-12) {
            count += 1;
        }
        j += 1;
    }
    count
}

impl DyadicPartition {
    /// Samples the filter bank on `grid`.
    ///
    /// Every shell whose annulus meets a grid frequency is kept, so the
    /// partition of unity holds at every nonzero grid frequency.
    pub fn build(grid: &GridSpec) -> Result<Self> {
        if !(2..=3).contains(&grid.dimension) || !(grid.box_length > 0.0) {
            grid.validate()?;
        }
        let shells = core_shell_count(grid);
        if grid.points_per_axis < 16 || shells < 3 {
            return Err(Error::InsufficientResolution { shells });
        }
        grid.validate()?;

        let tables = grid.tables();
        let xi_min = grid.base_frequency();
        let xi_max = tables.max_frequency();
        let mut j_min = (xi_min / RING_OUTER).log2().floor() as i32 - 1;
        while (j_min as f64).exp2() * RING_OUTER <= xi_min {
            j_min += 1;
        }
        let mut j_max = (xi_max / RING_INNER).log2().ceil() as i32 + 1;
        while (j_max as f64).exp2() * RING_INNER >= xi_max {
            j_max -= 1;
        }

        let norms: Vec<f64> = tables.xi2.iter().map(|x| x.sqrt()).collect();
        let filters = (j_min..=j_max)
            .map(|j| {
                let scale = (-(j as f64)).exp2();
                norms
                    .iter()
                    .map(|&rho| if rho == 0.0 { 0.0 } else { profile(rho * scale) })
                    .collect()
            })
            .collect();
        Ok(DyadicPartition {
            grid: *grid,
            j_min,
            j_max,
            filters,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn shells(&self) -> RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn ring_bounds(&self) -> (f64, f64) {
        (RING_INNER, RING_OUTER)
    }

    pub fn filter(&self, j: i32) -> Result<&[f64]> {
        self.check_shell(j)?;
        Ok(&self.filters[(j - self.j_min) as usize])
    }

    pub(crate) fn filter_at(&self, slot: usize) -> &[f64] {
        &self.filters[slot]
    }

    pub fn check_shell(&self, j: i32) -> Result<()> {
        if j < self.j_min || j > self.j_max {
            return Err(Error::ShellOutOfRange {
                j,
                j_min: self.j_min,
                j_max: self.j_max,
            });
        }
        Ok(())
    }

    /// `max |Σ_j φ_j(ξ) − 1|` over nonzero grid frequencies with `lo ≤ |ξ| ≤ hi`.
    pub fn unity_residual(&self, lo: f64, hi: f64) -> f64 {
        let t = self.grid.tables();
        let mut worst: f64 = 0.0;
        for (idx, &x2) in t.xi2.iter().enumerate() {
            let rho = x2.sqrt();
            if rho == 0.0 || rho < lo || rho > hi {
                continue;
            }
            let sum: f64 = self.filters.iter().map(|f| f[idx]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }

    /// The band `[2^{j_min+1}, 2^{j_max-1}]` on which no truncated shell contributes.
    pub fn resolvable_band(&self) -> (f64, f64) {
        (
            ((self.j_min + 1) as f64).exp2(),
            ((self.j_max - 1) as f64).exp2(),
        )
    }

    /// Largest pointwise product `φ_i φ_j` over pairs with `|i − j| ≥ 2`.
    pub fn overlap_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.filters.len() {
            for b in a + 2..self.filters.len() {
                for (x, y) in self.filters[a].iter().zip(&self.filters[b]) {
                    worst = worst.max((x * y).abs());
                }
            }
        }
        worst
    }

    /// Largest filter value outside `2^j [3/4, 8/3]`, or negative value found.
    pub fn support_defect(&self) -> f64 {
        let t = self.grid.tables();
        let mut worst: f64 = 0.0;
        for (slot, f) in self.filters.iter().enumerate() {
            let scale = ((self.j_min + slot as i32) as f64).exp2();
            for (idx, &v) in f.iter().enumerate() {
                if v < 0.0 {
                    worst = worst.max(-v);
                }
                let rho = t.xi2[idx].sqrt() / scale;
                if rho <= RING_INNER || rho >= RING_OUTER {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    pub fn diagnostics(&self) -> PartitionDiagnostics {
        let (lo, hi) = self.resolvable_band();
        let shells = self
            .shells()
            .zip(&self.filters)
            .map(|(j, f)| {
                let scale = (j as f64).exp2();
                ShellDiagnostics {
                    j,
                    inner_radius: RING_INNER * scale,
                    outer_radius: RING_OUTER * scale,
                    modes: f.iter().filter(|&&v| v > 0.0).count(),
                }
            })
            .collect();
        PartitionDiagnostics {
            j_min: self.j_min,
            j_max: self.j_max,
            ring_bounds: [RING_INNER, RING_OUTER],
            band: [lo, hi],
            residual_in_band: self.unity_residual(lo, hi),
            residual_all_modes: self.unity_residual(0.0, f64::INFINITY),
            overlap_defect: self.overlap_defect(),
            shells,
        }
    }

    /// Scales one filter in place. Breaks the partition of unity; exists so
    /// verification suites can be exercised against a known-bad bank.
    #[doc(hidden)]
    pub fn corrupt_filter(&mut self, j: i32, factor: f64) -> Result<()> {
        self.check_shell(j)?;
        for v in &mut self.filters[(j - self.j_min) as usize] {
            *v *= factor;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShellDiagnostics {
    pub j: i32,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub modes: usize,
}

/// JSON-serializable summary of a filter bank.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionDiagnostics {
    pub j_min: i32,
    pub j_max: i32,
    pub ring_bounds: [f64; 2],
    pub band: [f64; 2],
    pub residual_in_band: f64,
    pub residual_all_modes: f64,
    pub overlap_defect: f64,
    pub shells: Vec<ShellDiagnostics>,
}
