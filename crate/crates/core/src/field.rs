//! Spectral vector fields on the periodic grid.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::GridSpec;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A field stored as Fourier-series coefficients, one array per component.
///
/// Fields built through the public constructors have a zero mean mode and
/// zero Nyquist modes, so the physical samples are real.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec, components: usize) -> Self {
        SpectralField {
            grid,
            comps: vec![vec![ZERO; grid.len()]; components],
        }
    }

    /// Vector field with `d` components.
    pub fn zero_vector(grid: GridSpec) -> Self {
        Self::zeros(grid, grid.dimension)
    }

    /// Wraps raw coefficient arrays. The mean and Nyquist modes are cleared.
    pub fn from_coefficients(grid: GridSpec, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.is_empty() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "coefficient arrays must have {} entries",
                grid.len()
            )));
        }
        let mut f = SpectralField { grid, comps };
        f.clear_unrepresented_modes();
        Ok(f)
    }

    /// Transforms real physical samples. The mean and Nyquist modes are cleared.
    pub fn from_physical(grid: GridSpec, values: &[Vec<f64>]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "physical arrays must have {} entries",
                grid.len()
            )));
        }
        let comps = values.iter().map(|v| fft::forward_real(&grid, v)).collect();
        let mut f = SpectralField { grid, comps };
        f.clear_unrepresented_modes();
        Ok(f)
    }

    pub(crate) fn from_parts_unchecked(grid: GridSpec, comps: Vec<Vec<Complex64>>) -> Self {
        SpectralField { grid, comps }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_components(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, a: usize) -> &[Complex64] {
        &self.comps[a]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [Complex64] {
        &mut self.comps[a]
    }

    pub fn components(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<Vec<Complex64>> {
        self.comps
    }

    /// Zeroes the mean mode and every Nyquist mode.
    pub fn clear_unrepresented_modes(&mut self) {
        let t = self.grid.tables();
        for c in &mut self.comps {
            c[0] = ZERO;
            for (v, &nyq) in c.iter_mut().zip(&t.nyquist) {
                if nyq {
                    *v = ZERO;
                }
            }
        }
    }

    /// Applies the 2/3-rule truncation.
    pub fn dealias(&mut self) {
        let t = self.grid.tables();
        for c in &mut self.comps {
            for (v, &keep) in c.iter_mut().zip(&t.dealias) {
                if !keep {
                    *v = ZERO;
                }
            }
        }
    }

    pub fn dealiased(mut self) -> Self {
        self.dealias();
        self
    }

    /// Real physical samples of each component.
    pub fn to_physical(&self) -> Vec<Vec<f64>> {
        self.comps
            .iter()
            .map(|c| fft::inverse_real(&self.grid, c))
            .collect()
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.comps.len() != other.comps.len() {
            return Err(Error::GridMismatch(
                "fields live on different grids or have different component counts".into(),
            ));
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.comps {
            for v in c.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        self.scale(alpha);
        self
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SpectralField) {
        debug_assert!(self.check_compatible(other).is_ok());
        for (c, o) in self.comps.iter_mut().zip(&other.comps) {
            for (v, w) in c.iter_mut().zip(o) {
                *v += w * alpha;
            }
        }
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiplies mode `idx` of every component by `m(idx)`.
    pub fn apply_multiplier(&mut self, m: impl Fn(usize) -> f64) {
        for c in &mut self.comps {
            for (idx, v) in c.iter_mut().enumerate() {
                *v *= m(idx);
            }
        }
    }

    /// L² inner product over the box (real part; fields are real).
    pub fn inner(&self, other: &SpectralField) -> f64 {
        let sum: f64 = self
            .comps
            .iter()
            .zip(&other.comps)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(x, y)| (x * y.conj()).re)
            .sum();
        sum * self.grid.volume()
    }

    /// L² norm over the box via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Maximum pointwise Euclidean magnitude on the grid.
    pub fn linf_norm(&self) -> f64 {
        let phys = self.to_physical();
        (0..self.grid.len())
            .map(|i| phys.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.comps
            .iter()
            .flatten()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Largest violation of `c(-k) = conj(c(k))`; zero for real fields.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let t = self.grid.tables();
        let mut worst: f64 = 0.0;
        for c in &self.comps {
            for (idx, k) in t.k.iter().enumerate() {
                let mirror = self.grid.mode_index([-k[0], -k[1], -k[2]]);
                worst = worst.max((c[idx] - c[mirror].conj()).norm());
            }
        }
        worst
    }
}
