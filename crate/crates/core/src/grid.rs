//! Periodic grid description and the per-grid wavenumber tables shared by
//! every spectral operator.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A periodic torus `[0, L)^d` sampled with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dimension: usize,
    pub points_per_axis: usize,
    pub box_length: f64,
}

impl GridSpec {
    /// Builds a grid and checks its invariants.
    pub fn new(dimension: usize, points_per_axis: usize, box_length: f64) -> Result<Self> {
        let grid = GridSpec {
            dimension,
            points_per_axis,
            box_length,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// `2π`-periodic grid, the usual choice.
    pub fn periodic(dimension: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(dimension, points_per_axis, 2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dimension) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if self.points_per_axis < 16 || !self.points_per_axis.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 16, got {}",
                self.points_per_axis
            )));
        }
        if !(self.box_length > 0.0) || !self.box_length.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "box length must be positive, got {}",
                self.box_length
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical volume of one grid cell, `(L/n)^d`.
    pub fn cell_volume(&self) -> f64 {
        (self.box_length / self.points_per_axis as f64).powi(self.dimension as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dimension as i32)
    }

    /// Spacing between neighbouring wavenumbers, `2π/L`.
    pub fn base_frequency(&self) -> f64 {
        2.0 * PI / self.box_length
    }

    /// Largest per-axis integer wavenumber kept by the 2/3 rule.
    pub fn dealias_limit(&self) -> i64 {
        (self.points_per_axis / 3) as i64
    }

    /// Physical coordinate of grid point `i` along one axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        self.box_length * i as f64 / self.points_per_axis as f64
    }

    /// Multi-index of flat index `idx` (axis 0 slowest).
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.points_per_axis;
        let mut out = [0usize; 3];
        let mut rest = idx;
        for a in (0..self.dimension).rev() {
            out[a] = rest % n;
            rest /= n;
        }
        out
    }

    pub fn ravel(&self, index: [usize; 3]) -> usize {
        let n = self.points_per_axis;
        (0..self.dimension).fold(0, |acc, a| acc * n + index[a])
    }

    /// Flat index of the mode with signed integer wavenumber `k`.
    pub fn mode_index(&self, k: [i64; 3]) -> usize {
        let n = self.points_per_axis as i64;
        let mut index = [0usize; 3];
        for a in 0..self.dimension {
            index[a] = k[a].rem_euclid(n) as usize;
        }
        self.ravel(index)
    }

    pub fn tables(&self) -> Arc<GridTables> {
        GridTables::cached(self)
    }

    pub(crate) fn same_as(&self, other: &GridSpec) -> bool {
        self.dimension == other.dimension
            && self.points_per_axis == other.points_per_axis
            && self.box_length.to_bits() == other.box_length.to_bits()
    }
}

fn signed_wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wavenumber tables for one grid.
#[derive(Debug)]
pub struct GridTables {
    /// Signed integer wavenumbers per flat index.
    pub k: Vec<[i64; 3]>,
    /// Physical wave vector `ξ = 2π k / L`.
    pub xi: Vec<[f64; 3]>,
    /// `|ξ|²`.
    pub xi2: Vec<f64>,
    /// 2/3-rule mask: true where the mode is kept.
    pub dealias: Vec<bool>,
    /// True for modes carrying a Nyquist index on any axis.
    pub nyquist: Vec<bool>,
}

type GridKey = (usize, usize, u64);

impl GridTables {
    fn build(grid: &GridSpec) -> Self {
        let n = grid.points_per_axis;
        let len = grid.len();
        let base = grid.base_frequency();
        let limit = grid.dealias_limit();
        let mut k = Vec::with_capacity(len);
        let mut xi = Vec::with_capacity(len);
        let mut xi2 = Vec::with_capacity(len);
        let mut dealias = Vec::with_capacity(len);
        let mut nyquist = Vec::with_capacity(len);
        for idx in 0..len {
            let multi = grid.unravel(idx);
            let mut kk = [0i64; 3];
            let mut x = [0.0; 3];
            let mut keep = true;
            let mut nyq = false;
            for a in 0..grid.dimension {
                kk[a] = signed_wavenumber(multi[a], n);
                x[a] = base * kk[a] as f64;
                keep &= kk[a].abs() <= limit;
                nyq |= multi[a] == n / 2;
            }
            k.push(kk);
            xi.push(x);
            xi2.push(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
            dealias.push(keep);
            nyquist.push(nyq);
        }
        GridTables {
            k,
            xi,
            xi2,
            dealias,
            nyquist,
        }
    }

    fn cached(grid: &GridSpec) -> Arc<GridTables> {
        static CACHE: OnceLock<Mutex<HashMap<GridKey, Arc<GridTables>>>> = OnceLock::new();
        let key = (
            grid.dimension,
            grid.points_per_axis,
            grid.box_length.to_bits(),
        );
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().expect("grid table cache poisoned").get(&key) {
            return Arc::clone(t);
        }
        let built = Arc::new(GridTables::build(grid));
        cache
            .lock()
            .expect("grid table cache poisoned")
            .entry(key)
            .or_insert(built)
            .clone()
    }

    /// Largest `|ξ|` present on the grid (the corner mode).
    pub fn max_frequency(&self) -> f64 {
        self.xi2.iter().cloned().fold(0.0, f64::max).sqrt()
    }
}
