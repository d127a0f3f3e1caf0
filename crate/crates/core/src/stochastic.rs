//! Truncated cylindrical Wiener process, the noise operators, the stochastic
//! convolution and the Monte Carlo checks of the stochastic heat-flow bounds.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::SpectralField;
use crate::field_ops::{dealiased_physical, gaussian_divfree, leray_project};
use crate::flow::{ExpWeights, TimeGrid, Trajectory};
use crate::grid::GridSpec;
use crate::lp::{
    besov_from_blocks, block_norms, block_norms_family, chemin_lerner_from_blocks,
    lp_norm_physical, BesovParams, DyadicPartition,
};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeShape {
    Constant,
    Cos,
    Sin,
}

/// One retained direction of `H`: a scalar profile `ψ_k` and its coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMode {
    pub shape: ModeShape,
    /// Integer wavevector of `cos`/`sin` profiles (ignored for `constant`).
    #[serde(default)]
    pub wavevector: [i64; 3],
    pub sigma: f64,
    /// Velocity component driven by an additive mode; defaults to `k mod d`.
    #[serde(default)]
    pub direction: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStructure {
    /// `f_k(t, u) = σ_k ψ_k u`.
    LinearMultiplicative,
    /// `f_k(t, u) = σ_k ψ_k e_{dir(k)}`, independent of `u`.
    Additive,
}

/// `x ↦ coefficient · x^exponent`, constant in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Envelope {
    pub fn eval(&self, x: f64) -> f64 {
        if self.exponent == 0.0 {
            self.coefficient
        } else {
            self.coefficient * x.powf(self.exponent)
        }
    }
}

/// Outcome of fitting and auditing the growth conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseAudit {
    pub passed: bool,
    pub grid: GridSpec,
    pub p: f64,
    pub r: f64,
    pub seed: u64,
    pub fit_samples: usize,
    pub audit_samples: usize,
    pub margin: f64,
    /// Largest observed `lhs / rhs` of the growth bound on the audit ensemble.
    pub growth_max_ratio: f64,
    /// Largest observed `lhs / rhs` of the Lipschitz bound on the audit ensemble.
    pub lipschitz_max_ratio: f64,
}

/// Truncated noise description, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub structure: NoiseStructure,
    pub modes: Vec<NoiseMode>,
    #[serde(default)]
    pub beta1: Option<Envelope>,
    #[serde(default)]
    pub beta2: Option<Envelope>,
    #[serde(default)]
    pub gamma_bound: f64,
    /// `‖η‖_∞` when `β₁ = η x^r`.
    #[serde(default)]
    pub eta_bound: Option<f64>,
    #[serde(default)]
    pub audit: Option<NoiseAudit>,
}

impl NoiseModel {
    pub fn linear(modes: Vec<NoiseMode>) -> Self {
        NoiseModel {
            structure: NoiseStructure::LinearMultiplicative,
            modes,
            beta1: None,
            beta2: None,
            gamma_bound: 0.0,
            eta_bound: None,
            audit: None,
        }
    }

    pub fn additive(modes: Vec<NoiseMode>) -> Self {
        NoiseModel {
            structure: NoiseStructure::Additive,
            ..Self::linear(modes)
        }
    }

    /// Four low-frequency modes with coupling `sigma` each.
    pub fn default_linear(sigma: f64) -> Self {
        let mode = |shape, wavevector| NoiseMode {
            shape,
            wavevector,
            sigma,
            direction: None,
        };
        Self::linear(vec![
            mode(ModeShape::Constant, [0, 0, 0]),
            mode(ModeShape::Cos, [1, 0, 0]),
            mode(ModeShape::Sin, [0, 1, 0]),
            mode(ModeShape::Cos, [1, 1, 0]),
        ])
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Same model with every coupling multiplied by `factor`; clears the audit.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for mode in &mut m.modes {
            mode.sigma *= factor;
        }
        m.beta1 = None;
        m.beta2 = None;
        m.eta_bound = None;
        m.audit = None;
        m
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("noise model needs at least one mode".into()));
        }
        if !(self.gamma_bound >= 0.0) {
            return Err(Error::InvalidParameter("gamma_bound must be >= 0".into()));
        }
        let limit = grid.dealias_limit();
        for (k, m) in self.modes.iter().enumerate() {
            if !m.sigma.is_finite() {
                return Err(Error::InvalidParameter(format!("mode {k}: sigma is not finite")));
            }
            if m.shape != ModeShape::Constant {
                for a in 0..3 {
                    if a >= grid.dimension && m.wavevector[a] != 0 {
                        return Err(Error::InvalidParameter(format!(
                            "mode {k}: wavevector has a component beyond dimension {}",
                            grid.dimension
                        )));
                    }
                    if m.wavevector[a].abs() >= limit {
                        return Err(Error::InvalidParameter(format!(
                            "mode {k}: wavevector component {} not below the dealiasing limit {limit}",
                            m.wavevector[a]
                        )));
                    }
                }
            }
            if let Some(dir) = m.direction {
                if dir >= grid.dimension {
                    return Err(Error::InvalidParameter(format!(
                        "mode {k}: direction {dir} out of range"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Refuses models without a passing audit for this grid and `(p, r)`.
    pub fn require_audited(&self, grid: &GridSpec, params: &BesovParams) -> Result<&NoiseAudit> {
        let audit = self
            .audit
            .as_ref()
            .ok_or_else(|| Error::UnauditedNoise("noise model carries no audit".into()))?;
        if !audit.passed {
            return Err(Error::UnauditedNoise("noise model audit failed".into()));
        }
        if !audit.grid.same_as(grid) || audit.p != params.p || audit.r != params.r {
            return Err(Error::UnauditedNoise(
                "noise model was audited for a different grid or (p, r)".into(),
            ));
        }
        if self.beta1.is_none() || self.beta2.is_none() {
            return Err(Error::UnauditedNoise("noise model has no fitted envelopes".into()));
        }
        Ok(audit)
    }

    /// `‖β₁(·, x)‖_∞`.
    pub fn beta1_at(&self, x: f64) -> Result<f64> {
        self.beta1
            .map(|e| e.eval(x))
            .ok_or_else(|| Error::UnauditedNoise("beta1 envelope missing".into()))
    }

    /// `‖β₂(·, x)‖_∞`.
    pub fn beta2_at(&self, x: f64) -> Result<f64> {
        self.beta2
            .map(|e| e.eval(x))
            .ok_or_else(|| Error::UnauditedNoise("beta2 envelope missing".into()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Physical profile `ψ_k` sampled on the grid.
pub fn mode_profile(grid: &GridSpec, mode: &NoiseMode) -> Vec<f64> {
    let base = grid.base_frequency();
    (0..grid.len())
        .map(|idx| {
            let m = grid.unravel(idx);
            let phase: f64 = (0..grid.dimension)
                .map(|a| mode.wavevector[a] as f64 * base * grid.coordinate(m[a]))
                .sum();
            match mode.shape {
                ModeShape::Constant => 1.0,
                ModeShape::Cos => phase.cos(),
                ModeShape::Sin => phase.sin(),
            }
        })
        .collect()
}

/// A noise model bound to a grid, with its profiles precomputed.
#[derive(Debug, Clone)]
pub struct NoiseOperator {
    grid: GridSpec,
    structure: NoiseStructure,
    sigmas: Vec<f64>,
    profiles: Vec<Vec<f64>>,
    /// `f_k` for additive models.
    raw: Vec<SpectralField>,
    /// `P f_k` for additive models.
    fixed: Vec<SpectralField>,
}

impl NoiseOperator {
    pub fn new(model: &NoiseModel, grid: &GridSpec) -> Result<Self> {
        model.validate(grid)?;
        let profiles: Vec<Vec<f64>> = model.modes.iter().map(|m| mode_profile(grid, m)).collect();
        let sigmas: Vec<f64> = model.modes.iter().map(|m| m.sigma).collect();
        let raw: Vec<SpectralField> = match model.structure {
            NoiseStructure::LinearMultiplicative => Vec::new(),
            NoiseStructure::Additive => model
                .modes
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let dir = m.direction.unwrap_or(k % grid.dimension);
                    let mut comps = vec![vec![0.0; grid.len()]; grid.dimension];
                    comps[dir] = profiles[k].iter().map(|v| m.sigma * v).collect();
                    SpectralField::from_physical(*grid, &comps)
                        .expect("sizes match grid")
                        .dealiased()
                })
                .collect(),
        };
        let fixed = raw.iter().map(leray_project).collect();
        Ok(NoiseOperator {
            grid: *grid,
            structure: model.structure,
            sigmas,
            profiles,
            raw,
            fixed,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.sigmas.len()
    }

    pub fn structure(&self) -> NoiseStructure {
        self.structure
    }

    pub fn is_silent(&self) -> bool {
        self.sigmas.iter().all(|&s| s == 0.0)
    }

    /// `P(m · u)` for a physical multiplier `m`, dealiased.
    fn project_product(&self, multiplier: &[f64], u_phys: &[Vec<f64>]) -> SpectralField {
        let grid = self.grid;
        let t = grid.tables();
        let comps = u_phys
            .iter()
            .map(|c| {
                let mut buf: Vec<Complex64> = c
                    .iter()
                    .zip(multiplier)
                    .map(|(v, m)| Complex64::new(v * m, 0.0))
                    .collect();
                fft::forward(&grid, &mut buf);
                for (idx, b) in buf.iter_mut().enumerate() {
                    if !t.dealias[idx] {
                        *b = Complex64::new(0.0, 0.0);
                    }
                }
                buf
            })
            .collect();
        let mut f = SpectralField::from_parts_unchecked(grid, comps);
        f.clear_unrepresented_modes();
        leray_project(&f)
    }

    /// `f_k(t, u)` before projection, dealiased.
    pub fn eval(&self, u: &SpectralField, k: usize) -> SpectralField {
        match self.structure {
            NoiseStructure::Additive => self.raw[k].clone(),
            NoiseStructure::LinearMultiplicative => {
                let mult: Vec<f64> = self.profiles[k].iter().map(|v| self.sigmas[k] * v).collect();
                let phys = dealiased_physical(u);
                let t = self.grid.tables();
                let comps = phys
                    .iter()
                    .map(|c| {
                        let prod: Vec<f64> = c.iter().zip(&mult).map(|(a, b)| a * b).collect();
                        let mut v = fft::forward_real(&self.grid, &prod);
                        for (idx, x) in v.iter_mut().enumerate() {
                            if !t.dealias[idx] {
                                *x = Complex64::new(0.0, 0.0);
                            }
                        }
                        v
                    })
                    .collect();
                let mut f = SpectralField::from_parts_unchecked(self.grid, comps);
                f.clear_unrepresented_modes();
                f
            }
        }
    }

    /// `P f_k(t, u)` for every mode.
    pub fn projected(&self, u: &SpectralField) -> Vec<SpectralField> {
        match self.structure {
            NoiseStructure::Additive => self.fixed.clone(),
            NoiseStructure::LinearMultiplicative => {
                let phys = dealiased_physical(u);
                self.projected_from_physical(&phys)
            }
        }
    }

    pub(crate) fn projected_from_physical(&self, u_phys: &[Vec<f64>]) -> Vec<SpectralField> {
        match self.structure {
            NoiseStructure::Additive => self.fixed.clone(),
            NoiseStructure::LinearMultiplicative => (0..self.num_modes())
                .map(|k| {
                    let mult: Vec<f64> =
                        self.profiles[k].iter().map(|v| self.sigmas[k] * v).collect();
                    self.project_product(&mult, u_phys)
                })
                .collect(),
        }
    }

    /// `Σ_k P f_k(t, u) ΔW_k`, using linearity to do one product.
    pub(crate) fn increment_from_physical(&self, u_phys: &[Vec<f64>], dw: &[f64]) -> SpectralField {
        match self.structure {
            NoiseStructure::Additive => {
                let mut acc = SpectralField::zero_vector(self.grid);
                for (f, &w) in self.fixed.iter().zip(dw) {
                    acc.axpy(w, f);
                }
                acc
            }
            NoiseStructure::LinearMultiplicative => {
                let mut mult = vec![0.0; self.grid.len()];
                for ((prof, &s), &w) in self.profiles.iter().zip(&self.sigmas).zip(dw) {
                    let c = s * w;
                    if c != 0.0 {
                        for (m, v) in mult.iter_mut().zip(prof) {
                            *m += c * v;
                        }
                    }
                }
                self.project_product(&mult, u_phys)
            }
        }
    }

    pub fn increment(&self, u: &SpectralField, dw: &[f64]) -> SpectralField {
        let phys = match self.structure {
            NoiseStructure::Additive => Vec::new(),
            NoiseStructure::LinearMultiplicative => dealiased_physical(u),
        };
        self.increment_from_physical(&phys, dw)
    }
}

/// `f_k(t, u)` for `model` on `u`'s grid (projection is applied downstream).
pub fn noise_eval(model: &NoiseModel, _t: f64, u: &SpectralField, k: usize) -> Result<SpectralField> {
    if k >= model.num_modes() {
        return Err(Error::InvalidParameter(format!(
            "mode {k} out of range for {} modes",
            model.num_modes()
        )));
    }
    Ok(NoiseOperator::new(model, u.grid())?.eval(u, k))
}

/// Brownian increments `ΔW_k^m`, `n_steps × K`, variance `dt` each.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub dt: f64,
    increments: Vec<Vec<f64>>,
}

impl WienerPath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn num_modes(&self) -> usize {
        self.increments.first().map_or(0, |v| v.len())
    }

    pub fn increment(&self, m: usize) -> &[f64] {
        &self.increments[m]
    }

    /// `W_k(t_end)`.
    pub fn terminal(&self, k: usize) -> f64 {
        self.increments.iter().map(|row| row[k]).sum()
    }

    pub fn scaled(&self, factor: f64) -> WienerPath {
        WienerPath {
            seed: self.seed,
            dt: self.dt,
            increments: self
                .increments
                .iter()
                .map(|row| row.iter().map(|w| w * factor).collect())
                .collect(),
        }
    }

    pub fn check(&self, tg: &TimeGrid, modes: usize) -> Result<()> {
        if self.n_steps() != tg.n_steps || (self.dt - tg.dt()).abs() > 1e-15 * tg.dt() {
            return Err(Error::GridMismatch("Wiener path and time grid disagree".into()));
        }
        if self.num_modes() != modes {
            return Err(Error::GridMismatch(format!(
                "Wiener path has {} modes, noise model {modes}",
                self.num_modes()
            )));
        }
        Ok(())
    }
}

/// Independent per-mode Gaussian increments; mode `k` draws from its own
/// stream derived from `(seed, k)`.
pub fn sample_wiener(seed: u64, tg: &TimeGrid, modes: usize) -> Result<WienerPath> {
    tg.validate()?;
    if modes == 0 {
        return Err(Error::InvalidParameter("Wiener path needs K >= 1".into()));
    }
    let dt = tg.dt();
    let sd = dt.sqrt();
    let columns: Vec<Vec<f64>> = (0..modes as u64)
        .map(|k| {
            let mut r = rng::stream(seed, &[tag::WIENER, k]);
            (0..tg.n_steps).map(|_| sd * rng::standard_normal(&mut r)).collect()
        })
        .collect();
    let increments = (0..tg.n_steps)
        .map(|m| columns.iter().map(|c| c[m]).collect())
        .collect();
    Ok(WienerPath {
        seed,
        dt,
        increments,
    })
}

/// Test hooks for the stochastic convolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConvolutionOptions {
    /// Replace `e^{dtΔ}` by the identity, turning the scheme into a plain Itô sum.
    pub freeze_heat: bool,
}

/// Shared exponential-Euler recursion `F_{m+1} = e^{dtΔ}(F_m + I_m)`, with
/// `increment(m)` producing `Σ_k G_k(t_m) ΔW_k^m`.
pub(crate) fn convolve(
    grid: GridSpec,
    tg: &TimeGrid,
    options: ConvolutionOptions,
    mut increment: impl FnMut(usize) -> SpectralField,
    mut visit: impl FnMut(usize, &SpectralField),
) -> SpectralField {
    let weights = (!options.freeze_heat).then(|| ExpWeights::new(&grid, tg.dt()));
    let mut acc = SpectralField::zero_vector(grid);
    visit(0, &acc);
    for m in 0..tg.n_steps {
        let inc = increment(m);
        acc.axpy(1.0, &inc);
        if let Some(w) = &weights {
            w.decay_step(&mut acc);
        }
        visit(m + 1, &acc);
    }
    acc
}

/// `F(t) = ∫₀ᵗ e^{(t−s)Δ} P f(s, u(s)) dW(s)` by left-point exponential Euler.
pub fn stochastic_convolution(
    op: &NoiseOperator,
    u: &Trajectory,
    path: &WienerPath,
    options: ConvolutionOptions,
) -> Result<Trajectory> {
    let tg = *u.time_grid();
    path.check(&tg, op.num_modes())?;
    if !u.grid().same_as(op.grid()) {
        return Err(Error::GridMismatch("noise operator and trajectory grids differ".into()));
    }
    let mut samples = Vec::with_capacity(tg.num_nodes());
    convolve(
        *op.grid(),
        &tg,
        options,
        |m| op.increment(u.at(m), path.increment(m)),
        |_, f| samples.push(f.clone()),
    );
    Trajectory::new(tg, samples)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub path_count: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64], seed: u64) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            path_count: n,
            estimate: mean,
            standard_error: (var / n.max(1) as f64).sqrt(),
            seed,
        }
    }

    pub const CSV_HEADER: &'static str = "path_count,estimate,standard_error,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{}",
            self.path_count, self.estimate, self.standard_error, self.seed
        )
    }
}

pub fn write_mc_csv(path: &Path, rows: &[McEstimate]) -> Result<()> {
    let mut text = String::from(McEstimate::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Sample moments of `W(t_end)` over many paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerMoments {
    pub paths: usize,
    pub t_end: f64,
    pub mean: McEstimate,
    pub variance: McEstimate,
    pub cross_covariance: McEstimate,
}

/// Mean and variance of mode 0 and covariance of modes 0 and 1 at `t_end`.
pub fn wiener_moments(seed: u64, tg: &TimeGrid, paths: usize) -> Result<WienerMoments> {
    let terminals: Result<Vec<(f64, f64)>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let w = sample_wiener(rng::derive_seed(seed, &[i]), tg, 2)?;
            Ok((w.terminal(0), w.terminal(1)))
        })
        .collect();
    let terminals = terminals?;
    let w0: Vec<f64> = terminals.iter().map(|t| t.0).collect();
    let sq: Vec<f64> = terminals.iter().map(|t| t.0 * t.0).collect();
    let cross: Vec<f64> = terminals.iter().map(|t| t.0 * t.1).collect();
    Ok(WienerMoments {
        paths,
        t_end: tg.t_end,
        mean: McEstimate::from_samples(&w0, seed),
        variance: McEstimate::from_samples(&sq, seed),
        cross_covariance: McEstimate::from_samples(&cross, seed),
    })
}

/// Monte Carlo check of the stochastic regularity bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionRatio {
    /// `E‖F‖^r_{L̃^∞ Ḃ^{s−2/r}}`.
    pub lhs: McEstimate,
    /// `‖G‖^r_{L^r Ḃ^{s−1}}` with the `H`-valued block norm.
    pub rhs: f64,
    pub ratio: f64,
    pub n_steps: usize,
}

/// Runs the convolution of a deterministic integrand `G_k(t_m) = P f_k(u(t_m))`
/// over `paths` Wiener paths and compares both sides of the bound. The
/// regularity index is `s = s_c + 2/r`, so `F` is measured in
/// `L̃^∞ Ḃ^{s_c}` and `G` in `L^r Ḃ^{s_c − 1 + 2/r}`.
pub fn convolution_ratio(
    op: &NoiseOperator,
    u: &Trajectory,
    params: &BesovParams,
    partition: &DyadicPartition,
    paths: usize,
    seed: u64,
) -> Result<ConvolutionRatio> {
    let tg = *u.time_grid();
    let r = params.r;
    let s = params.s + 2.0 / r;
    let integrand: Vec<Vec<SpectralField>> = u.samples().iter().map(|x| op.projected(x)).collect();
    let g_series: Vec<Vec<f64>> = integrand
        .iter()
        .map(|g| {
            let fam: Vec<&SpectralField> = g.iter().collect();
            block_norms_family(&fam, params.p, partition)
        })
        .collect();
    let g_params = BesovParams {
        s: s - 1.0,
        p: params.p,
        r,
        q: Some(r),
    };
    let rhs = chemin_lerner_from_blocks(&g_series, tg.dt(), &g_params, partition.j_min())?.powf(r);

    let k = op.num_modes();
    let samples: Result<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_wiener(rng::derive_seed(seed, &[i]), &tg, k)?;
            let mut sup = vec![0.0f64; partition.len()];
            convolve(
                *op.grid(),
                &tg,
                ConvolutionOptions::default(),
                |m| {
                    let mut acc = SpectralField::zero_vector(*op.grid());
                    for (g, &w) in integrand[m].iter().zip(path.increment(m)) {
                        acc.axpy(w, g);
                    }
                    acc
                },
                |_, f| {
                    for (s, b) in sup.iter_mut().zip(block_norms(f, params.p, partition)) {
                        *s = s.max(b);
                    }
                },
            );
            Ok(besov_from_blocks(&sup, s - 2.0 / r, r, partition.j_min()).powf(r))
        })
        .collect();
    let lhs = McEstimate::from_samples(&samples?, seed);
    let ratio = if rhs > 0.0 { lhs.estimate / rhs } else { 0.0 };
    Ok(ConvolutionRatio {
        lhs,
        rhs,
        ratio,
        n_steps: tg.n_steps,
    })
}

/// `Ĉ_F`: worst convolution ratio over heat trajectories of `ensemble`
/// seeded data.
pub fn measure_convolution_constant(
    op: &NoiseOperator,
    params: &BesovParams,
    partition: &DyadicPartition,
    tg: &TimeGrid,
    ensemble: usize,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    let grid = *partition.grid();
    let mut worst: f64 = 0.0;
    for member in 0..ensemble as u64 {
        let mut r = rng::stream(seed, &[tag::CALIBRATION, 3, member]);
        let u0 = gaussian_divfree(grid, 1.0, 0.5, &mut r);
        let u = crate::flow::heat_trajectory(&u0, tg)?;
        let res = convolution_ratio(
            op,
            &u,
            params,
            partition,
            paths,
            rng::derive_seed(seed, &[tag::CALIBRATION, 4, member]),
        )?;
        worst = worst.max(res.ratio);
    }
    Ok(worst)
}

/// Result of the quadrature check of `∫_τ^t (t−s)^{α−1}(s−τ)^{−α} ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationCheck {
    pub alpha: f64,
    pub tau: f64,
    pub t: f64,
    pub numeric: f64,
    pub analytic: f64,
    pub abs_error: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of a smooth integrand on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫₀^a x^{−β} g(x) dx` for `β < 1` after `x = y^{1/(1−β)}`, which removes
/// the endpoint singularity.
fn integrate_weakly_singular(g: &dyn Fn(f64) -> f64, beta: f64, a: f64, tol: f64) -> f64 {
    let e = 1.0 / (1.0 - beta);
    let upper = a.powf(1.0 - beta);
    integrate(&|y: f64| g(y.powf(e)) * e, 0.0, upper, tol)
}

/// Quadrature of `∫_τ^t (t−s)^{α−1}(s−τ)^{−α} ds` against `Γ(α)Γ(1−α)`.
pub fn factorization_identity_check(alpha: f64, tau: f64, t: f64) -> Result<FactorizationCheck> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    if !(t > tau) {
        return Err(Error::InvalidParameter(format!("need t > tau, got ({tau}, {t})")));
    }
    let h = t - tau;
    let half = 0.5 * h;
    // Near s = τ the weight is (s−τ)^{−α}; near s = t it is (t−s)^{α−1}.
    let left = integrate_weakly_singular(&|x| (h - x).powf(alpha - 1.0), alpha, half, 1e-13);
    let right = integrate_weakly_singular(&|x| (h - x).powf(-alpha), 1.0 - alpha, half, 1e-13);
    let numeric = left + right;
    let analytic = statrs::function::gamma::gamma(alpha) * statrs::function::gamma::gamma(1.0 - alpha);
    Ok(FactorizationCheck {
        alpha,
        tau,
        t,
        numeric,
        analytic,
        abs_error: (numeric - analytic).abs(),
    })
}

/// `E|Z|^p` for a standard normal `Z`.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    use statrs::function::gamma::gamma;
    2f64.powf(0.5 * p) * gamma(0.5 * (p + 1.0)) / PI.sqrt()
}

/// Constant `K` with `E‖∫G dW‖^p_{L^q} ≤ K ‖G‖^p_{L²_t L^q_x(H)}` for
/// deterministic `G`: `E|Z|^q` to the power `p/q` when `p ≤ q`, else `E|Z|^p`.
pub fn gaussian_moment_constant(p: f64, q: f64) -> f64 {
    if p <= q {
        gaussian_abs_moment(q).powf(p / q)
    } else {
        gaussian_abs_moment(p)
    }
}

/// Monte Carlo comparison of the two sides of the one-sided Itô bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoMomentReport {
    pub p_exp: f64,
    pub r_exp: f64,
    /// `E‖∫₀^T G dW‖^p_{L^q}`.
    pub lhs: McEstimate,
    /// `‖G‖^p_{L²(0,T; L^q(H))}`.
    pub rhs: f64,
    /// `lhs / rhs`.
    pub ratio: f64,
    /// Standard error of `ratio`.
    pub ratio_standard_error: f64,
    /// Gaussian constant `K(p, q)`; exactly 1 when `p = q = 2`.
    pub gaussian_constant: f64,
    /// `ratio ≤ 1 + 3·se`.
    pub within_unit_bound: bool,
    /// `ratio ≤ K (1 + 3·se/K)`.
    pub within_gaussian_bound: bool,
}

/// Integrand `G_k = P f_k(u_ref)` held constant in time, integrated against
/// `paths` Wiener paths without the heat flow.
pub fn ito_moment_check(
    op: &NoiseOperator,
    reference: &SpectralField,
    paths: usize,
    tg: &TimeGrid,
    p_exp: f64,
    r_exp: f64,
    seed: u64,
) -> Result<ItoMomentReport> {
    if !(p_exp > 1.0 && r_exp >= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "need p > 1 and q >= 2, got ({p_exp}, {r_exp})"
        )));
    }
    let grid = *op.grid();
    let g = op.projected(reference);
    let g_phys: Vec<Vec<Vec<f64>>> = g.iter().map(|f| f.to_physical()).collect();
    // ‖G‖_{L²_t L^q_x(H)} for time-constant G is √T · ‖ |G|_H ‖_{L^q}.
    let h_comps: Vec<Vec<f64>> = g_phys.iter().flatten().cloned().collect();
    let rhs = (tg.t_end.sqrt() * lp_norm_physical(&grid, &h_comps, r_exp)).powf(p_exp);
    let k = op.num_modes();
    let samples: Result<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_wiener(rng::derive_seed(seed, &[i]), tg, k)?;
            let f = convolve(
                grid,
                tg,
                ConvolutionOptions { freeze_heat: true },
                |m| {
                    let mut acc = SpectralField::zero_vector(grid);
                    for (gk, &w) in g.iter().zip(path.increment(m)) {
                        acc.axpy(w, gk);
                    }
                    acc
                },
                |_, _| {},
            );
            Ok(lp_norm_physical(&grid, &f.to_physical(), r_exp).powf(p_exp))
        })
        .collect();
    let lhs = McEstimate::from_samples(&samples?, seed);
    let kc = gaussian_moment_constant(p_exp, r_exp);
    let (ratio, se) = if rhs > 0.0 {
        (lhs.estimate / rhs, lhs.standard_error / rhs)
    } else {
        (0.0, 0.0)
    };
    Ok(ItoMomentReport {
        p_exp,
        r_exp,
        lhs,
        rhs,
        ratio,
        ratio_standard_error: se,
        gaussian_constant: kc,
        within_unit_bound: ratio <= 1.0 + 3.0 * se,
        within_gaussian_bound: ratio <= kc + 3.0 * se,
    })
}

/// `E‖F_N‖²_{L²}` of the exponential-Euler scheme with additive noise, in
/// closed form: `Σ_k Σ_ξ |Ĝ_k(ξ)|² h Σ_{i=1}^{N} e^{−2λ i h}` times the volume.
pub fn additive_scheme_second_moment(op: &NoiseOperator, tg: &TimeGrid) -> Result<f64> {
    additive_second_moment(op, tg, false)
}

/// `E‖F(T)‖²_{L²} = Σ_k Σ_ξ |Ĝ_k(ξ)|² (1 − e^{−2λT}) / (2λ)` times the volume.
pub fn additive_exact_second_moment(op: &NoiseOperator, tg: &TimeGrid) -> Result<f64> {
    additive_second_moment(op, tg, true)
}

fn additive_second_moment(op: &NoiseOperator, tg: &TimeGrid, exact: bool) -> Result<f64> {
    if op.structure != NoiseStructure::Additive {
        return Err(Error::InvalidParameter("second-moment formula needs additive noise".into()));
    }
    let grid = op.grid;
    let t = grid.tables();
    let h = tg.dt();
    let n = tg.n_steps as f64;
    let mut total = 0.0;
    for g in &op.fixed {
        for c in g.components() {
            for (idx, v) in c.iter().enumerate() {
                let e = v.norm_sqr();
                if e == 0.0 {
                    continue;
                }
                let lam = t.xi2[idx];
                let factor = if exact {
                    -(-2.0 * lam * tg.t_end).exp_m1() / (2.0 * lam)
                } else {
                    // h Σ_{i=1}^{N} q^i with q = e^{−2λh}.
                    let q = (-2.0 * lam * h).exp();
                    h * q * (-(n * (-2.0 * lam * h)).exp_m1()) / (-(-2.0 * lam * h).exp_m1())
                };
                total += e * factor;
            }
        }
    }
    Ok(total * grid.volume())
}

/// Fitted growth envelopes and the audit that certifies them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub beta1: Envelope,
    pub beta2: Envelope,
    pub eta_bound: Option<f64>,
    pub audit: NoiseAudit,
}

/// Declared sample ensemble: divergence-free Gaussian fields with
/// correlation length uniform in `[0.2, 1.5]` and amplitude log-uniform in
/// `[10⁻², 10]`.
fn envelope_sample(grid: GridSpec, seed: u64, purpose: u64, i: u64) -> SpectralField {
    let mut r = rng::stream(seed, &[purpose, i]);
    let width = 0.2 + 1.3 * r.random::<f64>();
    let amp = 10f64.powf(-2.0 + 3.0 * r.random::<f64>());
    gaussian_divfree(grid, amp, width, &mut r)
}

/// `(‖Pf(u)‖^r_{Ḃ^{s_c−1+2/r}(H)}, ‖u‖^r_{Ḃ^{s_c}}, ‖u‖^r_{Ḃ^{s_c+2/r}})`.
fn growth_terms(
    op: &NoiseOperator,
    u: &SpectralField,
    params: &BesovParams,
    partition: &DyadicPartition,
) -> (f64, f64, f64) {
    let r = params.r;
    let g = op.projected(u);
    let fam: Vec<&SpectralField> = g.iter().collect();
    let gb = block_norms_family(&fam, params.p, partition);
    let lhs = besov_from_blocks(&gb, params.s - 1.0 + 2.0 / r, r, partition.j_min()).powf(r);
    let ub = block_norms(u, params.p, partition);
    let crit = besov_from_blocks(&ub, params.s, r, partition.j_min()).powf(r);
    let lifted = besov_from_blocks(&ub, params.s + 2.0 / r, r, partition.j_min()).powf(r);
    (lhs, crit, lifted)
}

/// Fits `β₁`, `β₂` on `fit_samples` draws, then audits both growth
/// conditions on `audit_samples` fresh draws (and fresh pairs).
///
/// Linear models get `β₁ = η x^r` and `β₂ = η₂` constant; additive models get
/// `β₁` constant and `β₂ = 0`. `params.s` must be the critical index.
#[allow(clippy::too_many_arguments)]
pub fn fit_and_audit(
    model: &NoiseModel,
    params: &BesovParams,
    partition: &DyadicPartition,
    fit_samples: usize,
    audit_samples: usize,
    margin: f64,
    seed: u64,
) -> Result<EnvelopeFit> {
    let grid = *partition.grid();
    let op = NoiseOperator::new(model, &grid)?;
    let gamma = model.gamma_bound;
    let r = params.r;

    let fit: Vec<(f64, f64, f64)> = (0..fit_samples as u64)
        .into_par_iter()
        .map(|i| growth_terms(&op, &envelope_sample(grid, seed, tag::ENVELOPE_FIT, i), params, partition))
        .collect();
    let (beta1, beta2, eta) = match model.structure {
        NoiseStructure::LinearMultiplicative => {
            let eta = margin
                * fit
                    .iter()
                    .map(|&(l, c, _)| if c > 0.0 { l / c } else { 0.0 })
                    .fold(0.0, f64::max);
            // f is linear in u, so the Lipschitz bound uses the same ratio.
            (
                Envelope {
                    coefficient: eta,
                    exponent: r,
                },
                Envelope {
                    coefficient: eta,
                    exponent: 0.0,
                },
                Some(eta),
            )
        }
        NoiseStructure::Additive => {
            let c = margin * fit.iter().map(|f| f.0).fold(0.0, f64::max);
            (
                Envelope {
                    coefficient: c,
                    exponent: 0.0,
                },
                Envelope {
                    coefficient: 0.0,
                    exponent: 0.0,
                },
                None,
            )
        }
    };

    let audits: Vec<(f64, f64)> = (0..audit_samples as u64)
        .into_par_iter()
        .map(|i| {
            let u = envelope_sample(grid, seed, tag::AUDIT, 2 * i);
            let v = envelope_sample(grid, seed, tag::AUDIT, 2 * i + 1);
            let (l, c, lifted) = growth_terms(&op, &u, params, partition);
            let growth = ratio_or_zero(l, beta1.eval(c.powf(1.0 / r)) + gamma * lifted);

            let diff = u.sub(&v);
            let (ld, cd, lifted_d) = growth_terms(&op, &diff, params, partition);
            // Additive noise does not depend on u, so Pf(u) − Pf(v) = 0.
            let ld = match op.structure {
                NoiseStructure::LinearMultiplicative => ld,
                NoiseStructure::Additive => 0.0,
            };
            let cv = growth_terms(&op, &v, params, partition).1;
            let both = c.powf(1.0 / r).max(cv.powf(1.0 / r));
            let lip_bound = beta2.eval(both) * cd + gamma * lifted_d;
            (growth, ratio_or_zero(ld, lip_bound))
        })
        .collect();
    let growth_max = audits.iter().map(|a| a.0).fold(0.0, f64::max);
    let lip_max = audits.iter().map(|a| a.1).fold(0.0, f64::max);
    let audit = NoiseAudit {
        passed: growth_max <= 1.0 && lip_max <= 1.0,
        grid,
        p: params.p,
        r,
        seed,
        fit_samples,
        audit_samples,
        margin,
        growth_max_ratio: growth_max,
        lipschitz_max_ratio: lip_max,
    };
    Ok(EnvelopeFit {
        beta1,
        beta2,
        eta_bound: eta,
        audit,
    })
}

fn ratio_or_zero(lhs: f64, bound: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if bound > 0.0 {
        lhs / bound
    } else {
        f64::INFINITY
    }
}

/// Returns `model` with fitted envelopes and audit attached.
pub fn certify(
    model: &NoiseModel,
    params: &BesovParams,
    partition: &DyadicPartition,
    seed: u64,
) -> Result<NoiseModel> {
    let fit = fit_and_audit(model, params, partition, 1000, 100, 1.25, seed)?;
    let mut m = model.clone();
    m.beta1 = Some(fit.beta1);
    m.beta2 = Some(fit.beta2);
    m.eta_bound = fit.eta_bound;
    m.audit = Some(fit.audit);
    Ok(m)
}
