//! Heat semigroup, Duhamel solver and the bilinear operator `B`, plus the
//! empirical checks of the heat-flow estimates.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::field_ops::{self, gaussian_divfree};
use crate::grid::GridSpec;
use crate::lp::{
    besov_from_blocks, block_norms, chemin_lerner_from_blocks, lp_norm, BesovParams,
    DyadicPartition,
};
use crate::rng::{self, tag};

/// Uniform time grid `t_m = m·dt`, `m = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        let tg = TimeGrid { t_end, n_steps };
        tg.validate()?;
        Ok(tg)
    }

    /// Grid with step as close to `dt` as fits a whole number of steps.
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Self::new(t_end, ((t_end / dt).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || self.n_steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs t_end > 0 and n_steps >= 1, got ({}, {})",
                self.t_end, self.n_steps
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t_end * m as f64 / self.n_steps as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t_end: self.t_end,
            n_steps: self.n_steps * factor,
        }
    }
}

/// Fields sampled at every node of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    time: TimeGrid,
    samples: Vec<SpectralField>,
}

impl Trajectory {
    pub fn new(time: TimeGrid, samples: Vec<SpectralField>) -> Result<Self> {
        time.validate()?;
        if samples.len() != time.num_nodes() {
            return Err(Error::GridMismatch(format!(
                "{} samples for {} time nodes",
                samples.len(),
                time.num_nodes()
            )));
        }
        for s in &samples[1..] {
            samples[0].check_compatible(s)?;
        }
        Ok(Trajectory { time, samples })
    }

    pub fn constant(time: TimeGrid, u: &SpectralField) -> Self {
        Trajectory {
            time,
            samples: vec![u.clone(); time.num_nodes()],
        }
    }

    pub fn zeros(time: TimeGrid, grid: GridSpec) -> Self {
        Self::constant(time, &SpectralField::zero_vector(grid))
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn grid(&self) -> &GridSpec {
        self.samples[0].grid()
    }

    pub fn samples(&self) -> &[SpectralField] {
        &self.samples
    }

    pub fn at(&self, m: usize) -> &SpectralField {
        &self.samples[m]
    }

    pub fn last(&self) -> &SpectralField {
        self.samples.last().expect("trajectories are never empty")
    }

    pub fn into_samples(self) -> Vec<SpectralField> {
        self.samples
    }

    /// `(t_m, u(t_m))` pairs, for the generic norm routines.
    pub fn to_pairs(&self) -> Vec<(f64, SpectralField)> {
        self.samples
            .iter()
            .enumerate()
            .map(|(m, u)| (self.time.time(m), u.clone()))
            .collect()
    }

    pub fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.time != other.time {
            return Err(Error::GridMismatch("trajectories use different time grids".into()));
        }
        self.samples[0].check_compatible(&other.samples[0])
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        self.check_compatible(other)?;
        Ok(Trajectory {
            time: self.time,
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a.add(b)).collect(),
        })
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.check_compatible(other)?;
        Ok(Trajectory {
            time: self.time,
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a.sub(b)).collect(),
        })
    }

    pub fn scaled(&self, alpha: f64) -> Trajectory {
        Trajectory {
            time: self.time,
            samples: self.samples.iter().map(|u| u.clone().scaled(alpha)).collect(),
        }
    }

    /// Per-node `L^p` block norms.
    pub fn block_series(&self, p: f64, partition: &DyadicPartition) -> Vec<Vec<f64>> {
        self.samples.iter().map(|u| block_norms(u, p, partition)).collect()
    }

    /// `‖u‖_{L̃^q_T Ḃ^s_{p,r}}` with `q` taken from `params`.
    pub fn chemin_lerner(&self, params: &BesovParams, partition: &DyadicPartition) -> Result<f64> {
        let series = self.block_series(params.p, partition);
        chemin_lerner_from_blocks(&series, self.time.dt(), params, partition.j_min())
    }

    /// Largest `‖u(t_{m+1}) − u(t_m)‖_{Ḃ^s}` along the trajectory.
    pub fn max_consecutive_jump(&self, params: &BesovParams, partition: &DyadicPartition) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let b = block_norms(&w[1].sub(&w[0]), params.p, partition);
                besov_from_blocks(&b, params.s, params.r, partition.j_min())
            })
            .fold(0.0, f64::max)
    }
}

/// `e^{tΔ}u`.
pub fn heat_semigroup(u: &SpectralField, t: f64) -> Result<SpectralField> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    let t2 = u.grid().tables();
    let mut out = u.clone();
    if t > 0.0 {
        out.apply_multiplier(|idx| (-t * t2.xi2[idx]).exp());
    }
    Ok(out)
}

/// `φ₁(z) = (1 − e^{−z})/z` and `φ₂(z) = (z − 1 + e^{−z})/z²`.
pub(crate) fn phi12(z: f64) -> (f64, f64) {
    if z < 1e-2 {
        let z2 = z * z;
        let z3 = z2 * z;
        let z4 = z3 * z;
        let z5 = z4 * z;
        (
            1.0 - z / 2.0 + z2 / 6.0 - z3 / 24.0 + z4 / 120.0 - z5 / 720.0,
            0.5 - z / 6.0 + z2 / 24.0 - z3 / 120.0 + z4 / 720.0 - z5 / 5040.0,
        )
    } else {
        let em = (-z).exp_m1();
        (-em / z, (z + em) / (z * z))
    }
}

/// Per-mode integrating-factor weights for one step of length `h`.
///
/// With `f` linear on the step, `∫₀ʰ e^{−λ(h−s)} f(s) ds = w0·f(0) + w1·f(h)`.
#[derive(Debug, Clone)]
pub(crate) struct ExpWeights {
    pub decay: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    /// `h·φ₁(λh)`, the exponential-Euler weight.
    pub euler: Vec<f64>,
}

impl ExpWeights {
    pub fn new(grid: &GridSpec, h: f64) -> Self {
        let t = grid.tables();
        let n = grid.len();
        let mut w = ExpWeights {
            decay: Vec::with_capacity(n),
            w0: Vec::with_capacity(n),
            w1: Vec::with_capacity(n),
            euler: Vec::with_capacity(n),
        };
        for &lam in &t.xi2 {
            let z = lam * h;
            let (p1, p2) = phi12(z);
            w.decay.push((-z).exp());
            w.w0.push(h * (p1 - p2));
            w.w1.push(h * p2);
            w.euler.push(h * p1);
        }
        w
    }

    /// `acc ← decay·acc + w0·f0 + w1·f1`.
    pub fn trapezoid_step(&self, acc: &mut SpectralField, f0: &SpectralField, f1: &SpectralField) {
        let ncomp = acc.num_components();
        for a in 0..ncomp {
            let (x0, x1) = (f0.component(a), f1.component(a));
            for (idx, v) in acc.component_mut(a).iter_mut().enumerate() {
                *v = *v * self.decay[idx] + x0[idx] * self.w0[idx] + x1[idx] * self.w1[idx];
            }
        }
    }

    /// `acc ← decay·acc + euler·f`.
    pub fn euler_step(&self, acc: &mut SpectralField, f: &SpectralField) {
        let ncomp = acc.num_components();
        for a in 0..ncomp {
            let x = f.component(a);
            for (idx, v) in acc.component_mut(a).iter_mut().enumerate() {
                *v = *v * self.decay[idx] + x[idx] * self.euler[idx];
            }
        }
    }

    /// `acc ← decay·acc`.
    pub fn decay_step(&self, acc: &mut SpectralField) {
        acc.apply_multiplier(|idx| self.decay[idx]);
    }
}

/// Duhamel solution driven by forcing produced node by node; `forcing(m)`
/// is called once for each `m` in increasing order.
pub(crate) fn duhamel_nodes(
    u0: &SpectralField,
    tg: &TimeGrid,
    mut forcing: impl FnMut(usize) -> SpectralField,
) -> Result<Trajectory> {
    tg.validate()?;
    let weights = ExpWeights::new(u0.grid(), tg.dt());
    let mut samples = Vec::with_capacity(tg.num_nodes());
    let mut acc = u0.clone();
    let mut f_prev = forcing(0);
    u0.check_compatible(&f_prev)?;
    samples.push(acc.clone());
    for m in 0..tg.n_steps {
        let f_next = forcing(m + 1);
        weights.trapezoid_step(&mut acc, &f_prev, &f_next);
        samples.push(acc.clone());
        f_prev = f_next;
    }
    Trajectory::new(*tg, samples)
}

/// `u(t) = e^{tΔ}u₀ + ∫₀ᵗ e^{(t−s)Δ} f(s) ds` on the nodes of `tg`, with exact
/// per-mode integrating factors and the forcing linear between nodes.
pub fn duhamel_solve(
    u0: &SpectralField,
    mut forcing: impl FnMut(f64) -> SpectralField,
    tg: &TimeGrid,
) -> Result<Trajectory> {
    duhamel_nodes(u0, tg, |m| forcing(tg.time(m)))
}

/// Duhamel solution for forcing given as samples on the nodes of `tg`.
pub fn duhamel_from_samples(u0: &SpectralField, forcing: &Trajectory) -> Result<Trajectory> {
    duhamel_nodes(u0, forcing.time_grid(), |m| forcing.at(m).clone())
}

/// `B(u, v) = −∫₀ᵗ e^{(t−s)Δ} P div(u ⊗ v)(s) ds`.
pub fn bilinear_b(u: &Trajectory, v: &Trajectory) -> Result<Trajectory> {
    u.check_compatible(v)?;
    let zero = SpectralField::zero_vector(*u.grid());
    duhamel_nodes(&zero, u.time_grid(), |m| {
        field_ops::nonlinear_term(u.at(m), v.at(m)).scaled(-1.0)
    })
}

/// Heat trajectory `t ↦ e^{tΔ}u₀` on the nodes of `tg`.
pub fn heat_trajectory(u0: &SpectralField, tg: &TimeGrid) -> Result<Trajectory> {
    tg.validate()?;
    let weights = ExpWeights::new(u0.grid(), tg.dt());
    let mut samples = Vec::with_capacity(tg.num_nodes());
    let mut acc = u0.clone();
    samples.push(acc.clone());
    for _ in 0..tg.n_steps {
        weights.decay_step(&mut acc);
        samples.push(acc.clone());
    }
    Trajectory::new(*tg, samples)
}

/// Fitted decay of `‖e^{tΔ}Δ_j u‖_{L^p}` on one shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub shell: i32,
    pub p: f64,
    /// Sup of `‖e^{tΔ}u‖/‖u‖ · e^{c t 4^j}` over the window and `t = 0`.
    pub big_c: f64,
    /// Least-squares rate in units of `4^j`.
    pub c: f64,
    /// The same fit applied to the exact per-mode `L²` decay curve.
    pub c_exact_l2: f64,
    /// `min |ξ|² / 4^j` over the modes the shell filter touches.
    pub c_floor: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl DecayFit {
    pub const CSV_HEADER: &'static str = "shell,fitted_C,fitted_c,ensemble_size,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{},{}",
            self.shell, self.big_c, self.c, self.ensemble_size, self.seed
        )
    }
}

pub fn write_decay_csv(path: &Path, fits: &[DecayFit]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(DecayFit::CSV_HEADER);
    text.push('\n');
    for fit in fits {
        text.push_str(&fit.csv_row());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `t·4^j` values of the fitting window: 20 log-spaced points in `[0.01, 1]`.
pub fn decay_window() -> Vec<f64> {
    (0..20)
        .map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 19.0))
        .collect()
}

/// Slope `c` of the least-squares line `y ≈ a − c·x`.
fn fit_rate(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (-slope, my - slope * mx)
}

/// Fits `‖e^{tΔ}Δ_j u‖_{L^p} ≈ C e^{−c t 4^j} ‖Δ_j u‖_{L^p}` over `samples`
/// random fields supported in shell `j`.
pub fn annulus_decay_check(
    j: i32,
    partition: &DyadicPartition,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<DecayFit> {
    let filter = partition.filter(j)?;
    let grid = *partition.grid();
    let t = grid.tables();
    let scale = (2.0 * j as f64).exp2();
    let c_floor = filter
        .iter()
        .zip(&t.xi2)
        .filter(|(&f, _)| f > 0.0)
        .map(|(_, &x2)| x2)
        .fold(f64::INFINITY, f64::min)
        / scale;
    if !c_floor.is_finite() || samples == 0 {
        return Err(Error::InvalidParameter(format!("shell {j} holds no grid modes")));
    }
    let window = decay_window();

    let curves: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[tag::CHECKS, j as u64, i as u64]);
            let mut u = rng::white_field(grid, grid.dimension, &mut r);
            u.apply_multiplier(|idx| filter[idx]);
            let base = lp_norm(&u, p);
            let measured = window
                .iter()
                .map(|&x| {
                    let v = heat_semigroup(&u, x / scale).expect("nonnegative time");
                    lp_norm(&v, p) / base
                })
                .collect();
            // Exact L² curve from the spectrum: Σ|û|² φ² e^{−2tλ}.
            let energy: Vec<(f64, f64)> = (0..grid.len())
                .filter(|&idx| filter[idx] > 0.0)
                .map(|idx| {
                    let e: f64 = u.components().iter().map(|c| c[idx].norm_sqr()).sum();
                    (e, t.xi2[idx])
                })
                .collect();
            let e0: f64 = energy.iter().map(|(e, _)| e).sum();
            let exact = window
                .iter()
                .map(|&x| {
                    let tt = x / scale;
                    let et: f64 = energy.iter().map(|(e, l)| e * (-2.0 * tt * l).exp()).sum();
                    (et / e0).sqrt()
                })
                .collect();
            (measured, exact)
        })
        .collect();

    let mean_log = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..window.len())
            .map(|k| curves.iter().map(|c| pick(c)[k].ln()).sum::<f64>() / samples as f64)
            .collect()
    };
    let (c, _) = fit_rate(&window, &mean_log(&|c| &c.0));
    let (c_exact, _) = fit_rate(&window, &mean_log(&|c| &c.1));
    let big_c = curves
        .iter()
        .flat_map(|cv| window.iter().zip(&cv.0).map(|(x, r)| r * (c * x).exp()))
        .fold(1.0, f64::max);
    Ok(DecayFit {
        shell: j,
        p,
        big_c,
        c,
        c_exact_l2: c_exact,
        c_floor,
        ensemble_size: samples,
        seed,
    })
}

/// `(‖u‖_{L̃^{q₁}Ḃ^{s+2/q₁}}) / (‖u₀‖_{Ḃ^s} + ‖f‖_{L̃^q Ḃ^{s−2+2/q}})` for the
/// Duhamel solution `u` of `(u₀, f)`.
pub fn duhamel_smoothing_ratio(
    u0: &SpectralField,
    forcing: &Trajectory,
    params: &BesovParams,
    q1: Option<f64>,
    q: f64,
    partition: &DyadicPartition,
) -> Result<f64> {
    let u = duhamel_from_samples(u0, forcing)?;
    let lift1 = q1.map_or(0.0, |q1| 2.0 / q1);
    let lhs = u.chemin_lerner(&params.with_s(params.s + lift1).with_q(q1), partition)?;
    let b0 = block_norms(u0, params.p, partition);
    let data = besov_from_blocks(&b0, params.s, params.r, partition.j_min());
    let rhs_f = forcing.chemin_lerner(
        &params.with_s(params.s - 2.0 + 2.0 / q).with_q(Some(q)),
        partition,
    )?;
    let denom = data + rhs_f;
    Ok(if denom > 0.0 { lhs / denom } else { 0.0 })
}

/// `‖B(u, v)‖_X / (‖u‖_X ‖v‖_X)` with `X = L̃^q Ḃ^{s+2/q}`.
pub fn bilinear_ratio(
    u: &Trajectory,
    v: &Trajectory,
    params: &BesovParams,
    q: f64,
    partition: &DyadicPartition,
) -> Result<f64> {
    let b = bilinear_b(u, v)?;
    let x = params.with_s(params.s + 2.0 / q).with_q(Some(q));
    let nb = b.chemin_lerner(&x, partition)?;
    let nu = u.chemin_lerner(&x, partition)?;
    let nv = v.chemin_lerner(&x, partition)?;
    let denom = nu * nv;
    Ok(if denom > 0.0 { nb / denom } else { 0.0 })
}

/// Ensemble summary of a measured ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMeasurement {
    pub max: f64,
    pub mean: f64,
    pub ensemble_size: usize,
    pub n_steps: usize,
}

impl RatioMeasurement {
    fn from_ratios(ratios: &[f64], n_steps: usize) -> Self {
        RatioMeasurement {
            max: ratios.iter().cloned().fold(0.0, f64::max),
            mean: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
            ensemble_size: ratios.len(),
            n_steps,
        }
    }
}

fn ensemble_field(grid: GridSpec, seed: u64, path: &[u64]) -> SpectralField {
    let mut r = rng::stream(seed, path);
    gaussian_divfree(grid, 1.0, 0.5, &mut r)
}

/// Oscillating forcing `g₁ cos(2πt/T) + g₂ sin(2πt/T)` on the nodes of `tg`.
fn ensemble_forcing(grid: GridSpec, tg: &TimeGrid, seed: u64, member: u64) -> Trajectory {
    let g1 = ensemble_field(grid, seed, &[tag::CALIBRATION, 1, member, 1]);
    let g2 = ensemble_field(grid, seed, &[tag::CALIBRATION, 1, member, 2]);
    let omega = 2.0 * std::f64::consts::PI / tg.t_end;
    let samples = (0..tg.num_nodes())
        .map(|m| {
            let t = tg.time(m);
            let mut f = g1.clone().scaled((omega * t).cos());
            f.axpy((omega * t).sin(), &g2);
            f
        })
        .collect();
    Trajectory::new(*tg, samples).expect("consistent by construction")
}

/// `Ĉ_heat`: worst smoothing ratio over `ensemble` seeded `(u₀, f)` pairs,
/// taking the larger of the `q₁ = ∞` and `q₁ = r` ratios with `q = r`.
pub fn measure_heat_constant(
    params: &BesovParams,
    partition: &DyadicPartition,
    tg: &TimeGrid,
    ensemble: usize,
    seed: u64,
) -> Result<RatioMeasurement> {
    let grid = *partition.grid();
    let ratios: Result<Vec<f64>> = (0..ensemble as u64)
        .into_par_iter()
        .map(|member| {
            let u0 = ensemble_field(grid, seed, &[tag::CALIBRATION, 0, member]);
            let f = ensemble_forcing(grid, tg, seed, member);
            let a = duhamel_smoothing_ratio(&u0, &f, params, None, params.r, partition)?;
            let b = duhamel_smoothing_ratio(&u0, &f, params, Some(params.r), params.r, partition)?;
            Ok(a.max(b))
        })
        .collect();
    Ok(RatioMeasurement::from_ratios(&ratios?, tg.n_steps))
}

/// `Ĉ_B`: worst bilinear ratio over `ensemble` pairs of heat trajectories
/// started from seeded divergence-free data, in `L̃^r Ḃ^{s+2/r}`.
pub fn measure_bilinear_constant(
    params: &BesovParams,
    partition: &DyadicPartition,
    tg: &TimeGrid,
    ensemble: usize,
    seed: u64,
) -> Result<RatioMeasurement> {
    let grid = *partition.grid();
    let ratios: Result<Vec<f64>> = (0..ensemble as u64)
        .into_par_iter()
        .map(|member| {
            let a = ensemble_field(grid, seed, &[tag::CALIBRATION, 2, member, 0]);
            let b = ensemble_field(grid, seed, &[tag::CALIBRATION, 2, member, 1]);
            let u = heat_trajectory(&a, tg)?;
            let v = heat_trajectory(&b, tg)?;
            bilinear_ratio(&u, &v, params, params.r, partition)
        })
        .collect();
    Ok(RatioMeasurement::from_ratios(&ratios?, tg.n_steps))
}

/// Largest-to-smallest spread of a measured quantity across refinements.
pub fn refinement_drift(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    if min > 0.0 {
        max / min
    } else if max == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_ops::{leray_project, taylor_green};
    use num_complex::Complex64;

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
    }

    fn single_mode(grid: GridSpec, k: [i64; 3], amp: f64) -> SpectralField {
        let mut f = SpectralField::zeros(grid, 1);
        let idx = grid.mode_index(k);
        let neg = grid.mode_index([-k[0], -k[1], -k[2]]);
        f.component_mut(0)[idx] = Complex64::new(amp, 0.0);
        f.component_mut(0)[neg] = Complex64::new(amp, 0.0);
        f
    }

    #[test]
    fn heat_semigroup_basics() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let u = single_mode(g, [2, 0, 0], 1.0);
        assert_eq!(heat_semigroup(&u, 0.0).unwrap(), u);
        let v = heat_semigroup(&u, 0.5).unwrap();
        let idx = g.mode_index([2, 0, 0]);
        assert!((v.component(0)[idx].re - (-2.0f64).exp()).abs() < 1e-15);
        assert!(matches!(heat_semigroup(&u, -1.0), Err(Error::NegativeTime(_))));
        let mut r = rng::stream(1, &[]);
        let w = rng::white_field(g, 2, &mut r);
        let ab = heat_semigroup(&heat_semigroup(&w, 0.1).unwrap(), 0.2).unwrap();
        assert!(rel(&ab, &heat_semigroup(&w, 0.3).unwrap()) < 1e-12);
    }

    #[test]
    fn phi_functions_are_continuous_at_switch() {
        let (a1, a2) = phi12(1e-2 * (1.0 - 1e-12));
        let (b1, b2) = phi12(1e-2);
        assert!((a1 - b1).abs() < 1e-13 && (a2 - b2).abs() < 1e-13);
        let (p1, p2) = phi12(0.0);
        assert_eq!((p1, p2), (1.0, 0.5));
    }

    #[test]
    fn duhamel_constant_forcing_matches_scalar_ode() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let k = [3, 1, 0];
        let lam = 10.0;
        let u0 = single_mode(g, k, 0.7);
        let a = 0.3;
        let f = single_mode(g, k, a);
        let tg = TimeGrid::new(0.5, 7).unwrap();
        let traj = duhamel_solve(&u0, |_| f.clone(), &tg).unwrap();
        let idx = g.mode_index(k);
        for m in 0..=7 {
            let t = tg.time(m);
            let want = (-lam * t).exp() * 0.7 + a * (1.0 - (-lam * t).exp()) / lam;
            let got = traj.at(m).component(0)[idx].re;
            assert!((got - want).abs() <= 1e-8 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn duhamel_without_forcing_is_heat_flow() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let mut r = rng::stream(2, &[]);
        let u0 = leray_project(&rng::white_field(g, 2, &mut r));
        let tg = TimeGrid::new(0.2, 10).unwrap();
        let zero = SpectralField::zero_vector(g);
        let traj = duhamel_solve(&u0, |_| zero.clone(), &tg).unwrap();
        for m in 0..=10 {
            let h = heat_semigroup(&u0, tg.time(m)).unwrap();
            assert!(rel(traj.at(m), &h) <= 1e-12);
        }
    }

    #[test]
    fn bilinear_b_is_bilinear_and_vanishes_on_zero() {
        let g = GridSpec::periodic(2, 16).unwrap();
        let tg = TimeGrid::new(0.05, 5).unwrap();
        let u = heat_trajectory(&taylor_green(g, 1.0, 1.0).add(&taylor_green(g, 0.5, 2.0)), &tg).unwrap();
        let mut r = rng::stream(3, &[]);
        let v = heat_trajectory(&leray_project(&rng::white_field(g, 2, &mut r)), &tg).unwrap();
        let zero = Trajectory::zeros(tg, g);
        let b0 = bilinear_b(&u, &zero).unwrap();
        assert!(b0.samples().iter().all(|s| s.l2_norm() == 0.0));
        let b1 = bilinear_b(&u.scaled(2.0), &v).unwrap();
        let b2 = bilinear_b(&u, &v).unwrap().scaled(2.0);
        assert!(rel(b1.last(), b2.last()) <= 1e-10);
    }

    #[test]
    fn decay_fit_matches_exact_curve_for_l2() {
        let g = GridSpec::periodic(2, 64).unwrap();
        let p = DyadicPartition::build(&g).unwrap();
        let fit = annulus_decay_check(2, &p, 2.0, 4, 9).unwrap();
        assert!((fit.c - fit.c_exact_l2).abs() <= 0.15 * fit.c_exact_l2);
        assert!(fit.c >= fit.c_floor);
        assert!(fit.big_c >= 1.0 - 1e-6);
    }
}
