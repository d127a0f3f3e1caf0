//! The truncated stochastic system: cut-offs, the fixed-point map `K`,
//! Picard iteration, the path time-stepper and stopping-time records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::field_ops::{dealiased_physical, nonlinear_from_physical};
use crate::flow::{heat_trajectory, ExpWeights, TimeGrid, Trajectory};
use crate::grid::GridSpec;
use crate::lp::{besov_from_blocks, block_norms, chemin_lerner_from_blocks, BesovParams, DyadicPartition};
use crate::stochastic::{NoiseModel, NoiseOperator, WienerPath};

/// `θ₁`: 1 on `[0, R)`, `2 − x/R` on `[R, 2R]`, 0 beyond.
pub fn theta1(x: f64, radius: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!("theta1 needs x >= 0, got {x}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("theta1 needs R > 0, got {radius}")));
    }
    Ok(if x < radius {
        1.0
    } else if x <= 2.0 * radius {
        2.0 - x / radius
    } else {
        0.0
    })
}

/// `θ₂,N`: 1 on `[0, N)`, `N + 1 − x` on `[N, N+1]`, 0 beyond.
pub fn theta2(x: f64, n: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!("theta2 needs x >= 0, got {x}")));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("theta2 needs N > 0, got {n}")));
    }
    Ok(if x < n {
        1.0
    } else if x <= n + 1.0 {
        n + 1.0 - x
    } else {
        0.0
    })
}

/// `R = min{1, (4C*)^{−1/r}}`.
pub fn auto_radius(c_star: f64, r: f64) -> f64 {
    (4.0 * c_star).powf(-1.0 / r).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Critical-mode parameters, `s = d/p − 1`.
    pub besov: BesovParams,
    /// Threshold `R` of `θ₁` and of `σ`.
    pub radius: f64,
    /// Threshold `N` of `θ₂,N` and of `ρ_N`.
    pub n_cutoff: f64,
    pub c_star: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub time: TimeGrid,
}

impl SolverConfig {
    /// Config with `R` set from `C*`.
    pub fn with_auto_radius(
        dimension: usize,
        p: f64,
        r: f64,
        c_star: f64,
        n_cutoff: f64,
        time: TimeGrid,
    ) -> Result<Self> {
        let config = SolverConfig {
            besov: BesovParams::critical(dimension, p, r)?,
            radius: auto_radius(c_star, r),
            n_cutoff,
            c_star,
            picard_tol: 1e-8,
            picard_max_iter: 30,
            time,
        };
        config.validate(dimension)?;
        Ok(config)
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        self.besov.validate()?;
        let crit = BesovParams::critical(dimension, self.besov.p, self.besov.r)?;
        if (crit.s - self.besov.s).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "s = {} is not the critical index d/p - 1 = {}",
                self.besov.s, crit.s
            )));
        }
        if !(self.radius > 0.0 && self.radius <= 1.0) {
            return Err(Error::InvalidParameter(format!("R must lie in (0, 1], got {}", self.radius)));
        }
        if !(self.n_cutoff > 0.0) || !(self.c_star > 0.0) {
            return Err(Error::InvalidParameter("N and C* must be positive".into()));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "picard_tol must be positive and picard_max_iter >= 1".into(),
            ));
        }
        self.time.validate()
    }

    /// Smallness gate `C*·γ < 1/4`.
    pub fn check_gamma(&self, model: &NoiseModel) -> Result<()> {
        if self.c_star * model.gamma_bound >= 0.25 {
            return Err(Error::Refused(format!(
                "C* * gamma = {} violates the smallness gate C* * gamma < 1/4",
                self.c_star * model.gamma_bound
            )));
        }
        Ok(())
    }

    pub fn with_n_cutoff(&self, n_cutoff: f64) -> Self {
        SolverConfig { n_cutoff, ..*self }
    }

    pub fn with_time(&self, time: TimeGrid) -> Self {
        SolverConfig { time, ..*self }
    }
}

/// `R`, `M` and `T̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConstants {
    pub radius: f64,
    pub m: f64,
    pub t_hat: f64,
}

/// `R = min{1, (4C*)^{−1/r}}`, `M = 3C*E‖u₀‖^r + 1` and
/// `T̂ = 1 / (3C*((R^{−r} + 1)‖β₁(·,N+1)‖_∞ + ‖β₂(·,2N+2)‖_∞))`.
pub fn solver_constants(
    c_star: f64,
    r: f64,
    n_cutoff: f64,
    model: &NoiseModel,
    e_u0_pow_r: f64,
) -> Result<SolverConstants> {
    if !(c_star > 0.0) {
        return Err(Error::InvalidParameter(format!("C* must be positive, got {c_star}")));
    }
    let radius = auto_radius(c_star, r);
    let m = 3.0 * c_star * e_u0_pow_r + 1.0;
    let b1 = model.beta1_at(n_cutoff + 1.0)?;
    let b2 = model.beta2_at(2.0 * n_cutoff + 2.0)?;
    let denom = 3.0 * c_star * ((radius.powf(-r) + 1.0) * b1 + b2);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "T-hat denominator is {denom}; the envelopes vanish or diverge"
        )));
    }
    Ok(SolverConstants {
        radius,
        m,
        t_hat: 1.0 / denom,
    })
}

/// Cut-off values at one time node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffState {
    pub chi1: f64,
    pub chi2: f64,
    /// Left-rectangle `Σ_{i<m} dt ‖u(t_i)‖^r_{Ḃ^{s+2/r}}`.
    pub running_lr_norm_pow_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    SurvivedHorizon,
    StoppedSigma,
    StoppedRho,
    NumericalBlowup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRecord {
    pub sigma_hit: Option<f64>,
    pub rho_n_hit: Option<f64>,
    pub tau_n: Option<f64>,
    pub status: PathStatus,
    pub blowup_step: Option<usize>,
}

impl StoppingRecord {
    fn from_hits(sigma: Option<f64>, rho: Option<f64>, blowup_step: Option<usize>) -> Self {
        let tau = match (sigma, rho) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let status = if blowup_step.is_some() {
            PathStatus::NumericalBlowup
        } else {
            match (sigma, rho) {
                (None, None) => PathStatus::SurvivedHorizon,
                (Some(a), Some(b)) if b < a => PathStatus::StoppedRho,
                (Some(_), _) => PathStatus::StoppedSigma,
                (None, Some(_)) => PathStatus::StoppedRho,
            }
        };
        StoppingRecord {
            sigma_hit: sigma,
            rho_n_hit: rho,
            tau_n: tau,
            status,
            blowup_step,
        }
    }

    /// `τ_N` with `None` (no hit) read as `+∞`.
    pub fn tau_or_inf(&self) -> f64 {
        self.tau_n.unwrap_or(f64::INFINITY)
    }

    /// No stopping-time hit on `[0, t0]`.
    pub fn survives_until(&self, t0: f64) -> bool {
        self.status != PathStatus::NumericalBlowup && self.tau_or_inf() > t0
    }

    /// No `σ` hit over the horizon.
    pub fn sigma_survived(&self) -> bool {
        self.status != PathStatus::NumericalBlowup && self.sigma_hit.is_none()
    }
}

/// Norms of one field against the solver's Besov parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    /// `‖u‖_{Ḃ^{s}}` with `s = d/p − 1`.
    pub critical: f64,
    /// `‖u‖_{Ḃ^{s+2/r}}`.
    pub lifted: f64,
    pub l2: f64,
}

impl FieldNorms {
    pub fn of(u: &SpectralField, params: &BesovParams, partition: &DyadicPartition) -> Self {
        let b = block_norms(u, params.p, partition);
        FieldNorms {
            critical: besov_from_blocks(&b, params.s, params.r, partition.j_min()),
            lifted: besov_from_blocks(&b, params.s + 2.0 / params.r, params.r, partition.j_min()),
            l2: u.l2_norm(),
        }
    }
}

/// Per-node record of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory {
    pub time: TimeGrid,
    pub norms: Vec<FieldNorms>,
    pub cutoffs: Vec<CutoffState>,
    /// Stored fields when requested.
    pub fields: Option<Vec<SpectralField>>,
    pub final_field: SpectralField,
}

/// Test hooks and storage switches for [`Solver::time_step_path`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOptions {
    pub disable_nonlinearity: bool,
    pub store_fields: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardStatus {
    Converged,
    NoContraction,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub status: PicardStatus,
    pub iterations: usize,
    /// `‖u^{(n+1)} − u^{(n)}‖_S` per iterate.
    pub distances: Vec<f64>,
    /// `‖K(u^{(n)}) − K(u^{(n−1)})‖_S / ‖u^{(n)} − u^{(n−1)}‖_S`.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

impl ContractionReport {
    pub fn contracting(&self) -> bool {
        self.ratios.iter().all(|&r| r < 1.0)
    }
}

/// A validated solver bound to a grid and noise model.
#[derive(Debug, Clone)]
pub struct Solver {
    config: SolverConfig,
    partition: DyadicPartition,
    noise: NoiseOperator,
    weights: ExpWeights,
}

impl Solver {
    /// Validates the config, the smallness gate and the noise audit.
    /// Models whose couplings are all zero need no audit.
    pub fn new(config: SolverConfig, model: &NoiseModel, grid: &GridSpec) -> Result<Self> {
        config.validate(grid.dimension)?;
        config.check_gamma(model)?;
        let noise = NoiseOperator::new(model, grid)?;
        if !noise.is_silent() {
            model.require_audited(grid, &config.besov)?;
        }
        Ok(Solver {
            partition: DyadicPartition::build(grid)?,
            weights: ExpWeights::new(grid, config.time.dt()),
            config,
            noise,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn partition(&self) -> &DyadicPartition {
        &self.partition
    }

    pub fn noise(&self) -> &NoiseOperator {
        &self.noise
    }

    pub fn grid(&self) -> &GridSpec {
        self.partition.grid()
    }

    pub fn norms(&self, u: &SpectralField) -> FieldNorms {
        FieldNorms::of(u, &self.config.besov, &self.partition)
    }

    fn check_inputs(&self, u0: &SpectralField, path: &WienerPath) -> Result<()> {
        if !u0.grid().same_as(self.grid()) || u0.num_components() != self.grid().dimension {
            return Err(Error::GridMismatch("initial data does not live on the solver grid".into()));
        }
        path.check(&self.config.time, self.noise.num_modes())
    }

    /// Cut-off values along a trajectory, from its own running norms.
    pub fn cutoffs(&self, u: &Trajectory) -> Result<(Vec<CutoffState>, Vec<FieldNorms>)> {
        let dt = self.config.time.dt();
        let r = self.config.besov.r;
        let norms: Vec<FieldNorms> = u.samples().iter().map(|x| self.norms(x)).collect();
        let mut acc: f64 = 0.0;
        let mut states = Vec::with_capacity(norms.len());
        for n in &norms {
            states.push(CutoffState {
                chi1: theta1(acc.powf(1.0 / r), self.config.radius)?,
                chi2: theta2(n.critical, self.config.n_cutoff)?,
                running_lr_norm_pow_r: acc,
            });
            acc += dt * n.lifted.powf(r);
        }
        Ok((states, norms))
    }

    /// `K(u) = e^{tΔ}u₀ + B(χ₁u, u) + F_{χ₁χ₂ f}(u)` for a fixed Wiener path.
    pub fn fixed_point_map(
        &self,
        u: &Trajectory,
        u0: &SpectralField,
        path: &WienerPath,
    ) -> Result<Trajectory> {
        self.check_inputs(u0, path)?;
        if u.time_grid() != &self.config.time || !u.grid().same_as(self.grid()) {
            return Err(Error::GridMismatch("trajectory does not match the solver grids".into()));
        }
        let (cut, _) = self.cutoffs(u)?;
        let grid = *self.grid();
        let tg = self.config.time;
        let silent = self.noise.is_silent();

        let forcing = |m: usize| -> (SpectralField, Option<SpectralField>) {
            let phys = dealiased_physical(u.at(m));
            let chi1 = cut[m].chi1;
            let f = if chi1 == 0.0 {
                SpectralField::zero_vector(grid)
            } else {
                nonlinear_from_physical(grid, &phys, &phys, true).scaled(-chi1)
            };
            let c = cut[m].chi1 * cut[m].chi2;
            let inc = (m < tg.n_steps && !silent && c != 0.0).then(|| {
                self.noise
                    .increment_from_physical(&phys, path.increment(m))
                    .scaled(c)
            });
            (f, inc)
        };

        let mut out = Vec::with_capacity(tg.num_nodes());
        let mut duhamel = u0.clone();
        let mut conv = SpectralField::zero_vector(grid);
        let (mut f_prev, mut inc_prev) = forcing(0);
        out.push(duhamel.clone());
        for m in 0..tg.n_steps {
            let (f_next, inc_next) = forcing(m + 1);
            self.weights.trapezoid_step(&mut duhamel, &f_prev, &f_next);
            if let Some(inc) = &inc_prev {
                conv.axpy(1.0, inc);
            }
            self.weights.decay_step(&mut conv);
            out.push(duhamel.add(&conv));
            f_prev = f_next;
            inc_prev = inc_next;
        }
        Trajectory::new(tg, out)
    }

    /// `‖w‖_S = ‖w‖_{L̃^∞ Ḃ^s} + ‖w‖_{L^r Ḃ^{s+2/r}}` on one path.
    pub fn s_norm(&self, w: &Trajectory) -> Result<f64> {
        let p = self.config.besov;
        let series = w.block_series(p.p, &self.partition);
        let dt = w.time_grid().dt();
        let sup = chemin_lerner_from_blocks(&series, dt, &p.with_q(None), self.partition.j_min())?;
        let lr = chemin_lerner_from_blocks(
            &series,
            dt,
            &p.with_s(p.s + 2.0 / p.r).with_q(Some(p.r)),
            self.partition.j_min(),
        )?;
        Ok(sup + lr)
    }

    /// Picard iteration `u^{(n+1)} = K(u^{(n)})` from the heat trajectory.
    pub fn picard_solve(
        &self,
        u0: &SpectralField,
        path: &WienerPath,
    ) -> Result<(Trajectory, ContractionReport)> {
        self.check_inputs(u0, path)?;
        let mut current = heat_trajectory(u0, &self.config.time)?;
        let mut distances = Vec::new();
        let mut ratios = Vec::new();
        let mut streak = 0;
        let mut status = PicardStatus::MaxIter;
        for _ in 0..self.config.picard_max_iter {
            let next = self.fixed_point_map(&current, u0, path)?;
            let d = self.s_norm(&next.sub(&current)?)?;
            if let Some(&prev) = distances.last() {
                if prev > 0.0 {
                    let ratio = d / prev;
                    ratios.push(ratio);
                    streak = if ratio >= 1.0 { streak + 1 } else { 0 };
                }
            }
            distances.push(d);
            current = next;
            if !d.is_finite() || streak >= 3 {
                status = PicardStatus::NoContraction;
                break;
            }
            if d < self.config.picard_tol {
                status = PicardStatus::Converged;
                break;
            }
        }
        let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
        Ok((
            current,
            ContractionReport {
                status,
                iterations: distances.len(),
                distances,
                ratios,
                max_ratio,
            },
        ))
    }

    /// Sequential exponential step of the truncated system, with the
    /// stopping record updated after each step. The path runs to the horizon
    /// even after `τ_N`; the cut-offs freeze the dynamics.
    pub fn time_step_path(
        &self,
        u0: &SpectralField,
        path: &WienerPath,
        options: StepOptions,
    ) -> Result<(PathTrajectory, StoppingRecord)> {
        self.check_inputs(u0, path)?;
        let grid = *self.grid();
        let tg = self.config.time;
        let dt = tg.dt();
        let r = self.config.besov.r;
        let r_pow = self.config.radius.powf(r);
        let silent = self.noise.is_silent();

        let mut u = u0.clone();
        let mut acc: f64 = 0.0;
        let mut norms = Vec::with_capacity(tg.num_nodes());
        let mut cutoffs = Vec::with_capacity(tg.num_nodes());
        let mut fields = options.store_fields.then(Vec::new);
        let (mut sigma, mut rho, mut blowup) = (None, None, None);

        for m in 0..=tg.n_steps {
            let t = tg.time(m);
            let n = self.norms(&u);
            if !(n.critical.is_finite() && n.lifted.is_finite()) || !u.is_finite() {
                blowup = Some(m);
                break;
            }
            if sigma.is_none() && acc >= r_pow {
                sigma = Some(t);
            }
            if rho.is_none() && n.critical >= self.config.n_cutoff {
                rho = Some(t);
            }
            let state = CutoffState {
                chi1: theta1(acc.powf(1.0 / r), self.config.radius)?,
                chi2: theta2(n.critical, self.config.n_cutoff)?,
                running_lr_norm_pow_r: acc,
            };
            norms.push(n);
            cutoffs.push(state);
            if let Some(f) = fields.as_mut() {
                f.push(u.clone());
            }
            if m == tg.n_steps {
                break;
            }

            let need_phys = (!options.disable_nonlinearity && state.chi1 != 0.0)
                || (!silent && state.chi1 * state.chi2 != 0.0);
            let phys = if need_phys { dealiased_physical(&u) } else { Vec::new() };
            let mut next = u.clone();
            if !options.disable_nonlinearity && state.chi1 != 0.0 {
                let f = nonlinear_from_physical(grid, &phys, &phys, true).scaled(-state.chi1);
                self.weights.euler_step(&mut next, &f);
            } else {
                self.weights.decay_step(&mut next);
            }
            let c = state.chi1 * state.chi2;
            if !silent && c != 0.0 {
                let mut inc = self.noise.increment_from_physical(&phys, path.increment(m));
                inc.scale(c);
                self.weights.decay_step(&mut inc);
                next.axpy(1.0, &inc);
            }
            acc += dt * n.lifted.powf(r);
            u = next;
        }
        let record = StoppingRecord::from_hits(sigma, rho, blowup);
        Ok((
            PathTrajectory {
                time: tg,
                norms,
                cutoffs,
                fields,
                final_field: u,
            },
            record,
        ))
    }

    /// One time-stepped run per `N` on the same path.
    pub fn stopping_ladder(
        &self,
        u0: &SpectralField,
        path: &WienerPath,
        n_values: &[f64],
    ) -> Result<Vec<StoppingRecord>> {
        n_values
            .iter()
            .map(|&n| {
                let mut s = self.clone();
                s.config = self.config.with_n_cutoff(n);
                s.config.validate(self.grid().dimension)?;
                Ok(s.time_step_path(u0, path, StepOptions::default())?.1)
            })
            .collect()
    }
}

/// Count of ladder pairs `N ≤ N'` with `τ_N > τ_{N'}`.
pub fn ordering_violations(n_values: &[f64], records: &[StoppingRecord]) -> usize {
    let mut count = 0;
    for i in 0..n_values.len() {
        for j in 0..n_values.len() {
            if n_values[i] <= n_values[j] && records[i].tau_or_inf() > records[j].tau_or_inf() {
                count += 1;
            }
        }
    }
    count
}

/// One line of `paths.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: u64,
    pub seed: u64,
    pub status: PathStatus,
    pub sigma_hit: Option<f64>,
    #[serde(rename = "rho_N_hit")]
    pub rho_n_hit: Option<f64>,
    #[serde(rename = "tau_N")]
    pub tau_n: Option<f64>,
    pub final_norms: FieldNorms,
    pub picard_iters: Option<usize>,
    pub max_ratio: Option<f64>,
}

impl PathRecord {
    pub fn new(path_id: u64, seed: u64, record: &StoppingRecord, final_norms: FieldNorms) -> Self {
        PathRecord {
            path_id,
            seed,
            status: record.status,
            sigma_hit: record.sigma_hit,
            rho_n_hit: record.rho_n_hit,
            tau_n: record.tau_n,
            final_norms,
            picard_iters: None,
            max_ratio: None,
        }
    }
}

pub fn fixed_point_map_k(
    u: &Trajectory,
    u0: &SpectralField,
    model: &NoiseModel,
    path: &WienerPath,
    config: &SolverConfig,
) -> Result<Trajectory> {
    Solver::new(*config, model, u0.grid())?.fixed_point_map(u, u0, path)
}

pub fn picard_solve(
    u0: &SpectralField,
    model: &NoiseModel,
    path: &WienerPath,
    config: &SolverConfig,
) -> Result<(Trajectory, ContractionReport)> {
    Solver::new(*config, model, u0.grid())?.picard_solve(u0, path)
}

pub fn time_step_path(
    u0: &SpectralField,
    model: &NoiseModel,
    path: &WienerPath,
    config: &SolverConfig,
) -> Result<(PathTrajectory, StoppingRecord)> {
    Solver::new(*config, model, u0.grid())?.time_step_path(u0, path, StepOptions::default())
}
