//! Configuration, calibration and Monte Carlo orchestration for the
//! command-line experiments.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::field_ops::{divergence, leray_project, make_initial_data, InitialDataKind, InitialDataSpec};
use crate::flow::{
    annulus_decay_check, measure_bilinear_constant, measure_heat_constant, refinement_drift,
    TimeGrid,
};
use crate::grid::GridSpec;
use crate::lp::{lp_norm, BesovParams, DyadicPartition};
use crate::rng::{self, tag};
use crate::solver::{
    ordering_violations, solver_constants, theta1, theta2, FieldNorms, PathRecord, Solver,
    SolverConfig, StepOptions, StoppingRecord,
};
use crate::stochastic::{
    certify, factorization_identity_check, measure_convolution_constant, sample_wiener,
    wiener_moments, NoiseModel, NoiseOperator, NoiseStructure,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Local,
    GlobalSweep,
    OscillatingSweep,
    Calibrate,
    Verify,
}

/// Solver parameters as written in a config file. `C*` comes from the
/// calibration manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub p: f64,
    pub r: f64,
    /// Fixed `R`; `None` uses `min{1, (4C*)^{−1/r}}`.
    #[serde(default)]
    pub radius: Option<f64>,
    pub n_cutoff: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub t_end: f64,
    pub dt: f64,
    /// Also run Picard iteration on each path and report its ratios.
    #[serde(default)]
    pub picard: bool,
}

impl SolverSettings {
    pub fn besov(&self, dimension: usize) -> Result<BesovParams> {
        BesovParams::critical(dimension, self.p, self.r)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_step(self.t_end, self.dt)
    }

    pub fn to_config(&self, dimension: usize, manifest: &Manifest) -> Result<SolverConfig> {
        let config = SolverConfig {
            besov: self.besov(dimension)?,
            radius: self.radius.unwrap_or(manifest.radius),
            n_cutoff: self.n_cutoff,
            c_star: manifest.c_star,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            time: self.time_grid()?,
        };
        config.validate(dimension)?;
        Ok(config)
    }
}

/// A noise model inline or as a path to its JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSource {
    File(PathBuf),
    Inline(Box<NoiseModel>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    /// Coarsest step of the refinement ladder.
    pub dt: f64,
    pub t_end: f64,
    pub refinements: usize,
    pub ensemble: usize,
    pub paths: usize,
    pub safety_factor: f64,
    /// Largest allowed max/min spread of a constant across the ladder.
    pub drift_limit: f64,
    /// Samples of the configured `u₀` used for `E‖u₀‖^r`.
    pub u0_samples: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            dt: 1e-2,
            t_end: 0.25,
            refinements: 3,
            ensemble: 4,
            paths: 64,
            safety_factor: 1.5,
            drift_limit: 2.0,
            u0_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSettings {
    pub t0_values: Vec<f64>,
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings {
            t0_values: vec![0.2, 0.1, 0.05, 0.025],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatingSettings {
    pub epsilons: Vec<f64>,
}

impl Default for OscillatingSettings {
    fn default() -> Self {
        OscillatingSettings {
            epsilons: vec![0.25, 0.125, 0.0625],
        }
    }
}

/// Filter bank damage applied before the verification suites run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptPartition {
    pub shell: i32,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    #[serde(default)]
    pub corrupt_partition: Option<CorruptPartition>,
}

/// How `delta_values` are read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaUnits {
    /// Multiples of `R^r`.
    #[default]
    RadiusPowR,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub grid: GridSpec,
    pub solver: SolverSettings,
    pub noise: NoiseSource,
    pub initial: InitialDataSpec,
    pub n_paths: usize,
    #[serde(default)]
    pub delta_values: Vec<f64>,
    #[serde(default)]
    pub delta_units: DeltaUnits,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub local: LocalSettings,
    #[serde(default)]
    pub oscillating: OscillatingSettings,
    #[serde(default)]
    pub verify: VerifySettings,
}

impl ExperimentConfig {
    /// Reads a config; relative noise and field paths resolve against the
    /// config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let NoiseSource::File(p) = &mut config.noise {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(f) = config.initial.file.as_mut() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.solver.besov(self.grid.dimension)?.validate()?;
        self.solver.time_grid()?;
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        if self.delta_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("delta_values must be strictly decreasing".into()));
        }
        if self.delta_values.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::InvalidParameter("delta_values must be nonnegative".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        match &self.noise {
            NoiseSource::File(p) => NoiseModel::from_json_file(p),
            NoiseSource::Inline(m) => Ok((**m).clone()),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    /// `u₀` for one path; Gaussian data get a per-path seed.
    pub fn initial_field(&self, path_id: u64) -> Result<SpectralField> {
        let mut spec = self.initial.clone();
        if spec.kind == InitialDataKind::GaussianDivfree {
            spec.seed = rng::derive_seed(self.master_seed, &[tag::INITIAL_DATA, path_id]);
        }
        Ok(make_initial_data(&spec, &self.grid)?.field)
    }

    pub fn wiener_seed(&self, path_id: u64) -> u64 {
        rng::derive_seed(self.master_seed, &[tag::WIENER, path_id])
    }
}

/// Constants measured at one step of the calibration ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLevel {
    pub dt: f64,
    pub n_steps: usize,
    pub c_heat: f64,
    pub c_b: f64,
    pub c_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDrift {
    pub heat: f64,
    pub bilinear: f64,
    pub convolution: f64,
}

/// Calibrated constants and everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub grid: GridSpec,
    pub besov: BesovParams,
    pub n_cutoff: f64,
    pub settings: CalibrationSettings,
    pub levels: Vec<CalibrationLevel>,
    pub drift: CalibrationDrift,
    pub c_heat: f64,
    pub c_b: f64,
    pub c_f: f64,
    pub safety_factor: f64,
    /// `safety · max(Ĉ_heat^r, Ĉ_B^r, Ĉ_F)`.
    pub c_star: f64,
    pub radius: f64,
    pub m: f64,
    /// `None` when the envelopes vanish and `T̂` is unbounded.
    pub t_hat: Option<f64>,
    pub e_u0_pow_r: f64,
    pub noise_model: NoiseModel,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((serde_json::from_slice(&bytes)?, sha256_hex(&bytes)))
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes `manifest.json` and returns its hash.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write_bytes(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// The manifest must describe the same grid and exponents as `config`.
    pub fn check_matches(&self, config: &ExperimentConfig) -> Result<()> {
        let besov = config.solver.besov(config.grid.dimension)?;
        if !self.grid.same_as(&config.grid) || self.besov != besov {
            return Err(Error::InvalidParameter(
                "manifest was calibrated for a different grid or (p, r); rerun calibrate".into(),
            ));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs `f` over `0..n` on a pool of `workers` threads; output order is
/// the index order whatever the pool size.
pub fn run_pool<T, F>(workers: Option<usize>, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Wilson score interval.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

pub fn binomial_standard_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Estimates the constants, certifies the noise model if needed and
/// writes `manifest.json`.
pub fn run_calibration(config: &ExperimentConfig) -> Result<(Manifest, String)> {
    config.validate()?;
    let grid = config.grid;
    let besov = config.solver.besov(grid.dimension)?;
    let partition = DyadicPartition::build(&grid)?;
    let cal = config.calibration;
    if cal.refinements == 0 || cal.ensemble == 0 || cal.paths == 0 || cal.u0_samples == 0 {
        return Err(Error::InvalidParameter(
            "calibration sizes must all be at least 1".into(),
        ));
    }
    let seed = rng::derive_seed(config.master_seed, &[tag::CALIBRATION]);

    let mut model = config.noise_model()?;
    model.validate(&grid)?;
    let op = NoiseOperator::new(&model, &grid)?;
    if !op.is_silent() && model.require_audited(&grid, &besov).is_err() {
        model = certify(&model, &besov, &partition, rng::derive_seed(seed, &[tag::AUDIT]))?;
    }

    let mut levels = Vec::with_capacity(cal.refinements);
    for level in 0..cal.refinements {
        let tg = TimeGrid::with_step(cal.t_end, cal.dt / (1u64 << level) as f64)?;
        let c_heat = measure_heat_constant(&besov, &partition, &tg, cal.ensemble, seed)?.max;
        let c_b = measure_bilinear_constant(&besov, &partition, &tg, cal.ensemble, seed)?.max;
        let c_f = if op.is_silent() {
            0.0
        } else {
            measure_convolution_constant(&op, &besov, &partition, &tg, cal.ensemble, cal.paths, seed)?
        };
        levels.push(CalibrationLevel {
            dt: tg.dt(),
            n_steps: tg.n_steps,
            c_heat,
            c_b,
            c_f,
        });
    }
    let spread = |f: fn(&CalibrationLevel) -> f64| refinement_drift(&levels.iter().map(f).collect::<Vec<_>>());
    let drift = CalibrationDrift {
        heat: spread(|l| l.c_heat),
        bilinear: spread(|l| l.c_b),
        convolution: spread(|l| l.c_f),
    };
    for (name, d) in [("heat", drift.heat), ("bilinear", drift.bilinear), ("convolution", drift.convolution)] {
        if !(d <= cal.drift_limit) {
            return Err(Error::CalibrationFailure(format!(
                "{name} constant drifts by a factor {d:.3} across dt refinement (limit {}); levels: {levels:?}",
                cal.drift_limit
            )));
        }
    }
    let finest = *levels.last().expect("at least one level");
    let r = besov.r;
    let c_star = cal.safety_factor
        * finest
            .c_heat
            .powf(r)
            .max(finest.c_b.powf(r))
            .max(finest.c_f);

    let partition_ref = &partition;
    let e_u0_pow_r = (0..cal.u0_samples as u64)
        .map(|i| {
            let u = config.initial_field(i)?;
            Ok(FieldNorms::of(&u, &besov, partition_ref).critical.powf(r))
        })
        .sum::<Result<f64>>()?
        / cal.u0_samples as f64;

    let (radius, m, t_hat) = if op.is_silent() {
        let radius = crate::solver::auto_radius(c_star, r);
        (radius, 3.0 * c_star * e_u0_pow_r + 1.0, None)
    } else {
        let c = solver_constants(c_star, r, config.solver.n_cutoff, &model, e_u0_pow_r)?;
        (c.radius, c.m, Some(c.t_hat))
    };

    let manifest = Manifest {
        master_seed: config.master_seed,
        grid,
        besov,
        n_cutoff: config.solver.n_cutoff,
        settings: cal,
        levels,
        drift,
        c_heat: finest.c_heat,
        c_b: finest.c_b,
        c_f: finest.c_f,
        safety_factor: cal.safety_factor,
        c_star,
        radius,
        m,
        t_hat,
        e_u0_pow_r,
        noise_model: model,
    };
    let hash = manifest.write(&config.manifest_path())?;
    Ok((manifest, hash))
}

/// Loads the manifest in `output_dir`, calibrating first when none exists.
pub fn load_or_calibrate(config: &ExperimentConfig) -> Result<(Manifest, String)> {
    let path = config.manifest_path();
    if path.exists() {
        let (manifest, hash) = Manifest::load(&path)?;
        manifest.check_matches(config)?;
        Ok((manifest, hash))
    } else {
        run_calibration(config)
    }
}

/// One point of a survival curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    /// `δ` for sweeps, `t₀` for local runs, `ε` for oscillating runs.
    pub x: f64,
    pub survival: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
}

impl SurvivalPoint {
    pub fn new(x: f64, survivors: usize, n: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(survivors, n, 1.96);
        SurvivalPoint {
            x,
            survival: survivors as f64 / n.max(1) as f64,
            ci_low,
            ci_high,
            n_paths: n,
        }
    }

    pub fn standard_error(&self) -> f64 {
        binomial_standard_error(self.survival, self.n_paths)
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.x, self.survival, self.ci_low, self.ci_high, self.n_paths
        )
    }
}

/// Counts adjacent pairs where survival drops by more than `k` standard
/// errors of the difference as the curve proceeds.
pub fn monotonicity_violations(curve: &[SurvivalPoint], k: f64) -> usize {
    curve
        .windows(2)
        .filter(|w| {
            let se = (w[0].standard_error().powi(2) + w[1].standard_error().powi(2)).sqrt();
            w[1].survival < w[0].survival - k * se
        })
        .count()
}

/// Norms of one oscillating datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationRow {
    pub epsilon: f64,
    pub effective_epsilon: Option<f64>,
    pub snapped_frequency: Option<i64>,
    pub prefactor: Option<f64>,
    pub critical_norm: Option<f64>,
    pub linf: Option<f64>,
    pub l2: Option<f64>,
    pub max_divergence: Option<f64>,
    pub survival: Option<SurvivalPoint>,
    /// Why the datum was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub manifest_sha256: String,
    pub master_seed: u64,
    pub n_paths: usize,
    pub c_heat: f64,
    pub c_b: f64,
    pub c_f: f64,
    pub c_star: f64,
    pub radius: f64,
    pub m: f64,
    pub t_hat: Option<f64>,
    pub curve: Vec<SurvivalPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oscillations: Vec<OscillationRow>,
    pub status_counts: StatusCounts,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub survived_horizon: usize,
    pub stopped_sigma: usize,
    pub stopped_rho: usize,
    pub numerical_blowup: usize,
}

impl StatusCounts {
    fn add(&mut self, record: &StoppingRecord) {
        use crate::solver::PathStatus::*;
        match record.status {
            SurvivedHorizon => self.survived_horizon += 1,
            StoppedSigma => self.stopped_sigma += 1,
            StoppedRho => self.stopped_rho += 1,
            NumericalBlowup => self.numerical_blowup += 1,
        }
    }
}

fn report_base(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    manifest: &Manifest,
    hash: &str,
) -> ExperimentReport {
    ExperimentReport {
        experiment: kind,
        manifest_sha256: hash.to_string(),
        master_seed: config.master_seed,
        n_paths: config.n_paths,
        c_heat: manifest.c_heat,
        c_b: manifest.c_b,
        c_f: manifest.c_f,
        c_star: manifest.c_star,
        radius: manifest.radius,
        m: manifest.m,
        t_hat: manifest.t_hat,
        curve: Vec::new(),
        oscillations: Vec::new(),
        status_counts: StatusCounts::default(),
        wall_clock_seconds: 0.0,
    }
}

/// Result of simulating one path.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub record: StoppingRecord,
    pub line: PathRecord,
}

/// Time-steps one path and, if requested, runs Picard on the same path.
pub fn simulate_path(
    solver: &Solver,
    u0: &SpectralField,
    path_id: u64,
    seed: u64,
    picard: bool,
) -> Result<PathOutcome> {
    let tg = solver.config().time;
    let path = sample_wiener(seed, &tg, solver.noise().num_modes())?;
    let (traj, record) = solver.time_step_path(u0, &path, StepOptions::default())?;
    let mut line = PathRecord::new(path_id, seed, &record, solver.norms(&traj.final_field));
    if picard {
        let (_, report) = solver.picard_solve(u0, &path)?;
        line.picard_iters = Some(report.iterations);
        line.max_ratio = Some(report.max_ratio);
    }
    Ok(PathOutcome { record, line })
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

fn write_curve(path: &Path, header: &str, curve: &[SurvivalPoint]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{header}").expect("in-memory write");
    for p in curve {
        writeln!(out, "{}", p.csv_row()).expect("in-memory write");
    }
    write_bytes(path, &out)
}

fn write_report(config: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    write_bytes(&config.output_dir.join("report.json"), &bytes)
}

/// Survival over a ladder of short windows `t₀`.
pub fn run_local(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (manifest, hash) = load_or_calibrate(config)?;
    let mut t0s = config.local.t0_values.clone();
    if t0s.is_empty() || t0s.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter("t0_values must be positive and nonempty".into()));
    }
    t0s.sort_by(|a, b| b.total_cmp(a));
    let horizon = t0s[0];
    let mut settings = config.solver;
    settings.t_end = horizon;
    let solver_config = settings.to_config(config.grid.dimension, &manifest)?;
    let solver = Solver::new(solver_config, &manifest.noise_model, &config.grid)?;

    let outcomes = run_pool(config.workers, config.n_paths, |i| {
        let id = i as u64;
        let u0 = config.initial_field(id)?;
        simulate_path(&solver, &u0, id, config.wiener_seed(id), config.solver.picard)
    })?;

    let mut report = report_base(ExperimentKind::Local, config, &manifest, &hash);
    for o in &outcomes {
        report.status_counts.add(&o.record);
    }
    report.curve = t0s
        .iter()
        .map(|&t0| {
            let alive = outcomes.iter().filter(|o| o.record.survives_until(t0)).count();
            SurvivalPoint::new(t0, alive, outcomes.len())
        })
        .collect();
    let lines: Vec<&PathRecord> = outcomes.iter().map(|o| &o.line).collect();
    write_lines(&config.output_dir.join("paths.jsonl"), &lines)?;
    write_curve(
        &config.output_dir.join("local.csv"),
        "t0,survival,ci_low,ci_high,n_paths",
        &report.curve,
    )?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_report(config, &report)?;
    Ok(report)
}

fn refusal(reason: &str) -> Error {
    Error::Refused(format!(
        "global existence needs noise with growth envelope beta1 = eta * x^r, beta2 = eta \
         and small audited eta; {reason}"
    ))
}

/// Refuses noise models outside the linear-growth hypothesis.
fn check_global_hypothesis(model: &NoiseModel, grid: &GridSpec, besov: &BesovParams) -> Result<()> {
    if NoiseOperator::new(model, grid)?.is_silent() {
        return Ok(());
    }
    if model.structure != NoiseStructure::LinearMultiplicative || model.eta_bound.is_none() {
        return Err(refusal("this model has no eta envelope"));
    }
    model
        .require_audited(grid, besov)
        .map_err(|e| refusal(&e.to_string()))?;
    Ok(())
}

/// Survival probability over the horizon against `δ = E‖u₀‖^r`.
pub fn run_global_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if config.delta_values.is_empty() {
        return Err(Error::InvalidParameter("global sweep needs delta_values".into()));
    }
    let besov = config.solver.besov(config.grid.dimension)?;
    let structural = config.noise_model()?;
    if structural.structure != NoiseStructure::LinearMultiplicative
        && !NoiseOperator::new(&structural, &config.grid)?.is_silent()
    {
        return Err(refusal("the configured model is not linear multiplicative"));
    }
    let (manifest, hash) = load_or_calibrate(config)?;
    check_global_hypothesis(&manifest.noise_model, &config.grid, &besov)?;
    let solver_config = config.solver.to_config(config.grid.dimension, &manifest)?;
    let solver = Solver::new(solver_config, &manifest.noise_model, &config.grid)?;
    let r = besov.r;
    let unit = match config.delta_units {
        DeltaUnits::RadiusPowR => solver_config.radius.powf(r),
        DeltaUnits::Absolute => 1.0,
    };

    let base: Vec<SpectralField> = run_pool(config.workers, config.n_paths, |i| {
        config.initial_field(i as u64)
    })?;
    let mean_pow_r = base
        .iter()
        .map(|u| solver.norms(u).critical.powf(r))
        .sum::<f64>()
        / base.len() as f64;

    let mut report = report_base(ExperimentKind::GlobalSweep, config, &manifest, &hash);
    let mut lines = Vec::new();
    for &dv in &config.delta_values {
        let delta = dv * unit;
        let scale = if delta == 0.0 {
            0.0
        } else if mean_pow_r > 0.0 {
            (delta / mean_pow_r).powf(1.0 / r)
        } else {
            return Err(Error::InvalidParameter(
                "initial data vanish; cannot target a positive delta".into(),
            ));
        };
        let outcomes = run_pool(config.workers, config.n_paths, |i| {
            let id = i as u64;
            let u0 = base[i].clone().scaled(scale);
            simulate_path(&solver, &u0, id, config.wiener_seed(id), config.solver.picard)
        })?;
        let alive = outcomes.iter().filter(|o| o.record.sigma_survived()).count();
        report.curve.push(SurvivalPoint::new(delta, alive, outcomes.len()));
        for o in outcomes {
            report.status_counts.add(&o.record);
            lines.push(SweepLine {
                delta,
                record: o.line,
            });
        }
    }
    write_lines(&config.output_dir.join("paths.jsonl"), &lines)?;
    write_curve(
        &config.output_dir.join("curve.csv"),
        "delta,survival,ci_low,ci_high,n_paths",
        &report.curve,
    )?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_report(config, &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct SweepLine {
    delta: f64,
    #[serde(flatten)]
    record: PathRecord,
}

/// Norms and survival of oscillating data across an `ε` ladder.
pub fn run_oscillating_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if config.grid.dimension != 3 {
        return Err(Error::InvalidParameter("oscillating sweep needs a 3-D grid".into()));
    }
    let (manifest, hash) = load_or_calibrate(config)?;
    let solver_config = config.solver.to_config(config.grid.dimension, &manifest)?;
    let solver = Solver::new(solver_config, &manifest.noise_model, &config.grid)?;
    let mut report = report_base(ExperimentKind::OscillatingSweep, config, &manifest, &hash);
    let mut lines = Vec::new();

    for &eps in &config.oscillating.epsilons {
        let spec = InitialDataSpec {
            kind: InitialDataKind::Oscillating,
            epsilon: eps,
            ..config.initial.clone()
        };
        let data = match make_initial_data(&spec, &config.grid) {
            Ok(d) => d,
            Err(e @ (Error::OscillationUnresolvable { .. } | Error::InsufficientResolution { .. })) => {
                report.oscillations.push(OscillationRow {
                    epsilon: eps,
                    effective_epsilon: None,
                    snapped_frequency: None,
                    prefactor: None,
                    critical_norm: None,
                    linf: None,
                    l2: None,
                    max_divergence: None,
                    survival: None,
                    skipped: Some(e.to_string()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let u0 = data.field;
        let norms = solver.norms(&u0);
        let div = divergence(&u0);
        let outcomes = run_pool(config.workers, config.n_paths, |i| {
            let id = i as u64;
            simulate_path(&solver, &u0, id, config.wiener_seed(id), config.solver.picard)
        })?;
        let alive = outcomes.iter().filter(|o| o.record.sigma_survived()).count();
        let point = SurvivalPoint::new(eps, alive, outcomes.len());
        report.curve.push(point);
        report.oscillations.push(OscillationRow {
            epsilon: eps,
            effective_epsilon: data.meta.effective_epsilon,
            snapped_frequency: data.meta.snapped_frequency,
            prefactor: data.meta.prefactor,
            critical_norm: Some(norms.critical),
            linf: Some(lp_norm(&u0, f64::INFINITY)),
            l2: Some(norms.l2),
            max_divergence: Some(div.linf_norm()),
            survival: Some(point),
            skipped: None,
        });
        for o in outcomes {
            report.status_counts.add(&o.record);
            lines.push(SweepLine {
                delta: eps,
                record: o.line,
            });
        }
    }
    write_lines(&config.output_dir.join("paths.jsonl"), &lines)?;
    let mut csv = String::from("epsilon,snapped_frequency,critical_norm,linf,l2,survival,ci_low,ci_high,n_paths,skipped\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for row in &report.oscillations {
        let s = row.survival;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.epsilon,
            row.snapped_frequency.map(|k| k.to_string()).unwrap_or_default(),
            opt(row.critical_norm),
            opt(row.linf),
            opt(row.l2),
            opt(s.map(|p| p.survival)),
            opt(s.map(|p| p.ci_low)),
            opt(s.map(|p| p.ci_high)),
            s.map(|p| p.n_paths.to_string()).unwrap_or_default(),
            row.skipped.is_some(),
        ));
    }
    write_bytes(&config.output_dir.join("oscillating.csv"), csv.as_bytes())?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_report(config, &report)?;
    Ok(report)
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub property: String,
    pub passed: bool,
    pub detail: serde_json::Value,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub manifest_sha256: String,
    pub suites: Vec<SuiteResult>,
}

fn suite(
    name: &str,
    property: &str,
    f: impl FnOnce() -> Result<(bool, serde_json::Value)>,
) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, serde_json::json!({ "error": e.to_string() })),
    };
    SuiteResult {
        name: name.into(),
        property: property.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the property suites at the configured grid and writes
/// `verify.json`. Failures are data; only setup errors return `Err`.
pub fn run_verify(config: &ExperimentConfig) -> Result<Verdict> {
    let (manifest, hash) = load_or_calibrate(config)?;
    let grid = config.grid;
    let besov = config.solver.besov(grid.dimension)?;
    let mut partition = DyadicPartition::build(&grid)?;
    if let Some(c) = config.verify.corrupt_partition {
        partition.corrupt_filter(c.shell, c.factor)?;
    }
    let seed = rng::derive_seed(config.master_seed, &[tag::CHECKS]);
    let mut suites = Vec::new();

    suites.push(suite(
        "partition_of_unity",
        "sum of dyadic filters equals 1 on the resolvable band to 1e-10",
        || {
            let d = partition.diagnostics();
            Ok((
                d.residual_in_band <= 1e-10,
                serde_json::json!({ "residual_in_band": d.residual_in_band, "band": d.band }),
            ))
        },
    ));

    suites.push(suite(
        "leray_projector",
        "P u is divergence-free to 1e-10 and P is idempotent to 1e-12",
        || {
            let mut worst_div: f64 = 0.0;
            let mut worst_idem: f64 = 0.0;
            for i in 0..20u64 {
                let mut r = rng::stream(seed, &[1, i]);
                let u = rng::white_field(grid, grid.dimension, &mut r);
                let pu = leray_project(&u);
                worst_div = worst_div.max(divergence(&pu).l2_norm() / u.l2_norm());
                worst_idem = worst_idem.max(leray_project(&pu).sub(&pu).l2_norm() / u.l2_norm());
            }
            Ok((
                worst_div <= 1e-10 && worst_idem <= 1e-12,
                serde_json::json!({ "divergence": worst_div, "idempotence": worst_idem }),
            ))
        },
    ));

    suites.push(suite(
        "heat_decay",
        "fitted per-shell decay rate is stable across shells and matches the exact L2 curve",
        || {
            let mid = (partition.j_min() + partition.j_max()) / 2;
            let fits: Vec<_> = (mid - 1..=mid + 1)
                .map(|j| annulus_decay_check(j, &partition, 2.0, 16, rng::derive_seed(seed, &[2, j as u64])))
                .collect::<Result<_>>()?;
            let cs: Vec<f64> = fits.iter().map(|f| f.c).collect();
            let stable = refinement_drift(&cs) <= 1.2;
            let exact = fits
                .iter()
                .all(|f| ((f.c - f.c_exact_l2) / f.c_exact_l2).abs() <= 0.15);
            Ok((stable && exact, serde_json::to_value(&fits)?))
        },
    ));

    suites.push(suite(
        "factorization_identity",
        "Beta-integral quadrature equals pi / sin(pi alpha) to 1e-3",
        || {
            let checks: Vec<_> = [0.1, 0.25, 0.4]
                .iter()
                .map(|&a| factorization_identity_check(a, 0.0, 1.0))
                .collect::<Result<_>>()?;
            Ok((checks.iter().all(|c| c.abs_error <= 1e-3), serde_json::to_value(&checks)?))
        },
    ));

    suites.push(suite(
        "wiener_moments",
        "terminal variance within 3 standard errors of t_end; cross covariance within 3 of 0",
        || {
            let tg = TimeGrid::new(1.0, 20)?;
            let m = wiener_moments(rng::derive_seed(seed, &[3]), &tg, 4000)?;
            let ok = (m.variance.estimate - tg.t_end).abs() <= 3.0 * m.variance.standard_error
                && m.cross_covariance.estimate.abs() <= 3.0 * m.cross_covariance.standard_error;
            Ok((ok, serde_json::to_value(&m)?))
        },
    ));

    suites.push(suite(
        "cutoffs",
        "theta1 and theta2 take their defining values at breakpoints and midpoints",
        || {
            let (r, n) = (manifest.radius, config.solver.n_cutoff);
            let ok = theta1(r, r)? == 1.0
                && theta1(1.5 * r, r)? == 0.5
                && theta1(2.0 * r, r)? == 0.0
                && theta2(n, n)? == 1.0
                && theta2(n + 0.5, n)? == 0.5
                && theta2(n + 1.0, n)? == 0.0;
            Ok((ok, serde_json::json!({ "radius": r, "n_cutoff": n })))
        },
    ));

    suites.push(suite(
        "constants",
        "R, M and T-hat recomputed from the manifest's C* agree to 1e-12",
        || {
            let r = manifest.besov.r;
            let radius = (4.0 * manifest.c_star).powf(-1.0 / r).min(1.0);
            let m = 3.0 * manifest.c_star * manifest.e_u0_pow_r + 1.0;
            let mut ok = (radius - manifest.radius).abs() <= 1e-12 && (m - manifest.m).abs() <= 1e-12 * m;
            if let Some(t_hat) = manifest.t_hat {
                let b1 = manifest.noise_model.beta1_at(manifest.n_cutoff + 1.0)?;
                let b2 = manifest.noise_model.beta2_at(2.0 * manifest.n_cutoff + 2.0)?;
                let expect = 1.0 / (3.0 * manifest.c_star * ((1.0 / radius.powf(r) + 1.0) * b1 + b2));
                ok &= ((expect - t_hat) / expect).abs() <= 1e-12;
            }
            Ok((ok, serde_json::json!({ "radius": radius, "m": m, "t_hat": manifest.t_hat })))
        },
    ));

    suites.push(suite(
        "noise_audit",
        "the noise model carries a passing audit for this grid and (p, r)",
        || {
            let silent = NoiseOperator::new(&manifest.noise_model, &grid)?.is_silent();
            let ok = silent || manifest.noise_model.require_audited(&grid, &besov).is_ok();
            Ok((ok, serde_json::to_value(&manifest.noise_model.audit)?))
        },
    ));

    suites.push(suite(
        "stopping_order_and_determinism",
        "tau_N is nondecreasing in N on each path and reruns are bitwise identical",
        || {
            let mut settings = config.solver;
            settings.t_end = settings.t_end.min(20.0 * settings.dt);
            let sc = settings.to_config(grid.dimension, &manifest)?;
            let solver = Solver::new(sc, &manifest.noise_model, &grid)?;
            let ladder = [0.25, 0.5, 1.0, 2.0, 4.0].map(|x| x * config.solver.n_cutoff);
            let mut violations = 0;
            let mut deterministic = true;
            for i in 0..4u64 {
                let u0 = config.initial_field(i)?;
                let path = sample_wiener(config.wiener_seed(i), &sc.time, solver.noise().num_modes())?;
                let records = solver.stopping_ladder(&u0, &path, &ladder)?;
                violations += ordering_violations(&ladder, &records);
                let a = solver.time_step_path(&u0, &path, StepOptions::default())?;
                let b = solver.time_step_path(&u0, &path, StepOptions::default())?;
                deterministic &= a.0.final_field == b.0.final_field && a.1 == b.1;
            }
            Ok((
                violations == 0 && deterministic,
                serde_json::json!({ "violations": violations, "deterministic": deterministic }),
            ))
        },
    ));

    let verdict = Verdict {
        passed: suites.iter().all(|s| s.passed),
        manifest_sha256: hash,
        suites,
    };
    let mut bytes = serde_json::to_vec_pretty(&verdict)?;
    bytes.push(b'\n');
    write_bytes(&config.output_dir.join("verify.json"), &bytes)?;
    Ok(verdict)
}
