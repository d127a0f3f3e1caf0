//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::sync::OnceLock;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use sns_core::experiment::{
    run_calibration, run_global_sweep, monotonicity_violations, ExperimentConfig, Manifest,
};
use sns_core::field_ops::{divergence, leray_project, taylor_green};
use sns_core::flow::{annulus_decay_check, heat_trajectory, refinement_drift, TimeGrid};
use sns_core::lp::{BesovParams, DyadicPartition};
use sns_core::rng::{self, stream, white_field};
use sns_core::solver::{
    ordering_violations, solver_constants, theta1, theta2, PicardStatus, Solver, SolverConfig,
    StepOptions,
};
use sns_core::stochastic::{
    convolution_ratio, factorization_identity_check, sample_wiener, wiener_moments, NoiseModel,
    NoiseOperator,
};
use sns_core::{GridSpec, Result, SpectralField};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

struct Context {
    work: tempfile::TempDir,
    base: ExperimentConfig,
    calibrated: OnceLock<(Manifest, String)>,
}

impl Context {
    fn new() -> Self {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/global_sweep_2d.json");
        let mut base = ExperimentConfig::from_file(&path).expect("shipped config loads");
        let work = tempfile::tempdir().expect("temp dir");
        base.output_dir = work.path().join("sweep_a");
        base.workers = Some(1);
        Context {
            work,
            base,
            calibrated: OnceLock::new(),
        }
    }

    fn manifest(&self) -> &(Manifest, String) {
        self.calibrated
            .get_or_init(|| run_calibration(&self.base).expect("calibration succeeds"))
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.work.path().join(name)
    }
}

fn grid(n: usize) -> GridSpec {
    GridSpec::periodic(2, n).unwrap()
}

fn c01_partition(_: &Context) -> Result<Outcome> {
    let p = DyadicPartition::build(&grid(64))?;
    let d = p.diagnostics();
    outcome(
        d.residual_in_band <= 1e-10,
        format!("residual {:.2e} on band {:?}", d.residual_in_band, d.band),
    )
}

fn c02_leray(_: &Context) -> Result<Outcome> {
    let g = grid(64);
    let (mut div, mut idem) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let u = white_field(g, 2, &mut stream(2, &[i]));
        let pu = leray_project(&u);
        div = div.max(divergence(&pu).l2_norm() / u.l2_norm());
        idem = idem.max(leray_project(&pu).sub(&pu).l2_norm() / u.l2_norm());
    }
    outcome(
        div <= 1e-10 && idem <= 1e-12,
        format!("max div {div:.2e}, idempotence {idem:.2e}"),
    )
}

fn c03_heat_decay(_: &Context) -> Result<Outcome> {
    let part = DyadicPartition::build(&grid(64))?;
    let mut ok = true;
    let mut detail = String::new();
    for p in [2.0, 4.0] {
        let fits = (1..=3)
            .map(|j| annulus_decay_check(j, &part, p, 32, 30 + j as u64))
            .collect::<Result<Vec<_>>>()?;
        let cs: Vec<f64> = fits.iter().map(|f| f.c).collect();
        let spread = refinement_drift(&cs);
        ok &= spread <= 1.2;
        if p == 2.0 {
            for f in &fits {
                let rel = (f.c - f.c_exact_l2).abs() / f.c_exact_l2;
                ok &= rel <= 0.15;
                detail += &format!("j={} c={:.3} exact={:.3}; ", f.shell, f.c, f.c_exact_l2);
            }
        }
        detail += &format!("p={p} spread {spread:.3}; ");
    }
    outcome(ok, detail)
}

fn c04_factorization(_: &Context) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for a in [0.1, 0.25, 0.4] {
        let c = factorization_identity_check(a, 0.0, 1.0)?;
        let exact = std::f64::consts::PI / (std::f64::consts::PI * a).sin();
        worst = worst.max((c.numeric - exact).abs());
    }
    outcome(worst <= 1e-3, format!("max error {worst:.2e}"))
}

fn c05_wiener(_: &Context) -> Result<Outcome> {
    let tg = TimeGrid::new(1.0, 50)?;
    let m = wiener_moments(55, &tg, 10_000)?;
    let var_ok = (m.variance.estimate - tg.t_end).abs() <= 3.0 * m.variance.standard_error;
    let cov_ok = m.cross_covariance.estimate.abs() <= 3.0 * m.cross_covariance.standard_error;
    outcome(
        var_ok && cov_ok,
        format!(
            "var {:.4} ± {:.4}, cov {:.4} ± {:.4}",
            m.variance.estimate,
            m.variance.standard_error,
            m.cross_covariance.estimate,
            m.cross_covariance.standard_error
        ),
    )
}

fn c06_convolution(_: &Context) -> Result<Outcome> {
    let g = grid(32);
    let params = BesovParams::critical(2, 4.0, 3.0)?;
    let part = DyadicPartition::build(&g)?;
    let op = NoiseOperator::new(&NoiseModel::default_linear(0.05), &g)?;
    let u0 = taylor_green(g, 1.0, 1.0).add(&taylor_green(g, 0.5, 2.0));
    let mut ratios = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let u = heat_trajectory(&u0, &TimeGrid::with_step(0.25, dt)?)?;
        ratios.push(convolution_ratio(&op, &u, &params, &part, 1000, 66)?.ratio);
    }
    let drift = refinement_drift(&ratios);
    outcome(drift <= 2.0, format!("ratios {ratios:.4?}, drift {drift:.3}"))
}

fn c07_cutoffs(_: &Context) -> Result<Outcome> {
    let mut worst_mid: f64 = 0.0;
    let mut ok = true;
    for (r, n) in [(0.5, 4.0), (0.37, 5.0), (0.5917295095477171, 10.0)] {
        ok &= theta1(r, r)? == 1.0 && theta1(2.0 * r, r)? == 0.0;
        ok &= theta2(n, n)? == 1.0 && theta2(n + 1.0, n)? == 0.0;
        let (x1, x2) = (1.5 * r, n + 0.5);
        let (m1, m2) = (theta1(x1, r)?, theta2(x2, n)?);
        ok &= m1 == 2.0 - x1 / r && m2 == n + 1.0 - x2;
        worst_mid = worst_mid.max((m1 - 0.5).abs()).max((m2 - 0.5).abs());
    }
    outcome(
        ok && worst_mid <= 4.0 * f64::EPSILON,
        format!("breakpoints exact, midpoints within {worst_mid:.1e} of 0.5"),
    )
}

fn c08_constants(ctx: &Context) -> Result<Outcome> {
    let (m, _) = ctx.manifest();
    let r = m.besov.r;
    let radius = (4.0 * m.c_star).powf(-1.0 / r).min(1.0);
    let big_m = 3.0 * m.c_star * m.e_u0_pow_r + 1.0;
    let b1 = m.noise_model.beta1.unwrap();
    let b2 = m.noise_model.beta2.unwrap();
    let n = m.n_cutoff;
    let beta1 = b1.coefficient * (n + 1.0).powf(b1.exponent);
    let beta2 = b2.coefficient * (2.0 * n + 2.0).powf(b2.exponent);
    let t_hat = 1.0 / (3.0 * m.c_star * ((1.0 / radius.powf(r) + 1.0) * beta1 + beta2));
    let manifest_t_hat = m.t_hat.unwrap_or(f64::NAN);
    let lib = solver_constants(m.c_star, r, n, &m.noise_model, m.e_u0_pow_r)?;
    let errs = [
        (radius - m.radius).abs(),
        (big_m - m.m).abs() / big_m,
        (t_hat - manifest_t_hat).abs() / t_hat,
        (lib.t_hat - t_hat).abs() / t_hat,
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!(
            "C*={:.4} R={:.4} M={:.4} T^={:.4e}, max rel error {worst:.1e}",
            m.c_star, radius, big_m, t_hat
        ),
    )
}

fn c09_contraction(ctx: &Context) -> Result<Outcome> {
    let (m, _) = ctx.manifest();
    let g = ctx.base.grid;
    let mut settings = ctx.base.solver;
    settings.dt = 1e-3;
    settings.t_end = 0.25;
    let config = settings.to_config(2, m)?;
    let solver = Solver::new(config, &m.noise_model, &g)?;
    let r = config.besov.r;
    let n_paths = 100;
    let base: Vec<SpectralField> = (0..n_paths)
        .map(|i| ctx.base.initial_field(i))
        .collect::<Result<_>>()?;
    let mean = base.iter().map(|u| solver.norms(u).critical.powf(r)).sum::<f64>() / n_paths as f64;
    let scale = (0.1 * config.radius.powf(r) / mean).powf(1.0 / r);
    let reports = sns_core::experiment::run_pool(None, n_paths as usize, |i| {
        let path = sample_wiener(ctx.base.wiener_seed(i as u64), &config.time, solver.noise().num_modes())?;
        Ok(solver.picard_solve(&base[i].clone().scaled(scale), &path)?.1)
    })?;
    let good = reports.iter().filter(|r| r.contracting()).count();
    let converged = reports
        .iter()
        .filter(|r| r.status == PicardStatus::Converged)
        .count();
    let worst = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let iters = reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    outcome(
        good * 100 >= 95 * n_paths as usize,
        format!("{good}/{n_paths} contracting, {converged} converged, max ratio {worst:.3}, max iterations {iters}"),
    )
}

fn c10_cross_validation(ctx: &Context) -> Result<Outcome> {
    let (m, _) = ctx.manifest();
    let g = grid(64);
    let silent = NoiseModel::default_linear(0.0);
    let u0 = taylor_green(g, 0.05, 1.0).add(&taylor_green(g, 0.05, 2.0).scaled(0.5));
    let tol = 1e-6;
    let mut gaps = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let config = SolverConfig {
            besov: BesovParams::critical(2, 4.0, 3.0)?,
            radius: m.radius,
            n_cutoff: 10.0,
            c_star: m.c_star,
            picard_tol: tol,
            picard_max_iter: 50,
            time: TimeGrid::with_step(0.25, dt)?,
        };
        let solver = Solver::new(config, &silent, &g)?;
        let path = sample_wiener(1, &config.time, 4)?;
        let (traj, report) = solver.picard_solve(&u0, &path)?;
        let (stepped, _) = solver.time_step_path(&u0, &path, StepOptions::default())?;
        if report.status != PicardStatus::Converged {
            return outcome(false, format!("Picard did not converge at dt={dt}"));
        }
        gaps.push(traj.last().sub(&stepped.final_field).l2_norm());
    }
    let within = gaps.iter().all(|&x| x <= 10.0 * tol);
    let shrink = gaps.windows(2).all(|w| w[0] >= 1.5 * w[1]);
    outcome(
        within && shrink,
        format!("L2 gaps {:?} (bound {:.0e})", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>(), 10.0 * tol),
    )
}

fn sweep_config(ctx: &Context, dir: &str, workers: usize) -> ExperimentConfig {
    let mut c = ctx.base.clone();
    c.delta_values = vec![4e-2, 1e-2, 2.5e-3];
    c.n_paths = 200;
    c.output_dir = ctx.dir(dir);
    c.workers = Some(workers);
    c
}

fn c11_global_sweep(ctx: &Context) -> Result<Outcome> {
    ctx.manifest();
    let c = sweep_config(ctx, "sweep_a", 1);
    let report = run_global_sweep(&c)?;
    let violations = monotonicity_violations(&report.curve, 2.0);
    let last = report.curve.last().unwrap().survival;
    let curve: Vec<String> = report
        .curve
        .iter()
        .map(|p| format!("{:.2e}:{:.3}", p.x, p.survival))
        .collect();
    outcome(
        violations == 0 && last >= 0.95,
        format!("survival {}", curve.join(" ")),
    )
}

fn c12_stopping_order(ctx: &Context) -> Result<Outcome> {
    let g = grid(32);
    let (m, _) = ctx.manifest();
    let model = NoiseModel::default_linear(0.5);
    let params = BesovParams::critical(2, 4.0, 3.0)?;
    let part = DyadicPartition::build(&g)?;
    let model = sns_core::stochastic::certify(&model, &params, &part, 12)?;
    let config = SolverConfig {
        besov: params,
        radius: m.radius,
        n_cutoff: 1.0,
        c_star: m.c_star,
        picard_tol: 1e-8,
        picard_max_iter: 10,
        time: TimeGrid::with_step(0.2, 5e-3)?,
    };
    let solver = Solver::new(config, &model, &g)?;
    let ladder = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
    let mut violations = 0;
    let mut hits = 0;
    let mut total = 0;
    for i in 0..60u64 {
        let mut r = rng::stream(120, &[i]);
        let amp = 0.2 + 0.05 * i as f64;
        let u0 = sns_core::field_ops::gaussian_divfree(g, amp, 0.6, &mut r);
        let path = sample_wiener(rng::derive_seed(121, &[i]), &config.time, 4)?;
        let records = solver.stopping_ladder(&u0, &path, &ladder)?;
        violations += ordering_violations(&ladder, &records);
        hits += records.iter().filter(|r| r.tau_n.is_some()).count();
        total += records.len();
    }
    outcome(
        violations == 0 && hits > 0 && hits < total,
        format!("{violations} violations over {total} records ({hits} with a hit)"),
    )
}

fn c13_determinism(ctx: &Context) -> Result<Outcome> {
    let a = sweep_config(ctx, "sweep_a", 1);
    let b = sweep_config(ctx, "sweep_b", 2);
    fs::create_dir_all(&b.output_dir).unwrap();
    fs::copy(a.manifest_path(), b.manifest_path()).unwrap();
    if !a.output_dir.join("curve.csv").exists() {
        run_global_sweep(&a)?;
    }
    run_global_sweep(&b)?;
    let read = |c: &ExperimentConfig, f: &str| fs::read(c.output_dir.join(f)).unwrap();
    let same_curve = read(&a, "curve.csv") == read(&b, "curve.csv");
    let same_paths = read(&a, "paths.jsonl") == read(&b, "paths.jsonl");
    outcome(
        same_curve && same_paths,
        format!("curve.csv identical: {same_curve}, paths.jsonl identical: {same_paths} (1 vs 2 workers)"),
    )
}

type Criterion = (u32, &'static str, f64, fn(&Context) -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        (1, "partition of unity", 1.0, c01_partition),
        (2, "Leray projector", 5.0, c02_leray),
        (3, "heat decay", 30.0, c03_heat_decay),
        (4, "factorization identity", 1.0, c04_factorization),
        (5, "Wiener moments", 30.0, c05_wiener),
        (6, "stochastic convolution regularity", 600.0, c06_convolution),
        (7, "cut-off formulas", 1.0, c07_cutoffs),
        (8, "calibrated constants", f64::INFINITY, c08_constants),
        (9, "contraction regime", 1200.0, c09_contraction),
        (10, "Picard vs time-stepper", 300.0, c10_cross_validation),
        (11, "global-sweep monotonicity", 1800.0, c11_global_sweep),
        (12, "stopping-time ordering", f64::INFINITY, c12_stopping_order),
        (13, "worker-count determinism", f64::INFINITY, c13_determinism),
    ];
    let ctx = Context::new();
    let mut failed = 0;
    let mut sweep_seconds = f64::NAN;
    for (id, name, budget, run) in criteria {
        // Calibration is shared; charge it to nothing.
        if id == 8 {
            ctx.manifest();
        }
        let start = Instant::now();
        let result = run(&ctx);
        let secs = start.elapsed().as_secs_f64();
        if id == 11 {
            sweep_seconds = secs;
        }
        let budget = if id == 13 { 2.0 * sweep_seconds } else { budget };
        let (passed, detail) = match result {
            Ok(o) => (o.passed && secs <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let over = if secs > budget { " over time budget" } else { "" };
        println!(
            "{} {id:>2} {name}: {detail} [{secs:.1} s{over}]",
            if passed { "PASS" } else { "FAIL" }
        );
        if !passed {
            failed += 1;
        }
    }
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
