use proptest::prelude::*;

use sns_core::field_ops::taylor_green;
use sns_core::flow::TimeGrid;
use sns_core::lp::besov_norm;
use sns_core::solver::{auto_radius, solver_constants, theta1, theta2, Solver, SolverConfig, StepOptions};
use sns_core::stochastic::{sample_wiener, NoiseModel};
use sns_core::{Error, GridSpec, SpectralField};

fn solver(c_star: f64, n_steps: usize) -> Solver {
    let g = GridSpec::periodic(2, 16).unwrap();
    let time = TimeGrid::new(0.2, n_steps).unwrap();
    let cfg = SolverConfig::with_auto_radius(2, 4.0, 3.0, c_star, 10.0, time).unwrap();
    Solver::new(cfg, &NoiseModel::default_linear(0.0), &g).unwrap()
}

fn datum(g: GridSpec, a: f64) -> SpectralField {
    taylor_green(g, a, 1.0).add(&taylor_green(g, 0.5 * a, 2.0))
}

const STORE: StepOptions = StepOptions {
    disable_nonlinearity: false,
    store_fields: true,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sigma_matches_independent_accumulation(a in 0.05f64..3.0) {
        let s = solver(1.0, 20);
        let cfg = *s.config();
        let u0 = datum(*s.grid(), a);
        let path = sample_wiener(7, &cfg.time, 4).unwrap();
        let (traj, rec) = s.time_step_path(&u0, &path, STORE).unwrap();
        let lifted = cfg.besov.with_s(cfg.besov.s + 2.0 / cfg.besov.r);
        let dt = cfg.time.dt();
        let mut acc = 0.0;
        let mut hit = None;
        for (m, f) in traj.fields.as_ref().unwrap().iter().enumerate() {
            if acc >= cfg.radius.powf(cfg.besov.r) {
                hit = Some(cfg.time.time(m));
                break;
            }
            acc += dt * besov_norm(f, &lifted, s.partition()).powf(cfg.besov.r);
        }
        prop_assert_eq!(rec.sigma_hit, hit);
    }

    #[test]
    fn chi1_nonincreasing_and_frozen_flow_dissipates(a in 0.5f64..4.0) {
        let s = solver(1.0, 40);
        let u0 = datum(*s.grid(), a);
        let path = sample_wiener(3, &s.config().time, 4).unwrap();
        let (traj, _) = s.time_step_path(&u0, &path, STORE).unwrap();
        let chi: Vec<f64> = traj.cutoffs.iter().map(|c| c.chi1).collect();
        prop_assert!(chi.windows(2).all(|w| w[1] <= w[0]));
        let l2: Vec<f64> = traj.norms.iter().map(|n| n.l2).collect();
        for m in 0..chi.len() - 1 {
            if chi[m] == 0.0 {
                prop_assert!(l2[m + 1] <= l2[m] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn theta_lipschitz(x in 0.0f64..5.0, y in 0.0f64..5.0, r in 0.1f64..2.0) {
        let d = (x - y).abs();
        prop_assert!((theta1(x, r).unwrap() - theta1(y, r).unwrap()).abs() <= d / r + 1e-12);
        prop_assert!((theta2(x, r).unwrap() - theta2(y, r).unwrap()).abs() <= d + 1e-12);
    }

    #[test]
    fn doubling_c_star_shrinks_radius(c in 0.3f64..100.0) {
        let ratio = auto_radius(2.0 * c, 2.0) / auto_radius(c, 2.0);
        prop_assert!((ratio - 0.5f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn paths_are_bitwise_reproducible() {
    let s = solver(1.0, 20);
    let u0 = datum(*s.grid(), 1.5);
    let path = sample_wiener(11, &s.config().time, 4).unwrap();
    let (a, ra) = s.time_step_path(&u0, &path, STORE).unwrap();
    let (b, rb) = s.time_step_path(&u0, &path, STORE).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
}

#[test]
fn radius_examples() {
    assert_eq!(auto_radius(1.0, 2.0), 0.5);
    assert_eq!(auto_radius(0.1, 4.0), 1.0);
    // 4C* = 16 with r = 4 gives 1/2.
    assert!((auto_radius(4.0, 4.0) - 0.5).abs() < 1e-15);
}

#[test]
fn silent_noise_has_no_time_horizon() {
    let err = solver_constants(1.0, 2.0, 10.0, &NoiseModel::default_linear(0.0), 1.0).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_) | Error::UnauditedNoise(_)));
}

#[test]
fn large_data_reaches_sigma_and_freezes() {
    let s = solver(1.0, 40);
    let u0 = datum(*s.grid(), 4.0);
    let path = sample_wiener(3, &s.config().time, 4).unwrap();
    let (traj, rec) = s.time_step_path(&u0, &path, STORE).unwrap();
    assert!(rec.sigma_hit.is_some());
    assert_eq!(traj.cutoffs.last().unwrap().chi1, 0.0);
}
