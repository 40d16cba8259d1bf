use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::landscape::Accuracy;
use crate::oracle::{NoiseModel, Oracle, OracleConfig};
use crate::prox::prox_point;
use crate::testbed::{build, TestbedName};
use crate::Error;

const RHO: f64 = 0.05;

fn exponents(a: f64, s: f64, c: f64, n: f64, t: f64, m: f64) -> Exponents {
    Exponents { a, b: a, c, s, n, t, m }
}

fn det_schedule() -> Schedule {
    make_schedule(Preset::Det, RHO, &ScheduleConstants::default()).unwrap()
}

fn state_at(p: &crate::BilevelProblem, x: &[f64], y: &[f64], z: &[f64], k: u64, schedule: &Schedule) -> SolverState {
    let mut s = SolverState::new(
        p,
        DVector::from_column_slice(x),
        DVector::from_column_slice(y),
        DVector::from_column_slice(z),
        schedule.sigma(k),
    )
    .unwrap();
    s.k = k;
    s
}

#[test]
fn saddle_point_is_fixed() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = det_schedule();
    let oracle = Oracle::exact();
    let s0 = state_at(&p, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0, &schedule);
    let s1 = double_loop_step(&p, &s0, &schedule, &oracle, 1).unwrap();
    let s2 = single_loop_step(&p, &s0, &schedule, &oracle, 1).unwrap();
    for s in [s1, s2] {
        for (a, b) in [(&s.x, &s0.x), (&s.y, &s0.y), (&s.z, &s0.z), (&s.w_y, &s0.w_y), (&s.w_z, &s0.w_z)] {
            assert!((a - b).amax() <= 1e-12);
        }
    }
}

#[test]
fn full_smoothing_with_long_inner_loop_is_a_prox_step() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = Schedule::new(0.001, 1.0, 0.2 * RHO, 0.3, 1.0, 1, exponents(0.0, 0.0, 0.0, 0.0, 2.0, 0.0), RHO).unwrap();
    let k = 50;
    let s0 = state_at(&p, &[0.7, -0.4], &[1.0, 0.5], &[-0.3, 0.2], k, &schedule);
    let s1 = double_loop_step(&p, &s0, &schedule, &Oracle::exact(), 3).unwrap();
    let sigma = schedule.sigma(k);
    let want_y = prox_point(&p, &s0.x, sigma, RHO, &s0.y).unwrap();
    let want_z = prox_point(&p, &s0.x, 0.0, RHO, &s0.z).unwrap();
    assert!((s1.y - want_y).amax() < 1e-9);
    assert!((s1.z - want_z).amax() < 1e-9);
}

#[test]
fn double_loop_counts_calls_per_stream() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = make_schedule(Preset::StochUpper, RHO, &ScheduleConstants::default()).unwrap();
    let oracle = Oracle::new(OracleConfig::gaussian(0.1, 0.1).unwrap());
    let options = RunOptions {
        track_potential: false,
        report_every: 5,
        ..RunOptions::default()
    };
    let (state, rows) = run_collect(&p, Algorithm::DoubleLoop, &schedule, &oracle, 12, 9, &options).unwrap();
    let want: u64 = (0..12).map(|k| 3 * schedule.inner_steps(k) as u64 + 3 * schedule.batch(k) as u64).sum();
    assert_eq!(state.oracle_calls.total(), want);
    let inner: u64 = (0..12).map(|k| schedule.inner_steps(k) as u64).sum();
    assert_eq!(state.oracle_calls.by_stream[0], 2 * inner);
    assert_eq!(state.oracle_calls.by_stream[1], inner);
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![0, 5, 10, 12]);
}

#[test]
fn single_loop_counts_calls() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = make_schedule(Preset::MomBoth, RHO, &ScheduleConstants::default()).unwrap();
    let oracle = Oracle::new(OracleConfig::gaussian(0.1, 0.1).unwrap());
    let options = RunOptions {
        track_potential: false,
        report_every: 100,
        ..RunOptions::default()
    };
    let (state, _) = run_collect(&p, Algorithm::SingleLoop, &schedule, &oracle, 20, 9, &options).unwrap();
    assert_eq!(state.oracle_calls.total(), 6 + 12 * 19);

    let always_fresh = make_schedule(Preset::MomDet, RHO, &ScheduleConstants::default()).unwrap();
    let (state, _) = run_collect(&p, Algorithm::SingleLoop, &always_fresh, &oracle, 20, 9, &options).unwrap();
    assert_eq!(state.oracle_calls.total(), 6 * 20);
}

#[test]
fn unit_momentum_matches_single_inner_step() {
    let schedule = Schedule::new(0.005, 0.5, 0.005, 0.5, 1.0, 10, exponents(0.0, 1.0 / 3.0, 0.0, 0.0, 0.0, 0.0), RHO).unwrap();
    for name in TestbedName::ALL {
        let p = build(name).base;
        let options = RunOptions {
            track_potential: false,
            report_every: 1000,
            ..RunOptions::default()
        };
        let oracle = Oracle::exact();
        let (a, _) = run_collect(&p, Algorithm::DoubleLoop, &schedule, &oracle, 100, 4, &options).unwrap();
        let (b, _) = run_collect(&p, Algorithm::SingleLoop, &schedule, &oracle, 100, 4, &options).unwrap();
        for (u, v) in [(&a.x, &b.x), (&a.y, &b.y), (&a.z, &b.z), (&a.w_y, &b.w_y), (&a.w_z, &b.w_z)] {
            let same = u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits());
            assert!(same, "{name}: {u} vs {v}");
        }
    }
}

#[test]
fn estimator_error_follows_geometric_recursion() {
    // Additive noise on affine gradients cancels in the paired difference,
    // so e_k = (1 - eta_k) e_{k-1} + eta_k xi_k. The y-block carries
    // d_y / (d_x + d_y) of the noise variance.
    let p = build(TestbedName::QuadSc).base;
    let schedule = Schedule::new(0.005, 0.5, 0.005, 0.5, 1.0, 2, exponents(0.0, 0.2, 0.0, 0.8, 0.0, 0.0), RHO).unwrap();
    let noise = 0.3;
    let oracle = Oracle::new(OracleConfig::new(noise, noise, NoiseModel::AdditiveGaussian).unwrap());
    let steps = 6;
    let runs = 10_000;
    let mut mean = vec![0.0; steps];
    for r in 0..runs {
        let mut s = state_at(&p, &[0.5, -1.0], &[0.2, 0.1], &[0.0, 0.3], 0, &schedule);
        for slot in mean.iter_mut() {
            s = single_loop_step(&p, &s, &schedule, &oracle, r).unwrap();
            *slot += s.estimator_errors.unwrap().wz / runs as f64;
        }
    }
    let mut var = 0.0;
    for (k, got) in mean.iter().enumerate() {
        let eta = schedule.eta(k as u64);
        var = eta * eta * noise * noise * 0.5 + (1.0 - eta).powi(2) * var;
        assert!((got / var - 1.0).abs() < 0.05, "k={k}: {got} vs {var}");
    }
}

#[test]
fn rejects_zero_horizon_and_rough_oracle() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = det_schedule();
    let err = run_collect(&p, Algorithm::DoubleLoop, &schedule, &Oracle::exact(), 0, 0, &RunOptions::default());
    assert!(matches!(err, Err(Error::Argument(_))));
    let dropout = Oracle::new(OracleConfig::new(0.1, 0.1, NoiseModel::CoordinateDropout).unwrap());
    let s0 = state_at(&p, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0, &schedule);
    assert!(matches!(single_loop_step(&p, &s0, &schedule, &dropout, 0), Err(Error::Config(_))));
    assert!(double_loop_step(&p, &s0, &schedule, &dropout, 0).is_ok());
}

#[test]
fn oversized_step_is_rejected() {
    let p = build(TestbedName::QuadSc).base;
    let mut schedule = det_schedule();
    let s0 = state_at(&p, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0, &schedule);
    schedule.gamma0 = 2.0 * RHO * 10f64.powf(schedule.exponents.c);
    assert!(matches!(double_loop_step(&p, &s0, &schedule, &Oracle::exact(), 0), Err(Error::Config(_))));
}

#[test]
fn stationarity_vanishes_at_saddle_and_balanced_interior() {
    let p = build(TestbedName::QuadSc).base;
    let zero = DVector::zeros(2);
    let r = stationarity(&p, &zero, &zero, &zero, 0.1, RHO).unwrap();
    assert!(r.delta_x_norm <= 1e-10 && r.delta_y_norm <= 1e-10 && r.delta_z_norm <= 1e-10);

    // y and z on the lower solutions: only the x residual remains.
    let x = DVector::from_column_slice(&[0.3, -0.2]);
    let sigma = 0.2;
    let cf = p.closed_form.as_ref().unwrap();
    let y = cf.solution_set(&x, sigma).representative();
    let z = cf.solution_set(&x, 0.0).representative();
    let r = stationarity(&p, &x, &y, &z, sigma, RHO).unwrap();
    assert!(r.delta_y_norm < 1e-10 && r.delta_z_norm < 1e-10);
    let want = p.h_gradient(&x, &y, sigma).0 - p.g.gradient(&x, &z).0;
    assert!((r.delta_x_norm - want.norm()).abs() < 1e-9);
    assert!((r.epsilon_level - want.norm() / sigma).abs() < 1e-7);
}

#[test]
fn constrained_example_residual_scales_with_sigma() {
    let p = build(TestbedName::ConstrainedSc).base;
    let cf = p.closed_form.as_ref().unwrap();
    let x = DVector::from_element(1, 0.0);
    let sigma = 0.01;
    let y = cf.solution_set(&x, sigma).representative();
    let z = cf.solution_set(&x, 0.0).representative();
    let r = stationarity(&p, &x, &y, &z, sigma, 0.01).unwrap();
    assert!((r.delta_x_norm / sigma - 1.0).abs() < 1e-6, "{}", r.delta_x_norm);
}

#[test]
fn potential_at_saddle_is_psi_and_linear_in_cw() {
    let p = build(TestbedName::QuadSc).base;
    let schedule = det_schedule();
    let s0 = state_at(&p, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0, &schedule);
    let c = PotentialConstants::default();
    let v = potential(&p, &s0, &schedule, PotentialVariant::Double, &c, Accuracy::ClosedForm).unwrap().unwrap();
    assert!(v.abs() < 1e-10);

    let mut s = state_at(&p, &[0.4, 0.1], &[0.3, -0.2], &[0.1, 0.5], 3, &schedule);
    s.w_y = DVector::from_column_slice(&[1.0, 1.0]);
    let at = |c_w: f64| {
        let c = PotentialConstants { c_w, ..c };
        potential(&p, &s, &schedule, PotentialVariant::Double, &c, Accuracy::ClosedForm).unwrap().unwrap()
    };
    let (v0, v1, v2) = (at(0.0), at(1.0), at(2.0));
    assert!(v1 > v0);
    assert!(((v2 - v0) - 2.0 * (v1 - v0)).abs() < 1e-9 * (1.0 + v2.abs()));
    assert!(potential(&p, &s, &schedule, PotentialVariant::Momentum, &c, Accuracy::ClosedForm).unwrap().is_none());
}

#[test]
fn potential_bounded_below_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let c = PotentialConstants::default();
    for name in TestbedName::ALL {
        let tp = build(name);
        let p = &tp.base;
        let c_f = p.constants.c_f.unwrap();
        let schedule = det_schedule();
        let (lo, hi) = p.domain_x.bounding_box().unwrap();
        for _ in 0..40 {
            let x: DVector<f64> = DVector::from_fn(p.dim_x(), |i, _| rng.random_range(lo[i]..hi[i]));
            let mut pick = || {
                let raw = DVector::from_fn(p.dim_y(), |_, _| rng.random_range(-2.0..2.0));
                p.domain_y.project_vec(&raw).unwrap()
            };
            let (y, z, wy) = (pick(), pick(), pick());
            let k = rng.random_range(0..500);
            let mut s = state_at(p, x.as_slice(), y.as_slice(), z.as_slice(), k, &schedule);
            s.w_y = wy;
            let v = potential(p, &s, &schedule, PotentialVariant::Double, &c, Accuracy::ClosedForm).unwrap().unwrap();
            assert!(v >= -c_f, "{name}: {v}");
        }
    }
}

#[test]
fn reports_are_finite_and_ordered() {
    let p = build(TestbedName::BoxActive).base;
    let schedule = det_schedule();
    let options = RunOptions {
        track_psi_sigma: true,
        diagnostics: Accuracy::ClosedForm,
        ..RunOptions::default()
    };
    let (state, rows) = run_collect(&p, Algorithm::DoubleLoop, &schedule, &Oracle::exact(), 30, 0, &options).unwrap();
    state.check_invariants(&p).unwrap();
    assert_eq!(rows.len(), 31);
    for w in rows.windows(2) {
        assert!(w[1].k == w[0].k + 1 && w[1].oracle_calls >= w[0].oracle_calls);
    }
    assert!(rows.iter().all(|r| r.eps_level.is_finite() && r.potential.is_some() && r.psi_sigma.is_some()));
}
