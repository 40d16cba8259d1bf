use nalgebra::DVector;
use proptest::prelude::*;

use bipen::config::RunConfig;
use bipen::landscape::{self, Accuracy};
use bipen::solver::{make_schedule, Algorithm, Preset, ScheduleConstants};
use bipen::testbed::{build, TestbedName};
use bipen::trace::{parse_trace, TraceWriter, MetricRow};
use bipen::ConvexDomain;

fn vec2() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2).prop_map(DVector::from_vec)
}

fn domains() -> Vec<ConvexDomain> {
    vec![
        ConvexDomain::cube(2, -1.0, 1.0).unwrap(),
        ConvexDomain::ball(DVector::from_vec(vec![0.5, -0.5]), 2.0).unwrap(),
        ConvexDomain::simplex(2).unwrap(),
        ConvexDomain::full(2),
    ]
}

fn row() -> impl Strategy<Value = MetricRow> {
    (
        (any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>()),
        (1u64..50, 1u64..50),
        (any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>()),
        (prop::option::of(any::<f64>()), prop::option::of(any::<f64>()), any::<f64>()),
    )
        .prop_map(|((sigma, alpha, beta, gamma, eta), (t, m), (dx, dy, dz, eps), (pot, ps, wall))| MetricRow {
            k: 0,
            sigma,
            alpha,
            beta,
            gamma,
            eta,
            t,
            m,
            delta_x: dx,
            delta_y: dy,
            delta_z: dz,
            eps_level: eps,
            potential: pot,
            psi_sigma: ps,
            oracle_calls: 0,
            wall_ms: wall,
        })
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_nonexpansive(p in vec2(), q in vec2()) {
        for d in domains() {
            let pp = d.project_vec(&p).unwrap();
            let qq = d.project_vec(&q).unwrap();
            prop_assert!(d.contains(&pp, 1e-9));
            prop_assert!((d.project_vec(&pp).unwrap() - &pp).norm() <= 1e-9);
            prop_assert!((&pp - &qq).norm() <= (&p - &q).norm() + 1e-9);
        }
    }

    #[test]
    fn trace_rows_survive_a_roundtrip(rows in prop::collection::vec(row(), 1..20), gaps in prop::collection::vec((1u64..5, 0u64..100), 20)) {
        let mut k = 0;
        let mut calls = 0;
        let rows: Vec<MetricRow> = rows
            .into_iter()
            .zip(gaps)
            .map(|(mut r, (dk, dc))| {
                k += dk;
                calls += dc;
                r.k = k;
                r.oracle_calls = calls;
                r
            })
            .collect();
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let back = parse_trace(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!((a.k, a.t, a.m, a.oracle_calls), (b.k, b.t, b.m, b.oracle_calls));
            let pairs = [
                (a.sigma, b.sigma), (a.alpha, b.alpha), (a.beta, b.beta), (a.gamma, b.gamma),
                (a.eta, b.eta), (a.delta_x, b.delta_x), (a.delta_y, b.delta_y),
                (a.delta_z, b.delta_z), (a.eps_level, b.eps_level), (a.wall_ms, b.wall_ms),
            ];
            for (x, y) in pairs {
                prop_assert!(same_bits(x, y), "{} vs {}", x, y);
            }
            prop_assert_eq!(a.potential.is_some(), b.potential.is_some());
            prop_assert_eq!(a.psi_sigma.is_some(), b.psi_sigma.is_some());
            if let (Some(x), Some(y)) = (a.potential, b.potential) {
                prop_assert!(same_bits(x, y));
            }
            if let (Some(x), Some(y)) = (a.psi_sigma, b.psi_sigma) {
                prop_assert!(same_bits(x, y));
            }
        }
    }

    #[test]
    fn config_survives_a_roundtrip(
        problem in prop::sample::select(TestbedName::ALL.to_vec()),
        preset in prop::sample::select(Preset::ALL.to_vec()),
        rho in 1e-3..1.0f64,
        k in 1u64..100_000,
        seed in any::<u64>(),
        noise in (0.0..5.0f64, 0.0..5.0f64),
        replicas in 1u64..64,
        range in (-5.0..0.0f64, 0.0..5.0f64),
        sigmas in prop::collection::vec(1e-6..1.0f64, 1..4),
        alpha0 in prop::option::of(1e-4..1.0f64),
    ) {
        let mut cfg = RunConfig {
            problem,
            preset,
            algorithm: if preset.is_momentum() { Algorithm::SingleLoop } else { Algorithm::DoubleLoop },
            rho,
            k,
            seed,
            noise_f: noise.0,
            noise_g: noise.1,
            replicas,
            x_min: range.0,
            x_max: range.1,
            sigmas,
            ..RunConfig::default()
        };
        cfg.constants.alpha0 = alpha0;
        prop_assume!(cfg.validate().is_ok());
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn schedules_are_positive_and_nonincreasing(
        preset in prop::sample::select(Preset::ALL.to_vec()),
        rho in 1e-3..1.0f64,
        k in 0u64..100_000,
    ) {
        let s = make_schedule(preset, rho, &ScheduleConstants::default()).unwrap();
        let (now, next) = (s.at(k), s.at(k + 1));
        for (a, b) in [(now.alpha, next.alpha), (now.beta, next.beta), (now.gamma, next.gamma), (now.sigma, next.sigma)] {
            prop_assert!(a > 0.0 && b > 0.0);
            prop_assert!(b <= a);
        }
        prop_assert!(s.eta(k) > 0.0 && s.eta(k) <= 1.0);
        prop_assert!(s.inner_steps(k) >= 1 && s.batch(k) >= 1);
        prop_assert!(s.inner_steps(k + 1) >= s.inner_steps(k));
    }

    #[test]
    fn penalized_value_never_exceeds_the_hyper_objective(
        x in prop::collection::vec(-2.0..2.0f64, 2),
        log_sigma in -4.0..0.0f64,
    ) {
        let p = build(TestbedName::QuadSc).base;
        let x = DVector::from_vec(x);
        let sigma = 10f64.powf(log_sigma);
        let ps = landscape::eval_psi_sigma(&p, &x, sigma, Accuracy::ClosedForm).unwrap();
        let psi = landscape::eval_psi(&p, &x).unwrap();
        prop_assert!(ps <= psi + 1e-9);
    }
}
