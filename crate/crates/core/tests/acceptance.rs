//! Acceptance criteria. Runs without the test harness and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use bipen::landscape::{self, Accuracy, PsiMethod, ACTIVE_TOL};
use bipen::oracle::{Oracle, OracleConfig};
use bipen::prox::{default_step, projected_step};
use bipen::solver::{make_schedule, run_collect, Algorithm, Preset, RunOptions, ScheduleConstants};
use bipen::testbed::{build, TestbedName};
use bipen::trace::{fit_rate, Column, MetricRow};
use bipen::verify::iterations_within;
use bipen::Result;

const RHO: f64 = 0.05;

struct Verdict {
    passed: bool,
    detail: String,
}

type Criterion = fn() -> Result<Verdict>;

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn bits_equal(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
}

/// Piecewise profile of the constrained example: 1, then -x, then -1.
fn constrained_profile(x: f64) -> f64 {
    if x < -1.0 {
        1.0
    } else if x <= 1.0 {
        -x
    } else {
        -1.0
    }
}

fn criterion_1() -> Result<Verdict> {
    let p = build(TestbedName::ConstrainedSc).base;
    let sigma = 1e-3;
    let xs: Vec<DVector<f64>> = linspace(-2.0, 2.0, 101).into_iter().map(|x| v(&[x])).collect();
    let samples = landscape::sweep(&p, &xs, &[sigma], 1e-5, Accuracy::high())?;
    let mut worst: f64 = 0.0;
    for s in &samples {
        let want = constrained_profile(s.x[0]);
        worst = worst.max((s.psi_sigma - want).abs());
        worst = worst.max((s.psi.unwrap_or(f64::INFINITY) - want).abs());
    }
    let at_one = landscape::grad_psi_sigma_fd(&p, &v(&[1.0]), sigma, 1e-5)?[0];
    let at_minus_one = landscape::grad_psi_sigma_fd(&p, &v(&[-1.0]), sigma, 1e-5)?[0];
    verdict(
        worst <= 1e-3 && at_one.abs() <= 1e-2 && (at_minus_one + 1.0).abs() <= 1e-2,
        format!("max profile error {worst:.3e}, fd grad at 1 = {at_one:.4e}, at -1 = {at_minus_one:.6}"),
    )
}

fn criterion_2() -> Result<Verdict> {
    let p = build(TestbedName::BilinearLl).base;
    let sigma = 1e-2;
    let mut worst: f64 = 0.0;
    for x in linspace(-1.0, 1.0, 201).into_iter().filter(|x| x.abs() >= 0.2) {
        let ps = landscape::eval_psi_sigma(&p, &v(&[x]), sigma, Accuracy::high())?;
        worst = worst.max((ps - (x * x + 1.0)).abs());
    }
    let at_zero = landscape::eval_psi_sigma(&p, &v(&[0.0]), sigma, Accuracy::high())?;
    let (_, y) = landscape::psi_minimizer(&p, &v(&[0.0]), PsiMethod::Auto)?;
    let snap = landscape::find_lagrangian_snapshot(&p, &v(&[0.0]), 0.0, &y, ACTIVE_TOL)?;
    let (holds, _) = landscape::image_condition_check(&p, &v(&[0.0]), 0.0, &snap)?;
    verdict(
        worst <= 1e-6 && at_zero.abs() <= 1e-12 && !holds,
        format!("max |psi_sigma - (x^2 + 1)| = {worst:.3e}, psi_sigma(0) = {at_zero:.3e}, image condition at 0: {holds}"),
    )
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_3() -> Result<Verdict> {
    let sigmas = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut slopes = Vec::new();
    let mut ordered = true;
    let cases = [
        (TestbedName::QuadSc, vec![v(&[1.0, 0.5]), v(&[-1.5, 0.3]), v(&[0.2, -1.8])]),
        (TestbedName::PlMultisol, vec![v(&[1.2]), v(&[-0.6]), v(&[0.3])]),
    ];
    for (name, xs) in cases {
        let p = build(name).base;
        for x in &xs {
            let psi = landscape::eval_psi(&p, x)?;
            let mut gaps = Vec::new();
            for &s in &sigmas {
                let ps = landscape::eval_psi_sigma(&p, x, s, Accuracy::high())?;
                ordered &= ps <= psi + 1e-12;
                gaps.push((ps - psi).abs());
            }
            slopes.push(log_slope(&sigmas, &gaps));
        }
    }
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(*s), b.max(*s)));
    verdict(
        lo >= 0.9 && hi <= 1.1 && ordered,
        format!("slopes in [{lo:.4}, {hi:.4}], psi_sigma <= psi everywhere: {ordered}"),
    )
}

fn criterion_4() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let sigma_fd = 1e-5;
    let h: f64 = 1e-3;
    let mut worst: f64 = 0.0;
    let mut pinv_paths = 0;
    for name in [TestbedName::QuadSc, TestbedName::BoxActive, TestbedName::PlMultisol] {
        let p = build(name).base;
        let mut accepted = 0;
        while accepted < 20 {
            let x = DVector::from_fn(p.dim_x(), |_, _| rng.random_range(-2.0..2.0));
            // Keep the finite-difference stencil away from active-set switches
            // and from vanishing gradients.
            if name == TestbedName::BoxActive {
                let ax = &a * &x;
                if ax.iter().any(|c: &f64| (c.abs() - 1.0).abs() < 5.0 * h) {
                    continue;
                }
            }
            let (_, y) = landscape::psi_minimizer(&p, &x, PsiMethod::ClosedForm)?;
            let snap = landscape::find_lagrangian_snapshot(&p, &x, 0.0, &y, ACTIVE_TOL)?;
            let formula = landscape::implicit_gradient(&p, &x, 0.0, &snap)?;
            let fd = landscape::grad_psi_sigma_fd_with(&p, &x, sigma_fd, h, Accuracy::high())?;
            if fd.norm() < 0.05 {
                continue;
            }
            if !snap.active_set.is_empty() || name == TestbedName::PlMultisol {
                pinv_paths += 1;
            }
            worst = worst.max((formula - &fd).norm() / fd.norm());
            accepted += 1;
        }
    }
    verdict(
        worst <= 1e-3,
        format!("max relative error {worst:.3e} over 60 points, {pinv_paths} on degenerate or active paths"),
    )
}

fn criterion_5() -> Result<Verdict> {
    let p = build(TestbedName::QuadSc).base;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let sigma = rng.random_range(0.0..1.0);
        let rho = rng.random_range(0.005..0.09);
        let gamma = default_step(&p, rho, sigma) * rng.random_range(0.05..1.0);
        let anchor = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        // Closed-form prox of sigma |y|^2 / 2 + |y - A x|^2 / 2.
        let target = (&a * &x + &anchor / rho) / (sigma + 1.0 + 1.0 / rho);
        let mut u = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        for _ in 0..10 {
            let before = (&u - &target).norm();
            if before < 1e-9 {
                break;
            }
            let grad = p.h_gradient(&x, &u, sigma).1;
            u = projected_step(&p.domain_y, &u, &anchor, &grad, gamma, rho)?;
            let ratio = (&u - &target).norm() / before;
            worst = worst.max(ratio - (1.0 - gamma / (4.0 * rho)));
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max ratio minus (1 - gamma / (4 rho)) = {worst:.4e} over 1000 configurations"),
    )
}

fn deterministic_rows(k: u64, track_potential: bool) -> Result<Vec<MetricRow>> {
    let p = build(TestbedName::QuadSc).base;
    let constants = ScheduleConstants {
        alpha0: Some(RHO),
        eps_target: Some(1e-2),
        horizon: Some(k),
        ..ScheduleConstants::default()
    };
    let s = make_schedule(Preset::Det, RHO, &constants)?;
    let options = RunOptions {
        track_potential,
        diagnostics: Accuracy::ClosedForm,
        ..RunOptions::default()
    };
    Ok(run_collect(&p, Algorithm::DoubleLoop, &s, &Oracle::exact(), k, 0, &options)?.1)
}

fn criterion_6() -> Result<Verdict> {
    let k = 10_000;
    let rows = deterministic_rows(k, false)?;
    let fit = fit_rate(&rows, Column::DeltaX, 1..=k)?;
    let eps = rows.last().expect("rows").eps_level;
    verdict(
        fit.slope <= -0.25 && eps <= 1e-2,
        format!("min-so-far |Delta_x| slope {:.4}, final eps_level {eps:.3e}", fit.slope),
    )
}

fn criterion_7() -> Result<Verdict> {
    let budget = 1_000_000;
    let p = build(TestbedName::QuadSc).base;
    let oracle = Oracle::new(OracleConfig::gaussian(0.1, 0.1)?);
    let median = |preset: Preset, algorithm: Algorithm| -> Result<(f64, u64)> {
        let probe = make_schedule(preset, RHO, &ScheduleConstants::default())?;
        let k = iterations_within(&probe, algorithm, budget);
        let constants = ScheduleConstants {
            horizon: Some(k),
            ..ScheduleConstants::default()
        };
        let s = make_schedule(preset, RHO, &constants)?;
        let options = RunOptions {
            track_potential: false,
            report_every: k,
            ..RunOptions::default()
        };
        let mut finals = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let (state, rows) = run_collect(&p, algorithm, &s, &oracle, k, seed, &options)?;
                assert!(state.oracle_calls.total() <= budget);
                Ok(rows.last().expect("rows").eps_level)
            })
            .collect::<Result<Vec<f64>>>()?;
        finals.sort_by(f64::total_cmp);
        Ok((0.5 * (finals[9] + finals[10]), k))
    };
    let (single, k2) = median(Preset::MomBoth, Algorithm::SingleLoop)?;
    let (double, k1) = median(Preset::StochBoth, Algorithm::DoubleLoop)?;
    verdict(
        single <= double,
        format!("median eps_level single loop {single:.4e} (K={k2}) vs double loop {double:.4e} (K={k1})"),
    )
}

fn criterion_8() -> Result<Verdict> {
    let s = make_schedule(Preset::MomDet, RHO, &ScheduleConstants::default())?;
    let options = RunOptions {
        track_potential: false,
        report_every: 1000,
        ..RunOptions::default()
    };
    let mut broken = Vec::new();
    for name in TestbedName::ALL {
        let p = build(name).base;
        let (a, _) = run_collect(&p, Algorithm::DoubleLoop, &s, &Oracle::exact(), 100, 0, &options)?;
        let (b, _) = run_collect(&p, Algorithm::SingleLoop, &s, &Oracle::exact(), 100, 0, &options)?;
        let same = bits_equal(&a.x, &b.x)
            && bits_equal(&a.y, &b.y)
            && bits_equal(&a.z, &b.z)
            && bits_equal(&a.w_y, &b.w_y)
            && bits_equal(&a.w_z, &b.w_z);
        if !same {
            broken.push(name.to_string());
        }
    }
    verdict(
        broken.is_empty(),
        format!("100 iterations on 5 problems, mismatches: {broken:?}"),
    )
}

fn criterion_9() -> Result<Verdict> {
    let k = 1000;
    let c_f = build(TestbedName::QuadSc).base.constants.c_f.expect("declared");
    let rows = deterministic_rows(k, true)?;
    let values: Vec<f64> = rows.iter().map(|r| r.potential.expect("tracked")).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let rise: f64 = values.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum();
    let cap = 20.0 * c_f * (k as f64).ln();
    verdict(
        min >= -c_f && rise <= cap,
        format!("min potential {min:.4e} (floor {:.1}), positive increments {rise:.4e} (cap {cap:.1})", -c_f),
    )
}

fn bipen(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bipen"))
        .args(args)
        .env_remove("BIPEN_JOBS")
        .output()
        .expect("binary runs")
}

fn run_twice(dir: &Path, config: &str, sub: &str, files: &[&str]) -> Result<Vec<String>> {
    let mut mismatched = Vec::new();
    let cfg_path = dir.join(format!("{sub}.cfg"));
    std::fs::write(&cfg_path, config)?;
    let mut outputs = Vec::new();
    for round in 0..2 {
        let out = dir.join(format!("{sub}_{round}"));
        let mut args = vec![sub, "--config", cfg_path.to_str().unwrap(), "--output", out.to_str().unwrap()];
        if sub == "solve" {
            args.extend(["--jobs", "3"]);
        }
        let status = bipen(&args);
        if !status.status.success() {
            mismatched.push(format!("{sub} exited with {:?}", status.status.code()));
            return Ok(mismatched);
        }
        outputs.push(out);
    }
    for f in files {
        if std::fs::read(outputs[0].join(f))? != std::fs::read(outputs[1].join(f))? {
            mismatched.push(format!("{sub}/{f}"));
        }
    }
    Ok(mismatched)
}

fn criterion_10() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut mismatched = Vec::new();
    mismatched.extend(run_twice(
        dir.path(),
        "problem = constrained_sc\nx_steps = 41\nsigmas = 0.1, 0.001\n",
        "landscape",
        &["landscape.csv"],
    )?);
    mismatched.extend(run_twice(
        dir.path(),
        "problem = box_active\nalgorithm = double_loop\npreset = stoch_upper\nK = 40\nnoise_f = 0.1\nnoise_g = 0.1\nreplicas = 3\ntrack_psi_sigma = true\n",
        "solve",
        &["replica_0.csv", "replica_1.csv", "replica_2.csv"],
    )?);
    mismatched.extend(run_twice(
        dir.path(),
        "problem = pl_multisol\nalgorithm = single_loop\npreset = mom_both\nK = 300\nnoise_f = 0.1\nnoise_g = 0.1\nreplicas = 2\n",
        "solve",
        &["replica_0.csv", "replica_1.csv"],
    )?);
    let first = bipen(&["verify", "--level", "fast"]);
    let second = bipen(&["verify", "--level", "fast"]);
    if first.stdout != second.stdout || first.status.code() != second.status.code() {
        mismatched.push("verify stdout".to_string());
    }
    verdict(
        mismatched.is_empty(),
        format!("landscape, solve and verify reruns compared byte for byte, mismatches: {mismatched:?}"),
    )
}

fn main() {
    let criteria: [(u32, Criterion, Duration); 10] = [
        (1, criterion_1, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(5)),
        (3, criterion_3, Duration::from_secs(30)),
        (4, criterion_4, Duration::from_secs(60)),
        (5, criterion_5, Duration::from_secs(600)),
        (6, criterion_6, Duration::from_secs(300)),
        (7, criterion_7, Duration::from_secs(1800)),
        (8, criterion_8, Duration::from_secs(600)),
        (9, criterion_9, Duration::from_secs(600)),
        (10, criterion_10, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (id, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(v) => (v.passed && took <= limit, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {id:>2}: {} ({:.2}s of {}s) {detail}",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
