//! Acceptance suite. Every criterion runs, prints one PASS/FAIL line, and the
//! process exits non-zero if any of them failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bea_core::integrate::{self, McRun, Observable, SchemeConfig};
use bea_core::markov::{self, TransitionKernel};
use bea_core::operators::{self, Derivation};
use bea_core::reference::{self, PdeConfig};
use bea_core::stationary::{self, MeasureCorrection, Source};
use bea_core::symbolic::{int, ratio, rational_to_f64};
use bea_core::util::loglog_slope;
use bea_core::{DiffOp, Expr, Grid, GridFunction, Potential, Rational, Scheme};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IMPLICIT: [Scheme; 2] = [Scheme::SplitStep, Scheme::ImplicitEuler];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> Vec<(&'static str, Potential)> {
    vec![("ou", Potential::ou()), ("double_well", Potential::double_well())]
}

fn x2() -> Expr {
    Expr::monomial(int(1), 2, 0)
}

fn random_quartics(count: usize) -> Vec<Potential> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..count)
        .map(|_| {
            let mut c: Vec<Rational> = (0..4).map(|_| ratio(rng.random_range(-6..=6), 4)).collect();
            c.push(ratio(rng.random_range(1..=6), 4));
            Potential::quartic(&c).expect("positive leading coefficient")
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut potentials: Vec<Potential> = fixtures().into_iter().map(|(_, v)| v).collect();
    potentials.extend(random_quartics(10));
    let mut bad = Vec::new();
    for (k, v) in potentials.iter().enumerate() {
        for s in IMPLICIT {
            let mut d = Derivation::new(v, s).unwrap();
            let l = operators::generator(v).unwrap();
            if d.weak_operator(0) != DiffOp::identity() || d.weak_operator(1) != l {
                bad.push(format!("{s} fixture {k}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(1),
        format!("12 potentials x 2 schemes, mismatches {bad:?}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (name, v) in fixtures() {
        for s in IMPLICIT {
            let mut d = Derivation::new(&v, s).unwrap();
            let ls: Vec<DiffOp> = (0..4).map(|n| d.modified_generator(n)).collect();
            for n in 0..=4 {
                let rebuilt = operators::reconstruct_weak_operator(n, &ls[..n]).unwrap();
                if rebuilt != d.weak_operator(n) {
                    bad.push(format!("{name} {s} n={n}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(10),
        format!("n <= 4, mismatches {bad:?}, {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (name, v) in fixtures() {
        for s in IMPLICIT {
            let mut d = Derivation::new(&v, s).unwrap();
            for n in 1..=4 {
                let l = d.modified_generator(n);
                let kills_constants = l.apply(&Expr::one()).is_zero();
                let order_ok = l.order().is_none_or(|o| o <= 2 * n + 2);
                if !kills_constants || !order_ok {
                    bad.push(format!("{name} {s} n={n} order={:?}", l.order()));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(1),
        format!("n <= 4, violations {bad:?}, {elapsed:.2?}"),
    )
}

fn criterion_4() -> Outcome {
    let ou = Potential::ou();
    let half = ratio(1, 2);
    let split_l1 = DiffOp::new(vec![Expr::zero(), Expr::monomial(half.clone(), 1, 0), Expr::constant(half.clone())]);
    let impl_l1 = DiffOp::new(vec![Expr::zero(), Expr::monomial(half.clone(), 1, 0), Expr::constant(-half.clone())]);
    let split_mu = Expr::from_coeffs(&[ratio(-3, 4), int(0), ratio(3, 2)]);
    let impl_mu = Expr::from_coeffs(&[ratio(1, 4), int(0), ratio(-1, 2)]);
    let g = Grid::standard();
    let mut checks = Vec::new();
    checks.push(operators::modified_generator(&ou, 1, Scheme::SplitStep).unwrap() == split_l1);
    checks.push(operators::modified_generator(&ou, 1, Scheme::ImplicitEuler).unwrap() == impl_l1);
    for (s, mu) in [(Scheme::SplitStep, &split_mu), (Scheme::ImplicitEuler, &impl_mu)] {
        let c = MeasureCorrection::new(&ou, s, 1, g).unwrap();
        checks.push(c.jet(1).expr.as_ref() == Some(mu));
    }
    outcome(
        checks.iter().all(|&c| c),
        format!("L_1 split/implicit, mu_1 split/implicit: {checks:?}"),
    )
}

/// `2^-256`-rounded Newton iterate for `y + delta (y^3 - y) = x`.
fn rational_psi(x: &Rational, delta: &Rational, start: Rational) -> Rational {
    let scale = Rational::from_integer(BigInt::one() << 256usize);
    let one = Rational::one();
    let mut y = start;
    for _ in 0..8 {
        let f = &y + delta * (&y * &y * &y - &y) - x;
        let df = &one + delta * (Rational::from_integer(3.into()) * &y * &y - &one);
        y = &y - f / df;
        y = (&y * &scale).round() / &scale;
    }
    y
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_5() -> Outcome {
    let v = Potential::double_well();
    let mut d = Derivation::new(&v, Scheme::SplitStep).unwrap();
    let dks: Vec<Expr> = (1..=4).map(|k| d.dk(k).clone()).collect();
    let deltas = [ratio(1, 1000), ratio(2, 1000), ratio(5, 1000), ratio(1, 100)];
    let fdeltas: Vec<f64> = deltas.iter().map(rational_to_f64).collect();
    let xs = [int(-2), ratio(3, 10), ratio(17, 10)];
    let mut split_orders = Vec::new();
    for x in &xs {
        let mut errs = Vec::new();
        for delta in &deltas {
            let mut series = x.clone();
            let mut pow = Rational::one();
            for dk in &dks {
                pow = &pow * delta;
                series += &pow * dk.evaluate_exact(x, &Rational::zero());
            }
            let psi = rational_psi(x, delta, series.clone());
            errs.push(rational_to_f64(&(psi - series).abs()));
        }
        split_orders.push(loglog_slope(&fdeltas, &errs));
    }

    // Implicit Euler: E Y against the eta-averaged series through delta^3.
    let mut d = Derivation::new(&v, Scheme::ImplicitEuler).unwrap();
    let means: Vec<Expr> = (1..=6).map(|k| d.dk(k).expect_eta()).collect();
    let mut impl_orders = Vec::new();
    for x in &xs {
        let xf = rational_to_f64(x);
        let mut errs = Vec::new();
        for &delta in &fdeltas {
            let cfg = SchemeConfig::new(Scheme::ImplicitEuler, delta, v.clone()).unwrap();
            let mean = markov::one_step_expectation(&cfg, xf, |y| y).unwrap();
            let mut series = xf;
            for (k, m) in means.iter().enumerate() {
                series += (delta.sqrt()).powi(k as i32 + 1) * m.evaluate(xf, 0.0);
            }
            errs.push((mean - series).abs());
        }
        impl_orders.push(loglog_slope(&fdeltas, &errs));
    }
    let pass = split_orders.iter().all(|&o| o >= 4.8) && impl_orders.iter().all(|&o| o >= 3.8);
    outcome(
        pass,
        format!("split-step orders {split_orders:.3?} (>= 4.8), implicit Euler mean orders {impl_orders:.3?} (>= 3.8)"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let ou = Potential::ou();
    let g = Grid::standard();
    let deltas = [0.2, 0.1, 0.05, 0.025];
    let e2 = (-2.0f64).exp();
    let exact = GridFunction::from_fn(g, |x| x * x * e2 + 0.5 * (1.0 - e2));
    let phi = GridFunction::from_expr(g, &x2());
    let mut slopes = Vec::new();
    let mut all_errs = Vec::new();
    for s in IMPLICIT {
        let mut errs = Vec::new();
        for &delta in &deltas {
            let k = TransitionKernel::new(s, &ou, delta, g).unwrap();
            let p = (1.0 / delta).round() as usize;
            let u = markov::semigroup_power(&k, &phi, p).unwrap();
            errs.push(u.max_abs_diff_within(&exact, 3.0));
        }
        slopes.push(loglog_slope(&deltas, &errs));
        all_errs.push(errs);
    }
    let elapsed = start.elapsed();
    outcome(
        slopes.iter().all(|s| (0.8..=1.2).contains(s)) && elapsed < Duration::from_secs(60),
        format!(
            "slopes split/implicit {slopes:.3?}, errors {} {}, {elapsed:.2?}",
            sci(&all_errs[0]),
            sci(&all_errs[1])
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let g = Grid::symmetric(6.0, 513).unwrap();
    let deltas = [0.2, 0.1, 0.05];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, v) in fixtures() {
        let mut errs = Vec::new();
        for &delta in &deltas {
            let steps = ((delta / g.spacing()).ceil() as usize).max(16);
            let cfg = PdeConfig::with_dt(g, delta / steps as f64, delta, steps).unwrap();
            let flow = reference::solve_modified_flow(&v, &x2(), Scheme::SplitStep, 1, delta, &cfg).unwrap();
            let v1 = flow.combined.last();
            let sc = SchemeConfig::new(Scheme::SplitStep, delta, v.clone()).unwrap();
            let mut err: f64 = 0.0;
            for i in g.indices_within(3.0) {
                let e = markov::one_step_expectation(&sc, g.node(i), |y| y * y).unwrap();
                err = err.max((e - v1.values[i]).abs());
            }
            errs.push(err);
        }
        let slope = loglog_slope(&deltas, &errs);
        pass &= slope >= 1.7;
        parts.push(format!("{name} slope {slope:.3} errors {}", sci(&errs)));
    }
    let elapsed = start.elapsed();
    outcome(
        pass && elapsed < Duration::from_secs(120),
        format!("{}, {elapsed:.2?}", parts.join("; ")),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let v = Potential::double_well();
    let g = Grid::symmetric(6.0, 1025).unwrap();
    let rho = stationary::invariant_density(&v, g).unwrap();
    let base = stationary::mean_expr(&x2(), &rho);
    let mc = MeasureCorrection::new(&v, Scheme::SplitStep, 1, g).unwrap();
    let deltas = [0.4, 0.2, 0.1, 0.05];
    let mut b0 = Vec::new();
    let mut b1 = Vec::new();
    for &delta in &deltas {
        let k = TransitionKernel::new(Scheme::SplitStep, &v, delta, g).unwrap();
        let pi = markov::invariant_density(&k, 1e-12, 1_000_000).unwrap();
        let m = stationary::mean_expr(&x2(), &pi);
        b0.push((m - base).abs());
        b1.push((m - mc.corrected_average(&x2(), 1, delta).unwrap()).abs());
    }
    let s0 = loglog_slope(&deltas, &b0);
    let s1 = loglog_slope(&deltas, &b1);
    let elapsed = start.elapsed();
    outcome(
        (0.7..=1.3).contains(&s0) && (1.6..=2.4).contains(&s1) && elapsed < Duration::from_secs(300),
        format!("b0 slope {s0:.3} {}, b1 slope {s1:.3} {}, {elapsed:.2?}", sci(&b0), sci(&b1)),
    )
}

fn residual(v: &Potential, mu: &GridFunction, g: &GridFunction, skip: usize) -> f64 {
    let p = v.symbolic().unwrap();
    let h = mu.grid.spacing();
    let d1 = bea_core::stencil::derivative(&mu.values, h, 1, 4);
    let d2 = bea_core::stencil::derivative(&mu.values, h, 2, 4);
    (skip..mu.grid.n - skip)
        .map(|i| (0.5 * d2[i] - p.dv(mu.grid.node(i)) * d1[i] - g.values[i]).abs())
        .fold(0.0, f64::max)
}

fn criterion_9() -> Outcome {
    let g = Grid::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_residual: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for (_, v) in fixtures() {
        let rho = stationary::invariant_density(&v, g).unwrap();
        for _ in 0..20 {
            let deg = rng.random_range(1..=5);
            let coeffs: Vec<Rational> = (0..=deg).map(|_| ratio(rng.random_range(-8..=8), 4)).collect();
            let raw = Expr::from_coeffs(&coeffs);
            let values = GridFunction::from_expr(g, &raw);
            let m = stationary::mean(&values, &rho);
            let centred = GridFunction::new(g, values.values.iter().map(|a| a - m).collect()).unwrap();
            let sol = stationary::poisson_solve(&v, Source::Grid(&centred), g, 2).unwrap();
            let mu = sol.mu();
            let scale = centred.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if scale > 0.0 {
                worst_residual = worst_residual.max(residual(&v, &mu, &centred, 5) / scale);
            }
            worst_mean = worst_mean.max(stationary::mean(&mu, &rho).abs());
        }
    }
    outcome(
        worst_residual <= 1e-6 && worst_mean <= 1e-10,
        format!("40 sources, max relative residual {worst_residual:.3e}, max |<mu>| {worst_mean:.3e}"),
    )
}

fn criterion_10() -> Outcome {
    let g = Grid::standard();
    let mut worst_g: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for (_, v) in fixtures() {
        for s in IMPLICIT {
            let c = MeasureCorrection::new(&v, s, 3, g).unwrap();
            for n in 1..=3 {
                let scale = c.source_scale(n);
                if scale > 0.0 {
                    worst_g = worst_g.max(c.source_mean(n).abs() / scale);
                }
            }
            for order in 0..=3 {
                for delta in [0.05, 0.3] {
                    let total = c.corrected_average(&Expr::one(), order, delta).unwrap();
                    worst_total = worst_total.max((total - 1.0).abs());
                }
            }
        }
    }
    outcome(
        worst_g <= 1e-8 && worst_total <= 1e-10,
        format!("max |<G_n>| / <|G_n|> {worst_g:.3e}, max |int mu^(N) rho - 1| {worst_total:.3e}"),
    )
}

fn criterion_11() -> Outcome {
    let g = Grid::standard();
    let cfg = PdeConfig::with_dt(g, g.spacing(), 10.0, 8).unwrap();
    let ou = Potential::ou();
    let u = reference::solve_kolmogorov(&ou, &Expr::x(), &cfg).unwrap();
    let r1 = reference::decay_rate(&u, 0.0, (1.0, 5.0)).unwrap();
    let u = reference::solve_kolmogorov(&ou, &x2(), &cfg).unwrap();
    let r2 = reference::decay_rate(&u, 0.5, (1.0, 5.0)).unwrap();
    let dw = Potential::double_well();
    let rho = stationary::invariant_density(&dw, g).unwrap();
    let avg = stationary::mean_expr(&x2(), &rho);
    let u = reference::solve_kolmogorov(&dw, &x2(), &cfg).unwrap();
    let r3 = reference::decay_rate(&u, avg, (2.0, 10.0)).unwrap();
    outcome(
        (r1.rate - 1.0).abs() <= 0.02 && (r2.rate - 2.0).abs() <= 0.05 && r3.r_squared >= 0.98 && r3.rate > 0.0,
        format!(
            "ou x: {:.4}, ou x^2: {:.4}, double well x^2: rate {:.4} r2 {:.5}",
            r1.rate, r2.rate, r3.rate, r3.r_squared
        ),
    )
}

fn criterion_12() -> Outcome {
    let start = Instant::now();
    let v = Potential::double_well();
    let delta = 0.5;
    let mut parts = Vec::new();
    let mut pass = true;
    for s in IMPLICIT {
        let cfg = SchemeConfig::new(s, delta, v.clone()).unwrap();
        for p in 1..=3u32 {
            let mut run = McRun::new(7, 10_000, 100, vec![3.0], Observable::NormPower(p));
            run.stride = 10;
            let report = integrate::moment_track(&run, &cfg, p).unwrap();
            let dead = report.rows.iter().map(|r| r.n_dead_paths).max().unwrap_or(0);
            let bound = 3.0f64.powi(2 * p as i32);
            let max = report.max_estimate();
            let ok = dead == 0 && max.is_finite() && max <= bound;
            pass &= ok;
            parts.push(format!("{s} p={p} max {max:.3} dead {dead}"));
        }
    }
    let cfg = SchemeConfig::new(Scheme::ExplicitEuler, delta, v.clone()).unwrap();
    let run = McRun::new(7, 10_000, 100, vec![3.0], Observable::NormPower(1));
    let report = integrate::simulate(&run, &cfg).unwrap();
    let frac = report.dead_fraction();
    pass &= frac > 0.5;
    parts.push(format!("explicit euler dead fraction {frac:.3}"));
    let elapsed = start.elapsed();
    outcome(
        pass && elapsed < Duration::from_secs(120),
        format!("{}, {elapsed:.2?}", parts.join(", ")),
    )
}

fn reports_with_threads(threads: usize) -> Vec<String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut out = Vec::new();
        for s in [Scheme::SplitStep, Scheme::ImplicitEuler, Scheme::ExplicitEuler] {
            let cfg = SchemeConfig::new(s, 0.1, Potential::double_well()).unwrap();
            let mut run = McRun::new(11, 3000, 200, vec![0.5], Observable::Polynomial(x2()));
            run.burn_in = 50;
            run.stride = 20;
            out.push(integrate::simulate(&run, &cfg).unwrap().to_csv(&[]));
            out.push(integrate::moment_track(&run, &cfg, 2).unwrap().to_csv(&[]));
        }
        out
    })
}

fn criterion_13() -> Outcome {
    let one = reports_with_threads(1);
    let eight = reports_with_threads(8);
    outcome(
        one == eight,
        format!("{} reports compared byte for byte", one.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 13] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    let mut failed = 0;
    for (n, run) in criteria {
        let o = run();
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
