//! The four subcommands. Each writes its output file into `out` before
//! reporting a check failure.

use std::fmt::Write as _;
use std::path::Path;

use bea_core::integrate::{self, McRun, Observable, SchemeConfig};
use bea_core::markov::{self, TransitionKernel};
use bea_core::operators::{self, Derivation};
use bea_core::reference::{self, PdeConfig};
use bea_core::stationary::{self, MeasureCorrection};
use bea_core::util::loglog_slope;
use bea_core::{DiffOp, GridFunction, Scheme};

use crate::{provenance, write_output, CliError, Experiment};

/// Errors are measured on `|x| <= ERROR_RADIUS`.
pub const ERROR_RADIUS: f64 = 3.0;
/// Power-iteration tolerance for `pi_delta`.
pub const INVARIANT_TOL: f64 = 1e-12;
pub const INVARIANT_MAX_ITER: usize = 1_000_000;

pub const WEAK_ORDER_BOUNDS: (f64, f64) = (0.8, 1.2);
/// `err_vs_vN` must decay at least like `delta^{N + 1 - 0.3}`.
pub const MODIFIED_SLOPE_SLACK: f64 = 0.3;
pub const B0_BOUNDS: (f64, f64) = (0.7, 1.3);
pub const B1_BOUNDS: (f64, f64) = (1.6, 2.4);

fn describe(exp: &Experiment) -> String {
    let c = &exp.config;
    let mut s = format!("potential = {}", c.potential.kind);
    if !c.potential.coefficients.is_empty() {
        let _ = write!(s, " [{}]", c.potential.coefficients.join(", "));
    }
    let _ = write!(
        s,
        ", scheme = {}, N = {}, phi = {}, grid = [{}, {}] x {}",
        exp.scheme, c.order, exp.observable, exp.grid.lo, exp.grid.hi, exp.grid.n
    );
    s
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "OK"
    } else {
        "FAIL"
    }
}

fn in_bounds(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

/// Writes `operators.txt`; exits with a check failure when a self-check or
/// a round-trip fails, with or without `--check`.
pub fn derive(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let v = &exp.potential;
    let mut d = Derivation::new(v, exp.scheme)?;
    let l = d.generator().clone();
    let n_max = exp.config.order;
    let mut text = String::new();
    let _ = writeln!(text, "# {}", provenance(&exp.config));
    let _ = writeln!(text, "# derive {}", describe(exp));
    let _ = writeln!(text, "V = {}", v.require_symbolic()?.expr());
    let _ = writeln!(text, "L = {l}");
    for k in 1..=exp.config.dk_order {
        let _ = writeln!(text, "d_{k} = {}", d.dk(k));
    }
    for n in 0..=n_max {
        let _ = writeln!(text, "A_{n} = {}", d.weak_operator(n));
    }
    let generators: Vec<DiffOp> = (0..=n_max).map(|n| d.modified_generator(n)).collect();
    for (n, ln) in generators.iter().enumerate().skip(1) {
        let _ = writeln!(text, "L_{n} = {ln}");
    }
    let mut failures = Vec::new();
    let a0 = d.weak_operator(0) == DiffOp::identity();
    let a1 = d.weak_operator(1) == l;
    let _ = writeln!(text, "A_0 == I : {}", verdict(a0));
    let _ = writeln!(text, "A_1 == L : {}", verdict(a1));
    if !a0 {
        failures.push("A_0 != I".to_string());
    }
    if !a1 {
        failures.push("A_1 != L".to_string());
    }
    for n in 1..=n_max {
        let rebuilt = operators::reconstruct_weak_operator(n, &generators[..n])?;
        let ok = rebuilt == d.weak_operator(n);
        let _ = writeln!(text, "round-trip A_{n} : {}", verdict(ok));
        if !ok {
            failures.push(format!("round-trip n = {n}"));
        }
    }
    write_output(out, "operators.txt", &text)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failures.join(", ")))
    }
}

fn fmt_slope(s: f64) -> String {
    format!("{s:.6}")
}

/// Weak error of the scheme against `u(T)` and against `v^{(N)}(T)`.
pub fn weak_order(exp: &Experiment, out: &Path, check: bool) -> Result<(), CliError> {
    let c = &exp.config;
    let v = &exp.potential;
    let g = exp.grid;
    let t_end = c.t_end;
    let mut steps = Vec::with_capacity(c.deltas.len());
    for &delta in &c.deltas {
        let p = t_end / delta;
        if (p - p.round()).abs() > 1e-9 * p.max(1.0) || p.round() < 1.0 {
            return Err(CliError::Config(format!(
                "t_end = {t_end} is not a multiple of delta = {delta}"
            )));
        }
        steps.push(p.round() as usize);
    }
    let pde = PdeConfig::with_dt(g, g.spacing(), t_end, usize::MAX)?;
    let flow = reference::solve_modified_flow(v, &exp.observable, exp.scheme, c.order, c.deltas[0], &pde)?;
    let u = flow.components[0].last().clone();
    let phi = GridFunction::from_expr(g, &exp.observable);
    let mut err_u = Vec::new();
    let mut err_v = Vec::new();
    for (&delta, &p) in c.deltas.iter().zip(&steps) {
        let k = TransitionKernel::new(exp.scheme, v, delta, g)?;
        let scheme_mean = markov::semigroup_power(&k, &phi, p)?;
        let v_n = reference::combine(&flow.components, delta)?;
        err_u.push(scheme_mean.max_abs_diff_within(&u, ERROR_RADIUS));
        err_v.push(scheme_mean.max_abs_diff_within(v_n.last(), ERROR_RADIUS));
    }
    let slope_u = loglog_slope(&c.deltas, &err_u);
    let slope_v = loglog_slope(&c.deltas, &err_v);
    let mut text = String::new();
    let _ = writeln!(text, "# {}", provenance(c));
    let _ = writeln!(text, "# weak-order {}, T = {t_end}, |x| <= {ERROR_RADIUS}", describe(exp));
    text.push_str("delta,err_vs_u,err_vs_vN\n");
    for ((d, a), b) in c.deltas.iter().zip(&err_u).zip(&err_v) {
        let _ = writeln!(text, "{d:e},{a:.17e},{b:.17e}");
    }
    let _ = writeln!(
        text,
        "# slope err_vs_u = {}, slope err_vs_vN = {}",
        fmt_slope(slope_u),
        fmt_slope(slope_v)
    );
    write_output(out, "weak_order.csv", &text)?;
    if check {
        let mut failures = Vec::new();
        if !in_bounds(slope_u, WEAK_ORDER_BOUNDS) {
            failures.push(format!("slope err_vs_u = {slope_u} outside {WEAK_ORDER_BOUNDS:?}"));
        }
        let min_v = (c.order + 1) as f64 - MODIFIED_SLOPE_SLACK;
        if c.order >= 1 && !(slope_v >= min_v) {
            failures.push(format!("slope err_vs_vN = {slope_v} below {min_v}"));
        }
        if !failures.is_empty() {
            return Err(CliError::Check(failures.join("; ")));
        }
    }
    Ok(())
}

/// Bias of the invariant law of the scheme before and after the first-order
/// correction of the Gibbs measure.
pub fn invariant_bias(exp: &Experiment, out: &Path, check: bool) -> Result<(), CliError> {
    let c = &exp.config;
    let v = &exp.potential;
    let g = exp.grid;
    let rho = stationary::invariant_density(v, g)?;
    let base = stationary::mean_expr(&exp.observable, &rho);
    let correction = MeasureCorrection::new(v, exp.scheme, 1, g)?;
    let mut b0 = Vec::new();
    let mut b1 = Vec::new();
    let mut mc = Vec::new();
    for &delta in &c.deltas {
        let k = TransitionKernel::new(exp.scheme, v, delta, g)?;
        let pi = markov::invariant_density(&k, INVARIANT_TOL, INVARIANT_MAX_ITER)?;
        let m = stationary::mean_expr(&exp.observable, &pi);
        b0.push((m - base).abs());
        b1.push((m - correction.corrected_average(&exp.observable, 1, delta)?).abs());
        if c.mc.time_average {
            let cfg = SchemeConfig::new(exp.scheme, delta, v.clone())?;
            let mut run = McRun::new(
                c.mc.seed,
                c.mc.paths,
                c.mc.steps,
                vec![c.mc.x0],
                Observable::Polynomial(exp.observable.clone()),
            );
            run.burn_in = c.mc.steps / 10;
            run.stride = 0;
            let report = integrate::simulate(&run, &cfg)?;
            mc.push(report.time_average.unwrap_or((f64::NAN, f64::NAN)));
        }
    }
    let s0 = loglog_slope(&c.deltas, &b0);
    let s1 = loglog_slope(&c.deltas, &b1);
    let mut text = String::new();
    let _ = writeln!(text, "# {}", provenance(c));
    let _ = writeln!(text, "# invariant-bias {}, <phi>_rho = {base:.17e}", describe(exp));
    text.push_str("delta,b0,b1");
    if c.mc.time_average {
        text.push_str(",mc_mean,mc_stderr");
    }
    text.push('\n');
    for (i, d) in c.deltas.iter().enumerate() {
        let _ = write!(text, "{d:e},{:.17e},{:.17e}", b0[i], b1[i]);
        if let Some((m, s)) = mc.get(i) {
            let _ = write!(text, ",{m:.17e},{s:.17e}");
        }
        text.push('\n');
    }
    let _ = writeln!(text, "# slope b0 = {}, slope b1 = {}", fmt_slope(s0), fmt_slope(s1));
    write_output(out, "invariant_bias.csv", &text)?;
    if check {
        let mut failures = Vec::new();
        if !in_bounds(s0, B0_BOUNDS) {
            failures.push(format!("slope b0 = {s0} outside {B0_BOUNDS:?}"));
        }
        if !in_bounds(s1, B1_BOUNDS) {
            failures.push(format!("slope b1 = {s1} outside {B1_BOUNDS:?}"));
        }
        if !failures.is_empty() {
            return Err(CliError::Check(failures.join("; ")));
        }
    }
    Ok(())
}

/// Moment tracks `E |X_n|^{2p}` of both implicit schemes and explicit Euler.
/// Blow-up is reported as data, never as a failure.
pub fn stability(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let c = &exp.config;
    let mut text = String::new();
    let _ = writeln!(text, "# {}", provenance(c));
    let _ = writeln!(
        text,
        "# stability {}, paths = {}, steps = {}, x0 = {}",
        describe(exp),
        c.mc.paths,
        c.mc.steps,
        c.mc.x0
    );
    text.push_str("scheme,delta,p,step,estimate,stderr,n_dead_paths\n");
    let stride = (c.mc.steps / 100).max(1);
    for scheme in [Scheme::SplitStep, Scheme::ImplicitEuler, Scheme::ExplicitEuler] {
        for &delta in &c.deltas {
            let cfg = SchemeConfig::new(scheme, delta, exp.potential.clone())?;
            for p in 1..=c.mc.max_moment {
                let mut run = McRun::new(c.mc.seed, c.mc.paths, c.mc.steps, vec![c.mc.x0], Observable::NormPower(p));
                run.stride = stride;
                let report = integrate::moment_track(&run, &cfg, p)?;
                for r in &report.rows {
                    let _ = writeln!(
                        text,
                        "{scheme},{delta:e},{p},{},{:.17e},{:.17e},{}",
                        r.step, r.estimate, r.stderr, r.n_dead_paths
                    );
                }
            }
        }
    }
    write_output(out, "stability.csv", &text)
}
