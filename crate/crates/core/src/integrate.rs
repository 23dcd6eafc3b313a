//! One-step schemes in `d` dimensions, the Newton solve of the implicit
//! drift step, and seeded Monte Carlo with thread-count independent results.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potential::{Potential, PotentialForm};
use crate::symbolic::{horner, Expr};
use crate::Scheme;

/// Identifies the noise generator in reports: ChaCha8 seeded from the run
/// seed, one stream per path, standard normals by the ziggurat method.
pub const RNG_ALGORITHM: &str = "chacha8-stream/ziggurat-v1";

/// Paths beyond this norm are declared dead.
pub const EXPLOSION_GUARD: f64 = 1e10;

/// Paths per independently simulated block.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Relative residual tolerance: `|F(y)| <= tol (1 + |rhs|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub delta: f64,
    pub potential: Potential,
    pub dimension: usize,
    pub newton: NewtonOptions,
}

impl SchemeConfig {
    /// Validates `delta > 0`, and `delta < delta_0` for the implicit schemes.
    pub fn new(scheme: Scheme, delta: f64, potential: Potential) -> Result<Self> {
        if scheme.is_implicit() {
            potential.check_delta(delta)?;
        } else if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::DeltaOutOfRange {
                delta,
                delta0: f64::INFINITY,
            });
        }
        Ok(Self {
            scheme,
            delta,
            dimension: potential.dimension(),
            potential,
            newton: NewtonOptions::default(),
        })
    }

    pub fn with_newton(mut self, newton: NewtonOptions) -> Self {
        self.newton = newton;
        self
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Solves `y + delta V'(y) = rhs` by Newton's method from `y = rhs`, halving
/// the step whenever the residual does not decrease.
pub fn implicit_solve(v: &Potential, rhs: &[f64], delta: f64, opts: NewtonOptions) -> Result<Vec<f64>> {
    v.check_delta(delta)?;
    if let PotentialForm::Symbolic1D(p) = &v.form {
        let y = newton_scalar(
            |y| (y + delta * p.dv(y) - rhs[0], 1.0 + delta * p.d2v(y)),
            rhs[0],
            opts,
        )?;
        return Ok(vec![y]);
    }
    let d = rhs.len();
    let scale = opts.tol * (1.0 + norm(rhs));
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let residual = |y: &[f64], grad: &mut [f64]| -> Vec<f64> {
        v.gradient(y, grad);
        (0..d).map(|i| y[i] + delta * grad[i] - rhs[i]).collect()
    };
    let mut y = rhs.to_vec();
    let mut f = residual(&y, &mut grad);
    let mut fnorm = norm(&f);
    for _ in 0..opts.max_iter {
        if fnorm <= scale {
            return Ok(y);
        }
        v.hessian(&y, &mut hess);
        let jac = DMatrix::from_fn(d, d, |i, j| {
            delta * hess[i * d + j] + if i == j { 1.0 } else { 0.0 }
        });
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&f))
            .ok_or(Error::NoConvergence {
                iterations: 0,
                residual: fnorm,
            })?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = (0..d).map(|i| y[i] - t * step[i]).collect();
            let ft = residual(&trial, &mut grad);
            let n = norm(&ft);
            if n < fnorm || t < 1e-10 {
                y = trial;
                f = ft;
                fnorm = n;
                break;
            }
            t *= 0.5;
        }
    }
    if fnorm <= scale {
        return Ok(y);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: fnorm,
    })
}

/// Damped scalar Newton; `f` returns the residual and its derivative.
pub(crate) fn newton_scalar(f: impl Fn(f64) -> (f64, f64), y0: f64, opts: NewtonOptions) -> Result<f64> {
    let scale = opts.tol * (1.0 + y0.abs());
    let mut y = y0;
    let (mut r, mut dr) = f(y);
    for _ in 0..opts.max_iter {
        if r.abs() <= scale {
            return Ok(y);
        }
        let step = r / dr;
        let mut t = 1.0;
        loop {
            let trial = y - t * step;
            let (rt, drt) = f(trial);
            if rt.abs() < r.abs() || t < 1e-10 {
                y = trial;
                r = rt;
                dr = drt;
                break;
            }
            t *= 0.5;
        }
    }
    if r.abs() <= scale {
        return Ok(y);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: r.abs(),
    })
}

/// The deterministic implicit map `Psi_delta(x)`, the solution of `y = x - delta V'(y)`.
pub fn psi(cfg: &SchemeConfig, x: &[f64]) -> Result<Vec<f64>> {
    implicit_solve(&cfg.potential, x, cfg.delta, cfg.newton)
}

/// One step of the configured scheme driven by the standard normal vector `eta`.
pub fn step(cfg: &SchemeConfig, x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let s = cfg.delta.sqrt();
    match cfg.scheme {
        Scheme::ExplicitEuler => {
            let mut g = vec![0.0; x.len()];
            cfg.potential.gradient(x, &mut g);
            Ok((0..x.len()).map(|i| x[i] - cfg.delta * g[i] + s * eta[i]).collect())
        }
        Scheme::SplitStep => {
            let y = psi(cfg, x)?;
            Ok((0..x.len()).map(|i| y[i] + s * eta[i]).collect())
        }
        Scheme::ImplicitEuler => {
            let rhs: Vec<f64> = (0..x.len()).map(|i| x[i] + s * eta[i]).collect();
            psi(cfg, &rhs)
        }
    }
}

type ObservableFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Quantity averaged over paths.
#[derive(Clone)]
pub enum Observable {
    /// Polynomial in the first coordinate.
    Polynomial(Expr),
    /// `|x|^{2p}`.
    NormPower(u32),
    Function(Arc<ObservableFn>),
}

impl Observable {
    fn evaluator(&self) -> Box<dyn Fn(&[f64]) -> f64 + Send + Sync + '_> {
        match self {
            Observable::Polynomial(e) => {
                let c = e.to_float_coeffs();
                Box::new(move |x| horner(&c, x[0]))
            }
            Observable::NormPower(p) => {
                let p = *p as i32;
                Box::new(move |x| x.iter().map(|a| a * a).sum::<f64>().powi(p))
            }
            Observable::Function(f) => Box::new(move |x| f(x)),
        }
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observable::Polynomial(e) => write!(f, "Polynomial({e})"),
            Observable::NormPower(p) => write!(f, "NormPower({p})"),
            Observable::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Monte Carlo run description.
#[derive(Debug, Clone)]
pub struct McRun {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub x0: Vec<f64>,
    pub observable: Observable,
    /// Steps excluded from the time average.
    pub burn_in: usize,
    /// Report every `stride` steps (the final step is always reported);
    /// `0` reports only step 0 and the final step.
    pub stride: usize,
}

impl McRun {
    pub fn new(seed: u64, n_paths: usize, n_steps: usize, x0: Vec<f64>, observable: Observable) -> Self {
        Self {
            seed,
            n_paths,
            n_steps,
            x0,
            observable,
            burn_in: 0,
            stride: 0,
        }
    }

    fn checkpoints(&self) -> Vec<usize> {
        let mut out = vec![0];
        if self.stride > 0 {
            out.extend((1..=self.n_steps / self.stride).map(|k| k * self.stride));
        }
        if *out.last().unwrap() != self.n_steps {
            out.push(self.n_steps);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub step: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub n_dead_paths: usize,
}

/// Path statistics at the checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scheme: Scheme,
    pub delta: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub rows: Vec<ReportRow>,
    /// Mean over surviving paths of `(1/n) sum_{k > burn_in} phi(X_k)` with its standard error.
    pub time_average: Option<(f64, f64)>,
    pub rng: &'static str,
}

impl RunReport {
    pub fn final_row(&self) -> &ReportRow {
        self.rows.last().expect("at least step 0")
    }

    pub fn max_estimate(&self) -> f64 {
        self.rows.iter().map(|r| r.estimate).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dead_fraction(&self) -> f64 {
        self.final_row().n_dead_paths as f64 / self.n_paths.max(1) as f64
    }

    /// `step,estimate,stderr,n_dead_paths` rows after `#` header lines.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(
            out,
            "# scheme = {}, delta = {}, seed = {}, paths = {}, rng = {}",
            self.scheme, self.delta, self.seed, self.n_paths, self.rng
        );
        if let Some((m, s)) = self.time_average {
            let _ = writeln!(out, "# time_average = {m:e}, stderr = {s:e}");
        }
        out.push_str("step,estimate,stderr,n_dead_paths\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:e},{:e},{}", r.step, r.estimate, r.stderr, r.n_dead_paths);
        }
        out
    }
}

/// Count, mean and centered sum of squares (mergeable).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + d * b.n / n,
            m2: a.m2 + b.m2 + d * d * a.n * b.n / n,
        }
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

#[derive(Debug, Clone)]
struct BlockStats {
    at: Vec<Moments>,
    dead: Vec<usize>,
    time_average: Moments,
}

impl BlockStats {
    fn merge(a: BlockStats, b: BlockStats) -> BlockStats {
        BlockStats {
            at: a.at.iter().zip(&b.at).map(|(x, y)| Moments::merge(*x, *y)).collect(),
            dead: a.dead.iter().zip(&b.dead).map(|(x, y)| x + y).collect(),
            time_average: Moments::merge(a.time_average, b.time_average),
        }
    }
}

fn tree_merge(mut blocks: Vec<BlockStats>) -> BlockStats {
    while blocks.len() > 1 {
        let mut next = Vec::with_capacity(blocks.len().div_ceil(2));
        let mut it = blocks.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => BlockStats::merge(a, b),
                None => a,
            });
        }
        blocks = next;
    }
    blocks.pop().expect("at least one block")
}

/// Noise stream of one path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn simulate_block(run: &McRun, cfg: &SchemeConfig, paths: std::ops::Range<usize>, checkpoints: &[usize]) -> Result<BlockStats> {
    let phi = run.observable.evaluator();
    let d = run.x0.len();
    let mut stats = BlockStats {
        at: vec![Moments::default(); checkpoints.len()],
        dead: vec![0; checkpoints.len()],
        time_average: Moments::default(),
    };
    let mut eta = vec![0.0; d];
    for path in paths {
        let mut rng = path_rng(run.seed, path as u64);
        let mut x = run.x0.clone();
        let mut alive = true;
        let mut sum = 0.0;
        let mut next = 0;
        for k in 0..=run.n_steps {
            if k > 0 && alive {
                for e in eta.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                x = step(cfg, &x, &eta)?;
                if !x.iter().all(|v| v.is_finite()) || norm(&x) > EXPLOSION_GUARD {
                    alive = false;
                }
            }
            if alive && k > run.burn_in {
                sum += phi(&x);
            }
            if next < checkpoints.len() && checkpoints[next] == k {
                if alive {
                    stats.at[next].push(phi(&x));
                } else {
                    stats.dead[next] += 1;
                }
                next += 1;
            }
        }
        if alive && run.n_steps > run.burn_in {
            stats.time_average.push(sum / (run.n_steps - run.burn_in) as f64);
        }
    }
    Ok(stats)
}

/// Estimates `E phi(X_k)` at the checkpoints, and the time average.
/// The result depends only on the run and the configuration, not on the
/// number of worker threads.
pub fn simulate(run: &McRun, cfg: &SchemeConfig) -> Result<RunReport> {
    if run.x0.len() != cfg.dimension {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} components, potential has dimension {}",
            run.x0.len(),
            cfg.dimension
        )));
    }
    if run.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let checkpoints = run.checkpoints();
    let blocks: Vec<std::ops::Range<usize>> = (0..run.n_paths.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(run.n_paths))
        .collect();
    let stats: Vec<BlockStats> = blocks
        .into_par_iter()
        .map(|r| simulate_block(run, cfg, r, &checkpoints))
        .collect::<Result<_>>()?;
    let total = tree_merge(stats);
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(i, &step)| ReportRow {
            step,
            estimate: if total.at[i].n > 0.0 { total.at[i].mean } else { f64::NAN },
            stderr: total.at[i].stderr(),
            n_dead_paths: total.dead[i],
        })
        .collect();
    let time_average = (run.n_steps > run.burn_in && total.time_average.n > 0.0)
        .then(|| (total.time_average.mean, total.time_average.stderr()));
    Ok(RunReport {
        scheme: cfg.scheme,
        delta: cfg.delta,
        seed: run.seed,
        n_paths: run.n_paths,
        rows,
        time_average,
        rng: RNG_ALGORITHM,
    })
}

/// Tracks `E |X_n|^{2p}` at the checkpoints of `run` (its observable is
/// replaced).
pub fn moment_track(run: &McRun, cfg: &SchemeConfig, p: u32) -> Result<RunReport> {
    if p == 0 {
        return Err(Error::InvalidArgument("moment order p must be >= 1".into()));
    }
    let run = McRun {
        observable: Observable::NormPower(p),
        ..run.clone()
    };
    simulate(&run, cfg)
}
