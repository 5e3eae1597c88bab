//! Bayesian optimization of a functional restricted to a finite span.
//!
//! The search space is the cube `[−1, 1]^R`, mapped into `H` by
//! `c ↦ Σᵢ (cᵢ ℓ) qᵢ` with `ℓ = 1.5 · max |initial coefficient|`. Each step fits
//! a GP to the standardized observations and evaluates the expected
//! improvement maximizer.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{collect_gradients, eigendecompose, DEFAULT_RANK_TOL};
use crate::csv;
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::hilbert::{inner_product, orthonormalize, Field, Subspace};
use crate::randfield::GaussianMeasure;
use crate::rng::{derive_seed, substream};
use crate::stats::percentile;
use crate::surrogate::GaussianProcess;

pub const CANDIDATES: usize = 1024;
pub const POLISH_STARTS: usize = 4;
pub const POLISH_STEPS: usize = 50;

/// `g(c) = f(Σᵢ cᵢ ℓ qᵢ)` on the cube `[−1, 1]^R`.
pub struct SpanObjective<'a, F: ?Sized> {
    f: &'a F,
    basis: Subspace,
    ell: f64,
    initial: Vec<Vec<f64>>,
}

/// Coefficients `(Q*Q)⁻¹ Q* m` of each `m` in `init`.
fn normal_equations(basis: &Subspace, init: &[Field]) -> Result<Vec<Vec<f64>>> {
    let q = basis.basis();
    let r = q.len();
    let mut gram = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let v = inner_product(&q[i], &q[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("Q*Q is singular; orthonormalize the basis first".into()))?;
    init.iter()
        .map(|m| {
            let rhs = DVector::from_iterator(r, q.iter().map(|qi| inner_product(qi, m)).collect::<Result<Vec<_>>>()?);
            Ok(chol.solve(&rhs).iter().copied().collect())
        })
        .collect()
}

/// Orthonormalizes `basis`, projects `init` onto it and fixes `ℓ`.
pub fn build_span_objective<'a, F: Functional + ?Sized>(
    f: &'a F,
    basis: &[Field],
    init: &[Field],
) -> Result<SpanObjective<'a, F>> {
    let on = orthonormalize(basis)?;
    if on.dropped > 0 {
        return Err(Error::invalid(
            "basis",
            format!("{} of {} directions are linearly dependent", on.dropped, basis.len()),
        ));
    }
    let coeffs = normal_equations(&on.subspace, init)?;
    let max = coeffs.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(max > 0.0) {
        return Err(Error::invalid("ell", "initial designs have no component in the span"));
    }
    let ell = 1.5 * max;
    let initial = coeffs.iter().map(|c| c.iter().map(|v| v / ell).collect()).collect();
    Ok(SpanObjective {
        f,
        basis: on.subspace,
        ell,
        initial,
    })
}

impl<F: Functional + ?Sized> SpanObjective<'_, F> {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn basis(&self) -> &Subspace {
        &self.basis
    }

    /// Cube coordinates of the initial designs.
    pub fn initial_points(&self) -> &[Vec<f64>] {
        &self.initial
    }

    pub fn point(&self, c: &[f64]) -> Result<Field> {
        let scaled: Vec<f64> = c.iter().map(|v| v * self.ell).collect();
        self.basis.combine(&scaled)
    }

    pub fn evaluate(&self, c: &[f64]) -> Result<f64> {
        self.f.evaluate(&self.point(c)?)
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(best − Y, 0)]` for `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if !(sd > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Asm,
    Rand,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Asm => "ASM",
            Method::Rand => "Rand",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoTrace {
    pub method: Method,
    pub seed: u64,
    pub n_init: usize,
    /// Evaluated cube points, starting with the center.
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub best: Vec<f64>,
    /// Gradient evaluations spent building the basis.
    pub gradient_calls: usize,
    /// Set when an evaluation failed and the trace stopped early.
    pub error: Option<String>,
}

impl BoTrace {
    pub fn final_best(&self) -> Option<f64> {
        self.best.last().copied()
    }
}

fn primes(n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let mut k = 2;
    while out.len() < n {
        if out.iter().all(|p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points under a random shift modulo 1, mapped to `[−1, 1]^d`.
fn candidates(d: usize, n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    let bases = primes(d);
    (1..=n as u64)
        .map(|i| {
            (0..d)
                .map(|a| {
                    let h = (radical_inverse(i, bases[a]) + shift[a]).fract();
                    2.0 * h - 1.0
                })
                .collect()
        })
        .collect()
}

/// Coordinate search on `score` inside the cube, step halving on failure.
fn polish(mut x: Vec<f64>, score: impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let mut best = score(&x);
    let mut step = 0.25;
    for _ in 0..POLISH_STEPS {
        let mut moved = false;
        for a in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[a] = (y[a] + dir * step).clamp(-1.0, 1.0);
                let s = score(&y);
                if s > best {
                    best = s;
                    x = y;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (best, x)
}

fn next_point(gp: &GaussianProcess, best: f64, d: usize, seed: u64, step: usize) -> Vec<f64> {
    let mut rng = substream(seed, step as u64);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let ei = |c: &[f64]| {
        let (m, s) = gp.predict(c);
        expected_improvement(m, s, best)
    };
    let mut scored: Vec<(f64, usize, Vec<f64>)> = candidates(d, CANDIDATES, &shift)
        .into_iter()
        .enumerate()
        .map(|(i, c)| (ei(&c), i, c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut winner: Option<(f64, Vec<f64>)> = None;
    for (_, _, c) in scored.into_iter().take(POLISH_STARTS) {
        let (s, x) = polish(c, ei);
        if winner.as_ref().is_none_or(|w| s > w.0) {
            winner = Some((s, x));
        }
    }
    winner.map(|w| w.1).unwrap_or_else(|| vec![0.0; d])
}

/// Evaluates the center, the first `n_init` initial designs, then `n_seq`
/// expected-improvement steps.
pub fn run_bo<F: Functional + ?Sized>(
    objective: &SpanObjective<'_, F>,
    n_init: usize,
    n_seq: usize,
    seed: u64,
    method: Method,
) -> Result<BoTrace> {
    if n_init < 2 {
        return Err(Error::invalid("n_init", "must be at least 2"));
    }
    if n_init > objective.initial.len() {
        return Err(Error::invalid(
            "n_init",
            format!("only {} initial designs are available", objective.initial.len()),
        ));
    }
    let d = objective.dim();
    let mut trace = BoTrace {
        method,
        seed,
        n_init,
        points: Vec::new(),
        values: Vec::new(),
        best: Vec::new(),
        gradient_calls: 0,
        error: None,
    };
    let record = |trace: &mut BoTrace, c: Vec<f64>| -> bool {
        match objective.evaluate(&c) {
            Ok(v) if v.is_finite() => {
                let best = trace.best.last().map_or(v, |b| b.min(v));
                trace.points.push(c);
                trace.values.push(v);
                trace.best.push(best);
                true
            }
            Ok(v) => {
                trace.error = Some(format!("objective returned {v}"));
                false
            }
            Err(e) => {
                trace.error = Some(e.to_string());
                false
            }
        }
    };

    let design = std::iter::once(vec![0.0; d]).chain(objective.initial[..n_init].iter().cloned());
    for c in design {
        if !record(&mut trace, c) {
            return Ok(trace);
        }
    }
    for step in 0..n_seq {
        let gp = GaussianProcess::fit(&trace.points, &trace.values)?;
        let best = *trace.best.last().unwrap();
        let c = next_point(&gp, best, d, seed, step);
        if !record(&mut trace, c) {
            break;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileRow {
    pub iteration: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub traces: Vec<BoTrace>,
    pub summary: Vec<PercentileRow>,
}

impl Comparison {
    /// Median best-so-far at the last iteration.
    pub fn final_median(&self, method: Method) -> Option<f64> {
        self.summary.iter().rev().find(|r| r.method == method).map(|r| r.p50)
    }

    /// Writes `iteration,best,method,seed`.
    pub fn write_traces_csv(&self, path: &Path) -> Result<()> {
        let rows = self.traces.iter().flat_map(|t| {
            t.best
                .iter()
                .enumerate()
                .map(move |(i, b)| format!("{i},{},{},{}", csv::join(&[*b]), t.method.as_str(), t.seed))
        });
        csv::write(path, "iteration,best,method,seed", rows)
    }

    /// Writes `iteration,p10,p50,p90,method`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let rows = self.summary.iter().map(|r| {
            format!(
                "{},{},{}",
                r.iteration,
                csv::join(&[r.p10, r.p50, r.p90]),
                r.method.as_str()
            )
        });
        csv::write(path, "iteration,p10,p50,p90,method", rows)
    }
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub r: usize,
    pub n_init: usize,
    pub n_seq: usize,
}

fn one_repetition<F: Functional + ?Sized>(
    f: &F,
    measure: &GaussianMeasure,
    cfg: &CompareConfig,
    seed: u64,
) -> Result<[BoTrace; 2]> {
    let samples = collect_gradients(f, measure, cfg.r, derive_seed(seed, "bo-basis"))?;
    let rand_basis = samples.inputs().to_vec();
    let est = eigendecompose(samples, DEFAULT_RANK_TOL)?;
    let asm_basis = est.eigenfunctions().truncate(cfg.r.min(est.rank())).into_basis();
    if asm_basis.is_empty() {
        return Err(Error::Numerical("all basis gradients vanish".into()));
    }
    let init = measure.sample(cfg.n_init, derive_seed(seed, "bo-init"));

    let mut out = Vec::with_capacity(2);
    for (method, basis) in [(Method::Asm, asm_basis), (Method::Rand, rand_basis)] {
        let obj = build_span_objective(f, &basis, &init)?;
        let mut t = run_bo(&obj, cfg.n_init, cfg.n_seq, derive_seed(seed, method.as_str()), method)?;
        t.seed = seed;
        if method == Method::Asm {
            t.gradient_calls = cfg.r;
        }
        out.push(t);
    }
    let rand = out.pop().unwrap();
    let asm = out.pop().unwrap();
    Ok([asm, rand])
}

/// Runs both methods for every seed and summarizes best-so-far percentiles.
///
/// Per seed, `R` draws from `measure` form the Rand basis after
/// orthonormalization, and the leading eigenfunctions of the operator built
/// from the gradients at those same draws form the ASM basis. Both methods
/// start from the same `n_init` initial functions.
pub fn compare_methods<F: Functional + ?Sized>(
    f: &F,
    measure: &GaussianMeasure,
    cfg: &CompareConfig,
    seeds: &[u64],
) -> Result<Comparison> {
    if cfg.r == 0 {
        return Err(Error::invalid("R", "must be at least 1"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("repetitions", "must be at least 1"));
    }
    let reps: Vec<[BoTrace; 2]> = seeds
        .par_iter()
        .map(|&s| one_repetition(f, measure, cfg, s))
        .collect::<Result<_>>()?;
    let traces: Vec<BoTrace> = reps.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for method in [Method::Asm, Method::Rand] {
        let ts: Vec<&BoTrace> = traces.iter().filter(|t| t.method == method).collect();
        let len = ts.iter().map(|t| t.best.len()).max().unwrap_or(0);
        for it in 0..len {
            let vals: Vec<f64> = ts.iter().filter_map(|t| t.best.get(it).copied()).collect();
            summary.push(PercentileRow {
                iteration: it,
                p10: percentile(&vals, 10.0),
                p50: percentile(&vals, 50.0),
                p90: percentile(&vals, 90.0),
                method,
            });
        }
    }
    Ok(Comparison { traces, summary })
}
