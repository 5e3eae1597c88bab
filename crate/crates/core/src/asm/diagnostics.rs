//! Convergence and uncertainty diagnostics for the Monte Carlo estimator.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::hilbert::Field;
use crate::randfield::GaussianMeasure;
use crate::rng::{derive_seed, substream};
use crate::stats::{linear_fit, mean, percentile};

use super::operator::thin_factor;
use super::{
    collect_gradients, eigendecompose_with, sorted_eigen, symmetrize, GramSolver, LowRankOperator, SubspaceEstimate,
};

/// Number of leading eigenvalues tracked per estimate.
const TRACKED_EIGENVALUES: usize = 10;

/// What the estimates are compared against.
#[derive(Debug, Clone)]
pub enum Reference {
    /// A known operator, e.g. a closed form.
    Exact(LowRankOperator),
    /// An estimate from `16 · max(B_grid)` samples on an independent stream.
    Proxy,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub b_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `errors[s][k] = ‖𝒞̂_{B_k} − 𝒞‖_op` for seed `s`.
    pub errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    /// `eigenvalues[s][k]`: leading eigenvalues of `𝒞̂_{B_k}`.
    pub eigenvalues: Vec<Vec<Vec<f64>>>,
    pub reference_eigenvalues: Vec<f64>,
    /// Least-squares slope of `ln(mean error)` against `ln B`; `None` when
    /// some mean error is exactly zero.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Whether the reference was a high-`B` estimate.
    pub proxy: bool,
}

impl ConvergenceReport {
    /// `|σᵢ − λᵢ|` for seed `s` and grid point `k`.
    pub fn eigenvalue_error(&self, s: usize, k: usize, i: usize) -> Option<f64> {
        let est = self.eigenvalues[s][k].get(i).copied().unwrap_or(0.0);
        let exact = self.reference_eigenvalues.get(i).copied()?;
        Some((est - exact).abs())
    }
}

pub fn convergence_diagnostic<F: Functional + ?Sized>(
    f: &F,
    measure: &GaussianMeasure,
    b_grid: &[usize],
    reference: Reference,
    seeds: &[u64],
) -> Result<ConvergenceReport> {
    if b_grid.len() < 4 {
        return Err(Error::invalid("B_grid", "need at least 4 sample sizes"));
    }
    if b_grid[0] == 0 || b_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("B_grid", "must be positive and strictly increasing"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let b_max = *b_grid.last().expect("nonempty");

    let (reference, proxy) = match reference {
        Reference::Exact(op) => (op, false),
        Reference::Proxy => {
            let seed = derive_seed(seeds[0], "convergence-proxy");
            let samples = collect_gradients(f, measure, 16 * b_max, seed)?;
            let est = eigendecompose_with(samples, super::DEFAULT_RANK_TOL, GramSolver::Factored)?;
            (est.operator(), true)
        }
    };
    let mut reference_eigenvalues = reference.eigenvalues()?;
    reference_eigenvalues.truncate(TRACKED_EIGENVALUES);

    let mut errors = Vec::with_capacity(seeds.len());
    let mut eigenvalues = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let samples = collect_gradients(f, measure, b_max, seed)?;
        let mut row = Vec::with_capacity(b_grid.len());
        let mut eig_row = Vec::with_capacity(b_grid.len());
        for &b in b_grid {
            let c = 1.0 / b as f64;
            let terms: Vec<(f64, &Field)> = samples.gradients()[..b].iter().map(|g| (c, g)).collect();
            let (dist, mut leading) = compare(&terms, &reference)?;
            leading.truncate(TRACKED_EIGENVALUES);
            row.push(dist);
            eig_row.push(leading);
        }
        errors.push(row);
        eigenvalues.push(eig_row);
    }

    let mean_errors: Vec<f64> = (0..b_grid.len())
        .map(|k| mean(&errors.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let (slope, intercept) = if mean_errors.iter().all(|e| *e > 0.0) {
        let x: Vec<f64> = b_grid.iter().map(|b| (*b as f64).ln()).collect();
        let y: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
        let (s, i) = linear_fit(&x, &y);
        (Some(s), Some(i))
    } else {
        (None, None)
    };
    Ok(ConvergenceReport {
        b_grid: b_grid.to_vec(),
        seeds: seeds.to_vec(),
        errors,
        mean_errors,
        eigenvalues,
        reference_eigenvalues,
        slope,
        intercept,
        proxy,
    })
}

/// Operator-norm distance between `Σ cₖ gₖ ⊗ gₖ` and `reference`, plus the
/// spectrum of the former, both on the joint span.
fn compare(terms: &[(f64, &Field)], reference: &LowRankOperator) -> Result<(f64, Vec<f64>)> {
    let Some(space) = terms.first().map(|t| t.1.space().clone()) else {
        return Ok((reference.operator_norm()?, Vec::new()));
    };
    let mut fields: Vec<&Field> = reference.terms().iter().map(|(_, x)| x).collect();
    fields.extend(terms.iter().map(|t| t.1));
    let (basis, coords) = thin_factor(&space, &fields)?;
    let r = basis.len();
    if r == 0 {
        return Ok((0.0, Vec::new()));
    }
    let n_ref = reference.terms().len();
    let mut est = DMatrix::zeros(r, r);
    let mut refm = DMatrix::zeros(r, r);
    for (k, x) in coords.iter().enumerate() {
        let (c, target) = if k < n_ref {
            (reference.terms()[k].0, &mut refm)
        } else {
            (terms[k - n_ref].0, &mut est)
        };
        for i in 0..r {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..r {
                target[(i, j)] += c * x[i] * x[j];
            }
        }
    }
    symmetrize(&mut est);
    symmetrize(&mut refm);
    let diff = &est - &refm;
    let dist = sorted_eigen(diff).0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((dist, sorted_eigen(est).0))
}

/// Percentile intervals for the retained eigenvalues.
#[derive(Debug, Clone)]
pub struct BootstrapSpectrum {
    pub p10: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
}

/// Resamples gradient indices with replacement and recomputes the spectrum
/// of the resampled empirical operator on the retained range.
pub fn bootstrap_spectrum(estimate: &SubspaceEstimate, resamples: usize, seed: u64) -> Result<BootstrapSpectrum> {
    if resamples < 100 {
        return Err(Error::invalid("resamples", "need at least 100"));
    }
    let r = estimate.rank();
    let b = estimate.samples().len();
    let x = estimate.sample_coordinates()?;
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); r];
    for k in 0..resamples {
        let mut rng = substream(seed, k as u64);
        let mut m = DMatrix::zeros(r, r);
        for _ in 0..b {
            let col = x.column(rng.random_range(0..b));
            m.ger(1.0 / b as f64, &col, &col, 1.0);
        }
        symmetrize(&mut m);
        let (values, _) = sorted_eigen(m);
        for (i, v) in values.into_iter().enumerate() {
            draws[i].push(v);
        }
    }
    Ok(BootstrapSpectrum {
        p10: draws.iter().map(|d| percentile(d, 10.0)).collect(),
        p50: draws.iter().map(|d| percentile(d, 50.0)).collect(),
        p90: draws.iter().map(|d| percentile(d, 90.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::asm::{eigendecompose, GradientSampleSet, DEFAULT_RANK_TOL};
    use crate::functionals::{linear_functional, quadratic_functional, QuadraticFunctional};
    use crate::hilbert::{FunctionSpace, Space};
    use crate::randfield::separable_sine_measure;

    fn quad(space: &Space) -> (GaussianMeasure, QuadraticFunctional, LowRankOperator) {
        let m = separable_sine_measure(space, 4, 2.0, 1.0).unwrap();
        let a = [4.0, 3.0, 2.0];
        let phi = &m.kl_functions().basis()[..3];
        let f = quadratic_functional(phi.iter().cloned().zip(a).collect()).unwrap();
        let lambdas: Vec<f64> = a.iter().zip(m.kl_values()).map(|(a, k)| a * a * k).collect();
        let exact = LowRankOperator::from_eigenpairs(&lambdas, phi);
        (m, f, exact)
    }

    #[test]
    fn constant_gradients_have_zero_error() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let m = separable_sine_measure(&s, 3, 2.0, 1.0).unwrap();
        let h = m.sample(2, 1);
        let f = linear_functional(h[0].clone(), h[1].clone()).unwrap();
        let g = h[0].add(&h[1]).unwrap();
        let exact = LowRankOperator::new(vec![(1.0, g)]);
        let rep = convergence_diagnostic(&f, &m, &[1, 2, 4, 8], Reference::Exact(exact), &[0, 1]).unwrap();
        assert!(rep.mean_errors.iter().all(|e| *e < 1e-12));
        assert!(!rep.proxy);
    }

    #[test]
    fn rejects_short_or_unsorted_grids() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let (m, f, exact) = quad(&s);
        assert!(convergence_diagnostic(&f, &m, &[1, 2, 4], Reference::Exact(exact.clone()), &[0]).is_err());
        assert!(convergence_diagnostic(&f, &m, &[1, 4, 2, 8], Reference::Exact(exact.clone()), &[0]).is_err());
        assert!(convergence_diagnostic(&f, &m, &[1, 2, 4, 8], Reference::Exact(exact), &[]).is_err());
    }

    #[test]
    fn quadratic_error_shrinks_with_b() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let (m, f, exact) = quad(&s);
        let seeds: Vec<u64> = (0..8).collect();
        let rep = convergence_diagnostic(&f, &m, &[25, 100, 400, 1600], Reference::Exact(exact), &seeds).unwrap();
        assert!(rep.mean_errors.windows(2).all(|w| w[1] < w[0]), "{:?}", rep.mean_errors);
        let slope = rep.slope.unwrap();
        assert!((-0.8..=-0.2).contains(&slope), "slope {slope}");
        assert_eq!(rep.reference_eigenvalues.len(), 3);
    }

    #[test]
    fn proxy_reference_is_flagged() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let (m, f, _) = quad(&s);
        let rep = convergence_diagnostic(&f, &m, &[5, 10, 20, 40], Reference::Proxy, &[3]).unwrap();
        assert!(rep.proxy);
        assert_eq!(rep.errors[0].len(), 4);
    }

    #[test]
    fn bootstrap_of_constant_gradients_has_zero_width() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let m = separable_sine_measure(&s, 3, 2.0, 1.0).unwrap();
        let g = m.kl_functions().basis()[0].scaled(2.0);
        let set = GradientSampleSet::new(vec![g.clone(); 10], vec![g; 10], vec![0.0; 10], 0).unwrap();
        let est = eigendecompose(set, DEFAULT_RANK_TOL).unwrap();
        let boot = bootstrap_spectrum(&est, 200, 1).unwrap();
        assert!((boot.p90[0] - boot.p10[0]).abs() < 1e-12);
        assert!((boot.p50[0] - 4.0).abs() < 1e-12);
        assert!(bootstrap_spectrum(&est, 50, 1).is_err());
    }

    #[test]
    fn bootstrap_intervals_bracket_the_point_estimate() {
        let s = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let (m, f, _) = quad(&s);
        let mut inside = 0;
        let mut total = 0;
        for seed in 0..10 {
            let est = eigendecompose(collect_gradients(&f, &m, 60, seed).unwrap(), DEFAULT_RANK_TOL).unwrap();
            let boot = bootstrap_spectrum(&est, 200, seed + 100).unwrap();
            for (i, s) in est.eigenvalues().iter().enumerate() {
                total += 1;
                if boot.p10[i] <= *s && *s <= boot.p90[i] {
                    inside += 1;
                }
            }
        }
        assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
    }
}
