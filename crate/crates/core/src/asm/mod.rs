//! Monte Carlo estimation of the active subspace operator
//! `𝒞 = E[∇f(U) ⊗ ∇f(U)]`.
//!
//! The empirical operator `𝒞̂_B = (1/B) Σ g_b ⊗ g_b` has rank at most `B`, so
//! its eigenpairs are recovered from the `B × B` Gram matrix
//! `Γ[b, j] = ⟨g_b, g_j⟩ / B`: if `Γ vᵢ = σᵢ vᵢ` then
//! `ŵᵢ = Σ_b vᵢ,_b g_b / √(B σᵢ)` is a unit eigenfunction of `𝒞̂_B` with the
//! same eigenvalue. Nothing of size `N × N` is ever formed.

mod diagnostics;
mod io;
mod operator;
mod warp;

pub use diagnostics::{bootstrap_spectrum, convergence_diagnostic, BootstrapSpectrum, ConvergenceReport, Reference};
pub use io::{read_estimate, read_samples, write_estimate, EstimateFile, SamplesFile, StoredEstimate};
pub use operator::{CompressedOperator, LowRankOperator};
pub use warp::{warp_operator, WarpOperator, WarpedFunctional};

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::hilbert::{self, inner_product, Field, Space, Subspace};
use crate::randfield::GaussianMeasure;

pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Largest sample count for which [`GramSolver::Auto`] forms `Γ_B` densely.
pub const DENSE_GRAM_LIMIT: usize = 1024;

/// Gradients `g_b = ∇f(U_b)` at i.i.d. inputs.
#[derive(Debug, Clone)]
pub struct GradientSampleSet {
    space: Space,
    inputs: Vec<Field>,
    gradients: Vec<Field>,
    values: Vec<f64>,
    seed: u64,
}

impl GradientSampleSet {
    pub fn new(inputs: Vec<Field>, gradients: Vec<Field>, values: Vec<f64>, seed: u64) -> Result<Self> {
        let space = gradients
            .first()
            .ok_or(Error::invalid("B", "need at least one gradient"))?
            .space()
            .clone();
        if inputs.len() != gradients.len() || values.len() != gradients.len() {
            return Err(Error::LengthMismatch {
                expected: gradients.len(),
                got: inputs.len().min(values.len()),
            });
        }
        for f in inputs.iter().chain(&gradients) {
            if !hilbert::same_space(&space, f.space()) {
                return Err(Error::SpaceMismatch);
            }
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            space,
            inputs,
            gradients,
            values,
            seed,
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn inputs(&self) -> &[Field] {
        &self.inputs
    }

    pub fn gradients(&self) -> &[Field] {
        &self.gradients
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of samples `B`.
    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// The first `b` samples.
    pub fn prefix(&self, b: usize) -> GradientSampleSet {
        let b = b.min(self.len());
        GradientSampleSet {
            space: self.space.clone(),
            inputs: self.inputs[..b].to_vec(),
            gradients: self.gradients[..b].to_vec(),
            values: self.values[..b].to_vec(),
            seed: self.seed,
        }
    }

    /// `(1/B) Σ ‖g_b‖²`, the trace of `𝒞̂_B`.
    pub fn mean_squared_gradient_norm(&self) -> f64 {
        self.gradients.iter().map(|g| hilbert::norm(g).powi(2)).sum::<f64>() / self.len() as f64
    }

    /// `𝒞̂_B h = (1/B) Σ ⟨h, g_b⟩ g_b`.
    pub fn apply_operator(&self, h: &Field) -> Result<Field> {
        let mut out = Field::zeros(&self.space);
        let scale = 1.0 / self.len() as f64;
        for g in &self.gradients {
            out.axpy(scale * inner_product(h, g)?, g)?;
        }
        Ok(out)
    }
}

/// Evaluates `f` and `∇f` at `B` draws from `measure`.
///
/// Sample `b` is drawn from the `(seed, b)` substream, so the result does not
/// depend on thread count and a larger `B` extends a smaller one. If the
/// functional fails, the offending input is written to the system temp
/// directory and its path is reported.
pub fn collect_gradients<F: Functional + ?Sized>(
    f: &F,
    measure: &GaussianMeasure,
    b: usize,
    seed: u64,
) -> Result<GradientSampleSet> {
    if b == 0 {
        return Err(Error::invalid("B", "must be at least 1"));
    }
    if !hilbert::same_space(f.space(), measure.space()) {
        return Err(Error::SpaceMismatch);
    }
    let results: Vec<Result<(Field, f64, Field)>> = (0..b)
        .into_par_iter()
        .map(|index| {
            let u = measure.sample_one(seed, index as u64);
            match f.value_and_gradient(&u) {
                Ok((value, grad)) => Ok((u, value, grad)),
                Err(source) => Err(sample_failure(index, seed, &u, source)),
            }
        })
        .collect();

    let mut inputs = Vec::with_capacity(b);
    let mut values = Vec::with_capacity(b);
    let mut gradients = Vec::with_capacity(b);
    for r in results {
        let (u, v, g) = r?;
        inputs.push(u);
        values.push(v);
        gradients.push(g);
    }
    GradientSampleSet::new(inputs, gradients, values, seed)
}

fn sample_failure(index: usize, seed: u64, u: &Field, source: Error) -> Error {
    let path: PathBuf = std::env::temp_dir().join(format!("asm-failed-sample-{seed}-{index}.json"));
    let saved = hilbert::write_field(&path, u).ok().map(|_| path);
    Error::SampleFailure {
        index,
        path: saved,
        source: Box::new(source),
    }
}

/// Columns `√w ⊙ g_b`, so that `⟨g_b, g_j⟩` is a plain dot product.
fn weighted_columns(samples: &GradientSampleSet) -> DMatrix<f64> {
    let w: Vec<f64> = samples.space.weights().iter().map(|w| w.sqrt()).collect();
    let n = w.len();
    DMatrix::from_fn(n, samples.len(), |k, b| w[k] * samples.gradients[b].values()[k])
}

/// `Γ[b, j] = ⟨g_b, g_j⟩ / B`, exactly symmetric.
pub fn gram_matrix(samples: &GradientSampleSet) -> DMatrix<f64> {
    let g = weighted_columns(samples);
    let mut gram = g.tr_mul(&g) / samples.len() as f64;
    symmetrize(&mut gram);
    gram
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetric eigendecomposition sorted by descending eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    if m.is_empty() {
        return (Vec::new(), m);
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// How the Gram eigenproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramSolver {
    /// Dense up to [`DENSE_GRAM_LIMIT`] samples, factored beyond.
    #[default]
    Auto,
    /// Form `Γ_B` and call a dense symmetric eigensolver.
    Dense,
    /// Factor `G = Q R` with `Q` orthonormal in the space, then solve the
    /// small problem `R Rᵀ / B`. `Γ_B = Rᵀ R / B` shares its nonzero
    /// spectrum, and `Γ_B` itself is never stored.
    Factored,
}

/// Eigenanalysis of the empirical operator.
#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    samples: Arc<GradientSampleSet>,
    gram: Option<DMatrix<f64>>,
    spectrum: Vec<f64>,
    eigenvalues: Vec<f64>,
    coeffs: DMatrix<f64>,
    eigenfunctions: Subspace,
    rank_tol: f64,
}

impl SubspaceEstimate {
    pub fn samples(&self) -> &GradientSampleSet {
        &self.samples
    }

    pub fn shared_samples(&self) -> &Arc<GradientSampleSet> {
        &self.samples
    }

    /// `Γ_B` when the dense solver was used.
    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }

    /// Every computed eigenvalue of `Γ_B`, descending, before truncation.
    /// With the factored solver, eigenvalues beyond the numerical rank of the
    /// gradient set are reported as zero.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Retained eigenvalues `σ₁ ≥ … ≥ σ_r > rank_tol · σ₁`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `B × r`; column `i` is `vᵢ / √σᵢ`.
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn eigenfunctions(&self) -> &Subspace {
        &self.eigenfunctions
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn space(&self) -> &Space {
        self.samples.space()
    }

    /// `Σᵢ σᵢ ⟨h, ŵᵢ⟩ ŵᵢ`.
    pub fn apply(&self, h: &Field) -> Result<Field> {
        let c = self.eigenfunctions.coefficients(h)?;
        let scaled: Vec<f64> = c.iter().zip(&self.eigenvalues).map(|(c, s)| c * s).collect();
        self.eigenfunctions.combine(&scaled)
    }

    /// The estimate as a finite-rank operator in eigen form.
    pub fn operator(&self) -> LowRankOperator {
        LowRankOperator::from_eigenpairs(&self.eigenvalues, self.eigenfunctions.basis())
    }

    /// `X[i, b] = ⟨g_b, ŵᵢ⟩`.
    pub fn sample_coordinates(&self) -> Result<DMatrix<f64>> {
        let r = self.rank();
        let mut x = DMatrix::zeros(r, self.samples.len());
        for (b, g) in self.samples.gradients.iter().enumerate() {
            for (i, w) in self.eigenfunctions.basis().iter().enumerate() {
                x[(i, b)] = inner_product(g, w)?;
            }
        }
        Ok(x)
    }
}

pub fn eigendecompose(samples: impl Into<Arc<GradientSampleSet>>, rank_tol: f64) -> Result<SubspaceEstimate> {
    eigendecompose_with(samples, rank_tol, GramSolver::Auto)
}

pub fn eigendecompose_with(
    samples: impl Into<Arc<GradientSampleSet>>,
    rank_tol: f64,
    solver: GramSolver,
) -> Result<SubspaceEstimate> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::invalid("rank_tol", "must lie in (0, 1)"));
    }
    let samples = samples.into();
    let dense = match solver {
        GramSolver::Auto => samples.len() <= DENSE_GRAM_LIMIT,
        GramSolver::Dense => true,
        GramSolver::Factored => false,
    };
    let parts = if dense {
        dense_route(&samples)?
    } else {
        factored_route(&samples)?
    };
    finish(samples, parts, rank_tol)
}

struct GramParts {
    gram: Option<DMatrix<f64>>,
    spectrum: Vec<f64>,
    /// Unit eigenvectors of `Γ_B`, one column per entry of `spectrum`
    /// (possibly fewer columns than `B` in the factored route).
    vectors: DMatrix<f64>,
    /// Eigenfunctions computed directly by the route, if any.
    functions: Option<Vec<Field>>,
}

fn dense_route(samples: &GradientSampleSet) -> Result<GramParts> {
    let gram = gram_matrix(samples);
    let (spectrum, vectors) = sorted_eigen(gram.clone());
    Ok(GramParts {
        gram: Some(gram),
        spectrum,
        vectors,
        functions: None,
    })
}

fn factored_route(samples: &GradientSampleSet) -> Result<GramParts> {
    let b = samples.len();
    let space = samples.space();
    let refs: Vec<&Field> = samples.gradients.iter().collect();
    let (q, coords) = operator::thin_factor(space, &refs)?;
    let rank = q.len();
    let r = DMatrix::from_fn(rank, b, |i, j| coords[j][i]);
    let mut small = &r * r.transpose() / b as f64;
    symmetrize(&mut small);
    let (values, u) = sorted_eigen(small);

    let mut vectors = DMatrix::zeros(b, rank);
    let mut functions = Vec::with_capacity(rank);
    for (i, sigma) in values.iter().enumerate() {
        let ui = u.column(i);
        let mut f = Field::zeros(space);
        for (qk, c) in q.iter().zip(ui.iter()) {
            f.axpy(*c, qk)?;
        }
        functions.push(f);
        if *sigma > 0.0 {
            let vi = r.transpose() * ui / (b as f64 * sigma).sqrt();
            vectors.set_column(i, &vi);
        }
    }
    let mut spectrum = values;
    spectrum.resize(b, 0.0);
    Ok(GramParts {
        gram: None,
        spectrum,
        vectors,
        functions: Some(functions),
    })
}

fn finish(samples: Arc<GradientSampleSet>, parts: GramParts, rank_tol: f64) -> Result<SubspaceEstimate> {
    let b = samples.len();
    let space = samples.space().clone();
    let top = parts.spectrum.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(min) = parts.spectrum.iter().copied().reduce(f64::min) {
        if top > 0.0 && min < -1e-10 * top {
            return Err(Error::Numerical(format!(
                "Gram matrix has eigenvalue {min:.3e} against leading {top:.3e}"
            )));
        }
    }
    let rank = if top > 0.0 {
        parts.spectrum.iter().take_while(|s| **s > rank_tol * top).count()
    } else {
        0
    };
    let eigenvalues = parts.spectrum[..rank].to_vec();

    let mut coeffs = DMatrix::zeros(b, rank);
    let mut functions = Vec::with_capacity(rank);
    for (i, sigma) in eigenvalues.iter().enumerate() {
        let mut v = parts.vectors.column(i).into_owned();
        // sign: largest-magnitude sample coefficient is positive
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (k, x)| if x.abs() > v[best].abs() { k } else { best });
        let flip = v[pivot] < 0.0;
        if flip {
            v.neg_mut();
        }
        let w = match &parts.functions {
            Some(fs) => {
                let mut f = fs[i].clone();
                if flip {
                    f.scale(-1.0);
                }
                f
            }
            None => {
                let mut f = Field::zeros(&space);
                let scale = 1.0 / (b as f64 * sigma).sqrt();
                for (g, c) in samples.gradients.iter().zip(v.iter()) {
                    f.axpy(scale * c, g)?;
                }
                f
            }
        };
        coeffs.set_column(i, &(v / sigma.sqrt()));
        functions.push(w);
    }

    // Trailing eigenvectors of Γ_B near the rank cutoff lose orthogonality
    // at rate ε·σ₁/σᵢ; one Gram–Schmidt sweep in eigenvalue order repairs
    // them without disturbing the leading ones.
    if hilbert::max_gram_deviation(&functions)? > hilbert::ORTHONORMAL_TOL {
        functions = reorthonormalize(functions)?;
    }
    Ok(SubspaceEstimate {
        samples,
        gram: parts.gram,
        spectrum: parts.spectrum,
        eigenvalues,
        coeffs,
        eigenfunctions: Subspace::from_trusted(&space, functions),
        rank_tol,
    })
}

fn reorthonormalize(functions: Vec<Field>) -> Result<Vec<Field>> {
    let w = functions[0].space().weights().to_vec();
    let mut out: Vec<Field> = Vec::with_capacity(functions.len());
    for mut f in functions {
        for _pass in 0..2 {
            for q in &out {
                let c = hilbert::dot_weighted(&w, f.values(), q.values());
                f.axpy(-c, q)?;
            }
        }
        let n = hilbert::norm(&f);
        f.scale(1.0 / n);
        out.push(f);
    }
    Ok(out)
}

/// `(1/B) Σ_b ⟨g_b, w⟩²` for a unit direction `w`.
pub fn directional_second_moment(estimate: &SubspaceEstimate, w: &Field) -> Result<f64> {
    let n = hilbert::norm(w);
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnit { norm: n });
    }
    let samples = estimate.samples();
    let mut acc = 0.0;
    for g in samples.gradients() {
        acc += inner_product(g, w)?.powi(2);
    }
    Ok(acc / samples.len() as f64)
}
