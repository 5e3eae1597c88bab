//! The square-root warp `v = 𝒞̂^{1/2} u`.
//!
//! In warped coordinates every retained active direction carries unit
//! average sensitivity: the active subspace operator of
//! `f̃(v) = f(𝒞̂^{+1/2} v + P_⊥ u)` is the projector onto the retained range.

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::hilbert::{self, Field, Space, Subspace};
use crate::randfield::GaussianMeasure;

use super::{GradientSampleSet, SubspaceEstimate};

#[derive(Debug, Clone)]
pub struct WarpOperator {
    basis: Subspace,
    sqrt_values: Vec<f64>,
    /// Retained eigenpairs left out of the pseudo-inverse.
    excluded: usize,
}

/// Builds `Σ √σᵢ ŵᵢ ⊗ ŵᵢ` from an estimate. Eigenvalues at or below
/// `rank_tol · σ₁` are excluded from both the map and its pseudo-inverse;
/// the count is available via [`WarpOperator::excluded`].
pub fn warp_operator(estimate: &SubspaceEstimate, rank_tol: f64) -> Result<WarpOperator> {
    if estimate.rank() == 0 {
        return Err(Error::RankTooSmall {
            requested: 1,
            available: 0,
        });
    }
    let top = estimate.eigenvalues()[0];
    let keep = estimate
        .eigenvalues()
        .iter()
        .take_while(|s| **s > rank_tol * top)
        .count();
    Ok(WarpOperator {
        basis: estimate.eigenfunctions().truncate(keep),
        sqrt_values: estimate.eigenvalues()[..keep].iter().map(|s| s.sqrt()).collect(),
        excluded: estimate.rank() - keep,
    })
}

impl WarpOperator {
    pub fn basis(&self) -> &Subspace {
        &self.basis
    }

    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn dim(&self) -> usize {
        self.sqrt_values.len()
    }

    fn scaled(&self, u: &Field, scale: impl Fn(f64) -> f64) -> Result<Field> {
        let c = self.basis.coefficients(u)?;
        let s: Vec<f64> = c.iter().zip(&self.sqrt_values).map(|(c, r)| c * scale(*r)).collect();
        self.basis.combine(&s)
    }

    /// `Σ √σᵢ ⟨u, ŵᵢ⟩ ŵᵢ`
    pub fn apply(&self, u: &Field) -> Result<Field> {
        self.scaled(u, |r| r)
    }

    /// `Σ ⟨v, ŵᵢ⟩ ŵᵢ / √σᵢ`
    pub fn apply_pinv(&self, v: &Field) -> Result<Field> {
        self.scaled(v, |r| 1.0 / r)
    }

    /// Component of `u` orthogonal to the retained range.
    pub fn complement(&self, u: &Field) -> Result<Field> {
        u.sub(&hilbert::project(u, &self.basis)?)
    }

    /// Warped version of `f` around the inactive part of `reference`.
    pub fn warp<'a, F: Functional + ?Sized>(&'a self, f: &'a F, reference: &Field) -> Result<WarpedFunctional<'a, F>> {
        Ok(WarpedFunctional {
            f,
            warp: self,
            inactive: self.complement(reference)?,
        })
    }

    /// Gradient samples of the warped functional: for `U_b ∼ ρ`, the input is
    /// `V_b = 𝒞̂^{1/2} U_b` and the gradient is that of `f̃` built around
    /// `U_b`'s own inactive component, so `f̃(V_b) = f(U_b)`.
    pub fn collect_warped_gradients<F: Functional + ?Sized>(
        &self,
        f: &F,
        measure: &GaussianMeasure,
        b: usize,
        seed: u64,
    ) -> Result<GradientSampleSet> {
        let raw = super::collect_gradients(f, measure, b, seed)?;
        let mut inputs = Vec::with_capacity(b);
        let mut gradients = Vec::with_capacity(b);
        for (u, g) in raw.inputs().iter().zip(raw.gradients()) {
            inputs.push(self.apply(u)?);
            gradients.push(self.apply_pinv(g)?);
        }
        GradientSampleSet::new(inputs, gradients, raw.values().to_vec(), seed)
    }
}

/// `f̃(v) = f(𝒞̂^{+1/2} v + z)` for a fixed inactive component `z`.
pub struct WarpedFunctional<'a, F: ?Sized> {
    f: &'a F,
    warp: &'a WarpOperator,
    inactive: Field,
}

impl<F: Functional + ?Sized> WarpedFunctional<'_, F> {
    fn unwarp(&self, v: &Field) -> Result<Field> {
        self.warp.apply_pinv(v)?.add(&self.inactive)
    }
}

impl<F: Functional + ?Sized> Functional for WarpedFunctional<'_, F> {
    fn space(&self) -> &Space {
        self.f.space()
    }

    fn evaluate(&self, v: &Field) -> Result<f64> {
        self.f.evaluate(&self.unwarp(v)?)
    }

    fn gradient(&self, v: &Field) -> Result<Field> {
        // the pseudo-inverse is self-adjoint
        self.warp.apply_pinv(&self.f.gradient(&self.unwarp(v)?)?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::asm::{collect_gradients, eigendecompose, DEFAULT_RANK_TOL};
    use crate::functionals::{check_gradient, quadratic_functional};
    use crate::hilbert::{norm, FunctionSpace};
    use crate::randfield::separable_sine_measure;

    fn setup() -> (GaussianMeasure, crate::functionals::QuadraticFunctional) {
        let s = Arc::new(FunctionSpace::unit_square(17, 17).unwrap());
        let m = separable_sine_measure(&s, 4, 2.0, 1.0).unwrap();
        let f = quadratic_functional(
            m.kl_functions().basis()[..3]
                .iter()
                .cloned()
                .zip([4.0, 3.0, 2.0])
                .collect(),
        )
        .unwrap();
        (m, f)
    }

    #[test]
    fn square_root_identities() {
        let (m, f) = setup();
        let est = eigendecompose(collect_gradients(&f, &m, 50, 1).unwrap(), DEFAULT_RANK_TOL).unwrap();
        let warp = warp_operator(&est, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(warp.dim(), 3);
        assert_eq!(warp.excluded(), 0);
        for u in m.sample(5, 2) {
            let twice = warp.apply(&warp.apply(&u).unwrap()).unwrap();
            let direct = est.apply(&u).unwrap();
            assert!(norm(&twice.sub(&direct).unwrap()) <= 1e-9 * norm(&direct));

            let pu = hilbert::project(&u, warp.basis()).unwrap();
            let back = warp.apply_pinv(&warp.apply(&pu).unwrap()).unwrap();
            assert!(norm(&back.sub(&pu).unwrap()) <= 1e-9 * norm(&pu));
        }
    }

    #[test]
    fn excluded_eigenvalues_are_reported() {
        let (m, f) = setup();
        let est = eigendecompose(collect_gradients(&f, &m, 50, 1).unwrap(), DEFAULT_RANK_TOL).unwrap();
        let ratio = est.eigenvalues()[2] / est.eigenvalues()[0];
        let warp = warp_operator(&est, ratio * 1.0001).unwrap();
        assert_eq!(warp.dim(), 2);
        assert_eq!(warp.excluded(), 1);
    }

    #[test]
    fn warped_functional_gradient_is_consistent() {
        let (m, f) = setup();
        let est = eigendecompose(collect_gradients(&f, &m, 50, 1).unwrap(), DEFAULT_RANK_TOL).unwrap();
        let warp = warp_operator(&est, DEFAULT_RANK_TOL).unwrap();
        let u = m.sample_one(3, 0);
        let wf = warp.warp(&f, &u).unwrap();
        let v = warp.apply(&u).unwrap();
        assert!((wf.evaluate(&v).unwrap() - f.evaluate(&u).unwrap()).abs() < 1e-12);
        let dirs: Vec<Field> = m
            .sample(6, 4)
            .iter()
            .map(|h| hilbert::project(h, warp.basis()).unwrap())
            .collect();
        assert!(check_gradient(&wf, &v, &dirs, 1e-5).unwrap().max_error < 1e-7);
    }
}
