//! Real-valued functionals with exact gradients.

mod poisson;

pub use poisson::{poisson_control, PoissonControl, PoissonControlProblem, DEFAULT_ALPHA, DEFAULT_SOLVER_TOL};

use nalgebra::DMatrix;

use crate::asm::LowRankOperator;
use crate::error::{Error, Result};
use crate::hilbert::{self, inner_product, Field, Space, Subspace};
use crate::randfield::GaussianMeasure;

/// `f: H → ℝ` with its Riesz gradient.
///
/// Implementations must be reentrant: the Monte Carlo loop evaluates them
/// from several threads at once.
pub trait Functional: Send + Sync {
    fn space(&self) -> &Space;

    fn evaluate(&self, u: &Field) -> Result<f64>;

    /// The representer `∇f(u)` with `Df(u)[h] = ⟨h, ∇f(u)⟩`.
    fn gradient(&self, u: &Field) -> Result<Field>;

    fn value_and_gradient(&self, u: &Field) -> Result<(f64, Field)> {
        Ok((self.evaluate(u)?, self.gradient(u)?))
    }
}

impl<F: Functional + ?Sized> Functional for Box<F> {
    fn space(&self) -> &Space {
        (**self).space()
    }

    fn evaluate(&self, u: &Field) -> Result<f64> {
        (**self).evaluate(u)
    }

    fn gradient(&self, u: &Field) -> Result<Field> {
        (**self).gradient(u)
    }

    fn value_and_gradient(&self, u: &Field) -> Result<(f64, Field)> {
        (**self).value_and_gradient(u)
    }
}

impl<F: Functional + ?Sized> Functional for std::sync::Arc<F> {
    fn space(&self) -> &Space {
        (**self).space()
    }

    fn evaluate(&self, u: &Field) -> Result<f64> {
        (**self).evaluate(u)
    }

    fn gradient(&self, u: &Field) -> Result<Field> {
        (**self).gradient(u)
    }

    fn value_and_gradient(&self, u: &Field) -> Result<(f64, Field)> {
        (**self).value_and_gradient(u)
    }
}

/// `f(u) = ⟨u, h₁⟩ + ⟨u, h₂⟩`.
#[derive(Debug, Clone)]
pub struct LinearFunctional {
    h1: Field,
    h2: Field,
    sum: Field,
}

pub fn linear_functional(h1: Field, h2: Field) -> Result<LinearFunctional> {
    let sum = h1.add(&h2)?;
    Ok(LinearFunctional { h1, h2, sum })
}

impl LinearFunctional {
    /// `(h₁ + h₂) ⊗ (h₁ + h₂)`, whatever the input measure.
    pub fn exact_operator(&self) -> LowRankOperator {
        LowRankOperator::new(vec![(1.0, self.sum.clone())])
    }

    pub fn h1(&self) -> &Field {
        &self.h1
    }

    pub fn h2(&self) -> &Field {
        &self.h2
    }
}

impl Functional for LinearFunctional {
    fn space(&self) -> &Space {
        self.sum.space()
    }

    fn evaluate(&self, u: &Field) -> Result<f64> {
        Ok(inner_product(u, &self.h1)? + inner_product(u, &self.h2)?)
    }

    fn gradient(&self, u: &Field) -> Result<Field> {
        if !hilbert::same_space(u.space(), self.space()) {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.sum.clone())
    }
}

/// `f(u) = ½ Σⱼ aⱼ ⟨u, φⱼ⟩²` over an orthonormal set `φⱼ`.
#[derive(Debug, Clone)]
pub struct QuadraticFunctional {
    basis: Subspace,
    coeffs: Vec<f64>,
}

pub fn quadratic_functional(pairs: Vec<(Field, f64)>) -> Result<QuadraticFunctional> {
    let space = pairs.first().ok_or(Error::EmptySubspace)?.0.space().clone();
    let (fields, coeffs): (Vec<Field>, Vec<f64>) = pairs.into_iter().unzip();
    let basis = Subspace::orthonormal(&space, fields)?;
    Ok(QuadraticFunctional { basis, coeffs })
}

impl QuadraticFunctional {
    pub fn basis(&self) -> &Subspace {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `E[∇f(U) ⊗ ∇f(U)]` under `measure`, in closed form.
    ///
    /// With `M = aᵢ aⱼ E[⟨U, φᵢ⟩⟨U, φⱼ⟩]` the operator is `Σᵢⱼ Mᵢⱼ φᵢ ⊗ φⱼ`;
    /// its eigenpairs come from the small matrix `M`.
    pub fn exact_operator(&self, measure: &GaussianMeasure) -> Result<LowRankOperator> {
        let phi = self.basis.basis();
        let r = phi.len();
        let modes = measure.kl_functions().basis();
        let proj: Vec<Vec<f64>> = phi
            .iter()
            .map(|p| modes.iter().map(|m| inner_product(p, m)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let mean: Vec<f64> = phi
            .iter()
            .map(|p| inner_product(p, measure.mean()))
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..=i {
                let cov: f64 = measure
                    .kl_values()
                    .iter()
                    .enumerate()
                    .map(|(k, l)| l * proj[i][k] * proj[j][k])
                    .sum();
                let v = self.coeffs[i] * self.coeffs[j] * (cov + mean[i] * mean[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let eig = m.symmetric_eigen();
        let functions: Vec<Field> = (0..r)
            .map(|k| self.basis.combine(eig.eigenvectors.column(k).as_slice()))
            .collect::<Result<_>>()?;
        Ok(LowRankOperator::from_eigenpairs(eig.eigenvalues.as_slice(), &functions))
    }
}

impl Functional for QuadraticFunctional {
    fn space(&self) -> &Space {
        self.basis.space()
    }

    fn evaluate(&self, u: &Field) -> Result<f64> {
        let c = self.basis.coefficients(u)?;
        Ok(0.5 * c.iter().zip(&self.coeffs).map(|(c, a)| a * c * c).sum::<f64>())
    }

    fn gradient(&self, u: &Field) -> Result<Field> {
        let c = self.basis.coefficients(u)?;
        let weighted: Vec<f64> = c.iter().zip(&self.coeffs).map(|(c, a)| a * c).collect();
        self.basis.combine(&weighted)
    }
}

/// Scalar map on the reduced coordinates of a ridge functional.
pub trait RidgeProfile: Send + Sync {
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
}

/// Built-in ridge profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `Σ yᵢ`
    Sum,
    /// `½ Σ yᵢ²`
    HalfSquares,
    /// `Σ sin(zᵢ) + ½ (Σ zᵢ)²` with `z = scale · y`.
    SineQuadratic { scale: f64 },
}

impl RidgeProfile for Profile {
    fn value(&self, y: &[f64]) -> f64 {
        match self {
            Profile::Sum => y.iter().sum(),
            Profile::HalfSquares => 0.5 * y.iter().map(|v| v * v).sum::<f64>(),
            Profile::SineQuadratic { scale } => {
                let s: f64 = y.iter().map(|v| scale * v).sum();
                y.iter().map(|v| (scale * v).sin()).sum::<f64>() + 0.5 * s * s
            }
        }
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Profile::Sum => vec![1.0; y.len()],
            Profile::HalfSquares => y.to_vec(),
            Profile::SineQuadratic { scale } => {
                let s: f64 = y.iter().map(|v| scale * v).sum();
                y.iter().map(|v| scale * ((scale * v).cos() + s)).collect()
            }
        }
    }
}

/// `f(u) = profile(⟨u, w₁⟩, …, ⟨u, wₙ⟩)`.
pub struct RidgeFunctional<P> {
    basis: Subspace,
    profile: P,
}

pub fn ridge_functional<P: RidgeProfile>(basis: Subspace, profile: P) -> Result<RidgeFunctional<P>> {
    if !basis.is_orthonormal() {
        return Err(Error::NotOrthonormal {
            max_deviation: hilbert::max_gram_deviation(basis.basis())?,
        });
    }
    if basis.dim() == 0 {
        return Err(Error::EmptySubspace);
    }
    Ok(RidgeFunctional { basis, profile })
}

impl<P> RidgeFunctional<P> {
    pub fn basis(&self) -> &Subspace {
        &self.basis
    }

    pub fn profile(&self) -> &P {
        &self.profile
    }
}

impl<P: RidgeProfile> Functional for RidgeFunctional<P> {
    fn space(&self) -> &Space {
        self.basis.space()
    }

    fn evaluate(&self, u: &Field) -> Result<f64> {
        Ok(self.profile.value(&self.basis.coefficients(u)?))
    }

    fn gradient(&self, u: &Field) -> Result<Field> {
        let y = self.basis.coefficients(u)?;
        self.basis.combine(&self.profile.gradient(&y))
    }
}

/// Outcome of comparing `⟨h, ∇f(u)⟩` with central differences.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub finite_difference: Vec<f64>,
    pub directional: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_error: f64,
}

pub fn check_gradient<F: Functional + ?Sized>(
    f: &F,
    u: &Field,
    directions: &[Field],
    step: f64,
) -> Result<GradientReport> {
    if !(step > 0.0) {
        return Err(Error::invalid("step", "must be positive"));
    }
    let grad = f.gradient(u)?;
    let mut report = GradientReport {
        finite_difference: Vec::with_capacity(directions.len()),
        directional: Vec::with_capacity(directions.len()),
        relative_errors: Vec::with_capacity(directions.len()),
        max_error: 0.0,
    };
    for h in directions {
        let mut plus = u.clone();
        plus.axpy(step, h)?;
        let mut minus = u.clone();
        minus.axpy(-step, h)?;
        let fd = (f.evaluate(&plus)? - f.evaluate(&minus)?) / (2.0 * step);
        let exact = inner_product(h, &grad)?;
        let err = (fd - exact).abs() / (exact.abs() + 1e-12);
        report.max_error = report.max_error.max(err);
        report.finite_difference.push(fd);
        report.directional.push(exact);
        report.relative_errors.push(err);
    }
    Ok(report)
}
