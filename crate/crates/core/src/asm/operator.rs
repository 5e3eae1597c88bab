use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{self, inner_product, Field, Space};

use super::{sorted_eigen, symmetrize, GradientSampleSet};

/// Finite-rank self-adjoint operator `Σₖ cₖ xₖ ⊗ xₖ`.
///
/// Distances and spectra are computed on the span of the `xₖ`: the vectors
/// are orthonormalized once and the operator becomes a small symmetric
/// matrix in that basis.
#[derive(Debug, Clone)]
pub struct LowRankOperator {
    terms: Vec<(f64, Field)>,
}

/// A [`LowRankOperator`] written in an orthonormal basis of its range.
#[derive(Debug, Clone)]
pub struct CompressedOperator {
    pub basis: Vec<Field>,
    pub matrix: DMatrix<f64>,
}

impl LowRankOperator {
    pub fn new(terms: Vec<(f64, Field)>) -> Self {
        Self { terms }
    }

    pub fn from_eigenpairs(values: &[f64], functions: &[Field]) -> Self {
        Self::new(values.iter().copied().zip(functions.iter().cloned()).collect())
    }

    /// `(1/B) Σ g_b ⊗ g_b`.
    pub fn from_gradients(samples: &GradientSampleSet) -> Self {
        let c = 1.0 / samples.len() as f64;
        Self::new(samples.gradients().iter().map(|g| (c, g.clone())).collect())
    }

    pub fn terms(&self) -> &[(f64, Field)] {
        &self.terms
    }

    pub fn apply(&self, h: &Field) -> Result<Field> {
        let space = self.space().ok_or(Error::EmptySubspace)?;
        let mut out = Field::zeros(space);
        for (c, x) in &self.terms {
            out.axpy(c * inner_product(h, x)?, x)?;
        }
        Ok(out)
    }

    fn space(&self) -> Option<&Space> {
        self.terms.first().map(|(_, x)| x.space())
    }

    /// `self − other` as a single term list.
    pub fn difference(&self, other: &LowRankOperator) -> LowRankOperator {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|(c, x)| (-c, x.clone())));
        LowRankOperator::new(terms)
    }

    pub fn compress(&self) -> Result<CompressedOperator> {
        let Some(space) = self.space() else {
            return Ok(CompressedOperator {
                basis: Vec::new(),
                matrix: DMatrix::zeros(0, 0),
            });
        };
        let fields: Vec<&Field> = self.terms.iter().map(|(_, x)| x).collect();
        let (basis, coords) = thin_factor(space, &fields)?;
        let r = basis.len();
        let mut matrix = DMatrix::zeros(r, r);
        for ((c, _), x) in self.terms.iter().zip(&coords) {
            for i in 0..x.len() {
                for j in 0..x.len() {
                    matrix[(i, j)] += c * x[i] * x[j];
                }
            }
        }
        symmetrize(&mut matrix);
        Ok(CompressedOperator { basis, matrix })
    }

    /// Nonzero-range eigenvalues, descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let c = self.compress()?;
        if c.basis.is_empty() {
            return Ok(Vec::new());
        }
        Ok(sorted_eigen(c.matrix).0)
    }

    /// `‖self‖_op`, the largest absolute eigenvalue.
    pub fn operator_norm(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// `‖self − other‖_op` computed on the joint span.
    pub fn distance(&self, other: &LowRankOperator) -> Result<f64> {
        self.difference(other).operator_norm()
    }
}

/// Orthonormal basis of `span(fields)` and each field's coordinates in it.
///
/// Coordinates vectors have the basis length at the time the field was
/// processed; trailing entries are implicitly zero.
pub(crate) fn thin_factor(space: &Space, fields: &[&Field]) -> Result<(Vec<Field>, Vec<Vec<f64>>)> {
    let w = space.weights();
    let max_norm = fields.iter().map(|f| hilbert::norm(f)).fold(0.0, f64::max);
    let cutoff = hilbert::DEFLATION_TOL * max_norm;
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut coords = Vec::with_capacity(fields.len());
    for f in fields {
        if !hilbert::same_space(space, f.space()) {
            return Err(Error::SpaceMismatch);
        }
        let mut v = f.values().to_vec();
        let mut col = vec![0.0; q.len()];
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = hilbert::dot_weighted(w, &v, qi);
                col[i] += c;
                v.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nv = hilbert::dot_weighted(w, &v, &v).sqrt();
        if max_norm > 0.0 && nv > cutoff {
            v.iter_mut().for_each(|x| *x /= nv);
            q.push(v);
            col.push(nv);
        }
        coords.push(col);
    }
    let r = q.len();
    for c in &mut coords {
        c.resize(r, 0.0);
    }
    let basis = q
        .into_iter()
        .map(|v| Field::from_values(space, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((basis, coords))
}
