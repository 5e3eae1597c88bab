//! Discretized L² space on a rectangle.
//!
//! Fields are nodal values on a tensor grid, stored row-major with `y` as the
//! outer index. The inner product is the tensor-product trapezoid rule, so
//! `⟨u, v⟩ = Σₖ wₖ uₖ vₖ` approximates `∫ u v dx` to second order.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a basis is orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative norm below which a deflated vector counts as dependent.
pub const DEFLATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSpace {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    origin: [f64; 2],
    weights: Vec<f64>,
}

impl FunctionSpace {
    /// Tensor grid with trapezoid quadrature weights.
    pub fn trapezoid(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(
                "grid",
                format!("need at least 2 nodes per axis, got {nx}x{ny}"),
            ));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(Error::invalid("spacing", format!("hx={hx}, hy={hy} must be positive")));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(Error::invalid("origin", "must be finite"));
        }
        let edge = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut weights = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                weights.push(hx * hy * edge(i, nx) * edge(j, ny));
            }
        }
        Ok(Self {
            nx,
            ny,
            hx,
            hy,
            origin,
            weights,
        })
    }

    /// `nx × ny` nodes covering the closed unit square.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(
                "grid",
                format!("need at least 2 nodes per axis, got {nx}x{ny}"),
            ));
        }
        Self::trapezoid(nx, ny, 1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64, [0.0, 0.0])
    }

    /// Same geometry with caller-supplied weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::invalid("weights", "at least one weight must be positive"));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical coordinates of node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin[0] + i as f64 * self.hx, self.origin[1] + j as f64 * self.hy)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Whether node `k` lies on the boundary of the rectangle.
    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = (k % self.nx, k / self.nx);
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Area covered by the quadrature rule.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Shared handle to a function space.
pub type Space = Arc<FunctionSpace>;

pub(crate) fn same_space(a: &Space, b: &Space) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// An element of the discretized space.
#[derive(Debug, Clone)]
pub struct Field {
    space: Space,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: &Space) -> Self {
        Self {
            space: space.clone(),
            values: vec![0.0; space.len()],
        }
    }

    pub fn constant(space: &Space, c: f64) -> Self {
        Self {
            space: space.clone(),
            values: vec![c; space.len()],
        }
    }

    pub fn from_values(space: &Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::LengthMismatch {
                expected: space.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            space: space.clone(),
            values,
        })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(space: &Space, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(space.len());
        for j in 0..space.ny() {
            for i in 0..space.nx() {
                let (x, y) = space.node(i, j);
                values.push(f(x, y));
            }
        }
        Self {
            space: space.clone(),
            values,
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if same_space(&self.space, &other.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) -> Result<()> {
        self.check_same(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Weighted inner product `Σₖ wₖ uₖ vₖ`.
pub fn inner_product(u: &Field, v: &Field) -> Result<f64> {
    u.check_same(v)?;
    Ok(dot_weighted(u.space.weights(), &u.values, &v.values))
}

pub fn norm(u: &Field) -> f64 {
    dot_weighted(u.space.weights(), &u.values, &u.values).sqrt()
}

#[inline]
pub(crate) fn dot_weighted(w: &[f64], u: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(u).zip(v).map(|((w, u), v)| w * (u * v)).sum()
}

/// Converts Euclidean derivative coefficients `∂f/∂uₖ` into the gradient
/// with respect to the weighted inner product.
pub fn riesz_map(space: &Space, dual_coeffs: &[f64]) -> Result<Field> {
    if dual_coeffs.len() != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            got: dual_coeffs.len(),
        });
    }
    let mut values = Vec::with_capacity(space.len());
    for (k, (d, w)) in dual_coeffs.iter().zip(space.weights()).enumerate() {
        if *w > 0.0 {
            values.push(d / w);
        } else if *d == 0.0 {
            values.push(0.0);
        } else {
            return Err(Error::SingularRiesz { node: k });
        }
    }
    Field::from_values(space, values)
}

/// A finite span of fields.
#[derive(Debug, Clone)]
pub struct Subspace {
    space: Space,
    basis: Vec<Field>,
    orthonormal: bool,
}

impl Subspace {
    /// Wraps `basis` as-is, flagging it orthonormal only if it passes the
    /// Gram check.
    pub fn new(space: &Space, basis: Vec<Field>) -> Result<Self> {
        for b in &basis {
            if !same_space(space, b.space()) {
                return Err(Error::SpaceMismatch);
            }
        }
        let orthonormal = max_gram_deviation(&basis)? <= ORTHONORMAL_TOL;
        Ok(Self {
            space: space.clone(),
            basis,
            orthonormal,
        })
    }

    /// Like [`Subspace::new`] but fails unless the basis is orthonormal.
    pub fn orthonormal(space: &Space, basis: Vec<Field>) -> Result<Self> {
        let sub = Self::new(space, basis)?;
        if !sub.orthonormal {
            return Err(Error::NotOrthonormal {
                max_deviation: max_gram_deviation(&sub.basis)?,
            });
        }
        Ok(sub)
    }

    pub(crate) fn from_trusted(space: &Space, basis: Vec<Field>) -> Self {
        Self {
            space: space.clone(),
            basis,
            orthonormal: true,
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn basis(&self) -> &[Field] {
        &self.basis
    }

    pub fn into_basis(self) -> Vec<Field> {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Leading `n` basis elements.
    pub fn truncate(&self, n: usize) -> Subspace {
        Subspace {
            space: self.space.clone(),
            basis: self.basis.iter().take(n).cloned().collect(),
            orthonormal: self.orthonormal,
        }
    }

    /// Coordinates `⟨u, wᵢ⟩`.
    pub fn coefficients(&self, u: &Field) -> Result<Vec<f64>> {
        self.basis.iter().map(|w| inner_product(u, w)).collect()
    }

    /// `Σᵢ cᵢ wᵢ`.
    pub fn combine(&self, coeffs: &[f64]) -> Result<Field> {
        if coeffs.len() != self.basis.len() {
            return Err(Error::LengthMismatch {
                expected: self.basis.len(),
                got: coeffs.len(),
            });
        }
        let mut out = Field::zeros(&self.space);
        for (c, w) in coeffs.iter().zip(&self.basis) {
            out.axpy(*c, w)?;
        }
        Ok(out)
    }

    fn require_orthonormal(&self) -> Result<()> {
        if self.orthonormal {
            Ok(())
        } else {
            Err(Error::NotOrthonormal {
                max_deviation: max_gram_deviation(&self.basis)?,
            })
        }
    }
}

/// Largest entry of `|⟨wᵢ, wⱼ⟩ − δᵢⱼ|`.
pub fn max_gram_deviation(basis: &[Field]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((inner_product(a, b)? - target).abs());
        }
    }
    Ok(worst)
}

/// Orthogonal projection of `u` onto `sub`.
pub fn project(u: &Field, sub: &Subspace) -> Result<Field> {
    sub.require_orthonormal()?;
    if !same_space(u.space(), sub.space()) {
        return Err(Error::SpaceMismatch);
    }
    let coeffs = sub.coefficients(u)?;
    sub.combine(&coeffs)
}

/// Result of Gram–Schmidt: the orthonormal span plus how many inputs were
/// discarded as linearly dependent.
#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub subspace: Subspace,
    pub dropped: usize,
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
///
/// Vectors whose deflated norm falls below `1e-12 · max input norm` are
/// dropped and counted.
pub fn orthonormalize(basis: &[Field]) -> Result<Orthonormalized> {
    let first = basis.first().ok_or(Error::EmptySubspace)?;
    let space = first.space().clone();
    for b in basis {
        if !same_space(&space, b.space()) {
            return Err(Error::SpaceMismatch);
        }
    }
    let max_norm = basis.iter().map(norm).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(Error::EmptySubspace);
    }
    let cutoff = DEFLATION_TOL * max_norm;
    let w = space.weights();
    let mut out: Vec<Field> = Vec::new();
    let mut dropped = 0;
    for b in basis {
        let mut v = b.values.clone();
        for _pass in 0..2 {
            for q in &out {
                let c = dot_weighted(w, &v, &q.values);
                for (vi, qi) in v.iter_mut().zip(&q.values) {
                    *vi -= c * qi;
                }
            }
        }
        let nv = dot_weighted(w, &v, &v).sqrt();
        if nv <= cutoff {
            dropped += 1;
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        out.push(Field {
            space: space.clone(),
            values: v,
        });
    }
    Ok(Orthonormalized {
        subspace: Subspace::from_trusted(&space, out),
        dropped,
    })
}

/// On-disk representation of a field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldFile {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
    pub values: Vec<f64>,
}

/// Grid header shared by the field and estimate file formats.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpaceHeader {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
}

impl SpaceHeader {
    pub fn of(space: &FunctionSpace) -> Self {
        Self {
            nx: space.nx(),
            ny: space.ny(),
            hx: space.hx(),
            hy: space.hy(),
            origin: space.origin(),
        }
    }

    pub fn build(&self) -> Result<FunctionSpace> {
        FunctionSpace::trapezoid(self.nx, self.ny, self.hx, self.hy, self.origin)
    }
}

impl FieldFile {
    pub fn from_field(u: &Field) -> Self {
        let s = u.space();
        Self {
            nx: s.nx(),
            ny: s.ny(),
            hx: s.hx(),
            hy: s.hy(),
            origin: s.origin(),
            values: u.values.clone(),
        }
    }

    fn header(&self) -> SpaceHeader {
        SpaceHeader {
            nx: self.nx,
            ny: self.ny,
            hx: self.hx,
            hy: self.hy,
            origin: self.origin,
        }
    }

    /// Builds the field on a fresh trapezoid space.
    pub fn into_field(self) -> Result<Field> {
        let space = Arc::new(self.header().build()?);
        Field::from_values(&space, self.values)
    }

    /// Builds the field on `space`, which must match the file's grid.
    pub fn into_field_on(self, space: &Space) -> Result<Field> {
        if self.header() != SpaceHeader::of(space) {
            return Err(Error::SpaceMismatch);
        }
        Field::from_values(space, self.values)
    }
}

pub fn read_field(path: &Path, space: &Space) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let file: FieldFile = serde_json::from_str(&text)?;
    file.into_field_on(space)
}

pub fn write_field(path: &Path, u: &Field) -> Result<()> {
    let text = serde_json::to_string(&FieldFile::from_field(u))?;
    std::fs::write(path, text)?;
    Ok(())
}
