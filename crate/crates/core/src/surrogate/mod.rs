//! Models built on active subspace coordinates: projection distance, nearest
//! neighbor regression with leave-one-out cross-validation, and a Gaussian
//! process surface over the two leading coordinates.

mod gp;

pub use gp::{GaussianProcess, Hyperparameters, JITTER};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv;
use crate::error::{Error, Result};
use crate::hilbert::{Field, Subspace};

/// `‖P_A(u₁ − u₂)‖`, computed as the distance between coefficient vectors.
pub fn as_distance(u1: &Field, u2: &Field, a: &Subspace) -> Result<f64> {
    let c1 = a.coefficients(u1)?;
    let c2 = a.coefficients(u2)?;
    Ok(squared_distance(&c1, &c2).sqrt())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Where a dataset came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub b: usize,
    pub functional: String,
}

/// Inputs reduced to their coordinates `⟨uⱼ, ŵᵢ⟩` on a subspace.
#[derive(Debug, Clone)]
pub struct ReducedDataset {
    coords: Vec<Vec<f64>>,
    values: Vec<f64>,
    basis: Subspace,
    source: Provenance,
}

impl ReducedDataset {
    pub fn project(inputs: &[Field], values: Vec<f64>, basis: Subspace, source: Provenance) -> Result<Self> {
        if inputs.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.len(),
                got: values.len(),
            });
        }
        let coords = inputs.iter().map(|u| basis.coefficients(u)).collect::<Result<_>>()?;
        Ok(Self {
            coords,
            values,
            basis,
            source,
        })
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn basis(&self) -> &Subspace {
        &self.basis
    }

    pub fn source(&self) -> &Provenance {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Keeps the leading `n` coordinates.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n > self.dim() {
            return Err(Error::RankTooSmall {
                requested: n,
                available: self.dim(),
            });
        }
        Ok(Self {
            coords: self.coords.iter().map(|c| c[..n].to_vec()).collect(),
            values: self.values.clone(),
            basis: self.basis.truncate(n),
            source: self.source.clone(),
        })
    }

    /// Writes `x1,…,xn,f`.
    pub fn write_scatter_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("f".into());
        let rows = self.coords.iter().zip(&self.values).map(|(c, v)| {
            let mut row = c.clone();
            row.push(*v);
            csv::join(&row)
        });
        csv::write(path, &header.join(","), rows)
    }
}

/// Distance used by the nearest neighbor regressor.
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    /// The discrete L² norm of the full difference.
    FullL2,
    /// `as_distance` on the given orthonormal subspace.
    ActiveSubspace(&'a Subspace),
}

/// Nearest neighbor regression on points embedded so that the metric is
/// Euclidean. Ties in distance go to the lower training index.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn embed(u: &Field, metric: Metric<'_>) -> Result<Vec<f64>> {
    match metric {
        Metric::FullL2 => Ok(u
            .values()
            .iter()
            .zip(u.space().weights())
            .map(|(v, w)| v * w.sqrt())
            .collect()),
        Metric::ActiveSubspace(a) => a.coefficients(u),
    }
}

impl KnnRegressor {
    pub fn from_fields(inputs: &[Field], values: Vec<f64>, metric: Metric<'_>) -> Result<Self> {
        let points = inputs.iter().map(|u| embed(u, metric)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = inputs.first() {
            for u in inputs {
                if !crate::hilbert::same_space(u.space(), first.space()) {
                    return Err(Error::SpaceMismatch);
                }
            }
        }
        Self::from_coords(points, values)
    }

    pub fn from_dataset(data: &ReducedDataset) -> Result<Self> {
        Self::from_coords(data.coords.clone(), data.values.clone())
    }

    pub fn from_coords(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: values.len(),
            });
        }
        if let Some(first) = points.first() {
            if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    got: p.len(),
                });
            }
        }
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Training indices sorted by distance to `q`, skipping `exclude`.
    fn ranked(&self, q: &[f64], exclude: Option<usize>) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| (squared_distance(p, q), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Mean of the `k` nearest training values to an embedded query.
    pub fn predict_coords(&self, q: &[f64], k: usize) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if k == 0 || k > self.len() {
            return Err(Error::invalid("K", format!("must be in 1..={}, got {k}", self.len())));
        }
        if q.len() != self.points[0].len() {
            return Err(Error::LengthMismatch {
                expected: self.points[0].len(),
                got: q.len(),
            });
        }
        let idx = self.ranked(q, None);
        Ok(idx[..k].iter().map(|&i| self.values[i]).sum::<f64>() / k as f64)
    }

    /// Leave-one-out mean squared error for each `K` in `k_range`.
    pub fn loo_cv(&self, k_range: &[usize]) -> Result<Vec<f64>> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let k_max = k_range.iter().copied().max().unwrap_or(0);
        if k_range.contains(&0) || k_max + 1 > n {
            return Err(Error::invalid("K_range", format!("entries must be in 1..={}", n - 1)));
        }
        let per_point: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let idx = self.ranked(&self.points[j], Some(j));
                let mut cum = Vec::with_capacity(k_max + 1);
                cum.push(0.0);
                for &i in &idx[..k_max] {
                    cum.push(cum.last().unwrap() + self.values[i]);
                }
                k_range
                    .iter()
                    .map(|&k| (self.values[j] - cum[k] / k as f64).powi(2))
                    .collect()
            })
            .collect();
        Ok((0..k_range.len())
            .map(|t| per_point.iter().map(|e| e[t]).sum::<f64>() / n as f64)
            .collect())
    }
}

/// `K`-nearest-neighbor prediction at a field.
pub fn knn_predict(inputs: &[Field], values: &[f64], query: &Field, k: usize, metric: Metric<'_>) -> Result<f64> {
    let knn = KnnRegressor::from_fields(inputs, values.to_vec(), metric)?;
    knn.predict_coords(&embed(query, metric)?, k)
}

pub fn loo_cv(inputs: &[Field], values: &[f64], k_range: &[usize], metric: Metric<'_>) -> Result<Vec<f64>> {
    KnnRegressor::from_fields(inputs, values.to_vec(), metric)?.loo_cv(k_range)
}

/// Points used for the hyperparameter search and for conditioning.
pub const SURFACE_FIT_POINTS: usize = 200;
pub const SURFACE_CONDITION_POINTS: usize = 1000;

/// GP mean on a `grid_res × grid_res` lattice; `x1` varies fastest.
#[derive(Debug, Clone)]
pub struct Surface {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Surface {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.mean[j * self.x1.len() + i]
    }

    /// Writes `x1,x2,mean`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.x1.len();
        let rows = self
            .mean
            .iter()
            .enumerate()
            .map(|(k, m)| csv::join(&[self.x1[k % n], self.x2[k / n], *m]));
        csv::write(path, "x1,x2,mean", rows)
    }
}

fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let pad = 0.1 * (hi - lo);
    let (a, b) = (lo - pad, hi + pad);
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Fits a GP on the two leading coordinates and evaluates its mean over the
/// observed range padded by 10% per side. Large datasets use their leading
/// points: the first `SURFACE_FIT_POINTS` choose hyperparameters and the first
/// `SURFACE_CONDITION_POINTS` are conditioned on.
pub fn gp_surface(data: &ReducedDataset, grid_res: usize) -> Result<(Surface, GaussianProcess)> {
    if data.dim() != 2 {
        return Err(Error::invalid(
            "n",
            format!("the surface needs exactly 2 coordinates, got {}", data.dim()),
        ));
    }
    if data.len() < 10 {
        return Err(Error::invalid(
            "samples",
            format!("the surface needs at least 10 samples, got {}", data.len()),
        ));
    }
    if grid_res == 0 {
        return Err(Error::invalid("grid_res", "must be positive"));
    }
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for c in &data.coords {
        for a in 0..2 {
            bounds[a] = (bounds[a].0.min(c[a]), bounds[a].1.max(c[a]));
        }
    }
    // spread below rounding level of the largest coordinate counts as none
    let scale = bounds.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max);
    for (axis, (lo, hi)) in bounds.iter().enumerate() {
        if !(hi - lo > 1e-12 * scale) {
            return Err(Error::DegenerateCoordinates { axis });
        }
    }
    let nfit = data.len().min(SURFACE_FIT_POINTS);
    let ncond = data.len().min(SURFACE_CONDITION_POINTS);
    let fitted = GaussianProcess::fit(&data.coords[..nfit], &data.values[..nfit])?;
    let gp = match fitted.hyperparameters() {
        Some(h) if ncond > nfit => {
            GaussianProcess::with_hyperparameters(&data.coords[..ncond], &data.values[..ncond], h.clone())?
        }
        _ => fitted,
    };
    let x1 = lattice(bounds[0].0, bounds[0].1, grid_res);
    let x2 = lattice(bounds[1].0, bounds[1].1, grid_res);
    let pts: Vec<[f64; 2]> = x2.iter().flat_map(|b| x1.iter().map(move |a| [*a, *b])).collect();
    let mean = pts.par_iter().map(|p| gp.predict_mean(p)).collect();
    Ok((Surface { x1, x2, mean }, gp))
}
