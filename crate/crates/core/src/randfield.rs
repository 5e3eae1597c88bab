//! Gaussian measures on the function space via truncated Karhunen–Loève
//! expansions `U = mean + Σₘ √λₘ ξₘ φₘ`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{self, Field, Space, Subspace};
use crate::rng::substream;

#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    space: Space,
    mean: Field,
    kl_values: Vec<f64>,
    kl_functions: Subspace,
}

impl GaussianMeasure {
    pub fn new(mean: Field, kl_values: Vec<f64>, kl_functions: Subspace) -> Result<Self> {
        let space = mean.space().clone();
        if !hilbert::same_space(&space, kl_functions.space()) {
            return Err(Error::SpaceMismatch);
        }
        if kl_values.len() != kl_functions.dim() {
            return Err(Error::LengthMismatch {
                expected: kl_functions.dim(),
                got: kl_values.len(),
            });
        }
        if kl_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("kl_values", "must be strictly positive"));
        }
        if kl_values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("kl_values", "must be nonincreasing"));
        }
        if !kl_functions.is_orthonormal() {
            return Err(Error::NotOrthonormal {
                max_deviation: hilbert::max_gram_deviation(kl_functions.basis())?,
            });
        }
        Ok(Self {
            space,
            mean,
            kl_values,
            kl_functions,
        })
    }

    /// Degenerate measure concentrated on `mean`.
    pub fn mean_only(mean: Field) -> Self {
        let space = mean.space().clone();
        Self {
            kl_functions: Subspace::from_trusted(&space, Vec::new()),
            space,
            mean,
            kl_values: Vec::new(),
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn kl_values(&self) -> &[f64] {
        &self.kl_values
    }

    pub fn kl_functions(&self) -> &Subspace {
        &self.kl_functions
    }

    /// Number of retained KL modes.
    pub fn modes(&self) -> usize {
        self.kl_values.len()
    }

    pub fn trace(&self) -> f64 {
        self.kl_values.iter().sum()
    }

    /// Assembles `mean + Σ √λₘ ξₘ φₘ` for given standard-normal `xi`.
    pub fn realize(&self, xi: &[f64]) -> Result<Field> {
        if xi.len() != self.modes() {
            return Err(Error::LengthMismatch {
                expected: self.modes(),
                got: xi.len(),
            });
        }
        let mut u = self.mean.clone();
        for ((x, lam), phi) in xi.iter().zip(&self.kl_values).zip(self.kl_functions.basis()) {
            u.axpy(lam.sqrt() * x, phi)?;
        }
        Ok(u)
    }

    /// Standard-normal KL coefficients of sample `index` under `seed`.
    pub fn draw_coefficients(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = substream(seed, index);
        (0..self.modes()).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn sample_one(&self, seed: u64, index: u64) -> Field {
        self.realize(&self.draw_coefficients(seed, index))
            .expect("coefficient count matches modes")
    }

    /// `count` i.i.d. draws. Sample `b` depends only on `(seed, b)`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Field> {
        self.sample_range(seed, 0, count)
    }

    /// Draws with indices `start..start + count`.
    pub fn sample_range(&self, seed: u64, start: usize, count: usize) -> Vec<Field> {
        (start..start + count)
            .into_par_iter()
            .map(|b| self.sample_one(seed, b as u64))
            .collect()
    }
}

/// Zero-mean measure whose covariance is diagonal in the product sine basis
/// `sin(iπx̂) sin(jπŷ)`, `1 ≤ i, j ≤ m_per_axis`, with eigenvalues
/// `amplitude · (i² + j²)^(−decay)`. Coordinates `x̂, ŷ` are rescaled to the
/// unit square spanned by the grid.
pub fn separable_sine_measure(space: &Space, m_per_axis: usize, decay: f64, amplitude: f64) -> Result<GaussianMeasure> {
    if !(decay > 1.0) {
        return Err(Error::NonTraceClass { decay });
    }
    if m_per_axis == 0 {
        return Err(Error::invalid("m_per_axis", "must be at least 1"));
    }
    if m_per_axis + 1 >= space.nx().min(space.ny()) {
        return Err(Error::invalid(
            "m_per_axis",
            format!(
                "{m_per_axis} modes per axis are not resolved on a {}x{} grid",
                space.nx(),
                space.ny()
            ),
        ));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::invalid(
            "amplitude",
            "must be positive; use a mean-only measure instead",
        ));
    }
    let mut modes: Vec<(usize, usize, f64)> = Vec::with_capacity(m_per_axis * m_per_axis);
    for i in 1..=m_per_axis {
        for j in 1..=m_per_axis {
            let value = amplitude * ((i * i + j * j) as f64).powf(-decay);
            modes.push((i, j, value));
        }
    }
    // stable: ties keep (i, j) lexicographic order
    modes.sort_by(|a, b| b.2.total_cmp(&a.2));

    let lx = space.hx() * (space.nx() - 1) as f64;
    let ly = space.hy() * (space.ny() - 1) as f64;
    let [ox, oy] = space.origin();
    let functions: Vec<Field> = modes
        .iter()
        .map(|&(i, j, _)| {
            let mut f = Field::from_fn(space, |x, y| {
                let xs = (x - ox) / lx;
                let ys = (y - oy) / ly;
                (i as f64 * PI * xs).sin() * (j as f64 * PI * ys).sin()
            });
            let n = hilbert::norm(&f);
            f.scale(1.0 / n);
            f
        })
        .collect();
    let kl_functions = Subspace::orthonormal(space, functions)?;
    GaussianMeasure::new(Field::zeros(space), modes.iter().map(|m| m.2).collect(), kl_functions)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::hilbert::{inner_product, norm, FunctionSpace};

    fn unit(n: usize) -> Space {
        Arc::new(FunctionSpace::unit_square(n, n).unwrap())
    }

    #[test]
    fn single_mode_value() {
        let m = separable_sine_measure(&unit(17), 1, 2.0, 1.0).unwrap();
        assert_eq!(m.kl_values(), &[0.25]);
    }

    #[test]
    fn modes_sorted_and_trace_exact() {
        let m = separable_sine_measure(&unit(33), 8, 2.0, 3.0).unwrap();
        assert_eq!(m.modes(), 64);
        assert!(m.kl_values().windows(2).all(|w| w[0] >= w[1]));
        let mut expected = 0.0;
        for i in 1..=8usize {
            for j in 1..=8usize {
                expected += 3.0 * ((i * i + j * j) as f64).powf(-2.0);
            }
        }
        let mut sorted: Vec<f64> = m.kl_values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let trace: f64 = sorted.iter().sum();
        assert!((trace - expected).abs() <= 1e-15 * expected);
        assert!(hilbert::max_gram_deviation(m.kl_functions().basis()).unwrap() < 1e-10);
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = unit(17);
        assert!(matches!(
            separable_sine_measure(&s, 4, 1.0, 1.0),
            Err(Error::NonTraceClass { .. })
        ));
        assert!(separable_sine_measure(&s, 4, 2.0, 0.0).is_err());
        assert!(separable_sine_measure(&s, 16, 2.0, 1.0).is_err());
    }

    #[test]
    fn mean_only_measure_returns_mean() {
        let s = unit(9);
        let mean = Field::from_fn(&s, |x, y| x * y);
        let m = GaussianMeasure::mean_only(mean.clone());
        for u in m.sample(5, 1) {
            assert_eq!(u.values(), mean.values());
        }
    }

    #[test]
    fn sampling_is_reproducible_and_prefix_stable() {
        let m = separable_sine_measure(&unit(17), 4, 2.0, 1.0).unwrap();
        let a = m.sample(6, 42);
        let b = m.sample(6, 42);
        let c = m.sample(3, 42);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.values(), y.values());
        }
        let d = m.sample(1, 43);
        assert_ne!(a[0].values(), d[0].values());
    }

    #[test]
    fn shared_coefficients_give_the_same_function_on_two_grids() {
        let coarse = separable_sine_measure(&unit(17), 4, 2.0, 1.0).unwrap();
        let fine = separable_sine_measure(&unit(33), 4, 2.0, 1.0).unwrap();
        let u = coarse.sample_one(9, 2);
        let v = fine.sample_one(9, 2);
        // node (i, j) on 17 is node (2i, 2j) on 33
        for j in 0..17 {
            for i in 0..17 {
                let a = u.values()[j * 17 + i];
                let b = v.values()[2 * j * 33 + 2 * i];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moments_match_the_kl_law() {
        let s = unit(17);
        let m = separable_sine_measure(&s, 4, 2.0, 1.0).unwrap();
        let n = 20_000;
        let draws = m.sample(n, 2024);
        let phi0 = &m.kl_functions().basis()[0];

        let mut mean = Field::zeros(&s);
        let mut sq_norm = 0.0;
        let mut proj: Vec<f64> = Vec::with_capacity(n);
        for u in &draws {
            mean.axpy(1.0 / n as f64, u).unwrap();
            sq_norm += norm(u).powi(2) / n as f64;
            proj.push(inner_product(u, phi0).unwrap());
        }
        // CLT bound on the sample mean
        assert!(norm(&mean) <= 3.0 * (m.trace() / n as f64).sqrt());
        // E‖U‖² = trace for zero mean
        assert!((sq_norm - m.trace()).abs() <= 0.02 * m.trace());
        let var = proj.iter().map(|p| p * p).sum::<f64>() / n as f64;
        assert!((var - m.kl_values()[0]).abs() <= 0.05 * m.kl_values()[0]);
        let kurt = proj.iter().map(|p| p.powi(4)).sum::<f64>() / n as f64 / (var * var);
        assert!((kurt - 3.0).abs() <= 0.25, "kurtosis {kurt}");
    }
}
