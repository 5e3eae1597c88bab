//! Homoskedastic Gaussian process regression with a squared-exponential ARD
//! kernel.
//!
//! Outputs are standardized before fitting and the GP itself has zero mean in
//! the standardized scale. Hyperparameters (log lengthscales, log signal
//! variance, log noise variance) maximize the marginal likelihood: 16 starts
//! on a log grid, each polished by Nelder–Mead.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Diagonal jitter added on top of the fitted noise.
pub const JITTER: f64 = 1e-8;

const LENGTH_FACTORS: [f64; 4] = [0.05, 0.2, 0.8, 3.2];
const NOISE_STARTS: [f64; 4] = [1e-8, 1e-5, 1e-3, 1e-1];

/// Training inputs, output mean and scale, standardized outputs.
type Prepared = (Vec<Vec<f64>>, f64, f64, DVector<f64>);
const LOG_NOISE_MIN: f64 = -25.0;
const POLISH_ITERS: u64 = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    // None when the training outputs are constant.
    posterior: Option<Posterior>,
}

#[derive(Debug, Clone)]
struct Posterior {
    hyper: Hyperparameters,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    nll: f64,
}

fn se(a: &[f64], b: &[f64], h: &Hyperparameters) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    h.signal_variance * (-0.5 * r2).exp()
}

fn posterior(x: &[Vec<f64>], y: &DVector<f64>, hyper: Hyperparameters) -> Option<Posterior> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = se(&x[i], &x[j], &hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.noise_variance + JITTER;
    }
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let nll = 0.5 * y.dot(&alpha) + log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    nll.is_finite().then_some(Posterior {
        hyper,
        chol,
        alpha,
        nll,
    })
}

fn unpack(p: &[f64]) -> Hyperparameters {
    let d = p.len() - 2;
    Hyperparameters {
        lengthscales: p[..d].iter().map(|v| v.clamp(-20.0, 20.0).exp()).collect(),
        signal_variance: p[d].clamp(-20.0, 20.0).exp(),
        noise_variance: p[d + 1].clamp(LOG_NOISE_MIN, 5.0).exp(),
    }
}

struct Likelihood<'a> {
    x: &'a [Vec<f64>],
    y: &'a DVector<f64>,
}

impl CostFunction for Likelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(posterior(self.x, self.y, unpack(p)).map_or(1e300, |post| post.nll))
    }
}

fn polish(problem: Likelihood<'_>, start: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut v = start.clone();
        v[i] += 1.0;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-6).ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(POLISH_ITERS))
        .timer(false)
        .run()
        .ok()?;
    let best = res.state().get_best_param()?.clone();
    Some((res.state().get_best_cost(), best))
}

impl GaussianProcess {
    /// Fits hyperparameters by multi-start marginal-likelihood search.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let (x, y_mean, y_scale, ys) = Self::prepare(x, y)?;
        if y_scale == 0.0 {
            return Ok(Self {
                x,
                y_mean,
                y_scale,
                posterior: None,
            });
        }
        let d = x[0].len();
        let ranges: Vec<f64> = (0..d)
            .map(|a| {
                let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[a]), hi.max(p[a]))
                });
                if hi > lo {
                    hi - lo
                } else {
                    1.0
                }
            })
            .collect();
        let starts: Vec<Vec<f64>> = LENGTH_FACTORS
            .iter()
            .flat_map(|lf| {
                let ranges = &ranges;
                NOISE_STARTS.iter().map(move |nz| {
                    let mut p: Vec<f64> = ranges.iter().map(|r| (lf * r).ln()).collect();
                    p.push(0.0);
                    p.push(nz.ln());
                    p
                })
            })
            .collect();
        let polished: Vec<Option<(f64, Vec<f64>)>> = starts
            .into_par_iter()
            .map(|s| polish(Likelihood { x: &x, y: &ys }, s))
            .collect();
        // first strictly best wins, so the choice does not depend on scheduling
        let best = polished
            .into_iter()
            .flatten()
            .filter(|(c, _)| c.is_finite() && *c < 1e300)
            .fold(None::<(f64, Vec<f64>)>, |acc, cand| match acc {
                Some(a) if a.0 <= cand.0 => Some(a),
                _ => Some(cand),
            })
            .ok_or_else(|| {
                Error::Numerical("no Gaussian process hyperparameters gave a positive definite kernel".into())
            })?;
        let post = posterior(&x, &ys, unpack(&best.1))
            .ok_or_else(|| Error::Numerical("kernel matrix lost definiteness after fitting".into()))?;
        Ok(Self {
            x,
            y_mean,
            y_scale,
            posterior: Some(post),
        })
    }

    /// Conditions on fixed hyperparameters without any search.
    pub fn with_hyperparameters(x: &[Vec<f64>], y: &[f64], hyper: Hyperparameters) -> Result<Self> {
        let (x, y_mean, y_scale, ys) = Self::prepare(x, y)?;
        if hyper.lengthscales.len() != x[0].len() {
            return Err(Error::LengthMismatch {
                expected: x[0].len(),
                got: hyper.lengthscales.len(),
            });
        }
        let posterior = if y_scale == 0.0 {
            None
        } else {
            Some(
                posterior(&x, &ys, hyper)
                    .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?,
            )
        };
        Ok(Self {
            x,
            y_mean,
            y_scale,
            posterior,
        })
    }

    fn prepare(x: &[Vec<f64>], y: &[f64]) -> Result<Prepared> {
        if x.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("x", "points must share a positive dimension"));
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var > 0.0 { var.sqrt() } else { 0.0 };
        let ys = DVector::from_iterator(
            y.len(),
            y.iter()
                .map(|v| if y_scale > 0.0 { (v - y_mean) / y_scale } else { 0.0 }),
        );
        Ok((x.to_vec(), y_mean, y_scale, ys))
    }

    pub fn hyperparameters(&self) -> Option<&Hyperparameters> {
        self.posterior.as_ref().map(|p| &p.hyper)
    }

    /// Negative log marginal likelihood in the standardized scale.
    pub fn neg_log_likelihood(&self) -> Option<f64> {
        self.posterior.as_ref().map(|p| p.nll)
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// Posterior mean and standard deviation of the latent function, in
    /// original output units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let Some(post) = &self.posterior else {
            return (self.y_mean, 0.0);
        };
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|p| se(p, q, &post.hyper)));
        let mean = k.dot(&post.alpha);
        let v = post
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (post.hyper.signal_variance - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    pub fn predict_mean(&self, q: &[f64]) -> f64 {
        let Some(post) = &self.posterior else {
            return self.y_mean;
        };
        let m: f64 = self
            .x
            .iter()
            .zip(post.alpha.iter())
            .map(|(p, a)| a * se(p, q, &post.hyper))
            .sum();
        self.y_mean + self.y_scale * m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn interpolates_noiseless_linear_data() {
        let x = points(30, 2, 1);
        let y: Vec<f64> = x.iter().map(|p| 3.0 * p[0]).collect();
        let gp = GaussianProcess::fit(&x, &y).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let m = gp.predict_mean(p);
            assert!((m - v).abs() <= 1e-2 * v.abs().max(1e-2), "{m} vs {v}");
        }
    }

    #[test]
    fn constant_outputs_give_a_flat_mean() {
        let x = points(12, 2, 2);
        let gp = GaussianProcess::fit(&x, &[2.5; 12]).unwrap();
        assert_eq!(gp.predict(&[0.3, -7.0]), (2.5, 0.0));
        assert!(gp.hyperparameters().is_none());
    }

    #[test]
    fn fit_is_deterministic_and_beats_starting_grid() {
        let x = points(25, 2, 3);
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        let a = GaussianProcess::fit(&x, &y).unwrap();
        let b = GaussianProcess::fit(&x, &y).unwrap();
        assert_eq!(a.hyperparameters(), b.hyperparameters());
        let fixed = GaussianProcess::with_hyperparameters(
            &x,
            &y,
            Hyperparameters {
                lengthscales: vec![0.4, 0.4],
                signal_variance: 1.0,
                noise_variance: 1e-3,
            },
        )
        .unwrap();
        assert!(a.neg_log_likelihood().unwrap() <= fixed.neg_log_likelihood().unwrap());
    }

    #[test]
    fn variance_shrinks_at_data_and_grows_away() {
        let x = points(20, 1, 4);
        let y: Vec<f64> = x.iter().map(|p| p[0].cos()).collect();
        let gp = GaussianProcess::fit(&x, &y).unwrap();
        let (_, near) = gp.predict(&x[0]);
        let (_, far) = gp.predict(&[50.0]);
        assert!(near < far);
        assert!(near >= 0.0);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(GaussianProcess::fit(&[], &[]), Err(Error::EmptyTrainingSet)));
        assert!(matches!(
            GaussianProcess::fit(&[vec![0.0]], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(GaussianProcess::fit(&[vec![0.0], vec![1.0, 2.0]], &[1.0, 2.0]).is_err());
        assert!(matches!(
            GaussianProcess::fit(&[vec![0.0]], &[f64::NAN]),
            Err(Error::NonFinite { index: 0 })
        ));
    }
}
