//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! nx = 33
//! ny = 33
//!
//! [measure]
//! type = "separable_sine"
//! m_per_axis = 8
//! decay = 2.0
//! amplitude = 1.0
//!
//! [functional]
//! type = "quadratic"          # linear | quadratic | ridge | poisson_control
//! kl_modes = [0, 1, 2, 3, 4]
//! coefficients = [4.0, 3.0, 2.0, 1.5, 1.0]
//!
//! [estimator]
//! samples = 200
//! rank_tol = 1e-12
//!
//! [experiment]
//! k_range = [1, 2, 3, 4, 5]
//! r = 4
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::asm::DEFAULT_RANK_TOL;
use crate::functionals::{DEFAULT_ALPHA, DEFAULT_SOLVER_TOL};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub measure: MeasureConfig,
    pub functional: FunctionalConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(rename = "type", default = "separable_sine")]
    pub kind: String,
    pub m_per_axis: usize,
    pub decay: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn separable_sine() -> String {
    "separable_sine".into()
}

fn one() -> f64 {
    1.0
}

/// A field given either as a field-json file or as a scaled KL mode of the
/// configured measure.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Path(PathBuf),
    Mode {
        kl_mode: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Linear {
        h1: FieldSource,
        h2: FieldSource,
    },
    Quadratic {
        kl_modes: Option<Vec<usize>>,
        basis: Option<Vec<PathBuf>>,
        coefficients: Vec<f64>,
    },
    Ridge {
        kl_modes: Option<Vec<usize>>,
        basis: Option<Vec<PathBuf>>,
        profile: String,
        #[serde(default = "one")]
        scale: f64,
    },
    PoissonControl {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_solver_tol")]
        solver_tol: f64,
        solver_max_iter: Option<usize>,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_solver_tol() -> f64 {
    DEFAULT_SOLVER_TOL
}

impl FunctionalConfig {
    pub fn name(&self) -> &'static str {
        match self {
            FunctionalConfig::Linear { .. } => "linear",
            FunctionalConfig::Quadratic { .. } => "quadratic",
            FunctionalConfig::Ridge { .. } => "ridge",
            FunctionalConfig::PoissonControl { .. } => "poisson_control",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub samples: usize,
    pub seed: Option<u64>,
    pub rank_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: None,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub k_range: Vec<usize>,
    pub r: usize,
    pub n_init: usize,
    pub n_seq: usize,
    pub repetitions: usize,
    pub grid_res: usize,
    /// Number of leading coordinates used by `project` and `knn`.
    pub dim: usize,
    pub gradcheck_directions: usize,
    pub gradcheck_step: f64,
    pub b_grid: Vec<usize>,
    pub converge_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k_range: (1..=20).collect(),
            r: 4,
            n_init: 10,
            n_seq: 40,
            repetitions: 20,
            grid_res: 50,
            dim: 2,
            gradcheck_directions: 10,
            gradcheck_step: 1e-6,
            b_grid: vec![50, 100, 200, 400, 800, 1600],
            converge_seeds: 20,
        }
    }
}

/// A rejected configuration; the message names the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn check(ok: bool, key: &str, rule: &str, got: impl std::fmt::Display) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError(format!("{key} {rule} (got {got})")))
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Seed of the Monte Carlo estimate.
    pub fn estimator_seed(&self) -> u64 {
        self.estimator
            .seed
            .unwrap_or_else(|| crate::rng::derive_seed(self.seed, "estimate"))
    }

    fn check_path(&self, key: &str, p: &Path) -> Result<(), ConfigError> {
        let full = self.resolve(p);
        check(full.is_file(), key, "must name an existing file", full.display())
    }

    fn check_basis(&self, kl_modes: &Option<Vec<usize>>, basis: &Option<Vec<PathBuf>>) -> Result<usize, ConfigError> {
        let modes = self.measure.m_per_axis * self.measure.m_per_axis;
        match (kl_modes, basis) {
            (Some(k), None) => {
                check(!k.is_empty(), "functional.kl_modes", "must not be empty", "[]")?;
                for &i in k {
                    check(
                        i < modes,
                        "functional.kl_modes",
                        &format!("entries must be below {modes}"),
                        i,
                    )?;
                }
                let mut sorted = k.clone();
                sorted.sort_unstable();
                sorted.dedup();
                check(
                    sorted.len() == k.len(),
                    "functional.kl_modes",
                    "must not repeat",
                    format!("{k:?}"),
                )?;
                Ok(k.len())
            }
            (None, Some(b)) => {
                check(!b.is_empty(), "functional.basis", "must not be empty", "[]")?;
                for p in b {
                    self.check_path("functional.basis", p)?;
                }
                Ok(b.len())
            }
            _ => Err(ConfigError("functional: give exactly one of kl_modes or basis".into())),
        }
    }

    fn check_source(&self, key: &str, s: &FieldSource) -> Result<(), ConfigError> {
        match s {
            FieldSource::Path(p) => self.check_path(key, p),
            FieldSource::Mode { kl_mode, scale } => {
                let modes = self.measure.m_per_axis * self.measure.m_per_axis;
                check(
                    *kl_mode < modes,
                    key,
                    &format!("kl_mode must be below {modes}"),
                    kl_mode,
                )?;
                check(scale.is_finite(), key, "scale must be finite", scale)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        check(g.nx >= 3, "grid.nx", "must be at least 3", g.nx)?;
        check(g.ny >= 3, "grid.ny", "must be at least 3", g.ny)?;

        let m = &self.measure;
        check(
            m.kind == "separable_sine",
            "measure.type",
            "must be \"separable_sine\"",
            &m.kind,
        )?;
        check(
            m.m_per_axis >= 1,
            "measure.m_per_axis",
            "must be at least 1",
            m.m_per_axis,
        )?;
        check(
            m.m_per_axis + 1 < g.nx.min(g.ny),
            "measure.m_per_axis",
            "must be below min(grid.nx, grid.ny) - 1",
            m.m_per_axis,
        )?;
        check(
            m.decay > 1.0 && m.decay.is_finite(),
            "measure.decay",
            "must exceed 1",
            m.decay,
        )?;
        check(
            m.amplitude > 0.0 && m.amplitude.is_finite(),
            "measure.amplitude",
            "must be positive",
            m.amplitude,
        )?;

        match &self.functional {
            FunctionalConfig::Linear { h1, h2 } => {
                self.check_source("functional.h1", h1)?;
                self.check_source("functional.h2", h2)?;
            }
            FunctionalConfig::Quadratic {
                kl_modes,
                basis,
                coefficients,
            } => {
                let n = self.check_basis(kl_modes, basis)?;
                check(
                    coefficients.len() == n,
                    "functional.coefficients",
                    &format!("must have {n} entries"),
                    coefficients.len(),
                )?;
                for c in coefficients {
                    check(c.is_finite(), "functional.coefficients", "must be finite", c)?;
                }
            }
            FunctionalConfig::Ridge {
                kl_modes,
                basis,
                profile,
                scale,
            } => {
                self.check_basis(kl_modes, basis)?;
                check(
                    ["sum", "half_squares", "sine_quadratic"].contains(&profile.as_str()),
                    "functional.profile",
                    "must be sum, half_squares or sine_quadratic",
                    profile,
                )?;
                check(
                    scale.is_finite() && *scale != 0.0,
                    "functional.scale",
                    "must be finite and nonzero",
                    scale,
                )?;
            }
            FunctionalConfig::PoissonControl {
                alpha,
                solver_tol,
                solver_max_iter,
            } => {
                check(
                    g.nx >= 17 && g.ny >= 17,
                    "grid",
                    "poisson_control needs at least 17x17 nodes",
                    format!("{}x{}", g.nx, g.ny),
                )?;
                check(
                    *alpha > 0.0 && alpha.is_finite(),
                    "functional.alpha",
                    "must be positive",
                    alpha,
                )?;
                check(
                    *solver_tol > 0.0 && *solver_tol < 1.0,
                    "functional.solver_tol",
                    "must be in (0, 1)",
                    solver_tol,
                )?;
                if let Some(it) = solver_max_iter {
                    check(*it >= 1, "functional.solver_max_iter", "must be at least 1", it)?;
                }
            }
        }

        let e = &self.estimator;
        check(e.samples >= 1, "estimator.samples", "must be at least 1", e.samples)?;
        check(
            e.rank_tol > 0.0 && e.rank_tol < 1.0,
            "estimator.rank_tol",
            "must be in (0, 1)",
            e.rank_tol,
        )?;

        let x = &self.experiment;
        check(!x.k_range.is_empty(), "experiment.k_range", "must not be empty", "[]")?;
        for &k in &x.k_range {
            check(k >= 1, "experiment.k_range", "entries must be at least 1", k)?;
        }
        check(x.r >= 1, "experiment.r", "must be at least 1", x.r)?;
        check(x.n_init >= 2, "experiment.n_init", "must be at least 2", x.n_init)?;
        check(
            x.repetitions >= 1,
            "experiment.repetitions",
            "must be at least 1",
            x.repetitions,
        )?;
        check(x.grid_res >= 2, "experiment.grid_res", "must be at least 2", x.grid_res)?;
        check(x.dim >= 1, "experiment.dim", "must be at least 1", x.dim)?;
        check(
            x.gradcheck_directions >= 1,
            "experiment.gradcheck_directions",
            "must be at least 1",
            x.gradcheck_directions,
        )?;
        check(
            x.gradcheck_step > 0.0 && x.gradcheck_step.is_finite(),
            "experiment.gradcheck_step",
            "must be positive",
            x.gradcheck_step,
        )?;
        check(
            x.b_grid.len() >= 4,
            "experiment.b_grid",
            "needs at least 4 entries",
            x.b_grid.len(),
        )?;
        check(
            x.b_grid[0] >= 1 && x.b_grid.windows(2).all(|w| w[0] < w[1]),
            "experiment.b_grid",
            "must be positive and strictly increasing",
            format!("{:?}", x.b_grid),
        )?;
        check(
            x.converge_seeds >= 1,
            "experiment.converge_seeds",
            "must be at least 1",
            x.converge_seeds,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[grid]
nx = 17
ny = 17
[measure]
m_per_axis = 4
decay = 2.0
[functional]
type = "quadratic"
kl_modes = [0, 1]
coefficients = [2.0, 1.0]
"#;

    fn parse(extra: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&format!("{BASE}{extra}"), Path::new("."))
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse("").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.estimator.samples, 200);
        assert_eq!(c.experiment.k_range, (1..=20).collect::<Vec<_>>());
        assert_eq!(c.measure.amplitude, 1.0);
        assert_eq!(c.estimator_seed(), crate::rng::derive_seed(3, "estimate"));
    }

    #[test]
    fn rejections_name_the_key() {
        let cases = [
            ("[estimator]\nsamples = 0\n", "estimator.samples"),
            ("[estimator]\nrank_tol = 0.0\n", "estimator.rank_tol"),
            ("[experiment]\nn_init = 1\n", "experiment.n_init"),
            ("[experiment]\nk_range = [0, 2]\n", "experiment.k_range"),
            ("[experiment]\nb_grid = [10, 5, 20, 40]\n", "experiment.b_grid"),
            ("[experiment]\nb_grid = [10, 20, 40]\n", "experiment.b_grid"),
            ("[experiment]\ngrid_res = 1\n", "experiment.grid_res"),
        ];
        for (extra, key) in cases {
            let err = parse(extra).unwrap_err();
            assert!(err.0.contains(key), "{err} should name {key}");
        }
        let bad_decay = BASE.replace("decay = 2.0", "decay = 1.0");
        assert!(RunConfig::parse(&bad_decay, Path::new("."))
            .unwrap_err()
            .0
            .contains("measure.decay"));
        let bad_mode = BASE.replace("kl_modes = [0, 1]", "kl_modes = [0, 16]");
        assert!(RunConfig::parse(&bad_mode, Path::new("."))
            .unwrap_err()
            .0
            .contains("functional.kl_modes"));
        let bad_coeffs = BASE.replace("[2.0, 1.0]", "[2.0]");
        assert!(RunConfig::parse(&bad_coeffs, Path::new("."))
            .unwrap_err()
            .0
            .contains("functional.coefficients"));
    }

    #[test]
    fn unknown_keys_and_missing_files_fail() {
        assert!(parse("bogus = 1\n").is_err());
        let text = BASE.replace("kl_modes = [0, 1]", "basis = [\"nope-a.json\", \"nope-b.json\"]");
        let err = RunConfig::parse(&text, Path::new("/nonexistent")).unwrap_err();
        assert!(err.0.contains("functional.basis"));
    }

    #[test]
    fn functional_variants_parse() {
        let lin = BASE.replace(
            "type = \"quadratic\"\nkl_modes = [0, 1]\ncoefficients = [2.0, 1.0]",
            "type = \"linear\"\nh1 = { kl_mode = 0 }\nh2 = { kl_mode = 3, scale = 0.5 }",
        );
        assert!(matches!(
            RunConfig::parse(&lin, Path::new(".")).unwrap().functional,
            FunctionalConfig::Linear { .. }
        ));
        let pc = BASE.replace(
            "type = \"quadratic\"\nkl_modes = [0, 1]\ncoefficients = [2.0, 1.0]",
            "type = \"poisson_control\"",
        );
        let c = RunConfig::parse(&pc, Path::new(".")).unwrap();
        assert!(matches!(c.functional, FunctionalConfig::PoissonControl { alpha, .. } if alpha == DEFAULT_ALPHA));
        let small = pc
            .replace("nx = 17", "nx = 9")
            .replace("m_per_axis = 4", "m_per_axis = 2");
        assert!(RunConfig::parse(&small, Path::new(".")).unwrap_err().0.contains("grid"));
    }
}
