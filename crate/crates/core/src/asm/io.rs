//! `asm-json`: estimate files plus an optional gradient-sample sidecar.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{Field, Space, SpaceHeader, Subspace};

use super::{GradientSampleSet, SubspaceEstimate};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateFile {
    pub space: SpaceHeader,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub rank_tol: f64,
    /// Sidecar path, relative to the estimate file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesFile {
    pub space: SpaceHeader,
    pub seed: u64,
    pub inputs: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// An estimate loaded from disk.
#[derive(Debug, Clone)]
pub struct StoredEstimate {
    pub space: Space,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Subspace,
    pub b: usize,
    pub seed: u64,
    pub rank_tol: f64,
    pub samples_path: Option<PathBuf>,
}

impl StoredEstimate {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Writes the estimate and, when `sidecar` is given, the gradient samples.
pub fn write_estimate(path: &Path, estimate: &SubspaceEstimate, sidecar: Option<&Path>) -> Result<()> {
    let space = SpaceHeader::of(estimate.space());
    let samples_file = match sidecar {
        Some(p) => {
            let samples = estimate.samples();
            let file = SamplesFile {
                space: space.clone(),
                seed: samples.seed(),
                inputs: samples.inputs().iter().map(|f| f.values().to_vec()).collect(),
                gradients: samples.gradients().iter().map(|f| f.values().to_vec()).collect(),
                values: samples.values().to_vec(),
            };
            std::fs::write(p, serde_json::to_string(&file)?)?;
            Some(relative_to(path, p))
        }
        None => None,
    };
    let file = EstimateFile {
        space,
        eigenvalues: estimate.eigenvalues().to_vec(),
        eigenfunctions: estimate
            .eigenfunctions()
            .basis()
            .iter()
            .map(|f| f.values().to_vec())
            .collect(),
        b: estimate.samples().len(),
        seed: estimate.samples().seed(),
        rank_tol: estimate.rank_tol(),
        samples_file,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

fn relative_to(anchor: &Path, target: &Path) -> String {
    match (anchor.parent(), target.parent()) {
        (Some(a), Some(b)) if a == b => target.file_name().map(|n| n.to_string_lossy().into_owned()),
        _ => None,
    }
    .unwrap_or_else(|| target.to_string_lossy().into_owned())
}

fn fields(space: &Space, rows: Vec<Vec<f64>>) -> Result<Vec<Field>> {
    rows.into_iter().map(|v| Field::from_values(space, v)).collect()
}

pub fn read_estimate(path: &Path) -> Result<StoredEstimate> {
    let file: EstimateFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let space: Space = Arc::new(file.space.build()?);
    if file.eigenvalues.len() != file.eigenfunctions.len() {
        return Err(Error::LengthMismatch {
            expected: file.eigenvalues.len(),
            got: file.eigenfunctions.len(),
        });
    }
    let eigenfunctions = Subspace::orthonormal(&space, fields(&space, file.eigenfunctions)?)?;
    let samples_path = file.samples_file.map(|s| {
        let p = PathBuf::from(&s);
        if p.is_absolute() {
            p
        } else {
            path.parent().map(|d| d.join(&p)).unwrap_or(p)
        }
    });
    Ok(StoredEstimate {
        space,
        eigenvalues: file.eigenvalues,
        eigenfunctions,
        b: file.b,
        seed: file.seed,
        rank_tol: file.rank_tol,
        samples_path,
    })
}

/// Loads a sidecar onto `space`.
pub fn read_samples(path: &Path, space: &Space) -> Result<GradientSampleSet> {
    let file: SamplesFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.space != SpaceHeader::of(space) {
        return Err(Error::SpaceMismatch);
    }
    GradientSampleSet::new(
        fields(space, file.inputs)?,
        fields(space, file.gradients)?,
        file.values,
        file.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{collect_gradients, eigendecompose, DEFAULT_RANK_TOL};
    use crate::functionals::quadratic_functional;
    use crate::hilbert::FunctionSpace;
    use crate::randfield::separable_sine_measure;

    #[test]
    fn estimate_round_trip_with_sidecar() {
        let s: Space = Arc::new(FunctionSpace::unit_square(9, 9).unwrap());
        let m = separable_sine_measure(&s, 3, 2.0, 1.0).unwrap();
        let f = quadratic_functional(m.kl_functions().basis()[..2].iter().cloned().zip([2.0, 1.0]).collect()).unwrap();
        let est = eigendecompose(collect_gradients(&f, &m, 7, 3).unwrap(), DEFAULT_RANK_TOL).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimate.json");
        let side = dir.path().join("estimate.samples.json");
        write_estimate(&path, &est, Some(&side)).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"B\": 7"));
        assert!(text.contains("\"samples_file\": \"estimate.samples.json\""));

        let back = read_estimate(&path).unwrap();
        assert_eq!(back.eigenvalues, est.eigenvalues());
        assert_eq!(back.b, 7);
        assert_eq!(back.seed, 3);
        assert_eq!(back.samples_path.as_deref(), Some(side.as_path()));
        let samples = read_samples(&side, &back.space).unwrap();
        assert_eq!(samples.values(), est.samples().values());
        assert_eq!(samples.gradients()[4].values(), est.samples().gradients()[4].values());
    }

    #[test]
    fn mismatched_eigenfunction_lengths_are_rejected() {
        let s: Space = Arc::new(FunctionSpace::unit_square(5, 5).unwrap());
        let file = EstimateFile {
            space: SpaceHeader::of(&s),
            eigenvalues: vec![1.0],
            eigenfunctions: vec![vec![1.0; 24]],
            b: 1,
            seed: 0,
            rank_tol: 1e-12,
            samples_file: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(read_estimate(&path), Err(Error::LengthMismatch { .. })));
    }
}
