//! Weight initialization schemes and the random-matrix edge predictions used
//! to sanity-check them.
//!
//! Columns are neurons throughout: a `rows x cols` weight holds `cols`
//! neurons in `R^rows`. The normalized-Gaussian scheme rescales each column
//! to unit norm; uniform-spectrum replaces every singular value of a standard
//! draw with one.

use crate::linalg::{svd, DenseMatrix, LinalgError};
use crate::rng::RngKey;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InitError {
    #[error("std_dev must be positive, got {0}")]
    BadStdDev(f64),
    #[error("matrix dimensions must be at least 1, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("aspect ratio must lie in (0, 1], got {0}")]
    BadAspectRatio(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The four supported weight distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Standard,
    Xavier,
    NormalizedGaussian,
    UniformSpectrum,
}

/// Initialization description: distribution, its parameter, and the seed all
/// draws derive from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    /// Standard deviation for `Standard`; ignored by the other kinds.
    pub std_dev: f64,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, std_dev: f64, seed: u64) -> Self {
        Self { kind, std_dev, seed }
    }

    fn validate(&self) -> Result<(), InitError> {
        if matches!(self.kind, InitKind::Standard) && self.std_dev <= 0.0 {
            return Err(InitError::BadStdDev(self.std_dev));
        }
        Ok(())
    }
}

/// Draw a `rows x cols` weight matrix. Same scheme and seed give a
/// bit-identical matrix.
pub fn init_matrix<F: Scalar>(
    scheme: &InitScheme,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix<F>, InitError> {
    let key = RngKey::from_seed(scheme.seed).child_named("init");
    init_matrix_keyed(scheme, rows, cols, key)
}

/// Same as [`init_matrix`] but under an explicit stream key, so callers with
/// many layers can key each one independently.
pub fn init_matrix_keyed<F: Scalar>(
    scheme: &InitScheme,
    rows: usize,
    cols: usize,
    key: RngKey,
) -> Result<DenseMatrix<F>, InitError> {
    scheme.validate()?;
    if rows == 0 || cols == 0 {
        return Err(InitError::BadShape { rows, cols });
    }
    let mut stream = key.stream();
    let mut gaussian = |std: f64| -> DenseMatrix<F> {
        let mut m = DenseMatrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = F::of(stream.next_gaussian() * std);
        }
        m
    };
    match scheme.kind {
        InitKind::Standard => Ok(gaussian(scheme.std_dev)),
        InitKind::Xavier => Ok(gaussian((2.0 / (rows + cols) as f64).sqrt())),
        InitKind::NormalizedGaussian => {
            let mut m = gaussian(1.0);
            for j in 0..cols {
                let mut s = F::zero();
                for i in 0..rows {
                    let x = m.get(i, j);
                    s = s + x * x;
                }
                let inv = F::one() / s.sqrt();
                for i in 0..rows {
                    let x = m.get(i, j);
                    m.set(i, j, x * inv);
                }
            }
            Ok(m)
        }
        InitKind::UniformSpectrum => {
            let base = gaussian(1.0);
            let f = svd(&base)?;
            // All singular values set to one: the thin product U * Vt.
            Ok(f.u.matmul(&f.vt)?)
        }
    }
}

/// Asymptotic singular-value edges for a column-normalized Gaussian matrix
/// with aspect ratio `lambda = cols / rows`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEdges {
    pub lambda: f64,
    pub sigma_max_pred: f64,
    pub sigma_min_pred: f64,
}

pub fn spectrum_edges(lambda: f64) -> Result<SpectrumEdges, InitError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(InitError::BadAspectRatio(lambda));
    }
    Ok(SpectrumEdges {
        lambda,
        sigma_max_pred: 1.0 + lambda.sqrt(),
        sigma_min_pred: 1.0 - lambda.sqrt(),
    })
}

/// Observed extreme singular values against the asymptotic prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeObservation {
    pub sigma_max_obs: f64,
    pub sigma_min_obs: f64,
    pub rel_dev_max: f64,
    pub rel_dev_min: f64,
}

/// Compare the spectrum of `w` (drawn by `kind`) to the predicted edges.
/// Standard and Xavier draws are rescaled by their entry deviation times
/// `sqrt(rows)` so the same unit-scale edges apply; relative deviations are
/// infinite where the predicted edge is zero (square case).
pub fn check_edges<F: Scalar>(
    w: &DenseMatrix<F>,
    kind: InitKind,
    std_dev: f64,
) -> Result<EdgeObservation, InitError> {
    let (rows, cols) = w.shape();
    let f = svd(w)?;
    let obs_max = f.sigma.first().copied().unwrap_or_else(F::zero).as_f64();
    let obs_min = f.sigma.last().copied().unwrap_or_else(F::zero).as_f64();

    let (pred_max, pred_min) = match kind {
        InitKind::UniformSpectrum => (1.0, 1.0),
        _ => {
            let lambda = cols.min(rows) as f64 / cols.max(rows) as f64;
            let d = rows.max(cols) as f64;
            let scale = match kind {
                InitKind::NormalizedGaussian => 1.0,
                InitKind::Standard => std_dev * d.sqrt(),
                InitKind::Xavier => (2.0 / (rows + cols) as f64).sqrt() * d.sqrt(),
                InitKind::UniformSpectrum => unreachable!(),
            };
            (scale * (1.0 + lambda.sqrt()), scale * (1.0 - lambda.sqrt()))
        }
    };
    let rel = |obs: f64, pred: f64| {
        if pred == 0.0 {
            f64::INFINITY
        } else {
            (obs - pred).abs() / pred
        }
    };
    Ok(EdgeObservation {
        sigma_max_obs: obs_max,
        sigma_min_obs: obs_min,
        rel_dev_max: rel(obs_max, pred_max),
        rel_dev_min: rel(obs_min, pred_min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_closed_forms() {
        let e = spectrum_edges(1.0).unwrap();
        assert_eq!(e.sigma_max_pred, 2.0);
        assert_eq!(e.sigma_min_pred, 0.0);
        let e = spectrum_edges(0.25).unwrap();
        assert!((e.sigma_max_pred - 1.5).abs() < 1e-15);
        assert!((e.sigma_min_pred - 0.5).abs() < 1e-15);
        let e = spectrum_edges(0.5).unwrap();
        assert!((e.sigma_max_pred - 1.707106781186547).abs() < 1e-12);
        assert!((e.sigma_min_pred - 0.292893218813452).abs() < 1e-12);
        assert!(spectrum_edges(0.0).is_err());
        assert!(spectrum_edges(1.5).is_err());
    }

    #[test]
    fn normalized_columns_have_unit_norm() {
        let scheme = InitScheme::new(InitKind::NormalizedGaussian, 0.0, 42);
        let w: DenseMatrix<f64> = init_matrix(&scheme, 17, 9).unwrap();
        for j in 0..9 {
            let n: f64 = (0..17).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12, "column {j} norm {n}");
        }
    }

    #[test]
    fn uniform_spectrum_has_unit_singular_values() {
        let scheme = InitScheme::new(InitKind::UniformSpectrum, 0.0, 5);
        let w: DenseMatrix<f64> = init_matrix(&scheme, 8, 5).unwrap();
        let f = svd(&w).unwrap();
        for s in f.sigma {
            assert!((s - 1.0).abs() < 1e-10, "sigma {s}");
        }
        let obs = check_edges(&w, InitKind::UniformSpectrum, 0.0).unwrap();
        assert!(obs.rel_dev_max < 1e-10 && obs.rel_dev_min < 1e-10);
    }

    #[test]
    fn same_seed_bit_identical() {
        let scheme = InitScheme::new(InitKind::Standard, 0.02, 123);
        let a: DenseMatrix<f64> = init_matrix(&scheme, 12, 7).unwrap();
        let b: DenseMatrix<f64> = init_matrix(&scheme, 12, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standard_rejects_bad_std() {
        let scheme = InitScheme::new(InitKind::Standard, 0.0, 1);
        assert!(init_matrix::<f64>(&scheme, 2, 2).is_err());
    }
}
