//! Training diagnostics: hyperspherical energy, SVD entropy, spectral
//! complexity, vector probing, update-coverage maps, and per-layer spectrum
//! tracking.

use crate::linalg::{frobenius_norm, svd, DenseMatrix, LinalgError};
use crate::poetlayer::PoetLayer;
use crate::scalar::Scalar;
use crate::spo::PrimitiveSpec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagError {
    #[error("need at least two neurons (columns), got {0}")]
    TooFewNeurons(usize),
    #[error("neuron {0} has zero norm")]
    ZeroNormNeuron(usize),
    #[error("neurons {0} and {1} coincide after normalization (infinite energy)")]
    CoincidentNeurons(usize, usize),
    #[error("singular values must be nonnegative")]
    NegativeSigma,
    #[error("all singular values are zero")]
    AllZeroSigma,
    #[error("weight list is empty")]
    EmptyWeights,
    #[error("weight {0} is zero (zero spectral norm)")]
    ZeroWeight(usize),
    #[error("coverage map is {map_rows}x{map_cols} but the layer weight is {rows}x{cols}")]
    CoverageShape { map_rows: usize, map_cols: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One diagnostics row, emitted at the evaluation cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Hyperspherical energy summed over tracked weights.
    pub he_total: f64,
    /// Mean normalized SVD entropy over tracked weights.
    pub svd_entropy_mean: f64,
    /// Worst orthogonality error over all live primitives.
    pub e_orth_max: f64,
    /// Per tracked matrix, in a fixed order.
    pub per_matrix: Vec<MatrixMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMetrics {
    pub name: String,
    pub probe_cos: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

/// Pairwise inverse-distance energy of the unit-normalized neurons
/// (columns), summed over ordered pairs.
pub fn hyperspherical_energy<F: Scalar>(w: &DenseMatrix<F>) -> Result<F, DiagError> {
    let (rows, cols) = w.shape();
    if cols < 2 {
        return Err(DiagError::TooFewNeurons(cols));
    }
    let mut units: Vec<Vec<F>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let col = w.column(j);
        let norm = col.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
        if norm == F::zero() {
            return Err(DiagError::ZeroNormNeuron(j));
        }
        let inv = F::one() / norm;
        units.push(col.into_iter().map(|x| x * inv).collect());
    }
    let mut energy = F::zero();
    for i in 0..cols {
        for j in i + 1..cols {
            let mut d2 = F::zero();
            for r in 0..rows {
                let d = units[i][r] - units[j][r];
                d2 = d2 + d * d;
            }
            if d2 == F::zero() {
                return Err(DiagError::CoincidentNeurons(i, j));
            }
            energy = energy + (F::one() + F::one()) / d2.sqrt();
        }
    }
    Ok(energy)
}

/// Normalized Shannon entropy of the squared singular-value distribution:
/// 1 means a perfectly uniform spectrum, 0 rank one. The length-one spectrum
/// is defined as 0.
pub fn svd_entropy<F: Scalar>(sigma: &[F]) -> Result<F, DiagError> {
    if sigma.iter().any(|&s| s < F::zero()) {
        return Err(DiagError::NegativeSigma);
    }
    let total = sigma.iter().fold(F::zero(), |acc, &s| acc + s * s);
    if total == F::zero() {
        return Err(DiagError::AllZeroSigma);
    }
    let n = sigma.len();
    if n == 1 {
        return Ok(F::zero());
    }
    let mut h = F::zero();
    for &s in sigma {
        let p = s * s / total;
        if p > F::zero() {
            h = h - p * p.ln();
        }
    }
    Ok(h / F::of((n as f64).ln()))
}

/// Product-of-spectral-norms complexity with the Frobenius-ratio term from
/// margin-based generalization bounds:
/// `Q = (prod ||W_i||_2) * (sum (sqrt(d) ||W_i||_F)^(2/3) / ||W_i||_2^(2/3))^(3/2)`
/// with `d` the largest dimension across the list.
pub fn spectral_complexity<F: Scalar>(weights: &[&DenseMatrix<F>]) -> Result<F, DiagError> {
    if weights.is_empty() {
        return Err(DiagError::EmptyWeights);
    }
    let d = weights.iter().map(|w| w.rows().max(w.cols())).max().unwrap() as f64;
    let sqrt_d = F::of(d.sqrt());
    let two_thirds = F::of(2.0 / 3.0);
    let mut product = F::one();
    let mut sum = F::zero();
    for (i, w) in weights.iter().enumerate() {
        let spectral = svd(w)?.sigma.first().copied().unwrap_or_else(F::zero);
        if spectral == F::zero() {
            return Err(DiagError::ZeroWeight(i));
        }
        product = product * spectral;
        let fro = frobenius_norm(w);
        sum = sum + (sqrt_d * fro).powf(two_thirds) / spectral.powf(two_thirds);
    }
    Ok(product * sum.powf(F::of(1.5)))
}

/// Cosine summary of an orthogonal action: `v^T (R v)` for a fixed unit `v`.
/// Its expectation over uniform unit vectors is `Tr(R) / m`.
pub fn vector_probe<F: Scalar>(apply_r: impl FnOnce(&[F]) -> Vec<F>, v: &[F]) -> F {
    let rv = apply_r(v);
    debug_assert_eq!(rv.len(), v.len());
    let mut s = F::zero();
    for (&a, &b) in v.iter().zip(&rv) {
        s = s + a * b;
    }
    s
}

/// Per-element counts of update opportunities across training steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl CoverageMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, counts: vec![0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().sum::<u64>() as f64 / self.counts.len() as f64
    }
}

/// Count every element whose value can change in the current step: the left
/// action touches its rows, the right action its columns (a block-stochastic
/// side touches everything).
pub fn coverage_accumulate<F: Scalar>(
    map: &mut CoverageMap,
    layer: &PoetLayer<F>,
) -> Result<(), DiagError> {
    let (rows, cols) = layer.shape();
    if map.rows != rows || map.cols != cols {
        return Err(DiagError::CoverageShape {
            map_rows: map.rows,
            map_cols: map.cols,
            rows,
            cols,
        });
    }
    match layer.r_prim() {
        PrimitiveSpec::Fs { set, .. } => {
            for &r in set.indices() {
                for j in 0..cols {
                    map.counts[r * cols + j] += 1;
                }
            }
        }
        PrimitiveSpec::Bs { .. } => {
            for c in map.counts.iter_mut() {
                *c += 1;
            }
        }
        PrimitiveSpec::Identity { .. } => {}
    }
    match layer.p_prim() {
        PrimitiveSpec::Fs { set, .. } => {
            for i in 0..rows {
                for &c in set.indices() {
                    map.counts[i * cols + c] += 1;
                }
            }
        }
        PrimitiveSpec::Bs { .. } => {
            for c in map.counts.iter_mut() {
                *c += 1;
            }
        }
        PrimitiveSpec::Identity { .. } => {}
    }
    Ok(())
}

/// Descending singular values of the layer's current effective weight.
pub fn spectrum_track<F: Scalar>(layer: &PoetLayer<F>) -> Result<Vec<F>, DiagError> {
    Ok(svd(&layer.merged_weight())?.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    #[test]
    fn energy_symmetric_cases() {
        // Two orthogonal unit 2-vectors: 2 / sqrt(2).
        let w = M::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let e = hyperspherical_energy(&w).unwrap();
        assert!((e - std::f64::consts::SQRT_2).abs() < 1e-12);

        // Three unit 2-vectors at 120 degrees: 6 / sqrt(3).
        let (c, s) = ((2.0 * std::f64::consts::PI / 3.0).cos(), (2.0 * std::f64::consts::PI / 3.0).sin());
        let w = M::from_rows(&[&[1.0, c, c], &[0.0, s, -s]]);
        let e = hyperspherical_energy(&w).unwrap();
        assert!((e - 2.0 * 3.0f64.sqrt()).abs() < 1e-12, "got {e}");
    }

    #[test]
    fn energy_error_cases() {
        let w = M::from_rows(&[&[1.0], &[0.0]]);
        assert!(matches!(hyperspherical_energy(&w), Err(DiagError::TooFewNeurons(1))));
        let w = M::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(hyperspherical_energy(&w), Err(DiagError::ZeroNormNeuron(1))));
        let w = M::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(hyperspherical_energy(&w), Err(DiagError::CoincidentNeurons(0, 1))));
    }

    #[test]
    fn entropy_closed_forms() {
        assert!((svd_entropy::<f64>(&[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(svd_entropy::<f64>(&[1.0, 0.0]).unwrap(), 0.0);
        // p = (0.8, 0.2).
        let h = svd_entropy::<f64>(&[2.0, 1.0]).unwrap();
        assert!((h - 0.721928094887362).abs() < 1e-5, "got {h}");
        assert!(svd_entropy::<f64>(&[0.0, 0.0]).is_err());
        assert!(svd_entropy::<f64>(&[-1.0, 1.0]).is_err());
    }

    #[test]
    fn entropy_scale_invariant() {
        let h1 = svd_entropy::<f64>(&[3.0, 2.0, 1.0]).unwrap();
        let h2 = svd_entropy::<f64>(&[30.0, 20.0, 10.0]).unwrap();
        assert!((h1 - h2).abs() < 1e-14);
    }

    #[test]
    fn complexity_identity_is_dimension() {
        for d in [2usize, 5, 16] {
            let w = M::identity(d);
            let q = spectral_complexity(&[&w]).unwrap();
            assert!((q - d as f64).abs() < 1e-9, "d={d} q={q}");
        }
    }

    #[test]
    fn complexity_scales_linearly_in_one_norm() {
        let a = M::from_rows(&[&[1.0, 0.2], &[-0.3, 0.8]]);
        let b = M::from_rows(&[&[0.5, 0.1, 0.0], &[0.0, 0.9, 0.4]]);
        let q1 = spectral_complexity(&[&a, &b]).unwrap();
        let q2 = spectral_complexity(&[&a.scale(2.0), &b]).unwrap();
        assert!((q2 / q1 - 2.0).abs() < 1e-9, "ratio {}", q2 / q1);
    }

    #[test]
    fn complexity_error_cases() {
        assert!(matches!(spectral_complexity::<f64>(&[]), Err(DiagError::EmptyWeights)));
        let z = M::zeros(3, 3);
        assert!(matches!(spectral_complexity(&[&z]), Err(DiagError::ZeroWeight(0))));
    }

    #[test]
    fn probe_identity_and_quarter_turn() {
        let v = vec![0.6f64, 0.8];
        let one: f64 = vector_probe(|x| x.to_vec(), &v);
        assert!((one - 1.0).abs() < 1e-15);
        let rot = |x: &[f64]| vec![-x[1], x[0]];
        let zero = vector_probe(rot, &v);
        assert!(zero.abs() < 1e-15);
    }
}
