//! Feature batches and the three similarity functions.
//!
//! Two scores are defined over a triple of unit vectors: the mean of the
//! three pairwise dot products (cosine), and one minus the sum of the three
//! pairwise Euclidean distances divided by the largest achievable sum
//! (mapped L2). Axis convention is fixed globally: axis 0 indexes the text
//! batch, axis 1 the image batch, axis 2 the point batch. Both scores are
//! symmetric in the three vectors, so the convention only pins bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest batch size for which a dense `b^3` tensor is materialized.
/// 512^3 doubles is ~1.1 GB; typical desk-scale batches stay at or below 64.
pub const DEFAULT_BATCH_CAP: usize = 512;

/// Largest achievable value of a single pairwise unit-vector distance sum
/// for three modalities: three points mutually 120 degrees apart on a great
/// circle, each pair sqrt(3) apart.
const MAX_DISTANCE_SUM_Q3: f64 = 5.196152422706632; // 3*sqrt(3)

/// Tolerance for the unit-norm flag check.
const UNIT_NORM_TOL: f64 = 1e-6;

/// Which input domain a batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Image,
    Point,
}

/// Which score fills a similarity tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// Mean of the three pairwise dot products; range [-0.5, 1].
    Cosine,
    /// Distance sums mapped through `1 - s / max_sum`; range [0, 1].
    L2Mapped,
}

/// One embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Validates finiteness and non-emptiness.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature vector",
            });
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True when the Euclidean norm is within `1e-6` of one.
    pub fn is_unit_norm(&self) -> bool {
        (linalg::norm(&self.values) - 1.0).abs() <= UNIT_NORM_TOL
    }
}

/// Rescales a vector to unit Euclidean norm, preserving direction.
/// A zero vector is a hard error, never a silent NaN.
pub fn normalize(v: &FeatureVector) -> Result<FeatureVector> {
    let n = linalg::norm(v.values());
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite { context: "norm" });
    }
    FeatureVector::new(v.values().iter().map(|x| x / n).collect())
}

/// A batch of `rows` embedding vectors of identical dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    modality: Modality,
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    unit_norm: bool,
}

impl FeatureBatch {
    /// Builds a batch from per-sample rows; all rows must share a dimension.
    pub fn new(modality: Modality, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("feature batch"));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::EmptyInput("feature row"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "feature batch",
                });
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureBatch {
            modality,
            rows: rows.len(),
            dim,
            data,
            unit_norm: false,
        })
    }

    /// Builds a batch directly from a row-major buffer.
    pub fn from_flat(modality: Modality, rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptyInput("feature batch"));
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature batch",
            });
        }
        Ok(FeatureBatch {
            modality,
            rows,
            dim,
            data,
            unit_norm: false,
        })
    }

    /// Returns a copy with every row rescaled to unit norm.
    pub fn normalized(&self) -> Result<FeatureBatch> {
        let mut out = self.clone();
        for r in 0..self.rows {
            let start = r * self.dim;
            let row = &self.data[start..start + self.dim];
            let n = linalg::norm(row);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            for (dst, src) in out.data[start..start + self.dim].iter_mut().zip(row) {
                *dst = src / n;
            }
        }
        out.unit_norm = true;
        Ok(out)
    }

    /// Marks a batch already known to hold unit rows, verifying each norm.
    pub fn into_unit(mut self) -> Result<FeatureBatch> {
        for r in 0..self.rows {
            let n = linalg::norm(self.row(r));
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotNormalized);
            }
        }
        self.unit_norm = true;
        Ok(self)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_tensor_inputs(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    cap: usize,
) -> Result<(usize, usize)> {
    for batch in [t, i, p] {
        if !batch.is_unit_norm() {
            return Err(Error::NotNormalized);
        }
    }
    let b = t.len();
    let d = t.dim();
    for batch in [i, p] {
        if batch.len() != b {
            return Err(Error::BatchSizeMismatch {
                expected: b,
                got: batch.len(),
            });
        }
        if batch.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: batch.dim(),
            });
        }
    }
    if b > cap {
        return Err(Error::BatchTooLarge { b, cap });
    }
    Ok((b, d))
}

/// Dense `b x b x b` similarity scores with a fixed axis order:
/// axis 0 = text index, axis 1 = image index, axis 2 = point index.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    b: usize,
    metric: Metric,
    scores: Vec<f64>,
}

impl SimilarityTensor {
    fn new(b: usize, metric: Metric, scores: Vec<f64>) -> Self {
        debug_assert_eq!(scores.len(), b * b * b);
        SimilarityTensor { b, metric, scores }
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn score(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scores[(i * self.b + j) * self.b + k]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Pairwise cosine matrix: entry `(r, c)` is the dot of `a` row `r` with
/// `b` row `c`. Inputs must be normalized, so entries lie in [-1, 1].
pub fn cosine_pair_matrix(a: &FeatureBatch, b: &FeatureBatch) -> Result<linalg::Matrix> {
    if !a.is_unit_norm() || !b.is_unit_norm() {
        return Err(Error::NotNormalized);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut m = linalg::Matrix::zeros(a.len(), b.len());
    for r in 0..a.len() {
        for c in 0..b.len() {
            *m.at_mut(r, c) = linalg::dot(a.row(r), b.row(c));
        }
    }
    Ok(m)
}

/// Cosine tensor: score `(i, j, k)` is the mean of the three pairwise dot
/// products of text row `i`, image row `j`, point row `k`.
pub fn cosine_tensor(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
) -> Result<SimilarityTensor> {
    cosine_tensor_with_cap(t, i, p, DEFAULT_BATCH_CAP)
}

/// [`cosine_tensor`] with an explicit batch-size cap.
pub fn cosine_tensor_with_cap(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    cap: usize,
) -> Result<SimilarityTensor> {
    let (b, _) = check_tensor_inputs(t, i, p, cap)?;
    let ti = cosine_pair_matrix(t, i)?;
    let tp = cosine_pair_matrix(t, p)?;
    let ip = cosine_pair_matrix(i, p)?;
    let mut scores = vec![0.0; b * b * b];
    for ti_idx in 0..b {
        for im_idx in 0..b {
            let d_ti = ti.at(ti_idx, im_idx);
            for pt_idx in 0..b {
                scores[(ti_idx * b + im_idx) * b + pt_idx] =
                    (d_ti + tp.at(ti_idx, pt_idx) + ip.at(im_idx, pt_idx)) / 3.0;
            }
        }
    }
    Ok(SimilarityTensor::new(b, Metric::Cosine, scores))
}

/// Raw per-entry sums of the three pairwise Euclidean distances, before
/// being mapped into a similarity. Same axis order as the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSums {
    b: usize,
    values: Vec<f64>,
}

impl DistanceSums {
    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.b + j) * self.b + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Builds distance sums from a raw buffer; every entry must be a
    /// non-negative finite value.
    pub fn from_raw(b: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != b * b * b {
            return Err(Error::DimensionMismatch {
                expected: b * b * b,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("distance sums must be finite and >= 0"));
        }
        Ok(DistanceSums { b, values })
    }
}

/// L2 tensor: entry `(i, j, k)` is the sum of the three pairwise distances
/// between text row `i`, image row `j`, point row `k`. Distances are plain
/// L2 norms, not squared: squaring would make the score an affine function
/// of the cosine score and the two metrics would collapse into one.
pub fn l2_tensor(t: &FeatureBatch, i: &FeatureBatch, p: &FeatureBatch) -> Result<DistanceSums> {
    l2_tensor_with_cap(t, i, p, DEFAULT_BATCH_CAP)
}

/// [`l2_tensor`] with an explicit batch-size cap.
pub fn l2_tensor_with_cap(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    cap: usize,
) -> Result<DistanceSums> {
    let (b, _) = check_tensor_inputs(t, i, p, cap)?;
    let dist = |a: &FeatureBatch, b_: &FeatureBatch| {
        let mut m = vec![0.0; b * b];
        for r in 0..b {
            for c in 0..b {
                m[r * b + c] = linalg::distance(a.row(r), b_.row(c));
            }
        }
        m
    };
    let ti = dist(t, i);
    let tp = dist(t, p);
    let ip = dist(i, p);
    let mut values = vec![0.0; b * b * b];
    for ti_idx in 0..b {
        for im_idx in 0..b {
            let d_ti = ti[ti_idx * b + im_idx];
            for pt_idx in 0..b {
                values[(ti_idx * b + im_idx) * b + pt_idx] =
                    d_ti + tp[ti_idx * b + pt_idx] + ip[im_idx * b + pt_idx];
            }
        }
    }
    Ok(DistanceSums { b, values })
}

/// Largest achievable pairwise-distance sum for `q` unit vectors.
/// Only `q = 3` is supported; the extremal configuration for larger `q`
/// is a sphere-packing problem we do not solve here.
pub fn max_distance_sum(q: usize) -> Result<f64> {
    if q != 3 {
        return Err(Error::UnsupportedModalityCount { q });
    }
    Ok(MAX_DISTANCE_SUM_Q3)
}

/// Maps raw distance sums into similarities via `1 - s / max_sum`, so that
/// coincident features score 1 and the maximally spread configuration
/// scores 0. Strictly decreasing in the raw sum.
pub fn map_l2(raw: &DistanceSums, q: usize) -> Result<SimilarityTensor> {
    let l_max = max_distance_sum(q)?;
    let mut scores = Vec::with_capacity(raw.values.len());
    for &v in &raw.values {
        if v < 0.0 || v > l_max + 1e-9 {
            return Err(Error::invalid(format!(
                "distance sum {v} outside [0, {l_max}]"
            )));
        }
        // Rounding at the extremal configuration can land a hair outside
        // [0, 1]; snap it back so the advertised range is exact.
        scores.push((1.0 - v / l_max).clamp(0.0, 1.0));
    }
    Ok(SimilarityTensor::new(raw.b, Metric::L2Mapped, scores))
}

/// Builds the similarity tensor for the requested metric.
pub fn build_tensor(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    metric: Metric,
) -> Result<SimilarityTensor> {
    match metric {
        Metric::Cosine => cosine_tensor(t, i, p),
        Metric::L2Mapped => map_l2(&l2_tensor(t, i, p)?, 3),
    }
}

/// Number of cross-modal combinations a batch offers: the tensor scores
/// `b^q` of them, while `q(q-1)/2` pairwise matrices cover only that many
/// `b^2` grids. Returned as `(tensor, pairwise)`.
pub fn combination_counts(b: usize, q: usize) -> (u128, u128) {
    let tensor = (b as u128).pow(q as u32);
    let pairwise = (q as u128) * (q as u128 - 1) / 2 * (b as u128) * (b as u128);
    (tensor, pairwise)
}
