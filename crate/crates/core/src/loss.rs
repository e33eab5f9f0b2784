//! Contrastive losses over the similarity tensor and the pairwise baseline.
//!
//! Each 2D slice of the tensor orthogonal to one axis is flattened into a
//! logits vector whose target is the matched-triplet entry on the slice's
//! diagonal; cross-entropy over those logits, summed over slices, gives a
//! plane loss. The total tensor loss is a weighted sum of the three plane
//! losses. Two flattening strategies exist: `nm` keeps all `b^2` entries of
//! a slice, `mask` drops the `2(b-1)` entries that duplicate a feature
//! against the fixed axis, keeping `b^2 - 2b + 2`.
//!
//! The mask rule deserves one note: dropping *every* duplicated-index entry
//! of a slice would keep `b^2 - 3b + 3` values; only dropping entries where
//! exactly one varying index collides with the fixed index reproduces the
//! `b^2 - 2b + 2` count, so that is the rule implemented here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{self, FeatureBatch, Metric, SimilarityTensor};

/// Tensor slice family, named by the two varying axes
/// (axis 0 = text `i`, axis 1 = image `j`, axis 2 = point `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    /// Image and point vary; the text index is fixed per slice.
    Jk,
    /// Text and point vary; the image index is fixed per slice.
    Ik,
    /// Text and image vary; the point index is fixed per slice.
    Ij,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Jk, Plane::Ik, Plane::Ij];

    pub fn label(self) -> &'static str {
        match self {
            Plane::Jk => "jk",
            Plane::Ik => "ik",
            Plane::Ij => "ij",
        }
    }

    /// Tensor coordinates of plane-local position `(u, v)` on slice `ell`.
    #[inline]
    pub fn coords(self, ell: usize, u: usize, v: usize) -> (usize, usize, usize) {
        match self {
            Plane::Jk => (ell, u, v),
            Plane::Ik => (u, ell, v),
            Plane::Ij => (u, v, ell),
        }
    }
}

/// How a tensor slice becomes a logits vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlattenStrategy {
    /// No masking: row-major flattening of all `b^2` entries.
    Nm,
    /// Mask entries whose single varying-index collision duplicates a
    /// feature against the fixed axis; keeps `b^2 - 2b + 2` entries.
    Mask,
}

impl FlattenStrategy {
    /// Logits-vector length for batch size `b`.
    pub fn flat_len(self, b: usize) -> usize {
        match self {
            FlattenStrategy::Nm => b * b,
            FlattenStrategy::Mask => b * b + 2 - 2 * b,
        }
    }

    #[inline]
    fn keeps(self, ell: usize, u: usize, v: usize) -> bool {
        match self {
            FlattenStrategy::Nm => true,
            FlattenStrategy::Mask => !((u == ell) ^ (v == ell)),
        }
    }
}

/// One flattened tensor slice: logits, the target position, and the
/// plane-local `(u, v)` coordinate each logit came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedPlane {
    pub logits: Vec<f64>,
    pub target_pos: usize,
    pub index_map: Vec<(usize, usize)>,
    pub strategy: FlattenStrategy,
}

/// Flattens slice `ell` of `plane` into a logits vector in row-major
/// `(u, v)` order. The target entry `(ell, ell)` is always kept.
pub fn flatten_plane(
    tensor: &SimilarityTensor,
    plane: Plane,
    ell: usize,
    strategy: FlattenStrategy,
) -> Result<FlattenedPlane> {
    let b = tensor.batch_size();
    if ell >= b {
        return Err(Error::IndexOutOfRange { index: ell, len: b });
    }
    let mut logits = Vec::with_capacity(strategy.flat_len(b));
    let mut index_map = Vec::with_capacity(strategy.flat_len(b));
    let mut target_pos = usize::MAX;
    for u in 0..b {
        for v in 0..b {
            if !strategy.keeps(ell, u, v) {
                continue;
            }
            if u == ell && v == ell {
                target_pos = logits.len();
            }
            let (i, j, k) = plane.coords(ell, u, v);
            logits.push(tensor.score(i, j, k));
            index_map.push((u, v));
        }
    }
    debug_assert_eq!(logits.len(), strategy.flat_len(b));
    debug_assert_ne!(target_pos, usize::MAX);
    Ok(FlattenedPlane {
        logits,
        target_pos,
        index_map,
        strategy,
    })
}

/// `-log softmax(scale * logits)[target]`, computed with max subtraction.
pub fn cross_entropy(logits: &[f64], target: usize, scale: f64) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("logits"));
    }
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "scale must be positive, got {scale}"
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite { context: "logits" });
    }
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &l| m.max(scale * l));
    let log_sum: f64 = logits
        .iter()
        .map(|&l| (scale * l - max).exp())
        .sum::<f64>()
        .ln();
    // Clamp away the tiny negative that rounding can leave on a one-entry
    // or fully-dominated softmax.
    Ok((log_sum - (scale * logits[target] - max)).max(0.0))
}

/// Whether a plane loss sums its per-slice terms or averages them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Sum over the `b` slices (the default).
    Sum,
    /// Divide the sum by `b`, for batch-size-independent tuning.
    Mean,
}

impl Reduction {
    pub(crate) fn factor(self, b: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / b as f64,
        }
    }
}

/// Cross-entropy over every flattened slice of one plane family.
pub fn plane_loss(
    tensor: &SimilarityTensor,
    plane: Plane,
    strategy: FlattenStrategy,
    scale: f64,
    reduction: Reduction,
) -> Result<f64> {
    let b = tensor.batch_size();
    let mut total = 0.0;
    for ell in 0..b {
        let flat = flatten_plane(tensor, plane, ell, strategy)?;
        total += cross_entropy(&flat.logits, flat.target_pos, scale)?;
    }
    Ok(total * reduction.factor(b))
}

/// Non-negative weights for the three loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients(pub f64, pub f64, pub f64);

impl Coefficients {
    /// Equal thirds, the default for training every encoder jointly.
    pub const THIRDS: Coefficients = Coefficients(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    /// Point-encoder-only preset for the pairwise baseline: no text-image
    /// term, halves on the two point-involving pairs.
    pub const POINT_ONLY: Coefficients = Coefficients(0.0, 0.5, 0.5);

    pub fn validate(&self) -> Result<()> {
        for c in [self.0, self.1, self.2] {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!(
                    "coefficients must be finite and >= 0, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.0, self.1, self.2]
    }
}

/// A total loss together with its three unweighted components.
///
/// For the tensor loss the parts are the `(jk, ik, ij)` plane losses; for
/// the pairwise baseline they are the `(text-image, text-point,
/// point-image)` pair losses. `total` is always the coefficient-weighted
/// sum of `parts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub parts: [f64; 3],
    pub coefficients: Coefficients,
}

impl LossBreakdown {
    fn combine(parts: [f64; 3], coefficients: Coefficients) -> Self {
        let c = coefficients.as_array();
        LossBreakdown {
            total: c[0] * parts[0] + c[1] * parts[1] + c[2] * parts[2],
            parts,
            coefficients,
        }
    }

    /// Component for one plane family (tensor-loss breakdowns only).
    pub fn plane(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Jk => self.parts[0],
            Plane::Ik => self.parts[1],
            Plane::Ij => self.parts[2],
        }
    }
}

/// Total tensor loss: builds the similarity tensor for `metric`, computes
/// the three plane losses under `strategy`, and combines them with
/// `coefficients` (conventionally all 1/3).
#[allow(clippy::too_many_arguments)]
pub fn tensor_loss(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    metric: Metric,
    strategy: FlattenStrategy,
    coefficients: Coefficients,
    scale: f64,
    reduction: Reduction,
) -> Result<LossBreakdown> {
    coefficients.validate()?;
    let tensor = similarity::build_tensor(t, i, p, metric)?;
    let parts = [
        plane_loss(&tensor, Plane::Jk, strategy, scale, reduction)?,
        plane_loss(&tensor, Plane::Ik, strategy, scale, reduction)?,
        plane_loss(&tensor, Plane::Ij, strategy, scale, reduction)?,
    ];
    Ok(LossBreakdown::combine(parts, coefficients))
}

/// Two-modality symmetric contrastive loss on the scaled cosine matrix:
/// mean of the row-wise and column-wise cross-entropies, each with
/// diagonal targets and averaged over the batch.
pub fn clip_pair_loss(a: &FeatureBatch, b: &FeatureBatch, scale: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::BatchSizeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let m = similarity::cosine_pair_matrix(a, b)?;
    let n = a.len();
    let mut row_total = 0.0;
    let mut col_total = 0.0;
    let mut col = vec![0.0; n];
    for r in 0..n {
        row_total += cross_entropy(m.row(r), r, scale)?;
    }
    for c in 0..n {
        for (r, slot) in col.iter_mut().enumerate() {
            *slot = m.at(r, c);
        }
        col_total += cross_entropy(&col, c, scale)?;
    }
    Ok(0.5 * (row_total + col_total) / n as f64)
}

/// Pairwise baseline: coefficient-weighted sum of the three two-modality
/// contrastive losses, ordered `(text-image, text-point, point-image)`.
pub fn pairwise_loss(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    coefficients: Coefficients,
    scale: f64,
) -> Result<LossBreakdown> {
    coefficients.validate()?;
    let parts = [
        clip_pair_loss(t, i, scale)?,
        clip_pair_loss(t, p, scale)?,
        clip_pair_loss(p, i, scale)?,
    ];
    Ok(LossBreakdown::combine(parts, coefficients))
}

/// Learnable logit scale, stored as a log so positivity is structural.
/// The effective multiplier is `exp(log_value)`, initialized from a
/// temperature (0.07 by convention) and kept at or below 100 by clamping
/// the log after each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitScale {
    log_value: f64,
}

impl LogitScale {
    pub const MAX_SCALE: f64 = 100.0;

    /// Scale initialized to `1 / temperature`.
    pub fn from_temperature(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(LogitScale {
            log_value: (1.0 / temperature).ln(),
        })
    }

    pub fn from_log(log_value: f64) -> Self {
        LogitScale { log_value }
    }

    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    /// Effective multiplier applied to similarity scores.
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    /// Clamps the log so the multiplier stays within (0, 100].
    pub fn clamp(&mut self) {
        self.log_value = self.log_value.min(Self::MAX_SCALE.ln());
    }
}

impl Default for LogitScale {
    fn default() -> Self {
        LogitScale::from_temperature(0.07).expect("constant temperature is positive")
    }
}
