//! Exact analytic gradients for every loss variant, a central-difference
//! verification harness, and an independent brute-force loss oracle.
//!
//! Gradients are hand-derived layer by layer: softmax cross-entropy over
//! the flattened planes, the affine distance-sum map, unsquared pairwise
//! L2 distances (`d||a - b|| / da = (a - b) / ||a - b||`, defined as zero
//! at coincidence with a 1e-12 floor in the denominator), dot products,
//! row normalization, and the encoder stacks. The only contract is
//! exactness against central finite differences, which
//! [`finite_diff_check`] measures.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::PreparedRecord;
use crate::encoders::{self, EncoderSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{
    self, Coefficients, FlattenStrategy, LogitScale, LossBreakdown, Plane, Reduction,
};
use crate::similarity::{self, FeatureBatch, Metric, Modality};

/// Distance floor inside the L2 derivative denominator.
const DIST_FLOOR: f64 = 1e-12;

/// Flat name -> buffer view of a parameter collection; the shared currency
/// between encoders, gradients, the optimizer, and checkpoints.
pub type ParamMap = BTreeMap<String, Vec<f64>>;

/// Which loss a gradient computation differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Tensor {
        metric: Metric,
        strategy: FlattenStrategy,
    },
    Pairwise,
}

/// A fully specified loss: kind, component weights, and reduction.
/// The pairwise baseline ignores the reduction (it is already averaged
/// over the batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub coefficients: Coefficients,
    pub reduction: Reduction,
}

impl LossSpec {
    pub fn tensor(metric: Metric, strategy: FlattenStrategy) -> Self {
        LossSpec {
            kind: LossKind::Tensor { metric, strategy },
            coefficients: Coefficients::THIRDS,
            reduction: Reduction::Sum,
        }
    }

    pub fn pairwise(coefficients: Coefficients) -> Self {
        LossSpec {
            kind: LossKind::Pairwise,
            coefficients,
            reduction: Reduction::Sum,
        }
    }

    /// Loss value on already-normalized batches.
    pub fn value(
        &self,
        t: &FeatureBatch,
        i: &FeatureBatch,
        p: &FeatureBatch,
        scale: f64,
    ) -> Result<LossBreakdown> {
        match self.kind {
            LossKind::Tensor { metric, strategy } => loss::tensor_loss(
                t,
                i,
                p,
                metric,
                strategy,
                self.coefficients,
                scale,
                self.reduction,
            ),
            LossKind::Pairwise => loss::pairwise_loss(t, i, p, self.coefficients, scale),
        }
    }

    /// The four standard training variants, in reporting order.
    pub fn all_variants() -> [(&'static str, LossSpec); 4] {
        [
            (
                "ctp_mask",
                LossSpec::tensor(Metric::L2Mapped, FlattenStrategy::Mask),
            ),
            (
                "ctp_nm",
                LossSpec::tensor(Metric::L2Mapped, FlattenStrategy::Nm),
            ),
            (
                "ctp_cosine",
                LossSpec::tensor(Metric::Cosine, FlattenStrategy::Mask),
            ),
            ("pairwise", LossSpec::pairwise(Coefficients::THIRDS)),
        ]
    }
}

/// Named gradient buffers, one per parameter, shapes matching exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    map: BTreeMap<String, Vec<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    /// Zero buffers shaped like an existing parameter map.
    pub fn zeros_like(params: &BTreeMap<String, Vec<f64>>) -> Self {
        GradientSet {
            map: params
                .iter()
                .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.map.insert(name.into(), values);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.map.iter()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.map
    }

    pub fn as_map_mut(&mut self) -> &mut BTreeMap<String, Vec<f64>> {
        &mut self.map
    }

    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }

    /// Global L2 norm over every buffer, for gradient clipping.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_all(&mut self, factor: f64) {
        for buffer in self.map.values_mut() {
            for g in buffer.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map
            .values()
            .flat_map(|v| v.iter())
            .all(|g| g.is_finite())
    }
}

/// Gradients with respect to the raw (pre-normalization) feature batches
/// and the log of the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub text: Vec<f64>,
    pub image: Vec<f64>,
    pub point: Vec<f64>,
    pub log_scale: f64,
}

/// Backward through row normalization: given the raw row and the gradient
/// with respect to the unit row, returns the gradient with respect to the
/// raw row.
fn normalization_backward(raw: &[f64], d_unit: &[f64]) -> Vec<f64> {
    let n = linalg::norm(raw);
    debug_assert!(n > 0.0);
    let unit: Vec<f64> = raw.iter().map(|x| x / n).collect();
    let projection = linalg::dot(d_unit, &unit);
    d_unit
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - projection * u) / n)
        .collect()
}

/// Softmax probabilities of `scale * logits` with max subtraction.
fn softmax_scaled(logits: &[f64], scale: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &l| m.max(scale * l));
    let mut probs: Vec<f64> = logits.iter().map(|&l| (scale * l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Forward value plus gradients with respect to the *unit* feature rows
/// and the scale multiplier. Rows are `b x d` flat buffers.
#[allow(clippy::type_complexity)]
fn unit_feature_backward(
    spec: &LossSpec,
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    scale: f64,
) -> Result<(LossBreakdown, [Vec<f64>; 3], f64)> {
    match spec.kind {
        LossKind::Tensor { metric, strategy } => tensor_backward(
            t,
            i,
            p,
            metric,
            strategy,
            spec.coefficients,
            scale,
            spec.reduction,
        ),
        LossKind::Pairwise => pairwise_backward(t, i, p, spec.coefficients, scale),
    }
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::type_complexity)]
fn tensor_backward(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    metric: Metric,
    strategy: FlattenStrategy,
    coefficients: Coefficients,
    scale: f64,
    reduction: Reduction,
) -> Result<(LossBreakdown, [Vec<f64>; 3], f64)> {
    coefficients.validate()?;
    let b = t.len();
    let d = t.dim();
    let tensor = similarity::build_tensor(t, i, p, metric)?;

    // Cross-entropy over every flattened slice; scatter logit gradients
    // back to tensor coordinates.
    let mut d_scores = vec![0.0; b * b * b];
    let mut d_scale = 0.0;
    let mut parts = [0.0f64; 3];
    let coeff = coefficients.as_array();
    let factor = reduction.factor(b);
    for (plane_idx, plane) in Plane::ALL.iter().enumerate() {
        let weight = coeff[plane_idx] * factor;
        for ell in 0..b {
            let flat = loss::flatten_plane(&tensor, *plane, ell, strategy)?;
            parts[plane_idx] += loss::cross_entropy(&flat.logits, flat.target_pos, scale)?;
            if weight == 0.0 {
                continue;
            }
            let probs = softmax_scaled(&flat.logits, scale);
            for (m, (&(u, v), &prob)) in flat.index_map.iter().zip(&probs).enumerate() {
                let indicator = if m == flat.target_pos { 1.0 } else { 0.0 };
                let g = weight * scale * (prob - indicator);
                let (ti, im, pt) = plane.coords(ell, u, v);
                d_scores[(ti * b + im) * b + pt] += g;
                d_scale += weight * (prob - indicator) * flat.logits[m];
            }
        }
        parts[plane_idx] *= factor;
    }
    let total = coeff[0] * parts[0] + coeff[1] * parts[1] + coeff[2] * parts[2];
    let breakdown = LossBreakdown {
        total,
        parts,
        coefficients,
    };

    // Tensor scores decompose into three pairwise terms; pool the score
    // gradients onto each pair matrix first.
    let mut d_ti = vec![0.0; b * b];
    let mut d_tp = vec![0.0; b * b];
    let mut d_ip = vec![0.0; b * b];
    let pair_factor = match metric {
        Metric::Cosine => 1.0 / 3.0,
        Metric::L2Mapped => -1.0 / similarity::max_distance_sum(3)?,
    };
    for ti in 0..b {
        for im in 0..b {
            let base = (ti * b + im) * b;
            for pt in 0..b {
                let g = d_scores[base + pt] * pair_factor;
                if g != 0.0 {
                    d_ti[ti * b + im] += g;
                    d_tp[ti * b + pt] += g;
                    d_ip[im * b + pt] += g;
                }
            }
        }
    }

    let mut d_t = vec![0.0; b * d];
    let mut d_i = vec![0.0; b * d];
    let mut d_p = vec![0.0; b * d];
    let spread =
        |d_pair: &[f64], a: &FeatureBatch, b_: &FeatureBatch, d_a: &mut [f64], d_b: &mut [f64]| {
            for r in 0..b {
                for c in 0..b {
                    let g = d_pair[r * b + c];
                    if g == 0.0 {
                        continue;
                    }
                    match metric {
                        Metric::Cosine => {
                            linalg::axpy(g, b_.row(c), &mut d_a[r * d..(r + 1) * d]);
                            linalg::axpy(g, a.row(r), &mut d_b[c * d..(c + 1) * d]);
                        }
                        Metric::L2Mapped => {
                            let dist = linalg::distance(a.row(r), b_.row(c)).max(DIST_FLOOR);
                            for (x, (av, bv)) in a.row(r).iter().zip(b_.row(c)).enumerate() {
                                let u = (av - bv) / dist;
                                d_a[r * d + x] += g * u;
                                d_b[c * d + x] -= g * u;
                            }
                        }
                    }
                }
            }
        };
    spread(&d_ti, t, i, &mut d_t, &mut d_i);
    spread(&d_tp, t, p, &mut d_t, &mut d_p);
    spread(&d_ip, i, p, &mut d_i, &mut d_p);

    Ok((breakdown, [d_t, d_i, d_p], d_scale))
}

#[allow(clippy::type_complexity)]
fn pairwise_backward(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    coefficients: Coefficients,
    scale: f64,
) -> Result<(LossBreakdown, [Vec<f64>; 3], f64)> {
    coefficients.validate()?;
    let b = t.len();
    let d = t.dim();
    let coeff = coefficients.as_array();
    let mut parts = [0.0f64; 3];
    let mut d_t = vec![0.0; b * d];
    let mut d_i = vec![0.0; b * d];
    let mut d_p = vec![0.0; b * d];
    let mut d_scale = 0.0;

    // Pairs in breakdown order: (text, image), (text, point), (point, image).
    let mut run_pair = |a: &FeatureBatch,
                        b_: &FeatureBatch,
                        d_a: &mut [f64],
                        d_b: &mut [f64],
                        weight: f64|
     -> Result<f64> {
        let part = loss::clip_pair_loss(a, b_, scale)?;
        if weight == 0.0 || b == 1 {
            return Ok(part);
        }
        let m = similarity::cosine_pair_matrix(a, b_)?;
        let half = weight * 0.5 / b as f64;
        let mut d_m = vec![0.0; b * b];
        for r in 0..b {
            let probs = softmax_scaled(m.row(r), scale);
            for (c, &prob) in probs.iter().enumerate() {
                let indicator = if c == r { 1.0 } else { 0.0 };
                d_m[r * b + c] += half * scale * (prob - indicator);
                d_scale += half * (prob - indicator) * m.at(r, c);
            }
        }
        let mut col = vec![0.0; b];
        for c in 0..b {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = m.at(r, c);
            }
            let probs = softmax_scaled(&col, scale);
            for (r, &prob) in probs.iter().enumerate() {
                let indicator = if r == c { 1.0 } else { 0.0 };
                d_m[r * b + c] += half * scale * (prob - indicator);
                d_scale += half * (prob - indicator) * m.at(r, c);
            }
        }
        for r in 0..b {
            for c in 0..b {
                let g = d_m[r * b + c];
                if g != 0.0 {
                    linalg::axpy(g, b_.row(c), &mut d_a[r * d..(r + 1) * d]);
                    linalg::axpy(g, a.row(r), &mut d_b[c * d..(c + 1) * d]);
                }
            }
        }
        Ok(part)
    };

    parts[0] = run_pair(t, i, &mut d_t, &mut d_i, coeff[0])?;
    parts[1] = run_pair(t, p, &mut d_t, &mut d_p, coeff[1])?;
    parts[2] = run_pair(p, i, &mut d_p, &mut d_i, coeff[2])?;

    let total = coeff[0] * parts[0] + coeff[1] * parts[1] + coeff[2] * parts[2];
    Ok((
        LossBreakdown {
            total,
            parts,
            coefficients,
        },
        [d_t, d_i, d_p],
        d_scale,
    ))
}

/// Loss value and exact gradients with respect to the raw
/// (pre-normalization) feature batches and the log of the logit scale.
pub fn loss_and_grad_features(
    spec: &LossSpec,
    t_raw: &FeatureBatch,
    i_raw: &FeatureBatch,
    p_raw: &FeatureBatch,
    scale: &LogitScale,
) -> Result<(f64, FeatureGrads)> {
    let t = t_raw.normalized()?;
    let i = i_raw.normalized()?;
    let p = p_raw.normalized()?;
    let s = scale.value();
    let (breakdown, d_units, d_scale) = unit_feature_backward(spec, &t, &i, &p, s)?;
    let b = t.len();
    let d = t.dim();
    let chain = |raw: &FeatureBatch, d_unit: &[f64]| {
        let mut out = vec![0.0; b * d];
        for r in 0..b {
            let d_raw = normalization_backward(raw.row(r), &d_unit[r * d..(r + 1) * d]);
            out[r * d..(r + 1) * d].copy_from_slice(&d_raw);
        }
        out
    };
    Ok((
        breakdown.total,
        FeatureGrads {
            text: chain(t_raw, &d_units[0]),
            image: chain(i_raw, &d_units[1]),
            point: chain(p_raw, &d_units[2]),
            log_scale: d_scale * s,
        },
    ))
}

/// Loss value and exact gradients with respect to every encoder parameter
/// and the log of the logit scale (key `logit_scale`), end to end through
/// encoding, normalization, and the loss.
pub fn loss_and_grad_params(
    spec: &LossSpec,
    encoders: &EncoderSet,
    records: &[PreparedRecord],
    scale: &LogitScale,
) -> Result<(f64, GradientSet)> {
    let ((t, i, p), trace) = encoders::encode_batch_traced(encoders, records)?;
    let s = scale.value();
    let (breakdown, d_units, d_scale) = unit_feature_backward(spec, &t, &i, &p, s)?;

    let mut grads = GradientSet::zeros_like(&encoders.to_param_map());
    let b = records.len();
    let d = t.dim();
    for r in 0..b {
        let d_raw_t =
            normalization_backward(&trace.text[r].output, &d_units[0][r * d..(r + 1) * d]);
        encoders::mlp_backward(
            &encoders.text,
            &trace.text[r],
            &d_raw_t,
            "text",
            grads.as_map_mut(),
        );

        let d_raw_i =
            normalization_backward(&trace.image[r].output, &d_units[1][r * d..(r + 1) * d]);
        encoders::mlp_backward(
            &encoders.image,
            &trace.image[r],
            &d_raw_i,
            "image",
            grads.as_map_mut(),
        );

        let d_raw_p =
            normalization_backward(&trace.point[r].head.output, &d_units[2][r * d..(r + 1) * d]);
        encoders::set_backward(
            &encoders.point,
            &trace.point[r],
            &d_raw_p,
            "point",
            grads.as_map_mut(),
        );
    }
    grads.insert("logit_scale", vec![d_scale * s]);
    Ok((breakdown.total, grads))
}

/// Gradient magnitude above which the central-difference quotient is
/// meaningfully resolvable in double precision at the default step size;
/// see [`GradCheckReport::max_rel_error_strong`].
pub const STRONG_GRAD_THRESHOLD: f64 = 1e-3;

/// Result of one finite-difference sweep. Relative error per coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`; the report
/// keeps the per-parameter maxima and the global maximum.
///
/// `max_rel_error_strong` restricts the maximum to coordinates whose
/// gradient magnitude is at least [`STRONG_GRAD_THRESHOLD`]. Below that,
/// the quotient's own rounding noise (about 1e-10 absolute at the default
/// step) dominates the relative error, so the unrestricted maximum is a
/// measurement of the difference quotient rather than of the analytic
/// gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_rel_error_strong: f64,
    pub per_parameter: BTreeMap<String, f64>,
    pub epsilon: f64,
}

/// Compares analytic gradients against central differences of `eval`,
/// coordinate by coordinate over every buffer in `params`.
pub fn finite_diff_check<F>(
    mut eval: F,
    params: &BTreeMap<String, Vec<f64>>,
    analytic: &GradientSet,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&BTreeMap<String, Vec<f64>>) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut working = params.clone();
    let mut per_parameter = BTreeMap::new();
    let mut max_rel_error = 0.0f64;
    let mut max_rel_error_strong = 0.0f64;
    for (name, values) in params {
        let analytic_buf = analytic
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing analytic gradient for {name}")))?;
        if analytic_buf.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                got: analytic_buf.len(),
            });
        }
        let mut worst = 0.0f64;
        for coord in 0..values.len() {
            let original = values[coord];
            working.get_mut(name).expect("cloned key")[coord] = original + epsilon;
            let plus = eval(&working)?;
            working.get_mut(name).expect("cloned key")[coord] = original - epsilon;
            let minus = eval(&working)?;
            working.get_mut(name).expect("cloned key")[coord] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: "perturbed loss",
                });
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic_buf[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            if a.abs().max(numeric.abs()) >= STRONG_GRAD_THRESHOLD {
                max_rel_error_strong = max_rel_error_strong.max(rel);
            }
        }
        max_rel_error = max_rel_error.max(worst);
        per_parameter.insert(name.clone(), worst);
    }
    Ok(GradCheckReport {
        max_rel_error,
        max_rel_error_strong,
        per_parameter,
        epsilon,
    })
}

fn batches_from_map(
    map: &BTreeMap<String, Vec<f64>>,
    b: usize,
    d: usize,
) -> Result<(FeatureBatch, FeatureBatch, FeatureBatch, LogitScale)> {
    let fetch = |name: &str| -> Result<&Vec<f64>> {
        map.get(name)
            .ok_or_else(|| Error::invalid(format!("missing buffer {name}")))
    };
    let t = FeatureBatch::from_flat(Modality::Text, b, d, fetch("text")?.clone())?;
    let i = FeatureBatch::from_flat(Modality::Image, b, d, fetch("image")?.clone())?;
    let p = FeatureBatch::from_flat(Modality::Point, b, d, fetch("point")?.clone())?;
    let scale = LogitScale::from_log(fetch("logit_scale")?[0]);
    Ok((t, i, p, scale))
}

/// Finite-difference check of [`loss_and_grad_features`] on raw batches.
pub fn check_feature_grads(
    spec: &LossSpec,
    t_raw: &FeatureBatch,
    i_raw: &FeatureBatch,
    p_raw: &FeatureBatch,
    scale: &LogitScale,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let b = t_raw.len();
    let d = t_raw.dim();
    let mut params = BTreeMap::new();
    params.insert("text".to_string(), t_raw.data().to_vec());
    params.insert("image".to_string(), i_raw.data().to_vec());
    params.insert("point".to_string(), p_raw.data().to_vec());
    params.insert("logit_scale".to_string(), vec![scale.log_value()]);

    let (_, feature_grads) = loss_and_grad_features(spec, t_raw, i_raw, p_raw, scale)?;
    let mut analytic = GradientSet::new();
    analytic.insert("text", feature_grads.text);
    analytic.insert("image", feature_grads.image);
    analytic.insert("point", feature_grads.point);
    analytic.insert("logit_scale", vec![feature_grads.log_scale]);

    let spec = *spec;
    finite_diff_check(
        move |map| {
            let (t, i, p, s) = batches_from_map(map, b, d)?;
            let value = spec.value(
                &t.normalized()?,
                &i.normalized()?,
                &p.normalized()?,
                s.value(),
            )?;
            Ok(value.total)
        },
        &params,
        &analytic,
        epsilon,
    )
}

/// Finite-difference check of [`loss_and_grad_params`], end to end through
/// the encoders.
pub fn check_param_grads(
    spec: &LossSpec,
    encoders: &EncoderSet,
    records: &[PreparedRecord],
    scale: &LogitScale,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut params = encoders.to_param_map();
    params.insert("logit_scale".to_string(), vec![scale.log_value()]);
    let (_, analytic) = loss_and_grad_params(spec, encoders, records, scale)?;

    let arch = encoders.arch.clone();
    let spec = *spec;
    let records = records.to_vec();
    finite_diff_check(
        move |map| {
            let set = EncoderSet::from_param_map(&arch, map)?;
            let s = LogitScale::from_log(map["logit_scale"][0]);
            let (t, i, p) = encoders::encode_batch(&set, &records)?;
            Ok(spec.value(&t, &i, &p, s.value())?.total)
        },
        &params,
        &analytic,
        epsilon,
    )
}

/// Recomputes the total tensor loss by straight-line enumeration of all
/// `b^3` entries, sharing no code with the tensor or loss modules. This is
/// the oracle the fast path is checked against, so it stays deliberately
/// naive; batches beyond 16 are refused.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_loss(
    t: &FeatureBatch,
    i: &FeatureBatch,
    p: &FeatureBatch,
    metric: Metric,
    strategy: FlattenStrategy,
    coefficients: Coefficients,
    scale: f64,
    reduction: Reduction,
) -> Result<f64> {
    coefficients.validate()?;
    let b = t.len();
    if b > 16 {
        return Err(Error::invalid("oracle scale is b <= 16"));
    }
    if i.len() != b || p.len() != b {
        return Err(Error::BatchSizeMismatch {
            expected: b,
            got: i.len().max(p.len()),
        });
    }
    let d = t.dim();
    if i.dim() != d || p.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: i.dim().max(p.dim()),
        });
    }

    // Own normalization.
    let unit_rows = |batch: &FeatureBatch| -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(b);
        for r in 0..b {
            let row = batch.row(r);
            let mut sq = 0.0;
            for &x in row {
                sq += x * x;
            }
            let n = sq.sqrt();
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            rows.push(row.iter().map(|x| x / n).collect());
        }
        Ok(rows)
    };
    let t_hat = unit_rows(t)?;
    let i_hat = unit_rows(i)?;
    let p_hat = unit_rows(p)?;

    let dot = |a: &[f64], b_: &[f64]| {
        let mut s = 0.0;
        for idx in 0..a.len() {
            s += a[idx] * b_[idx];
        }
        s
    };
    let dist = |a: &[f64], b_: &[f64]| {
        let mut s = 0.0;
        for idx in 0..a.len() {
            let diff = a[idx] - b_[idx];
            s += diff * diff;
        }
        s.sqrt()
    };
    let l_max = 3.0 * 3f64.sqrt();
    let score = |ti: usize, im: usize, pt: usize| -> f64 {
        match metric {
            Metric::Cosine => {
                (dot(&t_hat[ti], &i_hat[im])
                    + dot(&t_hat[ti], &p_hat[pt])
                    + dot(&i_hat[im], &p_hat[pt]))
                    / 3.0
            }
            Metric::L2Mapped => {
                1.0 - (dist(&t_hat[ti], &i_hat[im])
                    + dist(&t_hat[ti], &p_hat[pt])
                    + dist(&i_hat[im], &p_hat[pt]))
                    / l_max
            }
        }
    };

    let masked = matches!(strategy, FlattenStrategy::Mask);
    let mut plane_totals = [0.0f64; 3];
    for (family, plane_total) in plane_totals.iter_mut().enumerate() {
        for ell in 0..b {
            let mut logits = Vec::with_capacity(b * b);
            let mut target = usize::MAX;
            for u in 0..b {
                for v in 0..b {
                    if masked && ((u == ell) ^ (v == ell)) {
                        continue;
                    }
                    if u == ell && v == ell {
                        target = logits.len();
                    }
                    let value = match family {
                        0 => score(ell, u, v),
                        1 => score(u, ell, v),
                        _ => score(u, v, ell),
                    };
                    logits.push(value);
                }
            }
            // Cross-entropy, written out longhand.
            let mut max = f64::NEG_INFINITY;
            for &l in &logits {
                if scale * l > max {
                    max = scale * l;
                }
            }
            let mut sum = 0.0;
            for &l in &logits {
                sum += (scale * l - max).exp();
            }
            *plane_total += (sum.ln() - (scale * logits[target] - max)).max(0.0);
        }
        if matches!(reduction, Reduction::Mean) {
            *plane_total /= b as f64;
        }
    }
    let c = coefficients.as_array();
    Ok(c[0] * plane_totals[0] + c[1] * plane_totals[1] + c[2] * plane_totals[2])
}
