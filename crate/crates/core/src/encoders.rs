//! Toy trainable encoders: plain MLPs for the text and image raw vectors
//! and a permutation-invariant set encoder for point clouds.
//!
//! The set encoder applies a shared MLP to every valid point, max-pools
//! coordinate-wise over valid points only, and finishes with a head MLP.
//! Pooling over a masked set makes the two properties the rest of the
//! toolkit relies on structural: permutation invariance and padding
//! neutrality.

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::PreparedRecord;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::similarity::{FeatureBatch, FeatureVector, Modality};

/// Activation applied between MLP layers (the output layer is linear).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
}

/// One affine layer: `out x in` weights plus an `out` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// A stack of affine layers with rectifier activations in between and a
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").weight.rows()
    }

    fn validate_chain(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyInput("mlp layers"));
        }
        for w in self.layers.windows(2) {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].weight.rows(),
                    got: w[1].weight.cols(),
                });
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weight.rows(),
                    got: layer.bias.len(),
                });
            }
        }
        Ok(())
    }
}

/// Point-cloud encoder: a per-point MLP (input dimension 3), masked max
/// pooling, then a head MLP producing the shared embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEncoderParams {
    pub point_mlp: MlpParams,
    pub head_mlp: MlpParams,
}

/// A fixed-size point cloud with a validity mask; padded rows are exactly
/// zero and marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSample {
    points: Vec<[f64; 3]>,
    valid_mask: Vec<bool>,
}

impl PointCloudSample {
    pub fn new(points: Vec<[f64; 3]>, valid_mask: Vec<bool>) -> Result<Self> {
        if points.len() != valid_mask.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: valid_mask.len(),
            });
        }
        if !valid_mask.iter().any(|&m| m) {
            return Err(Error::NoValidPoints);
        }
        for (point, &valid) in points.iter().zip(&valid_mask) {
            if point.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    context: "point cloud",
                });
            }
            if !valid && point.iter().any(|&c| c != 0.0) {
                return Err(Error::invalid("padded point rows must be exactly zero"));
            }
        }
        Ok(PointCloudSample { points, valid_mask })
    }

    /// All rows valid, no padding.
    pub fn dense(points: Vec<[f64; 3]>) -> Result<Self> {
        let mask = vec![true; points.len()];
        PointCloudSample::new(points, mask)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Runs the affine + rectifier chain; the final layer stays linear.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<FeatureVector> {
    let out = mlp_forward_raw(params, x)?;
    FeatureVector::new(out)
}

fn mlp_forward_raw(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    params.validate_chain()?;
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut h = x.to_vec();
    for (idx, layer) in params.layers.iter().enumerate() {
        let mut z = layer.weight.matvec(&h)?;
        for (zi, bi) in z.iter_mut().zip(&layer.bias) {
            *zi += bi;
        }
        if idx != last {
            for zi in z.iter_mut() {
                *zi = relu(*zi);
            }
        }
        h = z;
    }
    Ok(h)
}

/// Forward cache for one MLP application: the input of every layer plus
/// each layer's pre-activation.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace {
    pub inputs: Vec<Vec<f64>>,
    pub preacts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub(crate) fn mlp_forward_traced(params: &MlpParams, x: &[f64]) -> Result<MlpTrace> {
    params.validate_chain()?;
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut h = x.to_vec();
    for (idx, layer) in params.layers.iter().enumerate() {
        inputs.push(h.clone());
        let mut z = layer.weight.matvec(&h)?;
        for (zi, bi) in z.iter_mut().zip(&layer.bias) {
            *zi += bi;
        }
        preacts.push(z.clone());
        if idx != last {
            for zi in z.iter_mut() {
                *zi = relu(*zi);
            }
        }
        h = z;
    }
    Ok(MlpTrace {
        inputs,
        preacts,
        output: h,
    })
}

/// Backpropagates `d_out` through a traced MLP application, accumulating
/// parameter gradients into `grads` under `prefix.<layer>.{weight,bias}`
/// and returning the gradient with respect to the input.
pub(crate) fn mlp_backward(
    params: &MlpParams,
    trace: &MlpTrace,
    d_out: &[f64],
    prefix: &str,
    grads: &mut BTreeMap<String, Vec<f64>>,
) -> Vec<f64> {
    let last = params.layers.len() - 1;
    let mut delta = d_out.to_vec();
    for idx in (0..params.layers.len()).rev() {
        let layer = &params.layers[idx];
        if idx != last {
            // The rectifier sat between this layer's output and the next
            // layer's input; gate the incoming gradient by its slope.
            for (d, z) in delta.iter_mut().zip(&trace.preacts[idx]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let w_grad = grads
            .entry(format!("{prefix}.{idx}.weight"))
            .or_insert_with(|| vec![0.0; layer.weight.rows() * layer.weight.cols()]);
        let cols = layer.weight.cols();
        for (r, dr) in delta.iter().enumerate() {
            let row = &mut w_grad[r * cols..(r + 1) * cols];
            for (c, inp) in trace.inputs[idx].iter().enumerate() {
                row[c] += dr * inp;
            }
        }
        let b_grad = grads
            .entry(format!("{prefix}.{idx}.bias"))
            .or_insert_with(|| vec![0.0; layer.bias.len()]);
        for (g, d) in b_grad.iter_mut().zip(&delta) {
            *g += d;
        }
        let mut d_in = vec![0.0; cols];
        layer.weight.matvec_transpose_accum(&delta, &mut d_in);
        delta = d_in;
    }
    delta
}

/// Per-point MLP, masked coordinate-wise max pooling over valid points,
/// then the head MLP.
pub fn set_encode(params: &SetEncoderParams, pc: &PointCloudSample) -> Result<FeatureVector> {
    let (out, _) = set_encode_traced(params, pc)?;
    FeatureVector::new(out)
}

/// Pooling cache: per-valid-point traces and, per pooled coordinate, which
/// valid point supplied the maximum (first index on ties).
#[derive(Debug, Clone)]
pub(crate) struct SetTrace {
    pub point_traces: Vec<(usize, MlpTrace)>,
    pub argmax: Vec<usize>,
    pub head: MlpTrace,
}

pub(crate) fn set_encode_traced(
    params: &SetEncoderParams,
    pc: &PointCloudSample,
) -> Result<(Vec<f64>, SetTrace)> {
    if params.point_mlp.input_dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: params.point_mlp.input_dim(),
        });
    }
    let feat_dim = params.point_mlp.output_dim();
    let mut point_traces = Vec::new();
    let mut pooled = vec![f64::NEG_INFINITY; feat_dim];
    let mut argmax = vec![usize::MAX; feat_dim];
    for (idx, (point, &valid)) in pc.points().iter().zip(pc.valid_mask()).enumerate() {
        if !valid {
            continue;
        }
        let trace = mlp_forward_traced(&params.point_mlp, point)?;
        for (c, &value) in trace.output.iter().enumerate() {
            if value > pooled[c] {
                pooled[c] = value;
                argmax[c] = point_traces.len();
            }
        }
        point_traces.push((idx, trace));
    }
    if point_traces.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let head = mlp_forward_traced(&params.head_mlp, &pooled)?;
    let out = head.output.clone();
    Ok((
        out,
        SetTrace {
            point_traces,
            argmax,
            head,
        },
    ))
}

/// Backward pass matching [`set_encode_traced`]: the pooled gradient routes
/// each coordinate to the point that won the max.
pub(crate) fn set_backward(
    params: &SetEncoderParams,
    trace: &SetTrace,
    d_out: &[f64],
    prefix: &str,
    grads: &mut BTreeMap<String, Vec<f64>>,
) {
    let d_pooled = mlp_backward(
        &params.head_mlp,
        &trace.head,
        d_out,
        &format!("{prefix}.head_mlp"),
        grads,
    );
    let feat_dim = d_pooled.len();
    let mut per_point: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (c, &g) in d_pooled.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let winner = trace.argmax[c];
        per_point
            .entry(winner)
            .or_insert_with(|| vec![0.0; feat_dim])[c] += g;
    }
    for (trace_idx, d_feat) in per_point {
        let (_, point_trace) = &trace.point_traces[trace_idx];
        mlp_backward(
            &params.point_mlp,
            point_trace,
            &d_feat,
            &format!("{prefix}.point_mlp"),
            grads,
        );
    }
}

/// Seeded Glorot-uniform initialization: weights in
/// `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_mlp(sizes: &[usize], seed: u64) -> Result<MlpParams> {
    if sizes.len() < 2 {
        return Err(Error::invalid("mlp needs at least input and output sizes"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        layers.push(Layer {
            weight: Matrix::from_vec(fan_out, fan_in, data)?,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(MlpParams {
        layers,
        activation: Activation::Relu,
    })
}

/// Layer-size plan for the three encoders; the last entry of every chain is
/// the shared embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub text_sizes: Vec<usize>,
    pub image_sizes: Vec<usize>,
    pub point_sizes: Vec<usize>,
    pub head_sizes: Vec<usize>,
}

impl EncoderArch {
    /// One hidden layer per encoder, sized for desk-scale CPU training.
    pub fn new(text_dim: usize, image_dim: usize, hidden: usize, embed_dim: usize) -> Self {
        EncoderArch {
            text_sizes: vec![text_dim, hidden, embed_dim],
            image_sizes: vec![image_dim, hidden, embed_dim],
            point_sizes: vec![3, hidden / 2, hidden / 2],
            head_sizes: vec![hidden / 2, hidden, embed_dim],
        }
    }

    pub fn embed_dim(&self) -> usize {
        *self.text_sizes.last().expect("non-empty text sizes")
    }

    fn validate(&self) -> Result<()> {
        let d = self.embed_dim();
        if self.image_sizes.last() != Some(&d) || self.head_sizes.last() != Some(&d) {
            return Err(Error::invalid(
                "all encoder chains must end at the shared embedding dimension",
            ));
        }
        if self.point_sizes.first() != Some(&3) {
            return Err(Error::invalid("point encoder input dimension must be 3"));
        }
        if self.point_sizes.last() != self.head_sizes.first() {
            return Err(Error::invalid(
                "point feature dimension must match the head input dimension",
            ));
        }
        Ok(())
    }
}

/// The three encoders' parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSet {
    pub arch: EncoderArch,
    pub text: MlpParams,
    pub image: MlpParams,
    pub point: SetEncoderParams,
}

impl EncoderSet {
    /// Deterministic seeded initialization of all three encoders.
    pub fn init(arch: EncoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(EncoderSet {
            text: init_mlp(&arch.text_sizes, seed)?,
            image: init_mlp(&arch.image_sizes, seed.wrapping_add(1))?,
            point: SetEncoderParams {
                point_mlp: init_mlp(&arch.point_sizes, seed.wrapping_add(2))?,
                head_mlp: init_mlp(&arch.head_sizes, seed.wrapping_add(3))?,
            },
            arch,
        })
    }

    /// Flattens every parameter into a name -> buffer map. Names follow
    /// `<encoder>.<layer>.{weight,bias}`, with the point encoder split into
    /// `point.point_mlp` and `point.head_mlp`.
    pub fn to_param_map(&self) -> BTreeMap<String, Vec<f64>> {
        let mut map = BTreeMap::new();
        let mut push_mlp = |prefix: &str, mlp: &MlpParams| {
            for (idx, layer) in mlp.layers.iter().enumerate() {
                map.insert(
                    format!("{prefix}.{idx}.weight"),
                    layer.weight.data().to_vec(),
                );
                map.insert(format!("{prefix}.{idx}.bias"), layer.bias.clone());
            }
        };
        push_mlp("text", &self.text);
        push_mlp("image", &self.image);
        push_mlp("point.point_mlp", &self.point.point_mlp);
        push_mlp("point.head_mlp", &self.point.head_mlp);
        map
    }

    /// Rebuilds an encoder set from a parameter map produced by
    /// [`EncoderSet::to_param_map`].
    pub fn from_param_map(arch: &EncoderArch, map: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        arch.validate()?;
        let build = |prefix: &str, sizes: &[usize]| -> Result<MlpParams> {
            let mut layers = Vec::with_capacity(sizes.len() - 1);
            for (idx, w) in sizes.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = map
                    .get(&format!("{prefix}.{idx}.weight"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{idx}.weight")))?;
                let bias = map
                    .get(&format!("{prefix}.{idx}.bias"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{idx}.bias")))?;
                if bias.len() != fan_out {
                    return Err(Error::DimensionMismatch {
                        expected: fan_out,
                        got: bias.len(),
                    });
                }
                layers.push(Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, weight.clone())?,
                    bias: bias.clone(),
                });
            }
            Ok(MlpParams {
                layers,
                activation: Activation::Relu,
            })
        };
        Ok(EncoderSet {
            text: build("text", &arch.text_sizes)?,
            image: build("image", &arch.image_sizes)?,
            point: SetEncoderParams {
                point_mlp: build("point.point_mlp", &arch.point_sizes)?,
                head_mlp: build("point.head_mlp", &arch.head_sizes)?,
            },
            arch: arch.clone(),
        })
    }
}

/// Batched forward traces for one mini-batch, used by the gradient path.
#[derive(Debug, Clone)]
pub(crate) struct BatchTrace {
    pub text: Vec<MlpTrace>,
    pub image: Vec<MlpTrace>,
    pub point: Vec<SetTrace>,
}

/// Encodes a batch of prepared records with all three encoders and
/// normalizes every row; row `r` of each output corresponds to
/// `records[r]`.
pub fn encode_batch(
    encoders: &EncoderSet,
    records: &[PreparedRecord],
) -> Result<(FeatureBatch, FeatureBatch, FeatureBatch)> {
    let (batches, _) = encode_batch_traced(encoders, records)?;
    Ok(batches)
}

pub(crate) fn encode_batch_traced(
    encoders: &EncoderSet,
    records: &[PreparedRecord],
) -> Result<((FeatureBatch, FeatureBatch, FeatureBatch), BatchTrace)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("record batch"));
    }
    let mut text_rows = Vec::with_capacity(records.len());
    let mut image_rows = Vec::with_capacity(records.len());
    let mut point_rows = Vec::with_capacity(records.len());
    let mut trace = BatchTrace {
        text: Vec::with_capacity(records.len()),
        image: Vec::with_capacity(records.len()),
        point: Vec::with_capacity(records.len()),
    };
    for record in records {
        let t = mlp_forward_traced(&encoders.text, &record.text_vector)?;
        text_rows.push(t.output.clone());
        trace.text.push(t);
        let i = mlp_forward_traced(&encoders.image, &record.image_vector)?;
        image_rows.push(i.output.clone());
        trace.image.push(i);
        let (out, p) = set_encode_traced(&encoders.point, &record.cloud)?;
        point_rows.push(out);
        trace.point.push(p);
    }
    let t = FeatureBatch::new(Modality::Text, text_rows)?.normalized()?;
    let i = FeatureBatch::new(Modality::Image, image_rows)?.normalized()?;
    let p = FeatureBatch::new(Modality::Point, point_rows)?.normalized()?;
    Ok(((t, i, p), trace))
}
