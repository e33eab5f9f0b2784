//! Optimization loop: AdamW with decoupled weight decay, a linear-warmup
//! then constant learning-rate schedule, per-epoch logging, and versioned
//! checkpoints. Single-threaded and fully determined by the seed.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{self, PreparedRecord, TripletRecord};
use crate::encoders::{EncoderArch, EncoderSet};
use crate::error::{Error, Result};
use crate::grad::{self, GradientSet, LossKind, LossSpec, ParamMap};
use crate::loss::{Coefficients, FlattenStrategy, LogitScale, Reduction};
use crate::similarity::Metric;

/// Named loss variants exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// Tensor loss, mapped-L2 metric, masked flattening (the standard).
    CtpMask,
    /// Tensor loss, mapped-L2 metric, no masking (ablation).
    CtpNm,
    /// Tensor loss, cosine metric, masked flattening (ablation).
    CtpCosine,
    /// Pairwise similarity-matrix baseline.
    Pairwise,
}

impl LossChoice {
    pub const ALL: [LossChoice; 4] = [
        LossChoice::CtpMask,
        LossChoice::CtpNm,
        LossChoice::CtpCosine,
        LossChoice::Pairwise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LossChoice::CtpMask => "ctp_mask",
            LossChoice::CtpNm => "ctp_nm",
            LossChoice::CtpCosine => "ctp_cosine",
            LossChoice::Pairwise => "pairwise",
        }
    }

    pub fn to_spec(self, coefficients: Coefficients, reduction: Reduction) -> LossSpec {
        let kind = match self {
            LossChoice::CtpMask => LossKind::Tensor {
                metric: Metric::L2Mapped,
                strategy: FlattenStrategy::Mask,
            },
            LossChoice::CtpNm => LossKind::Tensor {
                metric: Metric::L2Mapped,
                strategy: FlattenStrategy::Nm,
            },
            LossChoice::CtpCosine => LossKind::Tensor {
                metric: Metric::Cosine,
                strategy: FlattenStrategy::Mask,
            },
            LossChoice::Pairwise => LossKind::Pairwise,
        };
        LossSpec {
            kind,
            coefficients,
            reduction,
        }
    }
}

impl FromStr for LossChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctp_mask" => Ok(LossChoice::CtpMask),
            "ctp_nm" => Ok(LossChoice::CtpNm),
            "ctp_cosine" => Ok(LossChoice::CtpCosine),
            "pairwise" => Ok(LossChoice::Pairwise),
            other => Err(Error::invalid(format!(
                "unknown loss '{other}' (expected ctp_mask, ctp_nm, ctp_cosine, pairwise)"
            ))),
        }
    }
}

/// Which encoders stay untouched during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreezeSet {
    pub text: bool,
    pub image: bool,
    pub point: bool,
}

impl FreezeSet {
    pub fn none() -> Self {
        FreezeSet::default()
    }

    /// Parses a comma-separated list like `text,image`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = FreezeSet::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "text" => set.text = true,
                "image" => set.image = true,
                "point" => set.point = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown encoder '{other}' in freeze list"
                    )))
                }
            }
        }
        Ok(set)
    }

    fn is_frozen(&self, param_name: &str) -> bool {
        (self.text && param_name.starts_with("text."))
            || (self.image && param_name.starts_with("image."))
            || (self.point && param_name.starts_with("point."))
    }
}

/// Adam moment hyperparameters; the learning rate and decay arrive per
/// step so the schedule stays outside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

/// One AdamW update: bias-corrected moment step plus decoupled weight
/// decay applied directly to the parameter. The logit scale is exempt
/// from decay. Only parameters present in `grads` are touched.
pub fn adamw_step(
    params: &mut ParamMap,
    grads: &GradientSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    for (name, grad) in grads.iter() {
        let param = params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if param.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                expected: param.len(),
                got: grad.len(),
            });
        }
        let first = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let second = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let decay = if name == "logit_scale" {
            0.0
        } else {
            hyper.weight_decay
        };
        for idx in 0..grad.len() {
            let g = grad[idx];
            first[idx] = hyper.beta1 * first[idx] + (1.0 - hyper.beta1) * g;
            second[idx] = hyper.beta2 * second[idx] + (1.0 - hyper.beta2) * g * g;
            let m_hat = first[idx] / bias1;
            let v_hat = second[idx] / bias2;
            let adaptive = m_hat / (v_hat.sqrt() + hyper.epsilon);
            param[idx] -= hyper.lr * (adaptive + decay * param[idx]);
        }
    }
    Ok(())
}

/// Learning rate at `step`: a linear ramp from zero to `base_lr` over
/// `ceil(warmup_ratio * total_steps)` steps, then constant.
pub fn lr_at(step: u64, total_steps: u64, warmup_ratio: f64, base_lr: f64) -> f64 {
    let warmup = (warmup_ratio * total_steps as f64).ceil() as u64;
    if warmup == 0 || step >= warmup {
        base_lr
    } else {
        base_lr * step as f64 / warmup as f64
    }
}

/// Full training configuration. The defaults are desk-scale (fast CPU
/// runs on toy encoders); [`TrainConfig::paper_profile`] switches to the
/// published CLIP-scale optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossChoice,
    pub coefficients: Coefficients,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze: FreezeSet,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_points: usize,
    pub temperature: f64,
    pub reduction: Reduction,
    pub grad_clip: Option<f64>,
    pub drop_last: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossChoice::CtpMask,
            coefficients: Coefficients::THIRDS,
            lr: 1e-3,
            weight_decay: 0.0,
            warmup_ratio: 0.1,
            epochs: 50,
            batch_size: 32,
            seed: 7,
            freeze: FreezeSet::none(),
            embed_dim: 32,
            hidden_dim: 64,
            n_points: 32,
            temperature: 0.07,
            reduction: Reduction::Sum,
            grad_clip: None,
            drop_last: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// The published optimization settings, tuned for CLIP-scale
    /// backbones: lr 5e-4, weight decay 0.2, batch 192, 20 epochs.
    /// Over-regularizes the toy encoders; provided for reproduction runs.
    pub fn paper_profile() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 0.2,
            batch_size: 192,
            epochs: 20,
            warmup_ratio: 0.1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::invalid("warmup_ratio must lie in [0, 1]"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size must be >= 2 for a contrastive signal",
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if self.embed_dim == 0 || self.hidden_dim < 2 || self.n_points == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::invalid("temperature must be positive"));
        }
        self.coefficients.validate()?;
        if let Some(clip) = self.grad_clip {
            if clip.is_nan() || clip <= 0.0 {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        self.loss.to_spec(self.coefficients, self.reduction)
    }

    fn adam_hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub logit_scale: f64,
    pub lr: f64,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Versioned training snapshot: encoder parameters (plus the logit scale
/// under `logit_scale`), optimizer state, step count, and a config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: EncoderArch,
    pub params: BTreeMap<String, Vec<f64>>,
    pub optimizer: AdamState,
    pub step: u64,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn encoders(&self) -> Result<EncoderSet> {
        EncoderSet::from_param_map(&self.arch, &self.params)
    }

    pub fn logit_scale(&self) -> Result<LogitScale> {
        let raw = self
            .params
            .get("logit_scale")
            .ok_or_else(|| Error::Checkpoint("missing logit_scale".into()))?;
        Ok(LogitScale::from_log(raw[0]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, body + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&body)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        Ok(checkpoint)
    }
}

/// A finished training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains the three encoders (minus frozen ones) and the logit scale on a
/// manifest. Batches are reshuffled per epoch from the seed; a non-finite
/// loss aborts with the offending epoch, batch, and step.
pub fn train(cfg: &TrainConfig, records: &[TripletRecord]) -> Result<TrainRun> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("training manifest"));
    }
    let text_dim = records[0].text_vector.len();
    let image_dim = records[0].image_vector.len();
    let arch = EncoderArch::new(text_dim, image_dim, cfg.hidden_dim, cfg.embed_dim);
    let encoders = EncoderSet::init(arch.clone(), cfg.seed)?;
    let mut params = encoders.to_param_map();
    params.insert(
        "logit_scale".to_string(),
        vec![LogitScale::from_temperature(cfg.temperature)?.log_value()],
    );

    let prepared = dataset::prepare_records(records, cfg.n_points)?;
    let batches_per_epoch =
        dataset::batch_iter(prepared.len(), cfg.batch_size, cfg.seed, cfg.drop_last)?.len();
    if batches_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "dataset of {} records yields no batches of size {}",
            prepared.len(),
            cfg.batch_size
        )));
    }
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let spec = cfg.loss_spec();

    let mut state = AdamState::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;
    for epoch in 0..cfg.epochs {
        let batches = dataset::batch_iter(
            prepared.len(),
            cfg.batch_size,
            cfg.seed.wrapping_add(epoch as u64 + 1),
            cfg.drop_last,
        )?;
        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let batch_records: Vec<PreparedRecord> =
                batch.iter().map(|&idx| prepared[idx].clone()).collect();
            let set = EncoderSet::from_param_map(&arch, &params)?;
            let scale = LogitScale::from_log(params["logit_scale"][0]);
            let (value, mut grads) =
                grad::loss_and_grad_params(&spec, &set, &batch_records, &scale)?;
            if !value.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    step: global_step,
                });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale_all(clip / norm);
                }
            }
            // Frozen encoders receive no updates at all: their gradients
            // never reach the optimizer, so moments stay untouched too.
            grads
                .as_map_mut()
                .retain(|name, _| !cfg.freeze.is_frozen(name));
            let lr = lr_at(global_step, total_steps, cfg.warmup_ratio, cfg.lr);
            adamw_step(&mut params, &grads, &mut state, &cfg.adam_hyper(lr))?;
            let s = params.get_mut("logit_scale").expect("logit scale param");
            s[0] = s[0].min(LogitScale::MAX_SCALE.ln());
            epoch_loss += value;
            last_lr = lr;
            global_step += 1;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            logit_scale: params["logit_scale"][0].exp(),
            lr: last_lr,
        });
    }

    Ok(TrainRun {
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            arch,
            params,
            optimizer: state,
            step: global_step,
            config: cfg.clone(),
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};

    fn scalar_params(value: f64) -> ParamMap {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), vec![value]);
        params
    }

    fn scalar_grads(value: f64) -> GradientSet {
        let mut grads = GradientSet::new();
        grads.insert("w", vec![value]);
        grads
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut params = scalar_params(1.5);
        let mut state = AdamState::default();
        let hyper = AdamHyper::default();
        adamw_step(&mut params, &scalar_grads(0.0), &mut state, &hyper).unwrap();
        assert_eq!(params["w"][0], 1.5);
    }

    #[test]
    fn zero_grad_with_decay_shrinks() {
        let mut params = scalar_params(2.0);
        let mut state = AdamState::default();
        let hyper = AdamHyper {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamHyper::default()
        };
        adamw_step(&mut params, &scalar_grads(0.0), &mut state, &hyper).unwrap();
        assert!((params["w"][0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut params = scalar_params(1.0);
        let mut state = AdamState::default();
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        adamw_step(&mut params, &scalar_grads(1.0), &mut state, &hyper).unwrap();
        // Bias-corrected moments are exactly 1 after one unit-gradient
        // step, so the step size is lr / (1 + eps).
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((params["w"][0] - expect).abs() < 1e-12);
        assert!((params["w"][0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn logit_scale_is_decay_exempt() {
        let mut params = BTreeMap::new();
        params.insert("logit_scale".to_string(), vec![2.0]);
        let mut state = AdamState::default();
        let hyper = AdamHyper {
            lr: 0.1,
            weight_decay: 0.9,
            ..AdamHyper::default()
        };
        let mut grads = GradientSet::new();
        grads.insert("logit_scale", vec![0.0]);
        adamw_step(&mut params, &grads, &mut state, &hyper).unwrap();
        assert_eq!(params["logit_scale"][0], 2.0);
    }

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_at(10, 100, 0.1, 1.0), 1.0);
        assert_eq!(lr_at(99, 100, 0.1, 1.0), 1.0);
        assert_eq!(lr_at(0, 100, 0.0, 0.5), 0.5);
        assert!((lr_at(5, 100, 0.1, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(lr_at(0, 100, 0.1, 1.0), 0.0);
    }

    fn quick_data() -> Vec<TripletRecord> {
        let cfg = SynthConfig {
            num_classes: 3,
            train_count: 24,
            test_count: 6,
            text_dim: 8,
            image_dim: 8,
            latent_dim: 6,
            points_per_cloud: (4, 8),
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg).unwrap().0
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            embed_dim: 8,
            hidden_dim: 16,
            n_points: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let records = quick_data();
        let cfg = TrainConfig {
            epochs: 0,
            ..quick_cfg()
        };
        let run = train(&cfg, &records).unwrap();
        let arch = EncoderArch::new(8, 8, 16, 8);
        let init = EncoderSet::init(arch, cfg.seed).unwrap();
        let mut expected = init.to_param_map();
        expected.insert(
            "logit_scale".to_string(),
            vec![LogitScale::from_temperature(0.07).unwrap().log_value()],
        );
        assert_eq!(run.checkpoint.params, expected);
        assert_eq!(run.checkpoint.step, 0);
        assert!(run.log.is_empty());
    }

    #[test]
    fn frozen_encoders_stay_bitwise_identical() {
        let records = quick_data();
        let cfg = TrainConfig {
            freeze: FreezeSet::parse("text,image").unwrap(),
            ..quick_cfg()
        };
        let run = train(&cfg, &records).unwrap();
        let arch = EncoderArch::new(8, 8, 16, 8);
        let init = EncoderSet::init(arch, cfg.seed).unwrap().to_param_map();
        let mut point_changed = false;
        for (name, values) in &run.checkpoint.params {
            if name == "logit_scale" {
                continue;
            }
            let before = &init[name];
            if name.starts_with("text.") || name.starts_with("image.") {
                assert_eq!(values, before, "{name} should be frozen");
            } else if values != before {
                point_changed = true;
            }
        }
        assert!(point_changed, "point encoder should have trained");
        let init_scale = LogitScale::from_temperature(0.07).unwrap().log_value();
        assert_ne!(run.checkpoint.params["logit_scale"][0], init_scale);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let records = quick_data();
        let cfg = quick_cfg();
        let a = train(&cfg, &records).unwrap();
        let b = train(&cfg, &records).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn training_reduces_loss_on_easy_data() {
        let records = quick_data();
        let cfg = TrainConfig {
            epochs: 10,
            ..quick_cfg()
        };
        let run = train(&cfg, &records).unwrap();
        let first = run.log.first().unwrap().mean_loss;
        let last = run.log.last().unwrap().mean_loss;
        assert!(last < first, "loss should drop: {first} -> {last}");
    }

    #[test]
    fn noiseless_loss_curve_is_monotone_after_warmup() {
        let synth = SynthConfig {
            num_classes: 3,
            train_count: 120,
            test_count: 12,
            text_dim: 8,
            image_dim: 8,
            latent_dim: 6,
            noise_sigma_text: 0.0,
            noise_sigma_image: 0.0,
            noise_sigma_point: 0.0,
            points_per_cloud: (4, 8),
            ..SynthConfig::default()
        };
        let (records, _, _) = generate_synthetic(&synth).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 12,
            embed_dim: 8,
            hidden_dim: 16,
            n_points: 6,
            ..TrainConfig::default()
        };
        let run = train(&cfg, &records).unwrap();
        // Warmup covers ceil(0.1 * total) steps; with 10 batches per epoch
        // that is the first 1.2 epochs. Allow a 5% band per step after it.
        for window in run.log[2..].windows(2) {
            assert!(
                window[1].mean_loss <= window[0].mean_loss * 1.05,
                "epoch {} loss {} rose above the band from {}",
                window[1].epoch,
                window[1].mean_loss,
                window[0].mean_loss
            );
        }
    }

    #[test]
    fn logit_scale_stays_in_bounds() {
        let records = quick_data();
        let cfg = TrainConfig {
            epochs: 4,
            lr: 0.05,
            ..quick_cfg()
        };
        let run = train(&cfg, &records).unwrap();
        for entry in &run.log {
            assert!(entry.logit_scale > 0.0 && entry.logit_scale <= 100.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let records = quick_data();
        let run = train(&quick_cfg(), &records).unwrap();
        let dir = std::env::temp_dir().join(format!("ctp-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path_a = dir.join("a.json");
        let path_b = dir.join("b.json");
        run.checkpoint.save(&path_a).unwrap();
        let loaded = Checkpoint::load(&path_a).unwrap();
        loaded.save(&path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_batch_of_one() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn freeze_parse_rejects_unknown() {
        assert!(FreezeSet::parse("text,lidar").is_err());
        let set = FreezeSet::parse("text, image").unwrap();
        assert!(set.text && set.image && !set.point);
    }
}
