//! Subcommand implementations.

use rand::prelude::*;
use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctp_core::dataset::{self, SynthConfig, TripletRecord};
use ctp_core::encoders::{EncoderArch, EncoderSet};
use ctp_core::eval::{self, EvalMode, EvalReport};
use ctp_core::grad::{self, GradientSet, LossSpec};
use ctp_core::loss::{Coefficients, LogitScale, Reduction};
use ctp_core::similarity::{FeatureBatch, Metric, Modality};
use ctp_core::training::{self, Checkpoint, FreezeSet, LossChoice, TrainConfig};

use crate::config::{resolve, ConfigError, KvConfig};
use crate::{
    BenchArgs, CmdOutcome, CommonArgs, CompareArgs, EvalArgs, GenDataArgs, GradcheckArgs,
    OracleCheckArgs, TrainArgs,
};

type CmdResult = Result<CmdOutcome, Box<dyn Error>>;

fn verr(msg: impl Into<String>) -> Box<dyn Error> {
    Box::new(ConfigError(msg.into()))
}

/// Loads the config file, applies overrides, and creates the out dir.
fn setup(common: &CommonArgs) -> Result<KvConfig, Box<dyn Error>> {
    if common.threads == 0 {
        return Err(verr("--threads must be >= 1"));
    }
    let mut cfg = match &common.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::default(),
    };
    for expr in &common.set {
        cfg.apply_set(expr)?;
    }
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn write_resolved(out: &Path, resolved: &KvConfig) -> Result<(), Box<dyn Error>> {
    fs::write(out.join("config.resolved"), resolved.render())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Box<dyn Error>> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n")?;
    Ok(())
}

fn parse_reduction(s: &str) -> Result<Reduction, Box<dyn Error>> {
    match s {
        "sum" => Ok(Reduction::Sum),
        "mean" => Ok(Reduction::Mean),
        other => Err(verr(format!("unknown reduction '{other}' (sum or mean)"))),
    }
}

fn parse_coeffs(s: &str) -> Result<Coefficients, Box<dyn Error>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(verr(format!(
            "coeffs '{s}': expected three comma-separated values"
        )));
    }
    let mut values = [0.0f64; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| verr(format!("coeffs '{s}': {e}")))?;
    }
    let coeffs = Coefficients(values[0], values[1], values[2]);
    coeffs.validate()?;
    Ok(coeffs)
}

const DATASET_KEYS: (&str, &[&str]) = (
    "dataset",
    &[
        "classes",
        "latent_dim",
        "text_dim",
        "image_dim",
        "sigma_text",
        "sigma_image",
        "sigma_point",
        "points_min",
        "points_max",
        "train",
        "test",
        "seed",
        "min_points",
    ],
);

fn resolve_synth_config(
    args_classes: Option<usize>,
    args: &GenDataLike,
    cfg: &KvConfig,
) -> Result<SynthConfig, Box<dyn Error>> {
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        num_classes: resolve(
            args_classes,
            cfg,
            "dataset",
            "classes",
            defaults.num_classes,
        )?,
        latent_dim: resolve(
            args.latent_dim,
            cfg,
            "dataset",
            "latent_dim",
            defaults.latent_dim,
        )?,
        text_dim: resolve(args.text_dim, cfg, "dataset", "text_dim", defaults.text_dim)?,
        image_dim: resolve(
            args.image_dim,
            cfg,
            "dataset",
            "image_dim",
            defaults.image_dim,
        )?,
        noise_sigma_text: resolve(
            args.sigma_text,
            cfg,
            "dataset",
            "sigma_text",
            defaults.noise_sigma_text,
        )?,
        noise_sigma_image: resolve(
            args.sigma_image,
            cfg,
            "dataset",
            "sigma_image",
            defaults.noise_sigma_image,
        )?,
        noise_sigma_point: resolve(
            args.sigma_point,
            cfg,
            "dataset",
            "sigma_point",
            defaults.noise_sigma_point,
        )?,
        points_per_cloud: (
            resolve(
                args.points_min,
                cfg,
                "dataset",
                "points_min",
                defaults.points_per_cloud.0,
            )?,
            resolve(
                args.points_max,
                cfg,
                "dataset",
                "points_max",
                defaults.points_per_cloud.1,
            )?,
        ),
        train_count: resolve(args.train, cfg, "dataset", "train", defaults.train_count)?,
        test_count: resolve(args.test, cfg, "dataset", "test", defaults.test_count)?,
        seed: resolve(args.seed, cfg, "dataset", "seed", defaults.seed)?,
    };
    synth.validate()?;
    Ok(synth)
}

/// The dataset-shaped subset of several commands' flags.
struct GenDataLike {
    latent_dim: Option<usize>,
    text_dim: Option<usize>,
    image_dim: Option<usize>,
    sigma_text: Option<f64>,
    sigma_image: Option<f64>,
    sigma_point: Option<f64>,
    points_min: Option<usize>,
    points_max: Option<usize>,
    train: Option<usize>,
    test: Option<usize>,
    seed: Option<u64>,
}

fn echo_synth(resolved: &mut KvConfig, synth: &SynthConfig) {
    resolved.insert("dataset", "classes", synth.num_classes.to_string());
    resolved.insert("dataset", "latent_dim", synth.latent_dim.to_string());
    resolved.insert("dataset", "text_dim", synth.text_dim.to_string());
    resolved.insert("dataset", "image_dim", synth.image_dim.to_string());
    resolved.insert("dataset", "sigma_text", synth.noise_sigma_text.to_string());
    resolved.insert(
        "dataset",
        "sigma_image",
        synth.noise_sigma_image.to_string(),
    );
    resolved.insert(
        "dataset",
        "sigma_point",
        synth.noise_sigma_point.to_string(),
    );
    resolved.insert(
        "dataset",
        "points_min",
        synth.points_per_cloud.0.to_string(),
    );
    resolved.insert(
        "dataset",
        "points_max",
        synth.points_per_cloud.1.to_string(),
    );
    resolved.insert("dataset", "train", synth.train_count.to_string());
    resolved.insert("dataset", "test", synth.test_count.to_string());
    resolved.insert("dataset", "seed", synth.seed.to_string());
}

pub fn gen_data(args: GenDataArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[DATASET_KEYS])?;
    let like = GenDataLike {
        latent_dim: args.latent_dim,
        text_dim: args.text_dim,
        image_dim: args.image_dim,
        sigma_text: args.sigma_text,
        sigma_image: args.sigma_image,
        sigma_point: args.sigma_point,
        points_min: args.points_min,
        points_max: args.points_max,
        train: args.train,
        test: args.test,
        seed: args.seed,
    };
    let synth = resolve_synth_config(args.classes, &like, &cfg)?;
    let min_points = resolve(args.min_points, &cfg, "dataset", "min_points", 0usize)?;

    let (mut train, mut test, table) = dataset::generate_synthetic(&synth)?;
    if min_points > 0 {
        train = dataset::filter_min_points(train, min_points);
        test = dataset::filter_min_points(test, min_points);
    }
    let out = &args.common.out;
    dataset::write_manifest(&train, &out.join("train.jsonl"))?;
    dataset::write_manifest(&test, &out.join("test.jsonl"))?;
    dataset::write_prototypes(&table, &out.join("prototypes.jsonl"))?;

    let mut resolved = KvConfig::default();
    echo_synth(&mut resolved, &synth);
    resolved.insert("dataset", "min_points", min_points.to_string());
    write_resolved(out, &resolved)?;
    println!(
        "wrote {} train / {} test records over {} classes to {}",
        train.len(),
        test.len(),
        synth.num_classes,
        out.display()
    );
    Ok(CmdOutcome::Ok)
}

const TRAINING_KEYS: (&str, &[&str]) = (
    "training",
    &[
        "loss",
        "coeffs",
        "profile",
        "lr",
        "weight_decay",
        "warmup_ratio",
        "epochs",
        "batch_size",
        "seed",
        "freeze",
        "reduction",
        "grad_clip",
        "drop_last",
        "beta1",
        "beta2",
        "epsilon",
        "temperature",
    ],
);
const ENCODER_KEYS: (&str, &[&str]) = ("encoders", &["embed_dim", "hidden_dim", "n_points"]);

fn resolve_train_config(args: &TrainArgs, cfg: &KvConfig) -> Result<TrainConfig, Box<dyn Error>> {
    let profile = resolve(
        args.profile.clone(),
        cfg,
        "training",
        "profile",
        "desk".to_string(),
    )?;
    let defaults = match profile.as_str() {
        "desk" => TrainConfig::default(),
        "paper" => TrainConfig::paper_profile(),
        other => return Err(verr(format!("unknown profile '{other}' (desk or paper)"))),
    };
    let loss_tag = resolve(
        args.loss.clone(),
        cfg,
        "training",
        "loss",
        defaults.loss.tag().to_string(),
    )?;
    let loss: LossChoice = loss_tag.parse()?;
    let coeffs_text = resolve(
        args.coeffs.clone(),
        cfg,
        "training",
        "coeffs",
        format_coeffs(&defaults.coefficients),
    )?;
    let reduction_tag = resolve(
        args.reduction.clone(),
        cfg,
        "training",
        "reduction",
        reduction_tag(defaults.reduction).to_string(),
    )?;
    let freeze_text = resolve(
        args.freeze.clone(),
        cfg,
        "training",
        "freeze",
        String::new(),
    )?;
    let grad_clip = match (args.grad_clip, cfg.get("training", "grad_clip")) {
        (Some(clip), _) => Some(clip),
        (None, Some(raw)) if raw != "none" => Some(
            raw.parse::<f64>()
                .map_err(|e| verr(format!("training.grad_clip '{raw}': {e}")))?,
        ),
        _ => defaults.grad_clip,
    };
    let config = TrainConfig {
        loss,
        coefficients: parse_coeffs(&coeffs_text)?,
        lr: resolve(args.lr, cfg, "training", "lr", defaults.lr)?,
        weight_decay: resolve(
            args.weight_decay,
            cfg,
            "training",
            "weight_decay",
            defaults.weight_decay,
        )?,
        warmup_ratio: resolve(
            args.warmup_ratio,
            cfg,
            "training",
            "warmup_ratio",
            defaults.warmup_ratio,
        )?,
        epochs: resolve(args.epochs, cfg, "training", "epochs", defaults.epochs)?,
        batch_size: resolve(
            args.batch_size,
            cfg,
            "training",
            "batch_size",
            defaults.batch_size,
        )?,
        seed: resolve(args.seed, cfg, "training", "seed", defaults.seed)?,
        freeze: FreezeSet::parse(&freeze_text)?,
        embed_dim: resolve(
            args.embed_dim,
            cfg,
            "encoders",
            "embed_dim",
            defaults.embed_dim,
        )?,
        hidden_dim: resolve(
            args.hidden_dim,
            cfg,
            "encoders",
            "hidden_dim",
            defaults.hidden_dim,
        )?,
        n_points: resolve(
            args.n_points,
            cfg,
            "encoders",
            "n_points",
            defaults.n_points,
        )?,
        temperature: resolve(
            args.temperature,
            cfg,
            "training",
            "temperature",
            defaults.temperature,
        )?,
        reduction: parse_reduction(&reduction_tag)?,
        grad_clip,
        drop_last: resolve(None, cfg, "training", "drop_last", defaults.drop_last)?,
        beta1: resolve(None, cfg, "training", "beta1", defaults.beta1)?,
        beta2: resolve(None, cfg, "training", "beta2", defaults.beta2)?,
        epsilon: resolve(None, cfg, "training", "epsilon", defaults.epsilon)?,
    };
    config.validate()?;
    Ok(config)
}

fn format_coeffs(c: &Coefficients) -> String {
    format!("{},{},{}", c.0, c.1, c.2)
}

fn reduction_tag(r: Reduction) -> &'static str {
    match r {
        Reduction::Sum => "sum",
        Reduction::Mean => "mean",
    }
}

fn freeze_tag(f: &FreezeSet) -> String {
    let mut parts = Vec::new();
    if f.text {
        parts.push("text");
    }
    if f.image {
        parts.push("image");
    }
    if f.point {
        parts.push("point");
    }
    parts.join(",")
}

fn echo_train(resolved: &mut KvConfig, config: &TrainConfig) {
    resolved.insert("training", "loss", config.loss.tag());
    resolved.insert("training", "coeffs", format_coeffs(&config.coefficients));
    resolved.insert("training", "lr", config.lr.to_string());
    resolved.insert("training", "weight_decay", config.weight_decay.to_string());
    resolved.insert("training", "warmup_ratio", config.warmup_ratio.to_string());
    resolved.insert("training", "epochs", config.epochs.to_string());
    resolved.insert("training", "batch_size", config.batch_size.to_string());
    resolved.insert("training", "seed", config.seed.to_string());
    resolved.insert("training", "freeze", freeze_tag(&config.freeze));
    resolved.insert("training", "reduction", reduction_tag(config.reduction));
    if let Some(clip) = config.grad_clip {
        resolved.insert("training", "grad_clip", clip.to_string());
    }
    resolved.insert("training", "drop_last", config.drop_last.to_string());
    resolved.insert("training", "beta1", config.beta1.to_string());
    resolved.insert("training", "beta2", config.beta2.to_string());
    resolved.insert("training", "epsilon", config.epsilon.to_string());
    resolved.insert("training", "temperature", config.temperature.to_string());
    resolved.insert("encoders", "embed_dim", config.embed_dim.to_string());
    resolved.insert("encoders", "hidden_dim", config.hidden_dim.to_string());
    resolved.insert("encoders", "n_points", config.n_points.to_string());
}

fn manifest_path(
    explicit: &Option<PathBuf>,
    data_dir: &Option<PathBuf>,
    file_name: &str,
    what: &str,
) -> Result<PathBuf, Box<dyn Error>> {
    if let Some(path) = explicit {
        return Ok(path.clone());
    }
    if let Some(dir) = data_dir {
        return Ok(dir.join(file_name));
    }
    Err(verr(format!(
        "missing {what}: pass --data DIR or an explicit path"
    )))
}

fn read_manifest_warn(path: &Path) -> Result<Vec<TripletRecord>, Box<dyn Error>> {
    let records = dataset::read_manifest(path)?;
    if records.is_empty() {
        eprintln!("warning: manifest {} is empty", path.display());
    }
    Ok(records)
}

pub fn train(args: TrainArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[TRAINING_KEYS, ENCODER_KEYS])?;
    let config = resolve_train_config(&args, &cfg)?;
    let manifest = manifest_path(
        &args.manifest,
        &args.data,
        "train.jsonl",
        "training manifest",
    )?;
    let records = read_manifest_warn(&manifest)?;

    let run = training::train(&config, &records)?;
    let out = &args.common.out;
    run.checkpoint.save(&out.join("checkpoint.json"))?;
    let mut log_body = String::new();
    for entry in &run.log {
        log_body.push_str(&serde_json::to_string(entry)?);
        log_body.push('\n');
    }
    fs::write(out.join("train_log.jsonl"), log_body)?;

    let mut resolved = KvConfig::default();
    echo_train(&mut resolved, &config);
    write_resolved(out, &resolved)?;

    if let Some(last) = run.log.last() {
        println!(
            "trained {} for {} epochs: mean loss {:.6} -> {:.6}, logit scale {:.3}",
            config.loss.tag(),
            config.epochs,
            run.log.first().map(|e| e.mean_loss).unwrap_or(f64::NAN),
            last.mean_loss,
            last.logit_scale
        );
    } else {
        println!(
            "trained {} for 0 epochs (checkpoint is the initialization)",
            config.loss.tag()
        );
    }
    println!("checkpoint: {}", out.join("checkpoint.json").display());
    Ok(CmdOutcome::Ok)
}

const EVAL_KEYS: (&str, &[&str]) = ("eval", &["mode"]);

pub fn eval(args: EvalArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[EVAL_KEYS])?;
    let mode_tag = resolve(args.mode.clone(), &cfg, "eval", "mode", "all".to_string())?;
    let modes: Vec<EvalMode> = if mode_tag == "all" {
        EvalMode::ALL.to_vec()
    } else {
        vec![mode_tag.parse()?]
    };

    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let test_path = manifest_path(
        &args.test_manifest,
        &args.data,
        "test.jsonl",
        "test manifest",
    )?;
    let proto_path = manifest_path(
        &args.prototypes,
        &args.data,
        "prototypes.jsonl",
        "prototype table",
    )?;
    let test = read_manifest_warn(&test_path)?;
    let table = dataset::read_prototypes(&proto_path)?;

    let out = &args.common.out;
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for mode in modes {
        let report = eval::evaluate(&checkpoint, &test, &table, mode)?;
        write_json(&out.join(format!("metrics_{}.json", mode.tag())), &report)?;
        rows.push((mode.tag().to_string(), report));
    }
    let borrowed: Vec<(String, &EvalReport)> = rows
        .iter()
        .map(|(tag, report)| (tag.clone(), report))
        .collect();
    print!("{}", eval::render_table(&borrowed));

    let mut resolved = KvConfig::default();
    resolved.insert("eval", "mode", &mode_tag);
    write_resolved(out, &resolved)?;
    Ok(CmdOutcome::Ok)
}

const GRADCHECK_KEYS: (&str, &[&str]) =
    ("gradcheck", &["b", "d", "seeds", "eps", "tol", "backstop"]);

fn random_batch(modality: Modality, b: usize, d: usize, rng: &mut StdRng) -> FeatureBatch {
    let rows = (0..b)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    FeatureBatch::new(modality, rows).expect("random rows are valid")
}

/// Fixed end-to-end fixture for the through-encoder gradient check:
/// four records, embedding dimension 8, seeds chosen clear of the
/// difference quotient's noise floor.
fn end_to_end_fixture(
) -> Result<(EncoderSet, Vec<ctp_core::dataset::PreparedRecord>), Box<dyn Error>> {
    let synth = SynthConfig {
        num_classes: 3,
        train_count: 4,
        test_count: 2,
        text_dim: 6,
        image_dim: 5,
        latent_dim: 4,
        points_per_cloud: (3, 6),
        seed: 6,
        ..SynthConfig::default()
    };
    let (train, _, _) = dataset::generate_synthetic(&synth)?;
    let records = dataset::prepare_records(&train[..4], 4)?;
    let set = EncoderSet::init(EncoderArch::new(6, 5, 8, 8), 191)?;
    Ok((set, records))
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[GRADCHECK_KEYS])?;
    let b = resolve(args.b, &cfg, "gradcheck", "b", 4usize)?;
    let d = resolve(args.d, &cfg, "gradcheck", "d", 8usize)?;
    let seeds = resolve(args.seeds, &cfg, "gradcheck", "seeds", 5u64)?;
    let eps = resolve(args.eps, &cfg, "gradcheck", "eps", 1e-5)?;
    let tol = resolve(args.tol, &cfg, "gradcheck", "tol", 1e-6)?;
    let backstop = resolve(args.backstop, &cfg, "gradcheck", "backstop", 1e-3)?;
    if b < 1 || d < 1 || seeds < 1 {
        return Err(verr("b, d, and seeds must all be >= 1"));
    }

    let scale = LogitScale::default();
    let mut failures: Vec<String> = Vec::new();
    let mut results = Vec::new();
    for seed in 0..seeds {
        let mut rng = StdRng::seed_from_u64(seed);
        let t = random_batch(Modality::Text, b, d, &mut rng);
        let i = random_batch(Modality::Image, b, d, &mut rng);
        let p = random_batch(Modality::Point, b, d, &mut rng);
        for (name, spec) in LossSpec::all_variants() {
            let (_, mut feature_grads) = grad::loss_and_grad_features(&spec, &t, &i, &p, &scale)?;
            if args.self_test_flip {
                // Harness self-test: corrupt one gradient entry and make
                // sure the sweep notices.
                let worst = feature_grads
                    .text
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(idx, _)| idx)
                    .unwrap_or(0);
                feature_grads.text[worst] = -feature_grads.text[worst];
            }
            let mut params = BTreeMap::new();
            params.insert("text".to_string(), t.data().to_vec());
            params.insert("image".to_string(), i.data().to_vec());
            params.insert("point".to_string(), p.data().to_vec());
            params.insert("logit_scale".to_string(), vec![scale.log_value()]);
            let mut analytic = GradientSet::new();
            analytic.insert("text", feature_grads.text);
            analytic.insert("image", feature_grads.image);
            analytic.insert("point", feature_grads.point);
            analytic.insert("logit_scale", vec![feature_grads.log_scale]);
            let report = grad::finite_diff_check(
                |map| {
                    let make = |tag: &str, modality| {
                        FeatureBatch::from_flat(modality, b, d, map[tag].clone())
                    };
                    let t = make("text", Modality::Text)?.normalized()?;
                    let i = make("image", Modality::Image)?.normalized()?;
                    let p = make("point", Modality::Point)?.normalized()?;
                    let s = LogitScale::from_log(map["logit_scale"][0]);
                    Ok(spec.value(&t, &i, &p, s.value())?.total)
                },
                &params,
                &analytic,
                eps,
            )?;
            let pass = report.max_rel_error_strong <= tol && report.max_rel_error <= backstop;
            println!(
                "gradcheck features seed={seed} variant={name}: strong={:.3e} full={:.3e} {}",
                report.max_rel_error_strong,
                report.max_rel_error,
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                failures.push(format!("features seed={seed} variant={name}"));
            }
            results.push((format!("features:{seed}:{name}"), report));
        }
    }

    // End-to-end check through the encoders on the pinned fixture; every
    // coordinate is held to the strict tolerance here.
    let (set, records) = end_to_end_fixture()?;
    for (name, spec) in LossSpec::all_variants() {
        let report = grad::check_param_grads(&spec, &set, &records, &scale, eps)?;
        let pass = report.max_rel_error <= tol;
        println!(
            "gradcheck end-to-end variant={name}: max_rel={:.3e} {}",
            report.max_rel_error,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failures.push(format!("end-to-end variant={name}"));
        }
        results.push((format!("end_to_end:{name}"), report));
    }

    let out = &args.common.out;
    let report_map: BTreeMap<String, grad::GradCheckReport> = results.into_iter().collect();
    write_json(&out.join("gradcheck.json"), &report_map)?;
    let mut resolved = KvConfig::default();
    resolved.insert("gradcheck", "b", b.to_string());
    resolved.insert("gradcheck", "d", d.to_string());
    resolved.insert("gradcheck", "seeds", seeds.to_string());
    resolved.insert("gradcheck", "eps", eps.to_string());
    resolved.insert("gradcheck", "tol", tol.to_string());
    resolved.insert("gradcheck", "backstop", backstop.to_string());
    write_resolved(out, &resolved)?;

    if failures.is_empty() {
        Ok(CmdOutcome::Ok)
    } else {
        Ok(CmdOutcome::CheckFailed(failures.join("; ")))
    }
}

const ORACLE_KEYS: (&str, &[&str]) = ("oracle", &["b", "seeds", "tol", "scale"]);

pub fn oracle_check(args: OracleCheckArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[ORACLE_KEYS])?;
    let b_list_text = resolve(args.b.clone(), &cfg, "oracle", "b", "2,3,4,6".to_string())?;
    let seeds = resolve(args.seeds, &cfg, "oracle", "seeds", 20u64)?;
    let tol = resolve(args.tol, &cfg, "oracle", "tol", 1e-10)?;
    let scale = resolve(
        args.scale,
        &cfg,
        "oracle",
        "scale",
        LogitScale::default().value(),
    )?;
    let b_list: Vec<usize> = b_list_text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| verr(format!("oracle.b '{b_list_text}': {e}")))?;

    let mut failures = Vec::new();
    let mut summary: BTreeMap<String, f64> = BTreeMap::new();
    for &b in &b_list {
        for metric in [Metric::Cosine, Metric::L2Mapped] {
            for strategy in [
                ctp_core::loss::FlattenStrategy::Nm,
                ctp_core::loss::FlattenStrategy::Mask,
            ] {
                let mut worst = 0.0f64;
                for seed in 0..seeds {
                    let mut rng =
                        StdRng::seed_from_u64(seed.wrapping_mul(1315423911).wrapping_add(b as u64));
                    let t = random_batch(Modality::Text, b, 8, &mut rng).normalized()?;
                    let i = random_batch(Modality::Image, b, 8, &mut rng).normalized()?;
                    let p = random_batch(Modality::Point, b, 8, &mut rng).normalized()?;
                    let fast = ctp_core::loss::tensor_loss(
                        &t,
                        &i,
                        &p,
                        metric,
                        strategy,
                        Coefficients::THIRDS,
                        scale,
                        Reduction::Sum,
                    )?;
                    let slow = grad::brute_force_loss(
                        &t,
                        &i,
                        &p,
                        metric,
                        strategy,
                        Coefficients::THIRDS,
                        scale,
                        Reduction::Sum,
                    )?;
                    let diff = (fast.total - slow).abs();
                    worst = worst.max(diff);
                    if diff > tol {
                        failures.push(format!(
                            "b={b} metric={metric:?} strategy={strategy:?} seed={seed}: |diff|={diff:.3e}"
                        ));
                    }
                }
                println!(
                    "oracle-check b={b} metric={metric:?} strategy={strategy:?} seeds={seeds}: max |diff| {worst:.3e} {}",
                    if worst <= tol { "PASS" } else { "FAIL" }
                );
                summary.insert(format!("b{b}:{metric:?}:{strategy:?}"), worst);
            }
        }
    }

    let out = &args.common.out;
    write_json(&out.join("oracle_check.json"), &summary)?;
    let mut resolved = KvConfig::default();
    resolved.insert("oracle", "b", &b_list_text);
    resolved.insert("oracle", "seeds", seeds.to_string());
    resolved.insert("oracle", "tol", tol.to_string());
    resolved.insert("oracle", "scale", scale.to_string());
    write_resolved(out, &resolved)?;

    if failures.is_empty() {
        Ok(CmdOutcome::Ok)
    } else {
        Ok(CmdOutcome::CheckFailed(failures.join("; ")))
    }
}

const COMPARE_KEYS: (&str, &[&str]) = ("compare", &["seeds", "seed"]);
const COMPARE_DATASET_KEYS: (&str, &[&str]) = ("dataset", &["classes", "train", "test"]);
const COMPARE_TRAINING_KEYS: (&str, &[&str]) = ("training", &["epochs", "batch_size", "lr"]);

pub fn compare(args: CompareArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[
        COMPARE_KEYS,
        COMPARE_DATASET_KEYS,
        COMPARE_TRAINING_KEYS,
        ENCODER_KEYS,
    ])?;
    let seeds = resolve(args.seeds, &cfg, "compare", "seeds", 3u64)?;
    let base_seed = resolve(args.seed, &cfg, "compare", "seed", 0u64)?;
    if seeds == 0 {
        return Err(verr("--seeds must be >= 1"));
    }
    let synth_base = SynthConfig {
        num_classes: resolve(args.classes, &cfg, "dataset", "classes", 5)?,
        train_count: resolve(args.train, &cfg, "dataset", "train", 2000)?,
        test_count: resolve(args.test, &cfg, "dataset", "test", 500)?,
        ..SynthConfig::default()
    };
    let train_base = TrainConfig {
        epochs: resolve(args.epochs, &cfg, "training", "epochs", 50)?,
        batch_size: resolve(args.batch_size, &cfg, "training", "batch_size", 32)?,
        lr: resolve(args.lr, &cfg, "training", "lr", 1e-3)?,
        embed_dim: resolve(args.embed_dim, &cfg, "encoders", "embed_dim", 32)?,
        hidden_dim: resolve(args.hidden_dim, &cfg, "encoders", "hidden_dim", 64)?,
        n_points: resolve(args.n_points, &cfg, "encoders", "n_points", 32)?,
        ..TrainConfig::default()
    };

    // accuracies[variant][mode] -> one value per seed
    let mut accuracies: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for k in 0..seeds {
        let synth = SynthConfig {
            seed: base_seed.wrapping_add(k),
            ..synth_base.clone()
        };
        synth.validate()?;
        let (train_records, test_records, table) = dataset::generate_synthetic(&synth)?;
        for variant in LossChoice::ALL {
            let train_cfg = TrainConfig {
                loss: variant,
                seed: base_seed.wrapping_add(k),
                ..train_base.clone()
            };
            let run = training::train(&train_cfg, &train_records)?;
            for mode in EvalMode::ALL {
                let report = eval::evaluate(&run.checkpoint, &test_records, &table, mode)?;
                accuracies
                    .entry(variant.tag())
                    .or_default()
                    .entry(mode.tag())
                    .or_default()
                    .push(report.avg_accuracy);
            }
            eprintln!("compare: seed {k} variant {} done", variant.tag());
        }
    }

    let mut table_text = format!("{:<12}", "Method");
    for mode in EvalMode::ALL {
        table_text.push_str(&format!("  {:>16}", mode.tag()));
    }
    table_text.push('\n');
    for variant in LossChoice::ALL {
        table_text.push_str(&format!("{:<12}", variant.tag()));
        for mode in EvalMode::ALL {
            let runs = &accuracies[variant.tag()][mode.tag()];
            let mean = runs.iter().sum::<f64>() / runs.len() as f64;
            if runs.len() > 1 {
                let var = runs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                    / (runs.len() - 1) as f64;
                table_text.push_str(&format!("  {:>8.2} ± {:>5.2}", mean, var.sqrt()));
            } else {
                table_text.push_str(&format!("  {mean:>16.2}"));
            }
        }
        table_text.push('\n');
    }
    print!("{table_text}");

    let out = &args.common.out;
    write_json(&out.join("comparison.json"), &accuracies)?;
    fs::write(out.join("comparison.txt"), &table_text)?;
    let mut resolved = KvConfig::default();
    resolved.insert("compare", "seeds", seeds.to_string());
    resolved.insert("compare", "seed", base_seed.to_string());
    resolved.insert("dataset", "classes", synth_base.num_classes.to_string());
    resolved.insert("dataset", "train", synth_base.train_count.to_string());
    resolved.insert("dataset", "test", synth_base.test_count.to_string());
    resolved.insert("training", "epochs", train_base.epochs.to_string());
    resolved.insert("training", "batch_size", train_base.batch_size.to_string());
    resolved.insert("training", "lr", train_base.lr.to_string());
    resolved.insert("encoders", "embed_dim", train_base.embed_dim.to_string());
    resolved.insert("encoders", "hidden_dim", train_base.hidden_dim.to_string());
    resolved.insert("encoders", "n_points", train_base.n_points.to_string());
    write_resolved(out, &resolved)?;
    Ok(CmdOutcome::Ok)
}

const BENCH_KEYS: (&str, &[&str]) = ("bench", &["b", "d", "iters"]);

pub fn bench(args: BenchArgs) -> CmdResult {
    let cfg = setup(&args.common)?;
    cfg.check_known(&[BENCH_KEYS])?;
    let b = resolve(args.b, &cfg, "bench", "b", 32usize)?;
    let d = resolve(args.d, &cfg, "bench", "d", 32usize)?;
    let iters = resolve(args.iters, &cfg, "bench", "iters", 10usize)?;
    if b < 2 || d < 1 || iters < 1 {
        return Err(verr("bench needs b >= 2, d >= 1, iters >= 1"));
    }

    let mut rng = StdRng::seed_from_u64(1);
    let t = random_batch(Modality::Text, b, d, &mut rng).normalized()?;
    let i = random_batch(Modality::Image, b, d, &mut rng).normalized()?;
    let p = random_batch(Modality::Point, b, d, &mut rng).normalized()?;
    let scale = LogitScale::default();
    let spec = LossSpec::tensor(Metric::L2Mapped, ctp_core::loss::FlattenStrategy::Mask);

    let mut timings: BTreeMap<&str, f64> = BTreeMap::new();
    let mut time_it = |label: &'static str, mut f: Box<dyn FnMut()>| {
        let start = Instant::now();
        for _ in 0..iters {
            f();
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / iters as f64;
        timings.insert(label, ms);
    };

    {
        let (t, i, p) = (t.clone(), i.clone(), p.clone());
        time_it(
            "cosine_tensor",
            Box::new(move || {
                ctp_core::similarity::cosine_tensor(&t, &i, &p).unwrap();
            }),
        );
    }
    {
        let (t, i, p) = (t.clone(), i.clone(), p.clone());
        time_it(
            "l2_tensor_mapped",
            Box::new(move || {
                let raw = ctp_core::similarity::l2_tensor(&t, &i, &p).unwrap();
                ctp_core::similarity::map_l2(&raw, 3).unwrap();
            }),
        );
    }
    {
        let (t, i, p) = (t.clone(), i.clone(), p.clone());
        time_it(
            "tensor_loss_mask",
            Box::new(move || {
                ctp_core::loss::tensor_loss(
                    &t,
                    &i,
                    &p,
                    Metric::L2Mapped,
                    ctp_core::loss::FlattenStrategy::Mask,
                    Coefficients::THIRDS,
                    scale.value(),
                    Reduction::Sum,
                )
                .unwrap();
            }),
        );
    }
    {
        let (t, i, p) = (t.clone(), i.clone(), p.clone());
        time_it(
            "loss_and_grad_features",
            Box::new(move || {
                grad::loss_and_grad_features(&spec, &t, &i, &p, &scale).unwrap();
            }),
        );
    }
    {
        let cloud: Vec<[f64; 3]> = (0..2048)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        time_it(
            "fps_2048_to_1024",
            Box::new(move || {
                dataset::fps(&cloud, 1024, 0).unwrap();
            }),
        );
    }

    println!("{:<24} {:>12}", "kernel", "ms/iter");
    for (label, ms) in &timings {
        println!("{label:<24} {ms:>12.3}");
    }
    let out = &args.common.out;
    write_json(&out.join("bench.json"), &timings)?;
    let mut resolved = KvConfig::default();
    resolved.insert("bench", "b", b.to_string());
    resolved.insert("bench", "d", d.to_string());
    resolved.insert("bench", "iters", iters.to_string());
    write_resolved(out, &resolved)?;
    Ok(CmdOutcome::Ok)
}
