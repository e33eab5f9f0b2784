//! Zero-shot classification: class prompts become text features, and each
//! test sample is assigned the class with the highest similarity.
//!
//! Joint image-point inputs score each class with the mapped-L2 triple
//! similarity; single-modality modes fall back to cosine similarity
//! against the class text features. Ties always break to the smallest
//! class index.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::dataset::{self, ClassPrototype, TripletRecord};
use crate::encoders::{self, EncoderSet};
use crate::error::{Error, Result};
use crate::linalg;

use crate::similarity::FeatureBatch;
use crate::training::Checkpoint;

/// Which inputs drive classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Image feature vs class texts, cosine similarity.
    TextImage,
    /// Point feature vs class texts, cosine similarity.
    TextPoint,
    /// Joint image-point pair vs class texts, mapped-L2 triple similarity.
    TextImagePoint,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [
        EvalMode::TextImage,
        EvalMode::TextPoint,
        EvalMode::TextImagePoint,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EvalMode::TextImage => "T_I",
            EvalMode::TextPoint => "T_P",
            EvalMode::TextImagePoint => "T_IP",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T_I" => Ok(EvalMode::TextImage),
            "T_P" => Ok(EvalMode::TextPoint),
            "T_IP" => Ok(EvalMode::TextImagePoint),
            other => Err(Error::invalid(format!(
                "unknown eval mode '{other}' (expected T_I, T_P, T_IP, all)"
            ))),
        }
    }
}

/// Classification quality for one mode. `avg_accuracy` is the micro
/// (per-sample) average; `macro_accuracy` is the mean of the per-class
/// accuracies. Confusion rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub n_samples: usize,
    pub avg_accuracy: f64,
    pub macro_accuracy: f64,
    pub classes: Vec<String>,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion: Vec<Vec<u64>>,
}

/// Raw text inputs for the given classes, in class-list order. For
/// synthetic data the class "prompt" is the generator's zero-noise
/// prototype text vector.
pub fn build_class_texts(classes: &[String], table: &[ClassPrototype]) -> Result<Vec<Vec<f64>>> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("class list"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for class in classes {
        if !seen.insert(class) {
            return Err(Error::DuplicateClass(class.clone()));
        }
    }
    classes
        .iter()
        .map(|class| {
            table
                .iter()
                .find(|proto| &proto.class_label == class)
                .map(|proto| proto.text_vector.clone())
                .ok_or_else(|| Error::UnknownClass(class.clone()))
        })
        .collect()
}

/// Joint classification: scores every class text against the image-point
/// pair with the mapped-L2 triple similarity and returns the argmax plus
/// all scores. Ties break to the smallest class index.
pub fn classify_pair(
    text_feats: &FeatureBatch,
    img_feat: &[f64],
    pc_feat: &[f64],
) -> Result<(usize, Vec<f64>)> {
    let m = text_feats.len();
    let d = text_feats.dim();
    if img_feat.len() != d || pc_feat.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: img_feat.len().max(pc_feat.len()),
        });
    }
    let l_max = 3.0 * 3f64.sqrt();
    let ip = linalg::distance(img_feat, pc_feat);
    let mut scores = Vec::with_capacity(m);
    for c in 0..m {
        let t = text_feats.row(c);
        let sum = linalg::distance(t, img_feat) + linalg::distance(t, pc_feat) + ip;
        scores.push(1.0 - sum / l_max);
    }
    Ok((argmax(&scores), scores))
}

/// Single-modality classification by cosine similarity; smallest-index
/// tie-break.
pub fn classify_single(text_feats: &FeatureBatch, feat: &[f64]) -> Result<usize> {
    let d = text_feats.dim();
    if feat.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: feat.len(),
        });
    }
    let scores: Vec<f64> = (0..text_feats.len())
        .map(|c| linalg::dot(text_feats.row(c), feat))
        .collect();
    Ok(argmax(&scores))
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &score) in scores.iter().enumerate().skip(1) {
        if score > scores[best] {
            best = idx;
        }
    }
    best
}

/// Predicted class index per row, for one mode, over encoded batches.
pub(crate) fn classify_batches(
    text_feats: &FeatureBatch,
    img_feats: &FeatureBatch,
    pc_feats: &FeatureBatch,
    mode: EvalMode,
) -> Result<Vec<usize>> {
    (0..img_feats.len())
        .map(|r| match mode {
            EvalMode::TextImage => classify_single(text_feats, img_feats.row(r)),
            EvalMode::TextPoint => classify_single(text_feats, pc_feats.row(r)),
            EvalMode::TextImagePoint => {
                classify_pair(text_feats, img_feats.row(r), pc_feats.row(r)).map(|(c, _)| c)
            }
        })
        .collect()
}

/// Runs zero-shot classification of a test manifest against the classes in
/// the prototype table, using the checkpoint's encoders.
pub fn evaluate(
    checkpoint: &Checkpoint,
    test: &[TripletRecord],
    table: &[ClassPrototype],
    mode: EvalMode,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test manifest"));
    }
    let classes: Vec<String> = table.iter().map(|p| p.class_label.clone()).collect();
    let class_index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(idx, c)| (c.as_str(), idx))
        .collect();
    if class_index.len() != classes.len() {
        return Err(Error::DuplicateClass("prototype table".into()));
    }
    let encoders = checkpoint.encoders()?;
    let text_feats = encode_class_texts(&encoders, &classes, table)?;

    let prepared = dataset::prepare_records(test, checkpoint.config.n_points)?;
    let (_, img_feats, pc_feats) = encoders::encode_batch(&encoders, &prepared)?;
    let predictions = classify_batches(&text_feats, &img_feats, &pc_feats, mode)?;

    let m = classes.len();
    let mut confusion = vec![vec![0u64; m]; m];
    for (record, &pred) in test.iter().zip(&predictions) {
        let truth = *class_index
            .get(record.class_label.as_str())
            .ok_or_else(|| Error::UnknownClass(record.class_label.clone()))?;
        confusion[truth][pred] += 1;
    }
    Ok(report_from_confusion(mode.tag(), classes, confusion))
}

/// Encodes and normalizes the class text prompts with the text encoder.
pub fn encode_class_texts(
    encoders: &EncoderSet,
    classes: &[String],
    table: &[ClassPrototype],
) -> Result<FeatureBatch> {
    let raw_texts = build_class_texts(classes, table)?;
    let rows: Result<Vec<Vec<f64>>> = raw_texts
        .iter()
        .map(|raw| Ok(encoders::mlp_forward(&encoders.text, raw)?.into_values()))
        .collect();
    FeatureBatch::new(crate::similarity::Modality::Text, rows?)?.normalized()
}

fn report_from_confusion(mode: &str, classes: Vec<String>, confusion: Vec<Vec<u64>>) -> EvalReport {
    let n_samples: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..classes.len()).map(|c| confusion[c][c]).sum();
    let mut per_class_accuracy = BTreeMap::new();
    let mut macro_sum = 0.0;
    let mut macro_count = 0usize;
    for (idx, class) in classes.iter().enumerate() {
        let row_total: u64 = confusion[idx].iter().sum();
        if row_total > 0 {
            let acc = 100.0 * confusion[idx][idx] as f64 / row_total as f64;
            per_class_accuracy.insert(class.clone(), acc);
            macro_sum += acc;
            macro_count += 1;
        }
    }
    EvalReport {
        mode: mode.to_string(),
        n_samples: n_samples as usize,
        avg_accuracy: 100.0 * correct as f64 / n_samples as f64,
        macro_accuracy: macro_sum / macro_count.max(1) as f64,
        classes,
        per_class_accuracy,
        confusion,
    }
}

/// Fixed-width accuracy table, one row per report: average first, then
/// per-class columns, mirroring the usual zero-shot layout.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let classes = &rows[0].1.classes;
    let label_width = rows
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}  {:>7}", "Method", "Avg.");
    for class in classes {
        let _ = write!(out, "  {:>9}", truncate(class, 9));
    }
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "{label:<label_width$}  {:>7.2}", report.avg_accuracy);
        for class in classes {
            match report.per_class_accuracy.get(class) {
                Some(acc) => {
                    let _ = write!(out, "  {acc:>9.2}");
                }
                None => {
                    let _ = write!(out, "  {:>9}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn truncate(s: &str, width: usize) -> &str {
    if s.len() <= width {
        s
    } else {
        &s[..width]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::Modality;

    fn basis(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn unit_batch(rows: Vec<Vec<f64>>) -> FeatureBatch {
        FeatureBatch::new(Modality::Text, rows)
            .unwrap()
            .into_unit()
            .unwrap()
    }

    #[test]
    fn exact_match_scores_one() {
        let texts = unit_batch(vec![basis(3, 0), basis(3, 1)]);
        let (class, scores) = classify_pair(&texts, &basis(3, 0), &basis(3, 0)).unwrap();
        assert_eq!(class, 0);
        assert!((scores[0] - 1.0).abs() < 1e-12);
        let expect_other = 1.0 - 2.0 * 2f64.sqrt() / (3.0 * 3f64.sqrt());
        assert!((scores[1] - expect_other).abs() < 1e-9);
        assert!((expect_other - 0.4557).abs() < 1e-4);
    }

    #[test]
    fn opposite_text_loses() {
        let texts = unit_batch(vec![basis(3, 0), {
            let mut v = basis(3, 0);
            v[0] = -1.0;
            v
        }]);
        let (class, scores) = classify_pair(&texts, &basis(3, 0), &basis(3, 0)).unwrap();
        assert_eq!(class, 0);
        assert!((scores[1] - (1.0 - 4.0 / (3.0 * 3f64.sqrt()))).abs() < 1e-12);
        assert!((scores[1] - 0.2302).abs() < 1e-4);
    }

    #[test]
    fn pair_scores_match_exhaustive_recomputation() {
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(4);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0f64..1.0)).collect();
            let n = crate::linalg::norm(&v);
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let texts = unit_batch((0..4).map(|_| unit(6)).collect());
        let img = unit(6);
        let pc = unit(6);
        let (class, scores) = classify_pair(&texts, &img, &pc).unwrap();
        let l_max = 3.0 * 3f64.sqrt();
        let mut best = 0;
        for c in 0..4 {
            let t = texts.row(c);
            let manual = 1.0
                - (crate::linalg::distance(t, &img)
                    + crate::linalg::distance(t, &pc)
                    + crate::linalg::distance(&img, &pc))
                    / l_max;
            assert!((scores[c] - manual).abs() < 1e-12);
            if manual > scores[best] {
                best = c;
            }
        }
        assert_eq!(class, best);
    }

    #[test]
    fn pair_argmax_matches_negated_raw_sums() {
        // The mapped score is a strictly decreasing affine image of the
        // raw distance sum, so both rankings must coincide.
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(12);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0f64..1.0)).collect();
            let n = crate::linalg::norm(&v);
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        for _ in 0..20 {
            let texts = unit_batch((0..5).map(|_| unit(4)).collect());
            let img = unit(4);
            let pc = unit(4);
            let (class, _) = classify_pair(&texts, &img, &pc).unwrap();
            let sums: Vec<f64> = (0..5)
                .map(|c| {
                    let t = texts.row(c);
                    -(crate::linalg::distance(t, &img)
                        + crate::linalg::distance(t, &pc)
                        + crate::linalg::distance(&img, &pc))
                })
                .collect();
            assert_eq!(class, argmax(&sums));
        }
    }

    #[test]
    fn single_modality_prototype_recovery() {
        let texts = unit_batch(vec![basis(4, 0), basis(4, 1), basis(4, 2)]);
        assert_eq!(classify_single(&texts, &basis(4, 1)).unwrap(), 1);
        // Orthogonal to all but one weakly-similar prototype.
        let mut feat = basis(4, 3);
        feat[2] = 0.1;
        let n = crate::linalg::norm(&feat);
        let feat: Vec<f64> = feat.iter().map(|x| x / n).collect();
        assert_eq!(classify_single(&texts, &feat).unwrap(), 2);
    }

    #[test]
    fn equal_scores_take_smallest_index() {
        let texts = unit_batch(vec![basis(3, 0), basis(3, 0), basis(3, 1)]);
        assert_eq!(classify_single(&texts, &basis(3, 0)).unwrap(), 0);
        let (class, _) = classify_pair(&texts, &basis(3, 2), &basis(3, 2)).unwrap();
        assert_eq!(class, 0);
    }

    #[test]
    fn single_modality_modes_agree_on_identical_features() {
        let texts = unit_batch(vec![basis(3, 0), basis(3, 1)]);
        let feats = unit_batch(vec![basis(3, 1), basis(3, 0), basis(3, 1)]);
        let a = classify_batches(&texts, &feats, &feats, EvalMode::TextImage).unwrap();
        let b = classify_batches(&texts, &feats, &feats, EvalMode::TextPoint).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_class_texts_validates() {
        let table = vec![
            ClassPrototype {
                class_label: "a".into(),
                text_vector: vec![1.0, 0.0],
            },
            ClassPrototype {
                class_label: "b".into(),
                text_vector: vec![0.0, 1.0],
            },
        ];
        let ordered = build_class_texts(&["b".to_string(), "a".to_string()], &table).unwrap();
        assert_eq!(ordered[0], vec![0.0, 1.0]);
        assert!(matches!(
            build_class_texts(&["a".to_string(), "a".to_string()], &table),
            Err(Error::DuplicateClass(_))
        ));
        assert!(matches!(
            build_class_texts(&["c".to_string()], &table),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn confusion_bookkeeping_is_consistent() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let confusion = vec![vec![3, 1], vec![2, 4]];
        let report = report_from_confusion("T_IP", classes, confusion);
        assert_eq!(report.n_samples, 10);
        assert!((report.avg_accuracy - 70.0).abs() < 1e-12);
        assert!((report.per_class_accuracy["a"] - 75.0).abs() < 1e-12);
        assert!((report.per_class_accuracy["b"] - 400.0 / 6.0).abs() < 1e-12);
        let macro_expect = (75.0 + 400.0 / 6.0) / 2.0;
        assert!((report.macro_accuracy - macro_expect).abs() < 1e-12);
        // Diagonal sum equals the correct count behind the micro average.
        let diag: u64 = (0..2).map(|c| report.confusion[c][c]).sum();
        assert_eq!(diag, 7);
    }

    #[test]
    fn table_renders_fixed_width() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let report = report_from_confusion("T_IP", classes, vec![vec![5, 0], vec![0, 5]]);
        let table = render_table(&[("ctp_mask".to_string(), &report)]);
        assert!(table.contains("Avg."));
        assert!(table.contains("100.00"));
        assert_eq!(table.lines().count(), 2);
    }
}
