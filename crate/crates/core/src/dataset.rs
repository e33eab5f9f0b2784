//! Synthetic triplet data, manifest I/O, and point-cloud preprocessing.
//!
//! A manifest is one JSON record per line with fields `id`, `class`,
//! `caption`, `text_vec`, `image_vec`, and `points`; numbers round-trip
//! exactly, so real extracted datasets can replace the synthetic generator
//! without code changes. The class prototype table is a separate file
//! mapping each class to its zero-noise text vector.

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::encoders::PointCloudSample;
use crate::error::{Error, Result};

/// One aligned (caption, image, point cloud) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "caption")]
    pub caption_text: String,
    #[serde(rename = "text_vec")]
    pub text_vector: Vec<f64>,
    #[serde(rename = "image_vec")]
    pub image_vector: Vec<f64>,
    pub points: Vec<[f64; 3]>,
}

/// Zero-noise per-class text vectors, used to build class prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "text_vec")]
    pub text_vector: Vec<f64>,
}

/// Knobs for the synthetic triplet generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub noise_sigma_text: f64,
    pub noise_sigma_image: f64,
    pub noise_sigma_point: f64,
    pub points_per_cloud: (usize, usize),
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 5,
            latent_dim: 16,
            text_dim: 24,
            image_dim: 24,
            noise_sigma_text: 0.1,
            noise_sigma_image: 0.1,
            noise_sigma_point: 0.1,
            points_per_cloud: (24, 48),
            train_count: 2000,
            test_count: 500,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.latent_dim == 0 || self.text_dim == 0 || self.image_dim == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        for sigma in [
            self.noise_sigma_text,
            self.noise_sigma_image,
            self.noise_sigma_point,
        ] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::invalid("noise sigmas must be >= 0"));
            }
        }
        let (lo, hi) = self.points_per_cloud;
        if lo == 0 || hi < lo {
            return Err(Error::invalid(
                "points_per_cloud range must be 1 <= lo <= hi",
            ));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::invalid("record counts must be >= 1"));
        }
        Ok(())
    }
}

fn gauss_vec(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Fixed random linear map from latent space to a raw modality space,
/// scaled so outputs stay O(1).
struct LinearMap {
    rows: Vec<Vec<f64>>,
}

impl LinearMap {
    fn sample(rng: &mut StdRng, out_dim: usize, in_dim: usize) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        LinearMap {
            rows: (0..out_dim)
                .map(|_| gauss_vec(rng, in_dim).iter().map(|g| g * scale).collect())
                .collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| crate::linalg::dot(row, x))
            .collect()
    }
}

/// Draws class-balanced train and test manifests plus the prototype table.
/// Everything is a deterministic function of the config (including the
/// seed); each record's raw vectors are a fixed linear image of its class
/// prototype plus Gaussian noise, and its point cloud is jittered around a
/// class-specific 3D center.
pub fn generate_synthetic(
    cfg: &SynthConfig,
) -> Result<(Vec<TripletRecord>, Vec<TripletRecord>, Vec<ClassPrototype>)> {
    cfg.validate()?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let classes: Vec<String> = (0..cfg.num_classes).map(|c| format!("class_{c}")).collect();

    // Unit-norm latent prototypes, one per class.
    let prototypes: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            let v = gauss_vec(&mut rng, cfg.latent_dim);
            let n = crate::linalg::norm(&v).max(1e-12);
            v.iter().map(|x| x / n).collect()
        })
        .collect();

    let text_map = LinearMap::sample(&mut rng, cfg.text_dim, cfg.latent_dim);
    let image_map = LinearMap::sample(&mut rng, cfg.image_dim, cfg.latent_dim);
    let center_map = LinearMap::sample(&mut rng, 3, cfg.latent_dim);
    // Spread the 3D centers so clouds from different classes are separable
    // even under jitter.
    let centers: Vec<[f64; 3]> = prototypes
        .iter()
        .map(|p| {
            let c = center_map.apply(p);
            [2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]
        })
        .collect();

    let draw_split = |prefix: &str, count: usize, rng: &mut StdRng| -> Vec<TripletRecord> {
        (0..count)
            .map(|idx| {
                let class = idx % cfg.num_classes;
                let proto = &prototypes[class];
                let mut text_vector = text_map.apply(proto);
                for v in text_vector.iter_mut() {
                    *v += cfg.noise_sigma_text * rng.sample::<f64, _>(StandardNormal);
                }
                let mut image_vector = image_map.apply(proto);
                for v in image_vector.iter_mut() {
                    *v += cfg.noise_sigma_image * rng.sample::<f64, _>(StandardNormal);
                }
                let n_points = rng.random_range(cfg.points_per_cloud.0..=cfg.points_per_cloud.1);
                let center = centers[class];
                let points = (0..n_points)
                    .map(|_| {
                        [
                            center[0]
                                + cfg.noise_sigma_point * rng.sample::<f64, _>(StandardNormal),
                            center[1]
                                + cfg.noise_sigma_point * rng.sample::<f64, _>(StandardNormal),
                            center[2]
                                + cfg.noise_sigma_point * rng.sample::<f64, _>(StandardNormal),
                        ]
                    })
                    .collect();
                TripletRecord {
                    id: format!("{prefix}-{idx:06}"),
                    class_label: classes[class].clone(),
                    caption_text: format!("This is a {}.", classes[class]),
                    text_vector,
                    image_vector,
                    points,
                }
            })
            .collect()
    };

    let train = draw_split("train", cfg.train_count, &mut rng);
    let test = draw_split("test", cfg.test_count, &mut rng);
    let table = classes
        .iter()
        .zip(&prototypes)
        .map(|(class_label, proto)| ClassPrototype {
            class_label: class_label.clone(),
            text_vector: text_map.apply(proto),
        })
        .collect();
    Ok((train, test, table))
}

/// Greedy farthest point sampling. Starting from `start`, repeatedly picks
/// the point with the largest minimum distance to the chosen set; distance
/// ties keep the smallest index. Returns `k` distinct indices.
pub fn fps(points: &[[f64; 3]], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput("points"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k={k} outside 1..={n}")));
    }
    if start >= n {
        return Err(Error::IndexOutOfRange {
            index: start,
            len: n,
        });
    }
    let dist2 = |a: [f64; 3], b: [f64; 3]| {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        dx * dx + dy * dy + dz * dz
    };
    let mut chosen = Vec::with_capacity(k);
    let mut min_dist2 = vec![f64::INFINITY; n];
    let mut current = start;
    chosen.push(start);
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_dist2 = f64::NEG_INFINITY;
        for idx in 0..n {
            let d = dist2(points[idx], points[current]);
            if d < min_dist2[idx] {
                min_dist2[idx] = d;
            }
            // Strict > keeps the smallest index on ties; already-chosen
            // points sit at distance zero and never win.
            if min_dist2[idx] > best_dist2 && min_dist2[idx] > 0.0 {
                best_dist2 = min_dist2[idx];
                best = idx;
            }
        }
        if best == usize::MAX {
            // All remaining points coincide with chosen ones; fall back to
            // the smallest unchosen index so k distinct indices come back.
            best = (0..n).find(|idx| !chosen.contains(idx)).expect("k <= n");
        }
        chosen.push(best);
        current = best;
        min_dist2[best] = 0.0;
    }
    Ok(chosen)
}

/// Fits a cloud to exactly `n_target` rows: short clouds get zero-padded
/// rows marked invalid, long clouds keep the farthest-point subset.
pub fn pad_or_sample(
    points: &[[f64; 3]],
    n_target: usize,
    start: usize,
) -> Result<PointCloudSample> {
    if points.is_empty() {
        return Err(Error::EmptyInput("points"));
    }
    if n_target == 0 {
        return Err(Error::invalid("n_target must be >= 1"));
    }
    let m = points.len();
    if m == n_target {
        return PointCloudSample::dense(points.to_vec());
    }
    if m < n_target {
        let mut rows = points.to_vec();
        let mut mask = vec![true; m];
        rows.resize(n_target, [0.0, 0.0, 0.0]);
        mask.resize(n_target, false);
        return PointCloudSample::new(rows, mask);
    }
    let keep = fps(points, n_target, start)?;
    let rows: Vec<[f64; 3]> = keep.iter().map(|&idx| points[idx]).collect();
    PointCloudSample::dense(rows)
}

/// A record with its point cloud preprocessed to a fixed size, ready for
/// the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub id: String,
    pub class_label: String,
    pub text_vector: Vec<f64>,
    pub image_vector: Vec<f64>,
    pub cloud: PointCloudSample,
}

/// Preprocesses every record's cloud to `n_points` rows (pad or FPS,
/// deterministic start index 0).
pub fn prepare_records(records: &[TripletRecord], n_points: usize) -> Result<Vec<PreparedRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(PreparedRecord {
                id: r.id.clone(),
                class_label: r.class_label.clone(),
                text_vector: r.text_vector.clone(),
                image_vector: r.image_vector.clone(),
                cloud: pad_or_sample(&r.points, n_points, 0)?,
            })
        })
        .collect()
}

/// Writes one JSON record per line.
pub fn write_manifest(records: &[TripletRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid(format!("serialize record {}: {e}", record.id)))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a manifest back; any malformed line fails the whole read and
/// names the line. An empty file is an empty dataset.
pub fn read_manifest(path: &Path) -> Result<Vec<TripletRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes the class prototype table, one JSON line per class.
pub fn write_prototypes(table: &[ClassPrototype], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for proto in table {
        let line = serde_json::to_string(proto)
            .map_err(|e| Error::invalid(format!("serialize prototype: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prototypes(path: &Path) -> Result<Vec<ClassPrototype>> {
    let reader = BufReader::new(File::open(path)?);
    let mut table = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let proto: ClassPrototype = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no + 1,
            message: e.to_string(),
        })?;
        table.push(proto);
    }
    Ok(table)
}

/// Drops records whose cloud has fewer than `min_points` points. Mirrors
/// the minimum-point filters real captures need; synthetic data keeps it
/// off so class balance stays exact.
pub fn filter_min_points(records: Vec<TripletRecord>, min_points: usize) -> Vec<TripletRecord> {
    records
        .into_iter()
        .filter(|r| r.points.len() >= min_points)
        .collect()
}

/// Seeded shuffled batches of record indices. The final short batch is
/// dropped iff `drop_last`.
pub fn batch_iter(
    n_records: usize,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..n_records).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    if drop_last {
        if let Some(last) = batches.last() {
            if last.len() < batch_size {
                batches.pop();
            }
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            num_classes: 5,
            train_count: 50,
            test_count: 20,
            points_per_cloud: (4, 8),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let cfg = SynthConfig {
            noise_sigma_text: 0.0,
            noise_sigma_image: 0.0,
            ..tiny_cfg()
        };
        let (train, _, _) = generate_synthetic(&cfg).unwrap();
        for record in &train {
            let first = train
                .iter()
                .find(|r| r.class_label == record.class_label)
                .unwrap();
            assert_eq!(record.text_vector, first.text_vector);
            assert_eq!(record.image_vector, first.image_vector);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_cfg();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn class_balance_is_exact() {
        let cfg = SynthConfig {
            train_count: 2000,
            test_count: 500,
            ..tiny_cfg()
        };
        let (train, test, _) = generate_synthetic(&cfg).unwrap();
        for classes in 0..5 {
            let label = format!("class_{classes}");
            assert_eq!(train.iter().filter(|r| r.class_label == label).count(), 400);
            assert_eq!(test.iter().filter(|r| r.class_label == label).count(), 100);
        }
    }

    #[test]
    fn generator_rejects_one_class() {
        let cfg = SynthConfig {
            num_classes: 1,
            ..tiny_cfg()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn synthetic_text_vectors_are_nearest_prototype_separable() {
        // Generator sanity oracle: tiny noise relative to the prototype gap
        // must give near-perfect nearest-prototype classification of the
        // raw text vectors.
        let cfg = SynthConfig {
            noise_sigma_text: 0.01,
            train_count: 500,
            ..tiny_cfg()
        };
        let (train, _, table) = generate_synthetic(&cfg).unwrap();
        let mut correct = 0usize;
        for record in &train {
            let mut best = usize::MAX;
            let mut best_dist = f64::INFINITY;
            for (idx, proto) in table.iter().enumerate() {
                let d = record
                    .text_vector
                    .iter()
                    .zip(&proto.text_vector)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                if d < best_dist {
                    best_dist = d;
                    best = idx;
                }
            }
            if table[best].class_label == record.class_label {
                correct += 1;
            }
        }
        assert!(correct as f64 / train.len() as f64 >= 0.99);
    }

    #[test]
    fn fps_collinear_extremes() {
        let points: Vec<[f64; 3]> = (0..10).map(|x| [x as f64, 0.0, 0.0]).collect();
        assert_eq!(fps(&points, 2, 0).unwrap(), vec![0, 9]);
    }

    #[test]
    fn fps_collinear_tie_breaks_to_smaller_index() {
        let points: Vec<[f64; 3]> = (0..10).map(|x| [x as f64, 0.0, 0.0]).collect();
        // After {0, 9}, indices 4 and 5 tie at min-distance 4; 4 wins.
        assert_eq!(fps(&points, 3, 0).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn fps_full_selection_is_a_permutation() {
        let points: Vec<[f64; 3]> = (0..6).map(|x| [x as f64, 1.0, -2.0]).collect();
        let mut all = fps(&points, 6, 2).unwrap();
        assert_eq!(all[0], 2);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn fps_rejects_bad_args() {
        let points = vec![[0.0, 0.0, 0.0]];
        assert!(fps(&points, 2, 0).is_err());
        assert!(fps(&points, 0, 0).is_err());
        assert!(fps(&points, 1, 1).is_err());
    }

    #[test]
    fn fps_greedy_picks_verify_as_argmax() {
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(3);
        let points: Vec<[f64; 3]> = (0..20)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let picks = fps(&points, 8, 0).unwrap();
        let d2 = |a: [f64; 3], b: [f64; 3]| {
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        };
        for step in 1..picks.len() {
            let chosen = &picks[..step];
            let min_d = |idx: usize| {
                chosen
                    .iter()
                    .map(|&c| d2(points[idx], points[c]))
                    .fold(f64::INFINITY, f64::min)
            };
            let picked = min_d(picks[step]);
            for idx in 0..points.len() {
                if chosen.contains(&idx) {
                    continue;
                }
                let d = min_d(idx);
                // The greedy pick must be an argmax; on ties the smaller
                // index must have been taken.
                assert!(d <= picked + 1e-12, "pick {step} not argmax");
                if (d - picked).abs() < 1e-15 && idx < picks[step] {
                    panic!("tie should have gone to index {idx}");
                }
            }
        }
    }

    #[test]
    fn pad_short_cloud() {
        let points = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let sample = pad_or_sample(&points, 5, 0).unwrap();
        assert_eq!(sample.len(), 5);
        assert_eq!(sample.valid_mask(), &[true, true, true, false, false]);
        assert_eq!(sample.points()[3], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_size_is_identity() {
        let points = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let sample = pad_or_sample(&points, 2, 0).unwrap();
        assert_eq!(sample.points(), points.as_slice());
        assert!(sample.valid_mask().iter().all(|&m| m));
    }

    #[test]
    fn downsample_uses_fps() {
        let points: Vec<[f64; 3]> = (0..10).map(|x| [x as f64, 0.0, 0.0]).collect();
        let sample = pad_or_sample(&points, 2, 0).unwrap();
        assert_eq!(sample.points(), &[[0.0, 0.0, 0.0], [9.0, 0.0, 0.0]]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("ctp-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.jsonl");
        let (train, _, _) = generate_synthetic(&tiny_cfg()).unwrap();
        write_manifest(&train, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(train, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_manifest_reads_empty() {
        let dir = std::env::temp_dir().join(format!("ctp-manifest-empty-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = std::env::temp_dir().join(format!("ctp-manifest-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        let (train, _, _) = generate_synthetic(&tiny_cfg()).unwrap();
        let good = serde_json::to_string(&train[0]).unwrap();
        std::fs::write(&path, format!("{good}\n{}\n", &good[..good.len() / 2])).unwrap();
        match read_manifest(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected manifest error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn batches_are_seeded_and_complete() {
        let a = batch_iter(10, 4, 5, true).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|batch| batch.len() == 4));
        let b = batch_iter(10, 4, 5, true).unwrap();
        assert_eq!(a, b);

        let all = batch_iter(10, 4, 5, false).unwrap();
        assert_eq!(all.len(), 3);
        let mut seen: Vec<usize> = all.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn min_point_filter_drops_sparse_clouds() {
        let (train, _, _) = generate_synthetic(&tiny_cfg()).unwrap();
        let threshold = 6;
        let kept = filter_min_points(train.clone(), threshold);
        assert!(kept.iter().all(|r| r.points.len() >= threshold));
        let expected = train.iter().filter(|r| r.points.len() >= threshold).count();
        assert_eq!(kept.len(), expected);
        assert_eq!(filter_min_points(train.clone(), 0).len(), train.len());
    }

    #[test]
    fn prepare_records_fixes_cloud_size() {
        let (train, _, _) = generate_synthetic(&tiny_cfg()).unwrap();
        let prepared = prepare_records(&train[..8], 6).unwrap();
        assert!(prepared.iter().all(|p| p.cloud.len() == 6));
    }
}
