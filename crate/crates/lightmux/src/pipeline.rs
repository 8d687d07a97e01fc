//! Render-train-evaluate loop: repeated stratified splits with re-rendered
//! noisy imagery, the accuracy signal that drives pattern search.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::{predict, train, LabeledSample};
use crate::error::{Error, Result};
use crate::features::{concat_sequence, downscale, hog};
use crate::model::Dataset;
use crate::mux::IlluminationMatrix;
use crate::noise::{CameraSettings, NoiseModel};
use crate::relight::render_noisy;
use crate::rng::{derive_seed, SeedDomain};

/// Feature and classifier settings shared across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub feature_side: usize,
    pub cell: usize,
    pub block: usize,
    pub bins: usize,
    pub c_reg: f64,
    pub gray_max: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            feature_side: 120,
            cell: 12,
            block: 10,
            bins: 9,
            c_reg: 1.0,
            gray_max: 255.0,
        }
    }
}

/// Mean accuracy over repeats plus per-class breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub mean: f64,
    pub per_repeat: Vec<f64>,
    /// Fraction correct per class, pooled over repeats.
    pub per_class: Vec<f64>,
    /// Test-set count per class, pooled over repeats.
    pub class_counts: Vec<usize>,
}

impl AccuracyReport {
    /// Count-weighted mean of the per-class accuracies; equals `mean` up to
    /// floating point.
    pub fn weighted_class_mean(&self) -> f64 {
        let total: usize = self.class_counts.iter().sum();
        self.per_class
            .iter()
            .zip(&self.class_counts)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Render one model under every column of `matrix` and extract the
/// concatenated sequence feature, with per-column seeds chained off `seed`.
pub fn render_sample(
    dataset: &Dataset,
    index: usize,
    matrix: &IlluminationMatrix,
    settings: CameraSettings,
    noise: &NoiseModel,
    params: &PipelineParams,
    seed: u64,
) -> Result<LabeledSample> {
    let model = &dataset.models[index];
    let mut per_image = Vec::with_capacity(matrix.num_acquisitions());
    for col in 0..matrix.num_acquisitions() {
        let col_seed = crate::rng::splitmix64(seed ^ ((index as u64) << 24 | col as u64));
        let rendered = render_noisy(
            model,
            &matrix.column_state(col),
            settings,
            noise,
            col_seed,
            params.gray_max,
        )?;
        let small = downscale(&rendered.pixels, params.feature_side)?;
        per_image.push(hog(&small, params.cell, params.block, params.bins)?);
    }
    let label = dataset
        .class_index(&model.class_label)
        .ok_or_else(|| Error::Parameter(format!("label {:?} not in classes", model.class_label)))?;
    Ok(LabeledSample {
        features: concat_sequence(&per_image)?,
        label,
        pose_id: model.pose_id,
    })
}

/// Extract the concatenated sequence feature for one model under `matrix`.
fn sample_features(
    dataset_index: usize,
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    settings: CameraSettings,
    noise: &NoiseModel,
    params: &PipelineParams,
    domain: SeedDomain,
    base_seed: u64,
    repeat: u64,
) -> Result<LabeledSample> {
    let model = &dataset.models[dataset_index];
    let mut per_image = Vec::with_capacity(matrix.num_acquisitions());
    for col in 0..matrix.num_acquisitions() {
        let seed = derive_seed(
            domain,
            base_seed,
            &[repeat, dataset_index as u64, col as u64],
        );
        let rendered = render_noisy(
            model,
            &matrix.column_state(col),
            settings,
            noise,
            seed,
            params.gray_max,
        )?;
        let small = downscale(&rendered.pixels, params.feature_side)?;
        per_image.push(hog(&small, params.cell, params.block, params.bins)?);
    }
    let label = dataset
        .class_index(&model.class_label)
        .ok_or_else(|| Error::Parameter(format!("label {:?} not in classes", model.class_label)))?;
    Ok(LabeledSample {
        features: concat_sequence(&per_image)?,
        label,
        pose_id: model.pose_id,
    })
}

/// Stratified train/test split, seeded. The split partitions *poses*, and
/// the same pose partition applies to every class: if pose p is held out it
/// is held out for all classes. Splitting each class's samples independently
/// would let a class's test pose appear in another class's training set,
/// and a classifier can then key on pose identity instead of class signal.
fn stratified_split(
    dataset: &Dataset,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    for (c, label) in dataset.classes.iter().enumerate() {
        let count = dataset
            .models
            .iter()
            .filter(|m| dataset.class_index(&m.class_label) == Some(c))
            .count();
        if count < 2 {
            return Err(Error::Stratification {
                class: label.clone(),
                count,
            });
        }
    }
    let mut poses: Vec<u32> = dataset.models.iter().map(|m| m.pose_id).collect();
    poses.sort_unstable();
    poses.dedup();
    if poses.len() < 2 {
        return Err(Error::Parameter(
            "need at least 2 distinct poses to split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses.shuffle(&mut rng);
    let n_train =
        ((poses.len() as f64 * train_frac).round() as usize).clamp(1, poses.len() - 1);
    let train_poses = &poses[..n_train];
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, m) in dataset.models.iter().enumerate() {
        if train_poses.contains(&m.pose_id) {
            train_idx.push(i);
        } else {
            test_idx.push(i);
        }
    }
    Ok((train_idx, test_idx))
}

/// For each repeat: re-render every sample under `matrix` with fresh derived
/// seeds, split stratified by class, train, and test. Deterministic given
/// `base_seed` and independent of worker count.
#[allow(clippy::too_many_arguments)]
pub fn repeated_split_accuracy(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    settings: CameraSettings,
    repeats: usize,
    train_frac: f64,
    base_seed: u64,
    domain: SeedDomain,
    params: &PipelineParams,
) -> Result<AccuracyReport> {
    if repeats == 0 {
        return Err(Error::Parameter("repeats must be >= 1".into()));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "train_frac {train_frac} outside (0,1)"
        )));
    }
    dataset.validate()?;
    let num_classes = dataset.classes.len();
    let per_repeat: Vec<Result<(f64, Vec<usize>, Vec<usize>)>> = (0..repeats as u64)
        .into_par_iter()
        .map(|repeat| {
            let samples: Vec<LabeledSample> = (0..dataset.models.len())
                .map(|i| {
                    sample_features(
                        i, dataset, matrix, settings, noise, params, domain, base_seed, repeat,
                    )
                })
                .collect::<Result<_>>()?;
            let split_seed = derive_seed(domain, base_seed, &[repeat, u64::MAX]);
            let (train_idx, test_idx) = stratified_split(dataset, train_frac, split_seed)?;
            let train_set: Vec<LabeledSample> =
                train_idx.iter().map(|&i| samples[i].clone()).collect();
            let train_seed = derive_seed(domain, base_seed, &[repeat, u64::MAX - 1]);
            let model = train(&train_set, params.c_reg, train_seed, &dataset.classes)?;
            let mut correct = vec![0usize; num_classes];
            let mut counts = vec![0usize; num_classes];
            for &i in &test_idx {
                let s = &samples[i];
                counts[s.label] += 1;
                if predict(&model, &s.features)? == s.label {
                    correct[s.label] += 1;
                }
            }
            let total: usize = counts.iter().sum();
            let hits: usize = correct.iter().sum();
            Ok((hits as f64 / total as f64, correct, counts))
        })
        .collect();

    let mut accs = Vec::with_capacity(repeats);
    let mut correct = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for r in per_repeat {
        let (acc, c, n) = r?;
        accs.push(acc);
        for k in 0..num_classes {
            correct[k] += c[k];
            counts[k] += n[k];
        }
    }
    let mean = accs.iter().sum::<f64>() / repeats as f64;
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| if n > 0 { c as f64 / n as f64 } else { 0.0 })
        .collect();
    Ok(AccuracyReport {
        mean,
        per_repeat: accs,
        per_class,
        class_counts: counts,
    })
}
