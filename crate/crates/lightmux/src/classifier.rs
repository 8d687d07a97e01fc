//! Multi-class linear max-margin classifier: one-vs-one soft-margin
//! hyperplanes trained by dual coordinate descent, combined by voting.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureLayout, FeatureVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: usize,
    pub pose_id: u32,
}

/// One pairwise hyperplane; positive side votes for `class_lo`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub class_lo: usize,
    pub class_hi: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    pub layout: FeatureLayout,
    /// Per-dimension standardization from the training data.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub hyperplanes: Vec<Hyperplane>,
    pub c_reg: f64,
    pub seed: u64,
}

const KKT_TOLERANCE: f64 = 1e-3;
const MAX_EPOCHS: usize = 1000;

/// L1-loss dual coordinate descent for a binary linear SVM.
///
/// `labels` are +-1. Bias handled by feature augmentation. Deterministic:
/// the coordinate order is a seeded shuffle per epoch.
fn train_binary(x: &[&[f64]], labels: &[f64], c: f64, seed: u64) -> (Vec<f64>, f64) {
    let n = x.len();
    let dim = x[0].len();
    let mut w = vec![0.0; dim];
    let mut bias_w = 0.0;
    let mut alpha = vec![0.0; n];
    // Q_ii with the augmented bias feature
    let q: Vec<f64> = x
        .iter()
        .map(|xi| xi.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let xi = x[i];
            let yi = labels[i];
            let decision: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + bias_w;
            let g = yi * decision - 1.0;
            // projected gradient for the box constraint
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() < 1e-12 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / q[i]).clamp(0.0, c);
            let delta = (alpha[i] - old) * yi;
            if delta != 0.0 {
                for (wk, &xk) in w.iter_mut().zip(xi) {
                    *wk += delta * xk;
                }
                bias_w += delta;
            }
        }
        if max_violation < KKT_TOLERANCE {
            break;
        }
    }
    (w, bias_w)
}

/// Train a one-vs-one linear SVM over standardized features.
pub fn train(samples: &[LabeledSample], c_reg: f64, seed: u64, classes: &[String]) -> Result<ClassifierModel> {
    if samples.is_empty() {
        return Err(Error::Parameter("no training samples".into()));
    }
    let layout = samples[0].features.layout;
    if samples.iter().any(|s| s.features.layout != layout) {
        return Err(Error::Parameter("training features disagree on layout".into()));
    }
    let present: std::collections::BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    if present.len() < 2 {
        return Err(Error::Parameter("need samples from at least 2 classes".into()));
    }
    if let Some(&bad) = present.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::Parameter(format!("label {bad} outside class list")));
    }
    let dim = layout.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.features.values) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for s in samples {
        for ((sd, v), m) in std.iter_mut().zip(&s.features.values).zip(&mean) {
            *sd += (v - m) * (v - m) / n;
        }
    }
    for sd in &mut std {
        *sd = sd.sqrt();
        if *sd < 1e-12 {
            *sd = 1.0;
        }
    }
    let standardized: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.features
                .values
                .iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), sd)| (v - m) / sd)
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> = {
        let cls: Vec<usize> = present.iter().cloned().collect();
        let mut p = Vec::new();
        for i in 0..cls.len() {
            for j in i + 1..cls.len() {
                p.push((cls[i], cls[j]));
            }
        }
        p
    };
    let hyperplanes: Vec<Hyperplane> = pairs
        .iter()
        .map(|&(lo, hi)| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (s, feat) in samples.iter().zip(&standardized) {
                if s.label == lo {
                    x.push(feat.as_slice());
                    y.push(1.0);
                } else if s.label == hi {
                    x.push(feat.as_slice());
                    y.push(-1.0);
                }
            }
            let pair_seed = crate::rng::splitmix64(seed ^ ((lo as u64) << 32 | hi as u64));
            let (weights, bias) = train_binary(&x, &y, c_reg, pair_seed);
            Hyperplane {
                class_lo: lo,
                class_hi: hi,
                weights,
                bias,
            }
        })
        .collect();

    Ok(ClassifierModel {
        classes: classes.to_vec(),
        layout,
        feature_mean: mean,
        feature_std: std,
        hyperplanes,
        c_reg,
        seed,
    })
}

/// Majority vote over pairwise hyperplanes; ties broken by summed signed
/// margins, then lowest class index.
pub fn predict(model: &ClassifierModel, features: &FeatureVector) -> Result<usize> {
    if features.layout != model.layout {
        return Err(Error::Parameter("feature layout does not match classifier".into()));
    }
    let x: Vec<f64> = features
        .values
        .iter()
        .zip(&model.feature_mean)
        .zip(&model.feature_std)
        .map(|((v, m), sd)| (v - m) / sd)
        .collect();
    let mut votes = vec![0usize; model.classes.len()];
    let mut margins = vec![0.0f64; model.classes.len()];
    for hp in &model.hyperplanes {
        let d: f64 = hp.weights.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + hp.bias;
        if d > 0.0 {
            votes[hp.class_lo] += 1;
        } else {
            votes[hp.class_hi] += 1;
        }
        margins[hp.class_lo] += d;
        margins[hp.class_hi] -= d;
    }
    let max_votes = *votes.iter().max().unwrap();
    let tied: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == max_votes).collect();
    let winner = tied
        .iter()
        .cloned()
        .max_by(|&a, &b| {
            margins[a]
                .partial_cmp(&margins[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                // prefer the lower class index on exact margin ties
                .then(b.cmp(&a))
        })
        .unwrap();
    Ok(winner)
}

pub fn training_accuracy(model: &ClassifierModel, samples: &[LabeledSample]) -> f64 {
    let correct = samples
        .iter()
        .filter(|s| predict(model, &s.features).map(|p| p == s.label).unwrap_or(false))
        .count();
    correct as f64 / samples.len() as f64
}

// --- versioned binary container -----------------------------------------

const CONTAINER_MAGIC: &[u8; 4] = b"LMXC";
const CONTAINER_VERSION: u32 = 1;

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CONTAINER_MAGIC)?;
        f.write_u32::<LittleEndian>(CONTAINER_VERSION)?;
        for v in [
            self.layout.num_images,
            self.layout.cells_x,
            self.layout.cells_y,
            self.layout.block,
            self.layout.bins,
        ] {
            f.write_u64::<LittleEndian>(v as u64)?;
        }
        f.write_f64::<LittleEndian>(self.c_reg)?;
        f.write_u64::<LittleEndian>(self.seed)?;
        f.write_u64::<LittleEndian>(self.classes.len() as u64)?;
        for c in &self.classes {
            let b = c.as_bytes();
            f.write_u64::<LittleEndian>(b.len() as u64)?;
            f.write_all(b)?;
        }
        for vec in [&self.feature_mean, &self.feature_std] {
            f.write_u64::<LittleEndian>(vec.len() as u64)?;
            for &v in vec {
                f.write_f64::<LittleEndian>(v)?;
            }
        }
        f.write_u64::<LittleEndian>(self.hyperplanes.len() as u64)?;
        for hp in &self.hyperplanes {
            f.write_u64::<LittleEndian>(hp.class_lo as u64)?;
            f.write_u64::<LittleEndian>(hp.class_hi as u64)?;
            f.write_f64::<LittleEndian>(hp.bias)?;
            f.write_u64::<LittleEndian>(hp.weights.len() as u64)?;
            for &w in &hp.weights {
                f.write_f64::<LittleEndian>(w)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != CONTAINER_MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = f.read_u32::<LittleEndian>()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!(
                "unsupported container version {version}"
            )));
        }
        let mut geom = [0usize; 5];
        for g in &mut geom {
            *g = f.read_u64::<LittleEndian>()? as usize;
        }
        let layout = FeatureLayout {
            num_images: geom[0],
            cells_x: geom[1],
            cells_y: geom[2],
            block: geom[3],
            bins: geom[4],
        };
        let c_reg = f.read_f64::<LittleEndian>()?;
        let seed = f.read_u64::<LittleEndian>()?;
        let n_classes = f.read_u64::<LittleEndian>()? as usize;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let len = f.read_u64::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            f.read_exact(&mut buf)?;
            classes.push(
                String::from_utf8(buf).map_err(|_| Error::Container("bad class name".into()))?,
            );
        }
        let read_vec = |f: &mut dyn Read| -> Result<Vec<f64>> {
            let len = f.read_u64::<LittleEndian>()? as usize;
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(f.read_f64::<LittleEndian>()?);
            }
            Ok(v)
        };
        let feature_mean = read_vec(&mut f)?;
        let feature_std = read_vec(&mut f)?;
        let n_planes = f.read_u64::<LittleEndian>()? as usize;
        let mut hyperplanes = Vec::with_capacity(n_planes);
        for _ in 0..n_planes {
            let class_lo = f.read_u64::<LittleEndian>()? as usize;
            let class_hi = f.read_u64::<LittleEndian>()? as usize;
            let bias = f.read_f64::<LittleEndian>()?;
            let weights = read_vec(&mut f)?;
            hyperplanes.push(Hyperplane {
                class_lo,
                class_hi,
                weights,
                bias,
            });
        }
        Ok(ClassifierModel {
            classes,
            layout,
            feature_mean,
            feature_std,
            hyperplanes,
            c_reg,
            seed,
        })
    }
}
