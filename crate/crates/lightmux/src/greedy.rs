//! Greedy illumination-matrix search: grow W one binary column at a time by
//! exhaustive candidate scoring against classifier accuracy.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::{train, ClassifierModel, LabeledSample};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::mux::IlluminationMatrix;
use crate::noise::{CameraSettings, NoiseModel};
use crate::pipeline::{repeated_split_accuracy, AccuracyReport, PipelineParams};
use crate::relight::select_gain;
use crate::rng::{derive_seed, SeedDomain};

/// Search settings for [`greedy_select`] and [`evaluate_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub exposure_ms: f64,
    pub m_max: usize,
    pub repeats: usize,
    pub train_frac: f64,
    pub base_seed: u64,
    pub min_improvement: f64,
    pub gain_target_fraction: f64,
    pub gain_bounds: (f64, f64),
    pub params: PipelineParams,
}

impl SearchConfig {
    pub fn new(exposure_ms: f64, m_max: usize, repeats: usize, base_seed: u64) -> Self {
        SearchConfig {
            exposure_ms,
            m_max,
            repeats,
            train_frac: 0.75,
            base_seed,
            min_improvement: 0.0,
            gain_target_fraction: 0.9,
            gain_bounds: (-60.0, 60.0),
            params: PipelineParams::default(),
        }
    }
}

/// Result of a greedy run: the grown matrix with per-prefix bookkeeping.
#[derive(Debug, Clone)]
pub struct GreedyTrace {
    /// Chosen binary columns in order.
    pub columns: Vec<Vec<f64>>,
    /// Mean accuracy after accepting each column.
    pub accuracies: Vec<f64>,
    /// Classifier trained on the full dataset at each prefix.
    pub classifiers: Vec<ClassifierModel>,
    /// Acquisition gain chosen for each accepted prefix.
    pub gains_db: Vec<f64>,
    /// Whether each column strictly improved on the previous prefix.
    pub improved: Vec<bool>,
    /// Total candidate evaluations performed (cost model: M_max * (2^N - 1)).
    pub candidate_evaluations: usize,
    /// Whether the columns are {0,1}-valued.
    pub binary: bool,
}

impl GreedyTrace {
    pub fn matrix(&self) -> IlluminationMatrix {
        let n = self.columns[0].len();
        let mut w = nalgebra::DMatrix::zeros(n, self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                w[(i, j)] = v;
            }
        }
        IlluminationMatrix {
            w,
            binary: self.binary,
        }
    }
}

/// All nonzero binary candidate columns of length `n`, in lexicographic
/// order of the weight vector.
fn candidate_columns(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity((1usize << n) - 1);
    for bits in 1u64..(1u64 << n) {
        let col: Vec<f64> = (0..n).map(|i| f64::from(bits >> i & 1 == 1)).collect();
        out.push(col);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn lit_count(col: &[f64]) -> usize {
    col.iter().filter(|&&v| v != 0.0).count()
}

/// Score one candidate matrix: select its gain, then run the repeated-split
/// loop with the column-shared seed.
#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    config: &SearchConfig,
    column_seed: u64,
    domain: SeedDomain,
) -> Result<(AccuracyReport, f64)> {
    let gain = select_gain(
        dataset,
        matrix,
        config.exposure_ms,
        config.gain_target_fraction,
        config.gain_bounds,
        config.params.gray_max,
    )?;
    let settings = CameraSettings::new(gain, config.exposure_ms)?;
    let report = repeated_split_accuracy(
        dataset,
        matrix,
        noise,
        settings,
        config.repeats,
        config.train_frac,
        column_seed,
        domain,
        &config.params,
    )?;
    Ok((report, gain))
}

/// Train a classifier on the whole dataset rendered under `matrix`.
fn train_prefix_classifier(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    gain: f64,
    config: &SearchConfig,
    prefix_len: usize,
) -> Result<ClassifierModel> {
    let settings = CameraSettings::new(gain, config.exposure_ms)?;
    let seed = derive_seed(SeedDomain::Train, config.base_seed, &[
        0xC1A5_51F1,
        prefix_len as u64,
    ]);
    let samples: Vec<LabeledSample> = (0..dataset.models.len())
        .map(|i| {
            crate::pipeline::render_sample(dataset, i, matrix, settings, noise, &config.params, seed)
        })
        .collect::<Result<_>>()?;
    train(&samples, config.params.c_reg, seed, &dataset.classes)
}

/// Grow a binary illumination matrix one column at a time.
///
/// Every candidate column in {0,1}^N minus the all-off state is scored by
/// [`repeated_split_accuracy`] with seeds shared across candidates of the
/// same column (common random numbers), and the argmax is kept. Ties prefer
/// fewer lit illuminants, then the lexicographically smallest column. The
/// search records an improvement flag per column and continues to `m_max`.
pub fn greedy_select(
    dataset: &Dataset,
    noise: &NoiseModel,
    n: usize,
    config: &SearchConfig,
) -> Result<GreedyTrace> {
    if n == 0 || config.m_max == 0 {
        return Err(Error::Parameter("need N >= 1 and M_max >= 1".into()));
    }
    dataset.validate()?;
    if dataset.models[0].num_illuminants() != n {
        return Err(Error::Parameter(format!(
            "dataset has {} illuminants, search asked for {n}",
            dataset.models[0].num_illuminants()
        )));
    }
    let candidates = candidate_columns(n);
    let mut trace = GreedyTrace {
        columns: Vec::new(),
        accuracies: Vec::new(),
        classifiers: Vec::new(),
        gains_db: Vec::new(),
        improved: Vec::new(),
        candidate_evaluations: 0,
        binary: true,
    };
    let mut incumbent = IlluminationMatrix {
        w: nalgebra::DMatrix::zeros(n, 0),
        binary: true,
    };
    let mut prev_acc = 1.0 / dataset.classes.len() as f64; // chance baseline
    for k in 1..=config.m_max {
        let column_seed = derive_seed(SeedDomain::Train, config.base_seed, &[k as u64]);
        let scored: Vec<Result<(AccuracyReport, f64)>> = candidates
            .par_iter()
            .map(|col| {
                evaluate_candidate(
                    dataset,
                    &incumbent.append_column(col),
                    noise,
                    config,
                    column_seed,
                    SeedDomain::Train,
                )
            })
            .collect();
        trace.candidate_evaluations += candidates.len();
        let mut best: Option<(usize, f64, f64)> = None; // (candidate idx, acc, gain)
        for (idx, res) in scored.into_iter().enumerate() {
            let (report, gain) = res.map_err(|e| Error::CandidateEval {
                column: k,
                candidate: candidates[idx].iter().map(|&v| v as u8).collect(),
                source: Box::new(e),
            })?;
            let better = match best {
                None => true,
                Some((bidx, bacc, _)) => {
                    report.mean > bacc
                        || (report.mean == bacc
                            && (lit_count(&candidates[idx]) < lit_count(&candidates[bidx])
                                || (lit_count(&candidates[idx]) == lit_count(&candidates[bidx])
                                    && candidates[idx] < candidates[bidx])))
                }
            };
            if better {
                best = Some((idx, report.mean, gain));
            }
        }
        let (best_idx, best_acc, best_gain) = best.unwrap();
        incumbent = incumbent.append_column(&candidates[best_idx]);
        let classifier =
            train_prefix_classifier(dataset, &incumbent, noise, best_gain, config, k)?;
        trace.columns.push(candidates[best_idx].clone());
        trace.accuracies.push(best_acc);
        trace.gains_db.push(best_gain);
        trace.improved.push(best_acc > prev_acc + config.min_improvement);
        trace.classifiers.push(classifier);
        prev_acc = best_acc;
    }
    Ok(trace)
}

/// Largest prefix length whose column still improved accuracy.
pub fn effective_prefix(trace: &GreedyTrace) -> usize {
    trace
        .improved
        .iter()
        .rposition(|&f| f)
        .map(|i| i + 1)
        .unwrap_or(1)
}

/// Accuracy for every prefix length 1..=M of a fixed matrix, training a
/// classifier per image count. Gain is re-selected per prefix. With
/// `SeedDomain::Train` and a greedy run's seed, prefix accuracies reproduce
/// the trace's recorded values.
pub fn evaluate_matrix(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    config: &SearchConfig,
    domain: SeedDomain,
) -> Result<Vec<(AccuracyReport, f64)>> {
    let m = matrix.num_acquisitions();
    let mut out = Vec::with_capacity(m);
    for prefix_len in 1..=m {
        let prefix = matrix.prefix(prefix_len);
        let column_seed = derive_seed(domain, config.base_seed, &[prefix_len as u64]);
        out.push(evaluate_candidate(
            dataset,
            &prefix,
            noise,
            config,
            column_seed,
            domain,
        )?);
    }
    Ok(out)
}

/// Build the full trace bookkeeping for a fixed matrix: per-prefix
/// accuracy, gain, improvement flag, and a classifier trained on the whole
/// dataset, matching what [`greedy_select`] records for its own matrix.
pub fn trace_from_matrix(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    config: &SearchConfig,
    domain: SeedDomain,
) -> Result<GreedyTrace> {
    dataset.validate()?;
    let evals = evaluate_matrix(dataset, matrix, noise, config, domain)?;
    let n = matrix.num_illuminants();
    let mut trace = GreedyTrace {
        columns: Vec::new(),
        accuracies: Vec::new(),
        classifiers: Vec::new(),
        gains_db: Vec::new(),
        improved: Vec::new(),
        candidate_evaluations: 0,
        binary: matrix.binary,
    };
    let mut prev_acc = 1.0 / dataset.classes.len() as f64;
    for (k, (report, gain)) in evals.into_iter().enumerate() {
        let prefix = matrix.prefix(k + 1);
        let col: Vec<f64> = (0..n).map(|i| matrix.w[(i, k)]).collect();
        let classifier =
            train_prefix_classifier(dataset, &prefix, noise, gain, config, k + 1)?;
        trace.columns.push(col);
        trace.accuracies.push(report.mean);
        trace.gains_db.push(gain);
        trace.improved.push(report.mean > prev_acc + config.min_improvement);
        trace.classifiers.push(classifier);
        prev_acc = report.mean;
    }
    Ok(trace)
}

/// Serialize a trace as matrix CSV, accuracy CSV, and per-prefix classifier
/// containers.
pub fn save_trace(trace: &GreedyTrace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("matrix.csv"), trace.matrix().to_csv())?;
    let mut acc = String::from("prefix,accuracy,improved,gain_db\n");
    for i in 0..trace.accuracies.len() {
        writeln!(
            acc,
            "{},{:.6},{},{:.6}",
            i + 1,
            trace.accuracies[i],
            u8::from(trace.improved[i]),
            trace.gains_db[i]
        )
        .unwrap();
    }
    std::fs::write(dir.join("accuracies.csv"), acc)?;
    for (i, clf) in trace.classifiers.iter().enumerate() {
        clf.save(&dir.join(format!("classifier_{:03}.lmxc", i + 1)))?;
    }
    Ok(())
}
