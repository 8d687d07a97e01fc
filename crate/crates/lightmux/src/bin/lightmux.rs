//! Experiment harness: dataset generation, noise calibration, illumination
//! pattern optimization, evaluation reports, demultiplexing, and rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/conditioning
//! error, 1 anything else. Worker count follows `RAYON_NUM_THREADS`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lightmux::classifier::predict;
use lightmux::config::{ExperimentConfig, OptimizerKind};
use lightmux::error::{Error, Result};
use lightmux::features::{concat_sequence, downscale, hog};
use lightmux::greedy::{
    effective_prefix, greedy_select, save_trace, trace_from_matrix, SearchConfig,
};
use lightmux::image::ImageF;
use lightmux::model::{
    average_reflectance, generate_scene_family, load_dataset, load_model, save_dataset,
};
use lightmux::mux::{demultiplex, optimize_snr_restarts, predicted_mse, sigma_w};
use lightmux::noise::{
    characterize_stack, fit_affine, gain_power_ratio, observations_to_csv, CameraSettings,
    NoiseModel, NoiseObservation,
};
use lightmux::pipeline::render_sample;
use lightmux::relight::{render_clean, render_noisy, IlluminationState};
use lightmux::report::{AccuracyRow, ClassTableRow, EvalReport};
use lightmux::rng::{derive_seed, SeedDomain};
use lightmux::{Dataset, IlluminationMatrix, SceneFamilySpec};

#[derive(Parser)]
#[command(name = "lightmux", version, about = "Multiplexed-illumination experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene family and write it as a dataset tree.
    Generate(GenerateArgs),
    /// Fit the affine noise model from per-intensity image stacks.
    Calibrate(CalibrateArgs),
    /// Search for an illumination matrix and write trace artifacts.
    Optimize(OptimizeArgs),
    /// Evaluate saved matrices on freshly rendered imagery.
    Evaluate(EvaluateArgs),
    /// Recover single-illuminant images from coded acquisitions.
    Demux(DemuxArgs),
    /// Render a model under the columns of an illumination matrix.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Override the number of poses per class.
    #[arg(long)]
    poses: Option<usize>,
    /// Override the number of illuminants.
    #[arg(long)]
    illuminants: Option<usize>,
    /// Override the generation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the inter-class similarity in [0,1].
    #[arg(long)]
    similarity: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Directory of per-intensity stacks: one subdirectory per level, each
    /// holding the repeated 16-bit PNG captures of that level.
    #[arg(long)]
    stacks: PathBuf,
    /// Output directory for the model file and the mean/variance CSV.
    #[arg(long)]
    output: PathBuf,
    /// Reference gain the stacks were captured at.
    #[arg(long, default_value_t = 15.0)]
    gain_db: f64,
    /// Reference exposure the stacks were captured at.
    #[arg(long, default_value_t = 30.0)]
    exposure_ms: f64,
    /// Pixels with stack mean above this are excluded from the fit.
    #[arg(long, default_value_t = 0.95 * 255.0)]
    saturation_cutoff: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured optimizer.
    #[arg(long)]
    optimizer: Option<String>,
    /// Override the number of acquisitions searched.
    #[arg(long)]
    m_max: Option<usize>,
    /// Override the repeated-split count.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of optimize outputs (method/setting/matrix.csv); defaults
    /// to the configured output path.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct DemuxArgs {
    /// Illumination matrix CSV used for the acquisition.
    #[arg(long)]
    matrix: PathBuf,
    /// Directory of the M coded acquisitions, sorted by filename.
    #[arg(long)]
    images: PathBuf,
    /// Calibrated noise model file.
    #[arg(long)]
    noise_model: PathBuf,
    /// Average scene reflectance in gray levels at the acquisition setting.
    #[arg(long)]
    r_bar: f64,
    #[arg(long)]
    gain_db: f64,
    #[arg(long)]
    exposure_ms: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Relightable model directory.
    #[arg(long)]
    model: PathBuf,
    /// Illumination matrix CSV; every column is rendered.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    gain_db: f64,
    #[arg(long)]
    exposure_ms: f64,
    /// Add calibrated sensor noise (requires --noise-model).
    #[arg(long, default_value_t = false)]
    noisy: bool,
    #[arg(long)]
    noise_model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 255.0)]
    gray_max: f64,
    #[arg(long)]
    output: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Calibrate(a) => cmd_calibrate(a),
        Cmd::Optimize(a) => cmd_optimize(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Demux(a) => cmd_demux(a),
        Cmd::Render(a) => cmd_render(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths
        .dataset
        .clone()
        .unwrap_or_else(|| cfg.paths.output.join("dataset"))
}

fn load_configured_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    load_dataset(&dataset_dir(cfg))
}

fn load_configured_noise(cfg: &ExperimentConfig) -> Result<NoiseModel> {
    let path = cfg
        .paths
        .noise_model
        .clone()
        .ok_or_else(|| Error::Config("paths.noise_model is required for this command".into()))?;
    NoiseModel::load(&path)
}

fn write_run_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run_config.toml"), cfg.echo())?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(v) = args.classes {
        cfg.generate.classes = v;
    }
    if let Some(v) = args.poses {
        cfg.generate.poses = v;
    }
    if let Some(v) = args.illuminants {
        cfg.generate.illuminants = v;
    }
    if let Some(v) = args.seed {
        cfg.generate.seed = v;
    }
    if let Some(v) = args.similarity {
        cfg.generate.similarity = v;
    }
    let spec = SceneFamilySpec {
        num_classes: cfg.generate.classes,
        poses_per_class: cfg.generate.poses,
        num_illuminants: cfg.generate.illuminants,
        image_side: cfg.generate.image_side,
        base_seed: cfg.generate.seed,
        similarity: cfg.generate.similarity,
        discriminant_illuminants: cfg.generate.discriminant.clone(),
    };
    let started = Instant::now();
    let dataset = generate_scene_family(&spec)?;
    let dir = dataset_dir(&cfg);
    save_dataset(&dataset, &dir)?;
    write_run_config(&cfg, &dir)?;
    println!(
        "generated {} models ({} classes x {} poses, N={}) in {:.1} s -> {}",
        dataset.models.len(),
        cfg.generate.classes,
        cfg.generate.poses,
        cfg.generate.illuminants,
        started.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    Ok(entries)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let settings = CameraSettings::new(args.gain_db, args.exposure_ms)?;
    let mut observations: Vec<NoiseObservation> = Vec::new();
    let mut levels = 0usize;
    for level_dir in sorted_entries(&args.stacks)? {
        if !level_dir.is_dir() {
            continue;
        }
        let images: Vec<ImageF> = sorted_entries(&level_dir)?
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .map(|p| ImageF::load_png16(p))
            .collect::<Result<_>>()?;
        if images.is_empty() {
            continue;
        }
        observations.extend(characterize_stack(&images, args.saturation_cutoff)?);
        levels += 1;
    }
    if levels == 0 {
        return Err(Error::Parameter(format!(
            "no stack subdirectories with PNG images under {}",
            args.stacks.display()
        )));
    }
    let model = fit_affine(&observations, settings)?;
    std::fs::create_dir_all(&args.output)?;
    model.save(&args.output.join("noise_model.txt"))?;
    std::fs::write(
        args.output.join("mean_variance.csv"),
        observations_to_csv(&observations),
    )?;
    println!(
        "fit sigma_p2 = {:.4}, sigma_r2 = {:.4} at ({} dB, {} ms) from {} levels / {} pixels",
        model.sigma_p2,
        model.sigma_r2,
        args.gain_db,
        args.exposure_ms,
        levels,
        observations.len()
    );
    Ok(())
}

fn search_config(cfg: &ExperimentConfig, exposure_ms: f64, base_seed: u64) -> SearchConfig {
    SearchConfig {
        exposure_ms,
        m_max: cfg.search.m_max,
        repeats: cfg.search.repeats,
        train_frac: cfg.classifier.train_frac,
        base_seed,
        min_improvement: cfg.search.min_improvement,
        gain_target_fraction: 0.9,
        gain_bounds: (-60.0, 60.0),
        params: cfg.pipeline_params(),
    }
}

fn optimizer_dir_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Greedy => "greedy",
        OptimizerKind::Snr => "snr",
        OptimizerKind::NaiveAllOn => "naive-all-on",
    }
}

/// Average reflectance rescaled from the dataset's capture setting to the
/// requested one (intensity is linear in exposure and in gain power).
fn r_bar_at(dataset: &Dataset, cfg: &ExperimentConfig, setting: CameraSettings) -> Result<f64> {
    if let Some(v) = cfg.search.r_bar {
        return Ok(v);
    }
    let capture = &dataset.models[0];
    Ok(average_reflectance(dataset)?
        * (setting.exposure_ms / capture.capture_exposure_ms)
        * gain_power_ratio(setting.gain_db - capture.capture_gain_db))
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(name) = &args.optimizer {
        cfg.search.optimizer = match name.as_str() {
            "greedy" => OptimizerKind::Greedy,
            "snr" => OptimizerKind::Snr,
            "naive-all-on" => OptimizerKind::NaiveAllOn,
            other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
        };
    }
    if let Some(v) = args.m_max {
        cfg.search.m_max = v;
    }
    if let Some(v) = args.repeats {
        cfg.search.repeats = v;
    }
    cfg.validate()?;
    let dataset = load_configured_dataset(&cfg)?;
    let noise = load_configured_noise(&cfg)?;
    let n = dataset.models[0].num_illuminants();
    let kind = cfg.search.optimizer;

    for (s_idx, setting) in cfg.camera.settings.iter().enumerate() {
        let started = Instant::now();
        let search = search_config(&cfg, setting.exposure_ms, cfg.search.train_seed);
        let (trace, evaluations) = match kind {
            OptimizerKind::Greedy => {
                let trace = greedy_select(&dataset, &noise, n, &search)?;
                let count = trace.candidate_evaluations;
                (trace, count)
            }
            OptimizerKind::Snr => {
                let target = CameraSettings::new(setting.gain_db, setting.exposure_ms)?;
                let local = noise.generalize(target);
                let r_bar = r_bar_at(&dataset, &cfg, target)?;
                let m = cfg.search.m_max.max(n);
                let seed = derive_seed(SeedDomain::Train, cfg.search.train_seed, &[s_idx as u64]);
                let matrix = optimize_snr_restarts(
                    n,
                    m,
                    &local,
                    r_bar,
                    cfg.search.iterations,
                    seed,
                    cfg.search.cond_threshold,
                    cfg.search.binary_snr,
                    cfg.search.restarts,
                )?;
                let sigma = sigma_w(&matrix, r_bar, &local)?;
                eprintln!(
                    "  [{}] snr predicted mse {:.4} at r_bar {:.1}",
                    setting.name,
                    predicted_mse(&matrix, &sigma)?,
                    r_bar
                );
                let trace =
                    trace_from_matrix(&dataset, &matrix, &noise, &search, SeedDomain::Train)?;
                (trace, cfg.search.iterations * cfg.search.restarts)
            }
            OptimizerKind::NaiveAllOn => {
                let matrix = IlluminationMatrix::all_on(n, 1);
                let trace =
                    trace_from_matrix(&dataset, &matrix, &noise, &search, SeedDomain::Train)?;
                (trace, 0)
            }
        };
        let dir = cfg
            .paths
            .output
            .join(optimizer_dir_name(kind))
            .join(&setting.name);
        save_trace(&trace, &dir)?;
        write_run_config(&cfg, &dir)?;
        println!(
            "{} @ {}: {} candidate evaluations, effective prefix {}, best accuracy {:.4}, {:.1} s -> {}",
            optimizer_dir_name(kind),
            setting.name,
            evaluations,
            effective_prefix(&trace),
            trace
                .accuracies
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
            started.elapsed().as_secs_f64(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let artifacts = args.artifacts.clone().unwrap_or_else(|| cfg.paths.output.clone());
    let dataset = load_configured_dataset(&cfg)?;
    let noise = load_configured_noise(&cfg)?;

    // evaluation uses its own seed stream; the config validator already
    // rejects eval_seed == train_seed
    let domain = SeedDomain::Eval;
    let mut report = EvalReport {
        config_echo: cfg.echo(),
        ..EvalReport::default()
    };

    let mut found = 0usize;
    for method_dir in sorted_entries(&artifacts)? {
        if !method_dir.is_dir() {
            continue;
        }
        let method = method_dir
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned();
        for setting_dir in sorted_entries(&method_dir)? {
            let matrix_path = setting_dir.join("matrix.csv");
            if !matrix_path.exists() {
                continue;
            }
            let setting_name = setting_dir
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            let setting = cfg
                .camera
                .settings
                .iter()
                .find(|s| s.name == setting_name)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "artifact setting {setting_name:?} not in camera.settings"
                    ))
                })?;
            found += 1;
            let matrix = IlluminationMatrix::from_csv(&std::fs::read_to_string(&matrix_path)?)?;
            let search = search_config(&cfg, setting.exposure_ms, cfg.search.eval_seed);
            let train_started = Instant::now();
            let evals = lightmux::greedy::evaluate_matrix(&dataset, &matrix, &noise, &search, domain)?;
            let train_ms = train_started.elapsed().as_secs_f64() * 1e3;
            for (k, (rep, _gain)) in evals.iter().enumerate() {
                report.rows.push(AccuracyRow {
                    method: method.clone(),
                    setting: setting_name.clone(),
                    image_count: k + 1,
                    accuracy: rep.mean,
                });
            }
            let (last, last_gain) = evals.last().unwrap();
            let infer_ms = time_inference(&cfg, &dataset, &matrix, &noise, *last_gain, &search)?;
            report.class_rows.push(ClassTableRow {
                method: method.clone(),
                setting: setting_name.clone(),
                per_class: last.per_class.clone(),
                class_counts: last.class_counts.clone(),
                overall: last.weighted_class_mean(),
                train_ms,
                infer_ms,
            });
            eprintln!(
                "  {method} @ {setting_name}: peak accuracy {:.4}",
                evals
                    .iter()
                    .map(|(r, _)| r.mean)
                    .fold(f64::NEG_INFINITY, f64::max)
            );
        }
    }
    if found == 0 {
        return Err(Error::Parameter(format!(
            "no method/setting/matrix.csv artifacts under {}",
            artifacts.display()
        )));
    }
    std::fs::create_dir_all(&cfg.paths.output)?;
    std::fs::write(
        cfg.paths.output.join("accuracy_vs_count.csv"),
        report.accuracy_csv(),
    )?;
    std::fs::write(
        cfg.paths.output.join("class_table.csv"),
        report.class_table_csv(&dataset.classes),
    )?;
    std::fs::write(
        cfg.paths.output.join("accuracy_vs_count.svg"),
        report.accuracy_svg()?,
    )?;
    std::fs::write(cfg.paths.output.join("timings.txt"), report.timings_text())?;
    println!(
        "evaluated {found} matrices -> {}",
        cfg.paths.output.display()
    );
    Ok(())
}

/// Render-free inference time per sample: feature extraction + prediction on
/// pre-rendered imagery (capture dominates a real acquisition, so rendering
/// is excluded from the inference clock).
fn time_inference(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    noise: &NoiseModel,
    gain_db: f64,
    search: &SearchConfig,
) -> Result<f64> {
    let settings = CameraSettings::new(gain_db, search.exposure_ms)?;
    let params = cfg.pipeline_params();
    let seed = derive_seed(SeedDomain::Eval, cfg.search.eval_seed, &[0x71, 0x0]);
    // train on everything once, then clock feature+predict alone
    let samples: Vec<_> = (0..dataset.models.len())
        .map(|i| render_sample(dataset, i, matrix, settings, noise, &params, seed))
        .collect::<Result<_>>()?;
    let model = lightmux::classifier::train(&samples, params.c_reg, seed, &dataset.classes)?;
    let rendered: Vec<Vec<ImageF>> = dataset
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            (0..matrix.num_acquisitions())
                .map(|col| {
                    let col_seed =
                        lightmux::rng::splitmix64(seed ^ (((i as u64) << 24) | col as u64));
                    Ok(render_noisy(m, &matrix.column_state(col), settings, noise, col_seed, params.gray_max)?.pixels)
                })
                .collect::<Result<Vec<ImageF>>>()
        })
        .collect::<Result<_>>()?;
    let started = Instant::now();
    for stack in &rendered {
        let feats: Vec<_> = stack
            .iter()
            .map(|img| hog(&downscale(img, params.feature_side)?, params.cell, params.block, params.bins))
            .collect::<Result<_>>()?;
        let _ = predict(&model, &concat_sequence(&feats)?)?;
    }
    Ok(started.elapsed().as_secs_f64() * 1e3 / dataset.models.len() as f64)
}

fn cmd_demux(args: DemuxArgs) -> Result<()> {
    let matrix = IlluminationMatrix::from_csv(&std::fs::read_to_string(&args.matrix)?)?;
    let noise = NoiseModel::load(&args.noise_model)?;
    let settings = CameraSettings::new(args.gain_db, args.exposure_ms)?;
    let local = noise.generalize(settings);
    let sigma = sigma_w(&matrix, args.r_bar, &local)?;
    let images: Vec<ImageF> = sorted_entries(&args.images)?
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .map(|p| ImageF::load_png16(p))
        .collect::<Result<_>>()?;
    let recovered = demultiplex(&images, &matrix, &sigma)?;
    std::fs::create_dir_all(&args.output)?;
    for (i, img) in recovered.iter().enumerate() {
        // WLS estimates can dip below zero in dark regions; clamp for storage
        let clamped = ImageF {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        clamped.save_png16(&args.output.join(format!("illum_{i:03}.png")))?;
    }
    println!(
        "recovered {} single-illuminant images from {} acquisitions -> {}",
        recovered.len(),
        images.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let matrix = IlluminationMatrix::from_csv(&std::fs::read_to_string(&args.matrix)?)?;
    let settings = CameraSettings::new(args.gain_db, args.exposure_ms)?;
    std::fs::create_dir_all(&args.output)?;
    let noise = if args.noisy {
        let path = args
            .noise_model
            .as_ref()
            .ok_or_else(|| Error::Config("--noisy requires --noise-model".into()))?;
        Some(NoiseModel::load(path)?)
    } else {
        None
    };
    for col in 0..matrix.num_acquisitions() {
        let state: IlluminationState = matrix.column_state(col);
        let img = match &noise {
            Some(nm) => {
                let seed = lightmux::rng::splitmix64(args.seed ^ col as u64);
                render_noisy(&model, &state, settings, nm, seed, args.gray_max)?.pixels
            }
            None => {
                let clean = render_clean(&model, &state, settings)?;
                ImageF {
                    width: clean.width,
                    height: clean.height,
                    data: clean.data.iter().map(|&v| v.max(0.0)).collect(),
                }
            }
        };
        img.save_png16(&args.output.join(format!("coded_{col:03}.png")))?;
    }
    println!(
        "rendered {} acquisitions -> {}",
        matrix.num_acquisitions(),
        args.output.display()
    );
    Ok(())
}
