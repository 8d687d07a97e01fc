//! Rendering relit images from a relightable model, with and without
//! synthesized camera noise, plus acquisition gain selection.

use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::model::{Dataset, RelightableModel};
use crate::mux::IlluminationMatrix;
use crate::noise::{gain_power_ratio, synthesize, CameraSettings, NoiseModel};

/// Per-illuminant drive weights in [0,1] for one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationState {
    pub weights: Vec<f64>,
}

impl IlluminationState {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::Parameter("illumination weights must lie in [0,1]".into()));
        }
        Ok(IlluminationState { weights })
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        IlluminationState { weights }
    }

    pub fn all_on(n: usize) -> Self {
        IlluminationState {
            weights: vec![1.0; n],
        }
    }
}

/// A rendered acquisition with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub pixels: ImageF,
    pub settings: CameraSettings,
    pub state: IlluminationState,
    pub seed: u64,
}

/// Intensity scale from the model's capture setting to `settings`.
fn intensity_scale(model: &RelightableModel, settings: CameraSettings) -> f64 {
    (settings.exposure_ms / model.capture_exposure_ms)
        * gain_power_ratio(settings.gain_db - model.capture_gain_db)
}

/// Noise-free mean image: `L w`, rescaled to the requested camera setting.
/// Real-valued and unclipped.
pub fn render_clean(
    model: &RelightableModel,
    state: &IlluminationState,
    settings: CameraSettings,
) -> Result<ImageF> {
    let n = model.num_illuminants();
    if state.weights.len() != n {
        return Err(Error::Parameter(format!(
            "illumination state has {} weights, model has {} illuminants",
            state.weights.len(),
            n
        )));
    }
    let scale = intensity_scale(model, settings);
    let mut data = vec![0.0; model.num_pixels()];
    for (i, &w) in state.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let col = model.l.column(i);
        for (d, &v) in data.iter_mut().zip(col.iter()) {
            *d += w * v;
        }
    }
    for d in &mut data {
        *d *= scale;
    }
    Ok(ImageF {
        width: model.width,
        height: model.height,
        data,
    })
}

/// Render with physically derived noise: clean mean, generalized variance
/// prediction, Gaussian draw with clipping and quantization.
pub fn render_noisy(
    model: &RelightableModel,
    state: &IlluminationState,
    settings: CameraSettings,
    noise: &NoiseModel,
    seed: u64,
    gray_max: f64,
) -> Result<RenderedImage> {
    let mean = render_clean(model, state, settings)?;
    let local = noise.generalize(settings);
    let variance = local.predict_variance(&mean)?;
    let pixels = synthesize(&mean, &variance, seed, gray_max)?;
    Ok(RenderedImage {
        pixels,
        settings,
        state: state.clone(),
        seed,
    })
}

/// Select the single acquisition gain that places the brightest clean pixel
/// over all dataset models and all columns of `W` at
/// `target_fraction * gray_max`, clamped to `gain_bounds`.
pub fn select_gain(
    dataset: &Dataset,
    matrix: &IlluminationMatrix,
    exposure_ms: f64,
    target_fraction: f64,
    gain_bounds: (f64, f64),
    gray_max: f64,
) -> Result<f64> {
    if matrix.num_acquisitions() == 0 {
        return Err(Error::Parameter("empty illumination matrix".into()));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "target_fraction {target_fraction} outside (0,1]"
        )));
    }
    // brightest pixel at a fixed probe gain; intensity is linear in the
    // gain power ratio so one probe determines the answer
    let probe_gain = dataset.models[0].capture_gain_db;
    let probe = CameraSettings::new(probe_gain, exposure_ms)?;
    let mut max_pix = 0.0f64;
    for model in &dataset.models {
        for m in 0..matrix.num_acquisitions() {
            let state = matrix.column_state(m);
            let img = render_clean(model, &state, probe)?;
            max_pix = max_pix.max(img.max_value());
        }
    }
    if max_pix <= 0.0 {
        return Err(Error::DegenerateFit(
            "all-dark dataset: cannot select a gain".into(),
        ));
    }
    let gain = probe_gain + 10.0 * (target_fraction * gray_max / max_pix).log10();
    Ok(gain.clamp(gain_bounds.0, gain_bounds.1))
}
