//! Affine camera noise model: calibration, generalization across camera
//! settings, variance prediction, and noise synthesis.
//!
//! The model is `sigma^2 = sigma_p2 * mean + sigma_r2` at a reference
//! (gain, exposure); other settings are reached by rescaling the two
//! coefficients rather than refitting.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::rng::counter_normal;

/// Camera gain (dB) and exposure time (ms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSettings {
    pub gain_db: f64,
    pub exposure_ms: f64,
}

impl CameraSettings {
    pub fn new(gain_db: f64, exposure_ms: f64) -> Result<Self> {
        if !(exposure_ms > 0.0) {
            return Err(Error::Parameter(format!(
                "exposure must be positive, got {exposure_ms}"
            )));
        }
        Ok(CameraSettings {
            gain_db,
            exposure_ms,
        })
    }
}

/// Squared linear gain ratio for a gain change in dB (amplitude convention).
#[inline]
pub fn gain_power_ratio(delta_db: f64) -> f64 {
    10f64.powf(delta_db / 10.0)
}

/// Calibrated affine noise model referenced to `gain0`/`exposure0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_p2: f64,
    pub sigma_r2: f64,
    pub gain0_db: f64,
    pub exposure0_ms: f64,
    /// Set when a negative fitted intercept was clamped to zero.
    pub clamped_intercept: bool,
}

/// One calibration point: sample mean and unbiased sample variance of a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseObservation {
    pub mean: f64,
    pub variance: f64,
}

/// Per-pixel means/variances over an exposure stack, dropping pixels whose
/// mean exceeds `saturation_cutoff` (saturation bends the affine curve).
pub fn characterize_stack(
    images: &[ImageF],
    saturation_cutoff: f64,
) -> Result<Vec<NoiseObservation>> {
    if images.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 images to estimate variance, got {}",
            images.len()
        )));
    }
    let (w, h) = (images[0].width, images[0].height);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::Parameter(format!(
                "stack dimensions disagree: {}x{} vs {}x{}",
                img.width, img.height, w, h
            )));
        }
    }
    let n = images.len() as f64;
    let mut out = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let mean = images.iter().map(|im| im.data[i]).sum::<f64>() / n;
        if mean > saturation_cutoff {
            continue;
        }
        let ss = images
            .iter()
            .map(|im| {
                let d = im.data[i] - mean;
                d * d
            })
            .sum::<f64>();
        out.push(NoiseObservation {
            mean,
            variance: ss / (n - 1.0),
        });
    }
    Ok(out)
}

/// Least-squares line fit `variance = sigma_p2 * mean + sigma_r2`.
///
/// A negative intercept clamps to zero with `clamped_intercept` set.
pub fn fit_affine(observations: &[NoiseObservation], settings: CameraSettings) -> Result<NoiseModel> {
    let n = observations.len() as f64;
    if observations.len() < 2 {
        return Err(Error::Parameter(
            "affine fit needs at least 2 observations".into(),
        ));
    }
    let mean_x = observations.iter().map(|o| o.mean).sum::<f64>() / n;
    let mean_y = observations.iter().map(|o| o.variance).sum::<f64>() / n;
    let sxx = observations
        .iter()
        .map(|o| (o.mean - mean_x).powi(2))
        .sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "all observation means are equal; slope is unidentifiable".into(),
        ));
    }
    let sxy = observations
        .iter()
        .map(|o| (o.mean - mean_x) * (o.variance - mean_y))
        .sum::<f64>();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let clamped = intercept < 0.0;
    Ok(NoiseModel {
        sigma_p2: slope,
        sigma_r2: intercept.max(0.0),
        gain0_db: settings.gain_db,
        exposure0_ms: settings.exposure_ms,
        clamped_intercept: clamped,
    })
}

impl NoiseModel {
    pub fn new(sigma_p2: f64, sigma_r2: f64, reference: CameraSettings) -> Self {
        NoiseModel {
            sigma_p2,
            sigma_r2,
            gain0_db: reference.gain_db,
            exposure0_ms: reference.exposure_ms,
            clamped_intercept: false,
        }
    }

    pub fn reference(&self) -> CameraSettings {
        CameraSettings {
            gain_db: self.gain0_db,
            exposure_ms: self.exposure0_ms,
        }
    }

    /// Re-reference the model to new camera settings.
    ///
    /// Photon noise scales with the squared gain ratio and the exposure
    /// ratio; read noise scales with the squared gain ratio only.
    pub fn generalize(&self, settings: CameraSettings) -> NoiseModel {
        let g2 = gain_power_ratio(settings.gain_db - self.gain0_db);
        let e = settings.exposure_ms / self.exposure0_ms;
        NoiseModel {
            sigma_p2: g2 * e * self.sigma_p2,
            sigma_r2: g2 * self.sigma_r2,
            gain0_db: settings.gain_db,
            exposure0_ms: settings.exposure_ms,
            clamped_intercept: self.clamped_intercept,
        }
    }

    /// Per-pixel variance at the model's own reference settings.
    pub fn predict_variance(&self, mean_image: &ImageF) -> Result<ImageF> {
        if mean_image.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Parameter(
                "mean image has negative intensities".into(),
            ));
        }
        Ok(ImageF {
            width: mean_image.width,
            height: mean_image.height,
            data: mean_image
                .data
                .iter()
                .map(|&m| self.sigma_p2 * m + self.sigma_r2)
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "sigma_p2={}", self.sigma_p2).unwrap();
        writeln!(s, "sigma_r2={}", self.sigma_r2).unwrap();
        writeln!(s, "gain0_db={}", self.gain0_db).unwrap();
        writeln!(s, "exposure0_ms={}", self.exposure0_ms).unwrap();
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad noise model line: {line}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value in noise model: {line}")))?;
            map.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("noise model missing key {k}")))
        };
        Ok(NoiseModel {
            sigma_p2: get("sigma_p2")?,
            sigma_r2: get("sigma_r2")?,
            gain0_db: get("gain0_db")?,
            exposure0_ms: get("exposure0_ms")?,
            clamped_intercept: false,
        })
    }
}

/// Draw each pixel from Normal(mean, variance), clip to [0, gray_max],
/// quantize to integer gray levels. Deterministic given `seed`; pixel
/// streams are independent of evaluation order.
pub fn synthesize(
    mean_image: &ImageF,
    variance_image: &ImageF,
    seed: u64,
    gray_max: f64,
) -> Result<ImageF> {
    if mean_image.width != variance_image.width || mean_image.height != variance_image.height {
        return Err(Error::Parameter(format!(
            "mean {}x{} vs variance {}x{} shape mismatch",
            mean_image.width, mean_image.height, variance_image.width, variance_image.height
        )));
    }
    if variance_image.data.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter("negative variance".into()));
    }
    let data = mean_image
        .data
        .iter()
        .zip(&variance_image.data)
        .enumerate()
        .map(|(i, (&m, &v))| {
            let x = m + v.sqrt() * counter_normal(seed, i as u64);
            x.clamp(0.0, gray_max).round()
        })
        .collect();
    Ok(ImageF {
        width: mean_image.width,
        height: mean_image.height,
        data,
    })
}

/// Write observations as `mean,variance` CSV for plotting.
pub fn observations_to_csv(observations: &[NoiseObservation]) -> String {
    let mut s = String::from("mean,variance\n");
    for o in observations {
        writeln!(s, "{},{}", o.mean, o.variance).unwrap();
    }
    s
}
