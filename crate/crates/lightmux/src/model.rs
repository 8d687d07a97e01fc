//! Relightable scene models: on-disk ingestion, procedural synthetic scene
//! families, and dataset-level statistics.
//!
//! A model stores one mean-intensity image per illuminant, referenced to the
//! capture camera setting. The synthetic generator stands in for physical
//! sample capture: it produces families of classes that are near-identical
//! under uniform all-on lighting but separable under chosen discriminant
//! illuminants, each class rendered over several rotated/translated poses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::rng::{derive_seed, splitmix64, SeedDomain};

/// Per-illuminant mean-intensity stack for one sample pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RelightableModel {
    pub width: usize,
    pub height: usize,
    /// N_pix x N, column i is the image under illuminant i, row-major flattened.
    pub l: Array2<f64>,
    pub class_label: String,
    pub pose_id: u32,
    pub capture_gain_db: f64,
    pub capture_exposure_ms: f64,
}

impl RelightableModel {
    pub fn num_illuminants(&self) -> usize {
        self.l.ncols()
    }

    pub fn num_pixels(&self) -> usize {
        self.l.nrows()
    }

    /// Column i as an image.
    pub fn illuminant_image(&self, i: usize) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.l.column(i).to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l.nrows() != self.width * self.height {
            return Err(Error::Parameter(format!(
                "L has {} rows but width*height = {}",
                self.l.nrows(),
                self.width * self.height
            )));
        }
        if self.l.ncols() == 0 {
            return Err(Error::Parameter("model needs at least one illuminant".into()));
        }
        if self.l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("L entries must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Parameters for the procedural scene-family generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFamilySpec {
    pub num_classes: usize,
    pub poses_per_class: usize,
    pub num_illuminants: usize,
    pub image_side: usize,
    pub base_seed: u64,
    /// 1.0 means classes look identical under uniform lighting.
    pub similarity: f64,
    /// Zero-based illuminant indices under which classes differ.
    pub discriminant_illuminants: Vec<usize>,
}

impl SceneFamilySpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.poses_per_class == 0 {
            return Err(Error::Parameter("need >= 1 class and >= 1 pose".into()));
        }
        if self.num_illuminants == 0 {
            return Err(Error::Parameter("need >= 1 illuminant".into()));
        }
        if self.image_side < 8 {
            return Err(Error::Parameter("image_side too small".into()));
        }
        if !(0.0..=1.0).contains(&self.similarity) {
            return Err(Error::Parameter(format!(
                "similarity {} outside [0,1]",
                self.similarity
            )));
        }
        if let Some(&d) = self
            .discriminant_illuminants
            .iter()
            .find(|&&d| d >= self.num_illuminants)
        {
            return Err(Error::Parameter(format!(
                "discriminant illuminant {d} out of range (N = {})",
                self.num_illuminants
            )));
        }
        Ok(())
    }
}

/// A set of models plus the ordered class list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub models: Vec<RelightableModel>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Parameter("dataset is empty".into()));
        }
        let (w, h, n) = (
            self.models[0].width,
            self.models[0].height,
            self.models[0].num_illuminants(),
        );
        for m in &self.models {
            m.validate()?;
            if m.width != w || m.height != h || m.num_illuminants() != n {
                return Err(Error::Parameter(
                    "dataset models disagree on (width, height, N)".into(),
                ));
            }
            if self.class_index(&m.class_label).is_none() {
                return Err(Error::Parameter(format!(
                    "model label {:?} not in class list",
                    m.class_label
                )));
            }
        }
        Ok(())
    }
}

const MANIFEST_NAME: &str = "manifest.txt";

/// Write a model as a manifest plus one 16-bit PNG per illuminant.
pub fn save_model(model: &RelightableModel, dir_path: &Path) -> Result<()> {
    model.validate()?;
    std::fs::create_dir_all(dir_path)?;
    let mut manifest = String::new();
    writeln!(manifest, "class={}", model.class_label).unwrap();
    writeln!(manifest, "pose={}", model.pose_id).unwrap();
    writeln!(manifest, "n={}", model.num_illuminants()).unwrap();
    writeln!(manifest, "gain_db={}", model.capture_gain_db).unwrap();
    writeln!(manifest, "exposure_ms={}", model.capture_exposure_ms).unwrap();
    std::fs::write(dir_path.join(MANIFEST_NAME), manifest)?;
    for i in 0..model.num_illuminants() {
        let img = model.illuminant_image(i);
        img.save_png16(&dir_path.join(format!("illum_{i:03}.png")))?;
    }
    Ok(())
}

/// Load a model directory written by [`save_model`].
pub fn load_model(dir_path: &Path) -> Result<RelightableModel> {
    let err = |reason: String| Error::ModelLoad {
        path: dir_path.to_path_buf(),
        reason,
    };
    let manifest_path = dir_path.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| err(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("bad manifest line: {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        map.get(k)
            .cloned()
            .ok_or_else(|| err(format!("manifest missing key {k}")))
    };
    let n: usize = get("n")?
        .parse()
        .map_err(|_| err("manifest n is not an integer".into()))?;
    let mut columns = Vec::with_capacity(n);
    let mut dims: Option<(usize, usize)> = None;
    for i in 0..n {
        let file = dir_path.join(format!("illum_{i:03}.png"));
        let img = ImageF::load_png16(&file)
            .map_err(|e| err(format!("cannot load {}: {e}", file.display())))?;
        match dims {
            None => dims = Some((img.width, img.height)),
            Some((w, h)) if img.width != w || img.height != h => {
                return Err(Error::ModelConsistency {
                    path: dir_path.to_path_buf(),
                    reason: format!(
                        "{} is {}x{} but previous images are {w}x{h}",
                        file.display(),
                        img.width,
                        img.height
                    ),
                });
            }
            _ => {}
        }
        columns.push(img.data);
    }
    // surplus illuminant files mean the manifest disagrees with the directory
    if dir_path.join(format!("illum_{n:03}.png")).exists() {
        return Err(Error::ModelConsistency {
            path: dir_path.to_path_buf(),
            reason: format!("manifest declares n={n} but more illuminant images are present"),
        });
    }
    let (width, height) = dims.ok_or_else(|| err("model has no illuminant images".into()))?;
    let n_pix = width * height;
    let mut l = Array2::zeros((n_pix, n));
    for (i, col) in columns.iter().enumerate() {
        for (p, &v) in col.iter().enumerate() {
            l[(p, i)] = v;
        }
    }
    let model = RelightableModel {
        width,
        height,
        l,
        class_label: get("class")?,
        pose_id: get("pose")?
            .parse()
            .map_err(|_| err("manifest pose is not an integer".into()))?,
        capture_gain_db: get("gain_db")?
            .parse()
            .map_err(|_| err("manifest gain_db is not a number".into()))?,
        capture_exposure_ms: get("exposure_ms")?
            .parse()
            .map_err(|_| err("manifest exposure_ms is not a number".into()))?,
    };
    model.validate()?;
    Ok(model)
}

/// Write `label<TAB>path` index plus one directory per model.
pub fn save_dataset(dataset: &Dataset, dir_path: &Path) -> Result<()> {
    dataset.validate()?;
    std::fs::create_dir_all(dir_path)?;
    let mut index = String::new();
    for m in &dataset.models {
        let rel = format!("{}_pose{:03}", m.class_label, m.pose_id);
        save_model(m, &dir_path.join(&rel))?;
        writeln!(index, "{}\t{}", m.class_label, rel).unwrap();
    }
    std::fs::write(dir_path.join("index.tsv"), index)?;
    Ok(())
}

/// Load a dataset from its `index.tsv`; class order is first-appearance order.
pub fn load_dataset(dir_path: &Path) -> Result<Dataset> {
    let index_path = dir_path.join("index.tsv");
    let text = std::fs::read_to_string(&index_path)?;
    let mut models = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (label, rel) = line
            .split_once('\t')
            .ok_or_else(|| Error::Config(format!("bad index line: {line}")))?;
        let model = load_model(&dir_path.join(rel))?;
        if model.class_label != label {
            return Err(Error::ModelConsistency {
                path: PathBuf::from(rel),
                reason: format!(
                    "index label {label:?} disagrees with manifest {:?}",
                    model.class_label
                ),
            });
        }
        if !classes.iter().any(|c| c == label) {
            classes.push(label.to_string());
        }
        models.push(model);
    }
    let ds = Dataset { models, classes };
    ds.validate()?;
    Ok(ds)
}

/// Mean over all models, pixels, and illuminants of the stored intensities.
pub fn average_reflectance(dataset: &Dataset) -> Result<f64> {
    if dataset.models.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in &dataset.models {
        sum += m.l.iter().sum::<f64>();
        count += m.l.len();
    }
    Ok(sum / count as f64)
}

// --- procedural family generator ---------------------------------------

/// Camera setting the synthetic models are referenced to.
pub const SYNTH_CAPTURE_GAIN_DB: f64 = 15.0;
pub const SYNTH_CAPTURE_EXPOSURE_MS: f64 = 30.0;

/// Minimum prototype separation, in gray levels, between adjacent classes
/// on the discriminant patch.
const PATCH_SPACING: f64 = 40.0;

struct FamilyParams {
    /// Shared background texture sinusoids: (fu, fv, phase, amp).
    texture: Vec<(f64, f64, f64, f64)>,
    /// Per-class identity sinusoids for the similarity-controlled perturbation.
    class_texture: Vec<(f64, f64, f64)>,
    /// Unit light directions, one per illuminant.
    lights: Vec<[f64; 3]>,
    patch_spacing: f64,
}

fn family_params(spec: &SceneFamilySpec) -> FamilyParams {
    let mut texture = Vec::new();
    for k in 0..4 {
        let s = derive_seed(SeedDomain::Generate, spec.base_seed, &[1, k]);
        let r = |i: u64| splitmix64(s ^ i) as f64 / u64::MAX as f64;
        texture.push((
            2.0 + 6.0 * r(0),
            2.0 + 6.0 * r(1),
            std::f64::consts::TAU * r(2),
            0.06 + 0.04 * r(3),
        ));
    }
    let mut class_texture = Vec::new();
    for c in 0..spec.num_classes as u64 {
        let s = derive_seed(SeedDomain::Generate, spec.base_seed, &[2, c]);
        let r = |i: u64| splitmix64(s ^ i) as f64 / u64::MAX as f64;
        class_texture.push((
            3.0 + 5.0 * r(0),
            3.0 + 5.0 * r(1),
            std::f64::consts::TAU * r(2),
        ));
    }
    let mut lights = Vec::new();
    for i in 0..spec.num_illuminants {
        let az = std::f64::consts::TAU * i as f64 / spec.num_illuminants as f64;
        let el = std::f64::consts::FRAC_PI_4;
        lights.push([el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]);
    }
    // keep the brightest patch below the 16-bit container ceiling
    let spacing = if spec.num_classes > 1 {
        PATCH_SPACING.min(120.0 / (spec.num_classes as f64 - 1.0))
    } else {
        PATCH_SPACING
    };
    FamilyParams {
        texture,
        class_texture,
        lights,
        patch_spacing: spacing,
    }
}

/// Class-dependent patch intensity under the j-th discriminant illuminant.
///
/// Adjacent discriminants use class index and reversed class index in
/// alternation, so for an even-sized discriminant set the per-class patch
/// totals are equal and the classes cancel exactly under all-on lighting.
fn patch_amplitude(params: &FamilyParams, num_classes: usize, class: usize, j: usize) -> f64 {
    let rank = if j % 2 == 0 {
        class
    } else {
        num_classes - 1 - class
    };
    params.patch_spacing * rank as f64
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Evaluate the prototype of `class` under illuminant `i` at object-frame
/// coordinates (u, v) in [-1, 1]^2.
fn prototype_intensity(
    spec: &SceneFamilySpec,
    params: &FamilyParams,
    class: usize,
    illuminant: usize,
    u: f64,
    v: f64,
) -> f64 {
    const BLOB_A: f64 = 0.82;
    const BLOB_B: f64 = 0.68;
    let q = (u / BLOB_A).powi(2) + (v / BLOB_B).powi(2);
    if q >= 1.0 {
        return 3.0; // dim floor outside the blob
    }
    // ellipsoid surface normal for Lambertian-ish shading
    let nz = (1.0 - q).sqrt();
    let normal = {
        let gx = 2.0 * u / (BLOB_A * BLOB_A);
        let gy = 2.0 * v / (BLOB_B * BLOB_B);
        let len = (gx * gx + gy * gy + 4.0 * nz * nz).sqrt();
        [gx / len, gy / len, 2.0 * nz / len]
    };
    let ld = params.lights[illuminant];
    let lambert = (normal[0] * ld[0] + normal[1] * ld[1] + normal[2] * ld[2]).max(0.0);
    let shading = 0.15 + lambert;

    let mut albedo = 0.55;
    for &(fu, fv, ph, amp) in &params.texture {
        albedo += amp * (fu * u + fv * v + ph).sin();
    }
    let mut value = albedo * shading * 160.0;

    // similarity-controlled class fingerprint, spread across illuminants so
    // the all-on total stays within the contract bound
    let (fu, fv, ph) = params.class_texture[class];
    value += (1.0 - spec.similarity) * 1.5 / spec.num_illuminants as f64
        * (fu * u + fv * v + ph).sin();

    // discriminant patch: additive, unshaded, so alternating class codes
    // cancel in the all-on sum
    if let Some(j) = spec
        .discriminant_illuminants
        .iter()
        .position(|&d| d == illuminant)
    {
        // centered so the patch is (nearly) invariant to the pose rotation:
        // a classifier must generalize to held-out poses, and an off-center
        // patch would sweep through positions unseen in training
        const PATCH_U: f64 = 0.0;
        const PATCH_V: f64 = 0.0;
        const PATCH_R: f64 = 0.24;
        let r = ((u - PATCH_U).powi(2) + (v - PATCH_V).powi(2)).sqrt();
        let t = 1.0 - smoothstep(PATCH_R - 0.05, PATCH_R, r);
        value += t * patch_amplitude(params, spec.num_classes, class, j);
    }
    value.max(0.0)
}

/// Pose transform: rotation in multiples of 18 degrees plus a small random
/// translation, derived from (base_seed, pose) only so poses align across
/// classes.
fn pose_transform(spec: &SceneFamilySpec, pose: u32) -> (f64, (f64, f64)) {
    let angle = (pose % 20) as f64 * 18f64.to_radians();
    if pose == 0 {
        return (0.0, (0.0, 0.0));
    }
    let s = derive_seed(SeedDomain::Generate, spec.base_seed, &[3, pose as u64]);
    let r = |i: u64| splitmix64(s ^ i) as f64 / u64::MAX as f64;
    let dx = (r(0) - 0.5) * 0.1;
    let dy = (r(1) - 0.5) * 0.1;
    (angle, (dx, dy))
}

fn generate_model(spec: &SceneFamilySpec, params: &FamilyParams, class: usize, pose: u32) -> RelightableModel {
    let side = spec.image_side;
    let n = spec.num_illuminants;
    let (angle, (dx, dy)) = pose_transform(spec, pose);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut l = Array2::zeros((side * side, n));
    for y in 0..side {
        for x in 0..side {
            let px = (x as f64 + 0.5) / side as f64 * 2.0 - 1.0;
            let py = (y as f64 + 0.5) / side as f64 * 2.0 - 1.0;
            // inverse pose: un-translate then un-rotate
            let (tx, ty) = (px - dx, py - dy);
            let u = ca * tx + sa * ty;
            let v = -sa * tx + ca * ty;
            for i in 0..n {
                l[(y * side + x, i)] = prototype_intensity(spec, params, class, i, u, v);
            }
        }
    }
    RelightableModel {
        width: side,
        height: side,
        l,
        class_label: format!("class_{class}"),
        pose_id: pose,
        capture_gain_db: SYNTH_CAPTURE_GAIN_DB,
        capture_exposure_ms: SYNTH_CAPTURE_EXPOSURE_MS,
    }
}

/// Generate a deterministic family of visually similar classes.
pub fn generate_scene_family(spec: &SceneFamilySpec) -> Result<Dataset> {
    spec.validate()?;
    let params = family_params(spec);
    let jobs: Vec<(usize, u32)> = (0..spec.num_classes)
        .flat_map(|c| (0..spec.poses_per_class as u32).map(move |p| (c, p)))
        .collect();
    let models: Vec<RelightableModel> = jobs
        .par_iter()
        .map(|&(c, p)| generate_model(spec, &params, c, p))
        .collect();
    let classes = (0..spec.num_classes).map(|c| format!("class_{c}")).collect();
    Ok(Dataset { models, classes })
}
