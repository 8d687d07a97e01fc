//! Grid HOG features over downscaled images, concatenated across an
//! acquisition sequence.

use crate::error::{Error, Result};
use crate::image::ImageF;

/// Descriptor geometry: M images, cell grid, block size, orientation bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_images: usize,
    pub cells_x: usize,
    pub cells_y: usize,
    pub block: usize,
    pub bins: usize,
}

impl FeatureLayout {
    /// Overlapping blocks at stride one cell.
    pub fn blocks_x(&self) -> usize {
        self.cells_x - self.block + 1
    }

    pub fn blocks_y(&self) -> usize {
        self.cells_y - self.block + 1
    }

    pub fn len_per_image(&self) -> usize {
        self.blocks_x() * self.blocks_y() * self.block * self.block * self.bins
    }

    pub fn len(&self) -> usize {
        self.num_images * self.len_per_image()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Area-average resampling to `side x side`, with exact fractional coverage
/// of source pixels.
pub fn downscale(image: &ImageF, side: usize) -> Result<ImageF> {
    if side == 0 {
        return Err(Error::Parameter("target side must be positive".into()));
    }
    if image.width < side || image.height < side {
        return Err(Error::Parameter(format!(
            "cannot downscale {}x{} to {side}x{side}",
            image.width, image.height
        )));
    }
    let sx = image.width as f64 / side as f64;
    let sy = image.height as f64 / side as f64;
    let mut out = ImageF::new(side, side);
    for oy in 0..side {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..side {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = 0.0;
            let mut area = 0.0;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(image.height);
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(image.width);
            for py in iy0..iy1 {
                let wy = (y1.min((py + 1) as f64) - y0.max(py as f64)).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for px in ix0..ix1 {
                    let wx = (x1.min((px + 1) as f64) - x0.max(px as f64)).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wx * wy * image.get(px, py);
                    area += wx * wy;
                }
            }
            out.set(ox, oy, acc / area);
        }
    }
    Ok(out)
}

const L2_EPSILON: f64 = 1e-6;

/// Grid HOG descriptor for one image.
///
/// Centered-difference gradients, unsigned orientations binned over [0, pi)
/// with magnitude weighting and linear interpolation between the two nearest
/// bins, overlapping `block x block`-cell blocks at one-cell stride,
/// L2-normalized per block.
pub fn hog(image: &ImageF, cell: usize, block: usize, bins: usize) -> Result<FeatureVector> {
    if cell == 0 || block == 0 || bins == 0 {
        return Err(Error::Parameter("cell, block, and bins must be positive".into()));
    }
    let cells_x = image.width / cell;
    let cells_y = image.height / cell;
    if cells_x < block || cells_y < block {
        return Err(Error::Parameter(format!(
            "image {}x{} with cell {cell} yields {cells_x}x{cells_y} cells, fewer than block {block}",
            image.width, image.height
        )));
    }
    let layout = FeatureLayout {
        num_images: 1,
        cells_x,
        cells_y,
        block,
        bins,
    };

    // per-cell orientation histograms
    let mut hist = vec![0.0f64; cells_x * cells_y * bins];
    let used_w = cells_x * cell;
    let used_h = cells_y * cell;
    for y in 0..used_h {
        for x in 0..used_w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(image.width - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(image.height - 1);
            let gx = image.get(xp, y) - image.get(xm, y);
            let gy = image.get(x, yp) - image.get(x, ym);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            let pos = theta / std::f64::consts::PI * bins as f64 - 0.5;
            let b0 = pos.floor();
            let frac = pos - b0;
            let b0i = ((b0 as i64).rem_euclid(bins as i64)) as usize;
            let b1i = (b0i + 1) % bins;
            let c = (y / cell) * cells_x + x / cell;
            hist[c * bins + b0i] += mag * (1.0 - frac);
            hist[c * bins + b1i] += mag * frac;
        }
    }

    // overlapping blocks, L2 normalization per block
    let mut values = Vec::with_capacity(layout.len_per_image());
    for by in 0..layout.blocks_y() {
        for bx in 0..layout.blocks_x() {
            let start = values.len();
            let mut norm2 = 0.0;
            for cy in by..by + block {
                for cx in bx..bx + block {
                    let c = cy * cells_x + cx;
                    for b in 0..bins {
                        let v = hist[c * bins + b];
                        norm2 += v * v;
                        values.push(v);
                    }
                }
            }
            let norm = (norm2 + L2_EPSILON * L2_EPSILON).sqrt();
            for v in &mut values[start..] {
                *v /= norm;
            }
        }
    }
    Ok(FeatureVector { values, layout })
}

/// Concatenate per-image descriptors in acquisition order.
pub fn concat_sequence(per_image: &[FeatureVector]) -> Result<FeatureVector> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::Parameter("empty feature sequence".into()))?;
    let base = FeatureLayout {
        num_images: 1,
        ..first.layout
    };
    let mut values = Vec::with_capacity(base.len() * per_image.len());
    for f in per_image {
        let layout = FeatureLayout {
            num_images: 1,
            ..f.layout
        };
        if layout != base {
            return Err(Error::Parameter("feature layouts disagree".into()));
        }
        values.extend_from_slice(&f.values);
    }
    Ok(FeatureVector {
        values,
        layout: FeatureLayout {
            num_images: per_image.len(),
            ..base
        },
    })
}
