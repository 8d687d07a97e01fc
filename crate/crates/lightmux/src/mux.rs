//! Multiplexing theory: expected acquisition noise for a coded illumination
//! matrix, predicted demultiplexing MSE, weighted-least-squares recovery of
//! single-illuminant images, and a stochastic PSNR-optimal matrix optimizer.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::noise::NoiseModel;
use crate::relight::IlluminationState;

/// N x M matrix of per-illuminant weights; columns are acquisition states.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMatrix {
    pub w: DMatrix<f64>,
    /// Entries restricted to {0,1} when set.
    pub binary: bool,
}

impl IlluminationMatrix {
    pub fn new(w: DMatrix<f64>, binary: bool) -> Result<Self> {
        if w.ncols() == 0 {
            return Err(Error::Parameter("matrix needs at least one column".into()));
        }
        if w.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Parameter("matrix entries must lie in [0,1]".into()));
        }
        if binary && w.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parameter("binary matrix has fractional entries".into()));
        }
        Ok(IlluminationMatrix { w, binary })
    }

    pub fn identity(n: usize) -> Self {
        IlluminationMatrix {
            w: DMatrix::identity(n, n),
            binary: true,
        }
    }

    pub fn all_on(n: usize, m: usize) -> Self {
        IlluminationMatrix {
            w: DMatrix::from_element(n, m, 1.0),
            binary: true,
        }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        IlluminationMatrix {
            w: DMatrix::zeros(n, m),
            binary: true,
        }
    }

    pub fn num_illuminants(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_acquisitions(&self) -> usize {
        self.w.ncols()
    }

    pub fn column_state(&self, m: usize) -> IlluminationState {
        IlluminationState {
            weights: self.w.column(m).iter().cloned().collect(),
        }
    }

    /// First `m` acquisition states.
    pub fn prefix(&self, m: usize) -> IlluminationMatrix {
        IlluminationMatrix {
            w: self.w.columns(0, m).into_owned(),
            binary: self.binary,
        }
    }

    /// Column from binary candidate bits.
    pub fn append_column(&self, bits: &[f64]) -> IlluminationMatrix {
        let mut w = DMatrix::zeros(self.w.nrows(), self.w.ncols() + 1);
        w.columns_mut(0, self.w.ncols()).copy_from(&self.w);
        for (i, &b) in bits.iter().enumerate() {
            w[(i, self.w.ncols())] = b;
        }
        IlluminationMatrix {
            w,
            binary: self.binary && bits.iter().all(|&b| b == 0.0 || b == 1.0),
        }
    }

    /// CSV: header `# N=<n> M=<m> binary=<0|1>`, one row per illuminant.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# N={} M={} binary={}\n",
            self.num_illuminants(),
            self.num_acquisitions(),
            u8::from(self.binary)
        );
        for i in 0..self.num_illuminants() {
            let row: Vec<String> = (0..self.num_acquisitions())
                .map(|j| format!("{:.6}", self.w[(i, j)]))
                .collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty matrix file".into()))?;
        let mut n = None;
        let mut m = None;
        let mut binary = false;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("N", v)) => n = v.parse().ok(),
                Some(("M", v)) => m = v.parse().ok(),
                Some(("binary", v)) => binary = v == "1",
                _ => {}
            }
        }
        let (n, m): (usize, usize) = match (n, m) {
            (Some(n), Some(m)) => (n, m),
            _ => return Err(Error::Config("matrix header missing N= or M=".into())),
        };
        let mut w = DMatrix::zeros(n, m);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            if i >= n {
                return Err(Error::Config("matrix has more rows than header N".into()));
            }
            for (j, v) in line.split(',').enumerate() {
                if j >= m {
                    return Err(Error::Config("matrix row longer than header M".into()));
                }
                w[(i, j)] = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad matrix entry: {v}")))?;
            }
        }
        IlluminationMatrix::new(w, binary)
    }
}

/// Diagonal per-acquisition variance of the coded measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MuxNoiseEstimate {
    pub sigma_w: DVector<f64>,
}

/// Expected measurement noise for matrix `W` at average scene reflectance
/// `r_bar`: per acquisition, photon noise from the summed illuminant
/// brightness plus read noise.
pub fn sigma_w(matrix: &IlluminationMatrix, r_bar: f64, noise: &NoiseModel) -> Result<MuxNoiseEstimate> {
    if r_bar < 0.0 {
        return Err(Error::Parameter(format!("r_bar {r_bar} must be >= 0")));
    }
    let sigma = DVector::from_iterator(
        matrix.num_acquisitions(),
        (0..matrix.num_acquisitions())
            .map(|j| noise.sigma_p2 * r_bar * matrix.w.column(j).sum() + noise.sigma_r2),
    );
    Ok(MuxNoiseEstimate { sigma_w: sigma })
}

/// Normal matrix of the weighted least-squares demultiplexing problem,
/// `sum_j w_j w_j^T / sigma_j^2` (the design matrix is `W^T` because
/// acquisition j measures `w_j^T x`), with its condition number checked.
fn weighted_normal(
    matrix: &IlluminationMatrix,
    sigma: &MuxNoiseEstimate,
    cond_threshold: f64,
) -> Result<DMatrix<f64>> {
    let n = matrix.num_illuminants();
    let m = matrix.num_acquisitions();
    if m < n {
        return Err(Error::Parameter(format!(
            "need M >= N acquisitions, got M={m} N={n}"
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    for j in 0..m {
        let s = sigma.sigma_w[j];
        if s <= 0.0 {
            return Err(Error::Parameter("nonpositive measurement variance".into()));
        }
        let col = matrix.w.column(j);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] += col[r] * col[c] / s;
            }
        }
    }
    let svd = a.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let cond = if min_sv > 0.0 { max_sv / min_sv } else { f64::INFINITY };
    if !cond.is_finite() || cond > cond_threshold {
        return Err(Error::Conditioning {
            cond,
            threshold: cond_threshold,
        });
    }
    Ok(a)
}

pub const DEFAULT_COND_THRESHOLD: f64 = 1e6;

/// Predicted per-illuminant demultiplexing MSE: `(1/N)` times the trace of
/// the inverse weighted normal matrix.
pub fn predicted_mse(matrix: &IlluminationMatrix, sigma: &MuxNoiseEstimate) -> Result<f64> {
    predicted_mse_with_threshold(matrix, sigma, DEFAULT_COND_THRESHOLD)
}

pub fn predicted_mse_with_threshold(
    matrix: &IlluminationMatrix,
    sigma: &MuxNoiseEstimate,
    cond_threshold: f64,
) -> Result<f64> {
    let a = weighted_normal(matrix, sigma, cond_threshold)?;
    let inv = a.try_inverse().ok_or(Error::Conditioning {
        cond: f64::INFINITY,
        threshold: cond_threshold,
    })?;
    Ok(inv.trace() / matrix.num_illuminants() as f64)
}

/// Per-pixel weighted least squares recovery of the N single-illuminant
/// images from M coded acquisitions.
pub fn demultiplex(
    images: &[ImageF],
    matrix: &IlluminationMatrix,
    sigma: &MuxNoiseEstimate,
) -> Result<Vec<ImageF>> {
    let m = matrix.num_acquisitions();
    let n = matrix.num_illuminants();
    if images.len() != m {
        return Err(Error::Parameter(format!(
            "got {} images for an M={m} matrix",
            images.len()
        )));
    }
    let (w, h) = (images[0].width, images[0].height);
    if images.iter().any(|im| im.width != w || im.height != h) {
        return Err(Error::Parameter("coded images disagree on dimensions".into()));
    }
    let a = weighted_normal(matrix, sigma, DEFAULT_COND_THRESHOLD)?;
    let a_inv = a.try_inverse().ok_or(Error::Conditioning {
        cond: f64::INFINITY,
        threshold: DEFAULT_COND_THRESHOLD,
    })?;
    // estimator matrix: (W^T S^-1 W)^-1 W^T S^-1, applied per pixel
    let mut est = DMatrix::zeros(n, m);
    for j in 0..m {
        let s = sigma.sigma_w[j];
        for r in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a_inv[(r, k)] * matrix.w[(k, j)];
            }
            est[(r, j)] = acc / s;
        }
    }
    let mut out = vec![ImageF::new(w, h); n];
    for p in 0..w * h {
        for r in 0..n {
            let mut acc = 0.0;
            for j in 0..m {
                acc += est[(r, j)] * images[j].data[p];
            }
            out[r].data[p] = acc;
        }
    }
    Ok(out)
}

/// Stochastic search from the identity toward the matrix minimizing the
/// predicted demultiplexing MSE. The walk anneals — worse candidates are
/// accepted with a probability that decays over the run — because the
/// identity is a strict local minimum under read-noise-dominated conditions
/// and pure descent would never leave it. The best matrix seen is tracked
/// separately and returned, so the result is deterministic given `seed` and
/// never worse than the identity start.
pub fn optimize_snr(
    n: usize,
    m: usize,
    noise: &NoiseModel,
    r_bar: f64,
    iterations: usize,
    seed: u64,
    cond_threshold: f64,
    binary: bool,
) -> Result<IlluminationMatrix> {
    if m < n || n == 0 {
        return Err(Error::Parameter(format!("need M >= N >= 1, got N={n} M={m}")));
    }
    if iterations == 0 {
        return Err(Error::Parameter("need at least one iteration".into()));
    }
    // identity start, extra columns cycling through unit states when M > N
    let mut w = DMatrix::zeros(n, m);
    for j in 0..m {
        w[(j % n, j)] = 1.0;
    }
    let mut current = IlluminationMatrix { w, binary };
    let mut current_mse = {
        let s = sigma_w(&current, r_bar, noise)?;
        predicted_mse_with_threshold(&current, &s, cond_threshold)?
    };
    let mut best = current.clone();
    let mut best_mse = current_mse;
    // relative-MSE temperature schedule, geometric from t0 to t1
    let (t0, t1) = (0.5f64, 1e-4f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..iterations {
        let temp = t0 * (t1 / t0).powf(k as f64 / iterations as f64);
        let mut cand = current.clone();
        if binary {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..m);
            cand.w[(i, j)] = 1.0 - cand.w[(i, j)];
        } else if rng.random_bool(0.5) {
            // re-draw one entry uniformly
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..m);
            cand.w[(i, j)] = rng.random_range(0.0..=1.0);
        } else {
            // Gaussian jitter on one column, clamped to [0,1]
            let j = rng.random_range(0..m);
            for i in 0..n {
                let g: f64 = {
                    // Box-Muller from two uniforms keeps us off rand_distr
                    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.random_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                cand.w[(i, j)] = (cand.w[(i, j)] + 0.1 * g).clamp(0.0, 1.0);
            }
        }
        let Ok(s) = sigma_w(&cand, r_bar, noise) else {
            continue;
        };
        let Ok(mse) = predicted_mse_with_threshold(&cand, &s, cond_threshold) else {
            continue;
        };
        let accept = mse < current_mse
            || rng.random_range(0.0..1.0) < (-(mse - current_mse) / (current_mse * temp)).exp();
        if accept {
            current = cand;
            current_mse = mse;
            if mse < best_mse {
                best_mse = mse;
                best = current.clone();
            }
        }
    }
    Ok(best)
}

/// Best of several independent annealed-search restarts with derived seeds.
pub fn optimize_snr_restarts(
    n: usize,
    m: usize,
    noise: &NoiseModel,
    r_bar: f64,
    iterations: usize,
    seed: u64,
    cond_threshold: f64,
    binary: bool,
    restarts: usize,
) -> Result<IlluminationMatrix> {
    use rayon::prelude::*;
    let results: Vec<Result<IlluminationMatrix>> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            optimize_snr(
                n,
                m,
                noise,
                r_bar,
                iterations,
                crate::rng::splitmix64(seed ^ r),
                cond_threshold,
                binary,
            )
        })
        .collect();
    let mut best: Option<(f64, IlluminationMatrix)> = None;
    for res in results {
        let w = res?;
        let s = sigma_w(&w, r_bar, noise)?;
        let mse = predicted_mse_with_threshold(&w, &s, cond_threshold)?;
        if best.as_ref().is_none_or(|(b, _)| mse < *b) {
            best = Some((mse, w));
        }
    }
    Ok(best.unwrap().1)
}

/// Binary S-matrix of order n = 2^k - 1, rows/columns of the Hadamard
/// construction. Classical reference point for read-noise-limited codes.
pub fn s_matrix(n: usize) -> Result<IlluminationMatrix> {
    if !(n + 1).is_power_of_two() || n == 0 {
        return Err(Error::Parameter(format!(
            "S-matrix order must be 2^k - 1, got {n}"
        )));
    }
    // Sylvester Hadamard of order n+1, drop first row/column, map -1 -> 1, 1 -> 0
    let size = n + 1;
    let mut h = DMatrix::from_element(size, size, 1.0f64);
    let mut block = 1;
    while block < size {
        for r in 0..size {
            for c in 0..size {
                if (r / block) % 2 == 1 && (c / block) % 2 == 1 {
                    h[(r, c)] = -h[(r, c)];
                }
            }
        }
        block *= 2;
    }
    let mut s = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            s[(r, c)] = if h[(r + 1, c + 1)] < 0.0 { 1.0 } else { 0.0 };
        }
    }
    IlluminationMatrix::new(s, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CameraSettings;
    use approx::assert_relative_eq;

    fn noise(p: f64, r: f64) -> NoiseModel {
        NoiseModel::new(p, r, CameraSettings::new(15.0, 30.0).unwrap())
    }

    #[test]
    fn sigma_w_identity_and_all_on() {
        let nm = noise(0.3, 5.0);
        let s = sigma_w(&IlluminationMatrix::identity(4), 100.0, &nm).unwrap();
        for j in 0..4 {
            assert_relative_eq!(s.sigma_w[j], 0.3 * 100.0 + 5.0);
        }
        let s = sigma_w(&IlluminationMatrix::all_on(4, 3), 100.0, &nm).unwrap();
        for j in 0..3 {
            assert_relative_eq!(s.sigma_w[j], 0.3 * 4.0 * 100.0 + 5.0);
        }
    }

    #[test]
    fn sigma_w_matches_direct_formula_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = DMatrix::from_fn(5, 6, |_, _| rng.random_range(0.0..=1.0));
        let mat = IlluminationMatrix::new(w.clone(), false).unwrap();
        let nm = noise(0.7, 66.0);
        let s = sigma_w(&mat, 42.0, &nm).unwrap();
        for j in 0..6 {
            let colsum: f64 = (0..5).map(|i| w[(i, j)]).sum();
            assert_relative_eq!(s.sigma_w[j], 0.7 * 42.0 * colsum + 66.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mse_identity_with_uniform_noise() {
        let nm = noise(0.0, 9.0);
        let mat = IlluminationMatrix::identity(5);
        let s = sigma_w(&mat, 0.0, &nm).unwrap();
        assert_relative_eq!(predicted_mse(&mat, &s).unwrap(), 9.0, epsilon = 1e-10);
    }

    #[test]
    fn mse_s_matrix_order_7_read_noise_only() {
        let mat = s_matrix(7).unwrap();
        let nm = noise(0.0, 1.0);
        let s = sigma_w(&mat, 0.0, &nm).unwrap();
        // 4N/(N+1)^2 for the order-8 Hadamard construction
        assert_relative_eq!(
            predicted_mse(&mat, &s).unwrap(),
            4.0 * 7.0 / 64.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn mse_matches_explicit_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let w = DMatrix::from_fn(4, 4, |_, _| f64::from(rng.random_bool(0.5)));
            let mat = match IlluminationMatrix::new(w.clone(), true) {
                Ok(m) => m,
                Err(_) => continue,
            };
            let nm = noise(0.2, 3.0);
            let s = sigma_w(&mat, 10.0, &nm).unwrap();
            let lhs = match predicted_mse(&mat, &s) {
                Ok(v) => v,
                Err(_) => continue, // singular draw
            };
            // independent route: dense inverse of the full expression; the
            // measurement model is y = W^T x (column j of W is acquisition
            // j's weights), so the design matrix is W^T
            let sinv = DMatrix::from_diagonal(&s.sigma_w.map(|v| 1.0 / v));
            let normal = &w * sinv * w.transpose();
            let rhs = normal.try_inverse().unwrap().trace() / 4.0;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    #[test]
    fn mse_invariances() {
        let mat = s_matrix(7).unwrap();
        let nm = noise(0.5, 2.0);
        let s = sigma_w(&mat, 20.0, &nm).unwrap();
        let base = predicted_mse(&mat, &s).unwrap();

        // column permutation
        let mut wp = mat.w.clone();
        wp.swap_columns(0, 3);
        let matp = IlluminationMatrix::new(wp, true).unwrap();
        let sp = sigma_w(&matp, 20.0, &nm).unwrap();
        assert_relative_eq!(predicted_mse(&matp, &sp).unwrap(), base, epsilon = 1e-9);

        // scaling Sigma_W by c scales MSE by c
        let s2 = MuxNoiseEstimate {
            sigma_w: s.sigma_w.map(|v| 3.0 * v),
        };
        assert_relative_eq!(predicted_mse(&mat, &s2).unwrap(), 3.0 * base, epsilon = 1e-9);
    }

    #[test]
    fn mse_rejects_singular_matrix() {
        let w = DMatrix::from_element(3, 3, 1.0);
        let mat = IlluminationMatrix::new(w, true).unwrap();
        let s = MuxNoiseEstimate {
            sigma_w: DVector::from_element(3, 1.0),
        };
        assert!(matches!(
            predicted_mse(&mat, &s),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn demultiplex_identity_returns_inputs() {
        let mat = IlluminationMatrix::identity(3);
        let s = MuxNoiseEstimate {
            sigma_w: DVector::from_element(3, 2.0),
        };
        let imgs = vec![
            ImageF::constant(4, 4, 10.0),
            ImageF::constant(4, 4, 20.0),
            ImageF::constant(4, 4, 30.0),
        ];
        let out = demultiplex(&imgs, &mat, &s).unwrap();
        for (a, b) in out.iter().zip(&imgs) {
            for i in 0..a.len() {
                assert_relative_eq!(a.data[i], b.data[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn demultiplex_inverts_noiseless_coding() {
        let mat = s_matrix(7).unwrap();
        let truth: Vec<ImageF> = (0..7)
            .map(|i| ImageF::from_fn(6, 5, |x, y| (x * 3 + y * 2 + i) as f64))
            .collect();
        let coded: Vec<ImageF> = (0..7)
            .map(|j| {
                let mut img = ImageF::new(6, 5);
                for (i, t) in truth.iter().enumerate() {
                    if mat.w[(i, j)] == 1.0 {
                        for (o, v) in img.data.iter_mut().zip(&t.data) {
                            *o += v;
                        }
                    }
                }
                img
            })
            .collect();
        let s = MuxNoiseEstimate {
            sigma_w: DVector::from_element(7, 1.5),
        };
        let out = demultiplex(&coded, &mat, &s).unwrap();
        for (a, b) in out.iter().zip(&truth) {
            for i in 0..a.len() {
                assert_relative_eq!(a.data[i], b.data[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn demultiplex_monte_carlo_mse_matches_prediction() {
        let mat = s_matrix(7).unwrap();
        let nm = noise(0.3, 40.0);
        let r_bar = 100.0;
        let s = sigma_w(&mat, r_bar, &nm).unwrap();
        let predicted = predicted_mse(&mat, &s).unwrap();
        // constant scene at r_bar per illuminant, so sigma_w is exact
        let truth: Vec<ImageF> = (0..7).map(|_| ImageF::constant(16, 16, r_bar)).collect();
        let draws = 500;
        let mut mse_acc = 0.0;
        for d in 0..draws {
            let coded: Vec<ImageF> = (0..7)
                .map(|j| {
                    let colsum: f64 = (0..7).map(|i| mat.w[(i, j)]).sum();
                    let mean = ImageF::constant(16, 16, r_bar * colsum);
                    let var = ImageF::constant(16, 16, s.sigma_w[j]);
                    crate::noise::synthesize(&mean, &var, 70_000 + d * 7 + j as u64, 1e9).unwrap()
                })
                .collect();
            let est = demultiplex(&coded, &mat, &s).unwrap();
            let mut err = 0.0;
            for (e, t) in est.iter().zip(&truth) {
                for i in 0..e.len() {
                    err += (e.data[i] - t.data[i]).powi(2);
                }
            }
            mse_acc += err / (7.0 * 256.0);
        }
        let empirical = mse_acc / draws as f64;
        assert!(
            (empirical - predicted).abs() / predicted < 0.10,
            "empirical {empirical} vs predicted {predicted}"
        );
    }

    #[test]
    fn optimizer_is_no_worse_than_identity_under_photon_noise() {
        let nm = noise(1.0, 1e-6);
        let r_bar = 100.0;
        let ident = IlluminationMatrix::identity(5);
        let s = sigma_w(&ident, r_bar, &nm).unwrap();
        let ident_mse = predicted_mse(&ident, &s).unwrap();
        let found = optimize_snr(5, 5, &nm, r_bar, 20_000, 4, 1e6, false).unwrap();
        let sf = sigma_w(&found, r_bar, &nm).unwrap();
        let found_mse = predicted_mse(&found, &sf).unwrap();
        assert!(found_mse <= ident_mse);
        // photon-noise-dominated: multiplexing cannot help much
        assert!(
            (ident_mse - found_mse) / ident_mse < 0.01,
            "improvement {} unexpectedly large",
            (ident_mse - found_mse) / ident_mse
        );
    }

    #[test]
    fn optimizer_read_noise_reaches_s_matrix_territory() {
        let nm = noise(0.0, 1.0);
        let found = optimize_snr_restarts(7, 7, &nm, 50.0, 30_000, 9, 1e6, false, 4).unwrap();
        let s = sigma_w(&found, 50.0, &nm).unwrap();
        let mse = predicted_mse(&found, &s).unwrap();
        assert!(mse <= 0.5, "found MSE {mse}, S-matrix reference 0.4375");
    }

    #[test]
    fn optimizer_binary_3x3_matches_exhaustive_search() {
        let nm = noise(0.0, 1.0);
        let mut best = f64::INFINITY;
        for bits in 0u32..512 {
            let w = DMatrix::from_fn(3, 3, |r, c| f64::from(bits >> (r * 3 + c) & 1 == 1));
            let mat = IlluminationMatrix::new(w, true).unwrap();
            let s = sigma_w(&mat, 0.0, &nm).unwrap();
            if let Ok(mse) = predicted_mse(&mat, &s) {
                best = best.min(mse);
            }
        }
        let found = optimize_snr_restarts(3, 3, &nm, 0.0, 3_000, 21, 1e6, true, 8).unwrap();
        let s = sigma_w(&found, 0.0, &nm).unwrap();
        let mse = predicted_mse(&found, &s).unwrap();
        assert_relative_eq!(mse, best, epsilon = 1e-9);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let nm = noise(0.1, 5.0);
        let a = optimize_snr(4, 4, &nm, 30.0, 2000, 7, 1e6, false).unwrap();
        let b = optimize_snr(4, 4, &nm, 30.0, 2000, 7, 1e6, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mat = s_matrix(7).unwrap();
        let back = IlluminationMatrix::from_csv(&mat.to_csv()).unwrap();
        assert_eq!(back, mat);
    }
}
