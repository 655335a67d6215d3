//! Natural image quality evaluator (NIQE).
//!
//! Per patch and per scale (full and half resolution): MSCN coefficients, an AGGD fit
//! of the coefficients (shape, mean scale) and AGGD fits of the four neighbour
//! products (shape, mean, left scale, right scale). That is 18 features per scale and
//! 36 per patch. A model is the mean and covariance of pristine-patch features; the
//! score of an image is the Mahalanobis-type distance between its own feature
//! Gaussian and the model's.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::imagecore::{resize_values, Image, CHANNELS};

pub const FEATURE_DIM: usize = 36;
const PER_SCALE: usize = 18;
const WINDOW_RADIUS: usize = 3;
const WINDOW_SIGMA: f64 = 7.0 / 6.0;
const MIN_AGGD_SAMPLES: usize = 16;
const SHAPE_RANGE: (f64, f64) = (0.2, 10.0);
const EIGEN_FLOOR: f64 = 1e-10;

/// Asymmetric generalized Gaussian parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggdParams {
    pub shape: f64,
    pub left_scale: f64,
    pub right_scale: f64,
    pub mean: f64,
}

/// Mean-square sample energy below which a distribution counts as flat. MSCN
/// coefficients of a constant region carry only blur roundoff, far below this.
const NEGLIGIBLE_ENERGY: f64 = 1e-20;

/// `Γ(2/a)² / (Γ(1/a) Γ(3/a))`, increasing in `a`.
fn gg_ratio(a: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / a) - ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp()
}

fn invert_gg_ratio(target: f64) -> f64 {
    let (mut lo, mut hi) = SHAPE_RANGE;
    if target <= gg_ratio(lo) {
        return lo;
    }
    if target >= gg_ratio(hi) {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gg_ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Moment-matching AGGD estimate.
pub fn aggd_fit(samples: &[f64]) -> Result<AggdParams> {
    if samples.len() < MIN_AGGD_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "AGGD fit needs at least {MIN_AGGD_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let (mut neg_sq, mut neg_n, mut pos_sq, mut pos_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &x in samples {
        if !x.is_finite() {
            return Err(Error::invalid("non-finite AGGD sample"));
        }
        if x < 0.0 {
            neg_sq += x * x;
            neg_n += 1;
        } else if x > 0.0 {
            pos_sq += x * x;
            pos_n += 1;
        }
        abs_sum += x.abs();
        sq_sum += x * x;
    }
    if sq_sum <= samples.len() as f64 * NEGLIGIBLE_ENERGY {
        return Err(Error::DegenerateDistribution(
            "AGGD samples are numerically zero".into(),
        ));
    }
    let n = samples.len() as f64;
    let mut left_std = if neg_n > 0 {
        (neg_sq / neg_n as f64).sqrt()
    } else {
        0.0
    };
    let mut right_std = if pos_n > 0 {
        (pos_sq / pos_n as f64).sqrt()
    } else {
        0.0
    };
    // one-sided samples: mirror the populated side
    if left_std == 0.0 {
        left_std = right_std;
    }
    if right_std == 0.0 {
        right_std = left_std;
    }
    let gamma_hat = left_std / right_std;
    let mean_abs = abs_sum / n;
    let r_hat = mean_abs * mean_abs / (sq_sum / n);
    let g2 = gamma_hat * gamma_hat;
    let r_norm = r_hat * (g2 * gamma_hat + 1.0) * (gamma_hat + 1.0) / ((g2 + 1.0) * (g2 + 1.0));
    let shape = invert_gg_ratio(r_norm);

    let scale_factor = (ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape)).exp().sqrt();
    let left_scale = left_std * scale_factor;
    let right_scale = right_std * scale_factor;
    let mean = (right_scale - left_scale) * (ln_gamma(2.0 / shape) - ln_gamma(1.0 / shape)).exp();
    Ok(AggdParams {
        shape,
        left_scale,
        right_scale,
        mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PatchMode {
    /// Keep sharp patches only (model fitting).
    Fit,
    /// Keep every patch (scoring).
    Score,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiqeOptions {
    pub patch_size: usize,
    pub sharpness_threshold: f64,
}

impl Default for NiqeOptions {
    fn default() -> Self {
        Self {
            patch_size: 96,
            sharpness_threshold: 0.75,
        }
    }
}

impl NiqeOptions {
    fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || !self.patch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "NIQE patch size must be even and >= 8, got {}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.sharpness_threshold) {
            return Err(Error::invalid("sharpness threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }
}

fn gaussian_kernel() -> Vec<f64> {
    let r = WINDOW_RADIUS as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter with replicated borders.
fn blur(p: &Plane, kernel: &[f64]) -> Plane {
    let r = WINDOW_RADIUS as i64;
    let clampi = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            tmp[y * p.w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * p.at(y, clampi(x as i64 + k as i64 - r, p.w)))
                .sum();
        }
    }
    let mut out = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            out[y * p.w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * tmp[clampi(y as i64 + k as i64 - r, p.h) * p.w + x])
                .sum();
        }
    }
    Plane {
        h: p.h,
        w: p.w,
        v: out,
    }
}

/// MSCN coefficients and the local standard deviation map.
fn mscn(p: &Plane) -> (Plane, Plane) {
    let kernel = gaussian_kernel();
    let mu = blur(p, &kernel);
    let sq = Plane {
        h: p.h,
        w: p.w,
        v: p.v.iter().map(|v| v * v).collect(),
    };
    let mu_sq = blur(&sq, &kernel);
    let sigma: Vec<f64> = mu_sq
        .v
        .iter()
        .zip(&mu.v)
        .map(|(s, m)| (s - m * m).abs().sqrt())
        .collect();
    let coef =
        p.v.iter()
            .zip(&mu.v)
            .zip(&sigma)
            .map(|((v, m), s)| (v - m) / (s + 1.0))
            .collect();
    (
        Plane {
            h: p.h,
            w: p.w,
            v: coef,
        },
        Plane {
            h: p.h,
            w: p.w,
            v: sigma,
        },
    )
}

fn luminance(img: &Image, h: usize, w: usize) -> Plane {
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = img.pixel(y, x);
            v.push(255.0 * (0.299 * r + 0.587 * g + 0.114 * b));
        }
    }
    Plane { h, w, v }
}

fn half_scale(p: &Plane) -> Result<Plane> {
    let rgb: Vec<f64> = p.v.iter().flat_map(|v| [*v; CHANNELS]).collect();
    let (h, w) = (p.h / 2, p.w / 2);
    let out = resize_values(&rgb, p.h, p.w, h, w)?;
    Ok(Plane {
        h,
        w,
        v: out.chunks_exact(CHANNELS).map(|c| c[0]).collect(),
    })
}

fn patch_values(p: &Plane, y0: usize, x0: usize, size: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        v.extend_from_slice(&p.v[y * p.w + x0..y * p.w + x0 + size]);
    }
    v
}

fn patch_features(coef: &[f64], size: usize) -> Result<[f64; PER_SCALE]> {
    let mut f = [0.0; PER_SCALE];
    let base = aggd_fit(coef)?;
    f[0] = base.shape;
    f[1] = 0.5 * (base.left_scale + base.right_scale);
    // horizontal, vertical, main diagonal, anti-diagonal; circular within the patch
    let shifts: [(usize, usize); 4] = [(0, 1), (1, 0), (1, 1), (1, size - 1)];
    for (k, (dy, dx)) in shifts.into_iter().enumerate() {
        let prod: Vec<f64> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (y, x)))
            .map(|(y, x)| coef[y * size + x] * coef[((y + dy) % size) * size + (x + dx) % size])
            .collect();
        let a = aggd_fit(&prod)?;
        f[2 + 4 * k..6 + 4 * k].copy_from_slice(&[a.shape, a.mean, a.left_scale, a.right_scale]);
    }
    Ok(f)
}

fn extract(img: &Image, opts: &NiqeOptions, mode: PatchMode) -> Result<Vec<[f64; FEATURE_DIM]>> {
    opts.validate()?;
    let ps = opts.patch_size;
    let (rows, cols) = (img.height() / ps, img.width() / ps);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than one {ps}px NIQE patch",
            img.height(),
            img.width()
        )));
    }
    let full = luminance(img, rows * ps, cols * ps);
    let half = half_scale(&full)?;
    let (coef1, sigma1) = mscn(&full);
    let (coef2, _) = mscn(&half);

    let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let sharp = patch_values(&sigma1, r * ps, c * ps, ps)
                .iter()
                .sum::<f64>()
                / (ps * ps) as f64;
            cells.push((r, c, sharp));
        }
    }
    if mode == PatchMode::Fit {
        let peak = cells.iter().map(|c| c.2).fold(0.0, f64::max);
        cells.retain(|c| c.2 >= opts.sharpness_threshold * peak && c.2 > 0.0);
    }

    let mut out = Vec::with_capacity(cells.len());
    let mut last_err = None;
    for (r, c, _) in cells {
        let f1 = patch_features(&patch_values(&coef1, r * ps, c * ps, ps), ps);
        let f2 = patch_features(
            &patch_values(&coef2, r * ps / 2, c * ps / 2, ps / 2),
            ps / 2,
        );
        match (f1, f2) {
            (Ok(a), Ok(b)) => {
                let mut row = [0.0; FEATURE_DIM];
                row[..PER_SCALE].copy_from_slice(&a);
                row[PER_SCALE..].copy_from_slice(&b);
                out.push(row);
            }
            // flat patches have no distribution to fit; they are skipped
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
        }
    }
    if out.is_empty() {
        return Err(last_err
            .unwrap_or_else(|| Error::InsufficientData("no NIQE patch passed selection".into())));
    }
    Ok(out)
}

/// Score-mode features (every patch) with default options.
pub fn niqe_features(img: &Image) -> Result<Vec<[f64; FEATURE_DIM]>> {
    extract(img, &NiqeOptions::default(), PatchMode::Score)
}

pub fn niqe_features_with(img: &Image, opts: &NiqeOptions) -> Result<Vec<[f64; FEATURE_DIM]>> {
    extract(img, opts, PatchMode::Score)
}

fn mean_cov(rows: &[[f64; FEATURE_DIM]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; FEATURE_DIM];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; FEATURE_DIM * FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        for j in i..FEATURE_DIM {
            let s: f64 = rows
                .iter()
                .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                .sum();
            let v = s / (n - 1.0);
            cov[i * FEATURE_DIM + j] = v;
            cov[j * FEATURE_DIM + i] = v;
        }
    }
    (mean, cov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiqeMeta {
    pub corpus_size: usize,
    pub patches: usize,
    pub patch_size: usize,
    pub sharpness_threshold: f64,
    pub scales: usize,
}

/// Pristine-corpus feature Gaussian. Stored as JSON `{mean, cov, meta}` with `cov`
/// flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub meta: NiqeMeta,
}

impl NiqeModel {
    pub fn options(&self) -> NiqeOptions {
        NiqeOptions {
            patch_size: self.meta.patch_size,
            sharpness_threshold: self.meta.sharpness_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_DIM || self.cov.len() != FEATURE_DIM * FEATURE_DIM {
            return Err(Error::invalid(
                "NIQE model must hold 36 means and a 36x36 covariance",
            ));
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite NIQE model entry"));
        }
        for i in 0..FEATURE_DIM {
            for j in 0..i {
                let (a, b) = (self.cov[i * FEATURE_DIM + j], self.cov[j * FEATURE_DIM + i]);
                if (a - b).abs() > 1e-9 {
                    return Err(Error::invalid("NIQE covariance is not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// Distance between the model Gaussian and `(mean, cov)`, using the pseudo-inverse
    /// of the averaged covariance.
    pub fn distance(&self, mean: &[f64], cov: &[f64]) -> Result<f64> {
        if mean.len() != FEATURE_DIM || cov.len() != FEATURE_DIM * FEATURE_DIM {
            return Err(Error::invalid("feature Gaussian must be 36-dimensional"));
        }
        let avg = DMatrix::from_fn(FEATURE_DIM, FEATURE_DIM, |i, j| {
            let k = i * FEATURE_DIM + j;
            0.5 * (self.cov[k] + cov[k])
        });
        let d = DVector::from_iterator(FEATURE_DIM, self.mean.iter().zip(mean).map(|(a, b)| a - b));
        let eig = SymmetricEigen::new(avg);
        let proj = eig.eigenvectors.transpose() * &d;
        let q: f64 = proj
            .iter()
            .zip(eig.eigenvalues.iter())
            .filter(|(_, &l)| l > EIGEN_FLOOR)
            .map(|(p, l)| p * p / l)
            .sum();
        Ok(q.max(0.0).sqrt())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: NiqeModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Fits a model from pristine images. Images that yield no usable patch are skipped;
/// at least ten must contribute.
pub fn niqe_fit(images: &[Image], opts: &NiqeOptions) -> Result<NiqeModel> {
    opts.validate()?;
    let mut rows = Vec::new();
    let mut used = 0usize;
    for img in images {
        match extract(img, opts, PatchMode::Fit) {
            Ok(r) => {
                rows.extend(r);
                used += 1;
            }
            Err(e) => log::debug!("niqe_fit: skipping image: {e}"),
        }
    }
    if used < 10 {
        return Err(Error::InsufficientData(format!(
            "NIQE fit needs at least 10 usable images, got {used}"
        )));
    }
    if rows.len() < 2 {
        return Err(Error::InsufficientData(
            "NIQE fit needs at least 2 patches".into(),
        ));
    }
    let (mean, cov) = mean_cov(&rows);
    Ok(NiqeModel {
        mean,
        cov,
        meta: NiqeMeta {
            corpus_size: used,
            patches: rows.len(),
            patch_size: opts.patch_size,
            sharpness_threshold: opts.sharpness_threshold,
            scales: 2,
        },
    })
}

/// Lower is better.
pub fn niqe_score(model: &NiqeModel, img: &Image) -> Result<f64> {
    let rows = extract(img, &model.options(), PatchMode::Score)?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "NIQE scoring needs at least 2 patches, image yields {}",
            rows.len()
        )));
    }
    let (mean, cov) = mean_cov(&rows);
    model.distance(&mean, &cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn ratio_function_is_monotone() {
        let mut prev = 0.0;
        for k in 1..100 {
            let r = gg_ratio(0.2 + k as f64 * 0.098);
            assert!(r > prev);
            prev = r;
        }
        assert!((gg_ratio(2.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((invert_gg_ratio(2.0 / std::f64::consts::PI) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_samples_fit_shape_two() {
        let x = normals(7, 100_000);
        let p = aggd_fit(&x).unwrap();
        assert!((p.shape - 2.0).abs() <= 0.2, "{p:?}");
        assert!((p.left_scale / p.right_scale - 1.0).abs() <= 0.05, "{p:?}");
    }

    #[test]
    fn scale_equivariance() {
        let x = normals(8, 4_000);
        let k = 3.7;
        let a = aggd_fit(&x).unwrap();
        let b = aggd_fit(&x.iter().map(|v| v * k).collect::<Vec<_>>()).unwrap();
        assert!((a.shape - b.shape).abs() < 1e-6);
        assert!((b.left_scale - k * a.left_scale).abs() < 1e-9 * b.left_scale.abs().max(1.0));
        assert!((b.right_scale - k * a.right_scale).abs() < 1e-9 * b.right_scale.abs().max(1.0));
    }

    #[test]
    fn asymmetric_samples() {
        let x: Vec<f64> = normals(9, 4_000)
            .into_iter()
            .map(|v| if v < 0.0 { 2.0 * v } else { v })
            .collect();
        let p = aggd_fit(&x).unwrap();
        assert!(p.left_scale > p.right_scale);
        assert!(p.mean < 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            aggd_fit(&[0.0; 32]),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(
            aggd_fit(&[1.0; 4]),
            Err(Error::InsufficientData(_))
        ));
        let constant = Image::constant(200, 200, [0.4; 3]).unwrap();
        assert!(matches!(
            niqe_features(&constant),
            Err(Error::DegenerateDistribution(_))
        ));
        let small = Image::constant(50, 300, [0.4; 3]).unwrap();
        assert!(matches!(
            niqe_features(&small),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn textured(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..6).map(|_| rng.random_range(0.02..0.3)).collect();
        Image::from_fn(h, w, |y, x| {
            let (y, x) = (y as f64, x as f64);
            let v = 0.5 + 0.2 * (f[0] * x).sin() * (f[1] * y).cos() + 0.1 * (f[2] * (x + y)).sin();
            [
                v,
                (v + 0.1 * (f[3] * x).sin()).clamp(0.0, 1.0),
                (v * 0.8).clamp(0.0, 1.0),
            ]
        })
        .unwrap()
    }

    #[test]
    fn features_layout_and_determinism() {
        let img = textured(1, 200, 300);
        let a = niqe_features(&img).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a
            .iter()
            .all(|r| r.len() == FEATURE_DIM && r.iter().all(|v| v.is_finite())));
        let b = niqe_features(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_distance_identity() {
        let imgs: Vec<Image> = (0..10).map(|s| textured(s, 96, 96)).collect();
        let opts = NiqeOptions {
            patch_size: 32,
            ..Default::default()
        };
        let model = niqe_fit(&imgs, &opts).unwrap();
        model.validate().unwrap();
        assert_eq!(model.distance(&model.mean, &model.cov).unwrap(), 0.0);
        let score = niqe_score(&model, &textured(99, 96, 96)).unwrap();
        assert!(score >= 0.0 && score.is_finite());
    }

    #[test]
    fn fit_needs_ten_images() {
        let imgs: Vec<Image> = (0..9).map(|s| textured(s, 64, 64)).collect();
        let opts = NiqeOptions {
            patch_size: 32,
            ..Default::default()
        };
        assert!(matches!(
            niqe_fit(&imgs, &opts),
            Err(Error::InsufficientData(_))
        ));
    }
}
