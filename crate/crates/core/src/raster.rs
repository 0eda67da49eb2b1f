//! Image and mask grids, the exposure/obstruction corruptions, moment-based
//! ellipse fitting and mask overlap.
//!
//! Pixel `(x, y)` has its center at integer coordinates `(x, y)`; `x` grows to
//! the right and `y` grows downward.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::{Error, Result};

/// Grayscale image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        GrayImage { width, height, data: vec![fill.clamp(0.0, 1.0); width * height] }
    }

    /// Builds an image from row-major intensities, clamping each to `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(GrayImage { width, height, data })
    }

    /// Builds an image from 8-bit samples, dividing by 255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::LengthMismatch(bytes.len(), width * height));
        }
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(GrayImage { width, height, data })
    }

    /// Quantizes to 8 bits with rounding.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Membership where intensity is at least `threshold`.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, data: self.data.iter().map(|&v| v >= threshold).collect() }
    }

    /// Separable Gaussian blur with clamped borders.
    pub fn blurred(&self, sigma: f64) -> GrayImage {
        let data = gaussian_blur(&self.data, self.width, self.height, sigma);
        GrayImage { width: self.width, height: self.height, data }
    }
}

/// Boolean pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask { width, height, data: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask { width, height, data: vec![true; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        Ok(BinaryMask { width, height, data })
    }

    /// Mask of pixels whose center satisfies `pred(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut pred: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(pred(x, y));
            }
        }
        BinaryMask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Membership test that treats out-of-frame coordinates as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Coordinates of member pixels in row-major order.
    pub fn members(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % w, i / w))
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`, `None` when empty.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.members() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    /// Mean member coordinate, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.members() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        check_same_frame(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { width: self.width, height: self.height, data })
    }

    /// Left-right flip about the vertical frame center.
    pub fn mirror_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Shifts the mask by an integer offset; pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get_signed(x as i64 - dx, y as i64 - dy))
    }

    /// 90 degree clockwise rotation (as seen with `y` pointing down).
    pub fn rotate90(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        // new frame is h wide and w tall; new (x', y') = (h - 1 - y, x)
        BinaryMask::from_fn(h, w, |xn, yn| self.get(yn, h - 1 - xn))
    }

    /// Image with members at 1.0 and the rest at 0.0.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

pub(crate) fn check_same_frame(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Ellipse in pixel coordinates; `rotation` is the angle of the major axis
/// from the +x axis, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
}

impl Ellipse {
    pub fn new(center: (f64, f64), semi_major: f64, semi_minor: f64, rotation: f64) -> Result<Self> {
        if !(semi_minor > 0.0) || semi_major < semi_minor || !semi_major.is_finite() {
            return Err(Error::param("ellipse", "need semi_major >= semi_minor > 0"));
        }
        Ok(Ellipse { center, semi_major, semi_minor, rotation })
    }

    /// Implicit value: `< 1` inside, `1` on the boundary.
    pub fn implicit(&self, x: f64, y: f64) -> f64 {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.implicit(x, y) <= 1.0
    }

    pub fn area(&self) -> f64 {
        core::f64::consts::PI * self.semi_major * self.semi_minor
    }

    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64, y as f64))
    }
}

/// Power-law exposure change `I^gamma` on normalized intensities.
pub fn gamma_transform(img: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param("gamma", "must be positive and finite"));
    }
    let data = img.data.iter().map(|&v| v.powf(gamma).clamp(0.0, 1.0)).collect();
    Ok(GrayImage { width: img.width, height: img.height, data })
}

/// Adds zero-mean Gaussian noise. `sigma` is on the 8-bit scale (0..=255).
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", "must be non-negative and finite"));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma / 255.0).map_err(|_| Error::param("sigma", "invalid"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data.iter().map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Ok(GrayImage { width: img.width, height: img.height, data })
}

/// Moment-matching ellipse: centroid plus axes from the second central
/// moments (a filled ellipse with semi-axis `a` has variance `a^2 / 4`).
pub fn fit_ellipse(mask: &BinaryMask) -> Result<Ellipse> {
    let (cx, cy) = mask.centroid().ok_or(Error::EmptyMask("ellipse mask"))?;
    let (mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in mask.members() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
        n += 1.0;
    }
    let (mu20, mu02, mu11) = (sxx / n, syy / n, sxy / n);
    let half_trace = 0.5 * (mu20 + mu02);
    let disc = (0.25 * (mu20 - mu02) * (mu20 - mu02) + mu11 * mu11).sqrt();
    let (l_major, l_minor) = (half_trace + disc, half_trace - disc);
    if l_minor <= 1e-9 * l_major.max(1.0) {
        return Err(Error::DegenerateFit);
    }
    let rotation = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);
    Ok(Ellipse { center: (cx, cy), semi_major: 2.0 * l_major.sqrt(), semi_minor: 2.0 * l_minor.sqrt(), rotation })
}

/// Axis divisor range for the simulated lung obstruction.
pub const OBSTRUCTION_DIVISOR_RANGE: (f64, f64) = (2.0, 4.0);

/// Occluder intensity painted over the shrunken thorax ellipse.
pub const OCCLUDER_INTENSITY: f64 = 1.0;

/// Paints a bright occluder over the thorax ellipse shrunk by divisors drawn
/// uniformly from [`OBSTRUCTION_DIVISOR_RANGE`].
pub fn obstruct(img: &GrayImage, thorax: &Ellipse, seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = OBSTRUCTION_DIVISOR_RANGE;
    let d_major = rng.random_range(lo..=hi);
    let d_minor = rng.random_range(lo..=hi);
    obstruct_with_divisors(img, thorax, d_major, d_minor)
}

/// [`obstruct`] with explicit axis divisors.
pub fn obstruct_with_divisors(
    img: &GrayImage,
    thorax: &Ellipse,
    major_divisor: f64,
    minor_divisor: f64,
) -> Result<GrayImage> {
    if !(major_divisor > 0.0) || !(minor_divisor > 0.0) {
        return Err(Error::param("divisor", "must be positive"));
    }
    let shrunk = Ellipse {
        center: thorax.center,
        semi_major: thorax.semi_major / major_divisor,
        semi_minor: thorax.semi_minor / minor_divisor,
        rotation: thorax.rotation,
    };
    let mut out = img.clone();
    let mut painted = 0usize;
    for y in 0..img.height {
        for x in 0..img.width {
            if shrunk.contains(x as f64, y as f64) {
                out.data[y * img.width + x] = OCCLUDER_INTENSITY;
                painted += 1;
            }
        }
    }
    if painted == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(out)
}

/// Intersection over union; two empty masks score 1.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_frame(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data.iter().zip(&b.data) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of a row-major grid, replicating edge values.
pub(crate) fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) || width == 0 || height == 0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                acc += kv * row[clamp(x as i64 + j as i64 - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (j, &kv) in k.iter().enumerate() {
            let src = clamp(y as i64 + j as i64 - r, height) * width;
            let dst = y * width;
            for x in 0..width {
                out[dst + x] += kv * tmp[src + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        let data = (0..w * h).map(|i| i as f64 / (w * h - 1) as f64).collect();
        GrayImage::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn u8_normalization() {
        let img = GrayImage::from_u8(3, 1, &[255, 0, 128]).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(1, 0), 0.0);
        assert!((img.get(2, 0) - 128.0 / 255.0).abs() < 1e-15);
        assert!((img.get(2, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn threshold_masks() {
        let black = GrayImage::new(4, 4, 0.0);
        assert!(black.threshold(0.5).is_empty());
        let white = GrayImage::new(4, 4, 1.0);
        assert_eq!(white.threshold(0.5).count(), 16);
        let img = GrayImage::from_u8(2, 2, &[0, 255, 255, 0]).unwrap();
        let m = img.threshold(0.5);
        assert_eq!(m.as_slice(), &[false, true, true, false]);
    }

    #[test]
    fn gamma_examples() {
        let img = ramp(8, 8);
        assert_eq!(gamma_transform(&img, 1.0).unwrap(), img);
        let half = GrayImage::new(1, 1, 0.5);
        assert!((gamma_transform(&half, 2.0).unwrap().get(0, 0) - 0.25).abs() < 1e-15);
        assert!(gamma_transform(&img, 0.0).is_err());
        assert!(gamma_transform(&img, -1.0).is_err());
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let img = ramp(16, 16);
        assert_eq!(add_gaussian_noise(&img, 0.0, 3).unwrap(), img);
        let a = add_gaussian_noise(&img, 5.0, 11).unwrap();
        let b = add_gaussian_noise(&img, 5.0, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_gaussian_noise(&img, 5.0, 12).unwrap());
        assert!(add_gaussian_noise(&img, -1.0, 0).is_err());
    }

    #[test]
    fn noise_statistics_on_constant_field() {
        let img = GrayImage::new(512, 512, 0.5);
        let out = add_gaussian_noise(&img, 10.0, 2024).unwrap();
        let diffs: Vec<f64> = out.pixels().iter().map(|v| v - 0.5).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.5 / 255.0, "mean {mean}");
        let sd = var.sqrt();
        assert!((sd - 10.0 / 255.0).abs() <= 0.05 * 10.0 / 255.0, "sd {sd}");
    }

    #[test]
    fn ellipse_fit_axis_aligned() {
        let truth = Ellipse::new((256.0, 200.0), 100.0, 50.0, 0.0).unwrap();
        let fit = fit_ellipse(&truth.rasterize(512, 400)).unwrap();
        assert!((fit.semi_major - 100.0).abs() <= 2.0, "{fit:?}");
        assert!((fit.semi_minor - 50.0).abs() <= 2.0, "{fit:?}");
        assert!(fit.rotation.abs() <= 0.05);
        assert!((fit.center.0 - 256.0).abs() < 0.5 && (fit.center.1 - 200.0).abs() < 0.5);
    }

    #[test]
    fn ellipse_fit_disk_and_rotation_equivariance() {
        let disk = Ellipse::new((60.0, 60.0), 40.0, 40.0, 0.0).unwrap().rasterize(121, 121);
        let fit = fit_ellipse(&disk).unwrap();
        assert!((fit.semi_major - 40.0).abs() <= 2.0 && (fit.semi_minor - 40.0).abs() <= 2.0);

        let tilted = Ellipse::new((100.0, 80.0), 60.0, 25.0, 0.3).unwrap().rasterize(200, 160);
        let a = fit_ellipse(&tilted).unwrap();
        let b = fit_ellipse(&tilted.rotate90()).unwrap();
        let diff = (b.rotation - a.rotation).rem_euclid(core::f64::consts::PI);
        assert!((diff - core::f64::consts::FRAC_PI_2).abs() < 1e-6, "{diff}");
    }

    #[test]
    fn ellipse_fit_errors() {
        assert_eq!(fit_ellipse(&BinaryMask::new(5, 5)), Err(Error::EmptyMask("ellipse mask")));
        let line = BinaryMask::from_fn(20, 5, |_, y| y == 2);
        assert_eq!(fit_ellipse(&line), Err(Error::DegenerateFit));
    }

    #[test]
    fn obstruction_area_with_fixed_divisors() {
        let img = GrayImage::new(512, 512, 0.0);
        let thorax = Ellipse::new((256.0, 256.0), 200.0, 120.0, 0.0).unwrap();
        let out = obstruct_with_divisors(&img, &thorax, 2.0, 2.0).unwrap();
        let painted = out.pixels().iter().filter(|&&v| v == 1.0).count() as f64;
        let analytic = core::f64::consts::PI * 100.0 * 60.0;
        assert!((painted - analytic).abs() / analytic <= 0.02, "{painted} vs {analytic}");
    }

    #[test]
    fn obstruction_is_seeded_and_reports_empty_overlap() {
        let img = ramp(128, 128);
        let thorax = Ellipse::new((64.0, 64.0), 50.0, 30.0, 0.2).unwrap();
        assert_eq!(obstruct(&img, &thorax, 5).unwrap(), obstruct(&img, &thorax, 5).unwrap());
        let outside = Ellipse::new((-500.0, -500.0), 50.0, 30.0, 0.0).unwrap();
        assert_eq!(obstruct(&img, &outside, 5), Err(Error::EmptyOverlap));
    }

    #[test]
    fn iou_examples() {
        let full = BinaryMask::full(10, 10);
        let left = BinaryMask::from_fn(10, 10, |x, _| x < 5);
        let right = BinaryMask::from_fn(10, 10, |x, _| x >= 5);
        assert_eq!(mask_iou(&left, &left).unwrap(), 1.0);
        assert_eq!(mask_iou(&left, &right).unwrap(), 0.0);
        assert_eq!(mask_iou(&left, &full).unwrap(), 0.5);
        assert_eq!(mask_iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 3)).unwrap(), 1.0);
        assert!(mask_iou(&left, &BinaryMask::new(9, 10)).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let data = vec![0.7; 30 * 20];
        let out = gaussian_blur(&data, 30, 20, 3.0);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
