//! Synthetic thorax phantoms with analytically known hemithoraces.
//!
//! Geometry is built in a body frame centered on the thorax: `u` runs
//! laterally (positive to the image right) and `v` runs down the spine, which
//! may be tilted. Ribs are parabolic bands `v = V_i + c u^2` clipped to the
//! thorax ellipse, joined by a band along the inside of the ellipse that
//! stands in for the overlapping rib shafts of the thoracic wall. Everything
//! is mirrored across the spine and an optional asymmetry then deforms one
//! side.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::hemithorax::{split_by_spine, HemithoraxPair, Side, SpineLine};
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::raster::{add_gaussian_noise, BinaryMask, Ellipse, GrayImage};
use crate::{Error, Result};

pub const RIB_INTENSITY: f64 = 0.85;
pub const LUNG_INTENSITY: f64 = 0.2;
pub const BACKGROUND_INTENSITY: f64 = 0.55;
/// Blur applied to the rendered radiograph, in pixels.
pub const RENDER_BLUR: f64 = 1.0;
/// Noise added to the rendered radiograph, on the 8-bit scale.
pub const RENDER_NOISE: f64 = 2.0;

/// Deformation applied to one side of an otherwise symmetric phantom.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Asymmetry {
    #[default]
    None,
    /// Lateral extent of `side` multiplied by `factor`.
    Scale { side: Side, factor: f64 },
    /// `side` slid down the spine by `tan(degrees) * |u|`.
    Shear { side: Side, degrees: f64 },
    /// The caudal `fraction` of the thorax height removed on `side`.
    Truncate { side: Side, fraction: f64 },
}

impl Asymmetry {
    pub fn label(&self) -> Label {
        Label::from_positive(*self != Asymmetry::None)
    }

    fn side(&self) -> Option<Side> {
        match *self {
            Asymmetry::None => None,
            Asymmetry::Scale { side, .. } | Asymmetry::Shear { side, .. } | Asymmetry::Truncate { side, .. } => {
                Some(side)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Asymmetry::None => Ok(()),
            Asymmetry::Scale { factor, .. } if !(factor > 0.0 && factor <= 2.0) => {
                Err(Error::InvalidPhantom("scale factor must lie in (0, 2]"))
            }
            Asymmetry::Shear { degrees, .. } if !(degrees.abs() < 60.0) => {
                Err(Error::InvalidPhantom("shear angle must lie in (-60, 60) degrees"))
            }
            Asymmetry::Truncate { fraction, .. } if !(0.0..0.5).contains(&fraction) => {
                Err(Error::InvalidPhantom("truncation fraction must lie in [0, 0.5)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    /// Thorax center in pixels.
    pub center: (f64, f64),
    /// Lateral semi-axis of the thorax.
    pub half_width: f64,
    /// Cranio-caudal semi-axis of the thorax.
    pub half_height: f64,
    /// Spine angle from vertical, radians.
    pub tilt: f64,
    pub n_rib_pairs: usize,
    pub rib_thickness: f64,
    pub spine_width: f64,
    #[serde(default)]
    pub asymmetry: Asymmetry,
    #[serde(default)]
    pub noise_seed: u64,
}

/// Margin kept between the thorax and the frame edge.
const FRAME_MARGIN: f64 = 4.0;
/// How far the spine extends past the thorax, as a fraction of `half_height`.
const SPINE_OVERHANG: f64 = 0.08;

impl PhantomSpec {
    /// Upright symmetric thorax centered in the frame.
    pub fn symmetric(width: usize, height: usize) -> Self {
        let s = width.min(height) as f64;
        PhantomSpec {
            width,
            height,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            half_width: 0.33 * s,
            half_height: 0.37 * s,
            tilt: 0.0,
            n_rib_pairs: 10,
            rib_thickness: 0.022 * s,
            spine_width: 0.045 * s,
            asymmetry: Asymmetry::None,
            noise_seed: 0,
        }
    }

    pub fn with_asymmetry(mut self, asymmetry: Asymmetry) -> Self {
        self.asymmetry = asymmetry;
        self
    }

    pub fn thorax_ellipse(&self) -> Ellipse {
        let (a, b) = (self.half_width, self.half_height);
        if a >= b {
            Ellipse { center: self.center, semi_major: a, semi_minor: b, rotation: -self.tilt }
        } else {
            Ellipse {
                center: self.center,
                semi_major: b,
                semi_minor: a,
                rotation: core::f64::consts::FRAC_PI_2 - self.tilt,
            }
        }
    }

    pub fn spine_line(&self) -> SpineLine {
        let frame = Frame::new(self);
        let reach = self.half_height * (1.0 + SPINE_OVERHANG);
        let (_, y0) = frame.to_pixel(0.0, -reach);
        let (_, y1) = frame.to_pixel(0.0, reach);
        SpineLine {
            point: self.center,
            direction: (self.tilt.sin(), self.tilt.cos()),
            extent: (y0.min(y1), y0.max(y1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidPhantom("frame must be at least 32x32"));
        }
        if !(self.tilt.abs() <= 0.5) {
            return Err(Error::InvalidPhantom("tilt must be within 0.5 rad of vertical"));
        }
        if self.n_rib_pairs < 1 {
            return Err(Error::InvalidPhantom("need at least one rib pair"));
        }
        if !(self.rib_thickness > 0.0) || !(self.spine_width > 0.0) {
            return Err(Error::InvalidPhantom("rib thickness and spine width must be positive"));
        }
        if !(self.half_height > 0.0) || !(self.half_width > self.spine_width / 2.0 + self.rib_thickness) {
            return Err(Error::InvalidPhantom("thorax too narrow for spine and ribs"));
        }
        self.asymmetry.validate()?;
        // the deformed outline and the spine must stay inside the frame
        let frame = Frame::new(self);
        let (w, h) = (self.width as f64 - 1.0 - FRAME_MARGIN, self.height as f64 - 1.0 - FRAME_MARGIN);
        let inside = |(x, y): (f64, f64)| x >= FRAME_MARGIN && y >= FRAME_MARGIN && x <= w && y <= h;
        for k in 0..720 {
            let t = k as f64 / 720.0 * core::f64::consts::TAU;
            let (u, v) = (self.half_width * t.cos(), self.half_height * t.sin());
            if let Some((du, dv)) = self.deform(u, v) {
                if !inside(frame.to_pixel(du, dv)) {
                    return Err(Error::InvalidPhantom("thorax leaves the frame"));
                }
            }
        }
        let reach = self.half_height * (1.0 + SPINE_OVERHANG);
        if !inside(frame.to_pixel(0.0, -reach)) || !inside(frame.to_pixel(0.0, reach)) {
            return Err(Error::InvalidPhantom("spine leaves the frame"));
        }
        Ok(())
    }

    /// Forward deformation of a body-frame point; `None` if it is removed.
    fn deform(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        if !self.on_deformed_side(u) {
            return Some((u, v));
        }
        match self.asymmetry {
            Asymmetry::None => Some((u, v)),
            Asymmetry::Scale { factor, .. } => Some((u * factor, v)),
            Asymmetry::Shear { degrees, .. } => Some((u, v + deg_tan(degrees) * u.abs())),
            Asymmetry::Truncate { fraction, .. } => (v <= self.cut(fraction)).then_some((u, v)),
        }
    }

    /// Inverse deformation; `None` where the deformed side has no tissue.
    fn undeform(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        if !self.on_deformed_side(u) {
            return Some((u, v));
        }
        match self.asymmetry {
            Asymmetry::None => Some((u, v)),
            Asymmetry::Scale { factor, .. } => Some((u / factor, v)),
            Asymmetry::Shear { degrees, .. } => Some((u, v - deg_tan(degrees) * u.abs())),
            Asymmetry::Truncate { fraction, .. } => (v <= self.cut(fraction)).then_some((u, v)),
        }
    }

    fn on_deformed_side(&self, u: f64) -> bool {
        match self.asymmetry.side() {
            Some(Side::Left) => u < 0.0,
            Some(Side::Right) => u > 0.0,
            None => false,
        }
    }

    fn cut(&self, fraction: f64) -> f64 {
        self.half_height * (1.0 - 2.0 * fraction)
    }

    fn in_thorax(&self, u: f64, v: f64) -> bool {
        let (a, b) = (self.half_width, self.half_height);
        (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
    }

    /// Rib rows at the spine, top to bottom, and the shared curvature.
    fn rib_layout(&self) -> (Vec<f64>, f64) {
        let b = self.half_height;
        let n = self.n_rib_pairs;
        let rows = if n == 1 {
            alloc::vec![-0.3 * b]
        } else {
            (0..n).map(|i| -0.82 * b + 1.5 * b * i as f64 / (n - 1) as f64).collect()
        };
        (rows, 0.3 * b / (self.half_width * self.half_width))
    }

    fn in_rib(&self, u: f64, v: f64, rows: &[f64], curvature: f64) -> bool {
        if u.abs() < self.spine_width / 2.0 || !self.in_thorax(u, v) {
            return false;
        }
        let slope = 2.0 * curvature * u;
        let norm = (1.0 + slope * slope).sqrt();
        let half = self.rib_thickness / 2.0;
        self.in_wall(u, v) || rows.iter().any(|&r| (v - r - curvature * u * u).abs() / norm <= half)
    }

    /// Along the caudal edge left by a truncation, on the truncated side.
    fn at_cut(&self, u: f64, v: f64) -> bool {
        match self.asymmetry {
            Asymmetry::Truncate { fraction, .. } => {
                self.on_deformed_side(u)
                    && u.abs() >= self.spine_width / 2.0
                    && v > self.cut(fraction) - self.rib_thickness
            }
            _ => false,
        }
    }

    /// Within `rib_thickness` of the thorax outline, to first order.
    fn in_wall(&self, u: f64, v: f64) -> bool {
        let (a2, b2) = (self.half_width * self.half_width, self.half_height * self.half_height);
        let f = u * u / a2 + v * v / b2;
        let grad = 2.0 * (u * u / (a2 * a2) + v * v / (b2 * b2)).sqrt();
        f <= 1.0 && 1.0 - f <= self.rib_thickness * grad
    }
}

fn deg_tan(degrees: f64) -> f64 {
    degrees.to_radians().tan()
}

/// Body frame: origin at the thorax center, `u` to the image right, `v` down
/// the spine.
struct Frame {
    center: (f64, f64),
    lateral: (f64, f64),
    axial: (f64, f64),
}

impl Frame {
    fn new(spec: &PhantomSpec) -> Self {
        let (s, c) = (spec.tilt.sin(), spec.tilt.cos());
        Frame { center: spec.center, lateral: (c, -s), axial: (s, c) }
    }

    fn to_body(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        (dx * self.lateral.0 + dy * self.lateral.1, dx * self.axial.0 + dy * self.axial.1)
    }

    fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        (self.center.0 + u * self.lateral.0 + v * self.axial.0, self.center.1 + u * self.lateral.1 + v * self.axial.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub radiograph: GrayImage,
    pub ribs: BinaryMask,
    pub spine: BinaryMask,
    pub truth: HemithoraxPair,
    pub label: Label,
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let frame = Frame::new(spec);
    let (rows, curvature) = spec.rib_layout();
    let spine_line = spec.spine_line();
    let reach = spec.half_height * (1.0 + SPINE_OVERHANG);

    let mut ribs = BinaryMask::new(w, h);
    let mut spine = BinaryMask::new(w, h);
    let mut thorax = BinaryMask::new(w, h);
    let mut radiograph = GrayImage::new(w, h, BACKGROUND_INTENSITY);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = frame.to_body(x as f64, y as f64);
            let in_spine = u.abs() <= spec.spine_width / 2.0 && v.abs() <= reach;
            let (in_thorax, in_rib) = match spec.undeform(u, v) {
                Some((bu, bv)) => {
                    let in_thorax = spec.in_thorax(bu, bv);
                    (in_thorax, spec.in_rib(bu, bv, &rows, curvature) || (in_thorax && spec.at_cut(bu, bv)))
                }
                None => (false, false),
            };
            thorax.set(x, y, in_thorax);
            ribs.set(x, y, in_rib);
            spine.set(x, y, in_spine);
            let value = if in_rib || in_spine {
                RIB_INTENSITY
            } else if in_thorax {
                LUNG_INTENSITY
            } else {
                BACKGROUND_INTENSITY
            };
            radiograph.set(x, y, value);
        }
    }
    let radiograph = add_gaussian_noise(&radiograph.blurred(RENDER_BLUR), RENDER_NOISE, spec.noise_seed)?;
    Ok(Phantom { radiograph, ribs, spine, truth: split_by_spine(&thorax, &spine_line), label: spec.asymmetry.label() })
}

/// Removes the middle third of the columns spanned by the rib mask.
pub fn erase_middle_third(ribs: &BinaryMask) -> BinaryMask {
    let Some((x0, _, x1, _)) = ribs.bounding_box() else {
        return ribs.clone();
    };
    let span = (x1 - x0 + 1) as f64;
    let lo = x0 as f64 + span / 3.0;
    let hi = x0 as f64 + 2.0 * span / 3.0;
    BinaryMask::from_fn(ribs.width(), ribs.height(), |x, y| ribs.get(x, y) && !((x as f64) >= lo && (x as f64) < hi))
}

/// Sampling ranges for corpus phantoms. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomRanges {
    pub frame: (usize, usize),
    pub half_width: (f64, f64),
    pub half_height: (f64, f64),
    pub n_rib_pairs: (usize, usize),
    pub rib_thickness: (f64, f64),
    pub spine_width: (f64, f64),
    pub tilt_degrees: (f64, f64),
    pub scale_factor: (f64, f64),
    pub shear_degrees: (f64, f64),
    pub truncate_fraction: (f64, f64),
}

impl Default for PhantomRanges {
    fn default() -> Self {
        PhantomRanges {
            frame: (512, 512),
            half_width: (140.0, 190.0),
            half_height: (160.0, 210.0),
            n_rib_pairs: (8, 11),
            rib_thickness: (8.0, 14.0),
            spine_width: (18.0, 28.0),
            tilt_degrees: (-3.0, 3.0),
            scale_factor: (0.5, 0.85),
            shear_degrees: (5.0, 15.0),
            truncate_fraction: (0.15, 0.4),
        }
    }
}

/// Attempts per row before a sampled spec is reported invalid.
const MAX_SAMPLE_ATTEMPTS: usize = 64;

impl PhantomRanges {
    /// One spec with the given label; resamples until it fits the frame.
    pub fn sample(&self, asymmetric: bool, rng: &mut impl Rng) -> Result<PhantomSpec> {
        let (w, h) = self.frame;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let asymmetry = if asymmetric { self.sample_asymmetry(rng) } else { Asymmetry::None };
            let jitter = 0.02 * w.min(h) as f64;
            let spec = PhantomSpec {
                width: w,
                height: h,
                center: (
                    (w as f64 - 1.0) / 2.0 + rng.random_range(-jitter..=jitter),
                    (h as f64 - 1.0) / 2.0 + rng.random_range(-jitter..=jitter),
                ),
                half_width: uniform(rng, self.half_width),
                half_height: uniform(rng, self.half_height),
                tilt: uniform(rng, self.tilt_degrees).to_radians(),
                n_rib_pairs: rng.random_range(self.n_rib_pairs.0..=self.n_rib_pairs.1),
                rib_thickness: uniform(rng, self.rib_thickness),
                spine_width: uniform(rng, self.spine_width),
                asymmetry,
                noise_seed: rng.random(),
            };
            if spec.validate().is_ok() {
                return Ok(spec);
            }
        }
        Err(Error::InvalidPhantom("ranges do not fit the frame"))
    }

    fn sample_asymmetry(&self, rng: &mut impl Rng) -> Asymmetry {
        let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
        match rng.random_range(0..3) {
            0 => Asymmetry::Scale { side, factor: uniform(rng, self.scale_factor) },
            1 => Asymmetry::Shear { side, degrees: uniform(rng, self.shear_degrees) },
            _ => Asymmetry::Truncate { side, fraction: uniform(rng, self.truncate_fraction) },
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// One planned corpus row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub spec: PhantomSpec,
}

pub const MIN_CORPUS_SIZE: usize = 10;

/// Specs for an `n`-row corpus with `round(n * asym_fraction)` asymmetric
/// rows at shuffled positions. Row `i` draws from its own stream of `seed`,
/// so a row's spec does not depend on `n`.
pub fn plan_corpus(n: usize, asym_fraction: f64, seed: u64, ranges: &PhantomRanges) -> Result<Vec<CorpusEntry>> {
    if n < MIN_CORPUS_SIZE {
        return Err(Error::param("n", format!("corpus needs at least {MIN_CORPUS_SIZE} rows")));
    }
    if !(0.0..=1.0).contains(&asym_fraction) {
        return Err(Error::param("asym_fraction", "must lie in [0, 1]"));
    }
    let n_asym = (n as f64 * asym_fraction).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < n_asym).collect();
    flags.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    flags
        .iter()
        .enumerate()
        .map(|(i, &asym)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            Ok(CorpusEntry { id: format!("ph{i:04}"), spec: ranges.sample(asym, &mut rng)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;
    use crate::hemithorax::mirror_across;
    use crate::raster::mask_iou;

    fn small() -> PhantomSpec {
        PhantomSpec::symmetric(256, 256)
    }

    #[test]
    fn symmetric_truth_features() {
        for tilt in [0.0, 0.03, -0.05] {
            let p = generate(&PhantomSpec { tilt, ..small() }).unwrap();
            let fv = extract_features(&p.truth).unwrap();
            for (k, v) in fv.to_array().iter().enumerate() {
                assert!(*v >= 0.97, "tilt {tilt} feature {k} = {v}");
            }
            let m = mirror_across(&p.truth.left, &p.truth.spine);
            assert!(mask_iou(&m, &p.truth.right).unwrap() >= 0.98);
            assert_eq!(p.label, Label::Symmetric);
        }
    }

    #[test]
    fn scale_area_ratio() {
        let spec = small().with_asymmetry(Asymmetry::Scale { side: Side::Left, factor: 0.6 });
        let p = generate(&spec).unwrap();
        let fv = extract_features(&p.truth).unwrap();
        assert!((fv.sim_area - 0.6).abs() <= 0.03, "{}", fv.sim_area);
        assert_eq!(p.label, Label::Asymmetric);
    }

    #[test]
    fn deterministic() {
        let spec = PhantomSpec { noise_seed: 5, ..small() }
            .with_asymmetry(Asymmetry::Shear { side: Side::Right, degrees: 10.0 });
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn ribs_on_both_sides_and_inside_thorax() {
        for n in [1, 4, 10] {
            let spec = PhantomSpec { n_rib_pairs: n, ..small() };
            let p = generate(&spec).unwrap();
            let sides = split_by_spine(&p.ribs, &p.truth.spine);
            assert!(!sides.left.is_empty() && !sides.right.is_empty());
            let thorax = p.truth.left.union(&p.truth.right).unwrap();
            // ribs never touch the spine line, so the split thorax covers them
            assert!(p.ribs.difference(&thorax).unwrap().is_empty());
        }
    }

    #[test]
    fn truncation_removes_caudal_part() {
        let spec = small().with_asymmetry(Asymmetry::Truncate { side: Side::Right, fraction: 0.3 });
        let p = generate(&spec).unwrap();
        let (_, _, _, bottom_r) = p.truth.right.bounding_box().unwrap();
        let (_, _, _, bottom_l) = p.truth.left.bounding_box().unwrap();
        assert!(bottom_r + 40 < bottom_l);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&PhantomSpec { n_rib_pairs: 0, ..small() }).is_err());
        assert!(generate(&PhantomSpec { half_width: 200.0, ..small() }).is_err());
        let bad = small().with_asymmetry(Asymmetry::Truncate { side: Side::Left, fraction: 0.7 });
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn corpus_plan_counts() {
        let plan = plan_corpus(100, 0.3, 7, &PhantomRanges::default()).unwrap();
        assert_eq!(plan.len(), 100);
        let asym = plan.iter().filter(|e| e.spec.asymmetry != Asymmetry::None).count();
        assert_eq!(asym, 30);
        assert_eq!(plan, plan_corpus(100, 0.3, 7, &PhantomRanges::default()).unwrap());
        assert!(plan_corpus(9, 0.3, 7, &PhantomRanges::default()).is_err());
        for e in &plan {
            e.spec.validate().unwrap();
        }
    }

    #[test]
    fn middle_third_erasure() {
        let ribs = BinaryMask::from_fn(30, 5, |x, _| (3..27).contains(&x));
        let e = erase_middle_third(&ribs);
        // span 24 starting at 3: columns 11..19 go
        assert!(e.get(10, 0) && !e.get(11, 0) && !e.get(18, 0) && e.get(19, 0));
    }
}
