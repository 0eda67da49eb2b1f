//! Spine midline fitting and the left/right hemithorax split.

use core::fmt;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::raster::{check_same_frame, BinaryMask};
use crate::snake::{self, SnakeParams, DEFAULT_INIT_MARGIN};
use crate::{Error, Result};

/// Minimum number of occupied rows for a spine fit.
pub const MIN_SPINE_ROWS: usize = 20;

/// Image-space side: `Left` is the smaller-`x` side of a vertical spine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Straight symmetry axis through the spine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpineLine {
    pub point: (f64, f64),
    /// Unit vector pointing down the image (`direction.1 > 0`).
    pub direction: (f64, f64),
    /// Occupied row range `(y_min, y_max)`.
    pub extent: (f64, f64),
}

impl SpineLine {
    /// Line through `point` at `tilt` radians from vertical.
    pub fn new(point: (f64, f64), tilt: f64, extent: (f64, f64)) -> Result<Self> {
        let direction = (tilt.sin(), tilt.cos());
        if direction.1 < core::f64::consts::FRAC_1_SQRT_2 - 1e-12 {
            return Err(Error::SpineNotVertical);
        }
        Ok(SpineLine { point, direction, extent })
    }

    pub fn vertical(x: f64, extent: (f64, f64)) -> Self {
        SpineLine { point: (x, extent.0), direction: (0.0, 1.0), extent }
    }

    /// Signed offset of `(x, y)`: negative on the left, positive on the right.
    /// Its magnitude is the perpendicular distance.
    #[inline]
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.point.0) * self.direction.1 - (y - self.point.1) * self.direction.0
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.signed_distance(x, y).abs()
    }

    /// `x` coordinate of the line at row `y`.
    pub fn x_at(&self, y: f64) -> f64 {
        self.point.0 + self.direction.0 / self.direction.1 * (y - self.point.1)
    }

    pub fn side_of(&self, x: f64, y: f64) -> Option<Side> {
        let s = self.signed_distance(x, y);
        if s.abs() <= ON_LINE_EPS {
            None
        } else if s < 0.0 {
            Some(Side::Left)
        } else {
            Some(Side::Right)
        }
    }

    /// Reflection of a point across the line.
    pub fn reflect(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.signed_distance(x, y);
        // unit normal pointing to the right side
        let (nx, ny) = (self.direction.1, -self.direction.0);
        (x - 2.0 * s * nx, y - 2.0 * s * ny)
    }

    /// Same line shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> SpineLine {
        SpineLine {
            point: (self.point.0 + dx, self.point.1 + dy),
            direction: self.direction,
            extent: (self.extent.0 + dy, self.extent.1 + dy),
        }
    }
}

const ON_LINE_EPS: f64 = 1e-9;

/// Left and right hemithorax masks with the axis that separated them.
#[derive(Debug, Clone, PartialEq)]
pub struct HemithoraxPair {
    pub left: BinaryMask,
    pub right: BinaryMask,
    pub spine: SpineLine,
}

impl HemithoraxPair {
    pub fn side(&self, side: Side) -> &BinaryMask {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Snake arrangement used to recover the hemithoraces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnakeMode {
    /// One contour around all ribs, then split by the spine.
    #[default]
    OneSnake,
    /// Split the ribs by the spine, then one contour per side.
    TwoSnake,
}

impl core::str::FromStr for SnakeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-snake" => Ok(SnakeMode::OneSnake),
            "two-snake" => Ok(SnakeMode::TwoSnake),
            _ => Err(Error::param("mode", "expected one-snake or two-snake")),
        }
    }
}

/// Total-least-squares line through the per-row centroids of the spine mask.
pub fn fit_spine_midline(spine_mask: &BinaryMask) -> Result<SpineLine> {
    let (w, h) = (spine_mask.width(), spine_mask.height());
    let mut pts: alloc::vec::Vec<(f64, f64)> = alloc::vec::Vec::new();
    for y in 0..h {
        let (mut sx, mut n) = (0.0, 0usize);
        for x in 0..w {
            if spine_mask.get(x, y) {
                sx += x as f64;
                n += 1;
            }
        }
        if n > 0 {
            pts.push((sx / n as f64, y as f64));
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptyMask("spine mask"));
    }
    if pts.len() < MIN_SPINE_ROWS {
        return Err(Error::SpineTooShort { rows: pts.len(), required: MIN_SPINE_ROWS });
    }
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / m, my / m);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    // principal axis of the scatter matrix
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut dir = (theta.cos(), theta.sin());
    if dir.1 < 0.0 {
        dir = (-dir.0, -dir.1);
    }
    if dir.1 < core::f64::consts::FRAC_1_SQRT_2 - 1e-12 {
        return Err(Error::SpineNotVertical);
    }
    let extent = (pts[0].1, pts[pts.len() - 1].1);
    Ok(SpineLine { point: (mx, my), direction: dir, extent })
}

/// Assigns every member pixel to the side of the line it falls on; pixels on
/// the line go to neither side.
pub fn split_by_spine(region: &BinaryMask, spine: &SpineLine) -> HemithoraxPair {
    let (w, h) = (region.width(), region.height());
    let mut left = BinaryMask::new(w, h);
    let mut right = BinaryMask::new(w, h);
    for (x, y) in region.members() {
        match spine.side_of(x as f64, y as f64) {
            Some(Side::Left) => left.set(x, y, true),
            Some(Side::Right) => right.set(x, y, true),
            None => {}
        }
    }
    HemithoraxPair { left, right, spine: *spine }
}

/// Reflects a mask across the line (nearest-pixel sampling).
pub fn mirror_across(mask: &BinaryMask, spine: &SpineLine) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (sx, sy) = spine.reflect(x as f64, y as f64);
        mask.get_signed(sx.round() as i64, sy.round() as i64)
    })
}

/// Rasterized region enclosed by one snake fitted to `ribs`.
pub fn fit_region(ribs: &BinaryMask, params: &SnakeParams) -> Result<BinaryMask> {
    let field = snake::external_energy_field(ribs, params)?;
    let init = snake::init_rectangle(ribs, DEFAULT_INIT_MARGIN, params.n_vertices)?;
    let contour = snake::evolve(&init, &field, params)?;
    Ok(snake::contour_to_mask(&contour, ribs.width(), ribs.height()))
}

/// Rib and spine masks to left/right hemithorax masks.
pub fn segment_hemithoraces(
    ribs: &BinaryMask,
    spine_mask: &BinaryMask,
    params: &SnakeParams,
    mode: SnakeMode,
) -> Result<HemithoraxPair> {
    check_same_frame(ribs, spine_mask)?;
    params.validate()?;
    if ribs.is_empty() {
        return Err(Error::EmptyMask("rib mask"));
    }
    let spine = fit_spine_midline(spine_mask)?;
    segment_with_spine(ribs, &spine, params, mode)
}

/// [`segment_hemithoraces`] with an already fitted midline.
pub fn segment_with_spine(
    ribs: &BinaryMask,
    spine: &SpineLine,
    params: &SnakeParams,
    mode: SnakeMode,
) -> Result<HemithoraxPair> {
    match mode {
        SnakeMode::OneSnake => {
            let region = fit_region(ribs, params)?;
            Ok(split_by_spine(&region, spine))
        }
        SnakeMode::TwoSnake => {
            let sides = split_by_spine(ribs, spine);
            if sides.left.is_empty() {
                return Err(Error::EmptySide(Side::Left));
            }
            if sides.right.is_empty() {
                return Err(Error::EmptySide(Side::Right));
            }
            let left_region = fit_region(&sides.left, params)?;
            let right_region = fit_region(&sides.right, params)?;
            Ok(HemithoraxPair {
                left: split_by_spine(&left_region, spine).left,
                right: split_by_spine(&right_region, spine).right,
                spine: *spine,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Ellipse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strip(w: usize, h: usize, cx: f64, half: f64, tilt: f64) -> BinaryMask {
        let line = SpineLine::new((cx, h as f64 / 2.0), tilt, (0.0, h as f64)).unwrap();
        BinaryMask::from_fn(w, h, |x, y| y >= 20 && y < h - 20 && line.distance(x as f64, y as f64) <= half)
    }

    #[test]
    fn vertical_strip_fit() {
        let m = BinaryMask::from_fn(1024, 600, |x, y| (502..522).contains(&x) && y >= 50);
        let s = fit_spine_midline(&m).unwrap();
        assert!((s.x_at(300.0) - 511.5).abs() < 1e-9);
        assert!(s.direction.0.abs() < 1e-12 && (s.direction.1 - 1.0).abs() < 1e-12);
        assert_eq!(s.extent, (50.0, 599.0));
    }

    #[test]
    fn tilted_strip_fit() {
        let tilt = 5f64.to_radians();
        let m = strip(512, 512, 256.0, 10.0, tilt);
        let s = fit_spine_midline(&m).unwrap();
        let got = s.direction.0.atan2(s.direction.1);
        assert!((got - tilt).abs() <= 0.5f64.to_radians(), "{}", got.to_degrees());
    }

    #[test]
    fn fit_is_robust_to_dropout() {
        let tilt = 3f64.to_radians();
        let clean = strip(512, 512, 250.0, 10.0, tilt);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let holes = BinaryMask::from_fn(512, 512, |x, y| clean.get(x, y) && rng.random::<f64>() >= 0.1);
        let a = fit_spine_midline(&clean).unwrap();
        let b = fit_spine_midline(&holes).unwrap();
        let rms = ((0..512)
            .map(|y| {
                let d = a.x_at(y as f64) - b.x_at(y as f64);
                d * d
            })
            .sum::<f64>()
            / 512.0)
            .sqrt();
        assert!(rms <= 1.0, "rms {rms}");
    }

    #[test]
    fn spine_errors() {
        assert_eq!(fit_spine_midline(&BinaryMask::new(10, 10)), Err(Error::EmptyMask("spine mask")));
        let short = BinaryMask::from_fn(50, 50, |x, y| x == 25 && y < 10);
        assert_eq!(fit_spine_midline(&short), Err(Error::SpineTooShort { rows: 10, required: 20 }));
        let flat = BinaryMask::from_fn(200, 200, |x, y| y == 100 + x / 10 && x < 200);
        assert_eq!(fit_spine_midline(&flat), Err(Error::SpineNotVertical));
    }

    #[test]
    fn disk_split_is_balanced() {
        let d = Ellipse::new((200.0, 200.0), 80.0, 80.0, 0.0).unwrap().rasterize(400, 400);
        for deg in [0.0f64, 10.0, 25.0, 45.0] {
            let spine = SpineLine::new((200.0, 200.0), deg.to_radians(), (0.0, 400.0)).unwrap();
            let p = split_by_spine(&d, &spine);
            let diff = (p.left.count() as i64 - p.right.count() as i64).abs();
            assert!(diff <= 161, "tilt {deg}: diff {diff}");
            assert!(p.left.intersection(&p.right).unwrap().is_empty());
        }
    }

    #[test]
    fn split_partitions_region() {
        let region = Ellipse::new((90.0, 70.0), 50.0, 30.0, 0.4).unwrap().rasterize(180, 140);
        let spine = SpineLine::new((93.0, 70.0), 0.1, (0.0, 140.0)).unwrap();
        let p = split_by_spine(&region, &spine);
        let on_line = region.members().filter(|&(x, y)| spine.side_of(x as f64, y as f64).is_none()).count();
        assert_eq!(p.left.count() + p.right.count() + on_line, region.count());
        assert!(p.left.members().all(|(x, y)| spine.signed_distance(x as f64, y as f64) < 0.0));
        assert!(p.right.members().all(|(x, y)| spine.signed_distance(x as f64, y as f64) > 0.0));
    }

    #[test]
    fn region_left_of_line_has_empty_right() {
        let region = BinaryMask::from_fn(100, 100, |x, _| x < 30);
        let p = split_by_spine(&region, &SpineLine::vertical(50.0, (0.0, 99.0)));
        assert!(p.right.is_empty());
        assert_eq!(p.left.count(), region.count());
    }

    #[test]
    fn on_line_pixels_are_excluded() {
        let region = BinaryMask::full(11, 5);
        let p = split_by_spine(&region, &SpineLine::vertical(5.0, (0.0, 4.0)));
        assert_eq!(p.left.count(), 25);
        assert_eq!(p.right.count(), 25);
    }

    #[test]
    fn reflection_is_an_involution() {
        let s = SpineLine::new((100.0, 50.0), 0.2, (0.0, 100.0)).unwrap();
        let (x, y) = s.reflect(37.5, 80.25);
        let (x2, y2) = s.reflect(x, y);
        assert!((x2 - 37.5).abs() < 1e-9 && (y2 - 80.25).abs() < 1e-9);
        assert!((s.signed_distance(x, y) + s.signed_distance(37.5, 80.25)).abs() < 1e-9);
    }

    #[test]
    fn two_snake_reports_empty_side() {
        let ribs = BinaryMask::from_fn(200, 200, |x, y| x > 40 && x < 90 && y > 40 && y < 160);
        let spine = BinaryMask::from_fn(200, 200, |x, y| (95..105).contains(&x) && y > 20 && y < 180);
        let params = SnakeParams { n_vertices: 40, max_iters: 50, ..Default::default() };
        let r = segment_hemithoraces(&ribs, &spine, &params, SnakeMode::TwoSnake);
        assert_eq!(r, Err(Error::EmptySide(Side::Right)));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("one-snake".parse::<SnakeMode>().unwrap(), SnakeMode::OneSnake);
        assert_eq!("two-snake".parse::<SnakeMode>().unwrap(), SnakeMode::TwoSnake);
        assert!("three".parse::<SnakeMode>().is_err());
    }
}
