//! Seven-value left/right similarity encoding of a hemithorax pair.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hemithorax::{mirror_across, HemithoraxPair, Side, SpineLine};
#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::raster::{check_same_frame, mask_iou, BinaryMask};
use crate::{Error, Result};

/// Tolerance on the bin sum of a normalized histogram.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Feature names in vector (and CSV column) order.
pub const FEATURE_NAMES: [&str; 7] =
    ["sim_area", "sim_perimeter", "sim_centroid_dx", "sim_first_rib_width", "hist_jsd", "hist_intersection", "reg_iou"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub normalized: bool,
}

impl Histogram {
    pub fn from_counts(counts: &[usize]) -> Self {
        Histogram { bins: counts.iter().map(|&c| c as f64).collect(), normalized: false }
    }

    /// Scales bins to sum to one; an all-zero histogram stays zero and is
    /// reported by [`Histogram::is_degenerate`].
    pub fn normalize(&self) -> Histogram {
        let s: f64 = self.bins.iter().sum();
        let bins = if s > 0.0 { self.bins.iter().map(|b| b / s).collect() } else { self.bins.clone() };
        Histogram { bins, normalized: true }
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }

    pub fn reversed(&self) -> Histogram {
        let mut bins = self.bins.clone();
        bins.reverse();
        Histogram { bins, normalized: self.normalized }
    }

    /// Joins two normalized histograms into one distribution with equal weight on each part.
    pub fn concat(&self, other: &Histogram) -> Histogram {
        let bins = self.bins.iter().chain(&other.bins).map(|b| 0.5 * b).collect();
        Histogram { bins, normalized: self.normalized && other.normalized }
    }
}

fn check_pair(h1: &Histogram, h2: &Histogram) -> Result<()> {
    if h1.bins.len() != h2.bins.len() {
        return Err(Error::BinMismatch(h1.bins.len(), h2.bins.len()));
    }
    for h in [h1, h2] {
        if !h.normalized || (h.total() - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized);
        }
    }
    Ok(())
}

/// Jensen-Shannon divergence in bits, so the result lies in `[0, 1]`.
pub fn jsd(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    check_pair(h1, h2)?;
    let mut d = 0.0;
    for (&p, &q) in h1.bins.iter().zip(&h2.bins) {
        let m = 0.5 * (p + q);
        if p > 0.0 {
            d += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            d += 0.5 * q * (q / m).log2();
        }
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Sum of per-bin minima.
pub fn hist_intersection(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    check_pair(h1, h2)?;
    Ok(h1.bins.iter().zip(&h2.bins).map(|(&p, &q)| p.min(q)).sum::<f64>().clamp(0.0, 1.0))
}

/// `min / max` of two non-negative values; `sim(0, 0) = 1`.
pub fn similarity_index(r_left: f64, r_right: f64) -> Result<f64> {
    for v in [r_left, r_right] {
        if v.is_nan() {
            return Err(Error::NonFinite);
        }
        if v < 0.0 {
            return Err(Error::Negative(v));
        }
    }
    let (lo, hi) = if r_left <= r_right { (r_left, r_right) } else { (r_right, r_left) };
    Ok(if hi == 0.0 { 1.0 } else { lo / hi })
}

/// Row (horizontal) and column (vertical) member counts, each normalized.
pub fn projection_histograms(side_mask: &BinaryMask) -> (Histogram, Histogram) {
    let (rows, cols) = projection_counts(side_mask);
    (Histogram::from_counts(&rows).normalize(), Histogram::from_counts(&cols).normalize())
}

/// Unnormalized row and column counts.
pub fn projection_counts(mask: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let mut rows = alloc::vec![0usize; mask.height()];
    let mut cols = alloc::vec![0usize; mask.width()];
    for (x, y) in mask.members() {
        rows[y] += 1;
        cols[x] += 1;
    }
    (rows, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub area: f64,
    pub perimeter: f64,
    pub centroid: (f64, f64),
    /// Horizontal distance from the centroid to the spine line.
    pub centroid_dx: f64,
    /// Distance from the first-rib endpoint to the spine line.
    pub first_rib_width: f64,
    pub first_rib_point: (f64, f64),
}

/// Member pixels with a 4-neighbour outside the mask or the frame.
pub fn boundary_pixel_count(mask: &BinaryMask) -> usize {
    mask.members()
        .filter(|&(x, y)| {
            let (x, y) = (x as i64, y as i64);
            !mask.get_signed(x - 1, y)
                || !mask.get_signed(x + 1, y)
                || !mask.get_signed(x, y - 1)
                || !mask.get_signed(x, y + 1)
        })
        .count()
}

/// Members whose endpoint key is within `ENDPOINT_BAND * sqrt(area)` of the
/// minimum (at least half a pixel) share the endpoint; on smooth outlines many
/// pixels nearly tie.
pub const ENDPOINT_BAND: f64 = 0.02;

/// Top-left-most point for the left side, top-right-most for the right.
/// "Top" and "left" are taken in the spine's frame, so with a vertical spine
/// the key is `x + y` (left) or `y - x` (right). Returns the mean position of
/// the members near the smallest key (see [`ENDPOINT_BAND`]).
pub fn first_rib_endpoint(mask: &BinaryMask, spine: &SpineLine, side: Side) -> Option<(f64, f64)> {
    let key = |x: usize, y: usize| {
        let (xf, yf) = (x as f64, y as f64);
        let u = spine.signed_distance(xf, yf);
        let v = (xf - spine.point.0) * spine.direction.0 + (yf - spine.point.1) * spine.direction.1;
        match side {
            Side::Left => u + v,
            Side::Right => v - u,
        }
    };
    let best = mask.members().map(|(x, y)| key(x, y)).min_by(f64::total_cmp)?;
    let band = (ENDPOINT_BAND * (mask.count() as f64).sqrt()).max(0.5);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (x, y) in mask.members() {
        if key(x, y) <= best + band {
            sx += x as f64;
            sy += y as f64;
            n += 1.0;
        }
    }
    Some((sx / n, sy / n))
}

pub fn shape_stats(side_mask: &BinaryMask, spine: &SpineLine, side: Side) -> Result<ShapeStats> {
    let centroid = side_mask.centroid().ok_or(Error::EmptyMask("hemithorax"))?;
    let endpoint = first_rib_endpoint(side_mask, spine, side).ok_or(Error::EmptyMask("hemithorax"))?;
    Ok(ShapeStats {
        area: side_mask.count() as f64,
        perimeter: boundary_pixel_count(side_mask) as f64,
        centroid,
        centroid_dx: (centroid.0 - spine.x_at(centroid.1)).abs(),
        first_rib_width: spine.distance(endpoint.0, endpoint.1),
        first_rib_point: endpoint,
    })
}

/// IoU after mirroring `left` across the spine and translating it so the
/// centroids coincide (integer translation). Empty sides give 0.
pub fn registered_iou(left: &BinaryMask, right: &BinaryMask, spine: &SpineLine) -> Result<f64> {
    check_same_frame(left, right)?;
    let mirrored = mirror_across(left, spine);
    let (Some(cl), Some(cr)) = (mirrored.centroid(), right.centroid()) else {
        return Ok(0.0);
    };
    let dx = (cr.0 - cl.0).round() as i64;
    let dy = (cr.1 - cl.1).round() as i64;
    mask_iou(&mirrored.translate(dx, dy), right)
}

/// The seven similarity values, each in `[0, 1]` with 1 meaning symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sim_area: f64,
    pub sim_perimeter: f64,
    pub sim_centroid_dx: f64,
    pub sim_first_rib_width: f64,
    pub hist_jsd: f64,
    pub hist_intersection: f64,
    pub reg_iou: f64,
    /// Set when a hemithorax was empty; such vectors are all zero.
    #[serde(default)]
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn from_array(a: [f64; 7]) -> Self {
        FeatureVector {
            sim_area: a[0],
            sim_perimeter: a[1],
            sim_centroid_dx: a[2],
            sim_first_rib_width: a[3],
            hist_jsd: a[4],
            hist_intersection: a[5],
            reg_iou: a[6],
            degenerate: false,
        }
    }

    pub fn degenerate() -> Self {
        FeatureVector { degenerate: true, ..FeatureVector::from_array([0.0; 7]) }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.sim_area,
            self.sim_perimeter,
            self.sim_centroid_dx,
            self.sim_first_rib_width,
            self.hist_jsd,
            self.hist_intersection,
            self.reg_iou,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Row and column profiles of both sides, with the left side mirrored across
/// the spine so a symmetric pair yields identical profiles.
fn paired_profiles(pair: &HemithoraxPair) -> (Histogram, Histogram) {
    let left = mirror_across(&pair.left, &pair.spine);
    let (lh, lv) = projection_histograms(&left);
    let (rh, rv) = projection_histograms(&pair.right);
    (lh.concat(&lv), rh.concat(&rv))
}

pub fn extract_features(pair: &HemithoraxPair) -> Result<FeatureVector> {
    check_same_frame(&pair.left, &pair.right)?;
    if pair.left.is_empty() || pair.right.is_empty() {
        return Ok(FeatureVector::degenerate());
    }
    let l = shape_stats(&pair.left, &pair.spine, Side::Left)?;
    let r = shape_stats(&pair.right, &pair.spine, Side::Right)?;
    let (hl, hr) = paired_profiles(pair);
    if hl.is_degenerate() || hr.is_degenerate() {
        // the mirrored left side fell entirely outside the frame
        return Ok(FeatureVector::degenerate());
    }
    Ok(FeatureVector {
        sim_area: similarity_index(l.area, r.area)?,
        sim_perimeter: similarity_index(l.perimeter, r.perimeter)?,
        sim_centroid_dx: similarity_index(l.centroid_dx, r.centroid_dx)?,
        sim_first_rib_width: similarity_index(l.first_rib_width, r.first_rib_width)?,
        hist_jsd: 1.0 - jsd(&hl, &hr)?,
        hist_intersection: hist_intersection(&hl, &hr)?,
        reg_iou: registered_iou(&pair.left, &pair.right, &pair.spine)?,
        degenerate: false,
    })
}
