//! Active contour engine.
//!
//! The snake energy is the discrete internal energy
//! `sum alpha |v[i+1] - v[i]|^2 + beta |v[i+1] - 2 v[i] + v[i-1]|^2`
//! plus the external field sampled at every vertex. The external field is
//! `-|grad (G * I)|^2` of the smoothed mask, rescaled so its minimum is
//! `-EDGE_DEPTH`.
//!
//! Evolution uses semi-implicit gradient steps: the internal term, a
//! circulant quadratic form, is treated implicitly and the external term
//! explicitly. A step that raises the total energy is retried with half the
//! step size, so the energy sequence is non-increasing.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::math::FloatExt;
use crate::raster::{gaussian_blur, BinaryMask};
use crate::{Error, Result};

/// Minimum distance between consecutive contour vertices.
pub const MIN_VERTEX_SPACING: f64 = 1e-6;

/// Iterations between equal arc-length reparameterizations.
pub const RESAMPLE_EVERY: usize = 25;

/// Iterations over which vertex displacement is measured for convergence.
pub const CONVERGENCE_WINDOW: usize = 10;

/// Halvings tried before an iteration is declared stalled.
const MAX_BACKTRACKS: usize = 30;

/// Depth of the deepest edge in the external field. Shallower edges let the
/// tension of a contour bridging a gap peel it off convex walls.
pub const EDGE_DEPTH: f64 = 3.0;

/// Default padding around the rib bounding box for the initial rectangle.
pub const DEFAULT_INIT_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeParams {
    /// Elasticity weight.
    pub alpha: f64,
    /// Stiffness weight.
    pub beta: f64,
    /// Initial step of every iteration (halved on energy increase).
    pub step_size: f64,
    pub max_iters: usize,
    /// Convergence threshold on the largest vertex displacement, in pixels.
    pub tol: f64,
    pub n_vertices: usize,
    /// Standard deviation of the Gaussian applied before the gradient.
    pub field_smoothing: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        SnakeParams {
            alpha: 0.1,
            beta: 1.0,
            step_size: 8.0,
            max_iters: 2000,
            tol: 0.1,
            n_vertices: 200,
            field_smoothing: 3.0,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.alpha) {
            return Err(Error::param("alpha", "must be finite and >= 0"));
        }
        if !finite_nonneg(self.beta) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::param("step_size", "must be finite and > 0"));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        if self.n_vertices < 8 {
            return Err(Error::param("n_vertices", "must be >= 8"));
        }
        if !finite_nonneg(self.field_smoothing) {
            return Err(Error::param("field_smoothing", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Closed polyline; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    vertices: Vec<(f64, f64)>,
}

impl Contour {
    /// Validates vertex count, finiteness and spacing (including the closing edge).
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let n = vertices.len();
        if n < 8 {
            return Err(Error::InvalidContour(n));
        }
        if vertices.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::NonFinite);
        }
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if (a.0 - b.0).hypot(a.1 - b.1) < MIN_VERTEX_SPACING {
                return Err(Error::InvalidContour(n));
            }
        }
        Ok(Contour { vertices })
    }

    /// Regular polygon, handy for tests and seeding.
    pub fn circle(center: (f64, f64), radius: f64, n: usize) -> Result<Self> {
        let verts = (0..n)
            .map(|i| {
                let t = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
                (center.0 + radius * t.cos(), center.1 + radius * t.sin())
            })
            .collect();
        Contour::new(verts)
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        perimeter(&self.vertices)
    }

    /// Shoelace area (positive for either orientation).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            s += a.0 * b.1 - b.0 * a.1;
        }
        0.5 * s.abs()
    }

    pub fn reversed(&self) -> Contour {
        let mut v = self.vertices.clone();
        v.reverse();
        Contour { vertices: v }
    }

    /// `n` vertices equally spaced by arc length, starting at vertex 0.
    pub fn resampled(&self, n: usize) -> Result<Contour> {
        Contour::new(resample_closed(&self.vertices, n))
    }

    /// True when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (v[j], v[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

fn perimeter(v: &[(f64, f64)]) -> f64 {
    let n = v.len();
    (0..n).map(|i| (v[(i + 1) % n].0 - v[i].0).hypot(v[(i + 1) % n].1 - v[i].1)).sum()
}

fn resample_closed(v: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    let m = v.len();
    let total = perimeter(v);
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let seg_len = |i: usize| (v[(i + 1) % m].0 - v[i].0).hypot(v[(i + 1) % m].1 - v[i].1);
    let mut cur_len = seg_len(0);
    for k in 0..n {
        let target = k as f64 * step;
        while seg_start + cur_len < target && seg < m - 1 {
            seg_start += cur_len;
            seg += 1;
            cur_len = seg_len(seg);
        }
        let t = if cur_len > 0.0 { ((target - seg_start) / cur_len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (v[seg], v[(seg + 1) % m]);
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    (d1 == 0.0 && on(c, d, a)) || (d2 == 0.0 && on(c, d, b)) || (d3 == 0.0 && on(a, b, c)) || (d4 == 0.0 && on(a, b, d))
}

/// External energy grid with its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

impl EnergyField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad_x(&self) -> &[f64] {
        &self.grad_x
    }

    pub fn grad_y(&self) -> &[f64] {
        &self.grad_y
    }

    #[inline]
    pub fn value_at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear interpolation of `values` at a sub-pixel point (clamped to the frame).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.values, self.width, self.height, x, y)
    }

    /// Bilinear interpolation of the field gradient.
    pub fn sample_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        (bilinear(&self.grad_x, self.width, self.height, x, y), bilinear(&self.grad_y, self.width, self.height, x, y))
    }
}

fn bilinear(grid: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = grid[y0 * w + x0] * (1.0 - fx) + grid[y0 * w + x1] * fx;
    let bot = grid[y1 * w + x0] * (1.0 - fx) + grid[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Central differences with one-sided differences at the borders.
fn gradient(grid: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; grid.len()];
    let mut gy = vec![0.0; grid.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if w < 2 {
                0.0
            } else if x == 0 {
                grid[i + 1] - grid[i]
            } else if x == w - 1 {
                grid[i] - grid[i - 1]
            } else {
                0.5 * (grid[i + 1] - grid[i - 1])
            };
            gy[i] = if h < 2 {
                0.0
            } else if y == 0 {
                grid[i + w] - grid[i]
            } else if y == h - 1 {
                grid[i] - grid[i - w]
            } else {
                0.5 * (grid[i + w] - grid[i - w])
            };
        }
    }
    (gx, gy)
}

/// Edge-attraction field of a mask: `-|grad (G * I)|^2`, rescaled to a minimum of
/// `-EDGE_DEPTH`.
pub fn external_energy_field(mask: &BinaryMask, params: &SnakeParams) -> Result<EnergyField> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("rib mask"));
    }
    let (w, h) = (mask.width(), mask.height());
    let img: Vec<f64> = mask.as_slice().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let smooth = gaussian_blur(&img, w, h, params.field_smoothing);
    let (sx, sy) = gradient(&smooth, w, h);
    let mut values: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| -(a * a + b * b)).collect();
    let min = values.iter().cloned().fold(0.0, f64::min);
    if min < 0.0 {
        values.iter_mut().for_each(|v| *v *= EDGE_DEPTH / -min);
    }
    let (grad_x, grad_y) = gradient(&values, w, h);
    Ok(EnergyField { width: w, height: h, values, grad_x, grad_y })
}

/// Bounding rectangle of the mask padded by `margin` (clipped to the frame),
/// as `n_vertices` points equally spaced by arc length, clockwise from the
/// top-left corner.
pub fn init_rectangle(ribs: &BinaryMask, margin: f64, n_vertices: usize) -> Result<Contour> {
    let (x0, y0, x1, y1) = ribs.bounding_box().ok_or(Error::EmptyMask("rib mask"))?;
    let (wmax, hmax) = ((ribs.width() - 1) as f64, (ribs.height() - 1) as f64);
    let left = (x0 as f64 - margin).max(0.0);
    let top = (y0 as f64 - margin).max(0.0);
    let right = (x1 as f64 + margin).min(wmax);
    let bottom = (y1 as f64 + margin).min(hmax);
    rectangle(left, top, right, bottom, n_vertices)
}

/// Axis-aligned rectangle contour with `n` equally spaced vertices.
pub fn rectangle(left: f64, top: f64, right: f64, bottom: f64, n: usize) -> Result<Contour> {
    let corners = [(left, top), (right, top), (right, bottom), (left, bottom)];
    if right - left < MIN_VERTEX_SPACING || bottom - top < MIN_VERTEX_SPACING {
        // a degenerate box still yields a valid (if thin) contour once padded
        let pad = 0.5;
        return rectangle(left - pad, top - pad, right + pad, bottom + pad, n);
    }
    // vertices per side proportional to side length, corners always kept
    let lens = [right - left, bottom - top, right - left, bottom - top];
    let per = 2.0 * (lens[0] + lens[1]);
    let mut counts = lens.map(|l| ((n as f64 * l / per).round() as usize).max(1));
    while counts.iter().sum::<usize>() > n {
        let i = (0..4).max_by_key(|&i| counts[i]).unwrap_or(0);
        counts[i] -= 1;
    }
    while counts.iter().sum::<usize>() < n {
        let i =
            (0..4).max_by(|&a, &b| (lens[a] / counts[a] as f64).total_cmp(&(lens[b] / counts[b] as f64))).unwrap_or(0);
        counts[i] += 1;
    }
    let mut verts = Vec::with_capacity(n);
    for side in 0..4 {
        let (a, b) = (corners[side], corners[(side + 1) % 4]);
        for k in 0..counts[side] {
            let t = k as f64 / counts[side] as f64;
            verts.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    Contour::new(verts)
}

/// Discrete elasticity plus stiffness energy with cyclic indexing.
pub fn internal_energy(c: &Contour, alpha: f64, beta: f64) -> f64 {
    internal_energy_of(&c.vertices, alpha, beta)
}

fn internal_energy_of(v: &[(f64, f64)], alpha: f64, beta: f64) -> f64 {
    let n = v.len();
    let mut e = 0.0;
    for i in 0..n {
        let prev = v[(i + n - 1) % n];
        let cur = v[i];
        let next = v[(i + 1) % n];
        let (dx, dy) = (next.0 - cur.0, next.1 - cur.1);
        let (ddx, ddy) = (next.0 - 2.0 * cur.0 + prev.0, next.1 - 2.0 * cur.1 + prev.1);
        e += alpha * (dx * dx + dy * dy) + beta * (ddx * ddx + ddy * ddy);
    }
    e
}

/// Internal plus external energy of a vertex list.
pub fn snake_energy(c: &Contour, field: &EnergyField, params: &SnakeParams) -> f64 {
    total_energy(&c.vertices, field, params)
}

fn total_energy(v: &[(f64, f64)], field: &EnergyField, params: &SnakeParams) -> f64 {
    let ext: f64 = v.iter().map(|&(x, y)| field.sample(x, y)).sum();
    internal_energy_of(v, params.alpha, params.beta) + ext
}

/// First column of `(I + tau A)^-1`, where `A` is the circulant Hessian of
/// the internal energy. Symmetric, so rows equal columns.
fn implicit_kernel(n: usize, tau: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let cos_table: Vec<f64> = (0..n).map(|k| (2.0 * core::f64::consts::PI * k as f64 / n as f64).cos()).collect();
    let inv_eig: Vec<f64> = cos_table
        .iter()
        .map(|&c| {
            let d = 2.0 - 2.0 * c;
            1.0 / (1.0 + tau * (2.0 * alpha * d + 2.0 * beta * d * d))
        })
        .collect();
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for (k, &ie) in inv_eig.iter().enumerate() {
                s += cos_table[(j * k) % n] * ie;
            }
            s / n as f64
        })
        .collect()
}

fn apply_circulant(kernel: &[f64], rhs: &[(f64, f64)], out: &mut [(f64, f64)]) {
    let n = rhs.len();
    for (i, o) in out.iter_mut().enumerate() {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (j, &(rx, ry)) in rhs.iter().enumerate() {
            let k = kernel[(i + n - j) % n];
            sx += k * rx;
            sy += k * ry;
        }
        *o = (sx, sy);
    }
}

/// Outcome of [`evolve_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct SnakeTrace {
    pub contour: Contour,
    /// Total energy before the first iteration and after every accepted iteration.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Evolves `init` down the snake energy; see [`evolve_traced`].
pub fn evolve(init: &Contour, field: &EnergyField, params: &SnakeParams) -> Result<Contour> {
    evolve_traced(init, field, params).map(|t| t.contour)
}

/// Evolves the contour and records the energy after every iteration.
///
/// Each iteration starts from `params.step_size` and halves it until the
/// total energy does not increase. The contour is resampled to equal arc
/// length every [`RESAMPLE_EVERY`] iterations when that does not raise the
/// energy. Iteration stops when no vertex moved more than `params.tol` over
/// the last [`CONVERGENCE_WINDOW`] iterations, or after `params.max_iters`.
pub fn evolve_traced(init: &Contour, field: &EnergyField, params: &SnakeParams) -> Result<SnakeTrace> {
    params.validate()?;
    let (wmax, hmax) = ((field.width - 1) as f64, (field.height - 1) as f64);
    let mut v: Vec<(f64, f64)> = if init.len() == params.n_vertices {
        init.vertices.clone()
    } else {
        resample_closed(&init.vertices, params.n_vertices)
    };
    for p in v.iter_mut() {
        p.0 = p.0.clamp(0.0, wmax);
        p.1 = p.1.clamp(0.0, hmax);
    }
    let n = v.len();
    let mut energy = total_energy(&v, field, params);
    let mut energies = vec![energy];
    let mut kernels: Vec<Vec<f64>> = Vec::new();
    let mut rhs = vec![(0.0, 0.0); n];
    let mut cand = vec![(0.0, 0.0); n];
    let mut converged = false;
    let mut iterations = 0;
    let mut anchor = v.clone();
    let mut anchor_iter = 0usize;

    for iter in 1..=params.max_iters {
        iterations = iter;
        let mut accepted = None;
        for level in 0..=MAX_BACKTRACKS {
            let tau = params.step_size / (1u64 << level) as f64;
            if kernels.len() <= level {
                kernels.push(implicit_kernel(n, tau, params.alpha, params.beta));
            }
            for (r, &(x, y)) in rhs.iter_mut().zip(&v) {
                let (gx, gy) = field.sample_gradient(x, y);
                *r = (x - tau * gx, y - tau * gy);
            }
            apply_circulant(&kernels[level], &rhs, &mut cand);
            for p in cand.iter_mut() {
                if !p.0.is_finite() || !p.1.is_finite() {
                    return Err(Error::Diverged { iteration: iter });
                }
                p.0 = p.0.clamp(0.0, wmax);
                p.1 = p.1.clamp(0.0, hmax);
            }
            let e = total_energy(&cand, field, params);
            if !e.is_finite() {
                return Err(Error::Diverged { iteration: iter });
            }
            if e <= energy {
                accepted = Some(e);
                break;
            }
        }
        let Some(e) = accepted else {
            // no descent direction left at any step size
            converged = true;
            break;
        };
        core::mem::swap(&mut v, &mut cand);
        energy = e;

        if iter % RESAMPLE_EVERY == 0 {
            let resampled = resample_closed(&v, n);
            let e_r = total_energy(&resampled, field, params);
            if e_r <= energy {
                v = resampled;
                energy = e_r;
                // vertices slid along the curve; restart the displacement window
                anchor.copy_from_slice(&v);
                anchor_iter = iter;
            }
        }
        energies.push(energy);
        if iter - anchor_iter >= CONVERGENCE_WINDOW {
            let max_move = anchor.iter().zip(&v).map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1)).fold(0.0, f64::max);
            if max_move < params.tol {
                converged = true;
                break;
            }
            anchor.copy_from_slice(&v);
            anchor_iter = iter;
        }
    }
    let contour = Contour::new(v.clone()).or_else(|_| Contour::new(resample_closed(&v, n)))?;
    Ok(SnakeTrace { contour, energies, iterations, converged })
}

/// Even-odd fill of the closed contour; a pixel is a member when its center
/// is inside the polygon or on its boundary.
pub fn contour_to_mask(c: &Contour, width: usize, height: usize) -> BinaryMask {
    let v = &c.vertices;
    let n = v.len();
    let mut mask = BinaryMask::new(width, height);
    if width == 0 || height == 0 {
        return mask;
    }
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let yc = y as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (a.1 <= yc && yc < b.1) || (b.1 <= yc && yc < a.1) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(|p, q| p.total_cmp(q));
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1].floor().min((width - 1) as f64);
            if lo <= hi {
                for x in lo as usize..=hi as usize {
                    mask.set(x, y, true);
                }
            }
        }
    }
    // boundary pixels whose centers lie exactly on an edge
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        mark_on_segment(&mut mask, a, b);
    }
    mask
}

fn mark_on_segment(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64)) {
    const EPS: f64 = 1e-9;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let in_frame = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h;
    if (a.1 - b.1).abs() < EPS {
        if (a.1 - a.1.round()).abs() > EPS {
            return;
        }
        let y = a.1.round() as i64;
        let (x0, x1) = (a.0.min(b.0).ceil() as i64, a.0.max(b.0).floor() as i64);
        for x in x0..=x1 {
            if in_frame(x, y) {
                mask.set(x as usize, y as usize, true);
            }
        }
        return;
    }
    let (y0, y1) = (a.1.min(b.1).ceil() as i64, a.1.max(b.1).floor() as i64);
    for y in y0..=y1 {
        let x = a.0 + (y as f64 - a.1) * (b.0 - a.0) / (b.1 - a.1);
        if (x - x.round()).abs() < EPS {
            let xi = x.round() as i64;
            if in_frame(xi, y) {
                mask.set(xi as usize, y as usize, true);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{mask_iou, Ellipse};

    fn disk(w: usize, h: usize, c: (f64, f64), r: f64) -> BinaryMask {
        Ellipse::new(c, r, r, 0.0).unwrap().rasterize(w, h)
    }

    #[test]
    fn params_validation() {
        assert!(SnakeParams::default().validate().is_ok());
        let bad = SnakeParams { n_vertices: 7, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SnakeParams { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SnakeParams { max_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn contour_invariants() {
        assert!(matches!(Contour::new(vec![(0.0, 0.0); 3]), Err(Error::InvalidContour(3))));
        let mut v: Vec<_> = (0..10).map(|i| (i as f64, 0.0)).collect();
        v[3] = v[2];
        assert!(Contour::new(v).is_err());
    }

    #[test]
    fn uniform_field_for_constant_mask() {
        let full = BinaryMask::full(40, 30);
        let f = external_energy_field(&full, &SnakeParams::default()).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert!(external_energy_field(&BinaryMask::new(4, 4), &SnakeParams::default()).is_err());
    }

    #[test]
    fn step_edge_field_support() {
        let c = 50;
        let mask = BinaryMask::from_fn(100, 20, |x, _| x >= c);
        let p = SnakeParams::default();
        let f = external_energy_field(&mask, &p).unwrap();
        let reach = (3.0 * p.field_smoothing).ceil() as usize + 1;
        for x in 0..100 {
            let v = f.value_at(x, 10);
            if x + reach < c || x > c + reach {
                assert_eq!(v, 0.0, "x={x}");
            }
        }
        let argmin = (0..100).min_by(|&a, &b| f.value_at(a, 10).total_cmp(&f.value_at(b, 10))).unwrap();
        assert!((argmin as i64 - c as i64).abs() <= p.field_smoothing as i64);
    }

    #[test]
    fn disk_field_minima_hug_boundary() {
        let (cx, cy, r) = (64.0, 64.0, 30.0);
        let mask = disk(128, 128, (cx, cy), r);
        let p = SnakeParams::default();
        let f = external_energy_field(&mask, &p).unwrap();
        let min = f.values().iter().cloned().fold(f64::INFINITY, f64::min);
        for y in 0..128 {
            for x in 0..128 {
                if f.value_at(x, y) <= min + 1e-12 {
                    let d = ((x as f64 - cx).hypot(y as f64 - cy) - r).abs();
                    assert!(d <= 1.0 + p.field_smoothing, "argmin at distance {d}");
                }
            }
        }
    }

    #[test]
    fn rectangle_init_examples() {
        let mut m = BinaryMask::new(200, 200);
        m.set(50, 60, true);
        let c = init_rectangle(&m, 10.0, 40).unwrap();
        let xs = c.vertices().iter().map(|p| p.0);
        let ys = c.vertices().iter().map(|p| p.1);
        assert_eq!(xs.clone().fold(f64::INFINITY, f64::min), 40.0);
        assert_eq!(xs.fold(f64::NEG_INFINITY, f64::max), 60.0);
        assert_eq!(ys.clone().fold(f64::INFINITY, f64::min), 50.0);
        assert_eq!(ys.fold(f64::NEG_INFINITY, f64::max), 70.0);

        let full = BinaryMask::full(64, 32);
        let c = init_rectangle(&full, 0.0, 40).unwrap();
        assert!((c.area() - 63.0 * 31.0).abs() < 1e-9);

        let mut two = BinaryMask::new(100, 100);
        two.set(10, 20, true);
        two.set(80, 90, true);
        let c = init_rectangle(&two, 0.0, 40).unwrap();
        assert!((c.area() - 70.0 * 70.0).abs() < 1e-9);
        assert!(init_rectangle(&BinaryMask::new(5, 5), 1.0, 40).is_err());
    }

    #[test]
    fn internal_energy_examples() {
        let sq = Contour::new(vec![
            (0.0, 0.0),
            (5.0, 0.0),
            (10.0, 0.0),
            (10.0, 5.0),
            (10.0, 10.0),
            (5.0, 10.0),
            (0.0, 10.0),
            (0.0, 5.0),
        ])
        .unwrap();
        // eight edges of length 5
        assert!((internal_energy(&sq, 1.0, 0.0) - 8.0 * 25.0).abs() < 1e-12);
        let v = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
        assert!((internal_energy_of(&v, 1.0, 0.0) - 400.0).abs() < 1e-12);

        let small = Contour::circle((0.0, 0.0), 10.0, 24).unwrap();
        let big = Contour::circle((0.0, 0.0), 20.0, 24).unwrap();
        let ratio = internal_energy(&big, 0.3, 0.7) / internal_energy(&small, 0.3, 0.7);
        assert!((ratio - 4.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_vertices_have_no_stiffness() {
        let v: Vec<_> = (0..12).map(|i| (i as f64 * 2.0, 3.0)).collect();
        for i in 1..11 {
            let dd = v[i + 1].0 - 2.0 * v[i].0 + v[i - 1].0;
            assert_eq!(dd, 0.0);
        }
        // only the two wrap-around vertices contribute stiffness on this path
        let e = internal_energy_of(&v, 0.0, 1.0);
        let wrap: f64 = [(v[11], v[0], v[1]), (v[10], v[11], v[0])]
            .iter()
            .map(|(p, c, n)| {
                let dx = n.0 - 2.0 * c.0 + p.0;
                let dy = n.1 - 2.0 * c.1 + p.1;
                dx * dx + dy * dy
            })
            .sum();
        assert!((e - wrap).abs() < 1e-9);
    }

    #[test]
    fn implicit_kernel_inverts_operator() {
        let (n, tau, a, b) = (16, 3.0, 0.1, 1.0);
        let k = implicit_kernel(n, tau, a, b);
        // (I + tau A) applied to the kernel column must give e_0
        let row = [2.0 * b, -2.0 * a - 8.0 * b, 4.0 * a + 12.0 * b, -2.0 * a - 8.0 * b, 2.0 * b];
        for i in 0..n {
            let mut s = k[i];
            for (o, &r) in row.iter().enumerate() {
                s += tau * r * k[(i + n + o - 2) % n];
            }
            let want = if i == 0 { 1.0 } else { 0.0 };
            assert!((s - want).abs() < 1e-12, "i={i} s={s}");
        }
    }

    #[test]
    fn pure_elasticity_shrinks_perimeter() {
        let mask = {
            let mut m = BinaryMask::new(200, 200);
            m.set(100, 100, true);
            m
        };
        // a single pixel far from the contour leaves the field zero along it
        let field = external_energy_field(&mask, &SnakeParams::default()).unwrap();
        let params = SnakeParams { beta: 0.0, max_iters: 200, ..Default::default() };
        let init = rectangle(20.0, 20.0, 180.0, 180.0, 64).unwrap();
        let mut prev = init.perimeter();
        let mut c = init;
        for _ in 0..10 {
            let p = SnakeParams { max_iters: 5, ..params };
            c = evolve(&c, &field, &p).unwrap();
            let per = c.perimeter();
            assert!(per <= prev + 1e-9, "{per} > {prev}");
            prev = per;
        }
    }

    #[test]
    fn disk_oracle_iou() {
        let (w, h) = (512, 512);
        let target = disk(w, h, (256.0, 256.0), 120.0);
        let params = SnakeParams::default();
        let field = external_energy_field(&target, &params).unwrap();
        let init = init_rectangle(&target, DEFAULT_INIT_MARGIN, params.n_vertices).unwrap();
        let trace = evolve_traced(&init, &field, &params).unwrap();
        let got = contour_to_mask(&trace.contour, w, h);
        let iou = mask_iou(&got, &target).unwrap();
        assert!(iou >= 0.95, "iou {iou} after {} iterations", trace.iterations);
        assert!(trace.energies.windows(2).all(|e| e[1] <= e[0]));
        assert!(trace.contour.is_simple());
    }

    #[test]
    fn evolve_is_deterministic() {
        let target = disk(128, 128, (64.0, 64.0), 30.0);
        let params = SnakeParams { n_vertices: 64, ..Default::default() };
        let field = external_energy_field(&target, &params).unwrap();
        let init = init_rectangle(&target, 5.0, 64).unwrap();
        assert_eq!(evolve(&init, &field, &params).unwrap(), evolve(&init, &field, &params).unwrap());
    }

    #[test]
    fn nan_step_reports_divergence() {
        let target = disk(64, 64, (32.0, 32.0), 10.0);
        let params = SnakeParams { n_vertices: 32, ..Default::default() };
        let field = external_energy_field(&target, &params).unwrap();
        let init = init_rectangle(&target, 5.0, 32).unwrap();
        let bad = SnakeParams { alpha: f64::MAX, beta: f64::MAX, ..params };
        // validate() accepts the huge weights; the kernel overflows to NaN
        let r = evolve(&init, &field, &bad);
        assert!(matches!(r, Err(Error::Diverged { iteration: 1 })), "{r:?}");
    }

    fn brute_force_mask(c: &Contour, w: usize, h: usize) -> BinaryMask {
        let v = c.vertices();
        let n = v.len();
        BinaryMask::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64, y as f64);
            let mut inside = false;
            for i in 0..n {
                let (a, b) = (v[i], v[(i + 1) % n]);
                // on-edge test
                let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let within = px >= a.0.min(b.0) - 1e-12
                    && px <= a.0.max(b.0) + 1e-12
                    && py >= a.1.min(b.1) - 1e-12
                    && py <= a.1.max(b.1) + 1e-12;
                if cross.abs() < 1e-9 && within {
                    return true;
                }
                if (a.1 > py) != (b.1 > py) {
                    let xi = a.0 + (py - a.1) * (b.0 - a.0) / (b.1 - a.1);
                    if px < xi {
                        inside = !inside;
                    }
                }
            }
            inside
        })
    }

    #[test]
    fn rasterize_rectangle_matches_brute_force() {
        let c = rectangle(10.0, 10.0, 20.0, 20.0, 40).unwrap();
        let m = contour_to_mask(&c, 32, 32);
        assert_eq!(m, brute_force_mask(&c, 32, 32));
        assert_eq!(m.count(), 121);
        assert_eq!(contour_to_mask(&c.reversed(), 32, 32), m);
    }

    #[test]
    fn rasterize_irregular_matches_brute_force() {
        let c = Contour::new(vec![
            (3.3, 4.1),
            (20.7, 2.2),
            (25.0, 14.5),
            (15.5, 9.0),
            (12.0, 25.3),
            (4.0, 20.0),
            (8.5, 12.25),
            (2.0, 8.0),
        ])
        .unwrap();
        let m = contour_to_mask(&c, 30, 30);
        assert_eq!(m, brute_force_mask(&c, 30, 30));
        assert_eq!(contour_to_mask(&c.reversed(), 30, 30), m);
    }

    #[test]
    fn thin_contour_rasterizes_to_few_pixels() {
        let v: Vec<_> = (0..16)
            .map(|i| {
                let t = i as f64 / 16.0 * core::f64::consts::TAU;
                (30.0 + 10.0 * t.cos(), 30.3 + 1e-3 * t.sin())
            })
            .collect();
        let c = Contour::new(v).unwrap();
        assert!(contour_to_mask(&c, 64, 64).count() <= 16);
    }

    #[test]
    fn simple_check() {
        assert!(Contour::circle((0.0, 0.0), 5.0, 12).unwrap().is_simple());
        let bowtie = Contour::new(vec![
            (0.0, 0.0),
            (5.0, 2.5),
            (10.0, 5.0),
            (10.0, 0.0),
            (5.0, 2.4),
            (0.0, 5.0),
            (0.0, 3.0),
            (0.0, 1.5),
        ])
        .unwrap();
        assert!(!bowtie.is_simple());
    }
}
