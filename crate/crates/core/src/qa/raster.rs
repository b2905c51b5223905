//! Even-odd pixel-center rasterization and Dice overlap.
//!
//! Pixel `(i, j)` has its center at `(i, j)`, matching voxel centers in
//! [`Volume`](crate::volume::Volume).

use crate::error::{Error, Result};

/// Rectangular pixel window `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(dims: [usize; 2]) -> Self {
        Self { x0: 0, y0: 0, width: dims[0], height: dims[1] }
    }

    /// Smallest window covering every vertex, grown by one pixel and clipped to `dims`.
    pub fn around(polygons: &[&[[f64; 2]]], dims: [usize; 2]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in polygons.iter().flat_map(|p| p.iter()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let clip = |v: f64, n: usize| (v as i64).clamp(0, n as i64);
        let x0 = clip(lo[0].floor() - 1.0, dims[0]);
        let y0 = clip(lo[1].floor() - 1.0, dims[1]);
        let x1 = clip(hi[0].ceil() + 2.0, dims[0]);
        let y1 = clip(hi[1].ceil() + 2.0, dims[1]);
        Self { x0, y0, width: (x1 - x0) as usize, height: (y1 - y0) as usize }
    }
}

/// Binary mask over a [`Window`], row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    window: Window,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(window: Window) -> Self {
        Self { window, bits: vec![false; window.width * window.height] }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.window.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[j * self.window.width + i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Pixels in `self` but not in `other` (ring = outer minus lumen).
    pub fn minus(&self, other: &Mask) -> Result<Mask> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Ok(Mask { window: self.window, bits })
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if self.window != other.window {
            return Err(Error::DimensionMismatch { expected: self.bits.len(), found: other.bits.len() });
        }
        Ok(())
    }
}

/// Even-odd point-in-polygon test, consistent with [`rasterize`].
pub fn point_in_polygon(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for e in 0..n {
        let a = polygon[e];
        let b = polygon[(e + 1) % n];
        if (a[1] <= p[1]) != (b[1] <= p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x <= p[0] {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Returns the first pair of non-adjacent edges that touch, if any.
pub fn find_self_intersection(polygon: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = polygon.len();
    if n < 4 {
        return None;
    }
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            let (c, d) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Rasterizes a simple polygon over the full `dims = [width, height]` grid.
pub fn rasterize(polygon: &[[f64; 2]], dims: [usize; 2]) -> Result<Mask> {
    if let Some((i, j)) = find_self_intersection(polygon) {
        return Err(Error::SelfIntersecting(i, j));
    }
    Ok(rasterize_in(polygon, Window::full(dims)))
}

/// Scanline even-odd fill restricted to `window`. Simplicity is not checked.
pub fn rasterize_in(polygon: &[[f64; 2]], window: Window) -> Mask {
    let mut mask = Mask::empty(window);
    let n = polygon.len();
    let mut xs = Vec::with_capacity(8);
    for j in 0..window.height {
        let yc = (window.y0 + j as i64) as f64;
        xs.clear();
        for e in 0..n {
            let a = polygon[e];
            let b = polygon[(e + 1) % n];
            if (a[1] <= yc) != (b[1] <= yc) {
                xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel centers with pair[0] <= x < pair[1]
            let lo = (pair[0].ceil() as i64 - window.x0).max(0);
            let hi = ((pair[1].ceil() as i64) - window.x0).min(window.width as i64);
            for i in lo..hi {
                mask.set(i as usize, j, true);
            }
        }
    }
    mask
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)`; defined as 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_same(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
