//! Monotone-chain hulls in the plane.

use alloc::vec::Vec;

#[inline]
fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Indices of the lower convex hull of `(xs[i], ys[i])` over the indices
/// in `order` (which must be sorted by strictly increasing `x`).
/// Collinear middle points are dropped.
pub fn lower_hull(xs: &[f64], ys: &[f64], order: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    for i in order {
        let p = (xs[i], ys[i]);
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if cross((xs[a], ys[a]), (xs[b], ys[b]), p) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Convex hull of planar points, counter-clockwise, without repeated or
/// collinear vertices. One or two points are returned as-is (deduplicated).
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Whether `p` lies in the convex polygon (or segment/point) `hull`, within
/// `tol`.
pub fn hull_contains(hull: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    match hull.len() {
        0 => false,
        1 => dist(hull[0], p) <= tol,
        2 => segment_distance(hull[0], hull[1], p) <= tol,
        n => (0..n).all(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            let len = dist(a, b);
            cross(a, b, p) >= -tol * len
        }),
    }
}

#[inline]
pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    libm::hypot(a.0 - b.0, a.1 - b.1)
}

pub fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(a, p);
    }
    let s = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist((a.0 + s * dx, a.1 + s * dy), p)
}
