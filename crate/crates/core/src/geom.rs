//! Small planar geometry helpers: axis-aligned boxes, convex hulls, line rasterisation.

use serde::{Deserialize, Serialize};

use crate::C64;

/// Axis-aligned rectangle given by its centre and side lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: [f64; 2],
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(center: C64, width: f64, height: f64) -> Rect {
        Rect { center: [center.re, center.im], width, height }
    }

    /// Square `[-r, r]²` around the origin.
    pub fn centered_square(r: f64) -> Rect {
        Rect::new(C64::new(0.0, 0.0), 2.0 * r, 2.0 * r)
    }

    pub fn from_corners(x0: f64, x1: f64, y0: f64, y1: f64) -> Rect {
        Rect {
            center: [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
            width: (x1 - x0).abs(),
            height: (y1 - y0).abs(),
        }
    }

    pub fn center(&self) -> C64 {
        C64::new(self.center[0], self.center[1])
    }

    pub fn x_min(&self) -> f64 {
        self.center[0] - 0.5 * self.width
    }

    pub fn x_max(&self) -> f64 {
        self.center[0] + 0.5 * self.width
    }

    pub fn y_min(&self) -> f64 {
        self.center[1] - 0.5 * self.height
    }

    pub fn y_max(&self) -> f64 {
        self.center[1] + 0.5 * self.height
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.x_min() && z.re <= self.x_max() && z.im >= self.y_min() && z.im <= self.y_max()
    }

    pub fn is_valid(&self) -> bool {
        self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0
    }

    /// Parses `"cx,cy,w,h"`.
    pub fn parse(s: &str) -> Option<Rect> {
        let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().ok()?;
        if v.len() != 4 {
            return None;
        }
        let r = Rect { center: [v[0], v[1]], width: v[2], height: v[3] };
        r.is_valid().then_some(r)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, no repeated endpoint.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Largest pairwise distance in a point set.
pub fn diameter(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    let mut best = 0.0f64;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            let dx = hull[i].0 - hull[j].0;
            let dy = hull[i].1 - hull[j].1;
            best = best.max((dx * dx + dy * dy).sqrt());
        }
    }
    best
}

/// Every integer cell crossed by the segment between two points given in
/// continuous cell coordinates (cell `(i, j)` covers `[i, i+1) × [j, j+1)`).
pub fn supercover(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (x0.floor() as i64, y0.floor() as i64);
    let (ie, je) = (x1.floor() as i64, y1.floor() as i64);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((i as f64 + 1.0) - x0) / dx
    } else if dx < 0.0 {
        (x0 - i as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((j as f64 + 1.0) - y0) / dy
    } else if dy < 0.0 {
        (y0 - j as f64) / -dy
    } else {
        f64::INFINITY
    };
    out.push((i, j));
    let limit = ((ie - i).abs() + (je - j).abs() + 2) as usize;
    let mut steps = 0;
    while (i != ie || j != je) && steps <= limit {
        steps += 1;
        if t_max_x < t_max_y {
            i += step_i;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            j += step_j;
            t_max_y += t_delta_y;
        } else {
            // corner crossing: include both side cells
            out.push((i + step_i, j));
            out.push((i, j + step_j));
            i += step_i;
            j += step_j;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
        out.push((i, j));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((diameter(&pts) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn supercover_is_4_connected() {
        let cells = supercover(0.5, 0.5, 7.3, 3.9);
        for w in cells.windows(2) {
            let d = (w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs();
            assert!(d <= 2);
        }
        assert_eq!(*cells.first().unwrap(), (0, 0));
        assert_eq!(*cells.last().unwrap(), (7, 3));
    }

    #[test]
    fn supercover_reaches_end_of_diagonal() {
        let cells = supercover(0.0, 0.0, 40.0, 40.0);
        assert_eq!(*cells.last().unwrap(), (40, 40));
        for k in 0..40 {
            assert!(cells.contains(&(k + 1, k)) && cells.contains(&(k, k + 1)));
        }
    }

    #[test]
    fn rect_parse() {
        let r = Rect::parse("0,0,4,2").unwrap();
        assert_eq!(r.x_min(), -2.0);
        assert_eq!(r.y_max(), 1.0);
        assert!(Rect::parse("0,0,-1,2").is_none());
    }
}
