//! External rays, equipotentials and Koenigs internal rays.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{angle_orbit, Angle};
use crate::poly::{refine_periodic, Polynomial};
use crate::raster::{green_function, ComponentMap, GREEN_MAX_ITER};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RayError {
    #[error("ray {theta} cannot be continued below potential {potential:e}")]
    RayCrisis { theta: String, potential: f64 },
    #[error("potentials must satisfy start ≥ end > 0")]
    InvalidPotential,
    #[error("internal rays need an attracting, non-superattracting fixed point at 0")]
    SuperattractingUnsupported,
    #[error("0 is not attracting (|λ| = {0})")]
    NotAttracting(f64),
    #[error("internal ray left the basin at {0}")]
    DivergedFromBasin(C64),
    #[error("start point of the internal ray is not in the basin")]
    NotInBasin,
    #[error("path did not land")]
    NotLanded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum RayKind {
    External { angle: Angle },
    Equipotential { level: f64 },
    /// Koenigs ray at `angle` radians.
    Internal { angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationReason {
    /// Tracing stopped above the landing cutoff.
    AboveCutoff,
    /// Extrapolations did not agree.
    NotConverged,
    /// Convergence is too slow to extrapolate, as near a parabolic point.
    NearParabolic,
    /// Internal ray reached the raster boundary of the basin.
    ReachedBoundary,
    /// Internal ray met a critical obstruction of the Koenigs map.
    CriticalObstruction,
    /// Some equipotential samples failed.
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Landing {
    Landed { z: C64 },
    Truncated { reason: TruncationReason },
    /// Closed curve (equipotentials).
    Closed,
}

/// A traced curve with its parametrising potentials (Green's function for external rays,
/// `|φ|` for internal rays).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayPath {
    pub kind: RayKind,
    pub points: Vec<C64>,
    pub potentials: Vec<f64>,
    pub landing: Landing,
}

impl RayPath {
    pub fn landing_point(&self) -> Result<C64, RayError> {
        match self.landing {
            Landing::Landed { z } => Ok(z),
            _ => Err(RayError::NotLanded),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayOptions {
    /// Nodes per factor `d` of potential.
    pub steps_per_level: usize,
    /// Below this end potential a landing point is computed.
    pub landing_cutoff: f64,
    pub landing_tol: f64,
    /// Largest Kantorovich ratio accepted at the predictor.
    pub kantorovich: f64,
    pub max_halvings: u32,
}

impl Default for RayOptions {
    fn default() -> Self {
        RayOptions { steps_per_level: 8, landing_cutoff: 1e-7, landing_tol: 1e-5, kantorovich: 0.5, max_halvings: 24 }
    }
}

/// Working potential at which `Bᵈᵐ` is replaced by `fᵐ`.
fn large_level(d: usize) -> f64 {
    20f64.min(600.0 / d as f64)
}

struct Solver<'a> {
    f: &'a Polynomial,
    theta: Angle,
    d: u64,
    b0: C64,
    big: f64,
}

impl Solver<'_> {
    /// Smallest `m` with `dᵐ s ≥ L`, and the target `fᵐ(z) = B⁻¹(exp(dᵐ(s + 2πiθ)))`.
    fn target(&self, s: f64) -> (usize, C64) {
        let mut m = 0usize;
        let mut dm = 1.0f64;
        while dm * s < self.big {
            m += 1;
            dm *= self.d as f64;
        }
        let phase = self.theta.mul_pow(self.d, m as u32).to_f64();
        let w = C64::from_polar((dm * s).exp(), 2.0 * std::f64::consts::PI * phase) - self.b0;
        (m, w)
    }

    /// `F = Log(fᵐ(z)/w)` with its first two derivatives.
    fn residual(&self, z: C64, m: usize, w: C64) -> (C64, C64, C64) {
        let (g, dg, ddg) = self.f.iterate_dd(z, m);
        let fz = (g / w).ln();
        let d1 = dg / g;
        let d2 = ddg / g - d1 * d1;
        (fz, d1, d2)
    }

    /// Newton step from `z0` to the potential `s`, with the Kantorovich test at the predictor.
    fn step(&self, z0: C64, s: f64, kmax: f64) -> Option<C64> {
        let (m, w) = self.target(s);
        if m == 0 {
            return Some(w);
        }
        let (fz, d1, d2) = self.residual(z0, m, w);
        if !(d1.norm() > 0.0) {
            return None;
        }
        let h = fz.norm() * d2.norm() / d1.norm_sqr();
        if !(h <= kmax) {
            return None;
        }
        let delta0 = (fz / d1).norm();
        let mut z = z0 - fz / d1;
        for _ in 0..60 {
            let (fz, d1, _) = self.residual(z, m, w);
            let step = fz / d1;
            if !(step.re.is_finite() && step.im.is_finite()) {
                return None;
            }
            z -= step;
            if step.norm() <= 1e-15 * z.norm().max(1e-300) {
                break;
            }
        }
        // converged to the resolution of z, whatever the rounding floor of F
        let (fz, d1, _) = self.residual(z, m, w);
        if !((fz / d1).norm() <= 1e-12 * (1.0 + z.norm())) || (z - z0).norm() > 2.5 * delta0 + 1e-300 {
            return None;
        }
        // the solution must sit at potential s (loosely: G is ill-conditioned next to J)
        let g = green_function(self.f, z, GREEN_MAX_ITER)?;
        ((g - s).abs() <= 1e-3 * s).then_some(z)
    }
}

/// Wynn's ε-algorithm; returns the last two even-column estimates.
fn wynn_epsilon(seq: &[C64]) -> Option<(C64, C64)> {
    let n = seq.len();
    if n < 3 {
        return None;
    }
    let zero = C64::new(0.0, 0.0);
    let mut prev = vec![zero; n + 1];
    let mut cur: Vec<C64> = seq.to_vec();
    let mut evens: Vec<C64> = vec![seq[n - 1]];
    let mut k = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            if diff.norm() == 0.0 {
                // sequence already stationary here
                return Some((cur[i + 1], cur[i + 1]));
            }
            next.push(prev[i + 1] + 1.0 / diff);
        }
        prev = cur;
        cur = next;
        k += 1;
        if k % 2 == 0 {
            evens.push(*cur.last().unwrap());
        }
    }
    if evens.len() < 2 {
        return None;
    }
    let m = evens.len();
    Some((evens[m - 2], evens[m - 1]))
}

/// External ray `R(θ)` from potential `start` down to `end`.
pub fn trace_external_ray(
    f: &Polynomial,
    theta: &Angle,
    start: f64,
    end: f64,
    opts: &RayOptions,
) -> Result<RayPath, RayError> {
    if !(end > 0.0 && start >= end && start.is_finite()) {
        return Err(RayError::InvalidPotential);
    }
    let d = f.degree();
    let big = large_level(d);
    let s_hi = start.max(big);
    let solver = Solver { f, theta: *theta, d: d as u64, b0: f.coeffs()[d - 2] / d as f64, big };
    let k = opts.steps_per_level as f64;
    let ld = (d as f64).ln();
    // schedule anchored at `end`: s_j = end·d^{j/K}
    let top = ((s_hi / end).ln() / ld * k).floor() as i64;
    let mut nodes: Vec<(f64, Option<usize>)> = (0..=top).rev().map(|j| (end * (j as f64 * ld / k).exp(), Some(j as usize))).collect();
    nodes.push((start, None));
    nodes.push((s_hi, None));
    nodes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    nodes.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-14 * b.0);
    let mut by_index: Vec<Option<C64>> = vec![None; top.max(0) as usize + 1];
    let mut points = Vec::new();
    let mut pots = Vec::new();
    let mut s = nodes[0].0;
    let mut z = solver.target(s).1;
    let mut record = |z: C64, s: f64, idx: Option<usize>, points: &mut Vec<C64>, pots: &mut Vec<f64>| {
        if s <= start * (1.0 + 1e-12) {
            points.push(z);
            pots.push(s);
        }
        if let Some(i) = idx {
            by_index[i] = Some(z);
        }
    };
    record(z, s, nodes[0].1, &mut points, &mut pots);
    for &(target, idx) in nodes.iter().skip(1) {
        let mut halvings: u32 = 0;
        let mut attempts = 0;
        while s > target * (1.0 + 1e-12) {
            attempts += 1;
            if attempts > 400 {
                return Err(RayError::RayCrisis { theta: theta.to_string(), potential: s });
            }
            let frac = 0.5f64.powi(halvings as i32);
            let s_try = if halvings == 0 { target } else { s * (target / s).powf(frac) };
            match solver.step(z, s_try, opts.kantorovich) {
                Some(zn) => {
                    z = zn;
                    s = s_try;
                    if s > target * (1.0 + 1e-12) {
                        record(z, s, None, &mut points, &mut pots);
                    }
                    halvings = halvings.saturating_sub(1);
                }
                None => {
                    halvings += 1;
                    if halvings > opts.max_halvings {
                        return Err(RayError::RayCrisis { theta: theta.to_string(), potential: s });
                    }
                }
            }
        }
        s = target;
        record(z, s, idx, &mut points, &mut pots);
    }
    let landing = if end > opts.landing_cutoff * (1.0 + 1e-9) {
        Landing::Truncated { reason: TruncationReason::AboveCutoff }
    } else {
        landing_of(f, theta, &by_index, opts)
    };
    Ok(RayPath { kind: RayKind::External { angle: *theta }, points, potentials: pots, landing })
}

fn landing_of(f: &Polynomial, theta: &Angle, by_index: &[Option<C64>], opts: &RayOptions) -> Landing {
    let d = f.degree() as u64;
    let orbit = angle_orbit(theta, d, 100_000).ok();
    let p = orbit.as_ref().map(|o| o.period).unwrap_or(1);
    let stride = p * opts.steps_per_level;
    // nodes at end·d^{jp}, from high potential to low
    let mut seq: Vec<C64> = (0..7).filter_map(|j| by_index.get(j * stride).copied().flatten()).collect();
    seq.reverse();
    if seq.len() < 3 {
        return Landing::Truncated { reason: TruncationReason::NotConverged };
    }
    let n = seq.len();
    let r1 = (seq[n - 1] - seq[n - 2]).norm();
    let r0 = (seq[n - 2] - seq[n - 3]).norm();
    if r0 > 0.0 && r1 / r0 > 0.9 {
        return Landing::Truncated { reason: TruncationReason::NearParabolic };
    }
    let Some((a, b)) = wynn_epsilon(&seq) else {
        return Landing::Truncated { reason: TruncationReason::NotConverged };
    };
    if !((a - b).norm() < opts.landing_tol) {
        return Landing::Truncated { reason: TruncationReason::NotConverged };
    }
    let mut z = b;
    // snap to the (pre)periodic landing point
    if let Some(o) = orbit {
        let l = o.preperiod;
        let y = f.iterate(z, l);
        if let Some(y) = refine_periodic(f, y, o.period) {
            let mut w = z;
            for _ in 0..50 {
                let (g, dg) = f.iterate_d(w, l);
                if dg.norm() == 0.0 {
                    break;
                }
                let step = (g - y) / dg;
                w -= step;
                if step.norm() <= 1e-15 * w.norm().max(1.0) {
                    break;
                }
            }
            if (w - z).norm() < 10.0 * opts.landing_tol && (f.iterate(w, l) - y).norm() < 1e-9 {
                z = w;
            }
        }
    }
    Landing::Landed { z }
}

/// The point of `R(θ)` at potential `s`.
pub fn ray_point(f: &Polynomial, theta: &Angle, s: f64, opts: &RayOptions) -> Result<C64, RayError> {
    let path = trace_external_ray(f, theta, s, s, opts)?;
    Ok(*path.points.last().expect("non-empty path"))
}

/// Equipotential `{G = level}` sampled at angles `k/samples`.
pub fn trace_equipotential(f: &Polynomial, level: f64, samples: usize, opts: &RayOptions) -> Result<RayPath, RayError> {
    if !(level > 0.0 && level.is_finite()) || samples == 0 {
        return Err(RayError::InvalidPotential);
    }
    let mut points = Vec::with_capacity(samples + 1);
    let mut failed = 0;
    for k in 0..samples {
        let theta = Angle::new(k as u128, samples as u128).expect("small denominator");
        match ray_point(f, &theta, level, opts) {
            Ok(z) => points.push(z),
            Err(_) => failed += 1,
        }
    }
    if let Some(&z0) = points.first() {
        points.push(z0);
    }
    let n = points.len();
    let landing = if failed == 0 { Landing::Closed } else { Landing::Truncated { reason: TruncationReason::Partial } };
    Ok(RayPath { kind: RayKind::Equipotential { level }, points, potentials: vec![level; n], landing })
}

/// Koenigs linearising coordinate `φ(z) = lim fⁿ(z)/λⁿ` at the attracting fixed point 0.
pub fn koenigs(f: &Polynomial, z: C64) -> Option<C64> {
    let lambda = f.multiplier_at_zero();
    if lambda.norm() < 1e-12 || lambda.norm() >= 1.0 {
        return None;
    }
    let beta = koenigs_beta(f);
    let mut w = z;
    let mut ln = C64::new(1.0, 0.0);
    for _ in 0..10_000 {
        if w.norm() < 1e-9 {
            return Some((w + beta * w * w) / ln);
        }
        if w.norm() > f.escape_radius() {
            return None;
        }
        w = f.eval(w);
        ln *= lambda;
    }
    None
}

fn koenigs_beta(f: &Polynomial) -> C64 {
    let lambda = f.multiplier_at_zero();
    let a2 = if f.degree() >= 3 { f.coeffs()[1] } else { C64::new(1.0, 0.0) };
    a2 / (lambda - lambda * lambda)
}

/// Solves `φ(z) = ζ` by Newton from `guess`.
fn koenigs_inverse(f: &Polynomial, zeta: C64, guess: C64) -> Option<C64> {
    let lambda = f.multiplier_at_zero();
    let beta = koenigs_beta(f);
    let mut n = 0usize;
    let mut u = zeta;
    while u.norm() > 1e-7 {
        u *= lambda;
        n += 1;
        if n > 5000 {
            return None;
        }
    }
    let target = u - beta * u * u;
    let mut z = guess;
    for _ in 0..60 {
        let (g, dg) = f.iterate_d(z, n);
        if dg.norm() == 0.0 {
            return None;
        }
        let step = (g - target) / dg;
        if !(step.re.is_finite() && step.im.is_finite()) {
            return None;
        }
        z -= step;
        if step.norm() <= 1e-14 * z.norm().max(1e-12) {
            return Some(z);
        }
    }
    let (g, _) = f.iterate_d(z, n);
    ((g - target).norm() <= 1e-10 * target.norm().max(1e-300) * 1e3).then_some(z)
}

/// Internal ray of angle `angle` (radians) in the component `comp` of `basin`, the
/// immediate basin of the attracting fixed point 0, parametrised by `|φ|`.
pub fn trace_internal_ray(
    f: &Polynomial,
    basin: &ComponentMap,
    comp: u32,
    angle: f64,
    stop_cells: f64,
) -> Result<RayPath, RayError> {
    let lambda = f.multiplier_at_zero();
    if lambda.norm() < 1e-12 {
        return Err(RayError::SuperattractingUnsupported);
    }
    if lambda.norm() >= 1.0 {
        return Err(RayError::NotAttracting(lambda.norm()));
    }
    let angle = angle.rem_euclid(2.0 * std::f64::consts::PI);
    let dir = C64::from_polar(1.0, angle);
    let grid = basin.grid;
    let h = grid.cell_size();
    let inside = |z: C64| grid.index_of(z).and_then(|i| basin.label(i)) == Some(comp);
    let near_edge = |z: C64| -> bool {
        let Some(idx) = grid.index_of(z) else { return true };
        let r = stop_cells.ceil() as usize;
        grid.neighborhood(idx, r).into_iter().any(|c| basin.label(c) != Some(comp))
            || {
                let (i, j) = grid.coords(idx);
                i < r || j < r || i + r >= grid.nx || j + r >= grid.ny
            }
    };
    let t0 = 1e-4;
    let mut t = t0;
    let mut z = koenigs_inverse(f, dir * t, dir * t).ok_or(RayError::NotInBasin)?;
    if !inside(z) && !near_edge(z) {
        return Err(RayError::NotInBasin);
    }
    let mut points = vec![C64::new(0.0, 0.0), z];
    let mut pots = vec![0.0, t];
    let mut ratio = 1.05f64;
    let landing;
    loop {
        if near_edge(z) {
            let n = points.len();
            let last_step = (points[n - 1] - points[n - 2]).norm();
            landing = if last_step < 0.1 * h {
                Landing::Landed { z }
            } else {
                Landing::Truncated { reason: TruncationReason::ReachedBoundary }
            };
            break;
        }
        let n = points.len();
        let guess = if n >= 3 { z + (z - points[n - 2]) * (ratio - 1.0) / (pots[n - 1] / pots[n - 2] - 1.0) } else { z };
        let t_new = t * ratio;
        match koenigs_inverse(f, dir * t_new, guess) {
            Some(zn) if (zn - z).norm() <= 4.0 * (z - points[n - 2]).norm().max(h) => {
                if !inside(zn) && !near_edge(zn) {
                    return Err(RayError::DivergedFromBasin(zn));
                }
                z = zn;
                t = t_new;
                points.push(z);
                pots.push(t);
                ratio = 1.0 + ((ratio - 1.0) * 1.5).min(0.05);
            }
            _ => {
                ratio = 1.0 + (ratio - 1.0) * 0.5;
                if ratio - 1.0 < 1e-9 {
                    landing = Landing::Truncated { reason: TruncationReason::CriticalObstruction };
                    break;
                }
            }
        }
        if points.len() > 200_000 {
            landing = Landing::Truncated { reason: TruncationReason::NotConverged };
            break;
        }
    }
    Ok(RayPath { kind: RayKind::Internal { angle }, points, potentials: pots, landing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::raster::{classify_grid, ClassifyOptions, Grid};

    fn ang(s: &str) -> Angle {
        s.parse().unwrap()
    }

    #[test]
    fn z_cubed_rays_are_radial() {
        let f = Polynomial::monomial(3).unwrap();
        for a in ["0", "1/8", "1/4", "3/13"] {
            let th = ang(a);
            let p = trace_external_ray(&f, &th, 2.0, 1e-7, &RayOptions::default()).unwrap();
            for (z, s) in p.points.iter().zip(&p.potentials) {
                let exact = C64::from_polar(s.exp(), 2.0 * std::f64::consts::PI * th.to_f64());
                assert!((z - exact).norm() < 1e-10, "{a}: {z} vs {exact}");
            }
            let land = p.landing_point().expect("lands");
            let exact = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * th.to_f64());
            assert!((land - exact).norm() < 1e-6, "{a}: {land}");
        }
    }

    #[test]
    fn potentials_decrease() {
        let f = Polynomial::new(3, vec![C64::new(0.3, 0.2), C64::new(0.1, -0.4)]).unwrap();
        let p = trace_external_ray(&f, &ang("1/5"), 3.0, 1e-3, &RayOptions::default()).unwrap();
        assert!(p.potentials.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(p.landing, Landing::Truncated { reason: TruncationReason::AboveCutoff });
        for (z, s) in p.points.iter().zip(&p.potentials) {
            let g = green_function(&f, *z, GREEN_MAX_ITER).unwrap();
            assert!((g - s).abs() < 1e-6 * s);
        }
    }

    #[test]
    fn rejects_bad_potentials() {
        let f = Polynomial::monomial(2).unwrap();
        let o = RayOptions::default();
        assert_eq!(trace_external_ray(&f, &Angle::zero(), 1.0, 2.0, &o), Err(RayError::InvalidPotential));
        assert_eq!(trace_external_ray(&f, &Angle::zero(), 1.0, 0.0, &o), Err(RayError::InvalidPotential));
    }

    #[test]
    fn wynn_accelerates_geometric_sequence() {
        let s: Vec<C64> = (0..6).map(|j| C64::new(2.0, 1.0) + C64::new(0.3, 0.1) * 0.6f64.powi(j) + 0.2 * 0.36f64.powi(j)).collect();
        let (a, b) = wynn_epsilon(&s).unwrap();
        assert!((b - C64::new(2.0, 1.0)).norm() < 1e-10);
        assert!((a - C64::new(2.0, 1.0)).norm() < 1e-2);
    }

    #[test]
    fn equipotential_of_power_map_is_circle() {
        let f = Polynomial::monomial(2).unwrap();
        let e = trace_equipotential(&f, 0.5, 16, &RayOptions::default()).unwrap();
        assert_eq!(e.landing, Landing::Closed);
        assert_eq!(e.points.len(), 17);
        for z in &e.points {
            assert!((z.norm() - 0.5f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn koenigs_coordinate_conjugates() {
        let f = Polynomial::new(3, vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let z = C64::new(0.3, 0.2);
        let a = koenigs(&f, z).unwrap();
        let b = koenigs(&f, f.eval(z)).unwrap();
        assert!((b - 0.5 * a).norm() < 1e-12);
        assert!(koenigs(&Polynomial::monomial(3).unwrap(), z).is_none());
    }

    #[test]
    fn internal_ray_of_real_cubic_lands_at_fixed_point() {
        // λz + z³ with λ = 1/2: the real internal ray lands at the repelling fixed point √(1/2)
        let f = Polynomial::new(3, vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let grid = Grid::new(Rect::centered_square(1.5), 300, 300).unwrap();
        let r = classify_grid(&f, grid, ClassifyOptions::default());
        let keys: Vec<Option<u16>> = r.labels.iter().map(|l| l.basin()).collect();
        let map = ComponentMap::from_keys(grid, &keys);
        let comp = map.component_of(C64::new(0.0, 0.0)).unwrap().unwrap();
        let ray = trace_internal_ray(&f, &map, comp, 0.0, 2.0).unwrap();
        let again = trace_internal_ray(&f, &map, comp, 2.0 * std::f64::consts::PI, 2.0).unwrap();
        assert_eq!(ray.points, again.points);
        assert!(ray.points.iter().all(|z| z.im.abs() < 1e-12));
        let last = *ray.points.last().unwrap();
        assert!((last.re - 0.5f64.sqrt()).abs() < 3.0 * grid.cell_size(), "{last}");
        let sup = Polynomial::monomial(3).unwrap();
        assert_eq!(trace_internal_ray(&sup, &map, comp, 0.0, 2.0), Err(RayError::SuperattractingUnsupported));
    }
}
