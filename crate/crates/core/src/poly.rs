//! Monic 0-fixed polynomials, root finding and periodic cycles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rect;
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("degree must be at least 2, got {0}")]
    InvalidDegree(usize),
    #[error("expected {expected} coefficients a_1..a_(d-1), got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("root finder did not converge (relative residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("cycle is not parabolic with multiplier 1")]
    NotParabolic,
    #[error("fixed points too close to isolate a contour (radius {radius:e})")]
    IllConditioned { radius: f64 },
}

/// `f(z) = a₁z + … + a_{d−1}z^{d−1} + z^d`.
///
/// Serialises as `{"degree": d, "coeffs": [[re, im], …]}` with `coeffs = [a₁, …, a_{d−1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRepr", into = "PolyRepr")]
pub struct Polynomial {
    degree: usize,
    coeffs: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    degree: usize,
    coeffs: Vec<[f64; 2]>,
}

impl TryFrom<PolyRepr> for Polynomial {
    type Error = PolyError;
    fn try_from(r: PolyRepr) -> Result<Self, PolyError> {
        Polynomial::new(r.degree, r.coeffs.iter().map(|c| C64::new(c[0], c[1])).collect())
    }
}

impl From<Polynomial> for PolyRepr {
    fn from(p: Polynomial) -> PolyRepr {
        PolyRepr { degree: p.degree, coeffs: p.coeffs.iter().map(|c| [c.re, c.im]).collect() }
    }
}

impl Polynomial {
    pub fn new(degree: usize, coeffs: Vec<C64>) -> Result<Polynomial, PolyError> {
        if degree < 2 {
            return Err(PolyError::InvalidDegree(degree));
        }
        if coeffs.len() != degree - 1 {
            return Err(PolyError::CoefficientCount { expected: degree - 1, got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(PolyError::NonFinite);
        }
        Ok(Polynomial { degree, coeffs })
    }

    /// `z^d`.
    pub fn monomial(degree: usize) -> Result<Polynomial, PolyError> {
        Polynomial::new(degree, vec![C64::new(0.0, 0.0); degree.saturating_sub(1)])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `[a₁, …, a_{d−1}]`.
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// All coefficients in ascending order, `[0, a₁, …, a_{d−1}, 1]`.
    pub fn full_coeffs(&self) -> Vec<C64> {
        let mut v = Vec::with_capacity(self.degree + 1);
        v.push(C64::new(0.0, 0.0));
        v.extend_from_slice(&self.coeffs);
        v.push(C64::new(1.0, 0.0));
        v
    }

    /// Multiplier of the fixed point 0.
    pub fn multiplier_at_zero(&self) -> C64 {
        self.coeffs[0]
    }

    /// Escape radius `max(3, 2(1 + Σ|aᵢ|))`: once `|z|` exceeds it the orbit tends to ∞.
    pub fn escape_radius(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm()).sum();
        (2.0 * (1.0 + s)).max(3.0)
    }

    pub fn eval(&self, z: C64) -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc * z
    }

    /// `(f(z), f′(z))`.
    pub fn eval_d(&self, z: C64) -> (C64, C64) {
        let mut p = C64::new(1.0, 0.0);
        let mut dp = C64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        dp = dp * z + p;
        p *= z;
        (p, dp)
    }

    /// `(f(z), f′(z), f″(z))`.
    pub fn eval_dd(&self, z: C64) -> (C64, C64, C64) {
        let mut p = C64::new(1.0, 0.0);
        let mut dp = C64::new(0.0, 0.0);
        let mut ddp = C64::new(0.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev().chain(std::iter::once(&zero)) {
            ddp = ddp * z + dp;
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp, 2.0 * ddp)
    }

    pub fn derivative_at(&self, z: C64) -> C64 {
        self.eval_d(z).1
    }

    pub fn iterate(&self, z: C64, n: usize) -> C64 {
        let mut w = z;
        for _ in 0..n {
            w = self.eval(w);
        }
        w
    }

    /// `(fⁿ(z), (fⁿ)′(z))`.
    pub fn iterate_d(&self, z: C64, n: usize) -> (C64, C64) {
        let mut w = z;
        let mut dw = C64::new(1.0, 0.0);
        for _ in 0..n {
            let (f, df) = self.eval_d(w);
            dw *= df;
            w = f;
        }
        (w, dw)
    }

    /// `(fⁿ(z), (fⁿ)′(z), (fⁿ)″(z))`.
    pub fn iterate_dd(&self, z: C64, n: usize) -> (C64, C64, C64) {
        let mut w = z;
        let mut dw = C64::new(1.0, 0.0);
        let mut ddw = C64::new(0.0, 0.0);
        for _ in 0..n {
            let (f, df, ddf) = self.eval_dd(w);
            ddw = ddf * dw * dw + df * ddw;
            dw *= df;
            w = f;
        }
        (w, dw, ddw)
    }

    /// Coefficients of `f(z₀ + h)` in powers of `h`, ascending.
    pub fn taylor_at(&self, z0: C64) -> Vec<C64> {
        taylor_shift(&self.full_coeffs(), z0)
    }

    /// Taylor coefficients of `fⁿ` at `z₀`, truncated after `hᴹ` (`M = order`).
    pub fn iterate_taylor(&self, z0: C64, n: usize, order: usize) -> Vec<C64> {
        // series in h of the current point minus its base value
        let mut series = vec![C64::new(0.0, 0.0); order + 1];
        if order >= 1 {
            series[1] = C64::new(1.0, 0.0);
        }
        let mut base = z0;
        for _ in 0..n {
            let t = self.taylor_at(base);
            // f(base + s(h)) = Σ t_k s^k with s(0) = 0
            let mut acc = vec![C64::new(0.0, 0.0); order + 1];
            for k in (1..t.len()).rev() {
                acc = series_mul(&acc, &series, order);
                acc[0] += t[k];
            }
            acc = series_mul(&acc, &series, order);
            base = t[0];
            series = acc;
            series[0] = C64::new(0.0, 0.0);
        }
        series[0] = base;
        series
    }

    /// Full ascending coefficients of `fⁿ`.
    pub fn iterate_coeffs(&self, n: usize) -> Vec<C64> {
        let f = self.full_coeffs();
        let mut g = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        for _ in 0..n {
            g = compose(&f, &g);
        }
        g
    }
}

fn series_mul(a: &[C64], b: &[C64], order: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); order + 1];
    for (i, x) in a.iter().enumerate().take(order + 1) {
        if *x == C64::new(0.0, 0.0) {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(order + 1 - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients of `p(z₀ + h)` from ascending coefficients of `p`.
pub fn taylor_shift(coeffs: &[C64], z0: C64) -> Vec<C64> {
    let mut c = coeffs.to_vec();
    let n = c.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            let t = c[j + 1] * z0;
            c[j] += t;
        }
    }
    c
}

/// `f ∘ g` for ascending coefficient vectors.
pub fn compose(f: &[C64], g: &[C64]) -> Vec<C64> {
    let mut acc = vec![C64::new(0.0, 0.0)];
    for c in f.iter().rev() {
        let mut next = vec![C64::new(0.0, 0.0); acc.len() + g.len() - 1];
        for (i, a) in acc.iter().enumerate() {
            for (j, b) in g.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        next[0] += c;
        acc = next;
    }
    while acc.len() > 1 && *acc.last().unwrap() == C64::new(0.0, 0.0) {
        acc.pop();
    }
    acc
}

/// Evaluates an ascending coefficient vector with its derivative.
pub fn eval_coeffs(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

pub fn derivative_coeffs(coeffs: &[C64]) -> Vec<C64> {
    if coeffs.len() <= 1 {
        return vec![C64::new(0.0, 0.0)];
    }
    coeffs.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect()
}

// |z| is floored at 1 so roots at 0 are judged by their absolute residual
fn residual_scale(coeffs: &[C64], z: C64) -> f64 {
    let r = z.norm().max(1.0);
    let mut s = 0.0;
    for c in coeffs.iter().rev() {
        s = s * r + c.norm();
    }
    s.max(f64::MIN_POSITIVE)
}

/// Relative residual `|p(z)| / Σ|c_k| max(|z|, 1)^k`.
pub fn relative_residual(coeffs: &[C64], z: C64) -> f64 {
    eval_coeffs(coeffs, z).0.norm() / residual_scale(coeffs, z)
}

#[derive(Clone, Copy, Debug)]
pub struct AberthOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Accepted relative residual after polishing.
    pub residual_tol: f64,
    /// Relative distance under which roots are merged into one multiple root.
    pub cluster_tol: f64,
}

impl Default for AberthOptions {
    fn default() -> Self {
        AberthOptions { max_iter: 200, tol: 1e-12, residual_tol: 1e-9, cluster_tol: 1e-5 }
    }
}

/// A root with its multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub z: C64,
    pub multiplicity: usize,
}

/// All roots of the polynomial with ascending `coeffs` (multiple roots listed repeatedly).
pub fn aberth_raw(coeffs: &[C64], max_iter: usize, tol: f64) -> Vec<C64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && *c.last().unwrap() == C64::new(0.0, 0.0) {
        c.pop();
    }
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let c: Vec<C64> = c.iter().map(|x| x / lead).collect();
    let mut radius = 0.0f64;
    for (k, ck) in c.iter().enumerate().take(n) {
        if ck.norm() > 0.0 {
            radius = radius.max(ck.norm().powf(1.0 / (n - k) as f64));
        }
    }
    let radius = radius.max(1e-3);
    let mut z: Vec<C64> = (0..n)
        .map(|k| C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.7))
        .collect();
    let mut done = vec![false; n];
    for _ in 0..max_iter {
        let mut all = true;
        for i in 0..n {
            if done[i] {
                continue;
            }
            let (p, dp) = eval_coeffs(&c, z[i]);
            if p == C64::new(0.0, 0.0) {
                done[i] = true;
                continue;
            }
            let ratio = p / dp;
            let mut s = C64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    let diff = z[i] - z[j];
                    if diff != C64::new(0.0, 0.0) {
                        s += 1.0 / diff;
                    }
                }
            }
            let w = ratio / (1.0 - ratio * s);
            if w.re.is_finite() && w.im.is_finite() {
                z[i] -= w;
            }
            if w.norm() <= tol * z[i].norm().max(1.0) {
                done[i] = true;
            } else {
                all = false;
            }
        }
        if all {
            break;
        }
    }
    z
}

/// Roots of a polynomial, with clusters merged and polished as multiple roots.
pub fn roots(coeffs: &[C64], opts: &AberthOptions) -> Result<Vec<Root>, PolyError> {
    let raw = aberth_raw(coeffs, opts.max_iter, opts.tol);
    let n = raw.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (raw[i] - raw[j]).norm() <= opts.cluster_tol * (1.0 + raw[i].norm()) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut worst = 0.0f64;
    for (_, members) in groups {
        let m = members.len();
        let mut z = members.iter().map(|&i| raw[i]).sum::<C64>() / m as f64;
        // polish as a root of the (m−1)-th derivative
        let mut dc = coeffs.to_vec();
        for _ in 1..m {
            dc = derivative_coeffs(&dc);
        }
        let before = relative_residual(coeffs, z);
        let mut cand = z;
        for _ in 0..30 {
            let (p, dp) = eval_coeffs(&dc, cand);
            if dp == C64::new(0.0, 0.0) {
                break;
            }
            let step = p / dp;
            cand -= step;
            if step.norm() <= 1e-16 * cand.norm().max(1.0) {
                break;
            }
        }
        if cand.re.is_finite() && cand.im.is_finite() && relative_residual(coeffs, cand) <= before {
            z = cand;
        }
        worst = worst.max(relative_residual(coeffs, z));
        out.push(Root { z, multiplicity: m });
    }
    if worst > opts.residual_tol {
        return Err(PolyError::NonConvergence { residual: worst });
    }
    out.sort_by(|a, b| (a.z.re, a.z.im).partial_cmp(&(b.z.re, b.z.im)).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

/// Critical points of `f` (roots of `f′`) with multiplicity; total multiplicity `d − 1`.
pub fn critical_points(f: &Polynomial) -> Result<Vec<Root>, PolyError> {
    let dc = derivative_coeffs(&f.full_coeffs());
    roots(&dc, &AberthOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleClass {
    Superattracting,
    Attracting,
    Repelling,
    Parabolic,
    /// `|λ| = 1` within tolerance but no `λ^q` with `q ≤ 64` is close to 1.
    IrrationallyNeutral,
}

/// Tolerance on `|λ|` and on `|λ^q − 1|` for parabolic classification.
pub const PARABOLIC_TOL: f64 = 1e-6;

/// Classifies a multiplier; parabolic cycles also report the least `q ≤ 64` with `λ^q ≈ 1`.
pub fn classify_multiplier(lambda: C64) -> (CycleClass, Option<u32>) {
    let r = lambda.norm();
    if r < 1e-12 {
        return (CycleClass::Superattracting, None);
    }
    if (r - 1.0).abs() <= PARABOLIC_TOL {
        let mut pw = C64::new(1.0, 0.0);
        for q in 1..=64u32 {
            pw *= lambda;
            if (pw - 1.0).norm() <= PARABOLIC_TOL {
                return (CycleClass::Parabolic, Some(q));
            }
        }
        return (CycleClass::IrrationallyNeutral, None);
    }
    if r < 1.0 {
        (CycleClass::Attracting, None)
    } else {
        (CycleClass::Repelling, None)
    }
}

/// A periodic orbit `z₀ ↦ z₁ ↦ … ↦ z_{p−1} ↦ z₀` of exact period `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub period: usize,
    pub points: Vec<C64>,
    pub multiplier: C64,
    pub class: CycleClass,
    /// Least `q` with `λ^q ≈ 1` for parabolic cycles.
    pub rotation: Option<u32>,
    /// Résidu itératif, present for cycles with multiplier ≈ 1.
    pub resit: Option<C64>,
}

impl CycleRecord {
    /// Hausdorff distance between the point sets of two cycles.
    pub fn hausdorff(&self, other: &CycleRecord) -> f64 {
        let d = |a: &[C64], b: &[C64]| {
            a.iter()
                .map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        d(&self.points, &other.points).max(d(&other.points, &self.points))
    }

    pub fn is_parabolic(&self) -> bool {
        self.class == CycleClass::Parabolic
    }

    pub fn is_attracting(&self) -> bool {
        matches!(self.class, CycleClass::Attracting | CycleClass::Superattracting)
    }

    /// Distance from `z` to the nearest cycle point.
    pub fn distance(&self, z: C64) -> f64 {
        self.points.iter().map(|p| (p - z).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Refines a root of `fᵖ(z) − z` with the multiplicity-robust Newton step
/// `z ← z − h h′ / (h′² − h h″)`. Returns `None` when the iteration escapes or stalls.
pub fn refine_periodic(f: &Polynomial, z0: C64, p: usize) -> Option<C64> {
    let big = f.escape_radius();
    let mut z = z0;
    for _ in 0..100 {
        let (w, dw, ddw) = f.iterate_dd(z, p);
        let h = w - z;
        let dh = dw - 1.0;
        let denom = dh * dh - h * ddw;
        if h == C64::new(0.0, 0.0) {
            return Some(z);
        }
        if denom == C64::new(0.0, 0.0) || !denom.re.is_finite() || !denom.im.is_finite() {
            return None;
        }
        let step = h * dh / denom;
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        z -= step;
        if z.norm() > big {
            return None;
        }
        if step.norm() <= 1e-15 * z.norm().max(1.0) {
            break;
        }
    }
    let (w, dw) = f.iterate_d(z, p);
    // residual relative to the rounding level of the orbit
    let scale = 1e-8 * (1.0 + z.norm()) * (1.0 + dw.norm()).sqrt();
    ((w - z).norm() <= scale).then_some(z)
}

/// Least `q | p` with `f^q(z) ≈ z`.
pub fn exact_period(f: &Polynomial, z: C64, p: usize) -> usize {
    for q in 1..=p {
        if p % q == 0 && (f.iterate(z, q) - z).norm() <= 1e-7 * (1.0 + z.norm()) {
            return q;
        }
    }
    p
}

/// Builds a cycle record from one refined point of exact period `p`.
pub fn cycle_from_point(f: &Polynomial, z: C64, p: usize) -> CycleRecord {
    let mut points = Vec::with_capacity(p);
    let mut w = z;
    for _ in 0..p {
        points.push(w);
        let next = f.eval(w);
        w = refine_periodic(f, next, p).unwrap_or(next);
    }
    let lambda: C64 = points.iter().map(|&x| f.derivative_at(x)).product();
    // start the orbit at its lexicographically smallest point
    let start = (0..p)
        .min_by(|&a, &b| {
            (points[a].re, points[a].im).partial_cmp(&(points[b].re, points[b].im)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    points.rotate_left(start);
    let (class, rotation) = classify_multiplier(lambda);
    let mut rec = CycleRecord { period: p, points, multiplier: lambda, class, rotation, resit: None };
    if class == CycleClass::Parabolic && (lambda - 1.0).norm() <= PARABOLIC_TOL {
        rec.resit = residu_iteratif(f, &rec).ok().map(|r| r.value);
    }
    rec
}

#[derive(Clone, Debug)]
pub struct CycleSearch {
    pub max_period: usize,
    /// Region sampled by Newton seeds when the iterate is too large for direct root finding.
    pub search: Rect,
    pub seeds_per_axis: usize,
    /// Hausdorff distance under which two orbits are identified.
    pub dedup_tol: f64,
    /// Largest `dᵖ` for which all roots of `fᵖ(z) − z` are computed directly.
    pub direct_limit: usize,
}

impl CycleSearch {
    pub fn new(f: &Polynomial, max_period: usize) -> CycleSearch {
        let r = f.escape_radius() * 0.5;
        CycleSearch { max_period, search: Rect::centered_square(r), seeds_per_axis: 48, dedup_tol: 1e-6, direct_limit: 64 }
    }
}

/// Periodic cycles of exact period `1..=max_period`. Complete for periods with
/// `dᵖ ≤ direct_limit`, best effort above.
pub fn find_cycles(f: &Polynomial, opts: &CycleSearch) -> Vec<CycleRecord> {
    let d = f.degree();
    let mut out: Vec<CycleRecord> = Vec::new();
    for p in 1..=opts.max_period {
        let dp = (d as f64).powi(p as i32);
        let mut candidates: Vec<C64> = Vec::new();
        if dp <= opts.direct_limit as f64 {
            let mut g = f.iterate_coeffs(p);
            g[1] -= 1.0;
            candidates.extend(aberth_raw(&g, 500, 1e-14));
        } else {
            let n = opts.seeds_per_axis.max(2);
            for j in 0..n {
                for i in 0..n {
                    let x = opts.search.x_min() + opts.search.width * (i as f64 + 0.5) / n as f64;
                    let y = opts.search.y_min() + opts.search.height * (j as f64 + 0.5) / n as f64;
                    candidates.push(C64::new(x, y));
                }
            }
        }
        for c in attracting_cycles(f) {
            if c.period == p {
                candidates.extend(c.points.iter().copied());
            }
        }
        let mut found: Vec<CycleRecord> = Vec::new();
        for c in candidates {
            let Some(z) = refine_periodic(f, c, p) else { continue };
            if exact_period(f, z, p) != p {
                continue;
            }
            let dup = out.iter().chain(found.iter()).any(|r| r.period == p && r.distance(z) <= opts.dedup_tol);
            if dup {
                continue;
            }
            found.push(cycle_from_point(f, z, p));
        }
        found.sort_by(|a, b| {
            (a.points[0].re, a.points[0].im).partial_cmp(&(b.points[0].re, b.points[0].im)).unwrap_or(std::cmp::Ordering::Equal)
        });
        out.extend(found);
    }
    out
}

/// Attracting, superattracting and parabolic cycles found by following critical
/// orbits, plus the fixed point 0 when it is not repelling.
pub fn attracting_cycles(f: &Polynomial) -> Vec<CycleRecord> {
    let mut out: Vec<CycleRecord> = Vec::new();
    let zero = C64::new(0.0, 0.0);
    let (class0, _) = classify_multiplier(f.multiplier_at_zero());
    if !matches!(class0, CycleClass::Repelling | CycleClass::IrrationallyNeutral) {
        out.push(cycle_from_point(f, zero, 1));
    }
    let crit = critical_points(f).unwrap_or_default();
    let big = f.escape_radius();
    for c in crit {
        let mut z = c.z;
        let mut escaped = false;
        let mut hist: Vec<C64> = Vec::with_capacity(200);
        let n_iter = 20_000;
        for n in 0..n_iter {
            z = f.eval(z);
            if z.norm() > big {
                escaped = true;
                break;
            }
            if n + 200 >= n_iter {
                hist.push(z);
            }
            // early exit once captured by a known attracting cycle
            if n % 64 == 0 && out.iter().any(|r| r.is_attracting() && r.distance(z) < 1e-9) {
                break;
            }
        }
        if escaped || hist.len() < 130 {
            continue;
        }
        let last = *hist.last().unwrap();
        let mut best_q = 0;
        for q in 1..=64 {
            let prev = hist[hist.len() - 1 - q];
            if (last - prev).norm() <= 1e-4 * (1.0 + last.norm()) {
                best_q = q;
                break;
            }
        }
        if best_q == 0 {
            continue;
        }
        let Some(w) = refine_periodic(f, last, best_q) else { continue };
        let p = exact_period(f, w, best_q);
        let w = refine_periodic(f, w, p).unwrap_or(w);
        let rec = cycle_from_point(f, w, p);
        if matches!(rec.class, CycleClass::Repelling | CycleClass::IrrationallyNeutral) {
            continue;
        }
        if out.iter().any(|r| r.period == rec.period && r.hausdorff(&rec) <= 1e-6) {
            continue;
        }
        out.push(rec);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResitSign {
    Negative,
    Positive,
    Indeterminate,
}

/// Résidu itératif of a multiplier-1 cycle together with the contour used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resit {
    pub value: C64,
    pub sign: ResitSign,
    pub radius: f64,
    /// Multiplicity of the fixed point of `fᵖ` (number of petals plus one).
    pub multiplicity: usize,
}

/// Below this `|Re résit|` the sign is reported as indeterminate.
pub const RESIT_SIGN_TOL: f64 = 1e-9;

fn contour_integrals(f: &Polynomial, z0: C64, p: usize, r: f64, n: usize) -> (C64, C64) {
    // ι = (1/2πi)∮ dz/(z − g(z)),  N = (1/2πi)∮ (g′(z) − 1)/(g(z) − z) dz
    let mut iota = C64::new(0.0, 0.0);
    let mut count = C64::new(0.0, 0.0);
    for k in 0..n {
        let e = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
        let z = z0 + r * e;
        let (g, dg) = f.iterate_d(z, p);
        let dz = r * e; // dz / (i dθ)
        iota += dz / (z - g);
        count += (dg - 1.0) * dz / (g - z);
    }
    (iota / n as f64, count / n as f64)
}

/// `résit(g, z₀) = (ν + 1)/2 − ι` with `ν + 1` the multiplicity of `z₀` as a fixed point of
/// `g = fᵖ`, from a trapezoid contour integral on a circle isolating `z₀`.
pub fn residu_iteratif(f: &Polynomial, cycle: &CycleRecord) -> Result<Resit, PolyError> {
    if cycle.class != CycleClass::Parabolic || (cycle.multiplier - 1.0).norm() > PARABOLIC_TOL {
        return Err(PolyError::NotParabolic);
    }
    let p = cycle.period;
    let z0 = cycle.points[0];
    let d = f.degree();
    let mut others: Vec<C64> = Vec::new();
    if (d as f64).powi(p as i32) <= 64.0 {
        let mut g = f.iterate_coeffs(p);
        g[1] -= 1.0;
        others = aberth_raw(&g, 500, 1e-14);
    }
    let n = 256;
    let r_min = 1e-5;
    let mut r = 1e-2;
    loop {
        if r < r_min {
            return Err(PolyError::IllConditioned { radius: r });
        }
        // other fixed points of g must stay outside 2r (those merging into z₀ are inside r/100)
        let blocked = others.iter().any(|w| {
            let dist = (w - z0).norm();
            dist > 1e-2 * r && dist < 2.0 * r
        });
        if !blocked {
            let (i1, n1) = contour_integrals(f, z0, p, r, n);
            let (i2, n2) = contour_integrals(f, z0, p, 0.5 * r, n);
            let m1 = n1.re.round();
            let consistent = (n1 - m1).norm() < 1e-3
                && (n2 - m1).norm() < 1e-3
                && (i1 - i2).norm() <= 1e-6 * (1.0 + i1.norm());
            if consistent && m1 >= 2.0 {
                let value = C64::new(0.5 * m1, 0.0) - i1;
                let sign = if value.re.abs() <= RESIT_SIGN_TOL {
                    ResitSign::Indeterminate
                } else if value.re < 0.0 {
                    ResitSign::Negative
                } else {
                    ResitSign::Positive
                };
                return Ok(Resit { value, sign, radius: r, multiplicity: m1 as usize });
            }
        }
        r *= 0.5;
    }
}
