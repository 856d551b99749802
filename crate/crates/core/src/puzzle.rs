//! Puzzle graphs, puzzle pieces of every depth, nests, first entry times and shape.
//!
//! The graph `Γ` joins the outer equipotential to an inner disk `Ω₀` around 0 by external
//! ray tails and internal arcs landing at a repelling cycle on the boundary of the basin.
//! A cell is in the depth-`n` domain when the centres of its first `n+1` iterates stay off
//! `Γ`, outside `Ω₀` and below the outer level. Its key is the sequence of depth-0 pieces
//! visited, and depth-`n` pieces are the 4-components of equal keys. Pulled-back cuts
//! thinner than a cell still separate pieces this way.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{periodic_angles, Angle};
use crate::poly::{critical_points, find_cycles, CycleClass, CycleRecord, CycleSearch, Polynomial, Root};
use crate::raster::{green_function, CellLabel, ComponentMap, Grid, Raster, GREEN_MAX_ITER};
use crate::rays::{trace_external_ray, RayOptions, RayPath};
use crate::{map_cells, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PuzzleError {
    #[error("0 is not attracting or its basin is not on the raster")]
    NotAttracting,
    #[error("no repelling cycle of period ≥ 2 on the boundary of the basin")]
    NoBoundaryCycle,
    #[error("no ray lands on the cycle; nearest misses {nearest:?}")]
    NoLandingRays { nearest: Vec<(String, f64)> },
    #[error("no internal arc reaches the cycle point {0}")]
    NoInternalArc(C64),
    #[error("depth {depth} exceeds the raster budget: {reason}")]
    DepthBudget { depth: usize, reason: String },
    #[error("point lies on the graph at depth {depth}")]
    OnGraph { depth: usize },
    #[error("point is outside the puzzle domain")]
    NotInDomain,
    #[error("nest has depth {have}, need {need}")]
    InsufficientDepth { have: usize, need: usize },
    #[error("point is not interior to the mask")]
    NotInterior,
}

const OUTER: u8 = 255;
const INNER: u8 = 254;
const PETAL: u8 = 253;
const CUT: u8 = 252;
const MAX_LABELS: usize = 252;
/// Key bytes available in a `u128`.
const MAX_KEY_DEPTH: usize = 15;
const SEARCH_CELLS: usize = 3;
const MAX_ARC_SEGMENTS: usize = 4000;

pub const SURROGATE_CUTS: &str = "surrogate-cuts: parabolic petals are removed as disks, cuts through parabolic basins are not traced";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzleOptions {
    /// Largest distance, in cells, from a cycle point to the basin of 0.
    pub cycle_tol_cells: f64,
    /// Largest distance from a ray's landing point to its cycle point.
    pub landing_tol: f64,
    pub max_period: usize,
    /// Samples per fundamental segment of an internal arc.
    pub arc_samples: usize,
    pub ray: RayOptions,
}

impl Default for PuzzleOptions {
    fn default() -> Self {
        PuzzleOptions { cycle_tol_cells: 2.0, landing_tol: 1e-4, max_period: 4, arc_samples: 64, ray: RayOptions::default() }
    }
}

/// Linearising coordinate of 0 used for the internal potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Linearizer {
    /// `φ ∘ f = λφ`.
    Koenigs { lambda: C64 },
    /// `φ ∘ f = φᵏ`, with `log|b|` normalising the leading term `a_k zᵏ`.
    Bottcher { degree: u32, log_scale: f64 },
}

impl Linearizer {
    pub fn of(f: &Polynomial) -> Option<Linearizer> {
        let lambda = f.multiplier_at_zero();
        if lambda.norm() >= 1.0 {
            return None;
        }
        if lambda.norm() > 1e-12 {
            return Some(Linearizer::Koenigs { lambda });
        }
        let c = f.coeffs();
        let (k, a) = (2..f.degree())
            .map(|k| (k, c[k - 1]))
            .find(|(_, a)| a.norm() > 1e-12)
            .unwrap_or((f.degree(), C64::new(1.0, 0.0)));
        Some(Linearizer::Bottcher { degree: k as u32, log_scale: a.norm().ln() / (k as f64 - 1.0) })
    }
}

/// Internal potential `u = log|φ(z)|` and `ψ = (log φ)′(z)` in the basin of 0.
pub fn internal_potential(f: &Polynomial, lin: Linearizer, z: C64) -> Option<(f64, C64)> {
    if z.norm() == 0.0 {
        return None;
    }
    let big = f.escape_radius();
    let mut w = z;
    let mut psi = 1.0 / z;
    for n in 0..5000 {
        if !(w.norm() < big) {
            return None;
        }
        if w.norm() < 1e-9 {
            return match lin {
                Linearizer::Koenigs { lambda } => Some((w.norm().ln() - n as f64 * lambda.norm().ln(), psi)),
                Linearizer::Bottcher { degree, log_scale } => {
                    let s = (degree as f64).powi(-(n as i32));
                    Some(((w.norm().ln() + log_scale) * s, psi))
                }
            };
        }
        let (fw, dfw) = f.eval_d(w);
        if fw.norm() == 0.0 {
            return None;
        }
        psi *= dfw * w / fw;
        if let Linearizer::Bottcher { degree, .. } = lin {
            psi /= degree as f64;
        }
        w = fw;
    }
    None
}

/// `Γ` with its depth-0 cell codes.
#[derive(Clone, Debug)]
pub struct PuzzleGraph {
    pub grid: Grid,
    pub outer_level: f64,
    /// Internal potential bounding `Ω₀`.
    pub inner_level: f64,
    pub linearizer: Linearizer,
    pub cycle: CycleRecord,
    pub angles: Vec<Angle>,
    pub external_tails: Vec<RayPath>,
    /// `γ_k` from the cycle point `z_k` into `Ω₀`.
    pub internal_rays: Vec<Vec<C64>>,
    pub cut_cells: Vec<u32>,
    /// Cells of `Ω₀` with a neighbour outside it.
    pub inner_boundary: Vec<u32>,
    /// Cut, inner and outer cells form one 4-connected set.
    pub connected: bool,
    pub depth0_count: usize,
    pub notes: Vec<String>,
    codes: Vec<u8>,
    labels: Vec<CellLabel>,
    crit: Vec<Root>,
    degree: usize,
}

impl PuzzleGraph {
    fn code_at(&self, z: C64) -> u8 {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return OUTER;
        }
        self.grid.index_of(z).map_or(OUTER, |i| self.codes[i])
    }

    pub fn is_cut(&self, idx: usize) -> bool {
        self.codes[idx] == CUT
    }

    pub fn in_inner(&self, idx: usize) -> bool {
        self.codes[idx] == INNER
    }

    /// Cells of `Ω ∖ Γ`.
    pub fn in_domain(&self, idx: usize) -> bool {
        self.codes[idx] < CUT
    }
}

/// Builds `Γ` for the basin of 0 on `raster`, bounded by the equipotential `outer_level`.
pub fn build_graph(f: &Polynomial, raster: &Raster, outer_level: f64, cycle_period_hint: usize) -> Result<PuzzleGraph, PuzzleError> {
    build_graph_with(f, raster, outer_level, cycle_period_hint, &PuzzleOptions::default())
}

pub fn build_graph_with(
    f: &Polynomial,
    raster: &Raster,
    outer_level: f64,
    cycle_period_hint: usize,
    opts: &PuzzleOptions,
) -> Result<PuzzleGraph, PuzzleError> {
    let g = raster.grid;
    let zb = raster.zero_basin().ok_or(PuzzleError::NotAttracting)?;
    let lin = Linearizer::of(f).ok_or(PuzzleError::NotAttracting)?;
    let keys: Vec<Option<u16>> = raster.labels.iter().map(|l| l.basin()).collect();
    let fatou = ComponentMap::from_keys(g, &keys);
    let u0 = fatou.component_of(C64::new(0.0, 0.0)).ok().flatten().ok_or(PuzzleError::NotAttracting)?;
    let in_u0: Vec<bool> = (0..g.len()).map(|i| fatou.label(i) == Some(u0)).collect();

    let u: Vec<f64> = map_cells(g.len(), |i| {
        if in_u0[i] {
            internal_potential(f, lin, g.center_of(i)).map_or(f64::NAN, |p| p.0)
        } else {
            f64::NAN
        }
    });
    let crit = critical_points(f).unwrap_or_default();
    let mut level = f64::NEG_INFINITY;
    for r in &crit {
        if !g.index_of(r.z).is_some_and(|i| in_u0[i]) {
            continue;
        }
        let Some((uc, _)) = internal_potential(f, lin, r.z) else { continue };
        let lifted = match lin {
            Linearizer::Koenigs { lambda } => uc - 0.5 * lambda.norm().ln(),
            Linearizer::Bottcher { degree, .. } => 0.5 * uc * (1.0 + 1.0 / degree as f64),
        };
        level = level.max(lifted);
    }
    let mut finite: Vec<f64> = u.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return Err(PuzzleError::NotAttracting);
    }
    finite.sort_by(f64::total_cmp);
    let inner_level = level.max(finite[finite.len() / 2]);
    let below: Vec<bool> = u.iter().map(|&x| x < inner_level).collect();
    let below_map = ComponentMap::from_mask(g, &below);
    let omega0 = g.index_of(C64::new(0.0, 0.0)).and_then(|i| below_map.label(i)).ok_or(PuzzleError::NotAttracting)?;
    let inner = below_map.mask(omega0);
    let inner_boundary = below_map.boundary_cells(omega0);

    let cycle = boundary_cycle(f, raster, &in_u0, cycle_period_hint, opts)?;
    let (angles, external_tails) = landing_tails(f, &cycle, outer_level, opts)?;
    let mut internal_rays = Vec::new();
    let z0 = cycle.points[0];
    let arc = internal_arc(f, raster, zb, lin, &inner, &cycle, opts.arc_samples).ok_or(PuzzleError::NoInternalArc(z0))?;
    for k in 0..cycle.period {
        internal_rays.push(arc.iter().map(|&z| f.iterate(z, k)).collect::<Vec<C64>>());
    }

    let mut cut = vec![false; g.len()];
    for path in external_tails.iter().map(|t| &t.points).chain(internal_rays.iter()) {
        for c in g.polyline_cells(path) {
            cut[c] = true;
        }
    }
    for t in &external_tails {
        if let (Some(&last), Ok(z)) = (t.points.last(), t.landing_point()) {
            for c in g.polyline_cells(&[last, z]) {
                cut[c] = true;
            }
        }
    }
    let petals: Vec<_> = raster.attractors.iter().filter(|a| a.is_parabolic()).flat_map(|a| a.petals.iter()).collect();
    let mut codes: Vec<u8> = map_cells(g.len(), |i| {
        let z = g.center_of(i);
        if inner[i] {
            return INNER;
        }
        if raster.labels[i].is_escaping() {
            let pot = if raster.potential[i] > 0.0 { raster.potential[i] } else { green_function(f, z, GREEN_MAX_ITER).unwrap_or(0.0) };
            if pot >= outer_level {
                return OUTER;
            }
        }
        if petals.iter().any(|p| p.contains(z)) {
            return PETAL;
        }
        if cut[i] {
            return CUT;
        }
        0
    });
    let dom: Vec<bool> = codes.iter().map(|&c| c < CUT).collect();
    let pieces = ComponentMap::from_mask(g, &dom);
    if pieces.count() > MAX_LABELS {
        return Err(PuzzleError::DepthBudget { depth: 0, reason: format!("{} depth-0 pieces", pieces.count()) });
    }
    for (i, c) in codes.iter_mut().enumerate() {
        if let Some(l) = pieces.label(i) {
            *c = l as u8;
        }
    }
    let rim: Vec<bool> = codes.iter().map(|&c| c == CUT || c == INNER || c == OUTER).collect();
    let connected = ComponentMap::from_mask(g, &rim).count() == 1;
    let mut notes = Vec::new();
    if !petals.is_empty() {
        notes.push(SURROGATE_CUTS.to_string());
    }
    let mut cut_cells: Vec<u32> = (0..g.len() as u32).filter(|&i| codes[i as usize] == CUT).collect();
    cut_cells.shrink_to_fit();
    Ok(PuzzleGraph {
        grid: g,
        outer_level,
        inner_level,
        linearizer: lin,
        cycle,
        angles,
        external_tails,
        internal_rays,
        cut_cells,
        inner_boundary,
        connected,
        depth0_count: pieces.count(),
        notes,
        codes,
        labels: raster.labels.clone(),
        crit,
        degree: f.degree(),
    })
}

/// Repelling cycle of period ≥ 2 whose points all lie within tolerance of the basin of 0,
/// preferring `hint` and then shorter periods.
fn boundary_cycle(f: &Polynomial, raster: &Raster, in_u0: &[bool], hint: usize, opts: &PuzzleOptions) -> Result<CycleRecord, PuzzleError> {
    let g = raster.grid;
    let tol = opts.cycle_tol_cells * g.cell_size();
    let r = opts.cycle_tol_cells.ceil() as usize + 1;
    let near = |z: C64| {
        g.index_of(z).is_some_and(|i| {
            g.neighborhood(i, r).into_iter().any(|c| in_u0[c] && (g.center_of(c) - z).norm() <= tol + 0.5 * g.cell_size())
        })
    };
    let mut found: Vec<CycleRecord> = find_cycles(f, &CycleSearch::new(f, opts.max_period.max(hint)))
        .into_iter()
        .filter(|c| c.period >= 2 && c.class == CycleClass::Repelling && c.points.iter().all(|&z| near(z)))
        .collect();
    // ties go to the cycle farthest from 0
    let reach = |c: &CycleRecord| c.points.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    found.sort_by(|a, b| (a.period != hint, a.period).cmp(&(b.period != hint, b.period)).then(reach(b).total_cmp(&reach(a))));
    found.into_iter().next().ok_or(PuzzleError::NoBoundaryCycle)
}

/// Angle cycles of period `p₀`, else `2p₀`, whose rays all land on the cycle.
fn landing_tails(f: &Polynomial, cycle: &CycleRecord, outer_level: f64, opts: &PuzzleOptions) -> Result<(Vec<Angle>, Vec<RayPath>), PuzzleError> {
    let d = f.degree() as u64;
    let mut misses: Vec<(String, f64)> = Vec::new();
    for p in [cycle.period, 2 * cycle.period] {
        let Ok(cycles) = periodic_angles(d, p as u32, 1 << 16) else { continue };
        let mut angles = Vec::new();
        let mut tails = Vec::new();
        for ac in cycles {
            let mut ok = true;
            let mut paths = Vec::new();
            for theta in &ac {
                let miss = match trace_external_ray(f, theta, outer_level + 0.1, opts.ray.landing_cutoff, &opts.ray) {
                    Ok(path) => match path.landing_point() {
                        Ok(z) => {
                            let m = cycle.distance(z);
                            paths.push(path);
                            m
                        }
                        Err(_) => f64::INFINITY,
                    },
                    Err(_) => f64::INFINITY,
                };
                if miss > opts.landing_tol {
                    misses.push((theta.to_string(), miss));
                    ok = false;
                    break;
                }
            }
            if ok {
                angles.extend(ac);
                tails.extend(paths);
            }
        }
        if !angles.is_empty() {
            return Ok((angles, tails));
        }
    }
    misses.sort_by(|a, b| a.1.total_cmp(&b.1));
    misses.truncate(4);
    Err(PuzzleError::NoLandingRays { nearest: misses })
}

/// Solves `f^p(v) = w` near the fixed point `z0` of `f^p` with multiplier `mu`.
fn pull_back(f: &Polynomial, z0: C64, mu: C64, p: usize, w: C64) -> Option<C64> {
    let mut v = z0 + (w - z0) / mu;
    for _ in 0..60 {
        let (g, dg) = f.iterate_d(v, p);
        if dg.norm() == 0.0 {
            return None;
        }
        let step = (g - w) / dg;
        if !(step.re.is_finite() && step.im.is_finite()) {
            return None;
        }
        v -= step;
        if step.norm() <= 1e-15 * (1.0 + v.norm()) {
            break;
        }
    }
    ((f.iterate(v, p) - w).norm() <= 1e-12 * (1.0 + w.norm())).then_some(v)
}

/// Fundamental segment from `w` to `f^p(w)` along which `log φ` moves on a straight line
/// (Koenigs) or `arg φ` is constant (Böttcher), integrated with RK4 in `t ∈ [0, 1]`.
fn koenigs_segment(f: &Polynomial, lin: Linearizer, w: C64, p: usize, samples: usize) -> Option<Vec<C64>> {
    let end = f.iterate(w, p);
    let (uw, _) = internal_potential(f, lin, w)?;
    let rates: Vec<Box<dyn Fn(f64) -> C64>> = match lin {
        Linearizer::Koenigs { lambda } => [0, -1, 1, -2, 2]
            .into_iter()
            .map(|m: i32| {
                let c = p as f64 * lambda.ln() + C64::new(0.0, TAU * m as f64);
                Box::new(move |_t: f64| c) as Box<dyn Fn(f64) -> C64>
            })
            .collect(),
        Linearizer::Bottcher { degree, .. } => {
            let kp = (degree as f64).powi(p as i32);
            vec![Box::new(move |t: f64| C64::new(uw * kp.ln() * kp.powf(t), 0.0))]
        }
    };
    let sub = 4;
    let h = 1.0 / (samples * sub) as f64;
    'rate: for rate in rates {
        let field = |z: C64, t: f64| internal_potential(f, lin, z).map(|(_, psi)| rate(t) / psi);
        let mut z = w;
        let mut out = vec![w];
        for s in 0..samples * sub {
            let t = s as f64 * h;
            let (Some(k1), ) = (field(z, t),) else { continue 'rate };
            let Some(k2) = field(z + 0.5 * h * k1, t + 0.5 * h) else { continue 'rate };
            let Some(k3) = field(z + 0.5 * h * k2, t + 0.5 * h) else { continue 'rate };
            let Some(k4) = field(z + h * k3, t + h) else { continue 'rate };
            z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (s + 1) % sub == 0 {
                out.push(z);
            }
        }
        if (z - end).norm() <= 1e-3 * (end - w).norm() {
            *out.last_mut().expect("non-empty") = end;
            return Some(out);
        }
    }
    None
}

/// An `f^{p₀}`-invariant arc in the basin from `z₀` into `Ω₀`: a fundamental segment from
/// `w` to `f^{p₀}(w)` with `|w − z₀| ≈ 10⁻⁶`, followed by its forward images until they lie
/// in `Ω₀`. The segment follows the Koenigs chart so that the potential decreases along
/// the arc, falling back to the spiral `z₀ + hμᵗ` of the linear chart at `z₀`. Every start
/// direction gives such an arc; the shortest is kept.
fn internal_arc(f: &Polynomial, raster: &Raster, zb: u16, lin: Linearizer, inner: &[bool], cycle: &CycleRecord, samples: usize) -> Option<Vec<C64>> {
    let g = raster.grid;
    let (z0, mu, p) = (cycle.points[0], cycle.multiplier, cycle.period);
    let rho = g.cell_size().min(1e-3);
    let lmu = mu.ln();
    let in_basin = |z: C64| raster.classify_point(f, z) == CellLabel::Basin(zb);
    let in_inner = |z: C64| g.index_of(z).is_some_and(|i| inner[i]);
    let mut best: Option<(f64, Vec<C64>)> = None;
    for a in 0..64 {
        let q = z0 + C64::from_polar(rho, TAU * a as f64 / 64.0);
        if !in_basin(q) {
            continue;
        }
        let mut w = q;
        let mut steps = 0;
        while (w - z0).norm() > 1e-6 && steps < 200 {
            match pull_back(f, z0, mu, p, w) {
                Some(v) => w = v,
                None => break,
            }
            steps += 1;
        }
        if (w - z0).norm() > 1e-6 {
            continue;
        }
        let sigma = koenigs_segment(f, lin, w, p, samples).unwrap_or_else(|| {
            let h = w - z0;
            (0..=samples).map(|s| z0 + h * (lmu * (s as f64 / samples as f64)).exp()).collect()
        });
        if !sigma.iter().all(|&z| in_basin(z)) {
            continue;
        }
        let mut path = vec![z0];
        path.extend(&sigma);
        let mut seg = sigma;
        for _ in 0..MAX_ARC_SEGMENTS {
            seg = seg.iter().map(|&z| f.iterate(z, p)).collect();
            path.extend(seg.iter().skip(1));
            if seg.iter().all(|&z| in_inner(z)) {
                let len: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
                if best.as_ref().is_none_or(|(b, _)| len < *b) {
                    best = Some((len, path));
                }
                break;
            }
            if seg.iter().any(|z| !(z.norm() < f.escape_radius())) {
                break;
            }
        }
    }
    best.map(|b| b.1)
}

/// Why an orbit left the puzzle domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Cut,
    Inner,
    Outer,
    Petal,
}

fn exit_of(code: u8) -> Option<Exit> {
    match code {
        CUT => Some(Exit::Cut),
        INNER => Some(Exit::Inner),
        OUTER => Some(Exit::Outer),
        PETAL => Some(Exit::Petal),
        _ => None,
    }
}

/// A piece, either a component of the depth raster or a piece below raster resolution,
/// known only by its key and a point inside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum PieceRef {
    Cells { id: u32 },
    Sub { key: u128, at: C64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzlePiece {
    pub depth: usize,
    pub id: u32,
    pub cells: usize,
    pub diameter: f64,
    pub critical: Vec<Root>,
    pub touches_basin: bool,
    pub touches_escaping: bool,
    /// Boundary cell centres next to a cut of depth at most `depth`.
    pub marked_boundary_points: Vec<C64>,
}

impl PuzzlePiece {
    pub fn degree(&self) -> usize {
        1 + self.critical.iter().map(|r| r.multiplicity).sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestPiece {
    pub depth: usize,
    pub piece: PieceRef,
    pub diameter: f64,
    pub diameter_cells: f64,
    /// Critical points, with multiplicity, in the piece.
    pub critical: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum NestEnd {
    MaxDepth,
    /// The target's orbit left the domain, so there is no piece at this depth.
    LeftDomain { depth: usize, exit: Exit },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nest {
    pub target: C64,
    pub pieces: Vec<NestPiece>,
    pub end: NestEnd,
    pub critical_nest: bool,
    /// The deepest piece is under 3 cells across.
    pub shrinking: bool,
    /// `deg(fⁿ|P_n)` per depth.
    pub degree_sequence: Vec<u64>,
}

impl Nest {
    pub fn depth(&self) -> usize {
        self.pieces.len().saturating_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstEntry {
    /// Depth of the target piece.
    pub k: usize,
    pub r: usize,
    pub degree: u64,
    /// `degree ≤ d^{d−1}`.
    pub within_bound: bool,
    /// The orbit pieces `P_{r+k}, …, f^{r−1}(P_{r+k})` are pairwise disjoint after erosion.
    pub disjoint: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum BoundedDegree {
    Witnessed { bound: u64, depths: Vec<usize> },
    Unwitnessed,
}

/// Witnessed when the degree sequence ends in a plateau of at least 5 depths.
pub fn bounded_degree_evidence(nest: &Nest) -> BoundedDegree {
    let s = &nest.degree_sequence;
    let Some(&last) = s.last() else { return BoundedDegree::Unwitnessed };
    let start = s.iter().rposition(|&x| x != last).map_or(0, |i| i + 1);
    if s.len() - start >= 5 {
        BoundedDegree::Witnessed { bound: last, depths: (start..s.len()).collect() }
    } else {
        BoundedDegree::Unwitnessed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElevatorEvidence {
    pub entries: Vec<FirstEntry>,
    /// `(k, k + r)` with `P_{k+r}` compactly inside `P_k`.
    pub compact_pairs: Vec<(usize, usize)>,
    pub bounded: BoundedDegree,
    pub witnessed: bool,
}

/// Keys and exit depths of every cell, with the components of each depth.
pub struct Puzzle<'a> {
    pub f: &'a Polynomial,
    pub graph: &'a PuzzleGraph,
    pub max_depth: usize,
    keys: Vec<u128>,
    exit_depth: Vec<u8>,
    exit_code: Vec<u8>,
    maps: Vec<ComponentMap>,
    diam: Vec<Vec<f64>>,
    crit_refs: Vec<Vec<Option<PieceRef>>>,
    /// Cut cells over cells of `Ω` per depth.
    pub cut_fraction: Vec<f64>,
}

fn key_mask(n: usize) -> u128 {
    if n + 1 >= 16 {
        u128::MAX
    } else {
        (1u128 << (8 * (n + 1))) - 1
    }
}

impl<'a> Puzzle<'a> {
    pub fn new(f: &'a Polynomial, graph: &'a PuzzleGraph, max_depth: usize) -> Result<Puzzle<'a>, PuzzleError> {
        if max_depth > MAX_KEY_DEPTH {
            return Err(PuzzleError::DepthBudget { depth: max_depth, reason: format!("keys hold {} depths", MAX_KEY_DEPTH + 1) });
        }
        let g = graph.grid;
        let per: Vec<(u128, u8, u8)> = map_cells(g.len(), |i| {
            let mut z = g.center_of(i);
            let mut key = 0u128;
            for j in 0..=max_depth {
                let c = graph.code_at(z);
                if c >= CUT {
                    return (key, j as u8, c);
                }
                key |= (c as u128) << (8 * j);
                z = f.eval(z);
            }
            (key, max_depth as u8 + 1, 0)
        });
        let keys: Vec<u128> = per.iter().map(|p| p.0).collect();
        let exit_depth: Vec<u8> = per.iter().map(|p| p.1).collect();
        let exit_code: Vec<u8> = per.iter().map(|p| p.2).collect();
        drop(per);
        let omega = graph.codes.iter().filter(|&&c| c <= CUT).count().max(1);
        let mut maps = Vec::new();
        let mut diam = Vec::new();
        let mut cut_fraction = Vec::new();
        for n in 0..=max_depth {
            let cut = (0..g.len()).filter(|&i| exit_depth[i] as usize <= n && exit_code[i] == CUT).count();
            let frac = cut as f64 / omega as f64;
            if frac > 0.5 {
                return Err(PuzzleError::DepthBudget { depth: n, reason: format!("cut fraction {frac:.3}") });
            }
            cut_fraction.push(frac);
            let m = key_mask(n);
            let k: Vec<Option<u128>> = (0..g.len()).map(|i| (exit_depth[i] as usize > n).then(|| keys[i] & m)).collect();
            let map = ComponentMap::from_keys(g, &k);
            diam.push((0..map.count() as u32).map(|id| map.region_metrics(id).map_or(0.0, |r| r.diameter)).collect());
            maps.push(map);
        }
        let mut pz = Puzzle { f, graph, max_depth, keys, exit_depth, exit_code, maps, diam, crit_refs: Vec::new(), cut_fraction };
        pz.crit_refs = (0..=max_depth)
            .map(|n| {
                graph
                    .crit
                    .iter()
                    .map(|r| match pz.locate(r.z, n, None) {
                        Located::Piece(p) => Some(p),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        Ok(pz)
    }

    pub fn map(&self, depth: usize) -> &ComponentMap {
        &self.maps[depth]
    }

    pub fn piece_count(&self, depth: usize) -> usize {
        self.maps[depth].count()
    }

    /// Depth-`depth − 1` pieces met by the cells of a depth-`depth` piece.
    pub fn parents(&self, depth: usize, id: u32) -> Vec<u32> {
        assert!(depth >= 1 && depth <= self.max_depth);
        let mut out: Vec<u32> = self.maps[depth].cells(id).iter().filter_map(|&c| self.maps[depth - 1].label(c as usize)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Depth at which the orbit of the cell centre leaves the domain, and why.
    pub fn cell_exit(&self, idx: usize) -> Option<(usize, Exit)> {
        exit_of(self.exit_code[idx]).map(|e| (self.exit_depth[idx] as usize, e))
    }

    fn point_key(&self, z: C64, n: usize) -> Result<u128, (usize, Exit)> {
        let mut w = z;
        let mut key = 0u128;
        for j in 0..=n {
            let c = self.graph.code_at(w);
            if let Some(e) = exit_of(c) {
                return Err((j, e));
            }
            key |= (c as u128) << (8 * j);
            w = self.f.eval(w);
        }
        Ok(key)
    }

    fn locate(&self, z: C64, n: usize, within: Option<u32>) -> Located {
        let key = match self.point_key(z, n) {
            Ok(k) => k,
            Err((j, Exit::Cut)) => return Located::OnGraph(j),
            Err((_, e)) => return Located::Exit(e),
        };
        let g = self.graph.grid;
        let m = key_mask(n);
        let Some(home) = g.index_of(z) else { return Located::Exit(Exit::Outer) };
        let mut best: Option<(f64, usize)> = None;
        for c in g.neighborhood(home, SEARCH_CELLS) {
            if self.exit_depth[c] as usize <= n || self.keys[c] & m != key {
                continue;
            }
            if let Some(p) = within {
                if n == 0 || self.maps[n - 1].label(c) != Some(p) {
                    continue;
                }
            }
            let dist = (g.center_of(c) - z).norm();
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, c));
            }
        }
        match best {
            Some((_, c)) => Located::Piece(PieceRef::Cells { id: self.maps[n].label(c).expect("domain cell") }),
            None => Located::Piece(PieceRef::Sub { key, at: z }),
        }
    }

    fn same_piece(&self, a: &PieceRef, b: &PieceRef) -> bool {
        match (a, b) {
            (PieceRef::Cells { id: x }, PieceRef::Cells { id: y }) => x == y,
            (PieceRef::Sub { key: k1, at: a1 }, PieceRef::Sub { key: k2, at: a2 }) => {
                k1 == k2 && (a1 - a2).norm() <= SEARCH_CELLS as f64 * self.graph.grid.cell_size()
            }
            _ => false,
        }
    }

    /// Critical points, with multiplicity, in a piece of depth `n`.
    fn critical_in(&self, n: usize, p: &PieceRef) -> usize {
        self.graph
            .crit
            .iter()
            .zip(&self.crit_refs[n])
            .filter(|(_, q)| q.as_ref().is_some_and(|q| self.same_piece(q, p)))
            .map(|(r, _)| r.multiplicity)
            .sum()
    }

    fn diameter_of(&self, n: usize, p: &PieceRef) -> f64 {
        match p {
            PieceRef::Cells { id } => self.diam[n][*id as usize],
            PieceRef::Sub { .. } => 0.0,
        }
    }

    pub fn pieces(&self, depth: usize) -> Vec<PuzzlePiece> {
        let map = &self.maps[depth];
        let g = self.graph.grid;
        (0..map.count() as u32)
            .map(|id| {
                let p = PieceRef::Cells { id };
                let critical = self
                    .graph
                    .crit
                    .iter()
                    .zip(&self.crit_refs[depth])
                    .filter(|(_, q)| q.as_ref().is_some_and(|q| self.same_piece(q, &p)))
                    .map(|(r, _)| *r)
                    .collect();
                let mut touches_basin = false;
                let mut touches_escaping = false;
                let mut marked = Vec::new();
                for &b in &map.boundary_cells(id) {
                    for nb in g.neighbors4(b as usize) {
                        if map.label(nb) == Some(id) {
                            continue;
                        }
                        match self.graph.labels[nb] {
                            CellLabel::Basin(_) => touches_basin = true,
                            CellLabel::Escaping(_) => touches_escaping = true,
                            _ => {}
                        }
                        if marked.len() < 16 && self.exit_code[nb] == CUT && self.exit_depth[nb] as usize <= depth {
                            marked.push(g.center_of(b as usize));
                        }
                    }
                }
                marked.dedup();
                PuzzlePiece {
                    depth,
                    id,
                    cells: map.size(id),
                    diameter: self.diam[depth][id as usize],
                    critical,
                    touches_basin,
                    touches_escaping,
                    marked_boundary_points: marked,
                }
            })
            .collect()
    }

    /// `deg(fⁿ|P)` for the depth-`n` piece `p` containing `z`, from the pieces of `f^j(z)`.
    fn orbit_degree(&self, z: C64, n: usize, p: &PieceRef) -> u64 {
        let mut deg = 1u64;
        let mut w = z;
        for j in 0..n {
            let q = if j == 0 {
                Some(*p)
            } else {
                match self.locate(w, n - j, None) {
                    Located::Piece(q) => Some(q),
                    _ => None,
                }
            };
            if let Some(q) = q {
                deg = deg.saturating_mul(1 + self.critical_in(n - j, &q) as u64);
            }
            w = self.f.eval(w);
        }
        deg
    }

    pub fn nest_of_point(&self, z: C64, max_depth: usize) -> Result<Nest, PuzzleError> {
        let max_depth = max_depth.min(self.max_depth);
        let cell = self.graph.grid.cell_size();
        let mut pieces: Vec<NestPiece> = Vec::new();
        let mut end = NestEnd::MaxDepth;
        let mut prev: Option<u32> = None;
        for n in 0..=max_depth {
            let within = if n == 0 { None } else { prev };
            let located = match (n, pieces.last().map(|p| p.piece)) {
                (_, Some(PieceRef::Sub { .. })) => match self.point_key(z, n) {
                    Ok(key) => Located::Piece(PieceRef::Sub { key, at: z }),
                    Err((j, Exit::Cut)) => Located::OnGraph(j),
                    Err((_, e)) => Located::Exit(e),
                },
                _ => self.locate(z, n, within),
            };
            match located {
                Located::OnGraph(j) => return Err(PuzzleError::OnGraph { depth: j }),
                Located::Exit(e) => {
                    if n == 0 {
                        return Err(PuzzleError::NotInDomain);
                    }
                    end = NestEnd::LeftDomain { depth: n, exit: e };
                    break;
                }
                Located::Piece(p) => {
                    prev = match p {
                        PieceRef::Cells { id } => Some(id),
                        PieceRef::Sub { .. } => None,
                    };
                    let diameter = self.diameter_of(n, &p);
                    pieces.push(NestPiece { depth: n, piece: p, diameter, diameter_cells: diameter / cell, critical: self.critical_in(n, &p) });
                }
            }
        }
        let degree_sequence = pieces.iter().map(|p| self.orbit_degree(z, p.depth, &p.piece)).collect();
        let critical_nest = !pieces.is_empty() && pieces.iter().all(|p| p.critical > 0);
        let shrinking = pieces.last().is_some_and(|p| p.diameter_cells < 3.0);
        Ok(Nest { target: z, pieces, end, critical_nest, shrinking, degree_sequence })
    }

    /// Least `r ≥ 1` with `f^r(P_{r+k}) = Q` for the depth-`k` piece `target`.
    pub fn first_entry_time(&self, nest: &Nest, target: &PuzzlePiece) -> Result<Option<FirstEntry>, PuzzleError> {
        let k = target.depth;
        if nest.pieces.len() < k + 2 {
            return Err(PuzzleError::InsufficientDepth { have: nest.depth(), need: k + 1 });
        }
        let goal = PieceRef::Cells { id: target.id };
        let g = self.graph.grid;
        for r in 1..nest.pieces.len() - k {
            let w = self.f.iterate(nest.target, r);
            match self.locate(w, k, None) {
                Located::Piece(q) if self.same_piece(&q, &goal) => {}
                _ => continue,
            }
            let src = nest.pieces[r + k].piece;
            if let PieceRef::Cells { id } = src {
                let cells = self.maps[r + k].cells(id);
                let stride = (cells.len() / 512).max(1);
                let (mut hit, mut other) = (0usize, 0usize);
                for &c in cells.iter().step_by(stride) {
                    let img = g.index_of(self.f.iterate(g.center_of(c as usize), r)).and_then(|i| self.maps[k].label(i));
                    match img {
                        Some(l) if l == target.id => hit += 1,
                        Some(_) => other += 1,
                        None => {}
                    }
                }
                if hit < other {
                    continue;
                }
            }
            // orbit pieces f^j(P_{r+k}) at depth r+k−j
            let mut orbit = vec![src];
            let mut z = nest.target;
            for j in 1..r {
                z = self.f.eval(z);
                if let Located::Piece(q) = self.locate(z, r + k - j, None) {
                    orbit.push(q);
                }
            }
            let d = self.graph.degree as u64;
            let degree = self.orbit_degree(nest.target, r + k, &src) / self.tail_degree(nest.target, r, k);
            let bound = d.pow(self.graph.degree as u32 - 1);
            let disjoint = self.disjoint(&orbit, r + k);
            return Ok(Some(FirstEntry { k, r, degree, within_bound: degree <= bound, disjoint }));
        }
        Ok(None)
    }

    /// `deg(f^k|Q)` for the depth-`k` piece of `f^r(z)`, the factor of `deg(f^{r+k}|P_{r+k})`
    /// beyond `f^r`.
    fn tail_degree(&self, z: C64, r: usize, k: usize) -> u64 {
        let w = self.f.iterate(z, r);
        match self.locate(w, k, None) {
            Located::Piece(q) => self.orbit_degree(w, k, &q).max(1),
            _ => 1,
        }
    }

    fn disjoint(&self, orbit: &[PieceRef], top: usize) -> bool {
        let g = self.graph.grid;
        let mut owner: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
        for (j, p) in orbit.iter().enumerate() {
            let PieceRef::Cells { id } = p else { continue };
            let map = &self.maps[top - j];
            for &c in map.cells(*id) {
                let interior = g.neighbors4(c as usize).count() == 4 && g.neighbors4(c as usize).all(|n| map.label(n) == Some(*id));
                if !interior {
                    continue;
                }
                if let Some(&o) = owner.get(&c) {
                    if o != j {
                        return false;
                    }
                } else {
                    owner.insert(c, j);
                }
            }
        }
        true
    }

    /// Returns of the nest to its own pieces, with bounded-degree evidence.
    pub fn elevator_evidence(&self, nest: &Nest) -> ElevatorEvidence {
        let g = self.graph.grid;
        let mut entries = Vec::new();
        let mut compact_pairs = Vec::new();
        for k in 0..nest.pieces.len().saturating_sub(1) {
            let PieceRef::Cells { id } = nest.pieces[k].piece else { break };
            let target = PuzzlePiece {
                depth: k,
                id,
                cells: self.maps[k].size(id),
                diameter: self.diam[k][id as usize],
                critical: Vec::new(),
                touches_basin: false,
                touches_escaping: false,
                marked_boundary_points: Vec::new(),
            };
            let Ok(Some(e)) = self.first_entry_time(nest, &target) else { continue };
            entries.push(e);
            let outer = &self.maps[k];
            let boundary: std::collections::HashSet<u32> = outer.boundary_cells(id).into_iter().collect();
            let inner_cells: Vec<u32> = match nest.pieces[k + e.r].piece {
                PieceRef::Cells { id: j } => self.maps[k + e.r].cells(j).to_vec(),
                PieceRef::Sub { at, .. } => g.index_of(at).map(|i| vec![i as u32]).unwrap_or_default(),
            };
            if !inner_cells.is_empty() && inner_cells.iter().all(|c| outer.label(*c as usize) == Some(id) && !boundary.contains(c)) {
                compact_pairs.push((k, k + e.r));
            }
        }
        let bounded = bounded_degree_evidence(nest);
        let witnessed = matches!(bounded, BoundedDegree::Witnessed { .. }) && entries.len() >= 3 && !compact_pairs.is_empty();
        ElevatorEvidence { entries, compact_pairs, bounded, witnessed }
    }

    pub fn report(&self) -> PuzzleReport {
        let d = self.graph.degree;
        let depth1 = (self.max_depth >= 1).then(|| self.pieces(1).iter().map(|p| p.degree()).sum::<usize>());
        PuzzleReport {
            cycle: self.graph.cycle.clone(),
            angles: self.graph.angles.iter().map(|a| a.to_string()).collect(),
            outer_level: self.graph.outer_level,
            inner_level: self.graph.inner_level,
            connected: self.graph.connected,
            piece_counts: (0..=self.max_depth).map(|n| self.maps[n].count()).collect(),
            cut_fraction: self.cut_fraction.clone(),
            depth1_degree_sum: depth1,
            depth1_expected: d * self.maps[0].count(),
            notes: self.graph.notes.clone(),
        }
    }
}

enum Located {
    Piece(PieceRef),
    OnGraph(usize),
    Exit(Exit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzleReport {
    pub cycle: CycleRecord,
    pub angles: Vec<String>,
    pub outer_level: f64,
    pub inner_level: f64,
    pub connected: bool,
    pub piece_counts: Vec<usize>,
    pub cut_fraction: Vec<f64>,
    /// `Σ deg(f|P)` over depth-1 pieces, reported against `d` times the depth-0 count.
    pub depth1_degree_sum: Option<usize>,
    pub depth1_expected: usize,
    pub notes: Vec<String>,
}

/// Pieces of depth `depth`.
pub fn pieces_at_depth(f: &Polynomial, graph: &PuzzleGraph, depth: usize) -> Result<Vec<PuzzlePiece>, PuzzleError> {
    Ok(Puzzle::new(f, graph, depth)?.pieces(depth))
}

/// `Shape(U, x)`: largest over smallest distance from `x` to the boundary cells of `mask`.
pub fn shape_of(grid: Grid, mask: &[bool], x: C64) -> Result<f64, PuzzleError> {
    let home = grid.index_of(x).ok_or(PuzzleError::NotInterior)?;
    if !mask[home] {
        return Err(PuzzleError::NotInterior);
    }
    let on_edge = |c: usize| {
        let (i, j) = grid.coords(c);
        i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.ny || grid.neighbors4(c).any(|n| !mask[n])
    };
    if on_edge(home) {
        return Err(PuzzleError::NotInterior);
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for c in (0..grid.len()).filter(|&c| mask[c] && on_edge(c)) {
        let r = (grid.center_of(c) - x).norm();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !(lo > 0.0 && lo.is_finite()) {
        return Err(PuzzleError::NotInterior);
    }
    Ok(hi / lo)
}

/// [`shape_of`] for a component of a [`ComponentMap`].
pub fn shape_of_component(map: &ComponentMap, id: u32, x: C64) -> Result<f64, PuzzleError> {
    shape_of(map.grid, &map.mask(id), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::raster::{classify_grid, ClassifyOptions};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn disk(n: usize, r: f64) -> (Grid, Vec<bool>) {
        let g = Grid::new(Rect::centered_square(1.0), n, n).unwrap();
        let m = (0..g.len()).map(|i| g.center_of(i).norm() < r).collect();
        (g, m)
    }

    #[test]
    fn shape_of_disk() {
        let (g, m) = disk(256, 0.8);
        let r_cells = 0.8 / g.cell_size();
        let s = shape_of(g, &m, c(0.0, 0.0)).unwrap();
        assert!((s - 1.0).abs() < 2.0 / r_cells, "{s}");
        let s = shape_of(g, &m, c(0.4, 0.0)).unwrap();
        assert!((s - 3.0).abs() < 0.15, "{s}");
        assert_eq!(shape_of(g, &m, c(0.95, 0.0)), Err(PuzzleError::NotInterior));
    }

    #[test]
    fn potential_is_equivariant() {
        let f = Polynomial::new(3, vec![c(0.5, 0.0), c(0.0, 0.0)]).unwrap();
        let lin = Linearizer::of(&f).unwrap();
        let z = c(0.1, 0.6);
        let (u, psi) = internal_potential(&f, lin, z).unwrap();
        let (u1, _) = internal_potential(&f, lin, f.eval(z)).unwrap();
        assert!((u1 - u - 0.5f64.ln()).abs() < 1e-8);
        let h = 1e-6;
        let (uh, _) = internal_potential(&f, lin, z + h).unwrap();
        assert!(((uh - u) / h - psi.re).abs() < 1e-4);
        let g = Polynomial::monomial(3).unwrap();
        let lin = Linearizer::of(&g).unwrap();
        let (u, psi) = internal_potential(&g, lin, c(0.3, 0.4)).unwrap();
        assert!((u - 0.5f64.ln()).abs() < 1e-12);
        assert!((psi - 1.0 / c(0.3, 0.4)).norm() < 1e-12);
    }

    #[test]
    fn cubic_smoke_graph() {
        let f = Polynomial::monomial(3).unwrap();
        let g = Grid::new(Rect::centered_square(2.0), 256, 256).unwrap();
        let raster = classify_grid(&f, g, ClassifyOptions::default());
        let graph = build_graph(&f, &raster, 0.5, 2).unwrap();
        assert_eq!(graph.cycle.period, 2);
        assert_eq!(graph.external_tails.len(), 2);
        assert_eq!(graph.internal_rays.len(), 2);
        assert!(graph.connected);
        let pz = Puzzle::new(&f, &graph, 2).unwrap();
        assert_eq!(pz.piece_count(0), 2);
        for p in pz.pieces(0) {
            assert!(p.touches_escaping);
        }
    }
}
