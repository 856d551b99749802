//! Level-k Fatou trees `X₀ᵏ ⊂ X₁ᵏ ⊂ …` grown on a classified raster, the level `k(f)`,
//! and the maximality test against the filled Julia set.
//!
//! Growth works on whole Fatou components rather than on cells: a component `V` joins
//! stage `n+1` when its image component is already in the tree and `V` meets the tree
//! at a pinch point. Pinch points are the critical and parabolic seeds of the level and
//! their iterated preimages near the tree, computed by root finding. Cell-wise preimage
//! dilation leaks through the Julia-set fuzz, which this avoids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{aberth_raw, critical_points, Polynomial, Root};
use crate::raster::{CellLabel, ComponentMap, Grid, Raster};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("0 is not attracting (|λ| = {0})")]
    NotAttracting(f64),
    #[error("no basin component contains 0 on this raster")]
    NoBasin,
    #[error("level {level} needs the tree of level {}", level - 1)]
    MissingPrevious { level: usize },
    #[error("not in Y_{level}: no critical or parabolic point within tolerance of the tree")]
    NotInY { level: usize, evidence: Vec<SeedEvidence> },
}

/// Distance of a critical or parabolic point to a tree, reported with `NotInY`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEvidence {
    pub point: C64,
    pub kind: SeedKind,
    /// Distance to the nearest tree cell, in cell widths.
    pub distance_cells: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKind {
    Critical,
    Parabolic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    /// Tolerance for "on the boundary of the tree", in cell widths.
    pub boundary_tol_cells: f64,
    /// Largest bounded-cell fraction outside the tree for an `equal` verdict.
    pub defect_tol: f64,
    /// A component counts as resolved near a point when it has at least this many cells.
    pub resolved_cells: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { boundary_tol_cells: 2.0, defect_tol: 0.02, resolved_cells: 9 }
    }
}

/// A point at which the tree was seeded or absorbed a critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub point: C64,
    pub kind: SeedKind,
    pub multiplicity: usize,
    pub distance_cells: f64,
    /// Set for critical points met by a resolved stage component during growth. Such a
    /// point lies in a stage rather than in the limit set only.
    pub in_stage: bool,
}

/// Where a new component met the tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Touch {
    pub stage: usize,
    pub component: u32,
    pub tree_component: u32,
    pub at: C64,
}

/// A pinch point with the directions along which thin cusps of components reach it
/// (repelling axes of a parabolic point, pulled back to its preimages).
#[derive(Clone, Debug, PartialEq)]
struct Pinch {
    z: C64,
    dirs: Vec<C64>,
}

/// The seed set `X₀ᵏ` of a level.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSeed {
    pub level: usize,
    pub components: Vec<u32>,
    /// Parabolic layers `U₁ᵏ, …, U_{nᵏ}ᵏ` as component lists.
    pub layers: Vec<Vec<u32>>,
    pub seeds: Vec<Seed>,
    pinch: Vec<Pinch>,
    used: Vec<C64>,
}

impl TreeSeed {
    pub fn n_k(&self) -> usize {
        self.layers.len()
    }
}

/// A grown tree of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct FatouTree {
    pub level: usize,
    /// Components added at each stage; stage 0 is `X₀ᵏ`.
    pub stages: Vec<Vec<u32>>,
    pub layers: Vec<Vec<u32>>,
    pub seeds: Vec<Seed>,
    pub adjacency: Vec<Touch>,
    pub pinch_points: Vec<C64>,
    /// Whether growth stopped because a stage added nothing.
    pub fixed_point: bool,
    in_tree: Vec<bool>,
    used: Vec<C64>,
    pinch: Vec<Pinch>,
}

impl FatouTree {
    pub fn contains_component(&self, id: u32) -> bool {
        self.in_tree.get(id as usize).copied().unwrap_or(false)
    }

    pub fn components(&self) -> impl Iterator<Item = u32> + '_ {
        self.stages.iter().flatten().copied()
    }

    pub fn component_count(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    /// In a tree component or at a pinch point.
    Inside,
    /// Within the boundary tolerance of the tree.
    OnBoundary,
    /// Bounded, away from the tree.
    Outside,
    Escaping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalCoverage {
    pub point: C64,
    pub multiplicity: usize,
    pub coverage: Coverage,
    /// Level of the first tree that covers the point.
    pub level: Option<usize>,
    pub distance_cells: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maximality {
    Equal,
    NotEqual,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub stages: usize,
    pub components: usize,
    pub cells: usize,
    pub pinch_points: usize,
    pub seeds: Vec<Seed>,
    pub fixed_point: bool,
    /// Critical points with multiplicity inside or on the boundary of this tree.
    pub critical_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParameters {
    pub grid: Grid,
    pub budget: u32,
    pub max_level: usize,
    pub max_stages: usize,
    pub options: TreeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeLevelReport {
    pub k_of_f: usize,
    pub n_k: Vec<usize>,
    pub critical_coverage: Vec<CriticalCoverage>,
    pub maximality: Maximality,
    pub defect_fraction: f64,
    pub parameters: TreeParameters,
    pub levels: Vec<LevelSummary>,
    /// Why the next level failed, when it did.
    pub stopped_by: Option<Vec<SeedEvidence>>,
    pub notes: Vec<String>,
}

pub const SURROGATE_NOTE: &str =
    "parabolic basins are captured through petal disks; Fatou-coordinate equipotentials are not traced";

/// Fatou components of a raster with their images, shared by all levels.
pub struct TreeWorkspace<'a> {
    pub f: &'a Polynomial,
    pub raster: &'a Raster,
    /// 4-connected components of equal basin labels.
    pub fatou: ComponentMap,
    pub options: TreeOptions,
    image_of: Vec<Option<u32>>,
    crit: Vec<Root>,
    basin_of: Vec<u16>,
}

impl<'a> TreeWorkspace<'a> {
    pub fn new(f: &'a Polynomial, raster: &'a Raster, options: TreeOptions) -> TreeWorkspace<'a> {
        let grid = raster.grid;
        let keys: Vec<Option<u16>> = raster.labels.iter().map(|l| l.basin()).collect();
        let fatou = ComponentMap::from_keys(grid, &keys);
        let basin_of = (0..fatou.count() as u32)
            .map(|id| raster.labels[fatou.cells(id)[0] as usize].basin().expect("basin cell"))
            .collect();
        // majority vote over the images of cell centres
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for idx in 0..grid.len() {
            let Some(a) = fatou.label(idx) else { continue };
            let w = f.eval(grid.center_of(idx));
            if let Some(b) = grid.index_of(w).and_then(|j| fatou.label(j)) {
                pairs.push((a, b));
            }
        }
        pairs.sort_unstable();
        let mut image_of = vec![None; fatou.count()];
        let mut best = vec![0usize; fatou.count()];
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i;
            while j < pairs.len() && pairs[j] == pairs[i] {
                j += 1;
            }
            let (a, b) = pairs[i];
            if j - i > best[a as usize] {
                best[a as usize] = j - i;
                image_of[a as usize] = Some(b);
            }
            i = j;
        }
        let crit = critical_points(f).unwrap_or_default();
        TreeWorkspace { f, raster, fatou, options, image_of, crit, basin_of }
    }

    pub fn grid(&self) -> Grid {
        self.raster.grid
    }

    pub fn critical_points(&self) -> &[Root] {
        &self.crit
    }

    /// Component the majority of a component's cells map into.
    pub fn image_of(&self, id: u32) -> Option<u32> {
        self.image_of[id as usize]
    }

    fn tol(&self) -> f64 {
        self.options.boundary_tol_cells * self.grid().cell_size()
    }

    fn window(&self) -> usize {
        self.options.boundary_tol_cells.ceil() as usize + 1
    }

    /// Distance from `z` to the nearest cell (as a square) of a component accepted by
    /// `keep`, searched within the tolerance window; `∞` if none.
    fn distance_to(&self, z: C64, keep: impl Fn(u32) -> bool) -> f64 {
        let g = self.grid();
        let (x, y) = g.continuous(z);
        let r = self.window() as i64;
        let (ci, cj) = (x.floor() as i64, y.floor() as i64);
        let mut best = f64::INFINITY;
        for j in (cj - r).max(0)..=(cj + r).min(g.ny as i64 - 1) {
            for i in (ci - r).max(0)..=(ci + r).min(g.nx as i64 - 1) {
                let idx = g.index(i as usize, j as usize);
                let Some(c) = self.fatou.label(idx) else { continue };
                if !keep(c) {
                    continue;
                }
                let dx = (x - (i as f64 + 0.5)).abs() - 0.5;
                let dy = (y - (j as f64 + 0.5)).abs() - 0.5;
                let d = (dx.max(0.0) * g.cell_w()).hypot(dy.max(0.0) * g.cell_h());
                best = best.min(d);
            }
        }
        best
    }

    fn components_near(&self, z: C64) -> Vec<u32> {
        let g = self.grid();
        let (x, y) = g.continuous(z);
        let r = self.window() as i64;
        let (ci, cj) = (x.floor() as i64, y.floor() as i64);
        let mut out = Vec::new();
        for j in (cj - r).max(0)..=(cj + r).min(g.ny as i64 - 1) {
            for i in (ci - r).max(0)..=(ci + r).min(g.nx as i64 - 1) {
                if let Some(c) = self.fatou.label(g.index(i as usize, j as usize)) {
                    let dx = ((x - (i as f64 + 0.5)).abs() - 0.5).max(0.0) * g.cell_w();
                    let dy = ((y - (j as f64 + 0.5)).abs() - 0.5).max(0.0) * g.cell_h();
                    if dx.hypot(dy) <= self.tol() {
                        out.push(c);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Walks from `z` along `dir` while sample points stay in one basin, returning the
    /// first resolved component of that basin reached.
    fn walk(&self, z: C64, dir: C64) -> Option<u32> {
        let g = self.grid();
        let step = 0.5 * g.cell_size();
        let mut basin: Option<u16> = None;
        for k in 1..=AXIS_STEPS {
            let q = z + dir * (k as f64 * step);
            let idx = g.index_of(q)?;
            let b = self.raster.classify_point(self.f, q).basin()?;
            if *basin.get_or_insert(b) != b {
                return None;
            }
            if let Some(c) = self.fatou.label(idx) {
                if self.basin_of[c as usize] == b && self.fatou.size(c) >= self.options.resolved_cells {
                    return Some(c);
                }
            }
        }
        None
    }

    fn pinch_components(&self, p: &Pinch) -> Vec<u32> {
        let mut out = self.components_near(p.z);
        for &v in &p.dirs {
            if let Some(c) = self.walk(p.z, v) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn repelling_dirs(&self, p: C64) -> Vec<C64> {
        self.raster
            .attractors
            .iter()
            .flat_map(|a| a.petals.iter())
            .find(|pt| (pt.point - p).norm() <= 1e-6 * (1.0 + p.norm()))
            .map(|pt| pt.repelling_directions())
            .unwrap_or_default()
    }

    /// The component of basin-of-0 cells containing 0.
    pub fn immediate_basin(&self) -> Result<u32, TreeError> {
        let lambda = self.f.multiplier_at_zero().norm();
        if lambda >= 1.0 {
            return Err(TreeError::NotAttracting(lambda));
        }
        let zb = self.raster.zero_basin().ok_or(TreeError::NoBasin)?;
        let idx = self.grid().index_of(C64::new(0.0, 0.0)).ok_or(TreeError::NoBasin)?;
        match (self.raster.labels[idx], self.fatou.label(idx)) {
            (CellLabel::Basin(b), Some(c)) if b == zb => Ok(c),
            _ => Err(TreeError::NoBasin),
        }
    }

    /// `X₀ᵏ`: the previous tree plus parabolic layers; level 0 is the immediate basin.
    pub fn build_x0(&self, level: usize, previous: Option<&FatouTree>) -> Result<TreeSeed, TreeError> {
        if level == 0 {
            let u0 = self.immediate_basin()?;
            return Ok(TreeSeed { level, components: vec![u0], layers: Vec::new(), seeds: Vec::new(), pinch: Vec::new(), used: Vec::new() });
        }
        let prev = previous.ok_or(TreeError::MissingPrevious { level })?;
        let cell = self.grid().cell_size();
        let in_prev = |c: u32| prev.contains_component(c);
        let was_used = |z: C64| prev.used.iter().any(|u| (u - z).norm() <= 1e-9 * (1.0 + z.norm()));
        let mut seeds = Vec::new();
        let mut evidence = Vec::new();
        for r in &self.crit {
            let interior = self.grid().index_of(r.z).and_then(|i| self.fatou.label(i)).is_some_and(in_prev);
            if interior || was_used(r.z) {
                continue;
            }
            let dist = self.distance_to(r.z, in_prev);
            evidence.push(SeedEvidence { point: r.z, kind: SeedKind::Critical, distance_cells: dist / cell });
            if dist <= self.tol() {
                seeds.push(Seed { point: r.z, kind: SeedKind::Critical, multiplicity: r.multiplicity, distance_cells: dist / cell, in_stage: false });
            }
        }
        // parabolic layers, each attached to the tree built so far
        let mut in_tree: Vec<bool> = prev.in_tree.clone();
        let mut layers: Vec<Vec<u32>> = Vec::new();
        let mut done: Vec<u16> = Vec::new();
        loop {
            let mut layer = Vec::new();
            for a in self.raster.attractors.iter().filter(|a| a.is_parabolic()) {
                if done.contains(&a.id) {
                    continue;
                }
                let near: Vec<(C64, f64)> = a
                    .cycle
                    .points
                    .iter()
                    .filter(|&&p| !was_used(p))
                    .map(|&p| {
                        let d = self.distance_to(p, |c| in_tree[c as usize]);
                        // tree components may reach a parabolic point only through a cusp
                        let along_axis = d > self.tol()
                            && self.repelling_dirs(p).into_iter().any(|v| self.walk(p, v).is_some_and(|c| in_tree[c as usize]));
                        (p, if along_axis { 0.0 } else { d })
                    })
                    .collect();
                for &(p, d) in &near {
                    evidence.push(SeedEvidence { point: p, kind: SeedKind::Parabolic, distance_cells: d / cell });
                }
                if !near.iter().any(|&(_, d)| d <= self.tol()) {
                    continue;
                }
                done.push(a.id);
                for &p in &a.cycle.points {
                    seeds.push(Seed { point: p, kind: SeedKind::Parabolic, multiplicity: 1, distance_cells: near.iter().map(|x| x.1).fold(f64::INFINITY, f64::min) / cell, in_stage: false });
                    let pin = Pinch { z: p, dirs: self.repelling_dirs(p) };
                    for c in self.pinch_components(&pin) {
                        if self.basin_of[c as usize] == a.id && !in_tree[c as usize] && !layer.contains(&c) {
                            layer.push(c);
                        }
                    }
                }
            }
            if layer.is_empty() {
                break;
            }
            layer.sort_unstable();
            for &c in &layer {
                in_tree[c as usize] = true;
            }
            layers.push(layer);
        }
        if seeds.is_empty() {
            return Err(TreeError::NotInY { level, evidence });
        }
        let mut components: Vec<u32> = prev.components().collect();
        components.extend(layers.iter().flatten());
        let mut pinch = prev.pinch.clone();
        let mut used = prev.used.clone();
        for s in &seeds {
            let dirs = if s.kind == SeedKind::Parabolic { self.repelling_dirs(s.point) } else { Vec::new() };
            pinch.push(Pinch { z: s.point, dirs });
            used.push(s.point);
        }
        Ok(TreeSeed { level, components, layers, seeds, pinch, used })
    }

    /// Grows `x0` by preimage components for at most `max_stages` stages.
    pub fn grow_tree_level(&self, x0: &TreeSeed, max_stages: usize) -> FatouTree {
        let g = self.grid();
        let cell = g.cell_size();
        let tol = self.tol();
        let mut in_tree = vec![false; self.fatou.count()];
        for &c in &x0.components {
            in_tree[c as usize] = true;
        }
        let mut stages = vec![x0.components.clone()];
        let mut adjacency = Vec::new();
        let mut seeds = x0.seeds.clone();
        let mut used = x0.used.clone();
        let mut pinch = PinchSet::new(g);
        let mut frontier: Vec<Pinch> = Vec::new();
        for p in &x0.pinch {
            if pinch.insert(p.clone(), self.pinch_components(p)) {
                frontier.push(p.clone());
            }
        }
        let mut pending: Vec<Pinch> = Vec::new();
        let mut fixed_point = max_stages == 0;
        let base = self.f.full_coeffs();

        for stage in 1..=max_stages {
            // preimages of the newest pinch points; far ones wait for the tree to reach them
            for p in frontier.drain(..) {
                let mut coeffs = base.clone();
                coeffs[0] -= p.z;
                for w in aberth_raw(&coeffs, 200, 1e-14) {
                    if !(w.re.is_finite() && w.im.is_finite()) || g.index_of(w).is_none() || pinch.contains(w) {
                        continue;
                    }
                    let dw = self.f.derivative_at(w);
                    let dirs = if dw.norm() > 1e-8 { p.dirs.iter().map(|v| (v / dw).unscale((v / dw).norm())).collect() } else { Vec::new() };
                    pending.push(Pinch { z: w, dirs });
                }
            }
            let mut still = Vec::new();
            for w in pending.drain(..) {
                if pinch.contains(w.z) {
                    continue;
                }
                let comps = self.pinch_components(&w);
                if comps.iter().any(|&c| in_tree[c as usize]) {
                    if pinch.insert(w.clone(), comps) {
                        frontier.push(w);
                    }
                } else {
                    still.push(w);
                }
            }
            pending = still;
            // critical points reached by a resolved component are absorbed into the stage
            for r in &self.crit {
                if used.iter().any(|u| (u - r.z).norm() <= 1e-9 * (1.0 + r.z.norm())) {
                    continue;
                }
                let interior = g.index_of(r.z).and_then(|i| self.fatou.label(i)).is_some_and(|c| in_tree[c as usize]);
                if interior {
                    continue;
                }
                let big = |c: u32| in_tree[c as usize] && self.fatou.size(c) >= self.options.resolved_cells;
                let dist = self.distance_to(r.z, big);
                if dist <= 0.5 * tol {
                    used.push(r.z);
                    seeds.push(Seed { point: r.z, kind: SeedKind::Critical, multiplicity: r.multiplicity, distance_cells: dist / cell, in_stage: true });
                    let p = Pinch { z: r.z, dirs: Vec::new() };
                    let comps = self.pinch_components(&p);
                    if pinch.insert(p.clone(), comps) {
                        frontier.push(p);
                    }
                }
            }
            let mut added: Vec<u32> = Vec::new();
            for (p, near) in pinch.points.iter().zip(&pinch.comps) {
                let Some(&anchor) = near.iter().find(|&&c| in_tree[c as usize]) else { continue };
                for &v in near {
                    if in_tree[v as usize] || added.contains(&v) {
                        continue;
                    }
                    if self.image_of[v as usize].is_some_and(|b| in_tree[b as usize]) {
                        added.push(v);
                        adjacency.push(Touch { stage, component: v, tree_component: anchor, at: p.z });
                    }
                }
            }
            if added.is_empty() && frontier.is_empty() {
                fixed_point = true;
                break;
            }
            added.sort_unstable();
            for &c in &added {
                in_tree[c as usize] = true;
            }
            stages.push(added);
        }
        // trailing empty stages carry no information
        while stages.len() > 1 && stages.last().is_some_and(Vec::is_empty) {
            stages.pop();
        }
        FatouTree {
            level: x0.level,
            stages,
            layers: x0.layers.clone(),
            seeds,
            adjacency,
            pinch_points: pinch.points.iter().map(|p| p.z).collect(),
            fixed_point,
            in_tree,
            used,
            pinch: pinch.points,
        }
    }

    /// Cells of tree components.
    pub fn tree_mask(&self, tree: &FatouTree) -> Vec<bool> {
        self.fatou.labels().iter().map(|&l| l != crate::raster::NO_COMPONENT && tree.in_tree[l as usize]).collect()
    }

    /// Cells of the components of stages `0..=n`.
    pub fn stage_mask(&self, tree: &FatouTree, n: usize) -> Vec<bool> {
        let mut mask = vec![false; self.grid().len()];
        for st in tree.stages.iter().take(n + 1) {
            for &c in st {
                for &idx in self.fatou.cells(c) {
                    mask[idx as usize] = true;
                }
            }
        }
        mask
    }

    /// The tree plus all non-escaping cells within the boundary tolerance of it.
    pub fn closure_mask(&self, tree: &FatouTree) -> Vec<bool> {
        let g = self.grid();
        let tm = self.tree_mask(tree);
        let r = self.options.boundary_tol_cells.round().max(1.0) as usize;
        let near = dilate(g, &tm, r);
        (0..g.len()).map(|i| tm[i] || (near[i] && !self.raster.labels[i].is_escaping())).collect()
    }

    /// Non-escaping cells near the tree but outside every stage: the raster stand-in for
    /// the limit set `Y_∞ᵏ` together with the Julia-set fuzz.
    pub fn limit_mask(&self, tree: &FatouTree) -> Vec<bool> {
        let tm = self.tree_mask(tree);
        self.closure_mask(tree).iter().zip(&tm).map(|(&c, &t)| c && !t).collect()
    }

    /// Fraction of non-escaping cells outside the closure mask.
    pub fn defect_fraction(&self, tree: &FatouTree) -> f64 {
        let cm = self.closure_mask(tree);
        let mut k = 0usize;
        let mut miss = 0usize;
        for (i, l) in self.raster.labels.iter().enumerate() {
            if !l.is_escaping() {
                k += 1;
                if !cm[i] {
                    miss += 1;
                }
            }
        }
        if k == 0 {
            0.0
        } else {
            miss as f64 / k as f64
        }
    }

    /// Fraction of sampled tree cells whose image leaves the closure mask dilated by one cell.
    pub fn forward_invariance_defect(&self, tree: &FatouTree, stride: usize) -> f64 {
        let g = self.grid();
        let tm = self.tree_mask(tree);
        let cm = dilate(g, &self.closure_mask(tree), 1);
        let mut n = 0usize;
        let mut bad = 0usize;
        for idx in (0..g.len()).step_by(stride.max(1)) {
            if !tm[idx] {
                continue;
            }
            n += 1;
            let w = self.f.eval(g.center_of(idx));
            if !g.index_of(w).is_some_and(|j| cm[j]) {
                bad += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            bad as f64 / n as f64
        }
    }

    fn coverage_of(&self, z: C64, tree: &FatouTree, closure: &[bool]) -> (Coverage, f64) {
        let g = self.grid();
        let cell = g.cell_size();
        if tree.used.iter().any(|u| (u - z).norm() <= 1e-9 * (1.0 + z.norm())) {
            return (Coverage::Inside, 0.0);
        }
        let idx = g.index_of(z);
        if idx.and_then(|i| self.fatou.label(i)).is_some_and(|c| tree.in_tree[c as usize]) {
            return (Coverage::Inside, 0.0);
        }
        let dist = self.distance_to(z, |c| tree.in_tree[c as usize]);
        if dist <= self.tol() || idx.is_some_and(|i| closure[i] && dist.is_finite()) {
            return (Coverage::OnBoundary, dist / cell);
        }
        if escapes(self.f, z, self.raster.effective_budget.max(1000) as usize) {
            return (Coverage::Escaping, dist / cell);
        }
        (Coverage::Outside, dist / cell)
    }

    /// Runs levels `0, 1, …` until one fails or `max_level` is reached.
    pub fn report(&self, max_level: usize, max_stages: usize) -> Result<(TreeLevelReport, Vec<FatouTree>), TreeError> {
        let seed0 = self.build_x0(0, None)?;
        let mut trees = vec![self.grow_tree_level(&seed0, 0)];
        let mut n_k = vec![0usize];
        let mut stopped_by = None;
        let mut notes = Vec::new();
        for k in 1..=max_level {
            match self.build_x0(k, trees.last()) {
                Ok(seed) => {
                    n_k.push(seed.n_k());
                    trees.push(self.grow_tree_level(&seed, max_stages));
                }
                Err(TreeError::NotInY { evidence, .. }) => {
                    stopped_by = Some(evidence);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let k_of_f = trees.len() - 1;
        let last = trees.last().expect("level 0 exists");
        let closure = self.closure_mask(last);
        let mut levels = Vec::new();
        for t in &trees {
            let cm = self.closure_mask(t);
            let critical_count = self
                .crit
                .iter()
                .filter(|r| matches!(self.coverage_of(r.z, t, &cm).0, Coverage::Inside | Coverage::OnBoundary))
                .map(|r| r.multiplicity)
                .sum();
            levels.push(LevelSummary {
                level: t.level,
                stages: t.stages.len(),
                components: t.component_count(),
                cells: t.components().map(|c| self.fatou.size(c)).sum(),
                pinch_points: t.pinch_points.len(),
                seeds: t.seeds.clone(),
                fixed_point: t.fixed_point,
                critical_count,
            });
        }
        let mut coverage = Vec::new();
        for r in &self.crit {
            let (cov, dist) = self.coverage_of(r.z, last, &closure);
            let level = trees.iter().position(|t| {
                let cm = self.closure_mask(t);
                matches!(self.coverage_of(r.z, t, &cm).0, Coverage::Inside | Coverage::OnBoundary)
            });
            coverage.push(CriticalCoverage { point: r.z, multiplicity: r.multiplicity, coverage: cov, level, distance_cells: dist });
        }
        let defect = self.defect_fraction(last);
        let all_in = coverage.iter().all(|c| matches!(c.coverage, Coverage::Inside | Coverage::OnBoundary));
        let maximality = if coverage.iter().any(|c| c.coverage == Coverage::Outside) {
            Maximality::NotEqual
        } else if all_in && defect < self.options.defect_tol {
            Maximality::Equal
        } else {
            Maximality::Inconclusive
        };
        if self.raster.attractors.iter().any(|a| a.is_parabolic()) {
            notes.push(SURROGATE_NOTE.to_string());
        }
        for t in &trees {
            for s in t.seeds.iter().filter(|s| s.in_stage) {
                notes.push(format!(
                    "level {}: critical point {:.6}{:+.6}i was met by a stage component, not only by the limit set",
                    t.level, s.point.re, s.point.im
                ));
            }
        }
        if trees.iter().any(|t| !t.fixed_point && t.level > 0) {
            notes.push("growth stopped at the stage budget before a fixed point".to_string());
        }
        let report = TreeLevelReport {
            k_of_f,
            n_k,
            critical_coverage: coverage,
            maximality,
            defect_fraction: defect,
            parameters: TreeParameters {
                grid: self.grid(),
                budget: self.raster.effective_budget,
                max_level,
                max_stages,
                options: self.options,
            },
            levels,
            stopped_by,
            notes,
        };
        Ok((report, trees))
    }
}

fn escapes(f: &Polynomial, z: C64, budget: usize) -> bool {
    let big = f.escape_radius();
    let mut w = z;
    for _ in 0..budget {
        if w.norm() > big {
            return true;
        }
        w = f.eval(w);
    }
    false
}

/// Chebyshev dilation of a mask by `r` cells.
pub fn dilate(g: Grid, mask: &[bool], r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    // separable: rows then columns
    let mut rows = vec![false; g.len()];
    for j in 0..g.ny {
        let mut last: Option<usize> = None;
        for i in 0..g.nx {
            if mask[g.index(i, j)] {
                last = Some(i);
            }
            if last.is_some_and(|l| i - l <= r) {
                rows[g.index(i, j)] = true;
            }
        }
        let mut next: Option<usize> = None;
        for i in (0..g.nx).rev() {
            if mask[g.index(i, j)] {
                next = Some(i);
            }
            if next.is_some_and(|n| n - i <= r) {
                rows[g.index(i, j)] = true;
            }
        }
    }
    let mut out = vec![false; g.len()];
    for i in 0..g.nx {
        let mut last: Option<usize> = None;
        for j in 0..g.ny {
            if rows[g.index(i, j)] {
                last = Some(j);
            }
            if last.is_some_and(|l| j - l <= r) {
                out[g.index(i, j)] = true;
            }
        }
        let mut next: Option<usize> = None;
        for j in (0..g.ny).rev() {
            if rows[g.index(i, j)] {
                next = Some(j);
            }
            if next.is_some_and(|n| n - j <= r) {
                out[g.index(i, j)] = true;
            }
        }
    }
    out
}

/// Samples of half a cell taken along a repelling axis.
const AXIS_STEPS: usize = 64;

/// Pinch points, at most one per cell, with the components each one touches.
struct PinchSet {
    grid: Grid,
    by_cell: HashMap<usize, usize>,
    points: Vec<Pinch>,
    comps: Vec<Vec<u32>>,
}

impl PinchSet {
    fn new(grid: Grid) -> PinchSet {
        PinchSet { grid, by_cell: HashMap::new(), points: Vec::new(), comps: Vec::new() }
    }

    fn contains(&self, z: C64) -> bool {
        self.grid.index_of(z).is_some_and(|i| self.by_cell.contains_key(&i))
    }

    fn insert(&mut self, p: Pinch, comps: Vec<u32>) -> bool {
        let Some(i) = self.grid.index_of(p.z) else { return false };
        if let std::collections::hash_map::Entry::Vacant(e) = self.by_cell.entry(i) {
            e.insert(self.points.len());
            self.points.push(p);
            self.comps.push(comps);
            true
        } else {
            false
        }
    }
}

/// Runs [`TreeWorkspace::report`] with default options.
pub fn tree_report(f: &Polynomial, raster: &Raster, max_level: usize, max_stages: usize) -> Result<TreeLevelReport, TreeError> {
    let ws = TreeWorkspace::new(f, raster, TreeOptions::default());
    ws.report(max_level, max_stages).map(|(r, _)| r)
}

/// A limb of `K` hanging off the immediate basin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limb {
    pub diameter: f64,
    pub cells: usize,
    /// Where the limb meets the basin; `None` for pieces not touching it at raster scale.
    pub root: Option<C64>,
}

/// Limbs of `K` for `U_f(0)`: components of the bounded cells away from the basin, grouped
/// when they meet the basin at the same place. Sorted by decreasing diameter.
pub fn limbs(ws: &TreeWorkspace) -> Result<Vec<Limb>, TreeError> {
    let g = ws.grid();
    let u0 = ws.immediate_basin()?;
    let basin = ws.fatou.mask(u0);
    let r = ws.options.boundary_tol_cells.round().max(1.0) as usize;
    let band = dilate(g, &basin, r);
    let rest: Vec<bool> = (0..g.len()).map(|i| !band[i] && !ws.raster.labels[i].is_escaping()).collect();
    let comps = ComponentMap::from_mask(g, &rest);
    let reach = dilate(g, &basin, r + 1);
    // touching cell: the first cell of the component adjacent to the band
    let n = comps.count();
    let mut root_cell: Vec<Option<usize>> = vec![None; n];
    for id in 0..n as u32 {
        root_cell[id as usize] = comps.cells(id).iter().map(|&c| c as usize).find(|&c| reach[c]);
    }
    // union components whose roots are within the tolerance of each other
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    let mut by_cell: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let bucket = 2 * r + 1;
    for (id, rc) in root_cell.iter().enumerate() {
        if let Some(c) = rc {
            let (i, j) = g.coords(*c);
            by_cell.entry((i / bucket, j / bucket)).or_default().push(id);
        }
    }
    let mut keys: Vec<(usize, usize)> = by_cell.keys().copied().collect();
    keys.sort_unstable();
    for (bi, bj) in keys {
        for (di, dj) in [(0i64, 0i64), (1, 0), (0, 1), (1, 1), (1, -1)] {
            let (ni, nj) = (bi as i64 + di, bj as i64 + dj);
            if ni < 0 || nj < 0 {
                continue;
            }
            let Some(other) = by_cell.get(&(ni as usize, nj as usize)) else { continue };
            for &a in &by_cell[&(bi, bj)] {
                for &b in other {
                    if a == b {
                        continue;
                    }
                    let (ai, aj) = g.coords(root_cell[a].unwrap());
                    let (bi2, bj2) = g.coords(root_cell[b].unwrap());
                    if ai.abs_diff(bi2).max(aj.abs_diff(bj2)) <= r {
                        let (x, y) = (root(&mut parent, a), root(&mut parent, b));
                        if x != y {
                            parent[x.max(y)] = x.min(y);
                        }
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for id in 0..n {
        let rt = root(&mut parent, id);
        groups.entry(rt).or_default().push(id);
    }
    let mut out: Vec<Limb> = groups
        .into_values()
        .map(|ids| {
            let mut pts = Vec::new();
            let mut cells = 0;
            for &id in &ids {
                cells += comps.size(id as u32);
                for c in comps.boundary_cells(id as u32) {
                    let z = g.center_of(c as usize);
                    pts.push((z.re, z.im));
                }
            }
            let root = ids.iter().find_map(|&id| root_cell[id]).map(|c| g.center_of(c));
            Limb { diameter: crate::geom::diameter(&pts), cells, root }
        })
        .collect();
    out.sort_by(|a, b| b.diameter.total_cmp(&a.diameter).then(b.cells.cmp(&a.cells)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{family_fa, family_fc};
    use crate::geom::Rect;
    use crate::raster::{classify_grid, ClassifyOptions};

    fn raster(f: &Polynomial, n: usize) -> Raster {
        let g = Grid::new(Rect::centered_square(2.0), n, n).unwrap();
        classify_grid(f, g, ClassifyOptions::default())
    }

    #[test]
    fn z_cubed_is_level_zero_and_maximal() {
        let f = Polynomial::monomial(3).unwrap();
        let r = raster(&f, 128);
        let rep = tree_report(&f, &r, 3, 20).unwrap();
        assert_eq!(rep.k_of_f, 0);
        assert_eq!(rep.maximality, Maximality::Equal);
        assert!(rep.defect_fraction < 0.02);
    }

    #[test]
    fn fc_one_is_not_maximal() {
        let f = family_fc(C64::new(1.0, 0.0)).unwrap();
        let r = raster(&f, 160);
        let rep = tree_report(&f, &r, 3, 20).unwrap();
        assert_eq!(rep.k_of_f, 0);
        assert_eq!(rep.maximality, Maximality::NotEqual);
        let outside: Vec<_> = rep.critical_coverage.iter().filter(|c| c.coverage == Coverage::Outside).collect();
        assert_eq!(outside.len(), 2);
    }

    #[test]
    fn level_zero_has_no_growth_and_nests() {
        let f = family_fa(C64::new(0.9, 0.0)).unwrap();
        let r = raster(&f, 128);
        let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
        let (rep, trees) = ws.report(3, 30).unwrap();
        assert_eq!(trees[0].stages.len(), 1);
        assert!(rep.k_of_f <= f.degree() - 2);
        for t in &trees {
            for n in 1..t.stages.len() {
                let a = ws.stage_mask(t, n - 1);
                let b = ws.stage_mask(t, n);
                assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
            }
        }
        let counts: Vec<usize> = rep.levels.iter().map(|l| l.critical_count).collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    }

    #[test]
    fn dilation_matches_brute_force() {
        let g = Grid::new(Rect::centered_square(1.0), 17, 19).unwrap();
        let mask: Vec<bool> = (0..g.len()).map(|i| (i * 7919) % 31 == 0).collect();
        let fast = dilate(g, &mask, 2);
        for idx in 0..g.len() {
            let slow = g.neighborhood(idx, 2).into_iter().any(|c| mask[c]);
            assert_eq!(fast[idx], slow);
        }
    }
}
