//! Discretised dynamical plane: escape-time labels, basins, Green's function and components.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Rect};
use crate::poly::{attracting_cycles, CycleRecord, Polynomial};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("point {0} lies outside the raster box")]
    OutOfBox(C64),
    #[error("no component with id {0}")]
    UnknownComponent(u32),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A box subdivided into `nx × ny` cells. Row 0 is the top row (largest imaginary part).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Grid, RasterError> {
        if !rect.is_valid() {
            return Err(RasterError::InvalidGrid("box must have positive finite size".into()));
        }
        if nx == 0 || ny == 0 {
            return Err(RasterError::InvalidGrid("resolution must be positive".into()));
        }
        Ok(Grid { rect, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_w(&self) -> f64 {
        self.rect.width / self.nx as f64
    }

    pub fn cell_h(&self) -> f64 {
        self.rect.height / self.ny as f64
    }

    /// The larger side of a cell.
    pub fn cell_size(&self) -> f64 {
        self.cell_w().max(self.cell_h())
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_w() * self.cell_h()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, i: usize, j: usize) -> C64 {
        C64::new(
            self.rect.x_min() + (i as f64 + 0.5) * self.cell_w(),
            self.rect.y_max() - (j as f64 + 0.5) * self.cell_h(),
        )
    }

    pub fn center_of(&self, idx: usize) -> C64 {
        let (i, j) = self.coords(idx);
        self.center(i, j)
    }

    /// Continuous cell coordinates: cell `(i, j)` covers `[i, i+1) × [j, j+1)`.
    pub fn continuous(&self, z: C64) -> (f64, f64) {
        ((z.re - self.rect.x_min()) / self.cell_w(), (self.rect.y_max() - z.im) / self.cell_h())
    }

    pub fn cell_of(&self, z: C64) -> Option<(usize, usize)> {
        let (x, y) = self.continuous(z);
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    pub fn index_of(&self, z: C64) -> Option<usize> {
        self.cell_of(z).map(|(i, j)| self.index(i, j))
    }

    /// 4-neighbours of a cell.
    pub fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.coords(idx);
        let (nx, ny) = (self.nx, self.ny);
        let mut v = [usize::MAX; 4];
        if i > 0 {
            v[0] = idx - 1;
        }
        if i + 1 < nx {
            v[1] = idx + 1;
        }
        if j > 0 {
            v[2] = idx - nx;
        }
        if j + 1 < ny {
            v[3] = idx + nx;
        }
        v.into_iter().filter(|&x| x != usize::MAX)
    }

    /// Cells within Chebyshev distance `r` of `idx` (including itself).
    pub fn neighborhood(&self, idx: usize, r: usize) -> Vec<usize> {
        let (i, j) = self.coords(idx);
        let mut out = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
        for jj in j.saturating_sub(r)..=(j + r).min(self.ny - 1) {
            for ii in i.saturating_sub(r)..=(i + r).min(self.nx - 1) {
                out.push(self.index(ii, jj));
            }
        }
        out
    }

    /// Cells crossed by a polyline.
    pub fn polyline_cells(&self, points: &[C64]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut push = |i: i64, j: i64| {
            if i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny {
                out.push(self.index(i as usize, j as usize));
            }
        };
        if points.len() == 1 {
            let (x, y) = self.continuous(points[0]);
            push(x.floor() as i64, y.floor() as i64);
        }
        for w in points.windows(2) {
            let (x0, y0) = self.continuous(w[0]);
            let (x1, y1) = self.continuous(w[1]);
            if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
                continue;
            }
            // segments far outside the box are clipped coarsely
            let lim = 4.0 * (self.nx + self.ny) as f64;
            if x0.abs().max(x1.abs()).max(y0.abs()).max(y1.abs()) > lim {
                continue;
            }
            for (i, j) in geom::supercover(x0, y0, x1, y1) {
                push(i, j);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Per-cell classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellLabel {
    /// Escaped after this many iterations.
    Escaping(u32),
    /// Neither escaped nor captured within the budget.
    Bounded,
    /// Captured by the attractor with this id.
    Basin(u16),
    /// Reserved for puzzle graph overlays.
    GraphCut,
}

impl CellLabel {
    pub fn basin(&self) -> Option<u16> {
        match self {
            CellLabel::Basin(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_escaping(&self) -> bool {
        matches!(self, CellLabel::Escaping(_))
    }

    /// Byte code used in raw dumps.
    pub fn code(&self) -> u8 {
        match self {
            CellLabel::Bounded => 0,
            CellLabel::Escaping(_) => 1,
            CellLabel::GraphCut => 2,
            CellLabel::Basin(b) => (3 + *b as u32).min(255) as u8,
        }
    }
}

/// Petal test near a parabolic cycle point `p` of `g = f^{pq}`:
/// `g(p + h) = p + h + A h^{ν+1} + …`, the point is captured when
/// `Re(−1/(ν A h^ν)) > threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Petal {
    pub point: C64,
    pub nu: u32,
    pub a: C64,
    pub threshold: f64,
}

impl Petal {
    pub fn fatou_coordinate(&self, z: C64) -> C64 {
        let h = z - self.point;
        -1.0 / (self.nu as f64 * self.a * h.powu(self.nu))
    }

    pub fn contains(&self, z: C64) -> bool {
        let h = z - self.point;
        if h.norm() == 0.0 {
            return false;
        }
        let w = self.fatou_coordinate(z);
        w.re > self.threshold
    }

    /// Unit directions `v` with `A v^ν > 0`, along which orbits leave the point.
    pub fn repelling_directions(&self) -> Vec<C64> {
        let nu = self.nu.max(1) as f64;
        (0..self.nu.max(1))
            .map(|j| C64::from_polar(1.0, (-self.a.arg() + 2.0 * std::f64::consts::PI * j as f64) / nu))
            .collect()
    }
}

pub(crate) fn petals_for(f: &Polynomial, cycle: &CycleRecord) -> Vec<Petal> {
    let q = cycle.rotation.unwrap_or(1) as usize;
    let n = cycle.period * q;
    let order = 10;
    let mut out = Vec::new();
    for &p in &cycle.points {
        let t = f.iterate_taylor(p, n, order);
        let scale: f64 = t.iter().skip(1).map(|c| c.norm()).fold(1.0, f64::max);
        let k = (2..=order).find(|&k| t[k].norm() > 1e-7 * scale);
        let Some(k) = k else { continue };
        let nu = (k - 1) as u32;
        let a = t[k];
        let b = if k < order { t[k + 1] } else { C64::new(0.0, 0.0) };
        // keep the petal inside the disc where the leading term dominates
        let mut rho = 0.05f64;
        if b.norm() > 0.0 {
            rho = rho.min(0.1 * a.norm() / b.norm());
        }
        let threshold = (1.0 / (nu as f64 * a.norm() * rho.powi(nu as i32))).max(20.0);
        out.push(Petal { point: p, nu, a, threshold });
    }
    out
}

/// An attracting or parabolic cycle with its basin id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub id: u16,
    pub cycle: CycleRecord,
    pub petals: Vec<Petal>,
}

impl Attractor {
    pub fn is_parabolic(&self) -> bool {
        self.cycle.is_parabolic()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub budget: u32,
    /// Budget multiplier applied when a parabolic cycle is present.
    pub parabolic_factor: u32,
    /// Capture radius around attracting cycle points.
    pub capture_radius: f64,
    /// Compute Green's function for escaping cells.
    pub potential: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { budget: 500, parabolic_factor: 20, capture_radius: 1e-3, potential: true }
    }
}

/// Classification of every cell of a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Raster {
    pub grid: Grid,
    pub labels: Vec<CellLabel>,
    /// Green's function at escaping cell centres, 0 elsewhere.
    pub potential: Vec<f64>,
    pub attractors: Vec<Attractor>,
    pub options: ClassifyOptions,
    pub effective_budget: u32,
    pub escape_radius: f64,
}

/// Iterate cap used by [`green_function`].
pub const GREEN_MAX_ITER: usize = 10_000;

fn bailout(d: usize) -> f64 {
    1e20f64.min(10f64.powf(300.0 / d as f64))
}

/// `G(z) = lim d⁻ⁿ log|fⁿ(z)|`, or `None` if the orbit stays bounded for `max_iter` steps.
pub fn green_function(f: &Polynomial, z: C64, max_iter: usize) -> Option<f64> {
    green_from(f, z, 0, max_iter)
}

fn green_from(f: &Polynomial, z: C64, n0: usize, max_iter: usize) -> Option<f64> {
    let big = bailout(f.degree());
    let d = f.degree() as f64;
    let mut w = z;
    let mut scale = d.powi(-(n0 as i32));
    for _ in 0..max_iter {
        let r = w.norm();
        if r > big {
            return Some(r.ln() * scale);
        }
        if !r.is_finite() {
            return None;
        }
        w = f.eval(w);
        scale /= d;
    }
    None
}

struct Classifier<'a> {
    f: &'a Polynomial,
    attractors: &'a [Attractor],
    budget: u32,
    esc2: f64,
    capture: f64,
    potential: bool,
}

impl Classifier<'_> {
    fn classify(&self, z0: C64) -> (CellLabel, f64) {
        let mut z = z0;
        for n in 0..=self.budget {
            if z.norm_sqr() > self.esc2 {
                let g = if self.potential {
                    green_from(self.f, z, n as usize, GREEN_MAX_ITER).unwrap_or(0.0)
                } else {
                    0.0
                };
                return (CellLabel::Escaping(n), g);
            }
            for a in self.attractors {
                if a.petals.is_empty() {
                    if a.cycle.points.iter().any(|p| (z - p).norm_sqr() < self.capture * self.capture) {
                        return (CellLabel::Basin(a.id), 0.0);
                    }
                } else if a.petals.iter().any(|p| p.contains(z)) {
                    return (CellLabel::Basin(a.id), 0.0);
                }
            }
            z = self.f.eval(z);
        }
        (CellLabel::Bounded, 0.0)
    }
}

/// Attractors of `f` with basin ids assigned in discovery order.
pub fn find_attractors(f: &Polynomial) -> Vec<Attractor> {
    attracting_cycles(f)
        .into_iter()
        .enumerate()
        .map(|(i, cycle)| {
            let petals = if cycle.is_parabolic() { petals_for(f, &cycle) } else { Vec::new() };
            Attractor { id: i as u16, cycle, petals }
        })
        .collect()
}

/// Labels every cell of `grid`.
pub fn classify_grid(f: &Polynomial, grid: Grid, opts: ClassifyOptions) -> Raster {
    let attractors = find_attractors(f);
    classify_grid_with(f, grid, opts, attractors)
}

/// Labels every cell of `grid` against a given attractor list.
pub fn classify_grid_with(f: &Polynomial, grid: Grid, opts: ClassifyOptions, attractors: Vec<Attractor>) -> Raster {
    let parabolic = attractors.iter().any(|a| a.is_parabolic());
    let budget = if parabolic { opts.budget.saturating_mul(opts.parabolic_factor) } else { opts.budget };
    let esc = f.escape_radius();
    let cl = Classifier {
        f,
        attractors: &attractors,
        budget,
        esc2: esc * esc,
        capture: opts.capture_radius,
        potential: opts.potential,
    };
    let mut labels = vec![CellLabel::Bounded; grid.len()];
    let mut potential = vec![0.0f64; grid.len()];
    let row = |j: usize, lab: &mut [CellLabel], pot: &mut [f64]| {
        for i in 0..grid.nx {
            let (l, g) = cl.classify(grid.center(i, j));
            lab[i] = l;
            pot[i] = g;
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        labels
            .par_chunks_mut(grid.nx)
            .zip(potential.par_chunks_mut(grid.nx))
            .enumerate()
            .for_each(|(j, (l, p))| row(j, l, p));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (j, (l, p)) in labels.chunks_mut(grid.nx).zip(potential.chunks_mut(grid.nx)).enumerate() {
            row(j, l, p);
        }
    }
    Raster { grid, labels, potential, attractors, options: opts, effective_budget: budget, escape_radius: esc }
}

/// Header written next to raw label dumps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpHeader {
    pub grid: Grid,
    pub codes: Vec<(u8, String)>,
    pub effective_budget: u32,
    pub escape_radius: f64,
    pub attractors: Vec<CycleRecord>,
}

impl Raster {
    pub fn label_at(&self, z: C64) -> Result<CellLabel, RasterError> {
        self.grid.index_of(z).map(|i| self.labels[i]).ok_or(RasterError::OutOfBox(z))
    }

    /// Label of a single point under the raster's own budget and attractors.
    pub fn classify_point(&self, f: &Polynomial, z: C64) -> CellLabel {
        let cl = Classifier {
            f,
            attractors: &self.attractors,
            budget: self.effective_budget,
            esc2: self.escape_radius * self.escape_radius,
            capture: self.options.capture_radius,
            potential: false,
        };
        cl.classify(z).0
    }

    pub fn attractor(&self, id: u16) -> Option<&Attractor> {
        self.attractors.iter().find(|a| a.id == id)
    }

    /// Id of the basin of the fixed point 0, if 0 is attracting or parabolic.
    pub fn zero_basin(&self) -> Option<u16> {
        self.attractors
            .iter()
            .find(|a| a.cycle.period == 1 && a.cycle.points[0].norm() < 1e-9)
            .map(|a| a.id)
    }

    /// Raw byte dump, row-major from the top row, with its header.
    pub fn dump(&self) -> (DumpHeader, Vec<u8>) {
        let mut codes = vec![
            (0u8, "bounded".to_string()),
            (1, "escaping".to_string()),
            (2, "graph-cut".to_string()),
        ];
        for a in &self.attractors {
            codes.push((CellLabel::Basin(a.id).code(), format!("basin {}", a.id)));
        }
        let header = DumpHeader {
            grid: self.grid,
            codes,
            effective_budget: self.effective_budget,
            escape_radius: self.escape_radius,
            attractors: self.attractors.iter().map(|a| a.cycle.clone()).collect(),
        };
        (header, self.labels.iter().map(|l| l.code()).collect())
    }
}

/// Size data of a component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub cell_count: usize,
    pub area: f64,
    pub diameter: f64,
    pub boundary_cells: usize,
}

/// Label of cells not belonging to any component.
pub const NO_COMPONENT: u32 = u32::MAX;

/// 4-connected components of equal-key cells.
#[derive(Clone, Debug)]
pub struct ComponentMap {
    pub grid: Grid,
    labels: Vec<u32>,
    offsets: Vec<usize>,
    members: Vec<u32>,
}

fn find(parent: &mut [u32], i: u32) -> u32 {
    let mut r = i;
    while parent[r as usize] != r {
        r = parent[r as usize];
    }
    let mut c = i;
    while parent[c as usize] != r {
        let next = parent[c as usize];
        parent[c as usize] = r;
        c = next;
    }
    r
}

impl ComponentMap {
    /// Components of cells with equal `Some` keys; ids follow raster order of first cells.
    pub fn from_keys<K: PartialEq>(grid: Grid, keys: &[Option<K>]) -> ComponentMap {
        assert_eq!(keys.len(), grid.len());
        let n = grid.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        for idx in 0..n {
            let Some(k) = &keys[idx] else { continue };
            let (i, j) = grid.coords(idx);
            if i + 1 < grid.nx && keys[idx + 1].as_ref() == Some(k) {
                let (a, b) = (find(&mut parent, idx as u32), find(&mut parent, (idx + 1) as u32));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            }
            if j + 1 < grid.ny && keys[idx + grid.nx].as_ref() == Some(k) {
                let (a, b) = (find(&mut parent, idx as u32), find(&mut parent, (idx + grid.nx) as u32));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            }
        }
        let mut labels = vec![NO_COMPONENT; n];
        let mut root_label = vec![NO_COMPONENT; n];
        let mut count = 0u32;
        let mut sizes: Vec<usize> = Vec::new();
        for idx in 0..n {
            if keys[idx].is_none() {
                continue;
            }
            let r = find(&mut parent, idx as u32) as usize;
            if root_label[r] == NO_COMPONENT {
                root_label[r] = count;
                count += 1;
                sizes.push(0);
            }
            labels[idx] = root_label[r];
            sizes[root_label[r] as usize] += 1;
        }
        let mut offsets = vec![0usize; count as usize + 1];
        for (c, s) in sizes.iter().enumerate() {
            offsets[c + 1] = offsets[c] + s;
        }
        let mut fill = offsets.clone();
        let mut members = vec![0u32; offsets[count as usize]];
        for idx in 0..n {
            let l = labels[idx];
            if l != NO_COMPONENT {
                members[fill[l as usize]] = idx as u32;
                fill[l as usize] += 1;
            }
        }
        ComponentMap { grid, labels, offsets, members }
    }

    /// Components of the cells where `pred` holds.
    pub fn from_mask(grid: Grid, mask: &[bool]) -> ComponentMap {
        let keys: Vec<Option<()>> = mask.iter().map(|&m| m.then_some(())).collect();
        ComponentMap::from_keys(grid, &keys)
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> Option<u32> {
        let l = self.labels[idx];
        (l != NO_COMPONENT).then_some(l)
    }

    pub fn cells(&self, id: u32) -> &[u32] {
        let id = id as usize;
        &self.members[self.offsets[id]..self.offsets[id + 1]]
    }

    pub fn size(&self, id: u32) -> usize {
        self.cells(id).len()
    }

    pub fn component_of(&self, z: C64) -> Result<Option<u32>, RasterError> {
        let idx = self.grid.index_of(z).ok_or(RasterError::OutOfBox(z))?;
        Ok(self.label(idx))
    }

    fn check(&self, id: u32) -> Result<(), RasterError> {
        if (id as usize) < self.count() {
            Ok(())
        } else {
            Err(RasterError::UnknownComponent(id))
        }
    }

    /// Cells of the component with a 4-neighbour outside it (or on the raster edge).
    pub fn boundary_cells(&self, id: u32) -> Vec<u32> {
        let g = &self.grid;
        self.cells(id)
            .iter()
            .copied()
            .filter(|&c| {
                let (i, j) = g.coords(c as usize);
                i == 0
                    || j == 0
                    || i + 1 == g.nx
                    || j + 1 == g.ny
                    || g.neighbors4(c as usize).any(|n| self.labels[n] != id)
            })
            .collect()
    }

    pub fn region_metrics(&self, id: u32) -> Result<RegionMetrics, RasterError> {
        self.check(id)?;
        let boundary = self.boundary_cells(id);
        let pts: Vec<(f64, f64)> = boundary
            .iter()
            .map(|&c| {
                let z = self.grid.center_of(c as usize);
                (z.re, z.im)
            })
            .collect();
        Ok(RegionMetrics {
            cell_count: self.size(id),
            area: self.size(id) as f64 * self.grid.cell_area(),
            diameter: geom::diameter(&pts),
            boundary_cells: boundary.len(),
        })
    }

    /// Pairs of distinct components with cells within Chebyshev distance `radius`, sorted.
    pub fn adjacency(&self, radius: usize) -> Vec<(u32, u32)> {
        let g = &self.grid;
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for idx in 0..g.len() {
            let a = self.labels[idx];
            if a == NO_COMPONENT {
                continue;
            }
            let (i, j) = g.coords(idx);
            // forward half-neighbourhood is enough since the relation is symmetric
            for dj in 0..=radius {
                let jj = j + dj;
                if jj >= g.ny {
                    break;
                }
                let lo = if dj == 0 { i + 1 } else { i.saturating_sub(radius) };
                for ii in lo..=(i + radius).min(g.nx - 1) {
                    let b = self.labels[g.index(ii, jj)];
                    if b != NO_COMPONENT && b != a {
                        pairs.push((a.min(b), a.max(b)));
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Smallest distance from `z` to a cell centre of the component.
    pub fn distance_to(&self, id: u32, z: C64) -> f64 {
        self.cells(id)
            .iter()
            .map(|&c| (self.grid.center_of(c as usize) - z).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Mask of the component's cells.
    pub fn mask(&self, id: u32) -> Vec<bool> {
        let mut m = vec![false; self.grid.len()];
        for &c in self.cells(id) {
            m[c as usize] = true;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, r: f64) -> Grid {
        Grid::new(Rect::centered_square(r), n, n).unwrap()
    }

    #[test]
    fn grid_orientation() {
        let g = grid(4, 2.0);
        // row 0 at the top
        assert!(g.center(0, 0).im > 0.0 && g.center(0, 0).re < 0.0);
        assert_eq!(g.cell_of(C64::new(-1.9, 1.9)), Some((0, 0)));
        assert_eq!(g.cell_of(C64::new(1.9, -1.9)), Some((3, 3)));
        assert_eq!(g.cell_of(C64::new(2.5, 0.0)), None);
        for idx in 0..g.len() {
            assert_eq!(g.index_of(g.center_of(idx)), Some(idx));
        }
    }

    #[test]
    fn z_squared_splits_at_unit_circle() {
        let f = Polynomial::monomial(2).unwrap();
        let r = classify_grid(&f, grid(64, 1.5), ClassifyOptions::default());
        assert_eq!(r.attractors.len(), 1);
        for idx in 0..r.grid.len() {
            let z = r.grid.center_of(idx);
            let l = r.labels[idx];
            if z.norm() < 0.97 {
                assert_eq!(l, CellLabel::Basin(0), "{}", z);
            } else if z.norm() > 1.03 {
                assert!(l.is_escaping(), "{}", z);
                assert!((r.potential[idx] - z.norm().ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn green_of_power_map_is_log_modulus() {
        for d in 2..6 {
            let f = Polynomial::monomial(d).unwrap();
            for &z in &[C64::new(1.0001, 0.0), C64::new(3.0, 4.0), C64::new(0.0, -1.5)] {
                let g = green_function(&f, z, GREEN_MAX_ITER).unwrap();
                assert!((g - z.norm().ln()).abs() < 1e-13 * z.norm().ln().max(1.0));
            }
            assert_eq!(green_function(&f, C64::new(0.5, 0.0), 100), None);
        }
    }

    #[test]
    fn green_of_fc_one_at_ten() {
        // f = z⁴ − 2z², so G(z) = log|z| + Σ 4^{−n−1} log|1 − 2/z_n²|
        let f = Polynomial::new(4, vec![C64::new(0.0, 0.0), C64::new(-2.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let mut z = 10.0f64;
        let mut want = z.ln();
        let mut w = 0.25;
        while z < 1e100 {
            want += w * (1.0 - 2.0 / (z * z)).ln();
            z = z.powi(4) - 2.0 * z * z;
            w /= 4.0;
        }
        let g = green_function(&f, C64::new(10.0, 0.0), GREEN_MAX_ITER).unwrap();
        assert!((g - want).abs() < 1e-12, "{g} vs {want}");
        assert!((g - 10f64.ln() + 0.00505).abs() < 1e-5);
    }

    #[test]
    fn green_is_equivariant() {
        let f = Polynomial::new(3, vec![C64::new(0.4, 0.1), C64::new(-0.3, 0.2)]).unwrap();
        for &z in &[C64::new(1.2, 0.4), C64::new(-2.0, 0.1), C64::new(0.3, 1.7)] {
            let g = green_function(&f, z, GREEN_MAX_ITER).unwrap();
            let gf = green_function(&f, f.eval(z), GREEN_MAX_ITER).unwrap();
            assert!((gf - 3.0 * g).abs() < 1e-12 * gf.max(1.0));
        }
    }

    #[test]
    fn parabolic_basin_is_captured() {
        // z + z²: parabolic at 0, basin contains the segment (−1, 0)
        let f = Polynomial::new(2, vec![C64::new(1.0, 0.0)]).unwrap();
        let r = classify_grid(&f, grid(32, 2.0), ClassifyOptions::default());
        assert!(r.attractors[0].is_parabolic());
        let l = r.label_at(C64::new(-0.5, 0.05)).unwrap();
        assert_eq!(l, CellLabel::Basin(0));
        assert!(r.label_at(C64::new(0.6, 0.0)).unwrap().is_escaping());
    }

    #[test]
    fn dump_codes() {
        let f = Polynomial::monomial(2).unwrap();
        let r = classify_grid(&f, grid(8, 2.0), ClassifyOptions::default());
        let (h, bytes) = r.dump();
        assert_eq!(bytes.len(), 64);
        assert!(bytes.iter().all(|&b| b == 1 || b == 3 || b == 0));
        assert_eq!(h.codes.last().unwrap().0, 3);
    }

    fn disk_mask(g: &Grid, c: C64, r: f64) -> Vec<bool> {
        (0..g.len()).map(|i| (g.center_of(i) - c).norm() < r).collect()
    }

    #[test]
    fn disk_metrics_converge() {
        let g = grid(400, 1.0);
        let m = ComponentMap::from_mask(g, &disk_mask(&g, C64::new(0.0, 0.0), 0.7));
        assert_eq!(m.count(), 1);
        let rm = m.region_metrics(0).unwrap();
        let h = g.cell_size();
        assert!((rm.area - std::f64::consts::PI * 0.49).abs() < 2.0 * std::f64::consts::PI * 0.7 * h);
        assert!((rm.diameter - 1.4).abs() < 2.0 * h);
        assert_eq!(m.region_metrics(1), Err(RasterError::UnknownComponent(1)));
        assert_eq!(m.component_of(C64::new(3.0, 0.0)), Err(RasterError::OutOfBox(C64::new(3.0, 0.0))));
    }

    #[test]
    fn single_cell_has_zero_diameter() {
        let g = grid(10, 1.0);
        let mut mask = vec![false; g.len()];
        mask[g.index(3, 3)] = true;
        let m = ComponentMap::from_mask(g, &mask);
        assert_eq!(m.region_metrics(0).unwrap().diameter, 0.0);
    }

    proptest! {
        #[test]
        fn disjoint_disks_are_separate_components(
            x1 in -0.5f64..-0.3, x2 in 0.3f64..0.5, r in 0.05f64..0.2, gap_cells in 0usize..4
        ) {
            let g = grid(200, 1.0);
            let h = g.cell_w();
            let mut mask = disk_mask(&g, C64::new(x1, 0.0), r);
            let m2 = disk_mask(&g, C64::new(x2, 0.0), r);
            for (a, b) in mask.iter_mut().zip(m2) { *a |= b; }
            // a vertical bar whose distance to the first disk is gap_cells
            let bar_x = x1 + r + (gap_cells as f64 + 0.5) * h;
            for idx in 0..g.len() {
                let z = g.center_of(idx);
                if (z.re - bar_x).abs() < 0.5 * h && z.im.abs() < 0.05 { mask[idx] = true; }
            }
            let m = ComponentMap::from_mask(g, &mask);
            let total: usize = (0..m.count() as u32).map(|c| m.size(c)).sum();
            prop_assert_eq!(total, mask.iter().filter(|&&b| b).count());
            let adj = m.adjacency(2);
            for &(a, b) in &adj {
                prop_assert!(a < b);
            }
            prop_assert!(m.count() >= 2);
        }
    }
}
