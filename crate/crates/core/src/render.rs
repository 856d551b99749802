//! RGBA images of dynamical and parameter planes.
//!
//! Row 0 of an image is the top row of its grid, matching [`Grid`].

use serde::{Deserialize, Serialize};

use crate::angle::Angle;
use crate::families::{resit_fa, Family};
use crate::poly::{classify_multiplier, critical_points, refine_periodic, CycleRecord, Polynomial};
use crate::raster::{classify_grid, petals_for, CellLabel, ClassifyOptions, Grid, Petal, Raster};
use crate::rays::{trace_external_ray, Landing, RayOptions};
use crate::puzzle::Puzzle;
use crate::tree::{FatouTree, TreeLevelReport, TreeOptions, TreeWorkspace};
use crate::{map_cells, C64};

pub type Rgba = [u8; 4];

/// Stage colours, cycled.
pub const PALETTE: [Rgba; 12] = [
    [255, 241, 160, 255],
    [255, 190, 92, 255],
    [235, 110, 80, 255],
    [200, 60, 120, 255],
    [140, 70, 170, 255],
    [70, 110, 200, 255],
    [40, 170, 200, 255],
    [50, 180, 130, 255],
    [130, 200, 80, 255],
    [200, 210, 60, 255],
    [160, 120, 80, 255],
    [120, 120, 120, 255],
];

pub const BASIN_COLORS: [Rgba; 4] = [[250, 232, 178, 255], [190, 226, 190, 255], [214, 196, 236, 255], [246, 200, 200, 255]];
pub const UNDECIDED: Rgba = [255, 0, 255, 255];
pub const ORBIT: Rgba = [210, 20, 20, 255];
pub const RAY: Rgba = [20, 20, 20, 255];
const ESCAPE_NEAR: [f64; 3] = [232.0, 238.0, 250.0];
const ESCAPE_FAR: [f64; 3] = [18.0, 36.0, 104.0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgba) -> Image {
        Image { width, height, rgba: fill.repeat(width * height) }
    }

    pub fn get(&self, idx: usize) -> Rgba {
        let k = 4 * idx;
        [self.rgba[k], self.rgba[k + 1], self.rgba[k + 2], self.rgba[k + 3]]
    }

    pub fn set(&mut self, idx: usize, c: Rgba) {
        self.rgba[4 * idx..4 * idx + 4].copy_from_slice(&c);
    }

    /// Mixes `c` into a pixel with weight `t`.
    pub fn blend(&mut self, idx: usize, c: Rgba, t: f64) {
        let old = self.get(idx);
        let mut out = [0u8; 4];
        for k in 0..3 {
            out[k] = (old[k] as f64 * (1.0 - t) + c[k] as f64 * t).round() as u8;
        }
        out[3] = 255;
        self.set(idx, out);
    }

    pub fn fill_mask(&mut self, mask: &[bool], c: Rgba) {
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            self.set(i, c);
        }
    }

    pub fn draw_polyline(&mut self, grid: &Grid, points: &[C64], c: Rgba) {
        for idx in grid.polyline_cells(points) {
            self.set(idx, c);
        }
    }

    /// Square marker of half-width `r` cells.
    pub fn mark(&mut self, grid: &Grid, z: C64, c: Rgba, r: usize) {
        if let Some(idx) = grid.index_of(z) {
            for k in grid.neighborhood(idx, r) {
                self.set(k, c);
            }
        }
    }
}

fn escape_color(n: u32) -> Rgba {
    let s = 1.0 - (-(n as f64) / 12.0).exp();
    let mut out = [0u8, 0, 0, 255];
    for k in 0..3 {
        out[k] = (ESCAPE_NEAR[k] + (ESCAPE_FAR[k] - ESCAPE_NEAR[k]) * s).round() as u8;
    }
    out
}

pub fn basin_color(id: u16) -> Rgba {
    BASIN_COLORS[id as usize % BASIN_COLORS.len()]
}

/// Escape shading, basin colours and undecided cells.
pub fn julia_image(raster: &Raster) -> Image {
    let g = raster.grid;
    let mut img = Image::new(g.nx, g.ny, UNDECIDED);
    for (i, l) in raster.labels.iter().enumerate() {
        let c = match l {
            CellLabel::Escaping(n) => escape_color(*n),
            CellLabel::Basin(b) => basin_color(*b),
            CellLabel::Bounded => UNDECIDED,
            CellLabel::GraphCut => RAY,
        };
        img.set(i, c);
    }
    img
}

/// Colours the components added at stage `s` with `PALETTE[s mod 12]`.
pub fn paint_stages(img: &mut Image, ws: &TreeWorkspace, tree: &FatouTree) {
    for (s, comps) in tree.stages.iter().enumerate() {
        let c = PALETTE[s % PALETTE.len()];
        for &comp in comps {
            for &idx in ws.fatou.cells(comp) {
                img.set(idx as usize, c);
            }
        }
    }
}

pub const CUT: Rgba = [0, 0, 0, 255];
pub const EXITED: Rgba = [200, 200, 200, 255];

/// Depth-`depth` pieces in palette colours over the Julia image; cells whose orbit left
/// the domain earlier are grey, the graph `Γ` is black.
pub fn puzzle_image(raster: &Raster, pz: &Puzzle, depth: usize) -> Image {
    let mut img = julia_image(raster);
    let map = pz.map(depth);
    for i in 0..raster.grid.len() {
        if pz.graph.is_cut(i) {
            img.set(i, CUT);
        } else if let Some(l) = map.label(i) {
            img.set(i, PALETTE[l as usize % PALETTE.len()]);
        } else if pz.graph.in_domain(i) && !pz.graph.in_inner(i) {
            img.set(i, EXITED);
        }
    }
    img
}

/// `résit(f_a, a)` from the closed form over a parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResitMap {
    pub grid: Grid,
    pub values: Vec<Option<C64>>,
}

pub fn resit_map(grid: Grid) -> ResitMap {
    ResitMap { grid, values: map_cells(grid.len(), |i| resit_fa(grid.center_of(i)).ok()) }
}

impl ResitMap {
    pub fn negative_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.re < 0.0).count()
    }

    /// Whether a cell within `r` cells of `z` has `Re résit < 0`.
    pub fn negative_near(&self, z: C64, r: usize) -> bool {
        let Some(idx) = self.grid.index_of(z) else { return false };
        self.grid.neighborhood(idx, r).iter().any(|&k| self.values[k].is_some_and(|v| v.re < 0.0))
    }

    /// Orange where `Re résit < 0`, blue where it is positive, darker with `|Re résit|`.
    pub fn image(&self) -> Image {
        let mut img = Image::new(self.grid.nx, self.grid.ny, CUT);
        for (i, v) in self.values.iter().enumerate() {
            let Some(v) = v else { continue };
            let t = (v.re.abs().atan() / std::f64::consts::FRAC_PI_2).clamp(0.0, 1.0);
            let base = if v.re < 0.0 { OVERLAY } else { [60, 110, 220, 255] };
            img.set(i, [255, 255, 255, 255]);
            img.blend(i, base, 0.25 + 0.75 * t);
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuliaOptions {
    pub budget: u32,
    /// Draw the first [`ORBIT_LENGTH`] iterates of every critical point.
    pub critical_orbits: bool,
    pub rays: Vec<Angle>,
    /// Compute the Fatou-tree report.
    pub tree: bool,
    /// Colour the stages of this level.
    pub tree_level: Option<usize>,
    pub max_stages: usize,
    pub ray_options: RayOptions,
}

impl Default for JuliaOptions {
    fn default() -> Self {
        JuliaOptions {
            budget: ClassifyOptions::default().budget,
            critical_orbits: true,
            rays: Vec::new(),
            tree: true,
            tree_level: None,
            max_stages: 40,
            ray_options: RayOptions::default(),
        }
    }
}

pub const ORBIT_LENGTH: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalOrbit {
    pub point: C64,
    pub multiplicity: usize,
    /// `z, f(z), …`, cut at the first non-finite value.
    pub iterates: Vec<C64>,
    /// First index after which the orbit sits on a fixed point.
    pub settles_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayMark {
    pub angle: String,
    pub landing: Option<Landing>,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub escaping: usize,
    pub bounded: usize,
    pub basins: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuliaReport {
    pub polynomial: Polynomial,
    pub grid: Grid,
    pub budget: u32,
    pub effective_budget: u32,
    pub escape_radius: f64,
    pub attractors: Vec<CycleRecord>,
    pub cells: CellCounts,
    pub critical_orbits: Vec<CriticalOrbit>,
    pub rays: Vec<RayMark>,
    pub tree: Option<TreeLevelReport>,
    pub stages_drawn: Option<usize>,
    pub errors: Vec<String>,
}

pub fn critical_orbit(f: &Polynomial, z: C64, multiplicity: usize) -> CriticalOrbit {
    let mut iterates = vec![z];
    let mut w = z;
    for _ in 1..ORBIT_LENGTH {
        w = f.eval(w);
        if !(w.re.is_finite() && w.im.is_finite()) {
            break;
        }
        iterates.push(w);
    }
    let tol = |a: C64| 1e-12 * a.norm().max(1.0);
    let settles_at = iterates.windows(2).position(|p| (p[1] - p[0]).norm() <= tol(p[0]));
    CriticalOrbit { point: z, multiplicity, iterates, settles_at }
}

/// Julia-set image with the requested marks. Failures of the marks are collected in
/// `errors`; the image is still produced.
pub fn render_julia(f: &Polynomial, grid: Grid, opts: &JuliaOptions) -> (Image, JuliaReport) {
    let raster = classify_grid(f, grid, ClassifyOptions { budget: opts.budget, ..ClassifyOptions::default() });
    let mut img = julia_image(&raster);
    let mut errors = Vec::new();

    let mut tree = None;
    let mut stages_drawn = None;
    if opts.tree || opts.tree_level.is_some() {
        let ws = TreeWorkspace::new(f, &raster, TreeOptions::default());
        let max_level = f.degree().saturating_sub(1).max(opts.tree_level.unwrap_or(0));
        match ws.report(max_level, opts.max_stages) {
            Ok((rep, trees)) => {
                if let Some(k) = opts.tree_level {
                    match trees.get(k) {
                        Some(t) => {
                            paint_stages(&mut img, &ws, t);
                            stages_drawn = Some(t.stages.len());
                        }
                        None => errors.push(format!("tree level {k} not reached (k(f) = {})", rep.k_of_f)),
                    }
                }
                tree = Some(rep);
            }
            Err(e) => errors.push(format!("fatou tree: {e}")),
        }
    }

    let mut rays = Vec::new();
    for theta in &opts.rays {
        match trace_external_ray(f, theta, 3.0, opts.ray_options.landing_cutoff, &opts.ray_options) {
            Ok(path) => {
                img.draw_polyline(&grid, &path.points, RAY);
                if let Landing::Landed { z } = path.landing {
                    img.draw_polyline(&grid, &[*path.points.last().unwrap_or(&z), z], RAY);
                }
                rays.push(RayMark { angle: theta.to_string(), landing: Some(path.landing), points: path.points.len() });
            }
            Err(e) => {
                errors.push(format!("ray {theta}: {e}"));
                rays.push(RayMark { angle: theta.to_string(), landing: None, points: 0 });
            }
        }
    }

    let mut orbits = Vec::new();
    if opts.critical_orbits {
        match critical_points(f) {
            Ok(crit) => {
                for r in crit {
                    let o = critical_orbit(f, r.z, r.multiplicity);
                    img.draw_polyline(&grid, &o.iterates, ORBIT);
                    img.mark(&grid, r.z, ORBIT, 1);
                    orbits.push(o);
                }
            }
            Err(e) => errors.push(format!("critical points: {e}")),
        }
    }

    let mut basins = vec![0usize; raster.attractors.len()];
    let (mut escaping, mut bounded) = (0, 0);
    for l in &raster.labels {
        match l {
            CellLabel::Escaping(_) => escaping += 1,
            CellLabel::Basin(b) => basins[*b as usize] += 1,
            _ => bounded += 1,
        }
    }
    let report = JuliaReport {
        polynomial: f.clone(),
        grid,
        budget: opts.budget,
        effective_budget: raster.effective_budget,
        escape_radius: raster.escape_radius,
        attractors: raster.attractors.iter().map(|a| a.cycle.clone()).collect(),
        cells: CellCounts { escaping, bounded, basins },
        critical_orbits: orbits,
        rays,
        tree,
        stages_drawn,
        errors,
    };
    (img, report)
}

/// Fate of the free critical orbits at one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamClass {
    Escaping,
    AttractedToZero,
    OtherAttractor,
    ParabolicAdjacent,
    Undecided,
    Singular,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] = [
        ParamClass::Escaping,
        ParamClass::AttractedToZero,
        ParamClass::OtherAttractor,
        ParamClass::ParabolicAdjacent,
        ParamClass::Undecided,
        ParamClass::Singular,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::Escaping => "escaping",
            ParamClass::AttractedToZero => "attracted-to-zero",
            ParamClass::OtherAttractor => "other-attractor",
            ParamClass::ParabolicAdjacent => "parabolic-adjacent",
            ParamClass::Undecided => "undecided",
            ParamClass::Singular => "singular",
        }
    }

    pub fn color(&self) -> Rgba {
        match self {
            ParamClass::Escaping => [24, 40, 96, 255],
            ParamClass::AttractedToZero => [250, 232, 178, 255],
            ParamClass::OtherAttractor => [96, 186, 120, 255],
            ParamClass::ParabolicAdjacent => [120, 190, 240, 255],
            ParamClass::Undecided => UNDECIDED,
            ParamClass::Singular => [0, 0, 0, 255],
        }
    }

    // when several free critical points disagree the higher rank wins
    fn rank(&self) -> u8 {
        match self {
            ParamClass::Singular => 6,
            ParamClass::Escaping => 5,
            ParamClass::Undecided => 4,
            ParamClass::OtherAttractor => 3,
            ParamClass::AttractedToZero => 2,
            ParamClass::ParabolicAdjacent => 1,
        }
    }
}

const CYCLE_WINDOW: usize = 64;

/// Follows the orbit of `z` for at most `budget` steps. `petals` are attracting petals of a
/// known parabolic point.
pub fn orbit_fate(f: &Polynomial, z: C64, budget: u32, petals: &[Petal]) -> ParamClass {
    let r = f.escape_radius();
    let mut w = z;
    let mut anchor = z;
    let mut since = 0usize;
    for _ in 0..budget {
        w = f.eval(w);
        if !(w.norm() <= r) {
            return ParamClass::Escaping;
        }
        if petals.iter().any(|p| p.contains(w)) {
            return ParamClass::ParabolicAdjacent;
        }
        since += 1;
        if (w - anchor).norm() < 1e-5 * w.norm().max(1.0) {
            if let Some(class) = attracting_cycle_at(f, w, since) {
                return class;
            }
        }
        if since == CYCLE_WINDOW {
            anchor = w;
            since = 0;
        }
    }
    ParamClass::Undecided
}

fn attracting_cycle_at(f: &Polynomial, w: C64, p: usize) -> Option<ParamClass> {
    let z = refine_periodic(f, w, p)?;
    if (z - w).norm() > 1e-3 * w.norm().max(1.0) {
        return None;
    }
    let (_, dw) = f.iterate_d(z, p);
    if dw.norm() >= 1.0 {
        return None;
    }
    let mut v = z;
    let mut near_zero = v.norm() < 1e-9;
    for _ in 1..p {
        v = f.eval(v);
        near_zero |= v.norm() < 1e-9;
    }
    Some(if near_zero { ParamClass::AttractedToZero } else { ParamClass::OtherAttractor })
}

/// Petals of the parabolic fixed point `a` of `f_a`.
pub fn fa_petals(f: &Polynomial, a: C64) -> Vec<Petal> {
    let lambda = f.derivative_at(a);
    let (class, rotation) = classify_multiplier(lambda);
    let cycle = CycleRecord { period: 1, points: vec![a], multiplier: lambda, class, rotation, resit: None };
    petals_for(f, &cycle)
}

pub fn classify_parameter(family: Family, param: C64, budget: u32) -> ParamClass {
    let (Ok(f), Ok(crit)) = (family.build(param), family.free_critical_points(param)) else {
        return ParamClass::Singular;
    };
    let petals = match family {
        Family::Fa => fa_petals(&f, param),
        Family::Fc => Vec::new(),
    };
    crit.iter()
        .map(|&c| orbit_fate(&f, c, budget, &petals))
        .max_by_key(ParamClass::rank)
        .unwrap_or(ParamClass::Undecided)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationRaster {
    pub family: Family,
    pub grid: Grid,
    pub budget: u32,
    pub classes: Vec<ParamClass>,
    /// For `f_a`: whether `Re résit(f_a, a) < 0`.
    pub overlay: Option<Vec<bool>>,
}

pub const OVERLAY: Rgba = [255, 120, 0, 255];
const OVERLAY_WEIGHT: f64 = 0.45;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub name: String,
    pub rgba: Rgba,
    pub count: usize,
}

impl BifurcationRaster {
    pub fn image(&self) -> Image {
        let mut img = Image::new(self.grid.nx, self.grid.ny, UNDECIDED);
        for (i, c) in self.classes.iter().enumerate() {
            img.set(i, c.color());
        }
        if let Some(ov) = &self.overlay {
            for (i, _) in ov.iter().enumerate().filter(|(_, &o)| o) {
                img.blend(i, OVERLAY, OVERLAY_WEIGHT);
            }
        }
        img
    }

    pub fn legend(&self) -> Vec<LegendEntry> {
        let mut out: Vec<LegendEntry> = ParamClass::ALL
            .iter()
            .map(|c| LegendEntry {
                name: c.name().to_string(),
                rgba: c.color(),
                count: self.classes.iter().filter(|x| *x == c).count(),
            })
            .collect();
        if let Some(ov) = &self.overlay {
            out.push(LegendEntry {
                name: format!("re-resit-negative (blended {OVERLAY_WEIGHT})"),
                rgba: OVERLAY,
                count: ov.iter().filter(|&&o| o).count(),
            });
        }
        out
    }
}

/// Parameter-plane classification; `f_a` rasters carry the sign of `Re résit` from its
/// closed form.
pub fn bifurcation_raster(family: Family, grid: Grid, budget: u32) -> BifurcationRaster {
    let classes = map_cells(grid.len(), |i| classify_parameter(family, grid.center_of(i), budget));
    let overlay = match family {
        Family::Fa => Some(map_cells(grid.len(), |i| resit_fa(grid.center_of(i)).is_ok_and(|r| r.re < 0.0))),
        Family::Fc => None,
    };
    BifurcationRaster { family, grid, budget, classes, overlay }
}
