use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fatou_atlas::angle::Angle;
use fatou_atlas::families::{family_fa, resit_fa, Family};
use fatou_atlas::poly::{cycle_from_point, residu_iteratif};
use fatou_atlas::puzzle::{build_graph_with, Puzzle, PuzzleOptions};
use fatou_atlas::raster::{classify_grid, ClassifyOptions, Grid};
use fatou_atlas::rays::{trace_external_ray, RayOptions};
use fatou_atlas::render::{
    bifurcation_raster, julia_image, paint_stages, puzzle_image, render_julia, resit_map, Image, JuliaOptions, RAY,
};
use fatou_atlas::tree::{limbs, TreeOptions, TreeWorkspace};
use fatou_atlas::{Polynomial, Rect, C64};

#[derive(Parser)]
#[command(name = "fatou-atlas", version, about = "Julia sets, external rays, Fatou trees and puzzles of monic 0-fixed polynomials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Target {
    /// Quartic family, fc or fa (with --param).
    #[arg(long)]
    family: Option<Family>,
    /// Family parameter as re,im.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    param: Option<C64>,
    /// Coefficients a1;a2;…;a_{d-1} of a1 z + … + z^d, each re,im.
    #[arg(long, allow_hyphen_values = true)]
    coeffs: Option<String>,
}

#[derive(Args, Clone)]
struct Plane {
    /// Box as cx,cy,w,h.
    #[arg(long = "box", value_parser = parse_box, allow_hyphen_values = true, default_value = "0,0,4,4")]
    rect: Rect,
    /// Resolution as nx,ny or n.
    #[arg(long, value_parser = parse_res, default_value = "512")]
    res: (usize, usize),
    /// Iteration budget.
    #[arg(long, default_value_t = 500)]
    budget: u32,
    /// Output PNG; the JSON report is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dynamical plane with critical orbits, rays and Fatou-tree stages.
    RenderJulia {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        plane: Plane,
        /// External rays to draw, as a/b,c/d.
        #[arg(long, value_delimiter = ',')]
        angles: Vec<Angle>,
        /// Colour the stages of this tree level.
        #[arg(long)]
        tree_level: Option<usize>,
        #[arg(long)]
        no_tree: bool,
        #[arg(long)]
        no_orbits: bool,
    },
    /// Parameter plane of fc or fa by the fate of the free critical orbits.
    RenderBifurcation {
        #[arg(long)]
        family: Family,
        #[command(flatten)]
        plane: Plane,
    },
    /// External rays with their landing points.
    TraceRay {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        plane: Plane,
        #[arg(long, value_delimiter = ',', required = true)]
        angles: Vec<Angle>,
        /// Potential the rays start from.
        #[arg(long, default_value_t = 3.0)]
        start: f64,
    },
    /// Level-k Fatou trees, maximality verdict and limbs.
    FatouTree {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        plane: Plane,
        /// Highest level tried (default d − 1).
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 40)]
        stages: usize,
    },
    /// Puzzle pieces of a given depth.
    Puzzle {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        plane: Plane,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Outer equipotential level.
        #[arg(long, default_value_t = 0.5)]
        level: f64,
        /// Preferred period of the boundary cycle.
        #[arg(long, default_value_t = 2)]
        period: usize,
    },
    /// Sign of Re résit(f_a, a) over the parameter plane.
    ResitMap {
        #[command(flatten)]
        plane: Plane,
        /// Parameter whose contour-integral résit is compared with the closed form.
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        param: Option<C64>,
    },
}

fn parse_complex(s: &str) -> Result<C64, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("{s:?}: {e}"))?;
    match v[..] {
        [re] => Ok(C64::new(re, 0.0)),
        [re, im] => Ok(C64::new(re, im)),
        _ => Err(format!("expected re,im, got {s:?}")),
    }
}

fn parse_box(s: &str) -> Result<Rect, String> {
    Rect::parse(s).ok_or_else(|| format!("expected cx,cy,w,h with w, h > 0, got {s:?}"))
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let v: Vec<usize> = s.split(',').map(|t| t.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|e| format!("{s:?}: {e}"))?;
    match v[..] {
        [n] if n > 0 => Ok((n, n)),
        [nx, ny] if nx > 0 && ny > 0 => Ok((nx, ny)),
        _ => Err(format!("expected nx,ny, got {s:?}")),
    }
}

impl Target {
    fn build(&self) -> Result<(Polynomial, Value), String> {
        match (self.family, &self.coeffs) {
            (Some(fam), None) => {
                let p = self.param.ok_or("--family needs --param")?;
                let f = fam.build(p).map_err(|e| e.to_string())?;
                Ok((f.clone(), json!({ "family": fam, "param": p, "polynomial": f })))
            }
            (None, Some(c)) => {
                let coeffs: Vec<C64> = c.split(';').map(parse_complex).collect::<Result<_, _>>()?;
                let f = Polynomial::new(coeffs.len() + 1, coeffs).map_err(|e| e.to_string())?;
                Ok((f.clone(), json!({ "polynomial": f })))
            }
            (Some(_), Some(_)) => Err("give either --family or --coeffs, not both".into()),
            (None, None) => Err("a map is required: --family fc|fa --param re,im, or --coeffs".into()),
        }
    }
}

impl Plane {
    fn grid(&self) -> Result<Grid, String> {
        Grid::new(self.rect, self.res.0, self.res.1).map_err(|e| e.to_string())
    }

    fn out(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}.png")))
    }

    fn describe(&self) -> Value {
        json!({ "box": self.rect, "resolution": [self.res.0, self.res.1], "budget": self.budget })
    }
}

struct Output {
    image: Image,
    report: Value,
    errors: Vec<String>,
}

fn classify(f: &Polynomial, plane: &Plane) -> Result<fatou_atlas::raster::Raster, String> {
    Ok(classify_grid(f, plane.grid()?, ClassifyOptions { budget: plane.budget, ..ClassifyOptions::default() }))
}

fn run(command: &Command) -> Result<(PathBuf, Value, Output), String> {
    let classify_opts = |budget| ClassifyOptions { budget, ..ClassifyOptions::default() };
    match command {
        Command::RenderJulia { target, plane, angles, tree_level, no_tree, no_orbits } => {
            let (f, desc) = target.build()?;
            let opts = JuliaOptions {
                budget: plane.budget,
                critical_orbits: !no_orbits,
                rays: angles.clone(),
                tree: !no_tree,
                tree_level: *tree_level,
                ..JuliaOptions::default()
            };
            let (image, rep) = render_julia(&f, plane.grid()?, &opts);
            let errors = rep.errors.clone();
            let tol = json!({ "classify": classify_opts(plane.budget), "tree": TreeOptions::default(), "ray": opts.ray_options });
            Ok((plane.out("render-julia"), json!({ "target": desc, "plane": plane.describe(), "tolerances": tol }), Output {
                image,
                report: serde_json::to_value(rep).map_err(|e| e.to_string())?,
                errors,
            }))
        }
        Command::RenderBifurcation { family, plane } => {
            let b = bifurcation_raster(*family, plane.grid()?, plane.budget);
            let report = json!({ "legend": b.legend(), "overlay": b.overlay.is_some() });
            Ok((plane.out("render-bifurcation"), json!({ "target": { "family": family }, "plane": plane.describe() }), Output {
                image: b.image(),
                report,
                errors: Vec::new(),
            }))
        }
        Command::TraceRay { target, plane, angles, start } => {
            let (f, desc) = target.build()?;
            let raster = classify(&f, plane)?;
            let mut image = julia_image(&raster);
            let ropts = RayOptions::default();
            let mut rays = Vec::new();
            let mut errors = Vec::new();
            for theta in angles {
                match trace_external_ray(&f, theta, *start, ropts.landing_cutoff, &ropts) {
                    Ok(path) => {
                        image.draw_polyline(&raster.grid, &path.points, RAY);
                        rays.push(json!({ "angle": theta, "path": path }));
                    }
                    Err(e) => {
                        errors.push(format!("ray {theta}: {e}"));
                        rays.push(json!({ "angle": theta, "error": e.to_string() }));
                    }
                }
            }
            let tol = json!({ "ray": ropts, "start_potential": start });
            Ok((plane.out("trace-ray"), json!({ "target": desc, "plane": plane.describe(), "tolerances": tol }), Output {
                image,
                report: json!({ "rays": rays }),
                errors,
            }))
        }
        Command::FatouTree { target, plane, depth, stages } => {
            let (f, desc) = target.build()?;
            let raster = classify(&f, plane)?;
            let ws = TreeWorkspace::new(&f, &raster, TreeOptions::default());
            let max_level = depth.unwrap_or(f.degree() - 1);
            let mut image = julia_image(&raster);
            let mut errors = Vec::new();
            let report = match ws.report(max_level, *stages) {
                Ok((rep, trees)) => {
                    if let Some(t) = trees.get(rep.k_of_f) {
                        paint_stages(&mut image, &ws, t);
                    }
                    let limbs = match limbs(&ws) {
                        Ok(l) => json!(l.iter().take(20).collect::<Vec<_>>()),
                        Err(e) => {
                            errors.push(format!("limbs: {e}"));
                            Value::Null
                        }
                    };
                    json!({ "tree": rep, "largest_limbs": limbs })
                }
                Err(e) => {
                    errors.push(format!("fatou tree: {e}"));
                    Value::Null
                }
            };
            let tol = json!({ "classify": classify_opts(plane.budget), "tree": TreeOptions::default(), "max_level": max_level, "max_stages": stages });
            Ok((plane.out("fatou-tree"), json!({ "target": desc, "plane": plane.describe(), "tolerances": tol }), Output {
                image,
                report,
                errors,
            }))
        }
        Command::Puzzle { target, plane, depth, level, period } => {
            let (f, desc) = target.build()?;
            let raster = classify(&f, plane)?;
            let popts = PuzzleOptions::default();
            let graph = build_graph_with(&f, &raster, *level, *period, &popts).map_err(|e| e.to_string())?;
            let pz = Puzzle::new(&f, &graph, *depth).map_err(|e| e.to_string())?;
            let image = puzzle_image(&raster, &pz, *depth);
            let pieces = pz.pieces(*depth);
            let report = json!({ "puzzle": pz.report(), "pieces": pieces });
            let tol = json!({ "classify": classify_opts(plane.budget), "puzzle": popts, "outer_level": level, "period_hint": period });
            Ok((plane.out("puzzle"), json!({ "target": desc, "plane": plane.describe(), "depth": depth, "tolerances": tol }), Output {
                image,
                report,
                errors: Vec::new(),
            }))
        }
        Command::ResitMap { plane, param } => {
            let g = plane.grid()?;
            let m = resit_map(g);
            let roots: Vec<Value> = (0..3)
                .map(|k| {
                    let w = C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 3.0);
                    json!({ "root": w, "negative_within_2_cells": m.negative_near(w, 2) })
                })
                .collect();
            let mut errors = Vec::new();
            let at = param.map(|a| {
                let closed = resit_fa(a).map_err(|e| e.to_string());
                let contour = family_fa(a)
                    .map_err(|e| e.to_string())
                    .and_then(|f| residu_iteratif(&f, &cycle_from_point(&f, a, 1)).map_err(|e| e.to_string()));
                match (closed, contour) {
                    (Ok(c), Ok(r)) => json!({ "param": a, "closed_form": c, "contour": r.value, "difference": (c - r.value).norm() }),
                    (c, r) => {
                        errors.push(format!("resit at {a}: {:?} {:?}", c.err(), r.err()));
                        json!({ "param": a })
                    }
                }
            });
            let report = json!({
                "negative_cells": m.negative_count(),
                "singular_cells": m.values.iter().filter(|v| v.is_none()).count(),
                "cube_roots": roots,
                "at_param": at,
            });
            Ok((plane.out("resit-map"), json!({ "target": { "family": Family::Fa }, "plane": plane.describe() }), Output {
                image: m.image(),
                report,
                errors,
            }))
        }
    }
}

fn write_png(path: &Path, img: &Image) -> Result<(), String> {
    image::save_buffer(path, &img.rgba, img.width as u32, img.height as u32, image::ExtendedColorType::Rgba8)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::RenderJulia { .. } => "render-julia",
        Command::RenderBifurcation { .. } => "render-bifurcation",
        Command::TraceRay { .. } => "trace-ray",
        Command::FatouTree { .. } => "fatou-tree",
        Command::Puzzle { .. } => "puzzle",
        Command::ResitMap { .. } => "resit-map",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (png, job, out) = match run(&cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let sidecar = png.with_extension("json");
    let doc = json!({
        "command": command_name(&cli.command),
        "versions": { "fatou-atlas": fatou_atlas::VERSION, "fatou-atlas-cli": env!("CARGO_PKG_VERSION") },
        "job": job,
        "png": png.file_name().map(|n| n.to_string_lossy().into_owned()),
        "report": out.report,
        "errors": out.errors,
    });
    if let Err(e) = write_png(&png, &out.image) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let text = serde_json::to_string_pretty(&doc).expect("report serialises");
    if let Err(e) = std::fs::write(&sidecar, text + "\n") {
        eprintln!("error: {}: {e}", sidecar.display());
        return ExitCode::from(1);
    }
    if out.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        for e in &out.errors {
            eprintln!("warning: {e}");
        }
        ExitCode::from(2)
    }
}
