//! Acceptance suite. Run with `cargo test -p fatou-atlas-cli --test acceptance`; prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fatou_atlas::angle::{periodic_angles, Angle};
use fatou_atlas::families::{family_fa, family_fc, Family};
use fatou_atlas::poly::{aberth_raw, critical_points, cycle_from_point, residu_iteratif};
use fatou_atlas::puzzle::{build_graph, shape_of, NestEnd, Puzzle, PuzzleError};
use fatou_atlas::raster::{classify_grid, green_function, ClassifyOptions, Grid, Raster, GREEN_MAX_ITER};
use fatou_atlas::rays::{ray_point, trace_equipotential, trace_external_ray, RayOptions};
use fatou_atlas::render::{bifurcation_raster, resit_map};
use fatou_atlas::tree::{limbs, tree_report, Coverage, Maximality, TreeOptions, TreeWorkspace};
use fatou_atlas::{Polynomial, Rect, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn square(n: usize) -> Grid {
    Grid::new(Rect::centered_square(2.0), n, n).unwrap()
}

fn raster(f: &Polynomial, n: usize) -> Raster {
    classify_grid(f, square(n), ClassifyOptions::default())
}

fn random_param(rng: &mut ChaCha8Rng, ok: impl Fn(C64) -> bool) -> C64 {
    loop {
        let z = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        if ok(z) {
            return z;
        }
    }
}

// Oracles: closed forms evaluated independently of the library.

fn oracle_c_prime(c: C64) -> C64 {
    let c3 = c.powu(3);
    (c3 * c3 - 2.0 * c3 + 3.0) / (2.0 * c * c * (c3 - 2.0))
}

fn oracle_resit(a: C64) -> C64 {
    let w = a.powu(3) - 1.0;
    1.0 - 2.0 / w - 1.0 / (w * w)
}

fn power_sum(f: &Polynomial, z: C64) -> (C64, C64) {
    let d = f.degree() as u32;
    let (mut v, mut dv) = (z.powu(d), d as f64 * z.powu(d - 1));
    for (k, a) in f.coeffs().iter().enumerate() {
        v += a * z.powu(k as u32 + 1);
        dv += (k as f64 + 1.0) * a * z.powu(k as u32);
    }
    (v, dv)
}

/// Newton on `fᵖ(z) − z` with the chain rule over [`power_sum`].
fn oracle_periodic(f: &Polynomial, z0: C64, p: usize) -> Option<C64> {
    let mut z = z0;
    for _ in 0..60 {
        let (mut w, mut dw) = (z, c(1.0, 0.0));
        for _ in 0..p {
            let (v, dv) = power_sum(f, w);
            dw *= dv;
            w = v;
        }
        let step = (w - z) / (dw - 1.0);
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        z -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    Some(z)
}

fn family_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_fc, mut worst_crit, mut worst_fa) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let cc = random_param(&mut rng, |z| z.norm() > 0.1 && (z.powu(3) - 2.0).norm() > 0.1);
        let f = family_fc(cc).map_err(|e| e.to_string())?;
        let fc = f.eval(cc);
        worst_fc = worst_fc.max((f.eval(fc) - fc).norm());
        let crit = critical_points(&f).map_err(|e| format!("c = {cc}: {e}"))?;
        let mut found: Vec<C64> = crit.iter().flat_map(|r| std::iter::repeat(r.z).take(r.multiplicity)).collect();
        for want in [c(0.0, 0.0), cc, oracle_c_prime(cc)] {
            let (k, d) = found.iter().enumerate().map(|(k, z)| (k, (z - want).norm())).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            worst_crit = worst_crit.max(d);
            found.remove(k);
        }

        let a = random_param(&mut rng, |z| z.norm() > 0.1);
        let f = family_fa(a).map_err(|e| e.to_string())?;
        worst_fa = worst_fa.max((f.eval(a) - a).norm()).max((f.derivative_at(a) - 1.0).norm());
    }
    check!(worst_fc < 1e-9, "|f_c²(c) − f_c(c)| reached {worst_fc:e}");
    check!(worst_crit < 1e-9, "critical points off by {worst_crit:e}");
    check!(worst_fa < 1e-10, "f_a(a) = a, f_a′(a) = 1 off by {worst_fa:e}");
    Ok(format!("fc orbit {worst_fc:.1e}, crit {worst_crit:.1e}, fa {worst_fa:.1e}"))
}

fn resit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = random_param(&mut rng, |z| z.norm() > 0.2 && (z.powu(3) - 1.0).norm() > 0.1);
        let f = family_fa(a).map_err(|e| e.to_string())?;
        let r = residu_iteratif(&f, &cycle_from_point(&f, a, 1)).map_err(|e| format!("a = {a}: {e}"))?;
        worst = worst.max((r.value - oracle_resit(a)).norm());
    }
    check!(worst < 1e-6, "contour vs closed form {worst:e}");
    let f = family_fa(c(0.5, 0.0)).unwrap();
    let half = residu_iteratif(&f, &cycle_from_point(&f, c(0.5, 0.0), 1)).map_err(|e| e.to_string())?.value;
    check!((half - c(1.9795918367, 0.0)).norm() < 1e-6, "résit at 0.5 is {half}");
    let g = square(200);
    let m = resit_map(g);
    for k in 0..3 {
        let w = C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 3.0);
        let idx = g.index_of(w).unwrap();
        let oracle = g.neighborhood(idx, 2).iter().any(|&i| oracle_resit(g.center_of(i)).re < 0.0);
        check!(oracle, "oracle finds no Re < 0 cell beside {w}");
        check!(m.negative_near(w, 2), "no Re < 0 cell detected beside {w}");
    }
    let overlay = bifurcation_raster(Family::Fa, Grid::new(Rect::new(c(0.5, 0.0), 1e-3, 1e-3), 1, 1).unwrap(), 100).overlay;
    check!(overlay == Some(vec![false]), "overlay at a = 0.5 not positive");
    Ok(format!("max contour error {worst:.1e}, résit(0.5) = {:.10}", half.re))
}

fn potential() -> Outcome {
    let f = Polynomial::monomial(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_g = 0.0f64;
    for _ in 0..100 {
        let z = C64::from_polar(rng.gen_range(1.5..4.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let g = green_function(&f, z, GREEN_MAX_ITER).ok_or("no potential")?;
        worst_g = worst_g.max((g - z.norm().ln()).abs());
    }
    check!(worst_g < 1e-9, "|G − log|z|| = {worst_g:e}");
    let opts = RayOptions::default();
    let ray = trace_external_ray(&f, &Angle::new(1, 8).unwrap(), 3.0, 1e-3, &opts).map_err(|e| e.to_string())?;
    let dir = C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    let radial = ray.points.iter().map(|z| (z * dir).im.abs()).fold(0.0, f64::max);
    check!(radial < 1e-6, "ray 1/8 leaves the radial line by {radial:e}");
    let eq = trace_equipotential(&f, 2f64.ln(), 64, &opts).map_err(|e| e.to_string())?;
    let circ = eq.points.iter().map(|z| (z.norm() - 2.0).abs()).fold(0.0, f64::max);
    check!(circ < 1e-6 && eq.points.len() == 65, "equipotential off |z| = 2 by {circ:e}");
    Ok(format!("G {worst_g:.1e}, ray {radial:.1e}, equipotential {circ:.1e}"))
}

fn rays() -> Outcome {
    let maps = [
        (Polynomial::new(3, vec![c(0.5, 0.0), c(0.0, 0.0)]).unwrap(), 2u32),
        (Polynomial::new(2, vec![c(0.3, 0.2)]).unwrap(), 3u32),
    ];
    let opts = RayOptions::default();
    let mut worst_eq = 0.0f64;
    let mut worst_land = 0.0f64;
    let mut cycles = 0;
    for (f, max_p) in &maps {
        let d = f.degree() as u64;
        for k in 0..20u128 {
            let theta = Angle::new((37 * k + 5) % 211, 211).unwrap();
            for s in [0.02, 0.1, 0.5] {
                let z = ray_point(f, &theta, s, &opts).map_err(|e| format!("{theta} at {s}: {e}"))?;
                let w = ray_point(f, &theta.mul(d), d as f64 * s, &opts).map_err(|e| format!("{theta} at {s}: {e}"))?;
                worst_eq = worst_eq.max((power_sum(f, z).0 - w).norm());
            }
        }
        for p in 1..=*max_p {
            for cyc in periodic_angles(d, p, 1 << 12).map_err(|e| e.to_string())? {
                let path = trace_external_ray(f, &cyc[0], 3.0, opts.landing_cutoff, &opts).map_err(|e| e.to_string())?;
                let z = path.landing_point().map_err(|e| format!("{}: {e}", cyc[0]))?;
                let star = oracle_periodic(f, z, p as usize).ok_or("newton failed")?;
                worst_land = worst_land.max((star - z).norm());
                cycles += 1;
            }
        }
    }
    check!(worst_eq < 1e-6, "f(R(θ)) vs R(dθ): {worst_eq:e}");
    check!(worst_land < 1e-6, "landing vs Newton orbit: {worst_land:e}");
    Ok(format!("equivariance {worst_eq:.1e}, {cycles} angle cycles land within {worst_land:.1e}"))
}

fn tree_verdicts() -> Outcome {
    let z3 = Polynomial::monomial(3).unwrap();
    let rep = tree_report(&z3, &raster(&z3, 512), 2, 40).map_err(|e| e.to_string())?;
    check!(rep.k_of_f == 0 && rep.maximality == Maximality::Equal, "z³: k = {}, {:?}", rep.k_of_f, rep.maximality);

    let f1 = family_fc(c(1.0, 0.0)).unwrap();
    let rep = tree_report(&f1, &raster(&f1, 512), 3, 40).map_err(|e| e.to_string())?;
    check!(rep.k_of_f == 0 && rep.maximality == Maximality::NotEqual, "f_c=1: k = {}, {:?}", rep.k_of_f, rep.maximality);
    for x in [1.0, -1.0] {
        let cov = rep.critical_coverage.iter().find(|cv| (cv.point - c(x, 0.0)).norm() < 1e-6).ok_or("critical point missing")?;
        check!(cov.coverage == Coverage::Outside, "f_c=1: {x} is {:?}", cov.coverage);
    }

    let fa = family_fa(c(0.9, 0.0)).unwrap();
    let rep = tree_report(&fa, &raster(&fa, 512), 3, 40).map_err(|e| e.to_string())?;
    check!(rep.maximality == Maximality::Equal && rep.defect_fraction < 0.02, "f_a(0.9): {:?}, defect {}", rep.maximality, rep.defect_fraction);
    Ok(format!("z³ (0, equal); f_c=1 (0, not-equal); f_a(0.9) (k = {}, equal, defect {:.4})", rep.k_of_f, rep.defect_fraction))
}

fn level_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut runs = 0;
    let mut failed = Vec::new();
    let mut hist = [0usize; 4];
    for fam in [Family::Fc, Family::Fa] {
        for _ in 0..50 {
            let p = random_param(&mut rng, |z| fam.build(z).is_ok());
            let f = fam.build(p).unwrap();
            match tree_report(&f, &raster(&f, 256), 3, 30) {
                Ok(rep) => {
                    runs += 1;
                    hist[rep.k_of_f.min(3)] += 1;
                    check!(rep.k_of_f <= 2, "{fam:?} at {p}: k = {}", rep.k_of_f);
                }
                Err(e) => failed.push(format!("{fam:?} {p}: {e}")),
            }
        }
    }
    check!(runs > 0, "no tree run succeeded");
    Ok(format!("{runs} runs, k histogram {hist:?}, {} runs without a tree", failed.len()))
}

/// Points near `J` by random backward orbits.
fn julia_samples(f: &Polynomial, rng: &mut ChaCha8Rng) -> C64 {
    let mut z = c(3.0, 0.7);
    for _ in 0..40 {
        let mut co = f.full_coeffs();
        co[0] -= z;
        let r = aberth_raw(&co, 200, 1e-14);
        z = r[rng.gen_range(0..r.len())];
    }
    z
}

fn puzzle() -> Outcome {
    let f = Polynomial::new(3, vec![c(0.5, 0.0), c(0.0, 0.0)]).unwrap();
    let r = raster(&f, 1024);
    let graph = build_graph(&f, &r, 0.5, 2).map_err(|e| e.to_string())?;
    let pz = Puzzle::new(&f, &graph, 8).map_err(|e| e.to_string())?;
    for n in 1..=8 {
        for id in 0..pz.piece_count(n) as u32 {
            let parents = pz.parents(n, id);
            check!(parents.len() == 1, "depth {n} piece {id} meets depth-{} pieces {parents:?}", n - 1);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut nests, mut shrinking, mut skipped, mut entries) = (0, 0, 0, 0);
    while nests < 50 {
        let z = julia_samples(&f, &mut rng);
        let nest = match pz.nest_of_point(z, 8) {
            Ok(n) => n,
            Err(PuzzleError::OnGraph { .. }) => {
                skipped += 1;
                check!(skipped < 50, "too many samples on the graph");
                continue;
            }
            Err(e) => return Err(format!("{z}: {e}")),
        };
        nests += 1;
        check!(nest.end == NestEnd::MaxDepth, "{z}: nest ends at {:?}", nest.end);
        check!(nest.pieces.windows(2).all(|w| w[1].diameter <= w[0].diameter), "{z}: diameters increase");
        shrinking += nest.shrinking as usize;
        for e in pz.elevator_evidence(&nest).entries {
            entries += 1;
            check!(e.degree <= 9 && e.within_bound, "{z}: first entry degree {}", e.degree);
            check!(e.disjoint, "{z}: first entry orbit pieces overlap at r = {}", e.r);
        }
    }
    check!(shrinking * 10 >= nests * 9, "only {shrinking}/{nests} nests under 3 cells");
    Ok(format!(
        "pieces {:?}, {shrinking}/{nests} nests under 3 cells, {entries} first entries checked, {skipped} samples on Γ",
        pz.report().piece_counts
    ))
}

fn shape() -> Outcome {
    let g = Grid::new(Rect::centered_square(1.0), 400, 400).unwrap();
    let cell = g.cell_size();
    let disk = |r: f64, ctr: C64| -> Vec<bool> { (0..g.len()).map(|i| (g.center_of(i) - ctr).norm() < r).collect() };
    let s0 = shape_of(g, &disk(0.8, c(0.0, 0.0)), c(0.0, 0.0)).map_err(|e| e.to_string())?;
    check!((s0 - 1.0).abs() <= 3.0 * cell / 0.8, "centre shape {s0}");
    let s1 = shape_of(g, &disk(0.8, c(0.0, 0.0)), c(0.4, 0.0)).map_err(|e| e.to_string())?;
    check!((s1 - 3.0).abs() <= 0.15, "half-radius shape {s1}");
    // an off-centre ellipse and its half-size copy
    let ellipse = |k: f64| -> Vec<bool> {
        (0..g.len())
            .map(|i| {
                let z = g.center_of(i) / k - c(0.1, 0.05);
                let w = z * C64::from_polar(1.0, -0.5);
                (w.re / 0.7).powi(2) + (w.im / 0.35).powi(2) < 1.0
            })
            .collect()
    };
    let x = c(0.25, 0.1);
    let big = shape_of(g, &ellipse(1.0), (x + c(0.1, 0.05)) * 1.0).map_err(|e| e.to_string())?;
    let small = shape_of(g, &ellipse(0.5), (x + c(0.1, 0.05)) * 0.5).map_err(|e| e.to_string())?;
    check!((big - small).abs() <= 0.05 * big, "rescale: {big} vs {small}");
    Ok(format!("centre {s0:.4}, half radius {s1:.4}, ellipse {big:.3} vs {small:.3}"))
}

fn limb_decay() -> Outcome {
    let f = Polynomial::new(3, vec![c(0.1, 0.0), c(0.0, 0.0)]).unwrap();
    let r = raster(&f, 1024);
    let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
    let l = limbs(&ws).map_err(|e| e.to_string())?;
    let cell = r.grid.cell_size();
    check!(l.windows(2).all(|w| w[0].diameter >= w[1].diameter), "limb diameters not sorted");
    let twentieth = l.get(19).map(|x| x.diameter / cell);
    if let Some(t) = twentieth {
        check!(t < 3.0, "20th largest limb is {t:.2} cells");
    }
    let largest = l.first().map_or(0.0, |x| x.diameter / cell);
    Ok(format!(
        "{} limbs, largest {largest:.1} cells, 20th {}",
        l.len(),
        twentieth.map_or("absent".to_string(), |t| format!("{t:.2} cells"))
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fatou-atlas")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    Ok(out.status.code().unwrap_or(-1))
}

fn determinism() -> Outcome {
    let jobs: [&[&str]; 6] = [
        &["render-julia", "--family", "fc", "--param", "1,0", "--res", "160", "--angles", "1/4,3/4", "--tree-level", "0"],
        &["render-bifurcation", "--family", "fa", "--res", "96"],
        &["trace-ray", "--coeffs", "0.5,0;0,0", "--angles", "1/8,1/4", "--res", "96"],
        &["fatou-tree", "--family", "fa", "--param", "0.9,0", "--res", "192"],
        &["puzzle", "--coeffs", "0.5,0;0,0", "--res", "256", "--depth", "3"],
        &["resit-map", "--res", "96", "--param", "0.5"],
    ];
    let base = std::env::temp_dir().join(format!("fatou-atlas-acceptance-{}", std::process::id()));
    let dirs: Vec<PathBuf> = (0..2).map(|k| base.join(k.to_string())).collect();
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| e.to_string())?;
    }
    let mut files = 0;
    for job in jobs {
        let name = job[0];
        let png = format!("{name}.png");
        let mut args = job.to_vec();
        args.extend(["--out", &png]);
        for d in &dirs {
            let code = run_cli(d, &args)?;
            check!(code == 0, "{name} exited with {code}");
        }
        for file in [png.clone(), format!("{name}.json")] {
            let a = std::fs::read(dirs[0].join(&file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].join(&file)).map_err(|e| e.to_string())?;
            check!(!a.is_empty() && a == b, "{file} differs between runs");
            files += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&base);
    Ok(format!("{files} files bit-identical across reruns of 6 jobs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("family identities", family_identities, Duration::from_secs(1)),
        ("résidu itératif", resit, Duration::from_secs(5)),
        ("potential calibration", potential, Duration::from_secs(1)),
        ("ray equivariance and landing", rays, Duration::from_secs(10)),
        ("Fatou-tree verdicts", tree_verdicts, Duration::from_secs(60)),
        ("level bound k ≤ d − 2", level_bound, Duration::from_secs(300)),
        ("puzzle invariants", puzzle, Duration::from_secs(120)),
        ("shape", shape, Duration::from_secs(1)),
        ("limb-diameter decay", limb_decay, Duration::from_secs(30)),
        ("determinism", determinism, Duration::from_secs(300)),
    ];
    let mut failures = 0;
    for (k, (name, run, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > *limit => Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} ({elapsed:.2?})", k + 1),
            Err(msg) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {msg} ({elapsed:.2?})", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
