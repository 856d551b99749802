use fatou_atlas::families::{family_fa, family_fc, Family};
use fatou_atlas::raster::{classify_grid, ClassifyOptions, Grid, Raster};
use fatou_atlas::tree::{limbs, tree_report, Coverage, Maximality, TreeOptions, TreeWorkspace};
use fatou_atlas::{Polynomial, Rect, C64};

fn raster(f: &Polynomial, n: usize) -> Raster {
    let g = Grid::new(Rect::centered_square(2.0), n, n).unwrap();
    classify_grid(f, g, ClassifyOptions::default())
}

#[test]
fn trees_are_forward_invariant() {
    for f in [Polynomial::monomial(3).unwrap(), family_fa(C64::new(0.9, 0.0)).unwrap(), family_fc(C64::new(1.0, 0.0)).unwrap()] {
        let r = raster(&f, 256);
        let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
        let (_, trees) = ws.report(3, 30).unwrap();
        for t in &trees {
            let defect = ws.forward_invariance_defect(t, 3);
            assert!(defect < 0.01, "level {} defect {defect}", t.level);
        }
    }
}

#[test]
fn stages_are_nested() {
    let f = family_fa(C64::new(0.9, 0.0)).unwrap();
    let r = raster(&f, 256);
    let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
    let (rep, trees) = ws.report(3, 30).unwrap();
    assert_eq!(rep.k_of_f, 1);
    let t = &trees[1];
    let mut prev = 0;
    for n in 0..t.stages.len() {
        let c = ws.stage_mask(t, n).iter().filter(|&&b| b).count();
        assert!(c >= prev);
        prev = c;
    }
    assert_eq!(prev, ws.tree_mask(t).iter().filter(|&&b| b).count());
}

#[test]
fn fc_one_leaves_both_free_critical_points_outside() {
    let f = family_fc(C64::new(1.0, 0.0)).unwrap();
    let rep = tree_report(&f, &raster(&f, 256), 3, 30).unwrap();
    assert_eq!(rep.k_of_f, 0);
    assert_eq!(rep.maximality, Maximality::NotEqual);
    for z in [1.0, -1.0] {
        let cov = rep.critical_coverage.iter().find(|c| (c.point - C64::new(z, 0.0)).norm() < 1e-6).unwrap();
        assert_eq!(cov.coverage, Coverage::Outside);
    }
}

#[test]
fn level_is_bounded_by_degree_minus_two() {
    // a coarse sweep; the acceptance suite runs the full one
    for fam in [Family::Fc, Family::Fa] {
        for k in 0..6 {
            let p = C64::from_polar(0.4 + 0.25 * k as f64, 0.9 * k as f64 + 0.3);
            let Ok(f) = fam.build(p) else { continue };
            if let Ok(rep) = tree_report(&f, &raster(&f, 128), 3, 20) {
                assert!(rep.k_of_f <= 2, "{fam:?} {p}: k = {}", rep.k_of_f);
            }
        }
    }
}

#[test]
fn limbs_are_sorted() {
    let f = Polynomial::new(3, vec![C64::new(0.1, 0.0), C64::new(0.0, 0.0)]).unwrap();
    let r = raster(&f, 256);
    let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
    let l = limbs(&ws).unwrap();
    assert!(l.windows(2).all(|w| w[0].diameter >= w[1].diameter));

    let f = family_fc(C64::new(1.0, 0.0)).unwrap();
    let r = raster(&f, 256);
    let ws = TreeWorkspace::new(&f, &r, TreeOptions::default());
    let l = limbs(&ws).unwrap();
    // the basin of −1 hangs off U(0)
    assert!(!l.is_empty());
    assert!(l[0].diameter > 0.5, "{:?}", &l[..l.len().min(3)]);
}
