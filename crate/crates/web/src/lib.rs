//! Browser bindings: Julia sets, parameter planes and external rays as RGBA buffers.

use wasm_bindgen::prelude::*;

use fatou_atlas::angle::Angle;
use fatou_atlas::families::Family;
use fatou_atlas::raster::Grid;
use fatou_atlas::rays::{trace_external_ray, RayOptions};
use fatou_atlas::render::{bifurcation_raster, render_julia as julia, Image, JuliaOptions};
use fatou_atlas::{Polynomial, Rect, C64};

#[wasm_bindgen]
pub struct Rendered {
    image: Image,
    report: String,
}

#[wasm_bindgen]
impl Rendered {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.image.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Row-major RGBA, top row first.
    pub fn rgba(&self) -> Vec<u8> {
        self.image.rgba.clone()
    }

    /// JSON report.
    pub fn report(&self) -> String {
        self.report.clone()
    }
}

fn polynomial(coeffs: &[f64]) -> Result<Polynomial, String> {
    if coeffs.len() < 2 || coeffs.len() % 2 != 0 {
        return Err("coefficients come as re, im pairs for a₁ … a_{d−1}".into());
    }
    let c: Vec<C64> = coeffs.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
    Polynomial::new(c.len() + 1, c).map_err(|e| e.to_string())
}

fn grid(cx: f64, cy: f64, w: f64, h: f64, nx: usize, ny: usize) -> Result<Grid, String> {
    Grid::new(Rect::new(C64::new(cx, cy), w, h), nx, ny).map_err(|e| e.to_string())
}

fn family(name: &str) -> Result<Family, String> {
    name.parse()
}

pub fn family_coeffs_impl(name: &str, re: f64, im: f64) -> Result<Vec<f64>, String> {
    let f = family(name)?.build(C64::new(re, im)).map_err(|e| e.to_string())?;
    Ok(f.coeffs().iter().flat_map(|c| [c.re, c.im]).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn render_julia_impl(
    coeffs: &[f64],
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    nx: usize,
    ny: usize,
    budget: u32,
    angles: &str,
    tree_level: i32,
) -> Result<Rendered, String> {
    let f = polynomial(coeffs)?;
    let rays = angles
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Angle>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = JuliaOptions {
        budget,
        rays,
        tree: tree_level >= 0,
        tree_level: usize::try_from(tree_level).ok(),
        ..JuliaOptions::default()
    };
    let (image, rep) = julia(&f, grid(cx, cy, w, h, nx, ny)?, &opts);
    let report = serde_json::to_string(&rep).map_err(|e| e.to_string())?;
    Ok(Rendered { image, report })
}

#[allow(clippy::too_many_arguments)]
pub fn render_bifurcation_impl(
    name: &str,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    nx: usize,
    ny: usize,
    budget: u32,
) -> Result<Rendered, String> {
    let b = bifurcation_raster(family(name)?, grid(cx, cy, w, h, nx, ny)?, budget);
    let report = serde_json::to_string(&b.legend()).map_err(|e| e.to_string())?;
    Ok(Rendered { image: b.image(), report })
}

pub fn trace_ray_impl(coeffs: &[f64], angle: &str) -> Result<String, String> {
    let f = polynomial(coeffs)?;
    let theta: Angle = angle.parse().map_err(|e: fatou_atlas::angle::AngleError| e.to_string())?;
    let opts = RayOptions::default();
    let path = trace_external_ray(&f, &theta, 3.0, opts.landing_cutoff, &opts).map_err(|e| e.to_string())?;
    serde_json::to_string(&path).map_err(|e| e.to_string())
}

/// Coefficients `[re₁, im₁, …]` of a family member.
#[wasm_bindgen]
pub fn family_coeffs(name: &str, re: f64, im: f64) -> Result<Vec<f64>, JsError> {
    family_coeffs_impl(name, re, im).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn render_julia(
    coeffs: &[f64],
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    nx: usize,
    ny: usize,
    budget: u32,
    angles: &str,
    tree_level: i32,
) -> Result<Rendered, JsError> {
    render_julia_impl(coeffs, cx, cy, w, h, nx, ny, budget, angles, tree_level).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn render_bifurcation(
    name: &str,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    nx: usize,
    ny: usize,
    budget: u32,
) -> Result<Rendered, JsError> {
    render_bifurcation_impl(name, cx, cy, w, h, nx, ny, budget).map_err(|e| JsError::new(&e))
}

/// External ray as a JSON path.
#[wasm_bindgen]
pub fn trace_ray(coeffs: &[f64], angle: &str) -> Result<String, JsError> {
    trace_ray_impl(coeffs, angle).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn julia_of_z_cubed() {
        let r = render_julia_impl(&[0.0, 0.0, 0.0, 0.0], 0.0, 0.0, 4.0, 4.0, 40, 30, 200, "1/8", 0).unwrap();
        assert_eq!((r.width(), r.height(), r.rgba().len()), (40, 30, 40 * 30 * 4));
        let rep: serde_json::Value = serde_json::from_str(&r.report()).unwrap();
        assert_eq!(rep["tree"]["k_of_f"], 0);
    }

    #[test]
    fn bifurcation_legend_counts_every_pixel() {
        let r = render_bifurcation_impl("fc", 0.0, 0.0, 4.0, 4.0, 20, 20, 100).unwrap();
        let legend: Vec<serde_json::Value> = serde_json::from_str(&r.report()).unwrap();
        assert_eq!(legend.iter().map(|l| l["count"].as_u64().unwrap()).sum::<u64>(), 400);
        assert!(render_bifurcation_impl("fx", 0.0, 0.0, 4.0, 4.0, 2, 2, 10).is_err());
    }

    #[test]
    fn ray_of_z_cubed_is_radial() {
        let s = trace_ray_impl(&[0.0, 0.0, 0.0, 0.0], "1/8").unwrap();
        let path: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(path["landing"]["status"], "landed");
        assert!(family_coeffs_impl("fa", 0.0, 0.0).is_err());
        assert_eq!(family_coeffs_impl("fc", 1.0, 0.0).unwrap(), vec![0.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
    }
}
