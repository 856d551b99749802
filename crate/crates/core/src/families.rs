//! The quartic families `f_c` (critical point `c` mapped to a fixed point) and
//! `f_a` (parabolic fixed point `a` with multiplier 1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Polynomial, PARABOLIC_TOL};
use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("singular parameter {0}")]
    SingularParameter(C64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fc,
    Fa,
}

impl Family {
    pub fn build(&self, param: C64) -> Result<Polynomial, FamilyError> {
        match self {
            Family::Fc => family_fc(param),
            Family::Fa => family_fa(param),
        }
    }

    /// Critical points other than the superattracting 0.
    pub fn free_critical_points(&self, param: C64) -> Result<Vec<C64>, FamilyError> {
        match self {
            Family::Fc => Ok(vec![c_prime(param)?]),
            Family::Fa => {
                if param.norm() == 0.0 {
                    return Err(FamilyError::SingularParameter(param));
                }
                // f_a′(z) = z(4z² − 3(2a + 1/a²)z + 2(a² + 2/a))
                let a = param;
                let b = -3.0 * (2.0 * a + 1.0 / (a * a));
                let c = 2.0 * (a * a + 2.0 / a);
                let disc = (b * b - 16.0 * c).sqrt();
                Ok(vec![(-b + disc) / 8.0, (-b - disc) / 8.0])
            }
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Family, String> {
        match s {
            "fc" => Ok(Family::Fc),
            "fa" => Ok(Family::Fa),
            _ => Err(format!("unknown family {s:?} (expected fc or fa)")),
        }
    }
}

/// `c′ = (c⁶ − 2c³ + 3) / (2c²(c³ − 2))`.
pub fn c_prime(c: C64) -> Result<C64, FamilyError> {
    let c3 = c * c * c;
    let den = 2.0 * c * c * (c3 - 2.0);
    if den.norm() < 1e-12 {
        return Err(FamilyError::SingularParameter(c));
    }
    Ok((c3 * c3 - 2.0 * c3 + 3.0) / den)
}

/// `f_c(z) = 2cc′z² − (4/3)(c + c′)z³ + z⁴`, with critical points `0, c, c′` and the
/// critical value `f_c(c)` a fixed point.
pub fn family_fc(c: C64) -> Result<Polynomial, FamilyError> {
    let cp = c_prime(c)?;
    Polynomial::new(4, vec![C64::new(0.0, 0.0), 2.0 * c * cp, -(4.0 / 3.0) * (c + cp)])
        .map_err(|_| FamilyError::SingularParameter(c))
}

/// `f_a(z) = (a² + 2/a)z² − (2a + 1/a²)z³ + z⁴`, with `f_a(a) = a`, `f_a′(a) = 1`.
pub fn family_fa(a: C64) -> Result<Polynomial, FamilyError> {
    if a.norm() < 1e-12 {
        return Err(FamilyError::SingularParameter(a));
    }
    Polynomial::new(4, vec![C64::new(0.0, 0.0), a * a + 2.0 / a, -(2.0 * a + 1.0 / (a * a))])
        .map_err(|_| FamilyError::SingularParameter(a))
}

/// Closed form `résit(f_a, a) = 1 − 2/(a³ − 1) − 1/(a³ − 1)²`.
pub fn resit_fa(a: C64) -> Result<C64, FamilyError> {
    let w = a * a * a - 1.0;
    if w.norm() < 1e-12 || a.norm() < 1e-12 {
        return Err(FamilyError::SingularParameter(a));
    }
    Ok(1.0 - 2.0 / w - 1.0 / (w * w))
}

/// Whether `a` is a parameter where `f_a` has the parabolic fixed point `a` (always, away from
/// singular parameters); checks the multiplier numerically.
pub fn fa_is_parabolic(a: C64) -> bool {
    match family_fa(a) {
        Ok(f) => (f.derivative_at(a) - 1.0).norm() <= PARABOLIC_TOL && (f.eval(a) - a).norm() <= 1e-9,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{critical_points, cycle_from_point, residu_iteratif};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn fc_at_one() {
        let f = family_fc(c(1.0, 0.0)).unwrap();
        assert!((c_prime(c(1.0, 0.0)).unwrap() + 1.0).norm() < 1e-15);
        assert!((f.coeffs()[1] + 2.0).norm() < 1e-15);
        assert!(f.coeffs()[2].norm() < 1e-15);
        assert!((f.eval(c(1.0, 0.0)) + 1.0).norm() < 1e-15);
        assert!((f.eval(c(-1.0, 0.0)) + 1.0).norm() < 1e-15);
    }

    #[test]
    fn fc_singular() {
        assert!(family_fc(c(0.0, 0.0)).is_err());
        let r = 2f64.powf(1.0 / 3.0);
        assert!(family_fc(c(r, 0.0)).is_err());
    }

    #[test]
    fn fc_critical_value_is_fixed() {
        for &p in &[c(0.7, 0.2), c(-0.4, 1.1), c(1.5, -0.3)] {
            let f = family_fc(p).unwrap();
            let v = f.eval(p);
            assert!((f.eval(v) - v).norm() < 1e-10 * (1.0 + v.norm()));
            let cp = c_prime(p).unwrap();
            assert!(f.derivative_at(p).norm() < 1e-10);
            assert!(f.derivative_at(cp).norm() < 1e-10 * (1.0 + cp.norm().powi(3)));
        }
    }

    #[test]
    fn fa_parabolic_point() {
        for &a in &[c(0.5, 0.0), c(0.9, 0.0), c(-0.3, 0.8), c(1.4, 0.2)] {
            let f = family_fa(a).unwrap();
            assert!((f.eval(a) - a).norm() < 1e-12);
            assert!((f.derivative_at(a) - 1.0).norm() < 1e-12);
            assert!(fa_is_parabolic(a));
            // f(z) − z = z(z − a)²(z − 1/a²)
            let z = c(0.3, -0.7);
            let rhs = z * (z - a) * (z - a) * (z - 1.0 / (a * a));
            assert!((f.eval(z) - z - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn fa_free_critical_points() {
        let a = c(0.9, 0.1);
        let free = Family::Fa.free_critical_points(a).unwrap();
        let f = family_fa(a).unwrap();
        let all = critical_points(&f).unwrap();
        for z in free {
            assert!(f.derivative_at(z).norm() < 1e-12);
            assert!(all.iter().any(|r| (r.z - z).norm() < 1e-9));
        }
    }

    #[test]
    fn resit_closed_form_value() {
        let r = resit_fa(c(0.5, 0.0)).unwrap();
        assert!((r.re - 1.979_591_836_7).abs() < 1e-9);
        assert!(resit_fa(c(1.0, 0.0)).is_err());
    }

    #[test]
    fn contour_resit_matches_closed_form() {
        for &a in &[c(0.5, 0.0), c(0.9, 0.0), c(-0.6, 0.9), c(1.3, 0.4), c(0.95, 0.02)] {
            let f = family_fa(a).unwrap();
            let cyc = cycle_from_point(&f, a, 1);
            let r = residu_iteratif(&f, &cyc).unwrap();
            let closed = resit_fa(a).unwrap();
            assert!((r.value - closed).norm() < 1e-8 * (1.0 + closed.norm()), "a={a}: {} vs {}", r.value, closed);
        }
    }
}
