//! Exact rational angles in `ℝ/ℤ` under multiplication by the degree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest admissible denominator.
pub const MAX_DEN: u128 = 1 << 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AngleError {
    #[error("denominator exceeds 2^63")]
    Overflow,
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("cannot parse angle {0:?}")]
    Parse(String),
    #[error("degree must be at least 2")]
    InvalidDegree,
    #[error("enumeration of {0} angles exceeds the cap")]
    TooMany(u128),
    #[error("orbit longer than {0} steps")]
    OrbitTooLong(usize),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Reduced fraction `num/den` in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Angle {
    num: u128,
    den: u128,
}

impl Angle {
    /// `num/den mod 1`, reduced.
    pub fn new(num: u128, den: u128) -> Result<Angle, AngleError> {
        if den == 0 {
            return Err(AngleError::ZeroDenominator);
        }
        let n = num % den;
        let g = gcd(n, den);
        let (n, d) = (n / g, den / g);
        if d > MAX_DEN {
            return Err(AngleError::Overflow);
        }
        Ok(Angle { num: n, den: d })
    }

    pub fn zero() -> Angle {
        Angle { num: 0, den: 1 }
    }

    pub fn num(&self) -> u128 {
        self.num
    }

    pub fn den(&self) -> u128 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `dθ mod 1`.
    pub fn mul(&self, d: u64) -> Angle {
        // num < den ≤ 2^63 and d < 2^64, so the product fits in u128
        Angle::new((self.num * d as u128) % self.den, self.den).expect("reduction cannot grow the denominator")
    }

    /// `dⁿθ mod 1`.
    pub fn mul_pow(&self, d: u64, n: u32) -> Angle {
        let mut a = *self;
        for _ in 0..n {
            a = a.mul(d);
        }
        a
    }

    /// The `d` preimages `(θ + k)/d`.
    pub fn preimages(&self, d: u64) -> Result<Vec<Angle>, AngleError> {
        let den = self.den.checked_mul(d as u128).ok_or(AngleError::Overflow)?;
        (0..d as u128).map(|k| Angle::new(self.num + k * self.den, den)).collect()
    }

    /// Signed distance `θ − φ` taken in `(−1/2, 1/2]`.
    pub fn signed_diff(&self, other: &Angle) -> f64 {
        let mut t = self.to_f64() - other.to_f64();
        if t > 0.5 {
            t -= 1.0;
        } else if t <= -0.5 {
            t += 1.0;
        }
        t
    }
}

/// `θ ↦ dθ mod 1`.
pub fn map_angle(theta: &Angle, d: u64) -> Angle {
    theta.mul(d)
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Angle {
    type Err = AngleError;
    fn from_str(s: &str) -> Result<Angle, AngleError> {
        let s = s.trim();
        let err = || AngleError::Parse(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => {
                let n: u128 = n.trim().parse().map_err(|_| err())?;
                let d: u128 = d.trim().parse().map_err(|_| err())?;
                Angle::new(n, d)
            }
            None => {
                let n: u128 = s.parse().map_err(|_| err())?;
                Angle::new(n, 1)
            }
        }
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Angle, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Preperiod and period of `θ` under `θ ↦ dθ`, with the orbit up to the first repeat.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleOrbit {
    pub preperiod: usize,
    pub period: usize,
    pub orbit: Vec<Angle>,
}

pub fn angle_orbit(theta: &Angle, d: u64, max_steps: usize) -> Result<AngleOrbit, AngleError> {
    if d < 2 {
        return Err(AngleError::InvalidDegree);
    }
    let mut orbit = vec![*theta];
    let mut seen = std::collections::BTreeMap::new();
    seen.insert(*theta, 0usize);
    loop {
        if orbit.len() > max_steps {
            return Err(AngleError::OrbitTooLong(max_steps));
        }
        let next = orbit.last().unwrap().mul(d);
        if let Some(&i) = seen.get(&next) {
            let period = orbit.len() - i;
            return Ok(AngleOrbit { preperiod: i, period, orbit });
        }
        seen.insert(next, orbit.len());
        orbit.push(next);
    }
}

/// All angles of exact period `p`, grouped into cycles `[θ, dθ, …]`.
pub fn periodic_angles(d: u64, p: u32, cap: u128) -> Result<Vec<Vec<Angle>>, AngleError> {
    if d < 2 {
        return Err(AngleError::InvalidDegree);
    }
    let dp = (d as u128).checked_pow(p).ok_or(AngleError::Overflow)?;
    let den = dp - 1;
    if den > MAX_DEN {
        return Err(AngleError::Overflow);
    }
    if den > cap {
        return Err(AngleError::TooMany(den));
    }
    let mut used = vec![false; den as usize];
    let mut out = Vec::new();
    for k in 0..den {
        if used[k as usize] {
            continue;
        }
        let mut cycle = vec![Angle::new(k, den)?];
        used[k as usize] = true;
        let mut j = (k * d as u128) % den;
        while j != k {
            used[j as usize] = true;
            cycle.push(Angle::new(j, den)?);
            j = (j * d as u128) % den;
        }
        if cycle.len() == p as usize {
            out.push(cycle);
        }
    }
    Ok(out)
}

/// The open arc of angles met going counter-clockwise from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub from: Angle,
    pub to: Angle,
}

impl SectorSpec {
    pub fn contains(&self, theta: &Angle) -> bool {
        let (a, b, t) = (self.from.to_f64(), self.to.to_f64(), theta.to_f64());
        if a < b {
            t > a && t < b
        } else {
            t > a || t < b
        }
    }

    /// Length of the arc in turns.
    pub fn width(&self) -> f64 {
        let w = self.to.to_f64() - self.from.to_f64();
        if w <= 0.0 {
            w + 1.0
        } else {
            w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_display() {
        let a: Angle = "2/6".parse().unwrap();
        assert_eq!(a.to_string(), "1/3");
        assert_eq!("7/3".parse::<Angle>().unwrap().to_string(), "1/3");
        assert_eq!("0".parse::<Angle>().unwrap(), Angle::zero());
        assert!("1/0".parse::<Angle>().is_err());
        assert!("x".parse::<Angle>().is_err());
        assert_eq!(Angle::new(1, (1u128 << 63) + 1), Err(AngleError::Overflow));
    }

    #[test]
    fn serde_as_string() {
        let a = Angle::new(1, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), "\"1/7\"");
        let b: Angle = serde_json::from_str("\"2/7\"").unwrap();
        assert_eq!(b, Angle::new(2, 7).unwrap());
    }

    #[test]
    fn orbit_of_one_seventh() {
        let o = angle_orbit(&Angle::new(1, 7).unwrap(), 2, 1000).unwrap();
        assert_eq!((o.preperiod, o.period), (0, 3));
        let o = angle_orbit(&Angle::new(1, 6).unwrap(), 2, 1000).unwrap();
        assert_eq!((o.preperiod, o.period), (1, 2));
        let o = angle_orbit(&Angle::new(1, 4).unwrap(), 3, 1000).unwrap();
        assert_eq!((o.preperiod, o.period), (0, 2));
    }

    #[test]
    fn periodic_angle_counts() {
        // cycles of exact period p number (1/p) Σ_{k|p} μ(p/k) d^k
        let c = periodic_angles(2, 1, 1 << 20).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(periodic_angles(2, 4, 1 << 20).unwrap().len(), 3);
        assert_eq!(periodic_angles(3, 2, 1 << 20).unwrap().len(), 3);
        assert_eq!(periodic_angles(4, 3, 1 << 20).unwrap().len(), 20);
        assert!(matches!(periodic_angles(3, 40, 1 << 20), Err(AngleError::Overflow)));
        assert!(matches!(periodic_angles(3, 30, 1 << 20), Err(AngleError::TooMany(_))));
    }

    #[test]
    fn sector_wraps() {
        let s = SectorSpec { from: Angle::new(3, 4).unwrap(), to: Angle::new(1, 4).unwrap() };
        assert!(s.contains(&Angle::zero()));
        assert!(!s.contains(&Angle::new(1, 2).unwrap()));
        assert!((s.width() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn map_matches_float(num in 0u128..1_000_000, den in 1u128..1_000_000, d in 2u64..9) {
            let a = Angle::new(num, den).unwrap();
            let b = map_angle(&a, d);
            let f = (a.to_f64() * d as f64).fract();
            prop_assert!((b.to_f64() - f).abs() < 1e-9 || (b.to_f64() - f).abs() > 1.0 - 1e-9);
        }

        #[test]
        fn preimages_map_back(num in 0u128..10_000, den in 1u128..10_000, d in 2u64..6) {
            let a = Angle::new(num, den).unwrap();
            let pre = a.preimages(d).unwrap();
            prop_assert_eq!(pre.len(), d as usize);
            for p in pre {
                prop_assert_eq!(p.mul(d), a);
            }
        }

        #[test]
        fn periodic_cycles_are_closed(d in 2u64..5, p in 1u32..6) {
            for cycle in periodic_angles(d, p, 1 << 16).unwrap() {
                prop_assert_eq!(cycle.len(), p as usize);
                prop_assert_eq!(cycle.last().unwrap().mul(d), cycle[0]);
                let o = angle_orbit(&cycle[0], d, 1000).unwrap();
                prop_assert_eq!((o.preperiod, o.period), (0, p as usize));
            }
        }
    }
}
