//! Edge potentials `phi(e, dbar)` of the squared-distance error, with
//! `g = dphi/de` and `rho = dg/de`.
//!
//! Any family used for control must be nonnegative, vanish only at `e = 0`,
//! and have a strictly increasing `g` with `rho > 0`;
//! [`validate_assumptions`] spot-checks those conditions on a grid.
//! Analyticity near zero is not checked.

use alloc::vec::Vec;

use serde::Serialize;

use crate::DomainError;

/// `phi`, `g` and `rho` evaluated at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Derivatives {
    pub phi: f64,
    pub g: f64,
    pub rho: f64,
}

pub trait Potential {
    fn phi(&self, e: f64, dbar: f64) -> f64;
    fn g(&self, e: f64, dbar: f64) -> f64;
    fn rho(&self, e: f64, dbar: f64) -> f64;

    /// Errors below `-dbar^2` are unreachable (`|z|^2 >= 0`), so the default
    /// domain is the closed half-line.
    fn in_domain(&self, e: f64, dbar: f64) -> bool {
        e.is_finite() && e >= -dbar * dbar
    }

    fn name(&self) -> &str {
        "custom"
    }

    fn evaluate(&self, e: f64, dbar: f64) -> Result<Derivatives, DomainError> {
        if !self.in_domain(e, dbar) {
            return Err(DomainError { edge: None, error: e, desired: dbar });
        }
        Ok(Derivatives { phi: self.phi(e, dbar), g: self.g(e, dbar), rho: self.rho(e, dbar) })
    }
}

/// The two built-in families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialFamily {
    /// `phi = e^2 / 2`, so `g = e` and `rho = 1`.
    Quadratic,
    /// `phi = e^2 / (e + dbar^2)`, defined for `e > -dbar^2`.
    Rational,
}

impl PotentialFamily {
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "quadratic" => Some(Self::Quadratic),
            "rational" => Some(Self::Rational),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::Rational => "rational",
        }
    }
}

impl Potential for PotentialFamily {
    fn phi(&self, e: f64, dbar: f64) -> f64 {
        match self {
            Self::Quadratic => 0.5 * e * e,
            Self::Rational => e * e / (e + dbar * dbar),
        }
    }

    fn g(&self, e: f64, dbar: f64) -> f64 {
        match self {
            Self::Quadratic => e,
            Self::Rational => {
                let s = e + dbar * dbar;
                let d4 = dbar * dbar * dbar * dbar;
                1.0 - d4 / (s * s)
            }
        }
    }

    fn rho(&self, e: f64, dbar: f64) -> f64 {
        match self {
            Self::Quadratic => 1.0,
            Self::Rational => {
                let s = e + dbar * dbar;
                let d4 = dbar * dbar * dbar * dbar;
                2.0 * d4 / (s * s * s)
            }
        }
    }

    fn in_domain(&self, e: f64, dbar: f64) -> bool {
        match self {
            Self::Quadratic => e.is_finite() && e >= -dbar * dbar,
            Self::Rational => e.is_finite() && e > -dbar * dbar,
        }
    }

    fn name(&self) -> &str {
        self.tag()
    }
}

pub fn phi<P: Potential + ?Sized>(family: &P, e: f64, dbar: f64) -> Result<f64, DomainError> {
    family.evaluate(e, dbar).map(|d| d.phi)
}

pub fn g<P: Potential + ?Sized>(family: &P, e: f64, dbar: f64) -> Result<f64, DomainError> {
    family.evaluate(e, dbar).map(|d| d.g)
}

pub fn rho<P: Potential + ?Sized>(family: &P, e: f64, dbar: f64) -> Result<f64, DomainError> {
    family.evaluate(e, dbar).map(|d| d.rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutsideDomain { e: f64 },
    NonzeroAtOrigin { phi: f64, g: f64 },
    NegativeEnergy { e: f64, phi: f64 },
    ZeroEnergyAwayFromOrigin { e: f64 },
    SignMismatch { e: f64, g: f64 },
    NotIncreasing { from: f64, to: f64 },
    NonPositiveCurvature { e: f64, rho: f64 },
}

/// Checks the sign, monotonicity and curvature conditions on `grid` (plus the
/// origin, which is always included). Returns every violation found.
pub fn validate_assumptions<P: Potential + ?Sized>(family: &P, dbar: f64, grid: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut pts: Vec<f64> = grid.iter().copied().chain(core::iter::once(0.0)).collect();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();

    let mut evaluated = Vec::with_capacity(pts.len());
    for &e in &pts {
        match family.evaluate(e, dbar) {
            Ok(d) => evaluated.push((e, d)),
            Err(_) => out.push(Violation::OutsideDomain { e }),
        }
    }
    for &(e, d) in &evaluated {
        if e == 0.0 {
            if d.phi != 0.0 || d.g != 0.0 {
                out.push(Violation::NonzeroAtOrigin { phi: d.phi, g: d.g });
            }
        } else {
            if d.phi < 0.0 {
                out.push(Violation::NegativeEnergy { e, phi: d.phi });
            } else if d.phi == 0.0 {
                out.push(Violation::ZeroEnergyAwayFromOrigin { e });
            }
            if d.g * e <= 0.0 {
                out.push(Violation::SignMismatch { e, g: d.g });
            }
        }
        if !(d.rho > 0.0) {
            out.push(Violation::NonPositiveCurvature { e, rho: d.rho });
        }
    }
    for w in evaluated.windows(2) {
        if !(w[1].1.g > w[0].1.g) {
            out.push(Violation::NotIncreasing { from: w[0].0, to: w[1].0 });
        }
    }
    out
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}
