//! Fermi-Dirac equilibria, ground states, the normalized low-temperature
//! equilibrium `M_eps` and the infinitesimal (linearized) distributions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest log-odds magnitude kept; beyond it `1/(1+e^x)` is exactly 0 or 1.
pub const LOGIT_MAX: f64 = 745.0;

/// `1/(1+e^x)` without overflow.
#[inline]
pub fn fermi(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `log(z/(1-z))` for `z` in [0, 1], clamped to `+-LOGIT_MAX`.
#[inline]
pub fn log_odds(z: f64) -> f64 {
    if z <= 0.0 {
        return -LOGIT_MAX;
    }
    if z >= 1.0 {
        return LOGIT_MAX;
    }
    (z.ln() - (-z).ln_1p()).clamp(-LOGIT_MAX, LOGIT_MAX)
}

/// `1/(4 cosh^2(u/2))`, the derivative profile of the Fermi function.
#[inline]
pub fn cosh_profile(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiDiracParams {
    pub u: Vec<f64>,
    pub t: f64,
    pub mu: f64,
    pub delta: f64,
}

impl FermiDiracParams {
    pub fn at_rest(d: usize, t: f64, mu: f64, delta: f64) -> Self {
        Self {
            u: vec![0.0; d],
            t,
            mu,
            delta,
        }
    }
}

/// `delta^{-1}/(1 + exp((|v-U|^2 - mu)/T))`.
pub fn fermi_dirac(v: &[f64], p: &FermiDiracParams) -> Result<f64> {
    if !(p.t > 0.0) {
        return Err(Error::Domain(
            "fermi_dirac needs T > 0; use ground_state at zero temperature".into(),
        ));
    }
    if !(p.delta > 0.0) {
        return Err(Error::Domain("delta must be positive".into()));
    }
    let s2: f64 = v.iter().zip(&p.u).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(fermi((s2 - p.mu) / p.t) / p.delta)
}

/// `M_eps(v)`: Fermi-Dirac at rest with `mu = R^2`, `T = eps^tau`.
#[inline]
pub fn normalized_low_temp(v: &[f64], r: f64, delta: f64, eps_tau: f64) -> f64 {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    fermi((s2 - r * r) / eps_tau) / delta
}

/// Local equilibrium whose log-odds are shifted by `eta` relative to `M_eps`:
/// `delta f = 1/(1 + exp((|v|^2 - R^2)/eps^tau - eta))`.
#[inline]
pub fn shifted_low_temp(v: &[f64], r: f64, delta: f64, eps_tau: f64, eta: f64) -> f64 {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    fermi((s2 - r * r) / eps_tau - eta) / delta
}

/// Zero-temperature ground state: `delta^{-1}` inside the ball, half of it on
/// the sphere, 0 outside.
pub fn ground_state(v: &[f64], r: f64, delta: f64) -> f64 {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    let r2 = r * r;
    if s2 < r2 {
        1.0 / delta
    } else if s2 == r2 {
        0.5 / delta
    } else {
        0.0
    }
}

/// Coefficients of `(rho + U.omega + E u)/(4 cosh^2(u/2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinitesimalDensity {
    pub rho: f64,
    pub u: Vec<f64>,
    pub e: f64,
}

pub fn dilated_infinitesimal(u: f64, omega: &[f64], g: &InfinitesimalDensity) -> f64 {
    let dot: f64 = g.u.iter().zip(omega).map(|(a, b)| a * b).sum();
    (g.rho + dot + g.e * u) * cosh_profile(u)
}
