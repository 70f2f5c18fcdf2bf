//! Entropy functionals and the convexity inequalities used to control
//! fluctuations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `x log(x / y)` with `0 log 0 = 0`.
#[inline]
fn xlog_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `h(z, a) = z log(z/a) + (1-z) log((1-z)/(1-a))`.
pub fn h(z: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!(
            "h(z, a) needs 0 < a < 1, got a = {a}"
        )));
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!(
            "h(z, a) needs 0 <= z <= 1, got z = {z}"
        )));
    }
    Ok(h_unchecked(z, a))
}

#[inline]
pub(crate) fn h_unchecked(z: f64, a: f64) -> f64 {
    (xlog_ratio(z, a) + xlog_ratio(1.0 - z, 1.0 - a)).max(0.0)
}

/// `z log z + (1-z) log(1-z)` with the `0 log 0 = 0` convention.
#[inline]
pub fn binary_entropy(z: f64) -> f64 {
    let t = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    t(z) + t(1.0 - z)
}

/// `H(f) = sum w (delta f log delta f + (1 - delta f) log(1 - delta f))`.
/// `weights` holds one value per velocity node and is reused for every
/// spatial cell; `cell_volume` multiplies everything.
pub fn entropy(f: &[f64], weights: &[f64], cell_volume: f64, delta: f64) -> f64 {
    let n = weights.len();
    cell_volume
        * f.iter()
            .enumerate()
            .map(|(k, &x)| weights[k % n] * binary_entropy((delta * x).clamp(0.0, 1.0)))
            .sum::<f64>()
}

/// Classical Boltzmann entropy `sum w f (log f - 1)`.
pub fn classical_entropy(f: &[f64], weights: &[f64], cell_volume: f64) -> f64 {
    let n = weights.len();
    cell_volume
        * f.iter()
            .enumerate()
            .map(|(k, &x)| {
                if x > 0.0 {
                    weights[k % n] * x * (x.ln() - 1.0)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
}

/// `H(f|M) = sum w h(delta f, delta M)`. `m` is either a full field or a
/// single velocity profile shared by all cells.
pub fn relative_entropy(
    f: &[f64],
    m: &[f64],
    weights: &[f64],
    cell_volume: f64,
    delta: f64,
) -> Result<f64> {
    let n = weights.len();
    if m.len() != f.len() && m.len() != n {
        return Err(Error::Structural(format!(
            "equilibrium has {} values, expected {} or {}",
            m.len(),
            f.len(),
            n
        )));
    }
    let mut s = 0.0;
    for (k, &x) in f.iter().enumerate() {
        let a = delta * m[k % m.len()];
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Domain(format!(
                "equilibrium value {a} outside (0, 1)"
            )));
        }
        s += weights[k % n] * h_unchecked((delta * x).clamp(0.0, 1.0), a);
    }
    Ok(cell_volume * s)
}

/// Young conjugate `h_1^*(y) = log(1 + a(e^y - 1)) - a y`.
pub fn young_conjugate(y: f64, a: f64) -> f64 {
    if y > 30.0 {
        // log(a e^y (1 + (1-a) e^{-y}/a))
        return a.ln() + y + ((1.0 - a) * (-y).exp() / a).ln_1p() - a * y;
    }
    (a * y.exp_m1()).ln_1p() - a * y
}

/// `w(y) = e^y + e^{-y} - 2 = 4 sinh^2(y/2)`.
pub fn w(y: f64) -> f64 {
    let s = (0.5 * y).sinh();
    4.0 * s * s
}

/// `min_z h(z, a)/(z - a)^2 = log((1-a)/a)/(1-2a)`, reached at `z = 1 - a`.
pub fn sharp_constant(a: f64) -> f64 {
    if (a - 0.5).abs() < 1e-6 {
        // 2 + (8/3)(a - 1/2)^2 + O((a - 1/2)^4)
        let e = a - 0.5;
        return 2.0 + 8.0 / 3.0 * e * e;
    }
    ((1.0 - a) / a).ln() / (1.0 - 2.0 * a)
}

/// Right-hand side of the quadratic lower bound
/// `H(f|M_eps) >= delta^2 eps^2 sum g^2 max(2, |v^2 - R^2|/eps^tau)`.
pub fn quadratic_lower_bound(
    g: &[f64],
    speed2: &[f64],
    weights: &[f64],
    cell_volume: f64,
    delta: f64,
    eps: f64,
    eps_tau: f64,
    r: f64,
) -> f64 {
    let n = weights.len();
    let s: f64 = g
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let u = (speed2[k % n] - r * r).abs() / eps_tau;
            weights[k % n] * x * x * u.max(2.0)
        })
        .sum();
    delta * delta * eps * eps * cell_volume * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub t: f64,
    pub h: f64,
    pub h_rel: f64,
    pub d: f64,
    /// `H_rel / eps^{2-gamma}`.
    pub scaled_h_rel: f64,
    /// `int_0^t D / eps^{2+kappa-gamma}`.
    pub scaled_d: f64,
}

impl EntropyReport {
    pub const CSV_HEADER: &'static str = "t,H,H_rel,D,scaled_H_rel,scaled_D";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.t, self.h, self.h_rel, self.d, self.scaled_h_rel, self.scaled_d
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn h_examples() {
        assert_eq!(h(0.3, 0.3).unwrap(), 0.0);
        assert!((h(1.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((h(0.0, 0.2).unwrap() - (0.8f64).ln().abs()).abs() < 1e-15);
        assert!(h(0.5, 1.0).is_err());
        assert!(h(0.5, 0.0).is_err());
        for i in 0..100 {
            for j in 1..100 {
                let z = i as f64 / 99.0;
                let a = j as f64 / 100.0;
                let v = h(z, a).unwrap();
                assert!(v >= 2.0 * (z - a) * (z - a) - 1e-15);
            }
        }
    }

    #[test]
    fn w_examples() {
        assert_eq!(w(0.0), 0.0);
        assert!((w(1.0) - 1.086161).abs() < 1e-6);
        assert!(w(1.0) <= 0.25 * w(2.0));
        assert!((0.25 * w(2.0) - 1.381098).abs() < 1e-6);
    }

    #[test]
    fn young_examples() {
        assert_eq!(young_conjugate(0.0, 0.3), 0.0);
        let direct = |y: f64, a: f64| (1.0 + a * (y.exp() - 1.0)).ln() - a * y;
        for &(y, a) in &[(0.3, 0.2), (-2.0, 0.7), (5.0, 0.01), (40.0, 0.5)] {
            assert!(
                (young_conjugate(y, a) - direct(y, a)).abs() < 1e-12 * (1.0 + direct(y, a).abs())
            );
        }
    }

    #[test]
    fn sharp_constant_at_half() {
        assert!((sharp_constant(0.5) - 2.0).abs() < 1e-15);
        assert!((sharp_constant(0.5 + 2e-6) - sharp_constant(0.5 + 2e-6 - 1e-9)).abs() < 1e-8);
        let a = 0.2;
        let z = 1.0 - a;
        assert!((h(z, a).unwrap() / ((z - a) * (z - a)) - sharp_constant(a)).abs() < 1e-13);
    }

    #[test]
    fn relative_entropy_zero_at_equilibrium() {
        let m = [0.2, 0.5, 0.9];
        let w = [1.0, 2.0, 0.5];
        assert_eq!(relative_entropy(&m, &m, &w, 1.0, 1.0).unwrap(), 0.0);
        let f = [0.0, 1.0, 0.9, 0.2, 0.5, 0.9];
        assert!(relative_entropy(&f, &m, &w, 0.5, 1.0).unwrap() > 0.0);
        assert!(relative_entropy(&f, &[0.5; 4], &w, 0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn young_inequality(z in 0.0f64..1.0, a in 0.01f64..0.99, y in -20.0f64..20.0) {
            let zz = z - a;
            prop_assert!(zz * y <= h(a + zz, a).unwrap() + young_conjugate(y, a) + 1e-10);
            prop_assert!(young_conjugate(y, a) <= a * (1.0 - a) * w(y) * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn w_is_subquadratic(y in -10.0f64..10.0, l in 0.0f64..1.0) {
            prop_assert!(w(l * y) <= l * l * w(y) * (1.0 + 1e-12) + 1e-300);
        }
    }
}
