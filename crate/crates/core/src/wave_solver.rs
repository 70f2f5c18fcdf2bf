//! Closed-form Fourier solution of the limiting plasma-wave system
//! `d_t rho + (R^2/d) div U = 0`, `d_t U + grad rho = 0` on a periodic
//! one-dimensional torus (waves travel along the first axis).

use crate::error::{Error, Result};
use crate::hydro_limit::MacroFields;
use crate::phase_space::gauss_legendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Fourier coefficients of `(rho, U)` on the torus.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub rho_hat: Vec<Complex64>,
    /// `n_x x d`, mode-major.
    pub u_hat: Vec<Complex64>,
    pub r: f64,
    pub d: usize,
    pub length: f64,
}

fn fft(v: &[f64], forward: bool) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut p = FftPlanner::new();
    if forward {
        p.plan_fft_forward(v.len()).process(&mut buf);
    } else {
        p.plan_fft_inverse(v.len()).process(&mut buf);
    }
    buf
}

fn ifft_real(c: &[Complex64]) -> Vec<f64> {
    let mut buf = c.to_vec();
    FftPlanner::new()
        .plan_fft_inverse(c.len())
        .process(&mut buf);
    buf.iter().map(|z| z.re / c.len() as f64).collect()
}

/// Signed wave number of mode `m`; the Nyquist mode is held at rest.
pub fn wave_number(m: usize, n_x: usize, length: f64) -> f64 {
    let mm = if 2 * m < n_x {
        m as f64
    } else if 2 * m > n_x {
        m as f64 - n_x as f64
    } else {
        0.0
    };
    2.0 * PI * mm / length
}

impl WaveState {
    pub fn from_fields(init: &MacroFields, r: f64, d: usize, length: f64) -> Result<Self> {
        let n_x = init.n_x();
        if n_x == 0 || init.u.len() != n_x * d {
            return Err(Error::Structural(format!(
                "macro fields have {} cells and {} velocity values, expected d = {d}",
                n_x,
                init.u.len()
            )));
        }
        let rho_hat = fft(&init.rho, true);
        let mut u_hat = vec![Complex64::new(0.0, 0.0); n_x * d];
        for a in 0..d {
            let col: Vec<f64> = (0..n_x).map(|c| init.u[c * d + a]).collect();
            for (m, z) in fft(&col, true).into_iter().enumerate() {
                u_hat[m * d + a] = z;
            }
        }
        Ok(Self {
            rho_hat,
            u_hat,
            r,
            d,
            length,
        })
    }

    pub fn n_x(&self) -> usize {
        self.rho_hat.len()
    }

    /// Exact propagation by `t`: each longitudinal mode rotates at
    /// `|xi| R/sqrt(d)`, the transverse components and the zero mode stay put.
    pub fn advance(&self, t: f64) -> Self {
        let n = self.n_x();
        let d = self.d;
        let c2 = self.r * self.r / d as f64;
        let mut out = self.clone();
        for m in 0..n {
            let xi = wave_number(m, n, self.length);
            if xi == 0.0 {
                continue;
            }
            let w = c2.sqrt() * xi.abs();
            let (cs, sn) = ((w * t).cos(), (w * t).sin());
            let i = Complex64::new(0.0, 1.0);
            let rho0 = self.rho_hat[m];
            let u0 = self.u_hat[m * d];
            let drho = -(i * xi * c2) * u0;
            let du = -(i * xi) * rho0;
            out.rho_hat[m] = rho0 * cs + drho * (sn / w);
            out.u_hat[m * d] = u0 * cs + du * (sn / w);
        }
        out
    }

    /// `d |rho_hat|^2 / R^2 + |U_hat|^2` per mode.
    pub fn mode_energy(&self) -> Vec<f64> {
        let d = self.d;
        let s = d as f64 / (self.r * self.r);
        (0..self.n_x())
            .map(|m| {
                s * self.rho_hat[m].norm_sqr()
                    + (0..d)
                        .map(|a| self.u_hat[m * d + a].norm_sqr())
                        .sum::<f64>()
            })
            .collect()
    }

    /// Back to grid values; `e` is carried along unchanged.
    pub fn to_fields(&self, e: &[f64]) -> MacroFields {
        let n = self.n_x();
        let d = self.d;
        let rho = ifft_real(&self.rho_hat);
        let mut u = vec![0.0; n * d];
        for a in 0..d {
            let col: Vec<Complex64> = (0..n).map(|m| self.u_hat[m * d + a]).collect();
            for (c, v) in ifft_real(&col).into_iter().enumerate() {
                u[c * d + a] = v;
            }
        }
        MacroFields {
            rho,
            u,
            e: e.to_vec(),
        }
    }
}

/// Wave-system solution at time `t` from `init`. The energy density is
/// stationary in the limit and is returned unchanged.
pub fn fourier_solve(
    init: &MacroFields,
    r: f64,
    d: usize,
    length: f64,
    t: f64,
) -> Result<MacroFields> {
    Ok(WaveState::from_fields(init, r, d, length)?
        .advance(t)
        .to_fields(&init.e))
}

/// Right-travelling plane wave `rho = cos(xi x)`, `U_1 = sqrt(d)/R cos(xi x)`
/// sampled on `n_x` cells.
pub fn plane_wave(r: f64, d: usize, length: f64, n_x: usize, mode: usize) -> MacroFields {
    let mut m = MacroFields::zeros(n_x, d);
    let xi = 2.0 * PI * mode as f64 / length;
    for c in 0..n_x {
        let x = (c as f64 + 0.5) * length / n_x as f64;
        m.rho[c] = (xi * x).cos();
        m.u[c * d] = (d as f64).sqrt() / r * (xi * x).cos();
    }
    m
}

/// Phase speed read off the phase of `rho_hat` after propagating a plane
/// wave over a fraction of a period.
pub fn measured_phase_speed(r: f64, d: usize, length: f64, n_x: usize, mode: usize) -> Result<f64> {
    let init = plane_wave(r, d, length, n_x, mode);
    let st = WaveState::from_fields(&init, r, d, length)?;
    let xi = wave_number(mode, n_x, length);
    let c = r / (d as f64).sqrt();
    let t = 0.25 * length / (mode as f64 * c);
    let later = st.advance(t);
    let ratio = later.rho_hat[mode] / st.rho_hat[mode];
    Ok(-ratio.arg() / (xi * t))
}

/// Residuals of the plane-wave eigen-relations
/// `tau_freq^2 = (R^2/d) xi^2`, `tau_freq U_0 + rho_0 xi = 0`,
/// `rho_0^2 = (R^2/d) U_0^2`.
pub fn plane_wave_relations(
    rho0: f64,
    u0: f64,
    tau_freq: f64,
    xi: f64,
    r: f64,
    d: usize,
) -> [f64; 3] {
    let c2 = r * r / d as f64;
    [
        tau_freq * tau_freq - c2 * xi * xi,
        tau_freq * u0 + rho0 * xi,
        rho0 * rho0 - c2 * u0 * u0,
    ]
}

/// Weak-form residuals of the solution started from `init` against `n_tests`
/// random smooth test functions `chi(t) sum_m c_m e^{i xi_m x}` vanishing at
/// `t = t_end`. Returns the largest relative residual of the two equations.
pub fn weak_form_residual(
    init: &MacroFields,
    r: f64,
    d: usize,
    length: f64,
    t_end: f64,
    n_tests: usize,
    seed: u64,
) -> Result<f64> {
    let n_x = init.n_x();
    if n_x < 8 {
        return Err(Error::Config(
            "weak-form check needs at least 8 cells".into(),
        ));
    }
    let st = WaveState::from_fields(init, r, d, length)?;
    let (tn, tw) = gauss_legendre(24);
    let dx = length / n_x as f64;
    let c2 = r * r / d as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sols: Vec<(f64, f64, MacroFields)> = tn
        .iter()
        .zip(&tw)
        .map(|(&z, &w)| {
            let t = 0.5 * t_end * (z + 1.0);
            (t, 0.5 * t_end * w, st.advance(t).to_fields(&init.e))
        })
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..n_tests {
        let coef: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let b = rng.random::<f64>();
        let space = |x: f64| -> (f64, f64) {
            let mut p = 0.0;
            let mut dp = 0.0;
            for (m, &(a, s)) in coef.iter().enumerate() {
                let k = 2.0 * PI * m as f64 / length;
                p += a * (k * x).cos() + s * (k * x).sin();
                dp += -a * k * (k * x).sin() + s * k * (k * x).cos();
            }
            (p, dp)
        };
        let chi = |t: f64| (1.0 - t / t_end).powi(2) * (1.0 + b * t);
        let dchi = |t: f64| {
            -2.0 / t_end * (1.0 - t / t_end) * (1.0 + b * t) + b * (1.0 - t / t_end).powi(2)
        };
        let xs: Vec<(f64, f64)> = (0..n_x).map(|c| space((c as f64 + 0.5) * dx)).collect();
        // equation for rho, then for U_1
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for c in 0..n_x {
            r1 += init.rho[c] * xs[c].0 * chi(0.0) * dx;
            r2 += init.u[c * d] * xs[c].0 * chi(0.0) * dx;
            s1 += (init.rho[c] * xs[c].0 * chi(0.0) * dx).abs();
            s2 += (init.u[c * d] * xs[c].0 * chi(0.0) * dx).abs();
        }
        for (t, w, m) in &sols {
            for c in 0..n_x {
                let (p, dp) = xs[c];
                let a = m.rho[c] * p * dchi(*t) + c2 * m.u[c * d] * dp * chi(*t);
                let b2 = m.u[c * d] * p * dchi(*t) + m.rho[c] * dp * chi(*t);
                r1 += w * dx * a;
                r2 += w * dx * b2;
                s1 += (w * dx * a).abs();
                s2 += (w * dx * b2).abs();
            }
        }
        let rel = |r: f64, s: f64| if s > 0.0 { r.abs() / s } else { 0.0 };
        worst = worst.max(rel(r1, s1)).max(rel(r2, s2));
    }
    Ok(worst)
}

/// Distances between kinetic macro fields and the wave solution seeded by
/// the first entry, at every time.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub t: f64,
    pub rho_l2: f64,
    pub u_l2: f64,
    /// `sqrt(rho_l2^2 + u_l2^2)`.
    pub total_l2: f64,
    /// `total_l2` relative to the wave solution's norm.
    pub relative: f64,
}

pub fn compare_with_kinetic(
    series: &[(f64, MacroFields)],
    r: f64,
    d: usize,
    length: f64,
) -> Result<Vec<ComparisonRow>> {
    let Some((t0, init)) = series.first() else {
        return Ok(vec![]);
    };
    let n_x = init.n_x();
    let dx = length / n_x.max(1) as f64;
    let mut rows = Vec::new();
    for (t, kin) in series {
        if kin.n_x() != n_x || kin.u.len() != init.u.len() {
            return Err(Error::Structural(
                "kinetic fields change shape along the series".into(),
            ));
        }
        let w = fourier_solve(init, r, d, length, t - t0)?;
        let l2 = |a: &[f64], b: &[f64]| {
            (dx * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt()
        };
        let rho_l2 = l2(&kin.rho, &w.rho);
        let u_l2 = l2(&kin.u, &w.u);
        let total = (rho_l2 * rho_l2 + u_l2 * u_l2).sqrt();
        let (nr, nu, _) = w.norms(dx);
        let scale = (nr * nr + nu * nu).sqrt();
        rows.push(ComparisonRow {
            t: *t,
            rho_l2,
            u_l2,
            total_l2: total,
            relative: if scale > 0.0 { total / scale } else { total },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mode_and_zero_field_are_static() {
        let mut m = MacroFields::zeros(8, 3);
        m.rho.iter_mut().for_each(|x| *x = 0.7);
        let s = fourier_solve(&m, 1.0, 3, 1.0, 3.3).unwrap();
        assert!(s.rho.iter().all(|x| (x - 0.7).abs() < 1e-14));
        assert!(s.u.iter().all(|x| x.abs() < 1e-14));
        let z = fourier_solve(&MacroFields::zeros(8, 3), 1.0, 3, 1.0, 1.0).unwrap();
        assert!(z.rho.iter().chain(&z.u).all(|&x| x == 0.0));
    }

    #[test]
    fn transverse_velocity_is_static() {
        let mut m = MacroFields::zeros(16, 3);
        for c in 0..16 {
            m.u[c * 3 + 1] = (2.0 * PI * (c as f64 + 0.5) / 16.0).sin();
        }
        let s = fourier_solve(&m, 1.0, 3, 1.0, 0.77).unwrap();
        for (a, b) in s.u.iter().zip(&m.u) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(s.rho.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn plane_wave_travels_at_sound_speed() {
        for &(r, d) in &[(1.0, 3usize), (2.0, 3), (1.5, 5)] {
            let c = measured_phase_speed(r, d, 1.0, 16, 1).unwrap();
            assert!((c - r / (d as f64).sqrt()).abs() < 1e-12, "{c}");
            let init = plane_wave(r, d, 1.0, 32, 2);
            let st = WaveState::from_fields(&init, r, d, 1.0).unwrap();
            let e0 = st.mode_energy();
            let e1 = st.advance(0.37).mode_energy();
            for (a, b) in e0.iter().zip(&e1) {
                assert!((a - b).abs() < 1e-12 * (1.0 + a));
            }
            // the solution is a rigid translation
            let t = 0.1;
            let later = fourier_solve(&init, r, d, 1.0, t).unwrap();
            let cs = r / (d as f64).sqrt();
            for k in 0..32 {
                let x = (k as f64 + 0.5) / 32.0;
                assert!((later.rho[k] - (4.0 * PI * (x - cs * t)).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weak_form_holds() {
        let mut m = plane_wave(1.0, 3, 1.0, 16, 1);
        for c in 0..16 {
            m.rho[c] += 0.3 * (6.0 * PI * (c as f64 + 0.5) / 16.0).sin();
        }
        assert!(weak_form_residual(&m, 1.0, 3, 1.0, 2.0, 20, 9).unwrap() < 1e-10);
    }
}
