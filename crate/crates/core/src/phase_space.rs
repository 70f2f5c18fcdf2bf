//! Velocity grids, sphere quadratures and the energy-shell coordinates
//! `u = (|v|^2 - R^2)/eps^tau`, `omega = R v/|v|`.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Surface area of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Gamma(d/2) for a positive integer d.
fn gamma_half(d: usize) -> f64 {
    if d % 2 == 0 {
        (1..d / 2).map(|k| k as f64).product()
    } else {
        // Gamma(1/2) * prod_{k=0}^{(d-3)/2} (k + 1/2)
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < d as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Tensor-product midpoint grid on `[-v_max, v_max]^d`.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub d: usize,
    pub n_per_axis: usize,
    pub v_max: f64,
    pub h: f64,
    /// Flat `len() x d` node coordinates.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(d: usize, n_per_axis: usize, v_max: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Config(format!(
                "d = {d}: only d >= 3 is supported, the two-dimensional case is fundamentally different"
            )));
        }
        if n_per_axis < 2 {
            return Err(Error::Config("n_per_axis must be at least 2".into()));
        }
        if !(v_max > 0.0) {
            return Err(Error::Config("v_max must be positive".into()));
        }
        let len = n_per_axis
            .checked_pow(d as u32)
            .filter(|&l| l <= u32::MAX as usize)
            .ok_or_else(|| Error::Config("velocity grid too large".into()))?;
        let h = 2.0 * v_max / n_per_axis as f64;
        let mut nodes = Vec::with_capacity(len * d);
        let mut idx = vec![0usize; d];
        for _ in 0..len {
            for &i in idx.iter() {
                nodes.push(-v_max + (i as f64 + 0.5) * h);
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < n_per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self {
            d,
            n_per_axis,
            v_max,
            h,
            nodes,
            weights: vec![h.powi(d as i32); len],
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.d..(k + 1) * self.d]
    }

    pub fn speed2(&self, k: usize) -> f64 {
        self.node(k).iter().map(|x| x * x).sum()
    }

    /// Multi-index of node `k` (last axis fastest).
    pub fn multi_index(&self, mut k: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = k % self.n_per_axis;
            k /= self.n_per_axis;
        }
    }

    /// Flat index of a multi-index given as signed integers; `None` if outside.
    pub fn flat_index(&self, idx: &[i64]) -> Option<usize> {
        let n = self.n_per_axis as i64;
        let mut k = 0usize;
        for &i in idx {
            if i < 0 || i >= n {
                return None;
            }
            k = k * self.n_per_axis + i as usize;
        }
        Some(k)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Quadrature of `phi(v)` against the grid weights.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// The box must contain the ball of radius 2R (in-shell pairs collide to
    /// velocities of size up to 2R along an axis direction).
    pub fn check_covers(&self, r: f64) -> Result<()> {
        if self.v_max < 2.0 * r {
            return Err(Error::Config(format!(
                "v_max = {} < 2R = {}: post-collisional velocities of in-shell pairs leave the grid",
                self.v_max,
                2.0 * r
            )));
        }
        Ok(())
    }
}

/// Quadrature on the unit sphere of R^d. Nodes come in antipodal pairs: the
/// first `half` nodes form one hemisphere and node `half + k` is the exact
/// negation of node `k`.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub d: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub half: usize,
}

impl SphereQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.d..(k + 1) * self.d]
    }

    /// Product rule in (cos theta, phi) for d = 3: `n_theta` Gauss-Legendre
    /// nodes (even) times `n_phi` equispaced azimuths.
    pub fn product3(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_theta % 2 != 0 || n_phi < 2 || n_phi % 2 != 0 {
            return Err(Error::Config(format!(
                "product sphere rule needs even n_theta and even n_phi >= 2, got ({n_theta}, {n_phi})"
            )));
        }
        let (t, wt) = gauss_legendre(n_theta);
        let mut upper = Vec::new();
        let mut weights = Vec::new();
        for (k, &ct) in t.iter().enumerate() {
            if ct <= 0.0 {
                continue;
            }
            let st = (1.0 - ct * ct).sqrt();
            for m in 0..n_phi {
                let phi = 2.0 * PI * (m as f64 + 0.5) / n_phi as f64;
                upper.extend_from_slice(&[st * phi.cos(), st * phi.sin(), ct]);
                weights.push(wt[k] * 2.0 * PI / n_phi as f64);
            }
        }
        Ok(Self::mirrored(3, upper, weights))
    }

    /// Fixed-seed random rule for d > 3, symmetrized under coordinate sign
    /// flips and cyclic shifts so that moments up to degree 3 are exact.
    pub fn monte_carlo(d: usize, samples: usize, seed: u64) -> Result<Self> {
        if d < 3 || d > 10 || samples == 0 {
            return Err(Error::Config(format!(
                "random sphere rule supports 3 <= d <= 10 and samples >= 1, got (d = {d}, samples = {samples})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut upper = Vec::new();
        let mut count = 0usize;
        let mut x = vec![0.0; d];
        for _ in 0..samples {
            loop {
                for xi in x.iter_mut() {
                    *xi = StandardNormal.sample(&mut rng);
                }
                let n: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-8 && x.iter().all(|a| a.abs() > 1e-12) {
                    x.iter_mut().for_each(|a| *a /= n);
                    break;
                }
            }
            for shift in 0..d {
                // sign patterns with a positive leading coordinate
                for signs in 0..(1usize << (d - 1)) {
                    let mut p = vec![0.0; d];
                    for a in 0..d {
                        p[a] = x[(a + shift) % d].abs();
                    }
                    for a in 1..d {
                        if signs >> (a - 1) & 1 == 1 {
                            p[a] = -p[a];
                        }
                    }
                    upper.extend_from_slice(&p);
                    count += 1;
                }
            }
        }
        let w = sphere_area(d) / (2 * count) as f64;
        Ok(Self::mirrored(d, upper, vec![w; count]))
    }

    fn mirrored(d: usize, upper: Vec<f64>, upper_w: Vec<f64>) -> Self {
        let half = upper_w.len();
        let mut nodes = upper.clone();
        nodes.extend(upper.iter().map(|x| -x));
        let mut weights = upper_w.clone();
        weights.extend_from_slice(&upper_w);
        Self {
            d,
            nodes,
            weights,
            half,
        }
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.len())
            .map(|k| self.weights[k] * f(self.node(k)))
            .sum()
    }
}

/// Default sphere rule: product Gauss for d = 3 (`n_theta = order` rounded up
/// to even, `n_phi = 2 n_theta`), symmetrized fixed-seed random rule otherwise.
pub fn sphere_quadrature(d: usize, order: usize) -> Result<SphereQuadrature> {
    match d {
        3 if (1..=64).contains(&order) => {
            let nt = order + order % 2;
            SphereQuadrature::product3(nt, 2 * nt)
        }
        d if d > 3 && (1..=64).contains(&order) => SphereQuadrature::monte_carlo(d, order, 0x5eed),
        _ => Err(Error::Config(format!(
            "unsupported sphere quadrature (d = {d}, order = {order})"
        ))),
    }
}

/// `u = (|v|^2 - R^2)/eps^tau` and `omega = R v/|v|`.
pub fn to_energy_shell(v: &[f64], r: f64, eps_tau: f64) -> Result<(f64, Vec<f64>)> {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        return Err(Error::Domain(
            "zero velocity has no direction on the Fermi sphere".into(),
        ));
    }
    let s = s2.sqrt();
    Ok((
        (s2 - r * r) / eps_tau,
        v.iter().map(|x| r * x / s).collect(),
    ))
}

/// Inverse of [`to_energy_shell`]: `v = (1 + eps^tau u/R^2)^{1/2} omega`.
pub fn from_energy_shell(u: f64, omega: &[f64], r: f64, eps_tau: f64) -> Result<Vec<f64>> {
    let b = 1.0 + eps_tau * u / (r * r);
    if b < 0.0 {
        return Err(Error::Domain(format!(
            "u = {u} lies below -R^2/eps^tau = {}",
            -r * r / eps_tau
        )));
    }
    let s = b.sqrt();
    Ok(omega.iter().map(|w| s * w).collect())
}

/// Volume factor `dv = eps^tau/(2R) (1 + eps^tau u/R^2)^{(d-2)/2} du domega`;
/// zero below `u = -R^2/eps^tau`.
pub fn shell_jacobian(u: f64, r: f64, eps_tau: f64, d: usize) -> f64 {
    let b = 1.0 + eps_tau * u / (r * r);
    if b <= 0.0 {
        return 0.0;
    }
    eps_tau / (2.0 * r) * b.powf((d as f64 - 2.0) / 2.0)
}

/// Energy levels times Fermi-sphere directions.
#[derive(Debug, Clone)]
pub struct EnergyShellGrid {
    pub d: usize,
    pub r: f64,
    pub eps_tau: f64,
    pub u_max: f64,
    pub u_nodes: Vec<f64>,
    pub u_weights: Vec<f64>,
    /// Flat points on the sphere of radius R.
    pub omega_nodes: Vec<f64>,
    /// Surface weights on the sphere of radius R.
    pub omega_weights: Vec<f64>,
}

/// `max(30, alpha |log eps|)`.
pub fn default_u_max(alpha: f64, eps: f64) -> f64 {
    30f64.max(alpha * eps.ln().abs())
}

impl EnergyShellGrid {
    pub fn new(
        sphere: &SphereQuadrature,
        r: f64,
        eps_tau: f64,
        u_max: f64,
        n_u: usize,
    ) -> Result<Self> {
        if n_u == 0 || !(u_max > 0.0) || !(eps_tau > 0.0) || !(r > 0.0) {
            return Err(Error::Config("invalid energy-shell grid parameters".into()));
        }
        let du = 2.0 * u_max / n_u as f64;
        let u_nodes = (0..n_u).map(|k| -u_max + (k as f64 + 0.5) * du).collect();
        let d = sphere.d;
        let area_scale = r.powi(d as i32 - 1);
        Ok(Self {
            d,
            r,
            eps_tau,
            u_max,
            u_nodes,
            u_weights: vec![du; n_u],
            omega_nodes: sphere.nodes.iter().map(|x| r * x).collect(),
            omega_weights: sphere.weights.iter().map(|w| w * area_scale).collect(),
        })
    }

    pub fn n_u(&self) -> usize {
        self.u_nodes.len()
    }

    pub fn n_omega(&self) -> usize {
        self.omega_weights.len()
    }

    pub fn omega(&self, k: usize) -> &[f64] {
        &self.omega_nodes[k * self.d..(k + 1) * self.d]
    }

    /// u-bin containing `u`, if inside `[-u_max, u_max)`.
    pub fn u_bin(&self, u: f64) -> Option<usize> {
        if !(u >= -self.u_max && u < self.u_max) {
            return None;
        }
        let k = ((u + self.u_max) / self.u_weights[0]) as usize;
        Some(k.min(self.n_u() - 1))
    }

    /// Nearest sphere direction to `omega` (largest inner product).
    pub fn omega_bin(&self, omega: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for k in 0..self.n_omega() {
            let dot: f64 = self.omega(k).iter().zip(omega).map(|(a, b)| a * b).sum();
            if dot > best_dot {
                best_dot = dot;
                best = k;
            }
        }
        best
    }

    /// Integral of `psi(u, omega)` with the product weights.
    pub fn integrate<F: Fn(f64, &[f64]) -> f64>(&self, psi: F) -> f64 {
        let mut s = 0.0;
        for (iu, &u) in self.u_nodes.iter().enumerate() {
            for k in 0..self.n_omega() {
                s += self.u_weights[iu] * self.omega_weights[k] * psi(u, self.omega(k));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg} {q} {exact}");
            }
        }
    }

    #[test]
    fn grid_weights_and_bounds() {
        let g = VelocityGrid::new(3, 6, 2.5).unwrap();
        assert_eq!(g.len(), 216);
        let tot = g.total_weight();
        assert!((tot - 125.0).abs() < 1e-12 * 125.0);
        for k in 0..g.len() {
            assert!(g.node(k).iter().all(|x| x.abs() <= g.v_max));
        }
        let mut mi = [0usize; 3];
        g.multi_index(37, &mut mi);
        let back = g.flat_index(&mi.map(|x| x as i64)).unwrap();
        assert_eq!(back, 37);
        assert!(VelocityGrid::new(2, 6, 2.5).is_err());
    }

    #[test]
    fn sphere_rule_moments() {
        for q in [
            sphere_quadrature(3, 2).unwrap(),
            sphere_quadrature(4, 1).unwrap(),
        ] {
            let d = q.d;
            let area = sphere_area(d);
            assert!((q.weights.iter().sum::<f64>() - area).abs() < 1e-10 * area);
            for i in 0..d {
                assert!(q.integrate(|s| s[i]).abs() < 1e-12);
                for j in 0..d {
                    let m = q.integrate(|s| s[i] * s[j]);
                    let exact = if i == j { area / d as f64 } else { 0.0 };
                    assert!((m - exact).abs() < 1e-10, "d={d} ({i},{j}) {m}");
                    for k in 0..d {
                        assert!(q.integrate(|s| s[i] * s[j] * s[k]).abs() < 1e-12);
                    }
                }
            }
            for k in 0..q.half {
                let a = q.node(k);
                let b = q.node(k + q.half);
                assert!(a.iter().zip(b).all(|(x, y)| *x == -*y));
            }
        }
        assert!(sphere_quadrature(2, 2).is_err());
    }

    #[test]
    fn shell_examples() {
        let (u, w) = to_energy_shell(&[1.1, 0.0, 0.0], 1.0, 0.1).unwrap();
        assert!((u - 2.1).abs() < 1e-12);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        assert!((shell_jacobian(0.0, 1.0, 0.1, 3) - 0.05).abs() < 1e-15);
        assert!((shell_jacobian(2.1, 1.0, 0.1, 3) - 0.055).abs() < 1e-12);
        assert_eq!(shell_jacobian(-20.0, 1.0, 0.1, 3), 0.0);
        assert!(to_energy_shell(&[0.0; 3], 1.0, 0.1).is_err());
    }
}
