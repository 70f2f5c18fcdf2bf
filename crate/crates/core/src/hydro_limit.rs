//! Fluctuations around `M_eps` and the diagnostics of the low-temperature
//! hydrodynamic limit: dilation onto energy-shell coordinates, concentration
//! on the Fermi sphere, macroscopic moments, the infinitesimal-equilibrium
//! fit, renormalized fluctuations and conservation defects.

use crate::collision::{qfd_apply, Statistics, TripleSource};
use crate::equilibria::{cosh_profile, normalized_low_temp};
use crate::error::{Error, Result};
use crate::kinetic_solver::{KineticSolver, ScalingRegime, SimulationConfig};
use crate::par::{self, Exec};
use crate::phase_space::{shell_jacobian, sphere_area, EnergyShellGrid, VelocityGrid};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Geometry shared by every diagnostic of one run.
#[derive(Debug, Clone)]
pub struct ShellContext {
    pub grid: VelocityGrid,
    pub r: f64,
    pub delta: f64,
    pub regime: ScalingRegime,
    pub n_x: usize,
    pub length: f64,
}

impl ShellContext {
    pub fn from_solver(s: &KineticSolver) -> Self {
        Self {
            grid: s.grid.clone(),
            r: s.r,
            delta: s.delta,
            regime: s.regime,
            n_x: s.n_x,
            length: s.length,
        }
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_x as f64
    }

    pub fn n_v(&self) -> usize {
        self.grid.len()
    }

    pub fn equilibrium(&self) -> Vec<f64> {
        let et = self.regime.eps_tau();
        (0..self.grid.len())
            .map(|k| normalized_low_temp(self.grid.node(k), self.r, self.delta, et))
            .collect()
    }

    /// `u = (|v|^2 - R^2)/eps^tau` per velocity node.
    pub fn u_nodes(&self) -> Vec<f64> {
        let et = self.regime.eps_tau();
        (0..self.grid.len())
            .map(|k| (self.grid.speed2(k) - self.r * self.r) / et)
            .collect()
    }

    /// Default energy window `max(30, alpha |log eps|)`.
    pub fn u_max(&self) -> f64 {
        crate::phase_space::default_u_max(self.regime.alpha, self.regime.eps)
    }

    /// `|S^{d-1}| R^{d-1}`, the area of the Fermi sphere.
    pub fn shell_area(&self) -> f64 {
        sphere_area(self.grid.d) * self.r.powi(self.grid.d as i32 - 1)
    }
}

/// `g = (f - M_eps)/eps` on `n_x x n_v`.
#[derive(Debug, Clone)]
pub struct Fluctuation {
    pub g: Vec<f64>,
    pub regime: ScalingRegime,
}

impl Fluctuation {
    pub fn from_field(ctx: &ShellContext, f: &[f64]) -> Result<Self> {
        let m = ctx.equilibrium();
        let nv = m.len();
        if f.len() != ctx.n_x * nv {
            return Err(Error::Structural(format!(
                "field has {} values, expected {} x {}",
                f.len(),
                ctx.n_x,
                nv
            )));
        }
        let eps = ctx.regime.eps;
        Ok(Self {
            g: f.iter()
                .enumerate()
                .map(|(i, x)| (x - m[i % nv]) / eps)
                .collect(),
            regime: ctx.regime,
        })
    }

    /// `M_eps + eps g`.
    pub fn reconstruct(&self, ctx: &ShellContext) -> Vec<f64> {
        let m = ctx.equilibrium();
        let nv = m.len();
        self.g
            .iter()
            .enumerate()
            .map(|(i, g)| m[i % nv] + self.regime.eps * g)
            .collect()
    }
}

/// Dilated fluctuation on a node set in `(u, omega)`: each node carries its
/// energy level, its point on the Fermi sphere and its `du domega` measure.
#[derive(Debug, Clone)]
pub struct DilatedDensity {
    pub d: usize,
    pub r: f64,
    pub eps_tau: f64,
    pub n_x: usize,
    pub u: Vec<f64>,
    /// Flat points on the sphere of radius R.
    pub omega: Vec<f64>,
    pub measure: Vec<f64>,
    /// `n_x x nodes`.
    pub g_tilde: Vec<f64>,
    /// `int |g| dv` of velocity nodes outside the energy window, per cell
    /// volume summed over x.
    pub tail_mass: f64,
}

impl DilatedDensity {
    pub fn n_nodes(&self) -> usize {
        self.u.len()
    }

    pub fn omega_at(&self, k: usize) -> &[f64] {
        &self.omega[k * self.d..(k + 1) * self.d]
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.g_tilde[c * n..(c + 1) * n]
    }

    /// Samples `psi(x_cell, u, omega)` on the product nodes of a shell grid.
    pub fn from_shell_fn<F: Fn(usize, f64, &[f64]) -> f64>(
        shells: &EnergyShellGrid,
        n_x: usize,
        psi: F,
    ) -> Self {
        let d = shells.d;
        let mut u = Vec::new();
        let mut omega = Vec::new();
        let mut measure = Vec::new();
        for (iu, &uu) in shells.u_nodes.iter().enumerate() {
            for k in 0..shells.n_omega() {
                u.push(uu);
                omega.extend_from_slice(shells.omega(k));
                measure.push(shells.u_weights[iu] * shells.omega_weights[k]);
            }
        }
        let n = u.len();
        let mut g_tilde = vec![0.0; n_x * n];
        for c in 0..n_x {
            for k in 0..n {
                g_tilde[c * n + k] = psi(c, u[k], &omega[k * d..(k + 1) * d]);
            }
        }
        Self {
            d,
            r: shells.r,
            eps_tau: shells.eps_tau,
            n_x,
            u,
            omega,
            measure,
            g_tilde,
            tail_mass: 0.0,
        }
    }

    /// Integral of `g_tilde * phi(u, omega)` per cell.
    pub fn integrate<F: Fn(f64, &[f64]) -> f64>(&self, c: usize, phi: F) -> f64 {
        let g = self.cell(c);
        (0..self.n_nodes())
            .map(|k| g[k] * self.measure[k] * phi(self.u[k], self.omega_at(k)))
            .sum()
    }

    /// Bin averages on a shell grid (nearest sphere direction, u-bin) as
    /// `n_x x n_u x n_omega`, with the node count of each bin.
    pub fn binned(&self, shells: &EnergyShellGrid) -> (Vec<f64>, Vec<usize>) {
        let (nu, no) = (shells.n_u(), shells.n_omega());
        let mut pop = vec![0usize; nu * no];
        let mut bin = vec![None; self.n_nodes()];
        for k in 0..self.n_nodes() {
            if let Some(iu) = shells.u_bin(self.u[k]) {
                let io = shells.omega_bin(self.omega_at(k));
                bin[k] = Some(iu * no + io);
                pop[iu * no + io] += 1;
            }
        }
        let mut out = vec![0.0; self.n_x * nu * no];
        for c in 0..self.n_x {
            let g = self.cell(c);
            for k in 0..self.n_nodes() {
                if let Some(b) = bin[k] {
                    out[c * nu * no + b] += g[k] * self.measure[k];
                }
            }
            for b in 0..nu * no {
                let area = shells.u_weights[b / no] * shells.omega_weights[b % no];
                out[c * nu * no + b] /= area;
            }
        }
        (out, pop)
    }
}

/// `g_tilde = eps^tau |v|^{d-2}/(2 R^{d-1}) g` at every velocity node with
/// `|u| <= u_max`; the other nodes only count toward the tail mass.
pub fn dilate(ctx: &ShellContext, g: &Fluctuation, u_max: f64) -> DilatedDensity {
    let d = ctx.grid.d;
    let et = ctx.regime.eps_tau();
    let nv = ctx.n_v();
    let us = ctx.u_nodes();
    let mut keep = Vec::new();
    for k in 0..nv {
        let jac = shell_jacobian(us[k], ctx.r, et, d);
        if us[k].abs() <= u_max && jac > 0.0 && ctx.grid.speed2(k) > 0.0 {
            keep.push((k, jac));
        }
    }
    let mut u = Vec::with_capacity(keep.len());
    let mut omega = Vec::with_capacity(keep.len() * d);
    let mut measure = Vec::with_capacity(keep.len());
    for &(k, jac) in &keep {
        u.push(us[k]);
        let s = ctx.grid.speed2(k).sqrt();
        omega.extend(ctx.grid.node(k).iter().map(|x| ctx.r * x / s));
        measure.push(ctx.grid.weights[k] / jac);
    }
    let n = keep.len();
    let mut g_tilde = vec![0.0; ctx.n_x * n];
    let mut tail = 0.0;
    let kept: std::collections::HashSet<usize> = keep.iter().map(|&(k, _)| k).collect();
    for c in 0..ctx.n_x {
        let row = &g.g[c * nv..(c + 1) * nv];
        for (m, &(k, jac)) in keep.iter().enumerate() {
            g_tilde[c * n + m] = jac * row[k];
        }
        for k in 0..nv {
            if !kept.contains(&k) {
                tail += row[k].abs() * ctx.grid.weights[k] * ctx.dx();
            }
        }
    }
    DilatedDensity {
        d,
        r: ctx.r,
        eps_tau: et,
        n_x: ctx.n_x,
        u,
        omega,
        measure,
        g_tilde,
        tail_mass: tail,
    }
}

/// `eps^{(gamma - 3 tau)/2} int |g (v^2 - R^2)| 1{|v^2 - R^2| >= lambda eps^tau} dx dv`
/// for every `lambda`.
pub fn concentration_profile(ctx: &ShellContext, g: &Fluctuation, lambdas: &[f64]) -> Vec<f64> {
    let rg = &ctx.regime;
    let et = rg.eps_tau();
    let scale = rg.eps.powf(0.5 * (rg.gamma - 3.0 * rg.tau));
    let nv = ctx.n_v();
    let r2 = ctx.r * ctx.r;
    lambdas
        .iter()
        .map(|&lam| {
            let mut s = 0.0;
            for (i, &x) in g.g.iter().enumerate() {
                let k = i % nv;
                let e = ctx.grid.speed2(k) - r2;
                if e.abs() >= lam * et {
                    s += (x * e).abs() * ctx.grid.weights[k];
                }
            }
            scale * s * ctx.dx()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroFields {
    pub rho: Vec<f64>,
    /// `n_x x d`.
    pub u: Vec<f64>,
    pub e: Vec<f64>,
}

impl MacroFields {
    pub fn zeros(n_x: usize, d: usize) -> Self {
        Self {
            rho: vec![0.0; n_x],
            u: vec![0.0; n_x * d],
            e: vec![0.0; n_x],
        }
    }

    pub fn n_x(&self) -> usize {
        self.rho.len()
    }

    pub fn d(&self) -> usize {
        self.u.len() / self.rho.len().max(1)
    }

    pub fn u_at(&self, c: usize) -> &[f64] {
        let d = self.d();
        &self.u[c * d..(c + 1) * d]
    }

    /// Grid L2 norms `(|rho|, |U|, |E|)` with cell volume `dx`.
    pub fn norms(&self, dx: f64) -> (f64, f64, f64) {
        let n = |v: &[f64]| (dx * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        (n(&self.rho), n(&self.u), n(&self.e))
    }

    pub const CSV_HEADER_PREFIX: &'static str = "x,rho";

    pub fn csv(&self, length: f64) -> String {
        let d = self.d();
        let n_x = self.n_x();
        let mut s = String::from("x,rho");
        for a in 1..=d {
            s.push_str(&format!(",U_{a}"));
        }
        s.push_str(",E\n");
        for c in 0..n_x {
            let x = (c as f64 + 0.5) * length / n_x as f64;
            s.push_str(&format!("{x:.12e},{:.12e}", self.rho[c]));
            for v in self.u_at(c) {
                s.push_str(&format!(",{v:.12e}"));
            }
            s.push_str(&format!(",{:.12e}\n", self.e[c]));
        }
        s
    }
}

/// `rho` and `U` from the sphere averages of `int g_tilde du`, `E` from
/// `(pi^2/3) R^{d-1} |S^{d-1}| E = int u g_tilde du domega`.
pub fn extract_macro(gt: &DilatedDensity) -> MacroFields {
    let d = gt.d;
    let area = sphere_area(d) * gt.r.powi(d as i32 - 1);
    let mut m = MacroFields::zeros(gt.n_x, d);
    for c in 0..gt.n_x {
        let g = gt.cell(c);
        let mut rho = 0.0;
        let mut u = vec![0.0; d];
        let mut e = 0.0;
        for k in 0..gt.n_nodes() {
            let gm = g[k] * gt.measure[k];
            rho += gm;
            for (a, w) in gt.omega_at(k).iter().enumerate() {
                u[a] += gm * w;
            }
            e += gm * gt.u[k];
        }
        m.rho[c] = rho / area;
        for a in 0..d {
            m.u[c * d + a] = d as f64 / (gt.r * gt.r) * u[a] / area;
        }
        m.e[c] = e / (PI * PI / 3.0 * area);
    }
    m
}

/// Least-squares fit of `4 cosh^2(u/2) g_tilde` onto `span{1, omega, u}` with
/// weight `1/(4 cosh^2(u/2))`, cell by cell. The residual is the relative
/// distance over all cells in that weighted norm.
pub fn equilibrium_fit(gt: &DilatedDensity) -> Result<(MacroFields, f64)> {
    let d = gt.d;
    let p = d + 2;
    let n = gt.n_nodes();
    let basis = |k: usize, out: &mut [f64]| {
        out[0] = 1.0;
        out[1..=d].copy_from_slice(gt.omega_at(k));
        out[d + 1] = gt.u[k];
    };
    // normal matrix is the same for every cell
    let mut a = vec![0.0; p * p];
    let mut phi = vec![0.0; p];
    let wts: Vec<f64> = (0..n)
        .map(|k| gt.measure[k] * cosh_profile(gt.u[k]))
        .collect();
    for k in 0..n {
        basis(k, &mut phi);
        for i in 0..p {
            for j in 0..p {
                a[i * p + j] += wts[k] * phi[i] * phi[j];
            }
        }
    }
    let mut m = MacroFields::zeros(gt.n_x, d);
    let mut res2 = 0.0;
    let mut tot2 = 0.0;
    for c in 0..gt.n_x {
        let g = gt.cell(c);
        let mut rhs = vec![0.0; p];
        let y: Vec<f64> = (0..n).map(|k| g[k] / cosh_profile(gt.u[k])).collect();
        for k in 0..n {
            basis(k, &mut phi);
            for i in 0..p {
                rhs[i] += wts[k] * phi[i] * y[k];
            }
        }
        let coef = solve(&a, &rhs, p)?;
        for k in 0..n {
            basis(k, &mut phi);
            let fit: f64 = phi.iter().zip(&coef).map(|(x, y)| x * y).sum();
            res2 += wts[k] * (y[k] - fit) * (y[k] - fit);
            tot2 += wts[k] * y[k] * y[k];
        }
        m.rho[c] = coef[0];
        m.u[c * d..(c + 1) * d].copy_from_slice(&coef[1..=d]);
        m.e[c] = coef[d + 1];
    }
    let residual = if tot2 > 0.0 {
        (res2 / tot2).sqrt()
    } else {
        0.0
    };
    Ok((m, residual))
}

/// Gaussian elimination with partial pivoting; near-singular systems are
/// reported rather than regularized.
fn solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[piv * n + col].abs() <= 1e-12 * scale {
            return Err(Error::Degenerate(format!(
                "pivot {:.3e} in column {col} (matrix scale {scale:.3e})",
                m[piv * n + col]
            )));
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
            }
            x.swap(piv, col);
        }
        for i in col + 1..n {
            let f = m[i * n + col] / m[col * n + col];
            for j in col..n {
                m[i * n + j] -= f * m[col * n + j];
            }
            x[i] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Conservation defect and energy flux per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    /// `eps^{-kappa-1} int u Q(f) chi dv`.
    pub defect: Vec<f64>,
    /// `int u v g chi dv`, `n_x x d`.
    pub flux: Vec<f64>,
    /// `int u omega g_tilde chi du domega`.
    pub flux1: Vec<f64>,
    /// `int u ((1 + eps^tau u/R^2)^{1/2} - 1) omega g_tilde chi du domega`.
    pub flux2: Vec<f64>,
}

impl DefectReport {
    fn l1(v: &[f64], d: usize, dx: f64) -> f64 {
        v.chunks(d)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            * dx
    }

    pub fn defect_l1(&self, dx: f64) -> f64 {
        self.defect.iter().map(|x| x.abs()).sum::<f64>() * dx
    }

    pub fn flux_l1(&self, d: usize, dx: f64) -> (f64, f64, f64) {
        (
            Self::l1(&self.flux, d, dx),
            Self::l1(&self.flux1, d, dx),
            Self::l1(&self.flux2, d, dx),
        )
    }
}

/// Cutoff `chi = 1{|u| < alpha |log eps|}` per velocity node.
pub fn cutoff(ctx: &ShellContext) -> Vec<bool> {
    let lim = ctx.regime.alpha * ctx.regime.eps.ln().abs();
    ctx.u_nodes().iter().map(|u| u.abs() < lim).collect()
}

pub fn conservation_defect<S: TripleSource>(
    ctx: &ShellContext,
    f: &[f64],
    src: &S,
    stats: Statistics,
    exec: Exec,
) -> Result<DefectReport> {
    let nv = ctx.n_v();
    let d = ctx.grid.d;
    let rg = &ctx.regime;
    let et = rg.eps_tau();
    let chi = cutoff(ctx);
    let us = ctx.u_nodes();
    let g = Fluctuation::from_field(ctx, f)?;
    let pre = rg.eps.powf(-rg.kappa - 1.0);
    let qs = par::map(exec, ctx.n_x, |c| {
        qfd_apply(src, &f[c * nv..(c + 1) * nv], stats, Exec::Sequential)
    });
    let mut rep = DefectReport {
        defect: vec![0.0; ctx.n_x],
        flux: vec![0.0; ctx.n_x * d],
        flux1: vec![0.0; ctx.n_x * d],
        flux2: vec![0.0; ctx.n_x * d],
    };
    for (c, q) in qs.into_iter().enumerate() {
        let q = q?;
        let row = &g.g[c * nv..(c + 1) * nv];
        for k in 0..nv {
            if !chi[k] {
                continue;
            }
            let w = ctx.grid.weights[k];
            rep.defect[c] += pre * us[k] * q[k] * w;
            let v = ctx.grid.node(k);
            let s = ctx.grid.speed2(k).sqrt();
            let stretch = (1.0 + et * us[k] / (ctx.r * ctx.r)).max(0.0).sqrt();
            for a in 0..d {
                let om = if s > 0.0 { ctx.r * v[a] / s } else { 0.0 };
                // g_tilde du domega = g dv
                rep.flux[c * d + a] += us[k] * v[a] * row[k] * w;
                rep.flux1[c * d + a] += us[k] * om * row[k] * w;
                rep.flux2[c * d + a] += us[k] * (stretch - 1.0) * om * row[k] * w;
            }
        }
    }
    Ok(rep)
}

/// `sqrt(delta f) = sqrt(delta M)(1 + delta eps phi/2)`,
/// `sqrt(1 - delta f) = sqrt(1 - delta M)(1 - delta eps psi/2)`.
#[derive(Debug, Clone)]
pub struct RenormalizedFluctuations {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub pi: Vec<f64>,
    /// `eps^{gamma/2} ||phi||_{L^2(M_eps)}`.
    pub phi_norm: f64,
    /// `eps^{gamma/2} ||psi||_{L^2(1 - delta M_eps)}`.
    pub psi_norm: f64,
}

pub fn renormalize(ctx: &ShellContext, f: &[f64]) -> Result<RenormalizedFluctuations> {
    let m = ctx.equilibrium();
    let nv = m.len();
    if f.len() != ctx.n_x * nv {
        return Err(Error::Structural(
            "field size does not match the context".into(),
        ));
    }
    let (delta, eps) = (ctx.delta, ctx.regime.eps);
    let mut phi = Vec::with_capacity(f.len());
    let mut psi = Vec::with_capacity(f.len());
    let (mut n_phi, mut n_psi) = (0.0, 0.0);
    for (i, &x) in f.iter().enumerate() {
        let k = i % nv;
        let z = (delta * x).clamp(0.0, 1.0);
        let a = delta * m[k];
        let p = 2.0 / (delta * eps) * ((z / a).sqrt() - 1.0);
        let q = 2.0 / (delta * eps) * (1.0 - ((1.0 - z) / (1.0 - a)).sqrt());
        let w = ctx.grid.weights[k] * ctx.dx();
        n_phi += w * m[k] * p * p;
        n_psi += w * (1.0 - a) * q * q;
        phi.push(p);
        psi.push(q);
    }
    let s = eps.powf(0.5 * ctx.regime.gamma);
    let pi = phi.iter().zip(&psi).map(|(a, b)| a + b).collect();
    Ok(RenormalizedFluctuations {
        phi,
        psi,
        pi,
        phi_norm: s * n_phi.sqrt(),
        psi_norm: s * n_psi.sqrt(),
    })
}

/// `C^in = H(f^in | M_eps)/eps^{2-gamma}`.
pub fn measured_c_in(ctx: &ShellContext, f_in: &[f64]) -> Result<f64> {
    let h = crate::entropy::relative_entropy(
        f_in,
        &ctx.equilibrium(),
        &ctx.grid.weights,
        ctx.dx(),
        ctx.delta,
    )?;
    Ok(h / ctx.regime.eps.powf(2.0 - ctx.regime.gamma))
}

/// `int (R^{d-1}|S| rho^2 + R^{d+1}|S|/d |U|^2) dx`, the L2 mass of the
/// limiting sphere density `rho + U.omega`.
pub fn shell_l2_mass(ctx: &ShellContext, m: &MacroFields) -> f64 {
    let d = ctx.grid.d as f64;
    let s = sphere_area(ctx.grid.d);
    let r = ctx.r;
    (0..m.n_x())
        .map(|c| {
            let u2: f64 = m.u_at(c).iter().map(|x| x * x).sum();
            r.powf(d - 1.0) * s * m.rho[c] * m.rho[c] + r.powf(d + 1.0) * s / d * u2
        })
        .sum::<f64>()
        * ctx.dx()
}

/// One row of the diagnostics table of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub eps: f64,
    /// Concentration profile at the sweep's lambda.
    pub concentration: f64,
    pub rho_norm: f64,
    pub u_norm: f64,
    pub e_norm: f64,
    pub fit_residual: f64,
    pub defect_l1: f64,
    pub flux_f1_l1: f64,
    pub flux_f2_l1: f64,
    pub c_in: f64,
}

impl DiagnosticsRow {
    pub const CSV_HEADER: &'static str =
        "t,eps,concentration,rho_norm,U_norm,E_norm,fit_residual,defect_L1,flux_F1_L1,flux_F2_L1,Cin";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.t,
            self.eps,
            self.concentration,
            self.rho_norm,
            self.u_norm,
            self.e_norm,
            self.fit_residual,
            self.defect_l1,
            self.flux_f1_l1,
            self.flux_f2_l1,
            self.c_in
        )
    }
}

/// An eps-sweep: the same run repeated for several `eps` with the velocity
/// box adapted to the width of the Fermi layer.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Run template; `regime.eps` and `v_max` are overwritten per point.
    pub template: SimulationConfig,
    pub eps_list: Vec<f64>,
    /// Time at which the trend quantities are read.
    pub t_compare: f64,
    pub lambda: f64,
    /// Snapshots are taken every `t_final / n_snapshots`.
    pub n_snapshots: usize,
    /// `v_max = max(2R, sqrt(R^2 + layers eps^tau))`.
    pub layers: f64,
    /// Energy bins of the shell profile recorded at `t_compare`.
    pub u_bins: usize,
    /// Step as a fraction of the stability bound, unless the template fixes
    /// `dt`. Steps right at the bound push the far corners of the velocity
    /// box below zero and the clamp adds up.
    pub dt_fraction: f64,
}

impl SweepConfig {
    /// Velocity box for one `eps`.
    pub fn v_max(&self, eps: f64) -> f64 {
        let t = &self.template;
        let et = eps.powf(t.regime.tau);
        (2.0 * t.r).max((t.r * t.r + self.layers * et).sqrt())
    }

    pub fn point_config(&self, eps: f64) -> SimulationConfig {
        let mut cfg = self.template.clone();
        cfg.regime.eps = eps;
        cfg.v_max = self.v_max(eps);
        let n = self.n_snapshots.max(1);
        let mut times: Vec<f64> = (1..n).map(|k| k as f64 * cfg.t_final / n as f64).collect();
        times.push(self.t_compare);
        times.retain(|&t| t > 0.0 && t <= cfg.t_final);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        cfg.snapshot_times = times;
        cfg
    }
}

/// Everything measured on one run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub eps: f64,
    pub regime: crate::kinetic_solver::RegimeKind,
    pub v_max: f64,
    pub dt: f64,
    pub steps: usize,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Fitted `(rho, U, E)` at every snapshot.
    pub fields: Vec<(f64, MacroFields)>,
    /// Kinetic fields against the wave solution seeded by the fit at `t = 0`.
    pub comparison: Vec<crate::wave_solver::ComparisonRow>,
    pub monitors: Vec<crate::kinetic_solver::MonitorRow>,
    /// Concentration at `lambda` at `t_compare`.
    pub concentration: f64,
    /// Fit residual at `t_compare`.
    pub fit_residual: f64,
    /// Relative kinetic-vs-wave L2 distance at `t_compare`.
    pub wave_distance: f64,
    /// `|E(t) - E(0)|_2 / |E(0)|_2` at `t_compare`.
    pub energy_drift: f64,
    /// `int_0^T |defect|_{L1_x} dt` by the trapezoidal rule on snapshots.
    pub defect_time_l1: f64,
    pub c_in: f64,
    /// Largest `int (rho + U.omega)^2 dx domega / (C^in/(R delta^2))` over snapshots.
    pub shell_bound_ratio: f64,
    pub clamp_total: f64,
    /// `|f^in|_1`.
    pub f_l1: f64,
    pub shell_profile: ShellProfile,
}

/// Bin averages of the dilated fluctuation, `n_x x n_u x n_omega`.
#[derive(Debug, Clone)]
pub struct ShellProfile {
    pub u: Vec<f64>,
    pub n_omega: usize,
    pub values: Vec<f64>,
    /// Velocity nodes per bin.
    pub population: Vec<usize>,
}

/// Runs one sweep point and its diagnostics.
pub fn sweep_point(cfg: &SweepConfig, eps: f64) -> Result<SweepPoint> {
    let mut sim = cfg.point_config(eps);
    let kind = sim.regime.classify()?;
    let solver = KineticSolver::new(&sim)?;
    if sim.dt.is_none() {
        if !(cfg.dt_fraction > 0.0 && cfg.dt_fraction <= 1.0) {
            return Err(Error::Config(format!("dt_fraction = {} must lie in (0, 1]", cfg.dt_fraction)));
        }
        sim.dt = Some(cfg.dt_fraction * solver.dt_max());
    }
    let traj = crate::kinetic_solver::run(&solver, &sim)?;
    let ctx = ShellContext::from_solver(&solver);
    let dx = ctx.dx();
    let d = ctx.grid.d;
    let f_in = &traj.snapshots[0].f;
    let c_in = measured_c_in(&ctx, f_in)?;
    let bound = c_in / (ctx.r * ctx.delta * ctx.delta);
    let f_l1 = f_in
        .iter()
        .enumerate()
        .map(|(i, x)| x.abs() * ctx.grid.weights[i % ctx.n_v()])
        .sum::<f64>()
        * dx;
    let mut diagnostics = Vec::new();
    let mut fields = Vec::new();
    let mut defects = Vec::new();
    let mut shell_bound_ratio = 0.0f64;
    let (mut concentration, mut fit_residual) = (f64::NAN, f64::NAN);
    let sphere = crate::phase_space::sphere_quadrature(d, sim.sphere_order)?;
    let shells = EnergyShellGrid::new(&sphere, ctx.r, ctx.regime.eps_tau(), ctx.u_max(), cfg.u_bins.max(1))?;
    let mut shell_profile = None;
    for snap in &traj.snapshots {
        let g = Fluctuation::from_field(&ctx, &snap.f)?;
        let gt = dilate(&ctx, &g, ctx.u_max());
        let (m, residual) = equilibrium_fit(&gt)?;
        let conc = concentration_profile(&ctx, &g, &[cfg.lambda])[0];
        let def = conservation_defect(&ctx, &snap.f, &solver.cache, solver.stats, solver.exec)?;
        let (nr, nu, ne) = m.norms(dx);
        let (_, f1, f2) = def.flux_l1(d, dx);
        let dl1 = def.defect_l1(dx);
        shell_bound_ratio = shell_bound_ratio.max(shell_l2_mass(&ctx, &m) / bound);
        if (snap.t - cfg.t_compare).abs() < 1e-9 {
            concentration = conc;
            fit_residual = residual;
            let (values, population) = gt.binned(&shells);
            shell_profile = Some(ShellProfile {
                u: shells.u_nodes.clone(),
                n_omega: shells.n_omega(),
                values,
                population,
            });
        }
        diagnostics.push(DiagnosticsRow {
            t: snap.t,
            eps,
            concentration: conc,
            rho_norm: nr,
            u_norm: nu,
            e_norm: ne,
            fit_residual: residual,
            defect_l1: dl1,
            flux_f1_l1: f1,
            flux_f2_l1: f2,
            c_in,
        });
        defects.push((snap.t, dl1));
        fields.push((snap.t, m));
    }
    let comparison = crate::wave_solver::compare_with_kinetic(&fields, ctx.r, d, ctx.length)?;
    let at = |t: f64| fields.iter().position(|(s, _)| (s - t).abs() < 1e-9);
    let k = at(cfg.t_compare).ok_or_else(|| Error::Config(format!("t_compare = {} is not a snapshot", cfg.t_compare)))?;
    let e0 = &fields[0].1.e;
    let et = &fields[k].1.e;
    let n0 = e0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let drift = e0.iter().zip(et).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let defect_time_l1 = defects
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(SweepPoint {
        eps,
        regime: kind,
        v_max: sim.v_max,
        dt: traj.dt,
        steps: traj.steps,
        wave_distance: comparison[k].relative,
        comparison,
        diagnostics,
        fields,
        monitors: traj.monitors.clone(),
        concentration,
        fit_residual,
        energy_drift: if n0 > 0.0 { drift / n0 } else { f64::NAN },
        defect_time_l1,
        c_in,
        shell_bound_ratio,
        clamp_total: traj.clamp_total,
        f_l1,
        shell_profile: shell_profile.expect("t_compare is a snapshot"),
    })
}

pub fn limit_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    cfg.eps_list.iter().map(|&e| sweep_point(cfg, e)).collect()
}

/// True when `v` decreases strictly along the sweep order.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::sphere_quadrature;

    fn shells(eps_tau: f64) -> EnergyShellGrid {
        EnergyShellGrid::new(&sphere_quadrature(3, 6).unwrap(), 1.0, eps_tau, 40.0, 4000).unwrap()
    }

    #[test]
    fn macro_examples() {
        let s = shells(0.1);
        let one = DilatedDensity::from_shell_fn(&s, 1, |_, u, _| cosh_profile(u));
        let m = extract_macro(&one);
        assert!((m.rho[0] - 1.0).abs() < 1e-10);
        assert!(m.u.iter().all(|x| x.abs() < 1e-12) && m.e[0].abs() < 1e-12);
        let om = DilatedDensity::from_shell_fn(&s, 1, |_, u, w| w[0] * cosh_profile(u));
        let m = extract_macro(&om);
        assert!((m.u[0] - 1.0).abs() < 1e-10 && m.rho[0].abs() < 1e-12);
        let en = DilatedDensity::from_shell_fn(&s, 1, |_, u, _| u * cosh_profile(u));
        let m = extract_macro(&en);
        assert!((m.e[0] - 1.0).abs() < 1e-9, "{}", m.e[0]);
    }

    #[test]
    fn fit_examples() {
        let s = shells(0.1);
        let exact = DilatedDensity::from_shell_fn(&s, 2, |c, u, w| {
            let k = (c + 1) as f64;
            k * (0.3 + 0.1 * w[0] - 0.2 * u) * cosh_profile(u)
        });
        let (m, res) = equilibrium_fit(&exact).unwrap();
        assert!(res < 1e-10);
        assert!((m.rho[1] - 0.6).abs() < 1e-10 && (m.u[3] - 0.2).abs() < 1e-10);
        assert!((m.e[0] + 0.2).abs() < 1e-10);
        let quad = DilatedDensity::from_shell_fn(&s, 1, |_, u, _| u * u * cosh_profile(u));
        let (m, res) = equilibrium_fit(&quad).unwrap();
        assert!(res > 0.1);
        assert!(m.e[0].abs() < 1e-10);
        let mut flat = exact.clone();
        flat.u.iter_mut().for_each(|u| *u = 1.0);
        assert!(matches!(equilibrium_fit(&flat), Err(Error::Degenerate(_))));
    }
}
