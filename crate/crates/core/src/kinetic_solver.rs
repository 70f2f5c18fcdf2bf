//! Time integration of `(d_t + v.grad_x) f = eps^{-kappa} Q_FD(f)` on a
//! periodic one-dimensional torus in x (or homogeneous in x when `n_x = 1`).

use crate::collision::{
    qfd_apply, qfd_apply_with_dissipation, CollisionKernel, CollisionKernelCache, CrossSection,
    Statistics, TripleSource,
};
use crate::entropy::{classical_entropy, entropy, relative_entropy, EntropyReport};
use crate::equilibria::{fermi, normalized_low_temp};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::phase_space::{sphere_quadrature, VelocityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    pub eps: f64,
    pub kappa: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    /// `0 < gamma = tau < 1`, `kappa > 2 tau`.
    MainTheorem,
    /// Additionally `tau < 2/3` and `kappa < 2 - tau`.
    SpectrumTheorem,
    /// `tau = gamma = 0`.
    ClassicalAcoustic,
}

impl RegimeKind {
    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::MainTheorem => "main-theorem",
            RegimeKind::SpectrumTheorem => "spectrum-theorem",
            RegimeKind::ClassicalAcoustic => "classical-acoustic",
        }
    }
}

impl ScalingRegime {
    pub fn eps_tau(&self) -> f64 {
        self.eps.powf(self.tau)
    }

    /// `eps^{-kappa}`, the collision frequency scale.
    pub fn collision_scale(&self) -> f64 {
        self.eps.powf(-self.kappa)
    }

    /// Names the active regime or the first violated hypothesis. The
    /// spectrum regime is a sub-case of the main one and takes precedence.
    pub fn classify(&self) -> Result<RegimeKind> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa = {} must be positive", self.kappa));
        }
        if self.tau == 0.0 && self.gamma == 0.0 {
            return Ok(RegimeKind::ClassicalAcoustic);
        }
        if (self.gamma - self.tau).abs() > 1e-12 {
            return bad(format!(
                "gamma = {} != tau = {} violates the main-theorem hypothesis gamma = tau",
                self.gamma, self.tau
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!(
                "tau = {} violates the main-theorem hypothesis 0 < tau < 1",
                self.tau
            ));
        }
        if self.kappa <= 2.0 * self.tau {
            return bad(format!(
                "kappa = {} <= 2 tau = {} violates the main-theorem hypothesis kappa > 2 tau",
                self.kappa,
                2.0 * self.tau
            ));
        }
        if self.tau < 2.0 / 3.0 && self.kappa < 2.0 - self.tau {
            Ok(RegimeKind::SpectrumTheorem)
        } else {
            Ok(RegimeKind::MainTheorem)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Second-order upwind with a minmod limiter.
    Muscl,
    /// Fourier differentiation (Nyquist mode dropped).
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `M_eps` in every cell.
    Equilibrium,
    /// Log-odds of `M_eps` shifted by `amplitude exp(-((u - center)/width)^2)`.
    ShellBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Log-odds of `M_eps` plus seeded uniform noise in `[-amplitude, amplitude]`.
    Random { amplitude: f64 },
    /// Local equilibrium whose fluctuation is infinitesimally Fermi-Dirac with
    /// `(rho, U, E)(x) = (rho, u, e) cos(2 pi mode x / L)`.
    Wave {
        rho: f64,
        u: Vec<f64>,
        e: f64,
        mode: usize,
    },
    /// Explicit velocity profile, copied into every cell.
    Profile(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub d: usize,
    pub r: f64,
    pub delta: f64,
    pub n_v: usize,
    pub v_max: f64,
    pub sphere_order: usize,
    pub n_x: usize,
    pub length: f64,
    pub transport: Transport,
    pub regime: ScalingRegime,
    pub cross_section: CrossSection,
    pub classical: bool,
    /// Fixed step; `None` picks the stability bound.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub initial: InitialCondition,
    pub seed: u64,
    pub exec: Exec,
}

impl SimulationConfig {
    /// Homogeneous relaxation defaults on a small grid.
    pub fn homogeneous(n_v: usize, regime: ScalingRegime) -> Self {
        Self {
            d: 3,
            r: 1.0,
            delta: 1.0,
            n_v,
            v_max: 2.5,
            sphere_order: 2,
            n_x: 1,
            length: 1.0,
            transport: Transport::Spectral,
            regime,
            cross_section: CrossSection::constant(1.0).expect("positive amplitude"),
            classical: false,
            dt: None,
            t_final: 1.0,
            snapshot_times: vec![],
            initial: InitialCondition::Equilibrium,
            seed: 0,
            exec: Exec::Parallel,
        }
    }

    pub fn statistics(&self) -> Statistics {
        if self.classical {
            Statistics::Classical
        } else {
            Statistics::FermiDirac { delta: self.delta }
        }
    }
}

#[derive(Debug, Clone)]
pub struct KineticState {
    pub t: f64,
    /// `n_x x n_v`, row per spatial cell.
    pub f: Vec<f64>,
    /// Total `sum |clamped change| w dx`.
    pub clamp_total: f64,
    /// `int_0^t D(f) ds`, unscaled.
    pub dissipation_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub report: EntropyReport,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub clamp: f64,
}

impl MonitorRow {
    pub fn csv_header(d: usize) -> String {
        let mom: Vec<String> = (1..=d).map(|a| format!("momentum_{a}")).collect();
        format!(
            "{},mass,{},energy,clamp",
            EntropyReport::CSV_HEADER,
            mom.join(",")
        )
    }

    pub fn csv_row(&self) -> String {
        let mom: Vec<String> = self.momentum.iter().map(|m| format!("{m:.12e}")).collect();
        format!(
            "{},{:.12e},{},{:.12e},{:.12e}",
            self.report.csv_row(),
            self.mass,
            mom.join(","),
            self.energy,
            self.clamp
        )
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub f: Vec<f64>,
}

/// Explicit solver: RK4 in time for transport plus stiff collisions.
pub struct KineticSolver {
    pub grid: VelocityGrid,
    pub cache: CollisionKernelCache,
    pub stats: Statistics,
    pub regime: ScalingRegime,
    pub r: f64,
    pub delta: f64,
    pub n_x: usize,
    pub length: f64,
    pub transport: Transport,
    pub exec: Exec,
    scale: f64,
    fft: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    collision_rate: f64,
}

impl KineticSolver {
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        let grid = VelocityGrid::new(cfg.d, cfg.n_v, cfg.v_max)?;
        grid.check_covers(cfg.r)?;
        if !(cfg.delta > 0.0) || !(cfg.r > 0.0) {
            return Err(Error::Config("delta and R must be positive".into()));
        }
        if cfg.n_x == 0 || !(cfg.length > 0.0) {
            return Err(Error::Config(
                "need n_x >= 1 and a positive torus length".into(),
            ));
        }
        if !(cfg.regime.eps > 0.0) || cfg.regime.kappa < 0.0 {
            return Err(Error::Config("need eps > 0 and kappa >= 0".into()));
        }
        cfg.cross_section.check_positive_on(2.0 * cfg.r)?;
        let sphere = sphere_quadrature(cfg.d, cfg.sphere_order)?;
        let cache = CollisionKernel::new(&grid, &sphere, &cfg.cross_section)?.build_cache(cfg.exec);
        let fft = (cfg.n_x > 1 && cfg.transport == Transport::Spectral).then(|| {
            let mut p = FftPlanner::new();
            (p.plan_fft_forward(cfg.n_x), p.plan_fft_inverse(cfg.n_x))
        });
        let mut s = Self {
            grid,
            cache,
            stats: cfg.statistics(),
            regime: cfg.regime,
            r: cfg.r,
            delta: cfg.delta,
            n_x: cfg.n_x,
            length: cfg.length,
            transport: cfg.transport,
            exec: cfg.exec,
            scale: cfg.regime.collision_scale(),
            fft,
            collision_rate: 0.0,
        };
        let reference = match s.stats {
            Statistics::FermiDirac { .. } => s.equilibrium(),
            Statistics::Classical => initial_profile(cfg, &s.grid)?[..s.grid.len()].to_vec(),
        };
        s.collision_rate = s.linearized_radius(&reference)?;
        Ok(s)
    }

    pub fn n_v(&self) -> usize {
        self.grid.len()
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_x as f64
    }

    /// `M_eps` on the velocity grid.
    pub fn equilibrium(&self) -> Vec<f64> {
        let et = self.regime.eps_tau();
        (0..self.grid.len())
            .map(|k| normalized_low_temp(self.grid.node(k), self.r, self.delta, et))
            .collect()
    }

    /// Spectral radius of the linearized collision operator at `f`, by power
    /// iteration with central differences.
    fn linearized_radius(&self, f: &[f64]) -> Result<f64> {
        let n = f.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0xd7);
        let mut g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut lam = 0.0;
        let top = match self.stats {
            Statistics::FermiDirac { delta } => 1.0 / delta,
            Statistics::Classical => f.iter().cloned().fold(0.0, f64::max),
        };
        for _ in 0..60 {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            g.iter_mut().for_each(|x| *x /= norm);
            let eta = 1e-7 * top;
            let fp: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + eta * b).collect();
            let fm: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
            let qp = qfd_apply(&self.cache, &fp, self.stats, self.exec)?;
            let qm = qfd_apply(&self.cache, &fm, self.stats, self.exec)?;
            g = qp
                .iter()
                .zip(&qm)
                .map(|(a, b)| (a - b) / (2.0 * eta))
                .collect();
            let next = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (next - lam).abs() < 1e-6 * next {
                lam = next;
                break;
            }
            lam = next;
        }
        Ok(lam)
    }

    fn transport_rate(&self) -> f64 {
        if self.n_x == 1 {
            return 0.0;
        }
        let vmax = self.grid.v_max - 0.5 * self.grid.h;
        match self.transport {
            Transport::Spectral => {
                let kmax = (self.n_x / 2).saturating_sub(1) as f64;
                vmax * 2.0 * std::f64::consts::PI * kmax / self.length
            }
            Transport::Muscl => 2.0 * vmax / self.dx(),
        }
    }

    /// Largest stable step: the combined spectral radius times `dt` stays
    /// inside the RK4 stability region.
    pub fn dt_max(&self) -> f64 {
        2.5 / (1.1 * self.scale * self.collision_rate + self.transport_rate())
    }

    pub fn initial_state(&self, cfg: &SimulationConfig) -> Result<KineticState> {
        let f = initial_profile(cfg, &self.grid)?;
        Ok(KineticState {
            t: 0.0,
            f,
            clamp_total: 0.0,
            dissipation_integral: 0.0,
        })
    }

    /// Right-hand side and the unscaled dissipation of `f`.
    fn rhs(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let nv = self.n_v();
        let mut out = vec![0.0; f.len()];
        let mut dsum = 0.0;
        for c in 0..self.n_x {
            let cell = &f[c * nv..(c + 1) * nv];
            let o = qfd_apply_with_dissipation(&self.cache, cell, self.stats, self.exec)?;
            for (y, q) in out[c * nv..(c + 1) * nv].iter_mut().zip(&o.q) {
                *y = self.scale * q;
            }
            dsum += o.dissipation * self.dx();
        }
        if self.n_x > 1 {
            let tr = self.transport_term(f);
            for (y, t) in out.iter_mut().zip(&tr) {
                *y += t;
            }
        }
        Ok((out, dsum))
    }

    /// `-v_1 d_x f`.
    fn transport_term(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.n_v();
        let nx = self.n_x;
        let d = self.grid.d;
        let dx = self.dx();
        let cols = par::map(self.exec, nv, |k| {
            let a = self.grid.nodes[k * d];
            let col: Vec<f64> = (0..nx).map(|c| f[c * nv + k]).collect();
            match self.transport {
                Transport::Spectral => {
                    let (fwd, inv) = self.fft.as_ref().expect("spectral plan");
                    let mut buf: Vec<Complex64> =
                        col.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                    fwd.process(&mut buf);
                    for (m, z) in buf.iter_mut().enumerate() {
                        let mm = if m < nx / 2 {
                            m as f64
                        } else if m > nx / 2 {
                            m as f64 - nx as f64
                        } else {
                            0.0
                        };
                        let k = 2.0 * std::f64::consts::PI * mm / self.length;
                        *z *= Complex64::new(0.0, k);
                    }
                    inv.process(&mut buf);
                    buf.iter()
                        .map(|z| -a * z.re / nx as f64)
                        .collect::<Vec<f64>>()
                }
                Transport::Muscl => {
                    let at = |c: isize| col[c.rem_euclid(nx as isize) as usize];
                    let minmod = |p: f64, q: f64| {
                        if p * q <= 0.0 {
                            0.0
                        } else if p.abs() < q.abs() {
                            p
                        } else {
                            q
                        }
                    };
                    let slope = |c: isize| minmod(at(c) - at(c - 1), at(c + 1) - at(c));
                    // flux through the right face of cell c
                    let flux = |c: isize| {
                        if a >= 0.0 {
                            a * (at(c) + 0.5 * slope(c))
                        } else {
                            a * (at(c + 1) - 0.5 * slope(c + 1))
                        }
                    };
                    (0..nx as isize)
                        .map(|c| -(flux(c) - flux(c - 1)) / dx)
                        .collect()
                }
            }
        });
        let mut out = vec![0.0; f.len()];
        for (k, col) in cols.iter().enumerate() {
            for c in 0..nx {
                out[c * nv + k] = col[c];
            }
        }
        out
    }

    /// One RK4 step followed by clamping into `[0, 1/delta]`.
    pub fn step(&self, st: &mut KineticState, dt: f64) -> Result<()> {
        let dt_max = self.dt_max();
        if !(dt > 0.0) || dt > dt_max * (1.0 + 1e-9) {
            return Err(Error::Stability { dt, dt_max });
        }
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let (k1, d1) = self.rhs(&st.f)?;
        let (k2, d2) = self.rhs(&axpy(&st.f, 0.5 * dt, &k1))?;
        let (k3, d3) = self.rhs(&axpy(&st.f, 0.5 * dt, &k2))?;
        let (k4, d4) = self.rhs(&axpy(&st.f, dt, &k3))?;
        let mut next = st.f.clone();
        for i in 0..next.len() {
            next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(bad) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::Integration {
                t: st.t,
                reason: format!(
                    "non-finite value at cell {}, velocity node {}",
                    bad / self.n_v(),
                    bad % self.n_v()
                ),
            });
        }
        let top = match self.stats {
            Statistics::FermiDirac { delta } => 1.0 / delta,
            Statistics::Classical => f64::INFINITY,
        };
        let nv = self.n_v();
        let dx = self.dx();
        let mut clamp = 0.0;
        for (i, x) in next.iter_mut().enumerate() {
            let c = x.clamp(0.0, top);
            clamp += (c - *x).abs() * self.grid.weights[i % nv] * dx;
            *x = c;
        }
        st.f = next;
        st.clamp_total += clamp;
        st.dissipation_integral += dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        st.t += dt;
        Ok(())
    }

    /// Grid totals of mass, momentum and energy.
    pub fn moments(&self, f: &[f64]) -> (f64, Vec<f64>, f64) {
        let nv = self.n_v();
        let d = self.grid.d;
        let dx = self.dx();
        let mut mass = 0.0;
        let mut mom = vec![0.0; d];
        let mut en = 0.0;
        for (i, &x) in f.iter().enumerate() {
            let k = i % nv;
            let w = self.grid.weights[k] * dx * x;
            mass += w;
            for a in 0..d {
                mom[a] += w * self.grid.nodes[k * d + a];
            }
            en += w * self.grid.speed2(k);
        }
        (mass, mom, en)
    }

    /// Entropy, relative entropy to `M_eps` and the dissipation rate.
    pub fn monitor(&self, st: &KineticState) -> Result<MonitorRow> {
        let dx = self.dx();
        let nv = self.n_v();
        let (h, h_rel) = match self.stats {
            Statistics::FermiDirac { delta } => (
                entropy(&st.f, &self.grid.weights, dx, delta),
                relative_entropy(&st.f, &self.equilibrium(), &self.grid.weights, dx, delta)?,
            ),
            Statistics::Classical => (classical_entropy(&st.f, &self.grid.weights, dx), f64::NAN),
        };
        let mut d = 0.0;
        for c in 0..self.n_x {
            d += dx
                * crate::collision::entropy_dissipation(
                    &self.cache,
                    &st.f[c * nv..(c + 1) * nv],
                    self.stats,
                    self.exec,
                )?;
        }
        let rg = &self.regime;
        let (mass, momentum, energy) = self.moments(&st.f);
        Ok(MonitorRow {
            report: EntropyReport {
                t: st.t,
                h,
                h_rel,
                d,
                scaled_h_rel: h_rel / rg.eps.powf(2.0 - rg.gamma),
                scaled_d: st.dissipation_integral / rg.eps.powf(2.0 + rg.kappa - rg.gamma),
            },
            mass,
            momentum,
            energy,
            clamp: st.clamp_total,
        })
    }

    /// The cached collision operator, without the `eps^{-kappa}` factor.
    pub fn collision(&self, cell: &[f64]) -> Result<Vec<f64>> {
        qfd_apply(&self.cache, cell, self.stats, self.exec)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.units()
    }
}

/// Initial field `n_x x n_v`.
pub fn initial_profile(cfg: &SimulationConfig, grid: &VelocityGrid) -> Result<Vec<f64>> {
    let nv = grid.len();
    let et = cfg.regime.eps_tau();
    let r2 = cfg.r * cfg.r;
    let top = 1.0 / cfg.delta;
    let u_of = |k: usize| (grid.speed2(k) - r2) / et;
    let mut f = vec![0.0; cfg.n_x * nv];
    match &cfg.initial {
        InitialCondition::Equilibrium => {
            for (i, x) in f.iter_mut().enumerate() {
                *x = top * fermi(u_of(i % nv));
            }
        }
        InitialCondition::ShellBump {
            amplitude,
            center,
            width,
        } => {
            for (i, x) in f.iter_mut().enumerate() {
                let u = u_of(i % nv);
                let s = (u - center) / width;
                *x = top * fermi(u - amplitude * (-s * s).exp());
            }
        }
        InitialCondition::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for (i, x) in f.iter_mut().enumerate() {
                let noise = amplitude * (2.0 * rng.random::<f64>() - 1.0);
                *x = top * fermi(u_of(i % nv) - noise);
            }
        }
        InitialCondition::Wave { rho, u, e, mode } => {
            if u.len() != cfg.d {
                return Err(Error::Config(format!(
                    "wave initial velocity has {} components, expected {}",
                    u.len(),
                    cfg.d
                )));
            }
            let dx = cfg.length / cfg.n_x as f64;
            let eps = cfg.regime.eps;
            let amp = 2.0 * cfg.r * cfg.delta / et;
            // eta carries the inverse shell Jacobian so that the dilated
            // fluctuation is (rho + U.omega + E u)/(4 cosh^2(u/2)) to first order
            let dm2 = cfg.d as i32 - 2;
            for c in 0..cfg.n_x {
                let x = (c as f64 + 0.5) * dx;
                let phase = (2.0 * std::f64::consts::PI * *mode as f64 * x / cfg.length).cos();
                for k in 0..nv {
                    let v = grid.node(k);
                    let s = grid.speed2(k).sqrt();
                    let uu = u_of(k);
                    if s == 0.0 {
                        f[c * nv + k] = top * fermi(uu);
                        continue;
                    }
                    let uw: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * cfg.r / s;
                    let eta = amp * phase * (cfg.r / s).powi(dm2) * (rho + uw + e * uu);
                    f[c * nv + k] = top * fermi(uu - eps * eta);
                }
            }
        }
        InitialCondition::Profile(p) => {
            if p.len() != nv {
                return Err(Error::Structural(format!(
                    "initial profile has {} values, grid has {nv}",
                    p.len()
                )));
            }
            for c in 0..cfg.n_x {
                f[c * nv..(c + 1) * nv].copy_from_slice(p);
            }
        }
    }
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub monitors: Vec<MonitorRow>,
    pub clamp_total: f64,
    pub dt: f64,
    pub dt_max: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("at least the initial snapshot")
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() < 1e-9)
    }

    pub fn monitor_csv(&self, d: usize) -> String {
        let mut s = MonitorRow::csv_header(d);
        s.push('\n');
        for m in &self.monitors {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Runs a configuration, recording a snapshot and a monitor row at `t = 0`,
/// at every requested time and at `t_final`. Steps are shortened so the
/// requested times are hit exactly.
pub fn simulate(cfg: &SimulationConfig) -> Result<(KineticSolver, Trajectory)> {
    let solver = KineticSolver::new(cfg)?;
    let traj = run(&solver, cfg)?;
    Ok((solver, traj))
}

pub fn run(solver: &KineticSolver, cfg: &SimulationConfig) -> Result<Trajectory> {
    if !(cfg.t_final >= 0.0) {
        return Err(Error::Config("t_final must be nonnegative".into()));
    }
    let dt_max = solver.dt_max();
    let dt = cfg.dt.unwrap_or(dt_max);
    if !(dt > 0.0) || dt > dt_max * (1.0 + 1e-9) {
        return Err(Error::Stability { dt, dt_max });
    }
    let mut stops: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .cloned()
        .filter(|&t| t > 0.0 && t < cfg.t_final)
        .collect();
    stops.push(cfg.t_final);
    stops.sort_by(f64::total_cmp);
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut st = solver.initial_state(cfg)?;
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        f: st.f.clone(),
    }];
    let mut monitors = vec![solver.monitor(&st)?];
    let mut steps = 0;
    for &stop in &stops {
        let span = stop - st.t;
        if span <= 0.0 {
            continue;
        }
        let n = (span / dt).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            solver.step(&mut st, h)?;
            steps += 1;
        }
        st.t = stop;
        snapshots.push(Snapshot {
            t: stop,
            f: st.f.clone(),
        });
        monitors.push(solver.monitor(&st)?);
    }
    Ok(Trajectory {
        snapshots,
        monitors,
        clamp_total: st.clamp_total,
        dt,
        dt_max,
        steps,
    })
}

const MAGIC: &[u8; 8] = b"BFDSNAP1";

/// Flat binary snapshot: magic, `n_x`, `n_v`, `d` as little-endian u64, `t`
/// as f64, then the row-major values as little-endian f64.
pub fn write_snapshot(
    path: &Path,
    n_x: usize,
    n_v: usize,
    d: usize,
    snap: &Snapshot,
) -> Result<()> {
    if snap.f.len() != n_x * n_v {
        return Err(Error::Structural(
            "snapshot size does not match its header".into(),
        ));
    }
    let mut out = Vec::with_capacity(40 + 8 * snap.f.len());
    out.extend_from_slice(MAGIC);
    for v in [n_x as u64, n_v as u64, d as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&snap.t.to_le_bytes());
    for x in &snap.f {
        out.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a snapshot back as `(n_x, n_v, d, snapshot)`.
pub fn read_snapshot(path: &Path) -> Result<(usize, usize, usize, Snapshot)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 40 || &buf[..8] != MAGIC {
        return Err(Error::Structural("not a snapshot file".into()));
    }
    let word = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let (nx, nv, d) = (word(8) as usize, word(16) as usize, word(24) as usize);
    let t = f64::from_le_bytes(buf[32..40].try_into().unwrap());
    if buf.len() != 40 + 8 * nx * nv {
        return Err(Error::Structural(
            "snapshot length does not match its header".into(),
        ));
    }
    let f = buf[40..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((nx, nv, d, Snapshot { t, f }))
}
