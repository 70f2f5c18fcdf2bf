//! Subcommand bodies. Each writes its CSVs into a directory named after the
//! command and the run id; every file starts with the config echo as `#`
//! comment lines.

use crate::config::RunConfig;
use anyhow::Context;
use bfd_core::hydro_limit::{
    conservation_defect, dilate, equilibrium_fit, limit_sweep as run_sweep, strictly_decreasing,
    DiagnosticsRow, Fluctuation, ShellContext,
};
use bfd_core::kinetic_solver::{simulate as run_kinetic, MonitorRow};
use bfd_core::oracles::{
    log_log_slope, optimality_family, optimality_limit_ratio, optimality_reports, run_suite,
    OracleReport,
};
use bfd_core::par::Exec;
use bfd_core::wave_solver::{
    compare_with_kinetic, fourier_solve, measured_phase_speed, plane_wave, plane_wave_relations,
    wave_number,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Where a run writes, plus what it found wrong.
pub struct Outcome {
    pub dir: PathBuf,
    pub failed: Vec<String>,
}

pub struct Artifacts {
    pub dir: PathBuf,
    echo: String,
}

impl Artifacts {
    pub fn create(cfg: &RunConfig, command: &str) -> anyhow::Result<Self> {
        let id = cfg.run_id(command);
        let dir = Path::new(&cfg.out).join(format!("{command}-{id}"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = cfg.manifest();
        std::fs::write(dir.join("manifest.toml"), &manifest)?;
        let mut echo = format!("# bfd {command} run {id}\n");
        for line in manifest.lines().filter(|l| !l.is_empty()) {
            echo.push_str("# ");
            echo.push_str(line);
            echo.push('\n');
        }
        Ok(Self { dir, echo })
    }

    pub fn csv(&self, name: &str, header: &str, rows: &[String]) -> anyhow::Result<()> {
        let mut s = self.echo.clone();
        s.push_str(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        std::fs::write(self.dir.join(name), s).with_context(|| format!("writing {name}"))
    }
}

const CHECK_HEADER: &str = "check,value,limit,pass";

fn check(rows: &mut Vec<String>, failed: &mut Vec<String>, name: &str, value: f64, limit: f64, pass: bool) {
    rows.push(format!("{name},{value:.12e},{limit:.12e},{pass}"));
    if !pass {
        failed.push(format!("{name}: {value:e} (limit {limit:e})"));
    }
}

fn oracle_rows(reports: &[OracleReport]) -> (Vec<String>, Vec<String>) {
    let rows = reports.iter().map(|r| r.csv_row()).collect();
    let failed = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}: computed {:e}, reference {:e}", r.name, r.computed, r.reference))
        .collect();
    (rows, failed)
}

fn fields_rows(t: f64, m: &bfd_core::hydro_limit::MacroFields, length: f64) -> Vec<String> {
    m.csv(length)
        .lines()
        .skip(1)
        .map(|l| format!("{t:.12e},{l}"))
        .collect()
}

fn fields_header(d: usize) -> String {
    let mut h = String::from("t,x,rho");
    for a in 1..=d {
        let _ = write!(h, ",U_{a}");
    }
    h.push_str(",E");
    h
}

pub fn simulate(cfg: &RunConfig, art: &Artifacts, exec: Exec) -> anyhow::Result<Outcome> {
    let sim = cfg.simulation(exec)?;
    let (solver, traj) = run_kinetic(&sim)?;
    let d = sim.d;
    let mons: Vec<String> = traj.monitors.iter().map(MonitorRow::csv_row).collect();
    art.csv("monitors.csv", &MonitorRow::csv_header(d), &mons)?;
    let ctx = ShellContext::from_solver(&solver);
    let mut fields = Vec::new();
    let mut fits = Vec::new();
    for snap in &traj.snapshots {
        let g = Fluctuation::from_field(&ctx, &snap.f)?;
        let (m, res) = equilibrium_fit(&dilate(&ctx, &g, ctx.u_max()))?;
        fields.extend(fields_rows(snap.t, &m, sim.length));
        fits.push(format!("{:.12e},{res:.12e}", snap.t));
    }
    art.csv("fields.csv", &fields_header(d), &fields)?;
    art.csv("fit.csv", "t,fit_residual", &fits)?;

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let h: Vec<f64> = traj.monitors.iter().map(|m| m.report.h).collect();
    let rise = h.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * h.first().map_or(1.0, |x| x.abs().max(1.0));
    check(&mut rows, &mut failed, "entropy_nonincreasing", rise.max(0.0), tol, !(rise > tol));
    let nv = solver.n_v();
    let f_l1: f64 = traj.snapshots[0]
        .f
        .iter()
        .enumerate()
        .map(|(i, x)| x.abs() * solver.grid.weights[i % nv])
        .sum::<f64>()
        * solver.dx();
    let limit = 1e-8 * f_l1;
    check(&mut rows, &mut failed, "pauli_clamp", traj.clamp_total, limit, traj.clamp_total <= limit);
    art.csv("checks.csv", CHECK_HEADER, &rows)?;
    Ok(art_done(art, failed))
}

fn art_done(art: &Artifacts, failed: Vec<String>) -> Outcome {
    Outcome {
        dir: art.dir.clone(),
        failed,
    }
}

pub fn limit_sweep(cfg: &RunConfig, art: &Artifacts, exec: Exec) -> anyhow::Result<Outcome> {
    let sc = cfg.sweep_config(exec)?;
    let points = run_sweep(&sc)?;
    let d = cfg.physics.d;
    let length = cfg.grid.length;
    let mut diag = Vec::new();
    let mut comp = Vec::new();
    let mut fields = Vec::new();
    let mut trend = Vec::new();
    let mut mons = Vec::new();
    for p in &points {
        diag.extend(p.diagnostics.iter().map(DiagnosticsRow::csv_row));
        for c in &p.comparison {
            comp.push(format!(
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                p.eps, c.t, c.rho_l2, c.u_l2, c.total_l2, c.relative
            ));
        }
        for (t, m) in &p.fields {
            fields.extend(fields_rows(*t, m, length).into_iter().map(|r| format!("{:.12e},{r}", p.eps)));
        }
        mons.extend(p.monitors.iter().map(|m| format!("{:.12e},{}", p.eps, m.csv_row())));
        trend.push(format!(
            "{:.12e},{},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            p.eps,
            p.regime.name(),
            p.v_max,
            p.dt,
            p.steps,
            p.concentration,
            p.fit_residual,
            p.wave_distance,
            p.energy_drift,
            p.defect_time_l1,
            p.c_in,
            p.shell_bound_ratio,
            p.clamp_total
        ));
    }
    art.csv("diagnostics.csv", DiagnosticsRow::CSV_HEADER, &diag)?;
    art.csv("comparison.csv", "eps,t,rho_l2,u_l2,total_l2,relative", &comp)?;
    art.csv("fields.csv", &format!("eps,{}", fields_header(d)), &fields)?;
    art.csv("monitors.csv", &format!("eps,{}", MonitorRow::csv_header(d)), &mons)?;
    art.csv(
        "trends.csv",
        "eps,regime,v_max,dt,steps,concentration,fit_residual,wave_distance,energy_drift,defect_time_l1,c_in,shell_bound_ratio,clamp_total",
        &trend,
    )?;

    // checks follow the sweep order, which is meant to be decreasing in eps
    let col = |f: fn(&bfd_core::hydro_limit::SweepPoint) -> f64| points.iter().map(f).collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (name, v) in [
        ("concentration_decreasing", col(|p| p.concentration)),
        ("fit_residual_decreasing", col(|p| p.fit_residual)),
        ("wave_distance_decreasing", col(|p| p.wave_distance)),
        ("energy_drift_decreasing", col(|p| p.energy_drift)),
        ("defect_decreasing", col(|p| p.defect_time_l1)),
    ] {
        let ok = strictly_decreasing(&v);
        let last = v.last().copied().unwrap_or(f64::NAN);
        check(&mut rows, &mut failed, name, last, v.first().copied().unwrap_or(f64::NAN), ok);
    }
    if points.len() >= 2 {
        let eps: Vec<f64> = points.iter().map(|p| p.eps).collect();
        let slope = log_log_slope(&eps, &col(|p| p.defect_time_l1));
        let target = 1.0 - (cfg.regime.kappa + cfg.regime.tau) / 2.0;
        check(&mut rows, &mut failed, "defect_exponent", slope, target, (slope - target).abs() <= 0.3);
    }
    let worst = points.iter().map(|p| p.shell_bound_ratio).fold(0.0, f64::max);
    check(&mut rows, &mut failed, "shell_l2_bound", worst, 1.1, worst <= 1.1);
    let clamp = points.iter().map(|p| p.clamp_total / p.f_l1).fold(0.0, f64::max);
    check(&mut rows, &mut failed, "pauli_clamp_relative", clamp, 1e-8, clamp <= 1e-8);
    art.csv("checks.csv", CHECK_HEADER, &rows)?;

    let mut prof = Vec::new();
    for p in &points {
        let sp = &p.shell_profile;
        let (nu, no) = (sp.u.len(), sp.n_omega);
        for (i, v) in sp.values.iter().enumerate() {
            let (c, b) = (i / (nu * no), i % (nu * no));
            prof.push(format!(
                "{:.12e},{c},{:.12e},{},{v:.12e},{}",
                p.eps,
                sp.u[b / no],
                b % no,
                sp.population[b]
            ));
        }
    }
    art.csv("shell_profile.csv", "eps,cell,u,omega_index,g_tilde,population", &prof)?;
    Ok(art_done(art, failed))
}

pub fn wave(cfg: &RunConfig, art: &Artifacts, exec: Exec) -> anyhow::Result<Outcome> {
    let p = &cfg.physics;
    let g = &cfg.grid;
    let mode = cfg.wave.mode;
    let init = plane_wave(p.r, p.d, g.length, g.n_x, mode);
    let mut fields = fields_rows(0.0, &init, g.length);
    for &t in &cfg.integrator.snapshots {
        let m = fourier_solve(&init, p.r, p.d, g.length, t)?;
        fields.extend(fields_rows(t, &m, g.length));
    }
    art.csv("fields.csv", &fields_header(p.d), &fields)?;

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let c = p.r / (p.d as f64).sqrt();
    let speed = measured_phase_speed(p.r, p.d, g.length, g.n_x, mode)?;
    check(&mut rows, &mut failed, "phase_speed", speed, c, (speed - c).abs() <= 1e-12 * c);
    let xi = wave_number(mode, g.n_x, g.length);
    let u0 = (p.d as f64).sqrt() / p.r;
    // eigen-relations with the measured frequency
    let res = plane_wave_relations(1.0, u0, -speed * xi, xi, p.r, p.d);
    for (k, r) in res.iter().enumerate() {
        let scale = (xi * xi).max(1.0);
        check(&mut rows, &mut failed, &format!("eigen_relation_{}", k + 1), r.abs(), 1e-12 * scale, r.abs() <= 1e-12 * scale);
    }
    if cfg.wave.compare {
        let sim = cfg.simulation(exec)?;
        let (solver, traj) = run_kinetic(&sim)?;
        let ctx = ShellContext::from_solver(&solver);
        let mut series = Vec::new();
        for snap in &traj.snapshots {
            let gf = Fluctuation::from_field(&ctx, &snap.f)?;
            series.push((snap.t, equilibrium_fit(&dilate(&ctx, &gf, ctx.u_max()))?.0));
        }
        let comp: Vec<String> = compare_with_kinetic(&series, p.r, p.d, g.length)?
            .iter()
            .map(|c| format!("{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", c.t, c.rho_l2, c.u_l2, c.total_l2, c.relative))
            .collect();
        art.csv("comparison.csv", "t,rho_l2,u_l2,total_l2,relative", &comp)?;
    }
    art.csv("checks.csv", CHECK_HEADER, &rows)?;
    Ok(art_done(art, failed))
}

pub fn verify(cfg: &RunConfig, art: &Artifacts, exec: Exec) -> anyhow::Result<Outcome> {
    let reports = run_suite(&cfg.suite(), exec);
    let (rows, failed) = oracle_rows(&reports);
    art.csv("oracles.csv", OracleReport::CSV_HEADER, &rows)?;
    Ok(art_done(art, failed))
}

pub fn optimality(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let p = &cfg.physics;
    let mut curve = Vec::new();
    for tau in [1.0, cfg.regime.tau] {
        for a in [2.0, 5.0, 10.0, 20.0, 40.0] {
            let lim = optimality_limit_ratio(a, tau)?;
            for eps in [1e-2, 1e-3, 1e-4] {
                let Ok(o) = optimality_family(eps, a, tau, p.d, p.r, p.delta, 1.0) else {
                    continue;
                };
                curve.push(format!(
                    "{tau:.6e},{a:.6e},{eps:.6e},{:.12e},{:.12e},{:.12e},{lim:.12e}",
                    o.scaled_entropy, o.limit_mass, o.ratio
                ));
            }
        }
    }
    art.csv("families.csv", "tau,A,eps,scaled_entropy,limit_mass,ratio,limit_ratio", &curve)?;
    let (rows, failed) = oracle_rows(&optimality_reports());
    art.csv("oracles.csv", OracleReport::CSV_HEADER, &rows)?;
    Ok(art_done(art, failed))
}

pub fn defects(cfg: &RunConfig, art: &Artifacts, exec: Exec) -> anyhow::Result<Outcome> {
    let sim = cfg.simulation(exec)?;
    let (solver, traj) = run_kinetic(&sim)?;
    let ctx = ShellContext::from_solver(&solver);
    let d = sim.d;
    let dx = ctx.dx();
    let mut cells = Vec::new();
    let mut totals = Vec::new();
    let mut failed = Vec::new();
    for snap in &traj.snapshots {
        let rep = conservation_defect(&ctx, &snap.f, &solver.cache, solver.stats, exec)?;
        for c in 0..ctx.n_x {
            let norm = |v: &[f64]| v[c * d..(c + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt();
            cells.push(format!(
                "{:.12e},{c},{:.12e},{:.12e},{:.12e},{:.12e}",
                snap.t,
                rep.defect[c],
                norm(&rep.flux),
                norm(&rep.flux1),
                norm(&rep.flux2)
            ));
        }
        let (f, f1, f2) = rep.flux_l1(d, dx);
        let dl1 = rep.defect_l1(dx);
        if !dl1.is_finite() {
            failed.push(format!("non-finite defect at t = {}", snap.t));
        }
        totals.push(format!("{:.12e},{dl1:.12e},{f:.12e},{f1:.12e},{f2:.12e}", snap.t));
    }
    art.csv("defect_cells.csv", "t,cell,defect,flux,flux1,flux2", &cells)?;
    art.csv("defects.csv", "t,defect_l1,flux_l1,flux1_l1,flux2_l1", &totals)?;
    Ok(art_done(art, failed))
}
