//! Run configuration. Every section has defaults, and the manifest written
//! next to the outputs is the fully populated config, so it can be fed back
//! with `--config`.

use anyhow::{bail, Context};
use bfd_core::collision::CrossSection;
use bfd_core::hydro_limit::SweepConfig;
use bfd_core::kinetic_solver::{
    InitialCondition, RegimeKind, ScalingRegime, SimulationConfig, Transport,
};
use bfd_core::oracles::SuiteConfig;
use bfd_core::par::Exec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Prefix of environment overrides: `BFD_REGIME__EPS=0.1` sets `regime.eps`.
pub const ENV_PREFIX: &str = "BFD_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub physics: Physics,
    pub grid: Grid,
    pub regime: Regime,
    pub cross_section: CrossSectionSpec,
    pub integrator: Integrator,
    pub initial: Initial,
    pub sweep: Sweep,
    pub wave: Wave,
    pub verify: Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub d: usize,
    pub r: f64,
    pub delta: f64,
    /// Freeze the Pauli factors to 1.
    pub classical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n_v: usize,
    pub v_max: f64,
    pub sphere_order: usize,
    pub n_x: usize,
    pub length: f64,
    pub u_bins: usize,
    pub transport: Transport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regime {
    pub eps: f64,
    pub kappa: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSectionSpec {
    /// Only `constant` is configurable from a file.
    pub kind: String,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Integrator {
    /// Fixed step; 0 picks the stability bound.
    pub dt: f64,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Initial {
    /// `equilibrium`, `shell-bump`, `random` or `wave`.
    pub kind: String,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub rho: f64,
    pub u: Vec<f64>,
    pub e: f64,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub eps: Vec<f64>,
    pub t_compare: f64,
    pub lambda: f64,
    pub n_snapshots: usize,
    /// Velocity box half-width is `max(2R, sqrt(R^2 + layers eps^tau))`.
    pub layers: f64,
    /// Step as a fraction of the stability bound when `integrator.dt = 0`.
    pub dt_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Wave {
    pub mode: usize,
    /// Also run the kinetic solver and compare its fitted fields.
    pub compare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Verify {
    pub young_samples: usize,
    pub symmetry_samples: usize,
    pub symmetry_polynomials: usize,
    pub attenuation_taus: Vec<f64>,
    pub attenuation_eps: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: "runs".into(),
            physics: Physics::default(),
            grid: Grid::default(),
            regime: Regime::default(),
            cross_section: CrossSectionSpec::default(),
            integrator: Integrator::default(),
            initial: Initial::default(),
            sweep: Sweep::default(),
            wave: Wave::default(),
            verify: Verify::default(),
        }
    }
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            d: 3,
            r: 1.0,
            delta: 1.0,
            classical: false,
        }
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n_v: 8,
            v_max: 2.5,
            sphere_order: 2,
            n_x: 4,
            length: 1.0,
            u_bins: 16,
            transport: Transport::Spectral,
        }
    }
}

impl Default for Regime {
    fn default() -> Self {
        Self {
            eps: 0.2,
            kappa: 1.2,
            tau: 0.5,
            gamma: 0.5,
            alpha: 3.0,
        }
    }
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        Self {
            kind: "constant".into(),
            amplitude: 1.0,
        }
    }
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            dt: 0.0,
            t_final: 0.5,
            snapshots: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl Default for Initial {
    fn default() -> Self {
        Self {
            kind: "wave".into(),
            amplitude: 0.5,
            center: 0.0,
            width: 1.0,
            rho: 0.2,
            u: vec![0.1, 0.0, 0.0],
            e: 0.1,
            mode: 1,
        }
    }
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05],
            t_compare: 0.5,
            lambda: 10.0,
            n_snapshots: 10,
            layers: 16.0,
            dt_fraction: 0.8,
        }
    }
}

impl Default for Wave {
    fn default() -> Self {
        Self {
            mode: 1,
            compare: false,
        }
    }
}

impl Default for Verify {
    fn default() -> Self {
        let s = SuiteConfig::default();
        Self {
            young_samples: s.young_samples,
            symmetry_samples: s.symmetry_samples,
            symmetry_polynomials: s.symmetry_polynomials,
            attenuation_taus: s.attenuation_taus,
            attenuation_eps: s.attenuation_eps,
        }
    }
}

/// A config problem; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Applies `BFD_SECTION__KEY=value` overrides. Values are parsed as TOML
    /// literals and fall back to plain strings.
    pub fn with_env<I>(self, vars: I) -> anyhow::Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        if vars.is_empty() {
            return Ok(self);
        }
        vars.sort();
        let mut root = toml::Table::try_from(&self).context("serializing config")?;
        for (key, raw) in vars {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(|s| s.to_ascii_lowercase())
                .collect();
            let value = parse_literal(&raw);
            let (last, parents) = path.split_last().expect("split yields one item");
            let mut table = &mut root;
            for p in parents {
                table = table
                    .get_mut(p)
                    .and_then(|v| v.as_table_mut())
                    .ok_or_else(|| config_err(format!("{key}: no config section `{p}`")))?;
            }
            if !table.contains_key(last) {
                return Err(config_err(format!("{key}: no config key `{}`", path.join("."))));
            }
            table.insert(last.clone(), value);
        }
        root.try_into()
            .map_err(|e| config_err(format!("invalid environment override: {e}")))
    }

    /// Fully populated TOML; a valid config on its own.
    pub fn manifest(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short content hash of the subcommand and the manifest, leaving out
    /// the output root so a run keeps its id when moved.
    pub fn run_id(&self, command: &str) -> String {
        let mut c = self.clone();
        c.out.clear();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(c.manifest().as_bytes());
        hex12(&h.finalize())
    }

    pub fn validate(&self) -> anyhow::Result<RegimeKind> {
        let p = &self.physics;
        if p.d == 2 {
            bail!(config_err(
                "d = 2 is fundamentally different (logarithmic divergences on the Fermi \
                 surface) and outside the scope of this runner; use d >= 3"
            ));
        }
        if p.d < 3 {
            bail!(config_err(format!("d = {} is not supported; need d >= 3", p.d)));
        }
        if self.cross_section.kind != "constant" {
            bail!(config_err(format!(
                "cross_section.kind = {:?}; only \"constant\" can be configured",
                self.cross_section.kind
            )));
        }
        if self.initial.u.len() != p.d {
            bail!(config_err(format!(
                "initial.u has {} components, d = {}",
                self.initial.u.len(),
                p.d
            )));
        }
        if self.grid.u_bins == 0 {
            bail!(config_err("grid.u_bins must be positive"));
        }
        let kind = self.scaling().classify().map_err(|e| config_err(e.to_string()))?;
        for &eps in &self.sweep.eps {
            let mut s = self.scaling();
            s.eps = eps;
            s.classify().map_err(|e| config_err(format!("sweep: {e}")))?;
        }
        self.initial_condition()?;
        Ok(kind)
    }

    pub fn scaling(&self) -> ScalingRegime {
        let r = &self.regime;
        ScalingRegime {
            eps: r.eps,
            kappa: r.kappa,
            tau: r.tau,
            gamma: r.gamma,
            alpha: r.alpha,
        }
    }

    pub fn initial_condition(&self) -> anyhow::Result<InitialCondition> {
        let i = &self.initial;
        Ok(match i.kind.as_str() {
            "equilibrium" => InitialCondition::Equilibrium,
            "shell-bump" => InitialCondition::ShellBump {
                amplitude: i.amplitude,
                center: i.center,
                width: i.width,
            },
            "random" => InitialCondition::Random {
                amplitude: i.amplitude,
            },
            "wave" => InitialCondition::Wave {
                rho: i.rho,
                u: i.u.clone(),
                e: i.e,
                mode: i.mode,
            },
            k => bail!(config_err(format!(
                "initial.kind = {k:?}; expected equilibrium, shell-bump, random or wave"
            ))),
        })
    }

    pub fn simulation(&self, exec: Exec) -> anyhow::Result<SimulationConfig> {
        let g = &self.grid;
        let cross_section = CrossSection::constant(self.cross_section.amplitude)
            .map_err(|e| config_err(e.to_string()))?;
        Ok(SimulationConfig {
            d: self.physics.d,
            r: self.physics.r,
            delta: self.physics.delta,
            n_v: g.n_v,
            v_max: g.v_max,
            sphere_order: g.sphere_order,
            n_x: g.n_x,
            length: g.length,
            transport: g.transport,
            regime: self.scaling(),
            cross_section,
            classical: self.physics.classical,
            dt: (self.integrator.dt > 0.0).then_some(self.integrator.dt),
            t_final: self.integrator.t_final,
            snapshot_times: self.integrator.snapshots.clone(),
            initial: self.initial_condition()?,
            seed: self.seed,
            exec,
        })
    }

    pub fn sweep_config(&self, exec: Exec) -> anyhow::Result<SweepConfig> {
        let mut template = self.simulation(exec)?;
        template.t_final = self.sweep.t_compare.max(template.t_final);
        Ok(SweepConfig {
            template,
            eps_list: self.sweep.eps.clone(),
            t_compare: self.sweep.t_compare,
            lambda: self.sweep.lambda,
            n_snapshots: self.sweep.n_snapshots,
            layers: self.sweep.layers,
            u_bins: self.grid.u_bins,
            dt_fraction: self.sweep.dt_fraction,
        })
    }

    pub fn suite(&self) -> SuiteConfig {
        let v = &self.verify;
        SuiteConfig {
            seed: self.seed,
            young_samples: v.young_samples,
            symmetry_samples: v.symmetry_samples,
            symmetry_polynomials: v.symmetry_polynomials,
            symmetry_d: self.physics.d,
            r: self.physics.r,
            attenuation_taus: v.attenuation_taus.clone(),
            attenuation_eps: v.attenuation_eps.clone(),
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn hex12(bytes: &[u8]) -> String {
    bytes[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Walks an error chain looking for a config problem.
pub fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<ConfigError>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut c = RunConfig::default();
        c.regime.eps = 0.05;
        c.sweep.eps = vec![0.3, 0.2];
        let back = RunConfig::from_toml(&c.manifest()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.run_id("simulate"), c.run_id("simulate"));
        assert_ne!(c.run_id("simulate"), c.run_id("wave"));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[grid]\nn_v = 10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.n_v, 10);
        assert_eq!(c.regime, Regime::default());
    }

    #[test]
    fn env_overrides_parse_literals() {
        let vars = [
            ("BFD_REGIME__EPS".to_string(), "0.1".to_string()),
            ("BFD_SWEEP__EPS".to_string(), "[0.4, 0.2]".to_string()),
            ("BFD_INITIAL__KIND".to_string(), "random".to_string()),
            ("BFD_SEED".to_string(), "11".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = RunConfig::default().with_env(vars).unwrap();
        assert_eq!(c.regime.eps, 0.1);
        assert_eq!(c.sweep.eps, vec![0.4, 0.2]);
        assert_eq!(c.initial.kind, "random");
        assert_eq!(c.seed, 11);
    }

    #[test]
    fn bad_env_key_is_a_config_error() {
        let e = RunConfig::default()
            .with_env([("BFD_REGIME__EPSILON".to_string(), "0.1".to_string())])
            .unwrap_err();
        assert!(is_config_error(&e));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert_eq!(c.validate().unwrap(), RegimeKind::SpectrumTheorem);
        c.physics.d = 2;
        let e = c.validate().unwrap_err();
        assert!(is_config_error(&e));
        assert!(e.to_string().contains("fundamentally different"));
        let mut c = RunConfig::default();
        c.regime.kappa = 0.9;
        assert!(c.validate().unwrap_err().to_string().contains("kappa > 2 tau"));
        let mut c = RunConfig::default();
        c.regime.kappa = 1.6;
        assert_eq!(c.validate().unwrap(), RegimeKind::MainTheorem);
    }
}
