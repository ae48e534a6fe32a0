//! Run configuration (TOML). Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use recursub::figures::FigureKind;
use recursub::{ModelSpec, PriorSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Tune,
    Fit,
    Lpds,
    Diagnostics,
    FigureData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Tune => "tune",
            Command::Fit => "fit",
            Command::Lpds => "lpds",
            Command::Diagnostics => "diagnostics",
            Command::FigureData => "figure-data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    #[default]
    McmcSub,
    McmcFull,
    VbSub,
    VbFull,
}

impl Engine {
    pub fn is_mcmc(self) -> bool {
        matches!(self, Engine::McmcSub | Engine::McmcFull)
    }

    pub fn is_subsampled(self) -> bool {
        matches!(self, Engine::McmcSub | Engine::VbSub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    /// Random walk on φ.
    Phi,
    /// Random walk in coordinates where every point is stationary.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; when present it must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub vb: VbConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<FigureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_column")]
    pub column: String,
    /// The column holds prices; returns are their log differences.
    #[serde(default)]
    pub log_diff: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
    /// Divide by the training-sample SD. Defaults to true for CSV input, false for simulated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
}

fn default_column() -> String {
    "r".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_len: usize,
    pub theta: Vec<f64>,
    /// Extra observations simulated after the training block and held out for scoring.
    #[serde(default)]
    pub test_len: usize,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKindConfig {
    #[default]
    Tpd,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKindConfig,
    pub t_star: usize,
    pub b: f64,
    pub r_max: f64,
    /// Defaults to 2 for MCMC (the variance estimate needs two draws) and 1 for VB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_floor: Option<usize>,
    pub grid_points: usize,
    pub pilot_length: usize,
    pub n_tune: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            kind: SchemeKindConfig::Tpd,
            t_star: 1000,
            b: 100.0,
            r_max: 100.0,
            m_floor: None,
            grid_points: 60,
            pilot_length: 100,
            n_tune: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub engine: Engine,
    /// Defaults to 12 000 for MCMC and 5 000 for VB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub burn_in: usize,
    pub n_rep: usize,
    pub seed: u64,
    pub n_starts: usize,
    pub initial_scale: f64,
    pub adapt_interval: usize,
    /// Defaults to stationary for subsampling chains and φ for full-data chains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalKind>,
    /// Draws retained for the predictive score.
    pub lpds_draws: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            engine: Engine::McmcSub,
            iterations: None,
            burn_in: 2000,
            n_rep: 1,
            seed: 0,
            n_starts: 5,
            initial_scale: 0.3,
            adapt_interval: 100,
            proposal: None,
            lpds_draws: 100,
        }
    }
}

impl RunSettings {
    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(if self.engine.is_mcmc() { 12_000 } else { 5_000 })
    }

    pub fn proposal(&self) -> ProposalKind {
        self.proposal.unwrap_or(if self.engine == Engine::McmcSub { ProposalKind::Stationary } else { ProposalKind::Phi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbConfig {
    pub learning_rate: f64,
    pub polyak_window: usize,
    pub monitor_interval: usize,
    pub monitor_draws: usize,
    pub freeze_b: bool,
}

impl Default for VbConfig {
    fn default() -> Self {
        let d = recursub::inference::VbSettings::default();
        VbConfig {
            learning_rate: d.learning_rate,
            polyak_window: d.polyak_window,
            monitor_interval: d.monitor_interval,
            monitor_draws: d.monitor_draws,
            freeze_b: d.freeze_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureConfig {
    pub kind: FigureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_len: Option<usize>,
    #[serde(default = "default_t_star")]
    pub t_star: usize,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "FigureConfig::default_cs")]
    pub cs: Vec<f64>,
    #[serde(default = "FigureConfig::default_ms")]
    pub ms: Vec<usize>,
    /// Target tail mass for tpd_profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Fit run directories whose draws feed umax_trace and kde_inputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<PathBuf>,
}

fn default_t_star() -> usize {
    1000
}
fn default_b() -> f64 {
    100.0
}
impl FigureConfig {
    pub fn default_cs() -> Vec<f64> {
        vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
    }

    pub fn default_ms() -> Vec<usize> {
        vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    /// Reads a TOML (or, by extension, JSON) config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| config_error(e.to_string()))?
        } else {
            Self::from_toml(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            for p in [&mut d.csv, &mut d.test_csv].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(f) = cfg.figure.as_mut() {
            for p in f.runs.iter_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        self.model.ok_or_else(|| config_error("missing [model] section"))
    }

    pub fn data(&self) -> Result<&DataConfig, CliError> {
        self.data.as_ref().ok_or_else(|| config_error("missing [data] section"))
    }

    pub fn m_floor(&self) -> usize {
        self.scheme.m_floor.unwrap_or(if self.run.engine.is_mcmc() { 2 } else { 1 })
    }

    /// Everything that can be checked without touching data.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(config_error(format!("config is for '{}' but '{}' was invoked", c.name(), command.name())));
            }
        }
        let needs_model = matches!(command, Command::Simulate | Command::Tune | Command::Fit);
        if needs_model {
            let spec = self.model()?;
            spec.validate().map_err(|e| config_error(e.to_string()))?;
            let data = self.data()?;
            match (&data.csv, &data.simulate) {
                (Some(_), Some(_)) => return Err(config_error("[data] takes either csv or simulate, not both")),
                (None, None) => return Err(config_error("[data] needs csv or simulate")),
                (None, Some(sim)) => {
                    if sim.theta.len() != spec.dim() {
                        return Err(config_error(format!("simulate.theta has {} values, the model needs {}", sim.theta.len(), spec.dim())));
                    }
                    if sim.t_len < 2 {
                        return Err(config_error("simulate.t_len must be at least 2"));
                    }
                    if data.test_csv.is_some() {
                        return Err(config_error("test_csv cannot be combined with simulate; use simulate.test_len"));
                    }
                }
                (Some(_), None) => {}
            }
            if command == Command::Simulate && data.simulate.is_none() {
                return Err(config_error("simulate needs a [data.simulate] block"));
            }
        }
        if matches!(command, Command::Tune | Command::Fit) {
            let r = &self.run;
            let s = &self.scheme;
            if r.n_rep == 0 || r.n_starts == 0 {
                return Err(config_error("n_rep and n_starts must be positive"));
            }
            if r.engine.is_mcmc() && r.burn_in >= r.iterations() {
                return Err(config_error("burn_in must be below iterations"));
            }
            if !(r.initial_scale > 0.0) {
                return Err(config_error("initial_scale must be positive"));
            }
            if !(s.r_max >= 1.0) {
                return Err(config_error("r_max must be at least 1"));
            }
            if !(1..=2).contains(&self.m_floor()) {
                return Err(config_error("m_floor must be 1 or 2"));
            }
            if r.engine == Engine::McmcSub && self.m_floor() < 2 {
                return Err(config_error("subsampling MCMC needs m_floor = 2 for the variance estimate"));
            }
            if s.t_star < 2 || !(s.b >= 0.0) || s.grid_points < 2 || s.pilot_length == 0 || s.n_tune == 0 {
                return Err(config_error("scheme needs t_star >= 2, b >= 0, grid_points >= 2 and positive pilot sizes"));
            }
            if r.lpds_draws < 2 {
                return Err(config_error("lpds_draws must be at least 2"));
            }
            if !(self.vb.learning_rate > 0.0) {
                return Err(config_error("vb.learning_rate must be positive"));
            }
        }
        if command == Command::FigureData {
            let f = self.figure.as_ref().ok_or_else(|| config_error("figure-data needs a [figure] section"))?;
            match f.kind {
                FigureKind::UmaxVsM | FigureKind::CostHeatmap | FigureKind::TpdProfile => {
                    let t = f.t_len.ok_or_else(|| config_error("figure.t_len is required for this kind"))?;
                    if f.t_star < 2 || f.t_star >= t {
                        return Err(config_error("figure needs 2 <= t_star < t_len"));
                    }
                    if f.kind == FigureKind::TpdProfile && f.epsilon.is_none() {
                        return Err(config_error("tpd_profile needs figure.epsilon"));
                    }
                    if f.cs.iter().any(|&c| !(c > 0.0 && c <= 1.0)) || f.ms.iter().any(|&m| m == 0) {
                        return Err(config_error("figure.cs must lie in (0, 1] and figure.ms must be positive"));
                    }
                }
                FigureKind::UmaxTrace | FigureKind::KdeInputs => {
                    if f.runs.is_empty() {
                        return Err(config_error("this figure kind reads fit runs; set figure.runs"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[model]
family = "garch"
p = 1
q = 1
error = "normal"

[data.simulate]
t_len = 500
theta = [0.0, 0.1, 0.1, 0.8]

[run]
engine = "mcmc-full"
iterations = 300
burn_in = 100
"#;

    #[test]
    fn parses_and_validates() {
        let c = RunConfig::from_toml(EXAMPLE).unwrap();
        c.validate(Command::Fit).unwrap();
        assert_eq!(c.run.iterations(), 300);
        assert_eq!(c.run.proposal(), ProposalKind::Phi);
        assert_eq!(c.m_floor(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = EXAMPLE.replace("burn_in = 100", "burn_in = 100\nburnin = 5");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad = EXAMPLE.replace("p = 1", "p = 1\norder = 3");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn theta_length_is_checked() {
        let bad = EXAMPLE.replace("[0.0, 0.1, 0.1, 0.8]", "[0.0, 0.1, 0.8]");
        let c = RunConfig::from_toml(&bad).unwrap();
        assert!(c.validate(Command::Fit).is_err());
    }

    #[test]
    fn command_must_match() {
        let c = RunConfig::from_toml(&format!("command = \"tune\"\n{EXAMPLE}")).unwrap();
        assert!(c.validate(Command::Fit).is_err());
        c.validate(Command::Tune).unwrap();
    }
}
