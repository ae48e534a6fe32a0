//! Run-directory files: manifest, draws, diagnostics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use recursub::diagnostics::{DiagnosticsReport, LpdsResult};
use recursub::inference::ElboPoint;
use recursub::tuning::Calibration;
use recursub::TuningResult;

use crate::config::{Engine, ProposalKind, RunConfig};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepare: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<u64>,
    /// Seed of the draws taken from a fitted variational family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Divisor applied to the raw returns (1 when not rescaled).
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_density: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub engine: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalKind>,
    /// Coordinates of the draws file.
    pub draws_space: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub t_len: usize,
    /// Recursion steps actually executed by the chain or optimiser.
    pub recursion_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLedger {
    pub prepare: f64,
    pub tuning: f64,
    pub control_variates: f64,
    pub sampling: f64,
    pub total: f64,
}

impl TimingLedger {
    pub fn new(prepare: f64, tuning: f64, control_variates: f64, sampling: f64) -> Self {
        TimingLedger { prepare, tuning, control_variates, sampling, total: prepare + tuning + control_variates + sampling }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub crate_version: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parameter_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingLedger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_fraction: Option<f64>,
    /// Recursion steps spent on pilot, tuning and the control-variate cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead_steps: Option<usize>,
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Sub-directories holding one replicate each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicates: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Seeds) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            seeds,
            data: None,
            parameter_names: Vec::new(),
            map: None,
            run: None,
            tuning: None,
            calibration: None,
            timing: None,
            compute_fraction: None,
            overhead_steps: None,
            outputs: Vec::new(),
            replicates: Vec::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let m: Manifest = read_json(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!("{} has schema version {}, expected {SCHEMA_VERSION}", path.display(), m.schema_version)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub skipped: usize,
    pub umax_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_elbo: Option<ElboPoint>,
    /// Smoothed ELBO over the final 20% of the trace never drops by more than the monitor noise.
    pub elbo_settled: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub engine: Engine,
    pub compute_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<DiagnosticsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vb: Option<VbSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpds: Option<LpdsResult>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

/// A chain as stored in draws.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsFile {
    pub names: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub u_max: Vec<usize>,
    pub accepted: Vec<bool>,
}

impl DrawsFile {
    pub fn header(names: &[String]) -> Vec<String> {
        let mut h = vec!["iteration".to_string()];
        h.extend(names.iter().map(|n| format!("phi_{n}")));
        h.extend(["log_target", "u_max", "accepted"].map(String::from));
        h
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let rows: Vec<Vec<f64>> = (0..self.phi.len())
            .map(|i| {
                let mut r = Vec::with_capacity(self.names.len() + 4);
                r.push((i + 1) as f64);
                r.extend(&self.phi[i]);
                r.extend([self.log_target[i], self.u_max[i] as f64, if self.accepted[i] { 1.0 } else { 0.0 }]);
                r
            })
            .collect();
        let w = BufWriter::new(File::create(path)?);
        recursub::protocol::write_draws_csv(w, &Self::header(&self.names), &rows)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
        let names: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("phi_").map(String::from)).collect();
        if header != Self::header(&names) {
            return Err(bad("unexpected header".into()));
        }
        let n = names.len();
        let mut out = DrawsFile { names, phi: Vec::new(), log_target: Vec::new(), u_max: Vec::new(), accepted: Vec::new() };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let vals: Vec<f64> = rec.iter().map(|f| f.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
            out.phi.push(vals[1..=n].to_vec());
            out.log_target.push(vals[n + 1]);
            out.u_max.push(vals[n + 2] as usize);
            out.accepted.push(vals[n + 3] != 0.0);
        }
        if out.phi.is_empty() {
            return Err(bad("no draws".into()));
        }
        Ok(out)
    }
}

/// Path relative to `base` for the manifest's output list.
pub fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

pub fn plotdata_dir(dir: &Path) -> Result<PathBuf, CliError> {
    let p = dir.join("plotdata");
    create_dir(&p)?;
    Ok(p)
}
