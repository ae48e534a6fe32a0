//! Subcommand execution. Every config is validated before any data is read or computed.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use recursub::data::{load_returns, rescale, ColumnSpec};
use recursub::diagnostics::{chain_diagnostics, compute_fraction, lpds_evaluate, thin_uniform, LpdsResult};
use recursub::figures::{self, FigureData, FigureKind};
use recursub::inference::{elbo_non_decreasing, ChainOutput, ChainSettings, ProposalSpace, Timing, VbOutput, VbSettings};
use recursub::model::{is_stationary, simulate, unconditional_variance, ReparamMap};
use recursub::protocol::{
    full_mcmc, full_vb, prepare, replicate_seed, setup_subsampling, stationary_space, subsampled_mcmc, subsampled_vb, PilotSettings,
    Prepared, SubsamplingSetup,
};
use recursub::tuning::TuneSettings;
use recursub::{ModelSpec, PreSample};

use crate::config::{Command, Engine, ProposalKind, RunConfig, SchemeKindConfig};
use crate::error::CliError;
use crate::output::*;

/// Parsed command line.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// What a successful command reports on stdout.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compute_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpds: Option<f64>,
}

const KDE_VB_DRAWS: usize = 1000;
const VB_STATE: &str = "vb_state.json";
const DRAWS: &str = "draws.csv";

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// RECURSUB_THREADS caps the parallel replications; unset uses rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let n = match std::env::var("RECURSUB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| config_error(format!("RECURSUB_THREADS must be a positive integer, got '{v}'")))?,
        Err(std::env::VarError::NotPresent) => 0,
        Err(e) => return Err(config_error(format!("RECURSUB_THREADS: {e}"))),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Io(e.to_string()))
}

/// Config with --seed and --out applied.
fn effective_config(inv: &Invocation) -> Result<RunConfig, CliError> {
    let path = inv.config.as_ref().ok_or_else(|| config_error(format!("{} needs --config", inv.command.name())))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = inv.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &inv.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

/// Best-effort output directory, used to place error.json.
pub fn resolve_out(inv: &Invocation) -> Option<PathBuf> {
    inv.out.clone().or_else(|| inv.config.as_ref().and_then(|p| RunConfig::load(p).ok()).and_then(|c| c.out))
}

pub fn execute(inv: &Invocation) -> Result<Summary, CliError> {
    match inv.command {
        Command::Simulate | Command::Tune | Command::Fit | Command::FigureData => {
            let cfg = effective_config(inv)?;
            cfg.validate(inv.command)?;
            let out = cfg.out.clone().ok_or_else(|| config_error("no output directory: pass --out or set out"))?;
            match inv.command {
                Command::Simulate => run_simulate(&cfg, &out),
                Command::Tune => run_tune(&cfg, &out),
                Command::Fit => run_fit(&cfg, &out),
                _ => run_figure_data(&cfg, &out),
            }
        }
        Command::Lpds | Command::Diagnostics => {
            let out = match (&inv.out, &inv.config) {
                (Some(o), _) => o.clone(),
                (None, Some(p)) => RunConfig::load(p)?.out.ok_or_else(|| config_error("no run directory: pass --out"))?,
                (None, None) => return Err(config_error(format!("{} needs --out <run dir>", inv.command.name()))),
            };
            let cfg = match &inv.config {
                Some(_) => Some(effective_config(inv)?),
                None => None,
            };
            if let Some(c) = &cfg {
                c.validate(inv.command)?;
            }
            revisit(inv.command, cfg.as_ref(), &out)
        }
    }
}

// ---------------------------------------------------------------------------
// data

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub scale: f64,
    pub source: &'static str,
    pub simulate_seed: Option<u64>,
}

impl Dataset {
    fn summary(&self) -> DataSummary {
        DataSummary { source: self.source.into(), n_train: self.train.len(), n_test: self.test.len(), scale: self.scale }
    }
}

pub fn load_data(cfg: &RunConfig, spec: &ModelSpec) -> Result<Dataset, CliError> {
    let d = cfg.data()?;
    if let Some(sim) = &d.simulate {
        spec.layout().check_theta(&sim.theta).map_err(|e| config_error(format!("simulate.theta: {e}")))?;
        if !is_stationary(spec, &sim.theta) {
            return Err(config_error("simulate.theta lies outside the stationary region"));
        }
        let v = unconditional_variance(spec, &sim.theta).map_err(|e| config_error(format!("simulate.theta: {e}")))?;
        let pre = PreSample::constant(spec.p, spec.q, sim.theta[0], v)?;
        let seed = sim.seed.unwrap_or(cfg.run.seed);
        let mut y = simulate(spec, &sim.theta, sim.t_len + sim.test_len, &pre, seed)?;
        let test = y.split_off(sim.t_len);
        let (train, scale) = if d.rescale.unwrap_or(false) {
            let s = rescale(y, None)?;
            (s.values, s.scale)
        } else {
            (y, 1.0)
        };
        let test = test.into_iter().map(|v| v / scale).collect();
        return Ok(Dataset { train, test, scale, source: "simulate", simulate_seed: Some(seed) });
    }
    let path = d.csv.as_ref().ok_or_else(|| config_error("[data] needs csv or simulate"))?;
    for p in [Some(path), d.test_csv.as_ref()].into_iter().flatten() {
        if !p.is_file() {
            return Err(CliError::Input(format!("data file {} does not exist", p.display())));
        }
    }
    let col = ColumnSpec { column: d.column.clone(), log_diff: d.log_diff };
    let fixed = if d.rescale.unwrap_or(true) { None } else { Some(1.0) };
    let train = load_returns(path, &col, fixed).map_err(CliError::from_input)?;
    let test = match &d.test_csv {
        Some(p) => load_returns(p, &col, Some(train.scale)).map_err(CliError::from_input)?.values,
        None => Vec::new(),
    };
    Ok(Dataset { train: train.values, test, scale: train.scale, source: "csv", simulate_seed: None })
}

fn check_scheme_fits(cfg: &RunConfig, n_train: usize) -> Result<(), CliError> {
    if cfg.scheme.t_star >= n_train {
        return Err(config_error(format!("scheme.t_star = {} must be below the training length {n_train}", cfg.scheme.t_star)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let spec = cfg.model()?;
    let data = load_data(cfg, &spec)?;
    create_dir(out)?;
    let series = out.join("series.csv");
    let mut w = csv::Writer::from_path(&series)?;
    w.write_record(["t", "y", "test"])?;
    for (i, v) in data.train.iter().chain(&data.test).enumerate() {
        let is_test = if i >= data.train.len() { "1" } else { "0" };
        w.write_record([(i + 1).to_string(), v.to_string(), is_test.to_string()])?;
    }
    w.flush()?;
    let mut m = Manifest::new("simulate", cfg, Seeds { root: cfg.run.seed, simulate: data.simulate_seed, ..Default::default() });
    m.data = Some(data.summary());
    m.parameter_names = spec.layout().names();
    m.outputs = vec![relative(out, &series)];
    write_json(&out.join("manifest.json"), &m)?;
    Ok(Summary { command: "simulate", out: out.to_path_buf(), compute_fraction: None, lpds: None })
}

// ---------------------------------------------------------------------------
// tune and fit

fn tune_settings(cfg: &RunConfig) -> TuneSettings {
    TuneSettings {
        t_star: cfg.scheme.t_star,
        b: cfg.scheme.b,
        r_max: cfg.scheme.r_max,
        m_floor: cfg.m_floor(),
        grid_points: cfg.scheme.grid_points,
        uniform: cfg.scheme.kind == SchemeKindConfig::Uniform,
    }
}

fn pilot_settings(cfg: &RunConfig) -> PilotSettings {
    PilotSettings { length: cfg.scheme.pilot_length, n_tune: cfg.scheme.n_tune }
}

fn reference_m(engine: Engine) -> usize {
    if engine.is_mcmc() {
        2
    } else {
        1
    }
}

struct StageSeeds {
    replicate: u64,
    pilot: u64,
    chain: u64,
    draws: u64,
}

fn stage_seeds(root: u64, k: usize) -> StageSeeds {
    let s = replicate_seed(root, k as u64);
    StageSeeds { replicate: s, pilot: replicate_seed(s, 1), chain: replicate_seed(s, 2), draws: replicate_seed(s, 3) }
}

fn seeds_record(root: u64, data: &Dataset, st: Option<&StageSeeds>) -> Seeds {
    Seeds {
        root,
        simulate: data.simulate_seed,
        prepare: Some(root),
        replicate: st.map(|s| s.replicate),
        pilot: st.map(|s| s.pilot),
        chain: st.map(|s| s.chain),
        draws: st.map(|s| s.draws),
    }
}

fn prepared(cfg: &RunConfig) -> Result<(ModelSpec, Dataset, Prepared), CliError> {
    let spec = cfg.model()?;
    let data = load_data(cfg, &spec)?;
    check_scheme_fits(cfg, data.train.len())?;
    let prep = prepare(spec, cfg.prior, data.train.clone(), None, cfg.run.n_starts, cfg.run.seed)?;
    Ok((spec, data, prep))
}

fn map_summary(prep: &Prepared) -> Result<MapSummary, CliError> {
    Ok(MapSummary {
        phi: prep.map.phi.clone(),
        theta: prep.model.map.to_theta(&prep.map.phi)?,
        log_density: prep.map.log_density,
        converged: prep.map.converged,
    })
}

fn write_figure(dir: &Path, base: &Path, stem: &str, fig: &FigureData, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let p = dir.join(format!("{stem}.csv"));
    fig.write_csv(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
    outputs.push(relative(base, &p));
    Ok(())
}

fn run_tune(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let (spec, data, prep) = prepared(cfg)?;
    let st = stage_seeds(cfg.run.seed, 0);
    let setup = setup_subsampling(&prep, &tune_settings(cfg), &pilot_settings(cfg), reference_m(cfg.run.engine), st.pilot)?;
    let t_len = prep.t_len();
    let tr = &setup.tuning;

    create_dir(out)?;
    let plot = plotdata_dir(out)?;
    let mut outputs = Vec::new();
    let mut cs = crate::config::FigureConfig::default_cs();
    cs.push(tr.c_star);
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let ms: Vec<usize> = crate::config::FigureConfig::default_ms().into_iter().chain([tr.m_star]).filter(|&m| m <= t_len).collect();
    let mut ms = ms;
    ms.sort_unstable();
    ms.dedup();
    write_figure(&plot, out, "cost_heatmap", &figures::cost_heatmap(t_len, tr.t_star, tr.b, &cs, &ms)?, &mut outputs)?;
    write_figure(&plot, out, "umax_vs_m", &figures::umax_vs_m(t_len, tr.t_star, tr.b, &cs, &ms)?, &mut outputs)?;
    write_figure(&plot, out, "tpd_profile", &figures::tpd_profile(t_len, tr.t_star, tr.b, tr.epsilon)?, &mut outputs)?;

    let mut m = Manifest::new("tune", cfg, seeds_record(cfg.run.seed, &data, Some(&st)));
    m.data = Some(data.summary());
    m.parameter_names = spec.layout().names();
    m.map = Some(map_summary(&prep)?);
    m.tuning = Some(setup.tuning.clone());
    m.calibration = Some(setup.calibration.clone());
    m.overhead_steps = Some(setup.overhead_steps);
    m.timing = Some(TimingLedger::new(prep.seconds, setup.tuning_seconds, setup.cache_seconds, 0.0));
    m.outputs = outputs;
    write_json(&out.join("manifest.json"), &m)?;
    Ok(Summary { command: "tune", out: out.to_path_buf(), compute_fraction: None, lpds: None })
}

fn run_fit(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let pool = thread_pool()?;
    let (spec, data, prep) = prepared(cfg)?;
    create_dir(out)?;
    let n_rep = cfg.run.n_rep;
    let dirs: Vec<PathBuf> =
        if n_rep == 1 { vec![out.to_path_buf()] } else { (0..n_rep).map(|k| out.join(format!("rep_{k:03}"))).collect() };
    let results: Vec<Result<(f64, Option<f64>), CliError>> =
        pool.install(|| dirs.par_iter().enumerate().map(|(k, dir)| fit_replicate(cfg, &spec, &data, &prep, k, dir)).collect());
    let mut cfs = Vec::with_capacity(n_rep);
    let mut lpds = Vec::new();
    for r in results {
        let (cf, l) = r?;
        cfs.push(cf);
        lpds.extend(l);
    }
    if n_rep > 1 {
        let mut m = Manifest::new("fit", cfg, seeds_record(cfg.run.seed, &data, None));
        m.data = Some(data.summary());
        m.parameter_names = spec.layout().names();
        m.map = Some(map_summary(&prep)?);
        m.compute_fraction = Some(cfs.iter().sum::<f64>() / n_rep as f64);
        m.timing = Some(TimingLedger::new(prep.seconds, 0.0, 0.0, 0.0));
        m.replicates = dirs.iter().map(|d| relative(out, d)).collect();
        write_json(&out.join("manifest.json"), &m)?;
    }
    let mean_lpds = (!lpds.is_empty()).then(|| lpds.iter().sum::<f64>() / lpds.len() as f64);
    Ok(Summary { command: "fit", out: out.to_path_buf(), compute_fraction: Some(cfs.iter().sum::<f64>() / n_rep as f64), lpds: mean_lpds })
}

fn to_theta_draws(spec: &ModelSpec, phi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, CliError> {
    let map = ReparamMap::for_spec(spec);
    Ok(phi.iter().map(|p| map.to_theta(p)).collect::<recursub::Result<_>>()?)
}

fn vb_draws(out: &VbOutput, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| out.state.draw(&mut rng).2).collect()
}

fn lpds_for(spec: &ModelSpec, data: &Dataset, presample: &PreSample, draws_phi: &[Vec<f64>]) -> Result<Option<LpdsResult>, CliError> {
    if data.test.is_empty() {
        return Ok(None);
    }
    let theta = to_theta_draws(spec, draws_phi)?;
    Ok(Some(lpds_evaluate(spec, &theta, &data.train, presample, &data.test)?))
}

fn vb_summary(out: &VbOutput, iterations: usize) -> VbSummary {
    VbSummary {
        iterations,
        evaluations: out.evaluations,
        skipped: out.skipped,
        umax_total: out.umax_total,
        final_elbo: out.elbo_trace.last().copied(),
        elbo_settled: out.elbo_trace.len() < 2 || elbo_non_decreasing(&out.elbo_trace, 0.2, 3.0),
        seconds: out.seconds,
    }
}

/// Work relative to a full-data optimiser taking the same in-support draws.
fn vb_compute_fraction(umax_total: usize, evaluations: usize, overhead: usize, t_len: usize) -> f64 {
    (umax_total + overhead) as f64 / (evaluations.max(1) * t_len) as f64
}

enum EngineOutput {
    Chain(ChainOutput),
    Vb(VbOutput),
}

fn fit_replicate(
    cfg: &RunConfig,
    spec: &ModelSpec,
    data: &Dataset,
    prep: &Prepared,
    k: usize,
    dir: &Path,
) -> Result<(f64, Option<f64>), CliError> {
    create_dir(dir)?;
    let st = stage_seeds(cfg.run.seed, k);
    let engine = cfg.run.engine;
    let t_len = prep.t_len();
    let iterations = cfg.run.iterations();
    let setup: Option<SubsamplingSetup> = if engine.is_subsampled() {
        Some(setup_subsampling(prep, &tune_settings(cfg), &pilot_settings(cfg), reference_m(engine), st.pilot)?)
    } else {
        None
    };
    let proposal = engine.is_mcmc().then(|| cfg.run.proposal());
    let result = match engine {
        Engine::McmcSub | Engine::McmcFull => {
            let space = match cfg.run.proposal() {
                ProposalKind::Phi => ProposalSpace::Phi,
                ProposalKind::Stationary => stationary_space(prep),
            };
            let settings = ChainSettings {
                iterations,
                burn_in: cfg.run.burn_in,
                seed: st.chain,
                initial_scale: cfg.run.initial_scale,
                adapt_interval: cfg.run.adapt_interval,
            };
            EngineOutput::Chain(match &setup {
                Some(s) => subsampled_mcmc(prep, s, &space, &settings)?,
                None => full_mcmc(prep, &space, &settings)?,
            })
        }
        Engine::VbSub | Engine::VbFull => {
            let v = &cfg.vb;
            let settings = VbSettings {
                iterations,
                seed: st.chain,
                learning_rate: v.learning_rate,
                polyak_window: v.polyak_window,
                monitor_interval: v.monitor_interval,
                monitor_draws: v.monitor_draws,
                freeze_b: v.freeze_b,
                ..VbSettings::default()
            };
            EngineOutput::Vb(match &setup {
                Some(s) => subsampled_vb(prep, s, &settings)?,
                None => full_vb(prep, &settings)?,
            })
        }
    };

    let overhead = setup.as_ref().map_or(0, |s| s.overhead_steps);
    let names = spec.layout().names();
    let plot = plotdata_dir(dir)?;
    let mut outputs = Vec::new();
    let presample = &prep.model.presample;
    let (diag, steps, sampling_seconds, burn_in) = match &result {
        EngineOutput::Chain(chain) => {
            let path = dir.join(DRAWS);
            DrawsFile {
                names: names.clone(),
                phi: chain.samples.clone(),
                log_target: chain.log_target.clone(),
                u_max: chain.u_max.clone(),
                accepted: chain.accepted.clone(),
            }
            .write(&path)?;
            outputs.push(relative(dir, &path));
            let report = chain_diagnostics(chain, t_len, overhead)?;
            let lpds = lpds_for(spec, data, presample, &thin_uniform(chain.draws(), cfg.run.lpds_draws))?;
            write_figure(&plot, dir, "umax_trace", &figures::umax_trace(&chain.u_max, t_len)?, &mut outputs)?;
            let theta = to_theta_draws(spec, chain.draws())?;
            write_figure(&plot, dir, "kde_inputs", &figures::kde_inputs(&[(engine_label(engine), &theta)], &names)?, &mut outputs)?;
            let d = Diagnostics { engine, compute_fraction: report.compute_fraction, chain: Some(report), vb: None, lpds };
            (d, chain.steps, chain.timing.sampling, cfg.run.burn_in)
        }
        EngineOutput::Vb(vb) => {
            let path = dir.join(VB_STATE);
            write_json(&path, vb)?;
            outputs.push(relative(dir, &path));
            let draws = vb_draws(vb, cfg.run.lpds_draws.max(KDE_VB_DRAWS), st.draws);
            let lpds = lpds_for(spec, data, presample, &draws[..cfg.run.lpds_draws])?;
            let theta = to_theta_draws(spec, &draws[..KDE_VB_DRAWS.min(draws.len())])?;
            write_figure(&plot, dir, "kde_inputs", &figures::kde_inputs(&[(engine_label(engine), &theta)], &names)?, &mut outputs)?;
            let cf = vb_compute_fraction(vb.umax_total, vb.evaluations, overhead, t_len);
            let d = Diagnostics { engine, compute_fraction: cf, chain: None, vb: Some(vb_summary(vb, iterations)), lpds };
            (d, vb.steps, vb.seconds, 0)
        }
    };
    if let Some(s) = &setup {
        let tr = &s.tuning;
        write_figure(&plot, dir, "tpd_profile", &figures::tpd_profile(t_len, tr.t_star, tr.b, tr.epsilon)?, &mut outputs)?;
    }
    let dpath = dir.join("diagnostics.json");
    write_json(&dpath, &diag)?;
    outputs.push(relative(dir, &dpath));

    let mut m = Manifest::new("fit", cfg, seeds_record(cfg.run.seed, data, Some(&st)));
    m.data = Some(data.summary());
    m.parameter_names = names;
    m.map = Some(map_summary(prep)?);
    m.run = Some(RunRecord { engine, proposal, draws_space: "phi".into(), iterations, burn_in, t_len, recursion_steps: steps });
    m.tuning = setup.as_ref().map(|s| s.tuning.clone());
    m.calibration = setup.as_ref().map(|s| s.calibration.clone());
    m.overhead_steps = Some(overhead);
    m.compute_fraction = Some(diag.compute_fraction);
    m.timing = Some(match &setup {
        Some(s) => TimingLedger::new(prep.seconds, s.tuning_seconds, s.cache_seconds, sampling_seconds),
        None => TimingLedger::new(prep.seconds, 0.0, 0.0, sampling_seconds),
    });
    m.outputs = outputs;
    write_json(&dir.join("manifest.json"), &m)?;
    Ok((diag.compute_fraction, diag.lpds.map(|l| l.lpds)))
}

fn engine_label(e: Engine) -> &'static str {
    match e {
        Engine::McmcSub => "mcmc-sub",
        Engine::McmcFull => "mcmc-full",
        Engine::VbSub => "vb-sub",
        Engine::VbFull => "vb-full",
    }
}

// ---------------------------------------------------------------------------
// lpds and diagnostics on an existing run directory

fn run_dirs(out: &Path) -> Result<Vec<(PathBuf, Manifest)>, CliError> {
    let top = Manifest::read(out)?;
    if top.replicates.is_empty() {
        return Ok(vec![(out.to_path_buf(), top)]);
    }
    top.replicates.iter().map(|r| Ok((out.join(r), Manifest::read(&out.join(r))?))).collect()
}

fn chain_from_file(draws: DrawsFile, run: &RunRecord, seed: u64, timing: Timing) -> ChainOutput {
    ChainOutput {
        samples: draws.phi,
        log_target: draws.log_target,
        u_max: draws.u_max,
        accepted: draws.accepted,
        burn_in: run.burn_in,
        seed,
        steps: run.recursion_steps,
        timing,
    }
}

fn revisit(command: Command, cfg: Option<&RunConfig>, out: &Path) -> Result<Summary, CliError> {
    let mut cf_sum = 0.0;
    let mut lpds_sum = 0.0;
    let mut n_lpds = 0;
    let dirs = run_dirs(out)?;
    for (dir, manifest) in &dirs {
        let run = manifest.run.as_ref().ok_or_else(|| CliError::Input(format!("{} is not a fit run", dir.display())))?;
        let cfg = cfg.unwrap_or(&manifest.config);
        let spec = cfg.model()?;
        let overhead = manifest.overhead_steps.unwrap_or(0);
        let seeds = &manifest.seeds;
        let draws_phi = |n: usize| -> Result<Vec<Vec<f64>>, CliError> {
            if run.engine.is_mcmc() {
                let f = DrawsFile::read(&dir.join(DRAWS))?;
                Ok(thin_uniform(&f.phi[run.burn_in.min(f.phi.len())..], n))
            } else {
                let vb: VbOutput = read_json(&dir.join(VB_STATE))?;
                Ok(vb_draws(&vb, n.max(KDE_VB_DRAWS), seeds.draws.unwrap_or(0))[..n].to_vec())
            }
        };
        match command {
            Command::Lpds => {
                let data = load_data(cfg, &spec)?;
                if data.test.is_empty() {
                    return Err(config_error("the run has no test set: set data.test_csv or simulate.test_len"));
                }
                let presample = PreSample::from_moments(&data.train, spec.p, spec.q)?;
                let res = lpds_for(&spec, &data, &presample, &draws_phi(cfg.run.lpds_draws)?)?.expect("test set is non-empty");
                lpds_sum += res.lpds;
                n_lpds += 1;
                write_json(&dir.join("lpds.json"), &res)?;
            }
            _ => {
                let previous: Option<Diagnostics> = read_json(&dir.join("diagnostics.json")).ok();
                let lpds = previous.and_then(|d| d.lpds);
                let diag = if run.engine.is_mcmc() {
                    let t = manifest.timing.clone().unwrap_or_default();
                    let timing = Timing { tuning: t.tuning, control_variates: t.control_variates, sampling: t.sampling };
                    let chain = chain_from_file(DrawsFile::read(&dir.join(DRAWS))?, run, seeds.chain.unwrap_or(0), timing);
                    let report = chain_diagnostics(&chain, run.t_len, overhead)?;
                    debug_assert_eq!(report.compute_fraction, compute_fraction(&chain.u_max, overhead, run.t_len));
                    Diagnostics { engine: run.engine, compute_fraction: report.compute_fraction, chain: Some(report), vb: None, lpds }
                } else {
                    let vb: VbOutput = read_json(&dir.join(VB_STATE))?;
                    let cf = vb_compute_fraction(vb.umax_total, vb.evaluations, overhead, run.t_len);
                    Diagnostics { engine: run.engine, compute_fraction: cf, chain: None, vb: Some(vb_summary(&vb, run.iterations)), lpds }
                };
                cf_sum += diag.compute_fraction;
                write_json(&dir.join("diagnostics.json"), &diag)?;
            }
        }
    }
    let n = dirs.len() as f64;
    Ok(Summary {
        command: command.name(),
        out: out.to_path_buf(),
        compute_fraction: (command == Command::Diagnostics).then(|| cf_sum / n),
        lpds: (n_lpds > 0).then(|| lpds_sum / n_lpds as f64),
    })
}

// ---------------------------------------------------------------------------
// figure data

fn run_figure_data(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let f = cfg.figure.as_ref().ok_or_else(|| config_error("figure-data needs a [figure] section"))?;
    create_dir(out)?;
    let plot = plotdata_dir(out)?;
    let mut outputs = Vec::new();
    let stem = f.kind.file_stem();
    match f.kind {
        FigureKind::UmaxVsM | FigureKind::CostHeatmap | FigureKind::TpdProfile => {
            let t_len = f.t_len.ok_or_else(|| config_error("figure.t_len is required"))?;
            let ms: Vec<usize> = f.ms.iter().copied().filter(|&m| m <= t_len).collect();
            let fig = match f.kind {
                FigureKind::UmaxVsM => figures::umax_vs_m(t_len, f.t_star, f.b, &f.cs, &ms)?,
                FigureKind::CostHeatmap => figures::cost_heatmap(t_len, f.t_star, f.b, &f.cs, &ms)?,
                _ => {
                    figures::tpd_profile(t_len, f.t_star, f.b, f.epsilon.ok_or_else(|| config_error("tpd_profile needs figure.epsilon"))?)?
                }
            };
            write_figure(&plot, out, stem, &fig, &mut outputs)?;
        }
        FigureKind::UmaxTrace | FigureKind::KdeInputs => {
            let mut labelled: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
            let mut names = Vec::new();
            for (i, run_dir) in f.runs.iter().enumerate() {
                let m = Manifest::read(run_dir)?;
                let run = m.run.as_ref().ok_or_else(|| CliError::Input(format!("{} is not a fit run", run_dir.display())))?;
                if !run.engine.is_mcmc() {
                    return Err(config_error(format!("{} holds a variational fit; these figures read chain draws", run_dir.display())));
                }
                let draws = DrawsFile::read(&run_dir.join(DRAWS))?;
                if f.kind == FigureKind::UmaxTrace {
                    let name = if f.runs.len() == 1 { stem.to_string() } else { format!("{stem}_{i}") };
                    write_figure(&plot, out, &name, &figures::umax_trace(&draws.u_max, run.t_len)?, &mut outputs)?;
                } else {
                    let spec = m.config.model()?;
                    if !names.is_empty() && names != m.parameter_names {
                        return Err(config_error("kde_inputs runs must share a model"));
                    }
                    names = m.parameter_names.clone();
                    let label = run_dir.file_name().map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
                    labelled.push((label, to_theta_draws(&spec, &draws.phi[run.burn_in.min(draws.phi.len())..])?));
                }
            }
            if f.kind == FigureKind::KdeInputs {
                let series: Vec<(&str, &[Vec<f64>])> = labelled.iter().map(|(l, d)| (l.as_str(), d.as_slice())).collect();
                write_figure(&plot, out, stem, &figures::kde_inputs(&series, &names)?, &mut outputs)?;
            }
        }
    }
    let mut m = Manifest::new("figure-data", cfg, Seeds { root: cfg.run.seed, ..Default::default() });
    m.outputs = outputs;
    write_json(&out.join("manifest.json"), &m)?;
    Ok(Summary { command: "figure-data", out: out.to_path_buf(), compute_fraction: None, lpds: None })
}
