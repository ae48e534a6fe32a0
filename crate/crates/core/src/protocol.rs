//! End-to-end inference protocol: MAP → Laplace → pilot → calibrate/tune → control variates → chain or VB.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::thin_uniform;
use crate::error::{Error, Result};
use crate::estimators::{build_control_variates, ControlVariateCache};
use crate::inference::{
    garch_starts, laplace_approximation, map_estimate, run_chain, vb_optimize, ChainOutput, ChainSettings, ExactTarget, FullGradient,
    GarchPrior, MapResult, Posterior, PriorSpec, ProposalSpace, StationaryMap, SubsampledGradient, SubsampledTarget, VariationalState,
    VbOutput, VbSettings,
};
use crate::model::{LikelihoodModel, ModelSpec, PreSample};
use crate::scheme::SamplingScheme;
use crate::tuning::{calibrate_tolerance, tune, Calibration, TuneSettings, TuningResult};

/// Fitted model with its MAP and Laplace covariance (φ space).
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: LikelihoodModel,
    pub prior: GarchPrior,
    pub map: MapResult,
    pub laplace: DMatrix<f64>,
    pub seconds: f64,
}

impl Prepared {
    pub fn t_len(&self) -> usize {
        self.model.data.len()
    }

    pub fn posterior(&self) -> Posterior<'_, LikelihoodModel, GarchPrior> {
        Posterior::new(&self.model, &self.prior)
    }
}

pub fn prepare(
    spec: ModelSpec,
    prior: PriorSpec,
    data: Vec<f64>,
    presample: Option<PreSample>,
    n_starts: usize,
    seed: u64,
) -> Result<Prepared> {
    let start = Instant::now();
    if n_starts == 0 {
        return Err(Error::Domain("need at least one optimizer start".into()));
    }
    let starts = garch_starts(&spec, &data, n_starts, seed)?;
    let model = LikelihoodModel::new(spec, data, presample)?;
    let prior = GarchPrior::new(spec, prior);
    let post = Posterior::new(&model, &prior);
    let map = map_estimate(&post, &starts)?;
    let laplace = laplace_approximation(&post, &map.phi)?;
    Ok(Prepared { model, prior, map, laplace, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotSettings {
    pub length: usize,
    pub n_tune: usize,
}

impl Default for PilotSettings {
    fn default() -> Self {
        PilotSettings { length: 100, n_tune: 20 }
    }
}

/// Everything a subsampling engine needs, plus the cost of producing it.
#[derive(Debug, Clone)]
pub struct SubsamplingSetup {
    pub cache: ControlVariateCache,
    pub calibration: Calibration,
    pub tuning: TuningResult,
    pub scheme: SamplingScheme,
    /// Recursion steps for pilot, calibration, tuning and cache build.
    pub overhead_steps: usize,
    pub tuning_seconds: f64,
    pub cache_seconds: f64,
}

/// Pilot full-data chain from the MAP, thinned to `n_tune` draws, then calibration and tuning.
///
/// `reference_m` is the subsample size of the calibration reference (2 for MCMC, 1 for VB);
/// `settings.m_floor` the smallest admissible m★.
pub fn setup_subsampling(
    prep: &Prepared,
    settings: &TuneSettings,
    pilot: &PilotSettings,
    reference_m: usize,
    seed: u64,
) -> Result<SubsamplingSetup> {
    let t_len = prep.t_len();
    let c0 = Instant::now();
    let cache = build_control_variates(&prep.model, &prep.map.phi)?;
    let cache_seconds = c0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let target = ExactTarget { density: prep.posterior(), t_len };
    let chain_settings = ChainSettings { iterations: pilot.length, burn_in: 0, seed, adapt_interval: 0, ..Default::default() };
    let pilot_chain = run_chain(&target, &prep.map.phi, &prep.laplace, &ProposalSpace::Phi, &chain_settings)?;
    let draws = thin_uniform(&pilot_chain.samples, pilot.n_tune.max(1));
    let (calibration, phi_dagger) = calibrate_tolerance(&prep.model, &cache, &draws, settings.r_max, reference_m)?;
    let residuals = cache.residuals(&prep.model, &phi_dagger)?;
    let tuning = tune(settings, t_len, calibration.v, &residuals, phi_dagger)?;
    let scheme = tuning.scheme()?;
    let tuning_seconds = t0.elapsed().as_secs_f64();

    let overhead_steps = pilot_chain.steps + draws.len() * t_len + t_len + cache.build_steps;
    Ok(SubsamplingSetup { cache, calibration, tuning, scheme, overhead_steps, tuning_seconds, cache_seconds })
}

pub fn stationary_space(prep: &Prepared) -> ProposalSpace {
    ProposalSpace::Stationary(StationaryMap::new(prep.model.spec))
}

pub fn full_mcmc(prep: &Prepared, space: &ProposalSpace, settings: &ChainSettings) -> Result<ChainOutput> {
    let target = ExactTarget { density: prep.posterior(), t_len: prep.t_len() };
    run_chain(&target, &prep.map.phi, &prep.laplace, space, settings)
}

pub fn subsampled_mcmc(prep: &Prepared, setup: &SubsamplingSetup, space: &ProposalSpace, settings: &ChainSettings) -> Result<ChainOutput> {
    if setup.tuning.m_star < 2 {
        return Err(Error::UndefinedVariance { m: setup.tuning.m_star });
    }
    let target =
        SubsampledTarget { model: &prep.model, prior: &prep.prior, cache: &setup.cache, scheme: &setup.scheme, m: setup.tuning.m_star };
    let mut out = run_chain(&target, &prep.map.phi, &prep.laplace, space, settings)?;
    out.timing.tuning = setup.tuning_seconds;
    out.timing.control_variates = setup.cache_seconds;
    Ok(out)
}

pub fn full_vb(prep: &Prepared, settings: &VbSettings) -> Result<VbOutput> {
    let post = prep.posterior();
    let oracle = FullGradient { density: &post, t_len: prep.t_len() };
    let init = VariationalState::from_laplace(&prep.map.phi, &prep.laplace)?;
    vb_optimize(&oracle, &post, &init, settings)
}

pub fn subsampled_vb(prep: &Prepared, setup: &SubsamplingSetup, settings: &VbSettings) -> Result<VbOutput> {
    let post = prep.posterior();
    let oracle =
        SubsampledGradient { model: &prep.model, prior: &prep.prior, cache: &setup.cache, scheme: &setup.scheme, m: setup.tuning.m_star };
    let init = VariationalState::from_laplace(&prep.map.phi, &prep.laplace)?;
    vb_optimize(&oracle, &post, &init, settings)
}

/// Seed of replicate k: fixed-stride split of the root seed.
pub fn replicate_seed(root: u64, k: u64) -> u64 {
    root.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Draws as CSV with one column per parameter. Shortest round-trip float formatting keeps
/// the bytes a pure function of the values.
pub fn write_draws_csv<W: std::io::Write>(w: W, names: &[String], draws: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(names).map_err(io)?;
    for d in draws {
        wr.write_record(d.iter().map(|v| v.to_string())).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}
