//! End-to-end reproduction pipelines: simulated counts → tuned operators →
//! bound sandwiches, for the benchmark pure states and the Bisep/W mixtures.

use serde::{Deserialize, Serialize};

use crate::convexroof::{convex_roof, RoofConfig};
use crate::error::{Error, Result};
use crate::estimators::{tune_parameters, OperatorFamily, TuneConfig, TuneMode, TuneResult};
use crate::lab::{self, MeasuredExpectations, NoiseModel, RunConfig, StateId};
use crate::measures::{MeasureKind, PureMeasure};
use crate::qstate::{DensityMatrix, PureState};
use crate::rng;

/// Mixing fractions used when no grid is given.
pub const DEFAULT_P_GRID: [f64; 9] = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

// Stream tags for the independent data sets of one run.
const TAG_PROJECTOR_COUNTS: u64 = 1;
const TAG_TOMOGRAPHY_COUNTS: u64 = 2;
const TAG_TOMOGRAM_EXPECTATION: u64 = 3;
const TAG_MONTE_CARLO: u64 = 4;
const TAG_OPTIMIZER: u64 = 5;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub tune: TuneConfig,
    pub roof: RoofConfig,
}

/// Lower and upper bounds from one operator family, each tuned separately.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunedPair {
    pub lower: TuneResult,
    pub upper: TuneResult,
}

impl TunedPair {
    pub fn lb(&self) -> f64 {
        self.lower.estimate.lower
    }

    pub fn ub(&self) -> f64 {
        self.upper.estimate.upper
    }

    pub fn has_caveat(&self) -> bool {
        self.lower.calibration.has_caveat() || self.upper.calibration.has_caveat()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PureRow {
    pub state: StateId,
    pub measure: MeasureKind,
    pub a1: TunedPair,
    pub a2: TunedPair,
    pub e_theory: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixedRow {
    pub p: f64,
    pub measure: MeasureKind,
    pub a1: TunedPair,
    pub a2: TunedPair,
    pub e_oracle: f64,
}

/// Pure-state summary for the benchmark table: simulated fidelity and purity
/// of the tomographic reconstruction with Monte Carlo uncertainties.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreparationSummary {
    pub state: StateId,
    pub eta: f64,
    pub fidelity: f64,
    pub fidelity_std: f64,
    pub purity: f64,
    pub purity_std: f64,
    pub reported_fidelity: f64,
    pub reported_purity: f64,
}

fn tune_pair(
    template: &OperatorFamily,
    measure: MeasureKind,
    provider: &MeasuredExpectations<'_>,
    cfg: &TuneConfig,
) -> Result<TunedPair> {
    Ok(TunedPair {
        lower: tune_parameters(template, measure, provider, TuneMode::MaximizeLb, cfg)?,
        upper: tune_parameters(template, measure, provider, TuneMode::MinimizeUb, cfg)?,
    })
}

/// Simulated data of one noisy state: counts for the A₁ family and a
/// tomographic reconstruction with an independent expectation data set.
struct Experiment {
    a1_records: Vec<lab::CountsRecord>,
    tomogram: lab::TomographyResult,
    a2_records: Vec<lab::CountsRecord>,
}

fn run_experiment(rho: &DensityMatrix, a1: &OperatorFamily, run: &RunConfig, seed: u64) -> Result<Experiment> {
    let shots = run.shots_per_setting;
    let a1_records = lab::simulate(
        rho,
        &a1.support_settings(),
        shots,
        rng::derive_seed(seed, TAG_PROJECTOR_COUNTS),
    )?;
    let tomo_records = lab::simulate_all_settings(rho, shots, rng::derive_seed(seed, TAG_TOMOGRAPHY_COUNTS))?;
    let tomogram = lab::tomography(
        &tomo_records,
        run.mc_iterations,
        rng::derive_seed(seed, TAG_MONTE_CARLO),
    )?;
    let a2_records = lab::simulate_all_settings(rho, shots, rng::derive_seed(seed, TAG_TOMOGRAM_EXPECTATION))?;
    Ok(Experiment {
        a1_records,
        tomogram,
        a2_records,
    })
}

fn tune_config(cfg: &PipelineConfig, seed: u64) -> TuneConfig {
    let mut t = cfg.tune.clone();
    t.optimizer.seed = rng::derive_seed(seed, TAG_OPTIMIZER);
    t
}

fn state_seed(master: u64, id: StateId) -> u64 {
    rng::derive_seed2(master, 0x5157, id as u64)
}

fn p_seed(master: u64, p: f64) -> u64 {
    rng::derive_seed2(master, 0x4d49, p.to_bits())
}

/// The noisy state simulated for a benchmark row: its ideal target with
/// depolarizing noise matched to the reported purity.
pub fn simulated_state(id: StateId) -> Result<(DensityMatrix, NoiseModel)> {
    let noise = NoiseModel::for_purity(id.row().purity)?;
    Ok((noise.apply(&id.target().to_density()), noise))
}

/// Bounds from A₁ = x|ψ⟩⟨ψ| and A₂ = x·ρ̂ for one benchmark state.
pub fn reproduce_pure(id: StateId, measures: &[MeasureKind], cfg: &PipelineConfig) -> Result<Vec<PureRow>> {
    let target = id.target();
    let (rho, _) = simulated_state(id)?;
    let seed = state_seed(cfg.run.master_seed, id);
    let a1 = OperatorFamily::PureProjector {
        state: target.clone(),
        x: 1.0,
    };
    let exp = run_experiment(&rho, &a1, &cfg.run, seed)?;
    let a2 = OperatorFamily::ScaledTomogram {
        rho: exp.tomogram.rho_hat.clone(),
        x: 1.0,
    };
    let tune = tune_config(cfg, seed);
    measures
        .iter()
        .map(|&m| {
            Ok(PureRow {
                state: id,
                measure: m,
                a1: tune_pair(
                    &a1,
                    m,
                    &MeasuredExpectations {
                        records: &exp.a1_records,
                    },
                    &tune,
                )?,
                a2: tune_pair(
                    &a2,
                    m,
                    &MeasuredExpectations {
                        records: &exp.a2_records,
                    },
                    &tune,
                )?,
                e_theory: m.evaluate(&target),
            })
        })
        .collect()
}

/// Simulated fidelity and purity of a benchmark preparation.
pub fn preparation_summary(id: StateId, run: &RunConfig) -> Result<PreparationSummary> {
    let (rho, noise) = simulated_state(id)?;
    let seed = state_seed(run.master_seed, id);
    let records = lab::simulate_all_settings(
        &rho,
        run.shots_per_setting,
        rng::derive_seed(seed, TAG_TOMOGRAPHY_COUNTS),
    )?;
    let tomo = lab::tomography(&records, run.mc_iterations, rng::derive_seed(seed, TAG_MONTE_CARLO))?;
    let target = id.target();
    let fid = |r: &DensityMatrix| crate::qstate::fidelity(&target, r);
    Ok(PreparationSummary {
        state: id,
        eta: noise.eta,
        fidelity: fid(&tomo.rho_hat),
        fidelity_std: tomo.mc_std_of(fid),
        purity: crate::qstate::purity(&tomo.rho_hat),
        purity_std: tomo.mc_std_of(crate::qstate::purity),
        reported_fidelity: id.row().fidelity,
        reported_purity: id.row().purity,
    })
}

/// Bounds from A₁ = x|Bisep⟩⟨Bisep| + y|W⟩⟨W| and A₂ = x·ρ̂ across a grid
/// of mixing fractions, with the convex-roof oracle value for each.
pub fn reproduce_mixed(grid: &[f64], measures: &[MeasureKind], cfg: &PipelineConfig) -> Result<Vec<MixedRow>> {
    let a1 = OperatorFamily::TwoProjectorMix {
        state1: PureState::bisep(),
        state2: PureState::w(),
        x: 1.0,
        y: 1.0,
    };
    let mut rows = Vec::new();
    for &p in grid {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                name: "p",
                value: p,
                range: "[0, 1]",
            });
        }
        let rho = lab::mixed_state(p)?;
        let seed = p_seed(cfg.run.master_seed, p);
        let exp = run_experiment(&rho, &a1, &cfg.run, seed)?;
        let a2 = OperatorFamily::ScaledTomogram {
            rho: exp.tomogram.rho_hat.clone(),
            x: 1.0,
        };
        let tune = tune_config(cfg, seed);
        for &m in measures {
            let roof = convex_roof(&rho, &m, &cfg.roof)?;
            rows.push(MixedRow {
                p,
                measure: m,
                a1: tune_pair(
                    &a1,
                    m,
                    &MeasuredExpectations {
                        records: &exp.a1_records,
                    },
                    &tune,
                )?,
                a2: tune_pair(
                    &a2,
                    m,
                    &MeasuredExpectations {
                        records: &exp.a2_records,
                    },
                    &tune,
                )?,
                e_oracle: roof.value,
            });
        }
    }
    Ok(rows)
}
