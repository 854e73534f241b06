//! Tight lower- and upper-bound estimators on the fiber `A − λ𝟙`.
//!
//! For a Hermitian `A` and pure-state measure `E`, the constants
//!
//! ```text
//! λ_LB = max_ψ ⟨ψ|A|ψ⟩ − E(ψ)        λ_UB = min_ψ ⟨ψ|A|ψ⟩ − E(ψ)
//! ```
//!
//! turn one expectation value into the sandwich
//! `⟨A⟩_ρ − λ_LB ≤ E(ρ) ≤ ⟨A⟩_ρ − λ_UB` for every mixed state ρ.
//!
//! Both constants come from heuristic global optimization (multi-start
//! Nelder–Mead plus Haar screening). A λ_LB below the true maximum makes the
//! lower bound invalid, so every calibration carries diagnostics describing
//! how well the optimum was confirmed.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{MeasureKind, PureMeasure};
use crate::optim::{golden_min, nelder_mead, NelderMeadOptions};
use crate::qstate::{
    expectation, hermitian_eigen, minimal_cover, quadratic_form, DensityMatrix, HermitianOperator, Matrix8,
    MeasurementSetting, PauliString, PureState, C64, DIM, SUPPORT_TOL,
};
use crate::rng;

const COORDS: usize = 2 * DIM;
const SCREEN_CHUNK: usize = 8192;
const SCREEN_KEEP: usize = 8;
/// Restarts agreeing with the best value within this count as confirmations.
pub const AGREEMENT_TOL: f64 = 1e-6;

// Stream tags so screening, restarts and scan probes never share seeds.
const TAG_SCREEN: u64 = 1;
const TAG_RESTART: u64 = 2;
const TAG_PROBE: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub restarts: usize,
    /// Nelder–Mead function tolerance.
    pub tolerance: f64,
    /// Evaluation budget per restart.
    pub max_evals: usize,
    /// Haar samples screened before local search; the best few seed extra restarts.
    pub screening_samples: usize,
    pub seed: u64,
    /// Multiplies the restart count by ten.
    pub audit: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 200,
            tolerance: 1e-8,
            max_evals: 20_000,
            screening_samples: 1_000_000,
            seed: 0x5eed,
            audit: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    fn effective_restarts(&self) -> usize {
        if self.audit {
            self.restarts * 10
        } else {
            self.restarts
        }
    }

    fn local_options(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            max_evals: self.max_evals,
            ftol: self.tolerance,
            xtol: 1e-3,
            initial_step: 0.25,
            rebuilds: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    /// Some restart hit its evaluation budget or the best value was reached only once.
    Caveat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub restarts: usize,
    pub converged_restarts: usize,
    /// Best and second-best restart values.
    pub best: f64,
    pub second_best: f64,
    pub basin_gap: f64,
    /// Restarts landing within [`AGREEMENT_TOL`] of the best value (including it).
    pub agreeing_restarts: usize,
    pub screening_samples: usize,
    pub screening_best: f64,
    pub evaluations: usize,
    pub tolerance: f64,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct LambdaResult {
    pub value: f64,
    pub witness: PureState,
    pub diagnostics: Diagnostics,
}

/// Objective f(ψ) = ⟨ψ|A₀|ψ⟩ − E(ψ) on unnormalized 16-real coordinates.
struct Objective<'a> {
    traceless: Matrix8,
    measure: &'a dyn PureMeasure,
}

impl Objective<'_> {
    #[inline]
    fn at_amps(&self, amps: &[C64; DIM]) -> f64 {
        quadratic_form(&self.traceless, amps) - self.measure.evaluate_normalized(amps)
    }

    #[inline]
    fn at(&self, x: &[f64]) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if !norm2.is_finite() || norm2 <= 1e-24 {
            return f64::NAN;
        }
        let inv = norm2.sqrt().recip();
        let amps: [C64; DIM] = std::array::from_fn(|k| C64::new(x[k] * inv, x[k + DIM] * inv));
        self.at_amps(&amps)
    }
}

/// Rounds the traceless part onto a 2⁻²⁶ grid so that every operator on a
/// fiber is optimized with bit-identical input. Returns the snapped matrix and
/// the spectral norm of the rounding error, which bounds the change in λ.
fn snap(m: &Matrix8) -> (Matrix8, f64) {
    const GRID: f64 = (1u64 << 26) as f64;
    let r = |v: f64| (v * GRID).round() / GRID;
    let mut s = m.map(|z| C64::new(r(z.re), r(z.im)));
    for i in 0..DIM {
        s[(i, i)].im = 0.0;
        for j in 0..i {
            s[(i, j)] = s[(j, i)].conj();
        }
    }
    let (ev, _) = hermitian_eigen(&(m - s));
    let norm = ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    (s, norm)
}

fn signed(sense: Sense, v: f64) -> f64 {
    match sense {
        Sense::Max => -v,
        Sense::Min => v,
    }
}

fn haar_coords(g: &mut rng::Rng) -> [f64; COORDS] {
    PureState::haar(g).to_coords()
}

/// Best `SCREEN_KEEP` Haar samples by signed objective (lower is better).
fn screen(obj: &Objective<'_>, sense: Sense, samples: usize, seed: u64) -> Vec<(f64, [f64; COORDS])> {
    let chunks = samples.div_ceil(SCREEN_CHUNK);
    let per_chunk: Vec<Vec<(f64, [f64; COORDS])>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = rng::from_seed(rng::derive_seed2(seed, TAG_SCREEN, c as u64));
            let n = SCREEN_CHUNK.min(samples - c * SCREEN_CHUNK);
            let mut keep: Vec<(f64, [f64; COORDS])> = Vec::with_capacity(SCREEN_KEEP + 1);
            for _ in 0..n {
                let x = haar_coords(&mut g);
                let v = signed(sense, obj.at(&x));
                if keep.len() < SCREEN_KEEP || v < keep[keep.len() - 1].0 {
                    keep.push((v, x));
                    keep.sort_by(|a, b| a.0.total_cmp(&b.0));
                    keep.truncate(SCREEN_KEEP);
                }
            }
            keep
        })
        .collect();
    let mut all: Vec<(f64, [f64; COORDS])> = per_chunk.into_iter().flatten().collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.truncate(SCREEN_KEEP);
    all
}

struct Local {
    value: f64,
    x: Vec<f64>,
    evals: usize,
    converged: bool,
}

// Maxima often lie on the biseparable manifold, where every GME measure
// vanishes and rises linearly away from it; a simplex stalls short of such
// kinks. The best restarts are therefore also polished within each
// biseparable split by alternating top-eigenvector updates of the factors.
const POLISH_CANDIDATES: usize = 8;
const POLISH_SWEEPS: usize = 200;

/// Top eigenvector of a small Hermitian matrix.
fn top_eigenvector<const N: usize>(m: DMatrix<C64>) -> [C64; N] {
    let eig = SymmetricEigen::new(m);
    let top = (0..N)
        .max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
        .expect("nonempty");
    std::array::from_fn(|k| eig.eigenvectors[(k, top)])
}

/// Climbs ⟨ψ|T|ψ⟩ over states (qubit `lone`) ⊗ (other two qubits), starting
/// from the product nearest to `from`.
fn product_polish(t: &Matrix8, from: &[C64; DIM], lone: usize) -> Local {
    let others: Vec<usize> = (1..=3).filter(|&q| q != lone).collect();
    let index = |a: usize, b: usize| a << (3 - lone) | (b >> 1) << (3 - others[0]) | (b & 1) << (3 - others[1]);

    let mut gram = DMatrix::<C64>::zeros(2, 2);
    for a in 0..2 {
        for a2 in 0..2 {
            gram[(a, a2)] = (0..4).map(|b| from[index(a, b)] * from[index(a2, b)].conj()).sum();
        }
    }
    let mut single = top_eigenvector(gram);
    let mut pair = [C64::new(0.0, 0.0); 4];
    let mut value = f64::NEG_INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < POLISH_SWEEPS {
        sweeps += 1;
        let mut b_op = DMatrix::<C64>::zeros(4, 4);
        for b in 0..4 {
            for b2 in 0..4 {
                b_op[(b, b2)] = (0..2)
                    .flat_map(|a| (0..2).map(move |a2| (a, a2)))
                    .map(|(a, a2)| single[a].conj() * t[(index(a, b), index(a2, b2))] * single[a2])
                    .sum();
            }
        }
        pair = top_eigenvector(b_op);
        let mut c_op = DMatrix::<C64>::zeros(2, 2);
        for a in 0..2 {
            for a2 in 0..2 {
                c_op[(a, a2)] = (0..4)
                    .flat_map(|b| (0..4).map(move |b2| (b, b2)))
                    .map(|(b, b2)| pair[b].conj() * t[(index(a, b), index(a2, b2))] * pair[b2])
                    .sum();
            }
        }
        single = top_eigenvector(c_op);
        let amps: [C64; DIM] = product_amplitudes(&single, &pair, &index);
        let next = quadratic_form(t, &amps);
        if next - value <= 1e-15 {
            converged = true;
            value = value.max(next);
            break;
        }
        value = next;
    }
    let amps = product_amplitudes(&single, &pair, &index);
    Local {
        value,
        x: amps.iter().map(|z| z.re).chain(amps.iter().map(|z| z.im)).collect(),
        evals: sweeps,
        converged,
    }
}

fn product_amplitudes(single: &[C64; 2], pair: &[C64; 4], index: &dyn Fn(usize, usize) -> usize) -> [C64; DIM] {
    let mut amps = [C64::new(0.0, 0.0); DIM];
    for a in 0..2 {
        for b in 0..4 {
            amps[index(a, b)] = single[a] * pair[b];
        }
    }
    amps
}

fn extremize(
    a: &HermitianOperator,
    measure: &dyn PureMeasure,
    sense: Sense,
    cfg: &OptimizerConfig,
    warm: &[PureState],
) -> Result<LambdaResult> {
    cfg.validate()?;
    let (shift, traceless) = a.split_trace();
    let (snapped, slack) = snap(traceless.entries());
    let obj = Objective {
        traceless: snapped,
        measure,
    };
    let opts = cfg.local_options();

    let screened = if cfg.screening_samples > 0 {
        screen(&obj, sense, cfg.screening_samples, cfg.seed)
    } else {
        Vec::new()
    };
    let screening_best = screened
        .first()
        .map(|(v, _)| shift + signed(sense, *v))
        .unwrap_or(f64::NAN);

    let restarts = cfg.effective_restarts();
    let mut starts: Vec<Vec<f64>> = (0..restarts)
        .map(|i| {
            let mut g = rng::from_seed(rng::derive_seed2(cfg.seed, TAG_RESTART, i as u64));
            haar_coords(&mut g).to_vec()
        })
        .collect();
    starts.extend(screened.iter().map(|(_, x)| x.to_vec()));
    starts.extend(warm.iter().map(|s| s.to_coords().to_vec()));

    let locals: Vec<Local> = starts
        .par_iter()
        .map(|x0| {
            let r = nelder_mead(|x| signed(sense, obj.at(x)), x0, &opts);
            Local {
                value: signed(sense, r.value),
                x: r.x,
                evals: r.evals,
                converged: r.converged,
            }
        })
        .collect();
    let mut locals = locals;
    if sense == Sense::Max {
        let mut order: Vec<usize> = (0..locals.len()).collect();
        order.sort_by(|&i, &j| locals[j].value.total_cmp(&locals[i].value));
        let polished: Vec<Local> = order
            .iter()
            .take(POLISH_CANDIDATES)
            .flat_map(|&i| (1..=3).map(move |lone| (i, lone)))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(i, lone)| {
                let from = PureState::from_coords(&locals[i].x).expect("restart ends at a nonzero vector");
                let mut l = product_polish(&obj.traceless, from.amplitudes(), lone);
                // Score with the full objective; the measure is zero only up to rounding.
                l.value = obj.at(&l.x);
                l
            })
            .collect();
        locals.extend(polished);
    }

    let better = |a: f64, b: f64| match sense {
        Sense::Max => a > b,
        Sense::Min => a < b,
    };
    let mut best_idx = 0;
    for (i, l) in locals.iter().enumerate() {
        if better(l.value, locals[best_idx].value) {
            best_idx = i;
        }
    }
    let best = &locals[best_idx];
    let witness = PureState::from_coords(&best.x)?;
    // Re-evaluate on the normalized witness; the slack keeps λ conservative for
    // the unsnapped operator.
    let value = shift + obj.at_amps(witness.amplitudes()) + signed(sense, -slack);

    let mut sorted: Vec<f64> = locals.iter().map(|l| l.value).collect();
    sorted.sort_by(|a, b| match sense {
        Sense::Max => b.total_cmp(a),
        Sense::Min => a.total_cmp(b),
    });
    let second = sorted.get(1).copied().unwrap_or(sorted[0]);
    let agreeing = sorted
        .iter()
        .filter(|v| (*v - sorted[0]).abs() <= AGREEMENT_TOL)
        .count();
    let converged_restarts = locals.iter().filter(|l| l.converged).count();
    let status = if agreeing >= 2 && locals[best_idx].converged {
        Status::Converged
    } else {
        Status::Caveat
    };

    Ok(LambdaResult {
        value,
        witness,
        diagnostics: Diagnostics {
            restarts: locals.len(),
            converged_restarts,
            best: value,
            second_best: shift + second,
            basin_gap: (sorted[0] - second).abs(),
            agreeing_restarts: agreeing,
            screening_samples: cfg.screening_samples,
            screening_best,
            evaluations: locals.iter().map(|l| l.evals).sum(),
            tolerance: cfg.tolerance,
            status,
        },
    })
}

/// λ_LB = max_ψ ⟨ψ|A|ψ⟩ − E(ψ).
pub fn lambda_lb(a: &HermitianOperator, measure: &dyn PureMeasure, cfg: &OptimizerConfig) -> Result<LambdaResult> {
    extremize(a, measure, Sense::Max, cfg, &[])
}

/// λ_UB = min_ψ ⟨ψ|A|ψ⟩ − E(ψ).
pub fn lambda_ub(a: &HermitianOperator, measure: &dyn PureMeasure, cfg: &OptimizerConfig) -> Result<LambdaResult> {
    extremize(a, measure, Sense::Min, cfg, &[])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    pub lb: Diagnostics,
    pub ub: Diagnostics,
}

/// An operator together with its calibrated fiber constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiberCalibration {
    pub measure: MeasureKind,
    pub lambda_lb: f64,
    pub lambda_ub: f64,
    pub operator: HermitianOperator,
    pub witness_lb: PureState,
    pub witness_ub: PureState,
    pub diagnostics: CalibrationDiagnostics,
}

impl FiberCalibration {
    pub fn has_caveat(&self) -> bool {
        self.diagnostics.lb.status == Status::Caveat || self.diagnostics.ub.status == Status::Caveat
    }

    /// ⟨ψ|A|ψ⟩ − E(ψ) at each stored witness.
    pub fn witness_values(&self) -> (f64, f64) {
        let f = |psi: &PureState| self.operator.expectation_pure(psi) - self.measure.evaluate(psi);
        (f(&self.witness_lb), f(&self.witness_ub))
    }
}

pub fn calibrate(a: &HermitianOperator, measure: MeasureKind, cfg: &OptimizerConfig) -> Result<FiberCalibration> {
    calibrate_with_starts(a, measure, cfg, &[])
}

/// Like [`calibrate`], with extra warm starts added to the random restarts.
pub fn calibrate_with_starts(
    a: &HermitianOperator,
    measure: MeasureKind,
    cfg: &OptimizerConfig,
    warm: &[PureState],
) -> Result<FiberCalibration> {
    let lb = extremize(a, &measure, Sense::Max, cfg, warm)?;
    let ub = extremize(a, &measure, Sense::Min, cfg, warm)?;
    Ok(FiberCalibration {
        measure,
        lambda_lb: lb.value,
        lambda_ub: ub.value,
        operator: a.clone(),
        witness_lb: lb.witness,
        witness_ub: ub.witness,
        diagnostics: CalibrationDiagnostics {
            lb: lb.diagnostics,
            ub: ub.diagnostics,
        },
    })
}

/// Bounds on E(ρ) implied by one measured expectation value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Before clamping to [0, 1].
    pub raw_lower: f64,
    pub raw_upper: f64,
    pub expectation: f64,
    pub expectation_stderr: f64,
    pub measure: MeasureKind,
}

impl BoundEstimate {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// lower = clamp(⟨A⟩ − λ_LB), upper = clamp(⟨A⟩ − λ_UB). The standard error
/// of ⟨A⟩ carries over unchanged to both bounds.
pub fn bounds(cal: &FiberCalibration, expectation: f64, stderr: f64) -> Result<BoundEstimate> {
    let raw_lower = expectation - cal.lambda_lb;
    let raw_upper = expectation - cal.lambda_ub;
    if raw_lower > raw_upper + 1e-8 {
        return Err(Error::CorruptCalibration(raw_lower - raw_upper));
    }
    Ok(BoundEstimate {
        lower: raw_lower.clamp(0.0, 1.0),
        upper: raw_upper.clamp(0.0, 1.0),
        raw_lower,
        raw_upper,
        expectation,
        expectation_stderr: stderr.max(0.0),
        measure: cal.measure,
    })
}

// ---------------------------------------------------------------------------
// Operator families and parameter tuning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorFamily {
    /// x|φ⟩⟨φ|
    PureProjector { state: PureState, x: f64 },
    /// x|φ1⟩⟨φ1| + y|φ2⟩⟨φ2|
    TwoProjectorMix {
        state1: PureState,
        state2: PureState,
        x: f64,
        y: f64,
    },
    /// x·ρ, typically a tomographic reconstruction.
    ScaledTomogram { rho: DensityMatrix, x: f64 },
}

impl OperatorFamily {
    pub fn realize(&self) -> HermitianOperator {
        match self {
            OperatorFamily::PureProjector { state, x } => HermitianOperator::projector(state, *x),
            OperatorFamily::TwoProjectorMix { state1, state2, x, y } => {
                HermitianOperator::projector(state1, *x).plus(&HermitianOperator::projector(state2, *y))
            }
            OperatorFamily::ScaledTomogram { rho, x } => {
                HermitianOperator::new(rho.matrix() * C64::new(*x, 0.0)).expect("density matrix is Hermitian")
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            OperatorFamily::PureProjector { x, .. } | OperatorFamily::ScaledTomogram { x, .. } => vec![*x],
            OperatorFamily::TwoProjectorMix { x, y, .. } => vec![*x, *y],
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let mut out = self.clone();
        match &mut out {
            OperatorFamily::PureProjector { x, .. } | OperatorFamily::ScaledTomogram { x, .. } => *x = p[0],
            OperatorFamily::TwoProjectorMix { x, y, .. } => {
                *x = p[0];
                *y = p[1];
            }
        }
        out
    }

    /// Minimal settings measuring every Pauli string any parameter value can
    /// need, so re-tuning never requires new data.
    pub fn support_settings(&self) -> Vec<MeasurementSetting> {
        let mut strings: Vec<PauliString> = self
            .unit_components()
            .iter()
            .flat_map(|c| c.support(SUPPORT_TOL))
            .filter(|s| !s.is_identity())
            .collect();
        strings.sort_by_key(|s| s.index());
        strings.dedup();
        minimal_cover(&strings)
    }

    /// Operators multiplying each scalar parameter (the family is linear in them).
    fn unit_components(&self) -> Vec<HermitianOperator> {
        match self {
            OperatorFamily::PureProjector { .. } | OperatorFamily::ScaledTomogram { .. } => {
                vec![self.with_params(&[1.0]).realize()]
            }
            OperatorFamily::TwoProjectorMix { .. } => vec![
                self.with_params(&[1.0, 0.0]).realize(),
                self.with_params(&[0.0, 1.0]).realize(),
            ],
        }
    }
}

/// Supplies ⟨A⟩ and its standard error for operators in a family's span.
/// Implementations backed by measured data must reuse the same data for
/// every parameter value.
pub trait ExpectationProvider: Sync {
    fn expectation(&self, a: &HermitianOperator) -> Result<(f64, f64)>;
}

/// Exact expectations on a known state.
impl ExpectationProvider for DensityMatrix {
    fn expectation(&self, a: &HermitianOperator) -> Result<(f64, f64)> {
        Ok((expectation(a, self), 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    MaximizeLb,
    MinimizeUb,
    MinimizeGap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Parameters are searched in [-max_abs, max_abs] on an asinh-spaced grid.
    pub max_abs: f64,
    pub grid_points_1d: usize,
    pub grid_points_2d: usize,
    /// Golden-section tolerance in asinh(parameter).
    pub refine_tol: f64,
    /// Random restarts per probe, on top of warm starts from earlier probes.
    pub probe_restarts: usize,
    pub probe_warm_starts: usize,
    pub probe_max_evals: usize,
    /// Multiples of the expectation's standard error charged against each
    /// bound during the scan.
    pub stderr_penalty: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            max_abs: 100.0,
            grid_points_1d: 41,
            grid_points_2d: 13,
            refine_tol: 2e-3,
            probe_restarts: 4,
            probe_warm_starts: 3,
            probe_max_evals: 4000,
            stderr_penalty: 3.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TuneConfig {
    pub scan: ScanConfig,
    /// Used for the final calibration of the chosen operator.
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneResult {
    pub family: OperatorFamily,
    pub mode: TuneMode,
    pub calibration: FiberCalibration,
    pub estimate: BoundEstimate,
    pub probes: usize,
}

/// Cheap warm-started λ evaluations used while scanning parameters.
/// Witnesses found at earlier probes seed later ones, since λ(x) is a
/// maximum of functions affine in x and nearby parameters share maximizers.
struct Prober<'a> {
    measure: &'a dyn PureMeasure,
    scan: &'a ScanConfig,
    seed: u64,
    pool: Vec<[f64; COORDS]>,
    calls: u64,
}

impl Prober<'_> {
    fn lambda(&mut self, a: &HermitianOperator, sense: Sense) -> f64 {
        let (shift, traceless) = a.split_trace();
        let obj = Objective {
            traceless: *traceless.entries(),
            measure: self.measure,
        };
        let mut ranked: Vec<(f64, usize)> = self
            .pool
            .iter()
            .enumerate()
            .map(|(i, x)| (signed(sense, obj.at(x)), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut starts: Vec<[f64; COORDS]> = ranked
            .iter()
            .take(self.scan.probe_warm_starts)
            .map(|&(_, i)| self.pool[i])
            .collect();
        self.calls += 1;
        for i in 0..self.scan.probe_restarts {
            let mut g = rng::from_seed(rng::derive_seed2(self.seed, TAG_PROBE, self.calls * 1024 + i as u64));
            starts.push(haar_coords(&mut g));
        }
        let opts = NelderMeadOptions {
            max_evals: self.scan.probe_max_evals,
            ftol: 1e-10,
            xtol: 1e-7,
            initial_step: 0.25,
            rebuilds: 2,
        };
        let results: Vec<(f64, Vec<f64>)> = starts
            .par_iter()
            .map(|x0| {
                let r = nelder_mead(|x| signed(sense, obj.at(x)), x0, &opts);
                (r.value, r.x)
            })
            .collect();
        let (best, x) = results
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one start");
        let mut coords = [0.0; COORDS];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (c, v) in coords.iter_mut().zip(&x) {
            *c = v / norm;
        }
        self.remember(coords);
        shift + signed(sense, best)
    }

    fn remember(&mut self, x: [f64; COORDS]) {
        const POOL: usize = 48;
        if self.pool.len() >= POOL {
            self.pool.remove(0);
        }
        self.pool.push(x);
    }
}

/// Chooses the scalar parameters of `template` for the selected objective,
/// then calibrates the chosen operator with the full optimizer.
///
/// Every probe re-uses the provider's data, so tuning adds no measurements.
pub fn tune_parameters(
    template: &OperatorFamily,
    measure: MeasureKind,
    provider: &dyn ExpectationProvider,
    mode: TuneMode,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    let scan = &cfg.scan;
    if scan.max_abs.is_nan() || scan.max_abs <= 0.0 || scan.grid_points_1d < 2 || scan.grid_points_2d < 2 {
        return Err(Error::EmptySearchRange);
    }
    cfg.optimizer.validate()?;

    let components = template.unit_components().len();
    let penalty = scan.stderr_penalty;

    let mut prober = Prober {
        measure: &measure,
        scan,
        seed: cfg.optimizer.seed,
        pool: Vec::new(),
        calls: 0,
    };

    // Objective to minimize, as a function of asinh-transformed parameters.
    // Bounds are penalized by their standard error so the scan cannot chase
    // statistical fluctuations of large operators.
    let mut failure: Option<Error> = None;
    let mut score = |u: &[f64]| -> f64 {
        let p: Vec<f64> = u.iter().map(|v| v.sinh()).collect();
        let op = template.with_params(&p).realize();
        let (e, se) = match provider.expectation(&op) {
            Ok(v) => v,
            Err(err) => {
                failure.get_or_insert(err);
                return f64::INFINITY;
            }
        };
        match mode {
            TuneMode::MaximizeLb => -(e - prober.lambda(&op, Sense::Max) - penalty * se),
            TuneMode::MinimizeUb => e - prober.lambda(&op, Sense::Min) + penalty * se,
            TuneMode::MinimizeGap => {
                let lo = (e - prober.lambda(&op, Sense::Max)).clamp(0.0, 1.0);
                let hi = (e - prober.lambda(&op, Sense::Min)).clamp(0.0, 1.0);
                hi - lo + 2.0 * penalty * se
            }
        }
    };

    let umax = scan.max_abs.asinh();
    let mut probes = 0usize;
    let best_u: Vec<f64> = match components {
        1 => {
            let n = scan.grid_points_1d;
            let step = 2.0 * umax / (n - 1) as f64;
            let grid: Vec<f64> = (0..n).map(|i| -umax + step * i as f64).collect();
            let values: Vec<f64> = grid.iter().map(|&u| score(&[u])).collect();
            probes += n;
            let (i, &v0) = argmin(&values);
            let lo = (grid[i] - step).max(-umax);
            let hi = (grid[i] + step).min(umax);
            let (u, v, k) = golden_min(|u| score(&[u]), lo, hi, scan.refine_tol);
            probes += k;
            if v < v0 {
                vec![u]
            } else {
                vec![grid[i]]
            }
        }
        _ => {
            let n = scan.grid_points_2d;
            let step = 2.0 * umax / (n - 1) as f64;
            let grid: Vec<f64> = (0..n).map(|i| -umax + step * i as f64).collect();
            let mut values = Vec::with_capacity(n * n);
            for &ux in &grid {
                for &uy in &grid {
                    values.push(score(&[ux, uy]));
                }
            }
            probes += n * n;
            let (k, &v0) = argmin(&values);
            let (ix, iy) = (k / n, k % n);
            let box_x = ((grid[ix] - step).max(-umax), (grid[ix] + step).min(umax));
            let box_y = ((grid[iy] - step).max(-umax), (grid[iy] + step).min(umax));
            // Nested golden sections: min over y of a jointly convex objective is convex in x.
            let tol = scan.refine_tol * 4.0;
            let mut best = (v0, vec![grid[ix], grid[iy]]);
            let mut inner_probes = 0usize;
            let (ux, _, kx) = golden_min(
                |ux| {
                    let (uy, v, ky) = golden_min(|uy| score(&[ux, uy]), box_y.0, box_y.1, tol);
                    inner_probes += ky;
                    if v < best.0 {
                        best = (v, vec![ux, uy]);
                    }
                    v
                },
                box_x.0,
                box_x.1,
                tol,
            );
            let _ = ux;
            probes += kx + inner_probes;
            best.1
        }
    };

    if let Some(err) = failure {
        return Err(err);
    }
    let params: Vec<f64> = best_u.iter().map(|u| u.sinh()).collect();
    let family = template.with_params(&params);
    let op = family.realize();
    let warm: Vec<PureState> = prober
        .pool
        .iter()
        .rev()
        .take(8)
        .filter_map(|x| PureState::from_coords(x).ok())
        .collect();
    let calibration = calibrate_with_starts(&op, measure, &cfg.optimizer, &warm)?;
    let (e, se) = provider.expectation(&op)?;
    let estimate = bounds(&calibration, e, se)?;
    Ok(TuneResult {
        family,
        mode,
        calibration,
        estimate,
        probes,
    })
}

fn argmin(values: &[f64]) -> (usize, &f64) {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid")
}
