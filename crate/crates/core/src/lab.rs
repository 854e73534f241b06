//! Simulated photonic experiment: wave-plate state preparation, depolarizing
//! noise, multinomial photon counts per measurement setting, expectation
//! estimation and projected linear-inversion tomography.
//!
//! All randomness flows from one master seed; per-setting and per-iteration
//! streams are derived from it, so identical inputs give identical counts
//! regardless of thread scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ExpectationProvider;
use crate::qstate::{
    hermitian_eigen, DensityMatrix, HermitianOperator, Matrix8, MeasurementSetting, PauliString, PureState, C64, DIM,
};
use crate::rng;

const PROBABILITY_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// State preparation

/// Half-wave plate angles in degrees. `theta3 = None` means the third plate
/// is unrestricted; it is evaluated at 0°.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePlateSettings {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: Option<f64>,
}

/// α|000⟩ + β sin2θ₂|110⟩ − β cos2θ₂(sin2θ₃|101⟩ − cos2θ₃|111⟩),
/// α = cos2θ₁, β = sin2θ₁.
pub fn prepared_pure_state(s: &WavePlateSettings) -> PureState {
    let (b, a) = (2.0 * s.theta1.to_radians()).sin_cos();
    let (s2, c2) = (2.0 * s.theta2.to_radians()).sin_cos();
    let (s3, c3) = (2.0 * s.theta3.unwrap_or(0.0).to_radians()).sin_cos();
    let mut amps = [0.0; DIM];
    amps[0b000] = a;
    amps[0b110] = b * s2;
    amps[0b101] = -b * c2 * s3;
    amps[0b111] = b * c2 * c3;
    PureState::from_real(amps).expect("coefficients have unit norm")
}

/// Bit flip on qubit 1 (the most significant bit).
pub fn flip_first_qubit(psi: &PureState) -> PureState {
    let a = psi.amplitudes();
    let flipped: [C64; DIM] = std::array::from_fn(|k| a[k ^ 0b100]);
    PureState::new(flipped).expect("permutation preserves the norm")
}

/// The five benchmark states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateId {
    #[serde(rename = "psi1")]
    Psi1,
    #[serde(rename = "psi2")]
    Psi2,
    #[serde(rename = "psi3")]
    Psi3,
    W,
    Bisep,
}

/// Wave-plate settings of a benchmark preparation with its reported fidelity and purity.
#[derive(Clone, Copy, Debug)]
pub struct PreparationRow {
    pub id: StateId,
    pub settings: WavePlateSettings,
    /// An extra half-wave plate flips qubit 1 after the main setup.
    pub flip_first: bool,
    pub fidelity: f64,
    pub purity: f64,
}

pub const PREPARATIONS: [PreparationRow; 5] = [
    PreparationRow {
        id: StateId::Psi1,
        settings: WavePlateSettings {
            theta1: 22.5,
            theta2: -18.0,
            theta3: Some(0.0),
        },
        flip_first: false,
        fidelity: 0.9840,
        purity: 0.9726,
    },
    PreparationRow {
        id: StateId::Psi2,
        settings: WavePlateSettings {
            theta1: 33.75,
            theta2: 0.0,
            theta3: Some(0.0),
        },
        flip_first: false,
        fidelity: 0.9829,
        purity: 0.9723,
    },
    PreparationRow {
        id: StateId::Psi3,
        settings: WavePlateSettings {
            theta1: 22.5,
            theta2: -22.5,
            theta3: Some(0.0),
        },
        flip_first: false,
        fidelity: 0.9848,
        purity: 0.9746,
    },
    PreparationRow {
        id: StateId::W,
        settings: WavePlateSettings {
            theta1: 27.37,
            theta2: 67.55,
            theta3: Some(45.0),
        },
        flip_first: true,
        fidelity: 0.9782,
        purity: 0.9626,
    },
    PreparationRow {
        id: StateId::Bisep,
        settings: WavePlateSettings {
            theta1: 22.5,
            theta2: 45.0,
            theta3: None,
        },
        flip_first: false,
        fidelity: 0.9937,
        purity: 0.9880,
    },
];

impl StateId {
    pub const ALL: [StateId; 5] = [StateId::Psi1, StateId::Psi2, StateId::Psi3, StateId::W, StateId::Bisep];

    pub fn as_str(self) -> &'static str {
        match self {
            StateId::Psi1 => "psi1",
            StateId::Psi2 => "psi2",
            StateId::Psi3 => "psi3",
            StateId::W => "W",
            StateId::Bisep => "Bisep",
        }
    }

    /// The ideal target state.
    pub fn target(self) -> PureState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut a = [0.0; DIM];
        match self {
            StateId::Psi1 => {
                let (s, c) = (std::f64::consts::PI / 5.0).sin_cos();
                a[0b000] = h;
                a[0b110] = h * c;
                a[0b111] = h * s;
            }
            StateId::Psi2 => {
                let (s, c) = (std::f64::consts::PI / 8.0).sin_cos();
                a[0b000] = c;
                a[0b111] = s;
            }
            StateId::Psi3 => {
                a[0b000] = h;
                a[0b110] = 0.5;
                a[0b111] = 0.5;
            }
            StateId::W => return PureState::w(),
            StateId::Bisep => return PureState::bisep(),
        }
        PureState::from_real(a).expect("unit norm")
    }

    pub fn row(self) -> &'static PreparationRow {
        PREPARATIONS.iter().find(|r| r.id == self).expect("every id has a row")
    }

    /// The state the wave-plate setup produces, including the optional flip.
    pub fn prepared(self) -> PureState {
        let row = self.row();
        let psi = prepared_pure_state(&row.settings);
        if row.flip_first {
            flip_first_qubit(&psi)
        } else {
            psi
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StateId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unknown {
                kind: "state",
                name: s.to_string(),
            })
    }
}

// ---------------------------------------------------------------------------
// Noise and mixtures

/// Global depolarizing channel ρ ↦ (1−η)ρ + η𝟙/8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub eta: f64,
}

impl NoiseModel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::OutOfRange {
                name: "eta",
                value: eta,
                range: "[0, 1]",
            });
        }
        Ok(Self { eta })
    }

    /// The noise level giving a pure state this purity.
    pub fn for_purity(purity: f64) -> Result<Self> {
        Self::new(eta_for_purity(purity)?)
    }

    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix::mixture(&[(1.0 - self.eta, rho), (self.eta, &DensityMatrix::maximally_mixed())])
            .expect("weights are a valid mixture")
    }
}

pub fn add_depolarizing(psi: &PureState, eta: f64) -> Result<DensityMatrix> {
    Ok(NoiseModel::new(eta)?.apply(&psi.to_density()))
}

/// Solves (1−η)² + 2(1−η)η/8 + η²/8 = purity for η ∈ [0, 1].
pub fn eta_for_purity(purity: f64) -> Result<f64> {
    if !(0.125..=1.0).contains(&purity) {
        return Err(Error::OutOfRange {
            name: "purity",
            value: purity,
            range: "[1/8, 1]",
        });
    }
    // 7η²/8 − 7η/4 + (1 − purity) = 0, smaller root.
    Ok((1.0 - (1.0 - 8.0 / 7.0 * (1.0 - purity)).max(0.0).sqrt()).clamp(0.0, 1.0))
}

/// (1−p)|Bisep⟩⟨Bisep| + p|W⟩⟨W|
pub fn mixed_state(p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
            range: "[0, 1]",
        });
    }
    DensityMatrix::mixture(&[
        (1.0 - p, &PureState::bisep().to_density()),
        (p, &PureState::w().to_density()),
    ])
}

// ---------------------------------------------------------------------------
// Counts

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountsRecord {
    pub setting: MeasurementSetting,
    pub shots: u64,
    /// Outcome k uses the same bit order as the computational basis:
    /// bit value 0 is the + eigenvector.
    pub counts: [u64; DIM],
    pub seed: u64,
}

impl CountsRecord {
    pub fn new(setting: MeasurementSetting, shots: u64, counts: [u64; DIM], seed: u64) -> Result<Self> {
        let sum: u64 = counts.iter().sum();
        if sum != shots || shots == 0 {
            return Err(Error::CountsMismatch { sum, shots });
        }
        Ok(Self {
            setting,
            shots,
            counts,
            seed,
        })
    }

    pub fn frequencies(&self) -> Frequencies {
        let n = self.shots as f64;
        Frequencies {
            setting: self.setting,
            freqs: self.counts.map(|c| c as f64 / n),
            shots: Some(self.shots),
        }
    }
}

/// Outcome frequencies of one setting. `shots = None` marks exact probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Frequencies {
    pub setting: MeasurementSetting,
    pub freqs: [f64; DIM],
    pub shots: Option<u64>,
}

/// The noiseless limit of a setting's counts.
pub fn exact_frequencies(rho: &DensityMatrix, setting: MeasurementSetting) -> Frequencies {
    Frequencies {
        setting,
        freqs: setting.outcome_probabilities(rho),
        shots: None,
    }
}

fn multinomial(probs: &[f64; DIM], shots: u64, g: &mut rng::Rng) -> [u64; DIM] {
    let mut counts = [0u64; DIM];
    let mut left = shots;
    let mut mass = 1.0;
    for k in 0..DIM - 1 {
        if left == 0 {
            break;
        }
        let p = if mass > 0.0 {
            (probs[k] / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = Binomial::new(left, p).expect("p in [0, 1]").sample(g);
        counts[k] = c;
        left -= c;
        mass -= probs[k];
    }
    counts[DIM - 1] += left;
    counts
}

/// Multinomial photon counts for one setting, deterministic given `seed`.
pub fn sample_counts(rho: &DensityMatrix, setting: MeasurementSetting, shots: u64, seed: u64) -> Result<CountsRecord> {
    if shots == 0 {
        return Err(Error::CountsMismatch { sum: 0, shots: 0 });
    }
    let mut probs = setting.outcome_probabilities(rho);
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::BadProbabilities(total));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    let mut g = rng::from_seed(seed);
    let counts = multinomial(&probs, shots, &mut g);
    CountsRecord::new(setting, shots, counts, seed)
}

/// Counts for several settings; setting `s` uses the stream derived from
/// (`master_seed`, index of `s`).
pub fn simulate(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    shots: u64,
    master_seed: u64,
) -> Result<Vec<CountsRecord>> {
    settings
        .par_iter()
        .map(|s| sample_counts(rho, *s, shots, rng::derive_seed(master_seed, s.index() as u64)))
        .collect()
}

pub fn simulate_all_settings(rho: &DensityMatrix, shots: u64, master_seed: u64) -> Result<Vec<CountsRecord>> {
    let all: Vec<MeasurementSetting> = MeasurementSetting::all().collect();
    simulate(rho, &all, shots, master_seed)
}

const CSV_HEADER: [&str; 11] = [
    "setting", "shots", "c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "seed",
];

pub fn write_counts_csv<W: Write>(out: W, records: &[CountsRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row = vec![r.setting.to_string(), r.shots.to_string()];
        row.extend(r.counts.iter().map(|c| c.to_string()));
        row.push(r.seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(input: R) -> Result<Vec<CountsRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!(
            "unexpected counts header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| -> Result<u64> {
            row[i]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad integer `{}` in counts file", &row[i])))
        };
        let setting: MeasurementSetting = row[0].trim().parse()?;
        let counts: [u64; DIM] = std::array::from_fn(|k| num(2 + k).unwrap_or(u64::MAX));
        if counts.contains(&u64::MAX) {
            return Err(Error::Config("bad count in counts file".into()));
        }
        out.push(CountsRecord::new(setting, num(1)?, counts, num(10)?)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Expectations

/// Merges frequencies of repeated settings (weighted by shots).
fn merge(data: &[Frequencies]) -> Vec<Frequencies> {
    let mut by: BTreeMap<usize, Frequencies> = BTreeMap::new();
    for d in data {
        by.entry(d.setting.index())
            .and_modify(|acc| match (acc.shots, d.shots) {
                (Some(a), Some(b)) => {
                    let (na, nb) = (a as f64, b as f64);
                    for k in 0..DIM {
                        acc.freqs[k] = (acc.freqs[k] * na + d.freqs[k] * nb) / (na + nb);
                    }
                    acc.shots = Some(a + b);
                }
                // Exact data dominates sampled data.
                (Some(_), None) => *acc = d.clone(),
                _ => {}
            })
            .or_insert_with(|| d.clone());
    }
    by.into_values().collect()
}

/// ⟨A⟩ with its standard error from per-setting frequencies.
///
/// Each non-identity Pauli string in the support of A is read from the first
/// setting (in index order) covering it. Strings sharing a setting are
/// combined into one outcome function g(k), so the multinomial correlation
/// between them is exact: Var = (E[g²] − E[g]²)/shots per setting.
pub fn estimate_from_frequencies(data: &[Frequencies], a: &HermitianOperator) -> Result<(f64, f64)> {
    let data = merge(data);
    let mut g: Vec<[f64; DIM]> = vec![[0.0; DIM]; data.len()];
    let mut value = a.coeff(PauliString::IDENTITY);
    for s in PauliString::all().filter(|s| !s.is_identity()) {
        let c = a.coeff(s);
        if c == 0.0 {
            continue;
        }
        let Some(j) = data.iter().position(|d| d.setting.covers(s)) else {
            if c.abs() > crate::qstate::SUPPORT_TOL {
                return Err(Error::MissingSetting(s.to_string()));
            }
            continue;
        };
        for (k, gk) in g[j].iter_mut().enumerate() {
            *gk += c * s.outcome_sign(k);
        }
    }
    let mut var = 0.0;
    for (d, gj) in data.iter().zip(&g) {
        let mean: f64 = (0..DIM).map(|k| d.freqs[k] * gj[k]).sum();
        value += mean;
        if let Some(n) = d.shots {
            let second: f64 = (0..DIM).map(|k| d.freqs[k] * gj[k] * gj[k]).sum();
            var += (second - mean * mean).max(0.0) / n as f64;
        }
    }
    Ok((value, var.sqrt()))
}

pub fn estimate_expectation(records: &[CountsRecord], a: &HermitianOperator) -> Result<(f64, f64)> {
    let data: Vec<Frequencies> = records.iter().map(CountsRecord::frequencies).collect();
    estimate_from_frequencies(&data, a)
}

/// Measured counts acting as the expectation source for parameter tuning.
pub struct MeasuredExpectations<'a> {
    pub records: &'a [CountsRecord],
}

impl ExpectationProvider for MeasuredExpectations<'_> {
    fn expectation(&self, a: &HermitianOperator) -> Result<(f64, f64)> {
        estimate_expectation(self.records, a)
    }
}

// ---------------------------------------------------------------------------
// Tomography

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TomographyResult {
    pub rho_hat: DensityMatrix,
    /// Monte Carlo standard deviations of the real and imaginary parts of each entry.
    pub mc_std_re: [[f64; DIM]; DIM],
    pub mc_std_im: [[f64; DIM]; DIM],
    pub iterations: usize,
    /// Reconstructions from the resampled counts.
    #[serde(skip)]
    pub replicas: Vec<DensityMatrix>,
}

impl TomographyResult {
    /// Monte Carlo standard deviation of a scalar functional of the state.
    pub fn mc_std_of<F: Fn(&DensityMatrix) -> f64>(&self, f: F) -> f64 {
        std_dev(self.replicas.iter().map(f))
    }
}

fn std_dev<I: Iterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// ρ_lin = (1/8) Σ_s ⟨σ_s⟩ σ_s, each ⟨σ_s⟩ pooled over every setting covering s.
pub fn linear_inversion(data: &[Frequencies]) -> Result<Matrix8> {
    let data = merge(data);
    let missing = MeasurementSetting::COUNT - data.len();
    if missing > 0 {
        return Err(Error::IncompleteTomography(missing));
    }
    let mut coeffs = [0.0; PauliString::COUNT];
    for s in PauliString::all() {
        let (mut sum, mut weight) = (0.0, 0.0);
        for d in data.iter().filter(|d| d.setting.covers(s)) {
            let w = d.shots.map_or(1.0, |n| n as f64);
            let e: f64 = (0..DIM).map(|k| d.freqs[k] * s.outcome_sign(k)).sum();
            sum += w * e;
            weight += w;
        }
        coeffs[s.index()] = sum / weight / DIM as f64;
    }
    Ok(*HermitianOperator::from_pauli(&coeffs).entries())
}

/// Nearest unit-trace PSD matrix in the eigenbasis: negative weight is
/// removed from the smallest eigenvalues and spread evenly over the rest.
pub fn project_to_density(m: &Matrix8) -> DensityMatrix {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let (mut mu, v) = hermitian_eigen(&h);
    let tr: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x += (1.0 - tr) / DIM as f64);
    // Ascending order: walk up from the smallest eigenvalue.
    let mut acc = 0.0;
    let mut i = 0;
    while i < DIM {
        let remaining = (DIM - i) as f64;
        if mu[i] + acc / remaining < 0.0 {
            acc += mu[i];
            mu[i] = 0.0;
            i += 1;
        } else {
            break;
        }
    }
    let remaining = (DIM - i) as f64;
    for x in mu.iter_mut().skip(i) {
        *x += acc / remaining;
    }
    let d = Matrix8::from_diagonal(&nalgebra::SVector::<C64, DIM>::from_fn(|k, _| {
        C64::new(mu[k].max(0.0), 0.0)
    }));
    let rho = v * d * v.adjoint();
    DensityMatrix::new(rho).expect("projection yields a density matrix")
}

/// Projected linear inversion without Monte Carlo.
pub fn reconstruct(data: &[Frequencies]) -> Result<DensityMatrix> {
    Ok(project_to_density(&linear_inversion(data)?))
}

/// Tomography from all 27 settings. Uncertainties come from `iterations`
/// parametric resamples of every setting's counts from its observed
/// frequencies; resample t of setting s uses the stream (seed, t, s).
pub fn tomography(records: &[CountsRecord], iterations: usize, seed: u64) -> Result<TomographyResult> {
    let data: Vec<Frequencies> = records.iter().map(CountsRecord::frequencies).collect();
    let rho_hat = reconstruct(&data)?;
    let merged = merge(&data);
    let replicas: Vec<DensityMatrix> = (0..iterations)
        .into_par_iter()
        .map(|t| {
            let resampled: Vec<Frequencies> = merged
                .iter()
                .map(|d| {
                    let n = d.shots.unwrap_or(0);
                    if n == 0 {
                        return d.clone();
                    }
                    let mut g = rng::from_seed(rng::derive_seed2(seed, t as u64, d.setting.index() as u64));
                    let counts = multinomial(&d.freqs, n, &mut g);
                    Frequencies {
                        setting: d.setting,
                        freqs: counts.map(|c| c as f64 / n as f64),
                        shots: Some(n),
                    }
                })
                .collect();
            reconstruct(&resampled)
        })
        .collect::<Result<_>>()?;
    let entry_std = |f: &dyn Fn(C64) -> f64| -> [[f64; DIM]; DIM] {
        std::array::from_fn(|r| std::array::from_fn(|c| std_dev(replicas.iter().map(|x| f(x.entry(r, c))))))
    };
    Ok(TomographyResult {
        mc_std_re: entry_std(&|z| z.re),
        mc_std_im: entry_std(&|z| z.im),
        rho_hat,
        iterations,
        replicas,
    })
}

/// Simulation parameters shared by the reproduction pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub shots_per_setting: u64,
    pub mc_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 20_240_101,
            shots_per_setting: 10_000,
            mc_iterations: 200,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{fill, gmc};
    use crate::qstate::{expectation, fidelity, purity, Pauli};

    fn setting(s: &str) -> MeasurementSetting {
        s.parse().unwrap()
    }

    #[test]
    fn bisep_row_prepares_bisep() {
        let psi = prepared_pure_state(&StateId::Bisep.row().settings);
        assert!((psi.overlap(&PureState::bisep()) - 1.0).abs() < 1e-12);
        // The unrestricted plate really is irrelevant.
        let other = prepared_pure_state(&WavePlateSettings {
            theta3: Some(17.0),
            ..StateId::Bisep.row().settings
        });
        assert!((other.overlap(&psi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi2_row_matches_measures() {
        let psi = prepared_pure_state(&WavePlateSettings {
            theta1: 33.75,
            theta2: 0.0,
            theta3: Some(0.0),
        });
        let (s, c) = (std::f64::consts::PI / 8.0).sin_cos();
        assert!((psi.amplitudes()[0].re - s).abs() < 1e-12);
        assert!((psi.amplitudes()[7].re - c).abs() < 1e-12);
        assert!((fill(&psi) - fill(&StateId::Psi2.target())).abs() < 1e-9);
    }

    #[test]
    fn w_row_needs_the_flip() {
        let psi = StateId::W.prepared();
        assert!(psi.overlap(&PureState::w()) >= 0.999);
        assert!(prepared_pure_state(&StateId::W.row().settings).overlap(&PureState::w()) < 0.01);
    }

    #[test]
    fn flips() {
        assert_eq!(flip_first_qubit(&PureState::basis(0)), PureState::basis(4));
        let flipped_ghz = flip_first_qubit(&PureState::ghz());
        let mut a = [0.0; DIM];
        a[0b100] = std::f64::consts::FRAC_1_SQRT_2;
        a[0b011] = std::f64::consts::FRAC_1_SQRT_2;
        assert!((flipped_ghz.overlap(&PureState::from_real(a).unwrap()) - 1.0).abs() < 1e-12);
        assert!((fill(&flipped_ghz) - 1.0).abs() < 1e-12);
        let mut g = rng::stream(1, 0);
        let psi = PureState::haar(&mut g);
        assert!((flip_first_qubit(&flip_first_qubit(&psi)).overlap(&psi) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn prepared_states_are_normalized() {
        let mut g = rng::stream(2, 0);
        use rand::Rng;
        for _ in 0..100 {
            let s = WavePlateSettings {
                theta1: g.random_range(-90.0..90.0),
                theta2: g.random_range(-90.0..90.0),
                theta3: Some(g.random_range(-90.0..90.0)),
            };
            let amps = prepared_pure_state(&s);
            let norm: f64 = amps.amplitudes().iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn state_ids_parse() {
        for id in StateId::ALL {
            assert_eq!(id.as_str().parse::<StateId>().unwrap(), id);
        }
        assert_eq!("w".parse::<StateId>().unwrap(), StateId::W);
        assert!("ghz".parse::<StateId>().is_err());
    }

    #[test]
    fn mixtures() {
        assert!((mixed_state(0.0).unwrap().matrix() - PureState::bisep().projector()).norm() < 1e-15);
        assert!((mixed_state(1.0).unwrap().matrix() - PureState::w().projector()).norm() < 1e-15);
        assert!((purity(&mixed_state(0.5).unwrap()) - 0.5).abs() < 1e-12);
        assert!(mixed_state(1.5).is_err());
    }

    #[test]
    fn depolarizing() {
        let psi = StateId::Psi1.target();
        assert!((purity(&add_depolarizing(&psi, 0.0).unwrap()) - 1.0).abs() < 1e-12);
        let full = add_depolarizing(&psi, 1.0).unwrap();
        assert!(full.frobenius_distance(&DensityMatrix::maximally_mixed()) < 1e-15);
        assert!(add_depolarizing(&psi, -0.1).is_err());

        let eta = eta_for_purity(0.9726).unwrap();
        let rho = add_depolarizing(&psi, eta).unwrap();
        assert!((purity(&rho) - 0.9726).abs() < 1e-12);
        let f = fidelity(&psi, &rho);
        assert!((f - (1.0 - eta + eta / 8.0)).abs() < 1e-12);
        assert!((f - 0.98).abs() < 0.01);
    }

    #[test]
    fn pure_counts_are_deterministic() {
        let rho = PureState::basis(0).to_density();
        let r = sample_counts(&rho, setting("zzz"), 1000, 5).unwrap();
        assert_eq!(r.counts[0], 1000);
        assert_eq!(
            sample_counts(&rho, setting("xyz"), 500, 9).unwrap(),
            sample_counts(&rho, setting("xyz"), 500, 9).unwrap()
        );
        assert!(sample_counts(&rho, setting("zzz"), 0, 1).is_err());
    }

    #[test]
    fn maximally_mixed_counts_are_uniform() {
        let r = sample_counts(&DensityMatrix::maximally_mixed(), setting("xzy"), 100_000, 3).unwrap();
        let expected = 100_000.0 / 8.0;
        let chi2: f64 = r.counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of χ² with 7 degrees of freedom.
        assert!(chi2 < 24.32, "{chi2}");
    }

    #[test]
    fn ghz_stabilizer() {
        let rho = PureState::ghz().to_density();
        let shots = 4000;
        let r = sample_counts(&rho, setting("xxx"), shots, 4).unwrap();
        let xxx = PauliString([Pauli::X; 3]);
        let (v, _) = estimate_expectation(&[r], &HermitianOperator::from_pauli(&unit(xxx))).unwrap();
        assert!((v - 1.0).abs() <= 3.0 / (shots as f64).sqrt());
    }

    fn unit(s: PauliString) -> [f64; PauliString::COUNT] {
        let mut c = [0.0; PauliString::COUNT];
        c[s.index()] = 1.0;
        c
    }

    #[test]
    fn identity_expectation_is_exact() {
        let records = simulate(&mixed_state(0.3).unwrap(), &[setting("zzz")], 100, 1).unwrap();
        assert_eq!(
            estimate_expectation(&records, &HermitianOperator::identity()).unwrap(),
            (1.0, 0.0)
        );
        assert_eq!(
            estimate_expectation(&[], &HermitianOperator::identity()).unwrap(),
            (1.0, 0.0)
        );
    }

    #[test]
    fn zz_on_bisep() {
        let rho = PureState::bisep().to_density();
        let zz0 = HermitianOperator::from_pauli(&unit("zz0".parse().unwrap()));
        let records = simulate(&rho, &[setting("zzx")], 1000, 2).unwrap();
        let (v, se) = estimate_expectation(&records, &zz0).unwrap();
        assert!((v - 1.0).abs() <= se.max(1e-12));
    }

    #[test]
    fn missing_setting_is_reported() {
        let rho = PureState::w().to_density();
        let records = simulate(&rho, &[setting("zzz")], 100, 2).unwrap();
        let a = HermitianOperator::projector(&PureState::w(), 1.0);
        assert!(matches!(
            estimate_expectation(&records, &a),
            Err(Error::MissingSetting(_))
        ));
    }

    #[test]
    fn w_expectation_on_mixture() {
        let p = 0.4;
        let rho = mixed_state(p).unwrap();
        let a = HermitianOperator::projector(&PureState::w(), 1.0);
        let settings = crate::qstate::required_settings(&a, 1e-9);
        let records = simulate(&rho, &settings, 100_000, 8).unwrap();
        let (v, se) = estimate_expectation(&records, &a).unwrap();
        assert!(se > 0.0);
        assert!((v - p).abs() < 5.0 * se, "{v} ± {se}");
        assert!((expectation(&a, &rho) - p).abs() < 1e-12);
    }

    #[test]
    fn exact_tomography_is_exact() {
        let mut g = rng::stream(3, 0);
        let rho = DensityMatrix::random(&mut g, 3);
        let data: Vec<Frequencies> = MeasurementSetting::all().map(|s| exact_frequencies(&rho, s)).collect();
        assert!(reconstruct(&data).unwrap().frobenius_distance(&rho) < 1e-9);
    }

    #[test]
    fn tomography_needs_every_setting() {
        let rho = DensityMatrix::maximally_mixed();
        let records = simulate(&rho, &[setting("zzz"), setting("xxx")], 10, 1).unwrap();
        assert!(matches!(
            tomography(&records, 0, 1),
            Err(Error::IncompleteTomography(25))
        ));
    }

    #[test]
    fn projection_fixes_negative_spectrum() {
        let mut m = Matrix8::zeros();
        m[(0, 0)] = C64::new(1.1, 0.0);
        m[(1, 1)] = C64::new(-0.1, 0.0);
        let rho = project_to_density(&m);
        assert!((rho.entry(0, 0).re - 1.0).abs() < 1e-12);
        assert!(rho.entry(1, 1).re.abs() < 1e-12);
        // A valid state is left alone.
        let w = PureState::w().to_density();
        assert!(project_to_density(w.matrix()).frobenius_distance(&w) < 1e-12);
    }

    #[test]
    fn counts_csv_round_trip() {
        let rho = mixed_state(0.5).unwrap();
        let records = simulate_all_settings(&rho, 50, 7).unwrap();
        let mut buf = Vec::new();
        write_counts_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("setting,shots,c0,c1,c2,c3,c4,c5,c6,c7,seed\nxxx,50,"));
        assert_eq!(read_counts_csv(buf.as_slice()).unwrap(), records);
        assert!(read_counts_csv("setting,shots\nxxx,1\n".as_bytes()).is_err());
        assert!(
            read_counts_csv("setting,shots,c0,c1,c2,c3,c4,c5,c6,c7,seed\nxxx,5,1,1,1,1,1,1,1,1,0\n".as_bytes())
                .is_err()
        );
    }

    #[test]
    fn gmc_of_targets() {
        assert!((gmc(&StateId::Psi2.target()) - 0.5).abs() < 1e-12);
    }
}
