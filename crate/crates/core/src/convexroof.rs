//! Convex-roof oracle: E(ρ) = min Σ_j w_j E(ψ_j) over decompositions of ρ.
//!
//! Every decomposition with m elements arises from an m×r isometry `U`
//! acting on the spectral vectors, `√w_j ψ_j = Σ_i U_{ji} √λ_i v_i`. The
//! search writes `U = exp(iH)·U₀` for a Hermitian m×m `H` and a base
//! isometry `U₀`, so warm starts are simply `H = 0` around a known `U₀`.
//!
//! The result is an upper estimate of the roof: local search can miss the
//! global minimum, never undershoot it.

use nalgebra::DMatrix;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::PureMeasure;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::qstate::{DensityMatrix, Matrix8, PureState, C64, DIM};
use crate::rng;

/// Eigenvalues below this are dropped when computing the rank.
pub const RANK_CUTOFF: f64 = 1e-10;
const ISOMETRY_TOL: f64 = 1e-10;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const ZERO_VALUE: f64 = 1e-14;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub weights: Vec<f64>,
    pub states: Vec<PureState>,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn reconstruct(&self) -> Matrix8 {
        self.weights
            .iter()
            .zip(&self.states)
            .fold(Matrix8::zeros(), |acc, (w, s)| acc + s.projector() * C64::new(*w, 0.0))
    }

    /// Σ_j w_j E(ψ_j)
    pub fn average(&self, measure: &dyn PureMeasure) -> f64 {
        self.weights
            .iter()
            .zip(&self.states)
            .map(|(w, s)| w * measure.evaluate(s))
            .sum()
    }
}

/// Spectral data of ρ restricted to its support: rows are √λ_i v_i.
struct Spectrum {
    rows: Vec<[C64; DIM]>,
}

impl Spectrum {
    fn of(rho: &DensityMatrix) -> Self {
        let (values, vectors) = rho.eigen();
        let kept: Vec<usize> = (0..DIM).rev().filter(|&i| values[i] > RANK_CUTOFF).collect();
        let total: f64 = kept.iter().map(|&i| values[i]).sum();
        let rows = kept
            .iter()
            .map(|&i| {
                let s = (values[i] / total).sqrt();
                std::array::from_fn(|k| vectors[(k, i)] * s)
            })
            .collect();
        Self { rows }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Unnormalized decomposition vectors φ_j = Σ_i U_{ji} √λ_i v_i.
    fn vectors(&self, u: &DMatrix<C64>) -> Vec<[C64; DIM]> {
        (0..u.nrows())
            .map(|j| {
                let mut phi = [C64::new(0.0, 0.0); DIM];
                for (i, row) in self.rows.iter().enumerate() {
                    let c = u[(j, i)];
                    for k in 0..DIM {
                        phi[k] += c * row[k];
                    }
                }
                phi
            })
            .collect()
    }

    fn average(&self, u: &DMatrix<C64>, measure: &dyn PureMeasure) -> f64 {
        self.vectors(u)
            .iter()
            .map(|phi| {
                let w: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
                if w < 1e-300 {
                    return 0.0;
                }
                let inv = w.sqrt().recip();
                let amps: [C64; DIM] = std::array::from_fn(|k| phi[k] * inv);
                w * measure.evaluate_normalized(&amps)
            })
            .sum()
    }

    fn decomposition(&self, u: &DMatrix<C64>) -> Decomposition {
        let mut weights = Vec::with_capacity(u.nrows());
        let mut states = Vec::with_capacity(u.nrows());
        for phi in self.vectors(u) {
            let w: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
            weights.push(w);
            // A zero-weight element carries no information; any state will do.
            states.push(PureState::new(phi).unwrap_or_else(|_| PureState::basis(0)));
        }
        Decomposition { weights, states }
    }

    /// Isometry reproducing a given decomposition, if it decomposes this ρ.
    fn isometry_for(&self, d: &Decomposition) -> Option<DMatrix<C64>> {
        let r = self.rank();
        let mut u = DMatrix::<C64>::zeros(d.len(), r);
        for (j, (w, s)) in d.weights.iter().zip(&d.states).enumerate() {
            for (i, row) in self.rows.iter().enumerate() {
                let norm2: f64 = row.iter().map(|z| z.norm_sqr()).sum();
                // ⟨v_i|φ_j⟩ / √λ_i with φ_j = √w_j ψ_j.
                let ip: C64 = row.iter().zip(s.amplitudes()).map(|(a, b)| a.conj() * b).sum();
                u[(j, i)] = ip * w.max(0.0).sqrt() / norm2;
            }
        }
        (isometry_defect(&u) < 1e-6).then(|| orthonormalize(&u))
    }
}

fn isometry_defect(u: &DMatrix<C64>) -> f64 {
    let g = u.adjoint() * u;
    (g - DMatrix::<C64>::identity(u.ncols(), u.ncols())).norm()
}

/// Nearest isometry (polar factor) of a nearly isometric matrix.
fn orthonormalize(u: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = u.clone().svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

/// Decomposition induced by an m×r isometry on the spectral decomposition of ρ.
pub fn decomposition_from_isometry(rho: &DensityMatrix, u: &DMatrix<C64>) -> Result<Decomposition> {
    let spec = Spectrum::of(rho);
    if u.ncols() != spec.rank() {
        return Err(Error::RankMismatch {
            rank: spec.rank(),
            found: u.ncols(),
        });
    }
    let defect = isometry_defect(u);
    if defect > ISOMETRY_TOL {
        return Err(Error::NotIsometry(defect));
    }
    Ok(spec.decomposition(u))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoofConfig {
    /// Random starts per decomposition size.
    pub starts: usize,
    /// Largest decomposition size; defaults to twice the rank.
    pub m_max: Option<usize>,
    pub max_evals: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RoofConfig {
    fn default() -> Self {
        Self {
            starts: 50,
            m_max: None,
            max_evals: 20_000,
            tolerance: 1e-10,
            seed: 0x0f00d,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub m: usize,
    pub value: f64,
    pub starts: usize,
    pub converged_starts: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoofResult {
    /// Upper estimate of the convex roof.
    pub value: f64,
    pub best: Decomposition,
    pub m_used: usize,
    pub rank: usize,
    pub stages: Vec<StageReport>,
    /// False if no start at the winning size met the tolerance.
    pub converged: bool,
}

pub fn convex_roof(rho: &DensityMatrix, measure: &dyn PureMeasure, cfg: &RoofConfig) -> Result<RoofResult> {
    convex_roof_with_seeds(rho, measure, cfg, &[])
}

/// Like [`convex_roof`], additionally starting from caller-supplied
/// decompositions of ρ (ignored if they do not decompose ρ).
pub fn convex_roof_with_seeds(
    rho: &DensityMatrix,
    measure: &dyn PureMeasure,
    cfg: &RoofConfig,
    seeds: &[Decomposition],
) -> Result<RoofResult> {
    if cfg.starts == 0 {
        return Err(Error::Config("roof search needs at least one start".into()));
    }
    let spec = Spectrum::of(rho);
    let r = spec.rank();
    let m_max = cfg.m_max.unwrap_or(2 * r).max(r);
    let seed_isometries: Vec<DMatrix<C64>> = seeds.iter().filter_map(|d| spec.isometry_for(d)).collect();

    let mut stages = Vec::new();
    let mut best: Option<(f64, DMatrix<C64>, bool)> = None;
    let mut carried: Option<DMatrix<C64>> = None;

    for m in r..=m_max {
        let mut bases: Vec<DMatrix<C64>> = Vec::new();
        bases.push(embed(&DMatrix::identity(r, r), m));
        if let Some(prev) = &carried {
            bases.push(embed(prev, m));
        }
        bases.extend(seed_isometries.iter().filter(|u| u.nrows() <= m).map(|u| embed(u, m)));
        for s in 0..cfg.starts {
            let mut g = rng::from_seed(rng::derive_seed2(cfg.seed, m as u64, s as u64));
            bases.push(haar_isometry(&mut g, m, r));
        }

        // The measure is nonnegative, so a start already at zero is optimal.
        if let Some(u0) = bases.iter().find(|u| spec.average(u, measure) <= ZERO_VALUE) {
            stages.push(StageReport {
                m,
                value: spec.average(u0, measure),
                starts: bases.len(),
                converged_starts: 1,
                evaluations: bases.len(),
            });
            best = Some((0.0, u0.clone(), true));
            break;
        }

        let opts = NelderMeadOptions {
            max_evals: cfg.max_evals,
            ftol: cfg.tolerance,
            xtol: 1e-6,
            initial_step: 0.3,
            rebuilds: 4,
        };
        let runs: Vec<(f64, DMatrix<C64>, bool, usize)> = bases
            .par_iter()
            .map(|u0| {
                let f = |p: &[f64]| spec.average(&rotate(p, u0), measure);
                let res = nelder_mead(f, &vec![0.0; m * m], &opts);
                (res.value, rotate(&res.x, u0), res.converged, res.evals)
            })
            .collect();

        let (idx, _) = runs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("at least one start");
        let (value, u, conv, _) = runs[idx].clone();
        stages.push(StageReport {
            m,
            value,
            starts: runs.len(),
            converged_starts: runs.iter().filter(|r| r.2).count(),
            evaluations: runs.iter().map(|r| r.3).sum(),
        });
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, u.clone(), conv));
        }
        carried = Some(u);
    }

    let (_, u, converged) = best.expect("at least one stage");
    let decomposition = spec.decomposition(&u);
    let err = (decomposition.reconstruct() - rho.matrix()).norm();
    if err > RECONSTRUCTION_TOL {
        return Err(Error::Reconstruction(err));
    }
    let value = decomposition.average(measure).clamp(0.0, 1.0);
    Ok(RoofResult {
        value,
        m_used: decomposition.len(),
        best: decomposition,
        rank: r,
        stages,
        converged,
    })
}

/// Pads an isometry with zero rows to m rows.
fn embed(u: &DMatrix<C64>, m: usize) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(m, u.ncols());
    out.view_mut((0, 0), (u.nrows(), u.ncols())).copy_from(u);
    out
}

/// exp(iH)·U₀ with H Hermitian, built from m² reals: the diagonal first,
/// then (re, im) of each upper-triangular entry.
fn rotate(p: &[f64], u0: &DMatrix<C64>) -> DMatrix<C64> {
    let m = u0.nrows();
    let mut ih = DMatrix::<C64>::zeros(m, m);
    let mut k = m;
    for a in 0..m {
        ih[(a, a)] = C64::new(0.0, p[a]);
        for b in a + 1..m {
            let z = C64::new(p[k], p[k + 1]);
            k += 2;
            // i·H for H_ab = z, H_ba = z̄.
            ih[(a, b)] = C64::new(-z.im, z.re);
            ih[(b, a)] = C64::new(z.im, z.re);
        }
    }
    ih.exp() * u0
}

fn haar_isometry(g: &mut rng::Rng, m: usize, r: usize) -> DMatrix<C64> {
    use rand::Rng as _;
    let z = DMatrix::<C64>::from_fn(m, m, |_, _| {
        C64::new(g.sample(StandardNormal), g.sample(StandardNormal))
    });
    let qr = z.qr();
    let (q, rr) = (qr.q(), qr.r());
    // Fix column phases so the distribution is Haar.
    let mut q = q;
    for c in 0..m {
        let d = rr[(c, c)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for row in 0..m {
            q[(row, c)] *= phase;
        }
    }
    q.columns(0, r).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureKind;

    fn rho_p(p: f64) -> DensityMatrix {
        DensityMatrix::mixture(&[
            (1.0 - p, &PureState::bisep().to_density()),
            (p, &PureState::w().to_density()),
        ])
        .unwrap()
    }

    fn quick() -> RoofConfig {
        RoofConfig {
            starts: 8,
            ..Default::default()
        }
    }

    #[test]
    fn pure_state_single_element() {
        let rho = PureState::w().to_density();
        let d = decomposition_from_isometry(&rho, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.weights[0] - 1.0).abs() < 1e-12);
        assert!((d.states[0].overlap(&PureState::w()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_decomposition_of_mixture() {
        // Distinct eigenvalues pin the eigenvectors to Bisep and W.
        let d = decomposition_from_isometry(&rho_p(0.3), &DMatrix::identity(2, 2)).unwrap();
        let mut pairs: Vec<(f64, f64, f64)> = d
            .weights
            .iter()
            .zip(&d.states)
            .map(|(w, s)| (*w, s.overlap(&PureState::bisep()), s.overlap(&PureState::w())))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((pairs[0].0 - 0.3).abs() < 1e-12 && (pairs[0].2 - 1.0).abs() < 1e-10);
        assert!((pairs[1].0 - 0.7).abs() < 1e-12 && (pairs[1].1 - 1.0).abs() < 1e-10);

        let half = decomposition_from_isometry(&rho_p(0.5), &DMatrix::identity(2, 2)).unwrap();
        assert!(half.weights.iter().all(|w| (w - 0.5).abs() < 1e-12));
        assert!((half.reconstruct() - rho_p(0.5).matrix()).norm() < 1e-12);
    }

    #[test]
    fn rotated_decomposition_reconstructs() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = DMatrix::from_row_slice(2, 2, &[s, s, s, -s].map(|v| C64::new(v, 0.0)));
        let rho = rho_p(0.5);
        let d = decomposition_from_isometry(&rho, &h).unwrap();
        assert!(d.weights.iter().all(|w| (w - 0.5).abs() < 1e-12));
        assert!((d.reconstruct() - rho.matrix()).norm() < 1e-12);
        // Each element is an equal-weight superposition of Bisep and W.
        for st in &d.states {
            assert!((st.overlap(&PureState::bisep()) - 0.5).abs() < 1e-10);
            assert!((st.overlap(&PureState::w()) - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_isometry() {
        let bad = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        assert!(matches!(
            decomposition_from_isometry(&rho_p(0.5), &bad),
            Err(Error::NotIsometry(_))
        ));
        assert!(matches!(
            decomposition_from_isometry(&rho_p(0.5), &DMatrix::identity(3, 3)),
            Err(Error::RankMismatch { rank: 2, found: 3 })
        ));
    }

    #[test]
    fn rotation_keeps_isometry() {
        let mut g = rng::stream(5, 0);
        let u0 = haar_isometry(&mut g, 4, 2);
        let p: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(isometry_defect(&rotate(&p, &u0)) < 1e-12);
    }

    #[test]
    fn pure_roof_matches_measure() {
        let mut g = rng::stream(6, 0);
        for _ in 0..3 {
            let psi = PureState::haar(&mut g);
            for m in MeasureKind::ALL {
                let r = convex_roof(&psi.to_density(), &m, &quick()).unwrap();
                assert!((r.value - m.evaluate(&psi)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn maximally_mixed_is_separable() {
        for m in MeasureKind::ALL {
            let r = convex_roof(&DensityMatrix::maximally_mixed(), &m, &quick()).unwrap();
            assert!(r.value <= 1e-3, "{m}: {}", r.value);
        }
    }

    #[test]
    fn seeds_are_used() {
        let rho = rho_p(0.4);
        let seed = Decomposition {
            weights: vec![0.6, 0.4],
            states: vec![PureState::bisep(), PureState::w()],
        };
        let cfg = RoofConfig {
            starts: 1,
            max_evals: 1,
            m_max: Some(2),
            ..Default::default()
        };
        let r = convex_roof_with_seeds(&rho, &MeasureKind::Gmc, &cfg, &[seed]).unwrap();
        assert!(r.value <= 0.4 * 8.0 / 9.0 + 1e-9);
    }
}
