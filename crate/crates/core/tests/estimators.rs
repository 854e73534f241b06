use gme_core::estimators::{
    bounds, calibrate, lambda_lb, lambda_ub, tune_parameters, OperatorFamily, OptimizerConfig, TuneConfig, TuneMode,
};
use gme_core::lab;
use gme_core::measures::{MeasureKind, PureMeasure};
use gme_core::optim::{nelder_mead, NelderMeadOptions};
use gme_core::qstate::{HermitianOperator, PureState};
use gme_core::rng;
use rayon::prelude::*;

/// Max and min of ⟨ψ|A|ψ⟩ − E(ψ) over `n` Haar samples, each refined locally.
fn sampling_oracle(a: &HermitianOperator, m: MeasureKind, n: usize, seed: u64) -> (f64, f64) {
    let chunks = 64;
    let per: Vec<(f64, Vec<f64>, f64, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = rng::stream(seed, c as u64);
            let mut best = (f64::NEG_INFINITY, vec![], f64::INFINITY, vec![]);
            for _ in 0..n / chunks {
                let psi = PureState::haar(&mut g);
                let v = a.expectation_pure(&psi) - m.evaluate(&psi);
                if v > best.0 {
                    best.0 = v;
                    best.1 = psi.to_coords().to_vec();
                }
                if v < best.2 {
                    best.2 = v;
                    best.3 = psi.to_coords().to_vec();
                }
            }
            best
        })
        .collect();
    let f = |x: &[f64]| {
        let psi = PureState::from_coords(x).unwrap();
        a.expectation_pure(&psi) - m.evaluate(&psi)
    };
    let opts = NelderMeadOptions::default();
    let hi = per
        .iter()
        .map(|p| -nelder_mead(|x| -f(x), &p.1, &opts).value)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = per
        .iter()
        .map(|p| nelder_mead(f, &p.3, &opts).value)
        .fold(f64::INFINITY, f64::min);
    (hi, lo)
}

#[test]
fn ghz_projector_meets_sampling_oracle() {
    let a = HermitianOperator::projector(&PureState::ghz(), 1.0);
    let cfg = OptimizerConfig::default();
    for m in MeasureKind::ALL {
        let (hi, lo) = sampling_oracle(&a, m, 10_000_000, 7);
        let lb = lambda_lb(&a, &m, &cfg).unwrap();
        let ub = lambda_ub(&a, &m, &cfg).unwrap();
        assert!(lb.value >= hi - 1e-7, "{m}: {} < {hi}", lb.value);
        assert!(ub.value <= lo + 1e-7, "{m}: {} > {lo}", ub.value);
    }
}

#[test]
fn bisep_w_mix_meets_sampling_oracle() {
    let a = OperatorFamily::TwoProjectorMix {
        state1: PureState::bisep(),
        state2: PureState::w(),
        x: 1.0,
        y: 1.0,
    }
    .realize();
    let (hi, lo) = sampling_oracle(&a, MeasureKind::Fill, 10_000_000, 11);
    let cal = calibrate(&a, MeasureKind::Fill, &OptimizerConfig::default()).unwrap();
    assert!((cal.lambda_lb - hi).abs() < 1e-3, "{} vs {hi}", cal.lambda_lb);
    assert!((cal.lambda_ub - lo).abs() < 1e-3, "{} vs {lo}", cal.lambda_ub);
    assert!(
        cal.lambda_lb >= hi - 1e-7 && cal.lambda_ub <= lo + 1e-7,
        "{} {hi} {} {lo}",
        cal.lambda_lb,
        cal.lambda_ub
    );
}

#[test]
fn bisep_upper_bound_is_tuned_to_zero() {
    let bisep = PureState::bisep();
    let template = OperatorFamily::PureProjector {
        state: bisep.clone(),
        x: 1.0,
    };
    let rho = bisep.to_density();
    let tuned = tune_parameters(
        &template,
        MeasureKind::Fill,
        &rho,
        TuneMode::MinimizeUb,
        &TuneConfig::default(),
    )
    .unwrap();
    assert!(tuned.estimate.upper <= 2e-2, "{}", tuned.estimate.upper);
}

#[test]
fn two_projector_mix_beats_w_projector_at_half() {
    let rho = lab::mixed_state(0.5).unwrap();
    let cfg = TuneConfig::default();
    let mix = OperatorFamily::TwoProjectorMix {
        state1: PureState::bisep(),
        state2: PureState::w(),
        x: 1.0,
        y: 1.0,
    };
    let w = OperatorFamily::PureProjector {
        state: PureState::w(),
        x: 1.0,
    };
    for m in MeasureKind::ALL {
        let gap_mix = tune_parameters(&mix, m, &rho, TuneMode::MinimizeGap, &cfg)
            .unwrap()
            .estimate
            .gap();
        let gap_w = tune_parameters(&w, m, &rho, TuneMode::MinimizeGap, &cfg)
            .unwrap()
            .estimate
            .gap();
        assert!(gap_mix < gap_w, "{m}: {gap_mix} vs {gap_w}");
    }
}

#[test]
fn fiber_invariance() {
    let mut g = rng::stream(3, 0);
    let cfg = OptimizerConfig {
        restarts: 40,
        screening_samples: 50_000,
        ..Default::default()
    };
    let rho = gme_core::qstate::DensityMatrix::random(&mut g, 2);
    for _ in 0..4 {
        let a = HermitianOperator::new(random_herm(&mut g)).unwrap();
        let e = gme_core::qstate::expectation(&a, &rho);
        let base = bounds(&calibrate(&a, MeasureKind::Fill, &cfg).unwrap(), e, 0.0).unwrap();
        for c in [-3.0, 0.7, 10.0] {
            let shifted = a.shifted(c);
            let e2 = gme_core::qstate::expectation(&shifted, &rho);
            let b = bounds(&calibrate(&shifted, MeasureKind::Fill, &cfg).unwrap(), e2, 0.0).unwrap();
            assert!(
                (b.raw_lower - base.raw_lower).abs() < 1e-8,
                "{c}: {} {}",
                b.raw_lower,
                base.raw_lower
            );
            assert!(
                (b.raw_upper - base.raw_upper).abs() < 1e-8,
                "{c}: {} {}",
                b.raw_upper,
                base.raw_upper
            );
        }
    }
}

#[test]
fn ordering_and_witnesses() {
    let mut g = rng::stream(4, 0);
    let cfg = OptimizerConfig {
        restarts: 40,
        screening_samples: 50_000,
        ..Default::default()
    };
    for m in MeasureKind::ALL {
        for _ in 0..3 {
            let a = HermitianOperator::new(random_herm(&mut g)).unwrap();
            let cal = calibrate(&a, m, &cfg).unwrap();
            assert!(cal.lambda_ub <= cal.lambda_lb + 1e-8);
            let (lb, ub) = cal.witness_values();
            assert!((lb - cal.lambda_lb).abs() < 1e-6);
            assert!((ub - cal.lambda_ub).abs() < 1e-6);
        }
    }
}

fn random_herm(g: &mut rng::Rng) -> gme_core::qstate::Matrix8 {
    use rand::Rng;
    let m = gme_core::qstate::Matrix8::from_fn(|_, _| {
        gme_core::qstate::C64::new(g.random::<f64>() - 0.5, g.random::<f64>() - 0.5)
    });
    (m + m.adjoint()) * gme_core::qstate::C64::new(0.5, 0.0)
}
