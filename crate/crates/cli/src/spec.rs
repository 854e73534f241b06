//! JSON input files: operator specs and states.

use std::path::Path;

use anyhow::{bail, Context};
use gme_core::estimators::OperatorFamily;
use gme_core::lab::{self, StateId};
use gme_core::qstate::{DensityMatrix, HermitianOperator, PureState};
use serde::Deserialize;

/// A pure state given by name ("GHZ", "W", "Bisep", "psi1".."psi3", or a
/// basis label such as "010") or by explicit amplitudes.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Explicit(PureState),
    Named(String),
}

impl StateRef {
    pub fn resolve(&self) -> anyhow::Result<PureState> {
        match self {
            StateRef::Explicit(psi) => Ok(psi.clone()),
            StateRef::Named(name) => named_state(name),
        }
    }
}

pub fn named_state(name: &str) -> anyhow::Result<PureState> {
    if name.eq_ignore_ascii_case("ghz") {
        return Ok(PureState::ghz());
    }
    if name.len() == 3 && name.bytes().all(|b| b == b'0' || b == b'1') {
        let k = usize::from_str_radix(name, 2)?;
        return Ok(PureState::basis(k));
    }
    Ok(name.parse::<StateId>()?.target())
}

/// Operator spec: the operator families plus raw escape hatches.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    PureProjector {
        state: StateRef,
        x: f64,
    },
    TwoProjectorMix {
        state1: StateRef,
        state2: StateRef,
        x: f64,
        y: f64,
    },
    ScaledTomogram {
        rho: DensityMatrix,
        x: f64,
    },
    /// c·𝟙
    ScaledIdentity {
        c: f64,
    },
    Dense {
        entries_re: Vec<Vec<f64>>,
        entries_im: Vec<Vec<f64>>,
    },
}

impl OperatorSpec {
    pub fn family(&self) -> anyhow::Result<Option<OperatorFamily>> {
        Ok(Some(match self {
            OperatorSpec::PureProjector { state, x } => OperatorFamily::PureProjector {
                state: state.resolve()?,
                x: finite(*x, "x")?,
            },
            OperatorSpec::TwoProjectorMix { state1, state2, x, y } => OperatorFamily::TwoProjectorMix {
                state1: state1.resolve()?,
                state2: state2.resolve()?,
                x: finite(*x, "x")?,
                y: finite(*y, "y")?,
            },
            OperatorSpec::ScaledTomogram { rho, x } => OperatorFamily::ScaledTomogram {
                rho: rho.clone(),
                x: finite(*x, "x")?,
            },
            OperatorSpec::ScaledIdentity { .. } | OperatorSpec::Dense { .. } => return Ok(None),
        }))
    }

    pub fn realize(&self) -> anyhow::Result<HermitianOperator> {
        if let Some(f) = self.family()? {
            return Ok(f.realize());
        }
        match self {
            OperatorSpec::ScaledIdentity { c } => Ok(HermitianOperator::scaled_identity(finite(*c, "c")?)),
            OperatorSpec::Dense { entries_re, entries_im } => {
                let value = serde_json::json!({ "entries_re": entries_re, "entries_im": entries_im });
                Ok(serde_json::from_value(value)?)
            }
            _ => unreachable!("families handled above"),
        }
    }
}

fn finite(v: f64, name: &str) -> anyhow::Result<f64> {
    if !v.is_finite() {
        bail!("parameter {name} is not finite");
    }
    Ok(v)
}

/// A state for the convex-roof oracle.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Density(DensityMatrix),
    Pure(PureState),
    /// p|W⟩⟨W| + (1−p)|Bisep⟩⟨Bisep|
    Mixture {
        mixture_p: f64,
    },
    Named(String),
}

impl StateSpec {
    pub fn density(&self) -> anyhow::Result<DensityMatrix> {
        match self {
            StateSpec::Density(rho) => Ok(rho.clone()),
            StateSpec::Pure(psi) => Ok(psi.to_density()),
            StateSpec::Mixture { mixture_p } => Ok(lab::mixed_state(*mixture_p)?),
            StateSpec::Named(name) => Ok(named_state(name)?.to_density()),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
