//! Pure-state genuine multipartite entanglement measures built on the
//! concurrence triangle.
//!
//! The triangle's edges are the **squared** one-to-other concurrences
//! `C²_{i|jk} = 2(1 − Tr ρ_i²)`. With that convention both Fill and GMC give
//! 8/9 on the W state and 1 on GHZ.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{reduced_of, PureState, C64, DIM};

/// Radicands down to this value are treated as floating-point zeros.
pub const RADICAND_TOL: f64 = 1e-10;

/// Edges (C²_{1|23}, C²_{2|13}, C²_{3|12}).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceTriangle {
    pub edges: [f64; 3],
}

impl ConcurrenceTriangle {
    pub fn of(psi: &PureState) -> Self {
        Self {
            edges: edges_of(psi.amplitudes()),
        }
    }

    /// Heron-type radicand (16/3)·Q(Q−e1)(Q−e2)(Q−e3), Q the semi-perimeter.
    pub fn radicand(&self) -> f64 {
        let [a, b, c] = self.edges;
        let q = 0.5 * (a + b + c);
        16.0 / 3.0 * q * (q - a) * (q - b) * (q - c)
    }

    pub fn shortest(&self) -> f64 {
        self.edges.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Normalized-area measure; errors if the edges violate the triangle inequality.
    pub fn fill(&self) -> Result<f64> {
        let r = self.radicand();
        if r < -RADICAND_TOL {
            return Err(Error::TriangleInequality(r));
        }
        Ok(r.max(0.0).sqrt().sqrt().min(1.0))
    }
}

/// 4·det ρ_i for each qubit, i.e. 2(1 − Tr ρ_i²), clamped to [0, 1].
#[inline]
pub(crate) fn edges_of(amps: &[C64; DIM]) -> [f64; 3] {
    std::array::from_fn(|i| {
        let r = reduced_of(amps, i + 1);
        let det = r[(0, 0)].re * r[(1, 1)].re - r[(0, 1)].norm_sqr();
        (4.0 * det).clamp(0.0, 1.0)
    })
}

#[inline]
fn fill_of_edges(e: [f64; 3]) -> f64 {
    let q = 0.5 * (e[0] + e[1] + e[2]);
    let r = 16.0 / 3.0 * q * (q - e[0]) * (q - e[1]) * (q - e[2]);
    r.max(0.0).sqrt().sqrt().min(1.0)
}

/// C_{i|jk} = sqrt(2(1 − Tr ρ_i²)) for qubit `i` ∈ {1, 2, 3}.
pub fn one_to_other_concurrence(psi: &PureState, i: usize) -> Result<f64> {
    let r = psi.reduced(i)?;
    let tr_sq = (r * r).trace().re;
    Ok((2.0 * (1.0 - tr_sq)).clamp(0.0, 1.0).sqrt())
}

pub fn triangle(psi: &PureState) -> ConcurrenceTriangle {
    ConcurrenceTriangle::of(psi)
}

/// Concurrence Fill: fourth root of the normalized Heron radicand.
pub fn fill(psi: &PureState) -> f64 {
    fill_of_edges(edges_of(psi.amplitudes()))
}

/// Genuine multipartite concurrence: the shortest (squared) edge.
pub fn gmc(psi: &PureState) -> f64 {
    let e = edges_of(psi.amplitudes());
    e[0].min(e[1]).min(e[2])
}

/// A pure-state entanglement measure mapping normalized states to [0, 1].
///
/// Implementors must vanish on biseparable states and be invariant under
/// local unitaries. Estimators and the convex-roof oracle only see this
/// trait, so new measures plug in without touching them.
pub trait PureMeasure: Send + Sync {
    fn id(&self) -> &str;

    /// Evaluates on raw amplitudes that the caller guarantees are normalized.
    fn evaluate_normalized(&self, amps: &[C64; DIM]) -> f64;

    fn evaluate(&self, psi: &PureState) -> f64 {
        self.evaluate_normalized(psi.amplitudes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Fill,
    Gmc,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 2] = [MeasureKind::Fill, MeasureKind::Gmc];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::Fill => "fill",
            MeasureKind::Gmc => "gmc",
        }
    }
}

impl PureMeasure for MeasureKind {
    fn id(&self) -> &str {
        self.as_str()
    }

    #[inline]
    fn evaluate_normalized(&self, amps: &[C64; DIM]) -> f64 {
        let e = edges_of(amps);
        match self {
            MeasureKind::Fill => fill_of_edges(e),
            MeasureKind::Gmc => e[0].min(e[1]).min(e[2]),
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fill" => Ok(MeasureKind::Fill),
            "gmc" => Ok(MeasureKind::Gmc),
            _ => Err(Error::Unknown {
                kind: "measure",
                name: s.to_string(),
            }),
        }
    }
}

/// Random search for two states that Fill and GMC rank in opposite order.
/// Returns the first pair (σ1, σ2) with fill(σ1) > fill(σ2) and gmc(σ1) < gmc(σ2),
/// both differences exceeding `margin`.
pub fn find_ranking_inversion<R: Rng + ?Sized>(
    rng: &mut R,
    trials: usize,
    margin: f64,
) -> Option<(PureState, PureState)> {
    for _ in 0..trials {
        let a = PureState::haar(rng);
        let b = PureState::haar(rng);
        let (fa, fb) = (fill(&a), fill(&b));
        let (ga, gb) = (gmc(&a), gmc(&b));
        if fa > fb + margin && ga + margin < gb {
            return Some((a, b));
        }
        if fb > fa + margin && gb + margin < ga {
            return Some((b, a));
        }
    }
    None
}
