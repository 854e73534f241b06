//! Dense complex linear algebra for three-qubit states and operators.
//!
//! # Qubit ordering
//!
//! Basis index `k = 4·q1 + 2·q2 + q3`: **qubit 1 is the most significant
//! bit**. The ket |110⟩ is index 6, |001⟩ is index 1. Every function taking a
//! qubit index uses 1-based labels 1, 2, 3 in this order.

use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix8 = SMatrix<C64, 8, 8>;
pub type Matrix2 = SMatrix<C64, 2, 2>;
pub type Vector8 = SVector<C64, 8>;

pub const DIM: usize = 8;

/// Inputs deviating from Hermiticity by more than this are rejected.
pub const HERMITIAN_REJECT_TOL: f64 = 1e-8;
/// Default cutoff below which a Pauli coefficient counts as zero.
pub const SUPPORT_TOL: f64 = 1e-9;
/// Smallest eigenvalue tolerated in a density matrix.
pub const PSD_TOL: f64 = 1e-10;
/// Trace deviation tolerated (and then renormalized) on construction.
pub const TRACE_TOL: f64 = 1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
fn bit(k: usize, qubit: usize) -> usize {
    (k >> (3 - qubit)) & 1
}

fn check_qubit(q: usize) -> Result<()> {
    if (1..=3).contains(&q) {
        Ok(())
    } else {
        Err(Error::InvalidQubit(q))
    }
}

/// Kronecker product of three single-qubit operators, qubit 1 first.
pub fn kron3(a: &Matrix2, b: &Matrix2, c: &Matrix2) -> Matrix8 {
    Matrix8::from_fn(|r, s| a[(bit(r, 1), bit(s, 1))] * b[(bit(r, 2), bit(s, 2))] * c[(bit(r, 3), bit(s, 3))])
}

fn hermitian_deviation(m: &Matrix8) -> f64 {
    let mut dev = 0.0f64;
    for r in 0..DIM {
        for s in r..DIM {
            dev = dev.max((m[(r, s)] - m[(s, r)].conj()).norm());
        }
    }
    dev
}

fn hermitize(m: &Matrix8) -> Matrix8 {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn all_finite(m: &Matrix8) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigenvalues (ascending) and matching eigenvector columns of a Hermitian matrix.
pub fn hermitian_eigen(m: &Matrix8) -> ([f64; DIM], Matrix8) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = [0.0; DIM];
    let mut vectors = Matrix8::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

// ---------------------------------------------------------------------------
// Pure states

/// A normalized three-qubit state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PureStateJson", into = "PureStateJson")]
pub struct PureState {
    amps: [C64; DIM],
}

impl PureState {
    /// Normalizes `amps`. Fails on a zero or non-finite vector.
    pub fn new(amps: [C64; DIM]) -> Result<Self> {
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitudes"));
        }
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-150 {
            return Err(Error::NotNormalizable(norm));
        }
        Ok(Self {
            amps: amps.map(|z| z / norm),
        })
    }

    pub fn from_real(amps: [f64; DIM]) -> Result<Self> {
        Self::new(amps.map(|x| C64::new(x, 0.0)))
    }

    /// Builds a state from 16 reals (real parts then imaginary parts).
    pub fn from_coords(x: &[f64]) -> Result<Self> {
        if x.len() != 2 * DIM {
            return Err(Error::Shape {
                expected: 2 * DIM,
                found: x.len(),
            });
        }
        Self::new(std::array::from_fn(|k| C64::new(x[k], x[k + DIM])))
    }

    pub fn to_coords(&self) -> [f64; 2 * DIM] {
        std::array::from_fn(|i| {
            if i < DIM {
                self.amps[i].re
            } else {
                self.amps[i - DIM].im
            }
        })
    }

    pub fn basis(index: usize) -> Self {
        let mut amps = [ZERO; DIM];
        amps[index] = ONE;
        Self { amps }
    }

    /// (|000⟩ + |111⟩)/√2
    pub fn ghz() -> Self {
        let mut a = [0.0; DIM];
        a[0] = 1.0;
        a[7] = 1.0;
        Self::from_real(a).unwrap()
    }

    /// (|100⟩ + |010⟩ + |001⟩)/√3
    pub fn w() -> Self {
        let mut a = [0.0; DIM];
        a[4] = 1.0;
        a[2] = 1.0;
        a[1] = 1.0;
        Self::from_real(a).unwrap()
    }

    /// (|000⟩ + |110⟩)/√2: a Bell pair on qubits 1, 2 with qubit 3 in |0⟩.
    pub fn bisep() -> Self {
        let mut a = [0.0; DIM];
        a[0] = 1.0;
        a[6] = 1.0;
        Self::from_real(a).unwrap()
    }

    /// Product state φ1 ⊗ φ2 ⊗ φ3.
    pub fn product(q1: [C64; 2], q2: [C64; 2], q3: [C64; 2]) -> Result<Self> {
        Self::new(std::array::from_fn(|k| q1[bit(k, 1)] * q2[bit(k, 2)] * q3[bit(k, 3)]))
    }

    /// A state factoring as (single qubit `lone`) ⊗ (two-qubit `pair`).
    /// `pair` is indexed by the remaining two qubits in increasing order.
    pub fn biseparable(lone: usize, single: [C64; 2], pair: [C64; 4]) -> Result<Self> {
        check_qubit(lone)?;
        let others: Vec<usize> = (1..=3).filter(|&q| q != lone).collect();
        Self::new(std::array::from_fn(|k| {
            single[bit(k, lone)] * pair[2 * bit(k, others[0]) + bit(k, others[1])]
        }))
    }

    /// Haar-random pure state.
    pub fn haar<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let amps: [C64; DIM] =
                std::array::from_fn(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            if let Ok(s) = Self::new(amps) {
                return s;
            }
        }
    }

    pub fn amplitudes(&self) -> &[C64; DIM] {
        &self.amps
    }

    pub fn vector(&self) -> Vector8 {
        Vector8::from_column_slice(&self.amps)
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.iter().zip(other.amps.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// |⟨self|other⟩|²
    pub fn overlap(&self, other: &PureState) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn projector(&self) -> Matrix8 {
        let v = self.vector();
        v * v.adjoint()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            m: hermitize(&self.projector()),
        }
    }

    /// Applies a unitary; the result is renormalized.
    pub fn evolve(&self, u: &Matrix8) -> Result<Self> {
        let v = u * self.vector();
        Self::new(std::array::from_fn(|k| v[k]))
    }

    pub fn apply_local(&self, u1: &Matrix2, u2: &Matrix2, u3: &Matrix2) -> Result<Self> {
        self.evolve(&kron3(u1, u2, u3))
    }

    /// Single-qubit reduced density matrix of qubit `q`.
    pub fn reduced(&self, q: usize) -> Result<Matrix2> {
        check_qubit(q)?;
        Ok(reduced_of(&self.amps, q))
    }
}

/// Reduced state of qubit `q` from raw amplitudes (no validation).
pub(crate) fn reduced_of(amps: &[C64; DIM], q: usize) -> Matrix2 {
    let mut m = Matrix2::zeros();
    for k in 0..DIM {
        if bit(k, q) == 0 {
            let partner = k | (1 << (3 - q));
            let a0 = amps[k];
            let a1 = amps[partner];
            m[(0, 0)] += a0 * a0.conj();
            m[(1, 1)] += a1 * a1.conj();
            m[(0, 1)] += a0 * a1.conj();
        }
    }
    m[(1, 0)] = m[(0, 1)].conj();
    m
}

#[derive(Serialize, Deserialize)]
struct PureStateJson {
    amplitudes_re: Vec<f64>,
    amplitudes_im: Vec<f64>,
}

impl TryFrom<PureStateJson> for PureState {
    type Error = Error;

    fn try_from(j: PureStateJson) -> Result<Self> {
        for v in [&j.amplitudes_re, &j.amplitudes_im] {
            if v.len() != DIM {
                return Err(Error::Shape {
                    expected: DIM,
                    found: v.len(),
                });
            }
        }
        PureState::new(std::array::from_fn(|k| {
            C64::new(j.amplitudes_re[k], j.amplitudes_im[k])
        }))
    }
}

impl From<PureState> for PureStateJson {
    fn from(s: PureState) -> Self {
        Self {
            amplitudes_re: s.amps.iter().map(|z| z.re).collect(),
            amplitudes_im: s.amps.iter().map(|z| z.im).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    entries_re: Vec<Vec<f64>>,
    entries_im: Vec<Vec<f64>>,
}

impl MatrixJson {
    fn from_matrix(m: &Matrix8) -> Self {
        Self {
            entries_re: (0..DIM).map(|r| (0..DIM).map(|s| m[(r, s)].re).collect()).collect(),
            entries_im: (0..DIM).map(|r| (0..DIM).map(|s| m[(r, s)].im).collect()).collect(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix8> {
        for rows in [&self.entries_re, &self.entries_im] {
            if rows.len() != DIM {
                return Err(Error::Shape {
                    expected: DIM,
                    found: rows.len(),
                });
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != DIM) {
                return Err(Error::Shape {
                    expected: DIM,
                    found: bad.len(),
                });
            }
        }
        Ok(Matrix8::from_fn(|r, s| {
            C64::new(self.entries_re[r][s], self.entries_im[r][s])
        }))
    }
}

// ---------------------------------------------------------------------------
// Density matrices

/// An 8×8 Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct DensityMatrix {
    m: Matrix8,
}

impl DensityMatrix {
    /// Validates `m`. Deviations from Hermiticity up to
    /// [`HERMITIAN_REJECT_TOL`] and from unit trace up to [`TRACE_TOL`] are
    /// corrected; anything larger is rejected.
    pub fn new(m: Matrix8) -> Result<Self> {
        if !all_finite(&m) {
            return Err(Error::NonFinite("density matrix"));
        }
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_REJECT_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let mut h = hermitize(&m);
        let tr = h.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::BadTrace(tr));
        }
        h /= C64::new(tr, 0.0);
        let (values, _) = hermitian_eigen(&h);
        if values[0] < -PSD_TOL {
            return Err(Error::NotPositive(values[0]));
        }
        Ok(Self { m: h })
    }

    pub(crate) fn from_trusted(m: Matrix8) -> Self {
        Self { m: hermitize(&m) }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        psi.to_density()
    }

    /// 𝟙/8
    pub fn maximally_mixed() -> Self {
        Self {
            m: Matrix8::identity() * C64::new(1.0 / DIM as f64, 0.0),
        }
    }

    /// Convex combination Σ wᵢ ρᵢ; weights must be nonnegative and sum to 1.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0 || !w.is_finite()) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::OutOfRange {
                name: "mixture weights",
                value: total,
                range: "nonnegative, summing to 1",
            });
        }
        let m = parts
            .iter()
            .fold(Matrix8::zeros(), |acc, (w, rho)| acc + rho.m * C64::new(*w, 0.0));
        Ok(Self::from_trusted(m))
    }

    /// Random mixed state of the given rank: Haar eigenvectors, flat-Dirichlet weights.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, rank: usize) -> Self {
        let rank = rank.clamp(1, DIM);
        let g = Matrix8::from_fn(|_, s| {
            if s < rank {
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            } else {
                ZERO
            }
        });
        let m = g * g.adjoint();
        let tr = m.trace().re;
        Self::from_trusted(m / C64::new(tr, 0.0))
    }

    pub fn matrix(&self) -> &Matrix8 {
        &self.m
    }

    pub fn entry(&self, r: usize, s: usize) -> C64 {
        self.m[(r, s)]
    }

    /// Eigenvalues ascending with eigenvector columns.
    pub fn eigen(&self) -> ([f64; DIM], Matrix8) {
        hermitian_eigen(&self.m)
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        (self.m - other.m).norm()
    }
}

impl TryFrom<MatrixJson> for DensityMatrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Self> {
        DensityMatrix::new(j.to_matrix()?)
    }
}

impl From<DensityMatrix> for MatrixJson {
    fn from(d: DensityMatrix) -> Self {
        MatrixJson::from_matrix(&d.m)
    }
}

// ---------------------------------------------------------------------------
// Pauli strings and measurement settings

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn label(self) -> char {
        match self {
            Pauli::I => '0',
            Pauli::X => 'x',
            Pauli::Y => 'y',
            Pauli::Z => 'z',
        }
    }

    pub fn matrix(self) -> Matrix2 {
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => Matrix2::new(ONE, ZERO, ZERO, ONE),
            Pauli::X => Matrix2::new(ZERO, ONE, ONE, ZERO),
            Pauli::Y => Matrix2::new(ZERO, -i, i, ZERO),
            Pauli::Z => Matrix2::new(ONE, ZERO, ZERO, -ONE),
        }
    }

    fn from_label(c: char) -> Option<Self> {
        match c {
            '0' | 'i' | 'I' => Some(Pauli::I),
            'x' | 'X' => Some(Pauli::X),
            'y' | 'Y' => Some(Pauli::Y),
            'z' | 'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// σ_i ⊗ σ_j ⊗ σ_k with labels in {0, x, y, z}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString(pub [Pauli; 3]);

impl PauliString {
    pub const IDENTITY: PauliString = PauliString([Pauli::I; 3]);
    pub const COUNT: usize = 64;

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT);
        Self([
            Pauli::ALL[index >> 4],
            Pauli::ALL[(index >> 2) & 3],
            Pauli::ALL[index & 3],
        ])
    }

    pub fn index(self) -> usize {
        16 * self.0[0] as usize + 4 * self.0[1] as usize + self.0[2] as usize
    }

    pub fn all() -> impl Iterator<Item = PauliString> {
        (0..Self::COUNT).map(Self::from_index)
    }

    pub fn is_identity(self) -> bool {
        self == Self::IDENTITY
    }

    pub fn weight(self) -> usize {
        self.0.iter().filter(|p| **p != Pauli::I).count()
    }

    pub fn matrix(self) -> Matrix8 {
        kron3(&self.0[0].matrix(), &self.0[1].matrix(), &self.0[2].matrix())
    }

    /// Eigenvalue (±1) of this string on the product eigenbasis outcome `k`
    /// of any setting covering it.
    pub fn outcome_sign(self, k: usize) -> f64 {
        let mut parity = 0;
        for q in 0..3 {
            if self.0[q] != Pauli::I {
                parity ^= bit(k, q + 1);
            }
        }
        if parity == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Tr(A σ) using the signed-permutation structure of σ.
    fn trace_with(self, a: &Matrix8) -> C64 {
        let mut flip = 0usize;
        for q in 0..3 {
            if matches!(self.0[q], Pauli::X | Pauli::Y) {
                flip |= 1 << (2 - q);
            }
        }
        let mut acc = ZERO;
        for col in 0..DIM {
            // σ[row, col] is nonzero only for row = col ^ flip.
            let row = col ^ flip;
            let mut phase = ONE;
            for q in 0..3 {
                let b = bit(col, q + 1);
                phase *= match self.0[q] {
                    Pauli::I | Pauli::X => ONE,
                    Pauli::Y => {
                        if b == 0 {
                            C64::new(0.0, 1.0)
                        } else {
                            C64::new(0.0, -1.0)
                        }
                    }
                    Pauli::Z => {
                        if b == 0 {
                            ONE
                        } else {
                            -ONE
                        }
                    }
                };
            }
            // Tr(Aσ) = Σ_col A[col, row] σ[row, col]
            acc += a[(col, row)] * phase;
        }
        acc
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.0 {
            write!(f, "{}", p.label())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels: Vec<Pauli> = s.chars().filter_map(Pauli::from_label).collect();
        if labels.len() != 3 || s.chars().count() != 3 {
            return Err(Error::Unknown {
                kind: "Pauli string",
                name: s.to_string(),
            });
        }
        Ok(Self([labels[0], labels[1], labels[2]]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn label(self) -> char {
        match self {
            Basis::X => 'x',
            Basis::Y => 'y',
            Basis::Z => 'z',
        }
    }

    pub fn pauli(self) -> Pauli {
        match self {
            Basis::X => Pauli::X,
            Basis::Y => Pauli::Y,
            Basis::Z => Pauli::Z,
        }
    }

    /// Columns are the +1 and −1 eigenvectors.
    pub fn eigenbasis(self) -> Matrix2 {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let ih = C64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
        match self {
            Basis::Z => Matrix2::new(ONE, ZERO, ZERO, ONE),
            Basis::X => Matrix2::new(h, h, h, -h),
            Basis::Y => Matrix2::new(h, h, ih, -ih),
        }
    }
}

/// One local Pauli basis per qubit; yields 8 outcome counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasurementSetting(pub [Basis; 3]);

impl MeasurementSetting {
    pub const COUNT: usize = 27;

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT);
        Self([
            Basis::ALL[index / 9],
            Basis::ALL[(index / 3) % 3],
            Basis::ALL[index % 3],
        ])
    }

    pub fn index(self) -> usize {
        9 * self.0[0] as usize + 3 * self.0[1] as usize + self.0[2] as usize
    }

    pub fn all() -> impl Iterator<Item = MeasurementSetting> {
        (0..Self::COUNT).map(Self::from_index)
    }

    /// True iff every non-identity label of `s` matches this setting.
    pub fn covers(self, s: PauliString) -> bool {
        (0..3).all(|q| s.0[q] == Pauli::I || s.0[q] == self.0[q].pauli())
    }

    /// The 8 Pauli strings obtainable from this setting's counts.
    pub fn covered_strings(self) -> impl Iterator<Item = PauliString> {
        PauliString::all().filter(move |s| self.covers(*s))
    }

    /// Basis change whose columns are the product eigenvectors, outcome k in column k.
    pub fn basis_change(self) -> Matrix8 {
        kron3(
            &self.0[0].eigenbasis(),
            &self.0[1].eigenbasis(),
            &self.0[2].eigenbasis(),
        )
    }

    /// diag(V†ρV), clipped at zero.
    pub fn outcome_probabilities(self, rho: &DensityMatrix) -> [f64; DIM] {
        let v = self.basis_change();
        let rotated = v.adjoint() * rho.matrix() * v;
        std::array::from_fn(|k| rotated[(k, k)].re.max(0.0))
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{}", b.label())?;
        }
        Ok(())
    }
}

impl FromStr for MeasurementSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |c: char| match c {
            'x' | 'X' => Some(Basis::X),
            'y' | 'Y' => Some(Basis::Y),
            'z' | 'Z' => Some(Basis::Z),
            _ => None,
        };
        let bases: Vec<Basis> = s.chars().map_while(parse).collect();
        if bases.len() != 3 || s.chars().count() != 3 {
            return Err(Error::Unknown {
                kind: "measurement setting",
                name: s.to_string(),
            });
        }
        Ok(Self([bases[0], bases[1], bases[2]]))
    }
}

// ---------------------------------------------------------------------------
// Hermitian operators

/// An 8×8 Hermitian matrix with its cached Pauli-product coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct HermitianOperator {
    entries: Matrix8,
    coeffs: [f64; PauliString::COUNT],
}

impl HermitianOperator {
    pub fn new(m: Matrix8) -> Result<Self> {
        if !all_finite(&m) {
            return Err(Error::NonFinite("operator"));
        }
        let dev = hermitian_deviation(&m);
        if dev > HERMITIAN_REJECT_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let entries = hermitize(&m);
        let coeffs = decompose_unchecked(&entries);
        Ok(Self { entries, coeffs })
    }

    pub fn from_pauli(coeffs: &[f64; PauliString::COUNT]) -> Self {
        let entries = PauliString::all().fold(Matrix8::zeros(), |acc, s| {
            acc + s.matrix() * C64::new(coeffs[s.index()], 0.0)
        });
        Self {
            entries,
            coeffs: *coeffs,
        }
    }

    pub fn zero() -> Self {
        Self::scaled_identity(0.0)
    }

    pub fn identity() -> Self {
        Self::scaled_identity(1.0)
    }

    pub fn scaled_identity(c: f64) -> Self {
        let mut coeffs = [0.0; PauliString::COUNT];
        coeffs[0] = c;
        Self {
            entries: Matrix8::identity() * C64::new(c, 0.0),
            coeffs,
        }
    }

    /// x|φ⟩⟨φ|
    pub fn projector(phi: &PureState, x: f64) -> Self {
        Self::new(phi.projector() * C64::new(x, 0.0)).expect("projector is Hermitian")
    }

    pub fn entries(&self) -> &Matrix8 {
        &self.entries
    }

    pub fn coeffs(&self) -> &[f64; PauliString::COUNT] {
        &self.coeffs
    }

    pub fn coeff(&self, s: PauliString) -> f64 {
        self.coeffs[s.index()]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: self.entries * C64::new(c, 0.0),
            coeffs: self.coeffs.map(|v| v * c),
        }
    }

    /// A + c𝟙: the same fiber, shifted.
    pub fn shifted(&self, c: f64) -> Self {
        let mut coeffs = self.coeffs;
        coeffs[0] += c;
        Self {
            entries: self.entries + Matrix8::identity() * C64::new(c, 0.0),
            coeffs,
        }
    }

    pub fn plus(&self, other: &HermitianOperator) -> Self {
        Self {
            entries: self.entries + other.entries,
            coeffs: std::array::from_fn(|i| self.coeffs[i] + other.coeffs[i]),
        }
    }

    /// Splits A into (Tr A / 8, A − Tr A/8 · 𝟙).
    pub fn split_trace(&self) -> (f64, HermitianOperator) {
        let c = self.coeffs[0];
        let mut coeffs = self.coeffs;
        coeffs[0] = 0.0;
        let mut entries = self.entries;
        for k in 0..DIM {
            entries[(k, k)] -= C64::new(c, 0.0);
        }
        (c, Self { entries, coeffs })
    }

    /// ⟨ψ|A|ψ⟩
    #[inline]
    pub fn expectation_pure(&self, psi: &PureState) -> f64 {
        quadratic_form(&self.entries, &psi.amps)
    }

    /// Non-identity strings with |coefficient| > `tol`.
    pub fn support(&self, tol: f64) -> Vec<PauliString> {
        PauliString::all()
            .filter(|s| !s.is_identity() && self.coeffs[s.index()].abs() > tol)
            .collect()
    }

    /// Max entry deviation of Σ coeffs·σ from the stored matrix.
    pub fn reconstruction_error(&self) -> f64 {
        let rebuilt = Self::from_pauli(&self.coeffs);
        (rebuilt.entries - self.entries)
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()))
    }
}

impl TryFrom<MatrixJson> for HermitianOperator {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Self> {
        HermitianOperator::new(j.to_matrix()?)
    }
}

impl From<HermitianOperator> for MatrixJson {
    fn from(h: HermitianOperator) -> Self {
        MatrixJson::from_matrix(&h.entries)
    }
}

/// Re ⟨ψ|A|ψ⟩ for Hermitian A and an already-normalized amplitude array.
#[inline]
pub(crate) fn quadratic_form(a: &Matrix8, amps: &[C64; DIM]) -> f64 {
    let mut acc = 0.0;
    for r in 0..DIM {
        let ar = amps[r];
        acc += a[(r, r)].re * ar.norm_sqr();
        let mut row = ZERO;
        for s in (r + 1)..DIM {
            row += a[(r, s)] * amps[s];
        }
        acc += 2.0 * (ar.conj() * row).re;
    }
    acc
}

fn decompose_unchecked(a: &Matrix8) -> [f64; PauliString::COUNT] {
    std::array::from_fn(|i| PauliString::from_index(i).trace_with(a).re / DIM as f64)
}

// ---------------------------------------------------------------------------
// Operations

/// Reduced 2×2 density matrix of qubit `keep` (1, 2 or 3).
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<Matrix2> {
    check_qubit(keep)?;
    let mask = 1 << (3 - keep);
    let mut out = Matrix2::zeros();
    for r in 0..DIM {
        for s in 0..DIM {
            // Traced-out bits must agree.
            if (r & !mask) == (s & !mask) {
                out[(bit(r, keep), bit(s, keep))] += rho.m[(r, s)];
            }
        }
    }
    Ok(out)
}

/// Tr(ρ²)
pub fn purity(rho: &DensityMatrix) -> f64 {
    // Tr(ρ²) = Σ |ρ_rs|² for Hermitian ρ.
    rho.m.iter().map(|z| z.norm_sqr()).sum()
}

/// ⟨ψ|ρ|ψ⟩, clamped to [0, 1].
pub fn fidelity(psi: &PureState, rho: &DensityMatrix) -> f64 {
    quadratic_form(&rho.m, &psi.amps).clamp(0.0, 1.0)
}

/// Tr(Aρ)
pub fn expectation(a: &HermitianOperator, rho: &DensityMatrix) -> f64 {
    let mut acc = ZERO;
    for r in 0..DIM {
        for s in 0..DIM {
            acc += a.entries[(r, s)] * rho.m[(s, r)];
        }
    }
    acc.re
}

/// Pauli coefficients Tr(A σ_s)/8 of a Hermitian matrix.
pub fn pauli_decompose(a: &Matrix8) -> Result<[f64; PauliString::COUNT]> {
    let dev = hermitian_deviation(a);
    if dev > HERMITIAN_REJECT_TOL {
        return Err(Error::NotHermitian(dev));
    }
    Ok(decompose_unchecked(&hermitize(a)))
}

/// Minimal set of settings covering every non-identity string of `a`
/// whose coefficient exceeds `tol` in magnitude.
pub fn required_settings(a: &HermitianOperator, tol: f64) -> Vec<MeasurementSetting> {
    minimal_cover(&a.support(tol.max(0.0)))
}

/// Exact minimum set cover of `strings` by measurement settings
/// (branch and bound over the 27 settings). Ties resolve to the first cover
/// found in index order, so the output is deterministic.
pub fn minimal_cover(strings: &[PauliString]) -> Vec<MeasurementSetting> {
    let masks: Vec<u32> = strings
        .iter()
        .filter(|s| !s.is_identity())
        .map(|s| {
            MeasurementSetting::all()
                .filter(|m| m.covers(*s))
                .fold(0u32, |acc, m| acc | (1 << m.index()))
        })
        .collect();
    if masks.is_empty() {
        return Vec::new();
    }

    struct Search<'a> {
        masks: &'a [u32],
        best: Option<u32>,
    }

    impl Search<'_> {
        fn best_len(&self) -> u32 {
            self.best.map_or(u32::MAX, u32::count_ones)
        }

        // Strings whose covering sets are pairwise disjoint each need their own setting.
        fn lower_bound(&self, chosen: u32) -> u32 {
            let mut used = 0u32;
            let mut count = 0;
            for &m in self.masks {
                if m & chosen == 0 && m & used == 0 {
                    used |= m;
                    count += 1;
                }
            }
            count
        }

        fn run(&mut self, chosen: u32) {
            let depth = chosen.count_ones();
            // Most constrained uncovered string.
            let next = self
                .masks
                .iter()
                .filter(|&&m| m & chosen == 0)
                .min_by_key(|m| m.count_ones());
            let Some(&mask) = next else {
                if depth < self.best_len() {
                    self.best = Some(chosen);
                }
                return;
            };
            if depth + self.lower_bound(chosen) >= self.best_len() {
                return;
            }
            let mut options = mask;
            while options != 0 {
                let idx = options.trailing_zeros();
                options &= options - 1;
                self.run(chosen | (1 << idx));
            }
        }
    }

    let mut search = Search {
        masks: &masks,
        best: None,
    };
    search.run(0);
    let best = search.best.unwrap_or(0);
    (0..MeasurementSetting::COUNT)
        .filter(|i| best & (1 << i) != 0)
        .map(MeasurementSetting::from_index)
        .collect()
}

/// Haar-random single-qubit unitary.
pub fn random_unitary2<R: Rng + ?Sized>(rng: &mut R) -> Matrix2 {
    let g = Matrix2::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column phases so the distribution is Haar.
    let mut u = q;
    for c in 0..2 {
        let d = r[(c, c)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for row in 0..2 {
            u[(row, c)] *= phase;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const EPS: f64 = 1e-12;

    fn diag2(a: f64, b: f64) -> Matrix2 {
        Matrix2::new(C64::new(a, 0.0), ZERO, ZERO, C64::new(b, 0.0))
    }

    fn close2(a: &Matrix2, b: &Matrix2, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    fn rho_half() -> DensityMatrix {
        let b = PureState::bisep().to_density();
        let w = PureState::w().to_density();
        DensityMatrix::mixture(&[(0.5, &b), (0.5, &w)]).unwrap()
    }

    #[test]
    fn index_convention_q1_is_msb() {
        let s = PureState::product([ZERO, ONE], [ONE, ZERO], [ONE, ZERO]).unwrap();
        assert_eq!(s.amplitudes()[4], ONE);
    }

    #[test]
    fn partial_trace_examples() {
        let r = partial_trace(&PureState::basis(0).to_density(), 1).unwrap();
        assert!(close2(&r, &diag2(1.0, 0.0), EPS));
        let r = partial_trace(&PureState::ghz().to_density(), 2).unwrap();
        assert!(close2(&r, &diag2(0.5, 0.5), EPS));
        let r = partial_trace(&PureState::w().to_density(), 3).unwrap();
        assert!(close2(&r, &diag2(2.0 / 3.0, 1.0 / 3.0), EPS));
    }

    #[test]
    fn partial_trace_rejects_bad_index() {
        let rho = DensityMatrix::maximally_mixed();
        assert!(matches!(partial_trace(&rho, 0), Err(Error::InvalidQubit(0))));
        assert!(matches!(partial_trace(&rho, 4), Err(Error::InvalidQubit(4))));
    }

    #[test]
    fn reduced_matches_partial_trace() {
        let mut g = rng::stream(3, 0);
        for _ in 0..20 {
            let psi = PureState::haar(&mut g);
            for q in 1..=3 {
                let a = psi.reduced(q).unwrap();
                let b = partial_trace(&psi.to_density(), q).unwrap();
                assert!(close2(&a, &b, 1e-12));
            }
        }
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&PureState::w().to_density()) - 1.0).abs() < EPS);
        assert!((purity(&DensityMatrix::maximally_mixed()) - 0.125).abs() < EPS);
        assert!((purity(&rho_half()) - 0.5).abs() < EPS);
    }

    #[test]
    fn fidelity_examples() {
        let psi = PureState::ghz();
        assert!((fidelity(&psi, &psi.to_density()) - 1.0).abs() < EPS);
        assert!(fidelity(&PureState::basis(0), &PureState::basis(7).to_density()).abs() < EPS);
        assert!((fidelity(&PureState::bisep(), &rho_half()) - 0.5).abs() < EPS);
    }

    #[test]
    fn expectation_examples() {
        let rho = rho_half();
        assert!((expectation(&HermitianOperator::identity(), &rho) - 1.0).abs() < EPS);
        let w = HermitianOperator::projector(&PureState::w(), 1.0);
        assert!((expectation(&w, &rho) - 0.5).abs() < EPS);
        let zz0 = HermitianOperator::new("zz0".parse::<PauliString>().unwrap().matrix()).unwrap();
        assert!((expectation(&zz0, &PureState::bisep().to_density()) - 1.0).abs() < EPS);
    }

    #[test]
    fn decompose_identity_and_single_x() {
        let c = pauli_decompose(&Matrix8::identity()).unwrap();
        assert!((c[0] - 1.0).abs() < EPS);
        assert!(c[1..].iter().all(|v| v.abs() < EPS));

        let x00: PauliString = "x00".parse().unwrap();
        let c = pauli_decompose(&x00.matrix()).unwrap();
        for s in PauliString::all() {
            let want = if s == x00 { 1.0 } else { 0.0 };
            assert!((c[s.index()] - want).abs() < EPS, "{s}");
        }
    }

    #[test]
    fn decompose_ghz_projector() {
        // Brute-force oracle: Tr(Aσ)/8 by dense multiplication against every string.
        let a = PureState::ghz().projector();
        let mut nonzero = Vec::new();
        for s in PauliString::all() {
            let v = (a * s.matrix()).trace().re / 8.0;
            if v.abs() > 1e-12 {
                nonzero.push((s.to_string(), v));
            }
        }
        let expected: Vec<(&str, f64)> = vec![
            ("000", 0.125),
            ("0zz", 0.125),
            ("xxx", 0.125),
            ("xyy", -0.125),
            ("yxy", -0.125),
            ("yyx", -0.125),
            ("z0z", 0.125),
            ("zz0", 0.125),
        ];
        assert_eq!(nonzero.len(), expected.len());
        for ((name, v), (en, ev)) in nonzero.iter().zip(expected.iter()) {
            assert_eq!(name, en);
            assert!((v - ev).abs() < 1e-12);
        }
        let c = pauli_decompose(&a).unwrap();
        for (name, v) in expected {
            let s: PauliString = name.parse().unwrap();
            assert!((c[s.index()] - v).abs() < 1e-12);
        }
        assert_eq!(c.iter().filter(|v| v.abs() > 1e-12).count(), 8);
    }

    #[test]
    fn decompose_rejects_non_hermitian() {
        let mut m = Matrix8::identity();
        m[(0, 1)] = C64::new(1e-6, 0.0);
        assert!(matches!(pauli_decompose(&m), Err(Error::NotHermitian(_))));
        assert!(HermitianOperator::new(m).is_err());
    }

    #[test]
    fn small_asymmetry_is_absorbed() {
        let mut m = Matrix8::identity();
        m[(0, 1)] = C64::new(1e-10, 0.0);
        let a = HermitianOperator::new(m).unwrap();
        assert_eq!(a.entries()[(0, 1)], a.entries()[(1, 0)].conj());
    }

    #[test]
    fn density_validation() {
        let mut m = Matrix8::identity();
        assert!(matches!(DensityMatrix::new(m), Err(Error::BadTrace(_))));
        m = Matrix8::zeros();
        m[(0, 0)] = C64::new(1.5, 0.0);
        m[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotPositive(_))));
    }

    #[test]
    fn settings_for_identity_and_ghz() {
        assert!(required_settings(&HermitianOperator::identity(), SUPPORT_TOL).is_empty());
        let ghz = HermitianOperator::projector(&PureState::ghz(), 1.0);
        let cover: Vec<String> = required_settings(&ghz, SUPPORT_TOL)
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(cover, vec!["xxx", "xyy", "yxy", "yyx", "zzz"]);
    }

    #[test]
    fn minimal_cover_matches_exhaustive_search() {
        // Oracle: enumerate subsets of the 27 settings by increasing size.
        fn exists(strings: &[PauliString], from: usize, left: usize, chosen: &mut Vec<usize>) -> bool {
            if strings
                .iter()
                .all(|s| chosen.iter().any(|&i| MeasurementSetting::from_index(i).covers(*s)))
            {
                return true;
            }
            if left == 0 {
                return false;
            }
            for i in from..27 {
                chosen.push(i);
                if exists(strings, i + 1, left - 1, chosen) {
                    return true;
                }
                chosen.pop();
            }
            false
        }
        fn brute(strings: &[PauliString]) -> usize {
            (0..=27).find(|&k| exists(strings, 0, k, &mut Vec::new())).unwrap()
        }
        let mut g = rng::stream(11, 0);
        for _ in 0..30 {
            let n = g.random_range(1..6);
            let strings: Vec<PauliString> = (0..n).map(|_| PauliString::from_index(g.random_range(1..64))).collect();
            let cover = minimal_cover(&strings);
            assert!(strings.iter().all(|s| cover.iter().any(|m| m.covers(*s))));
            assert_eq!(cover.len(), brute(&strings), "{strings:?}");
        }
    }

    #[test]
    fn setting_and_string_parse_roundtrip() {
        for m in MeasurementSetting::all() {
            assert_eq!(m.to_string().parse::<MeasurementSetting>().unwrap(), m);
        }
        for s in PauliString::all() {
            assert_eq!(s.to_string().parse::<PauliString>().unwrap(), s);
        }
        assert!("xq0".parse::<PauliString>().is_err());
        assert!("xz".parse::<MeasurementSetting>().is_err());
        assert!("x0z".parse::<MeasurementSetting>().is_err());
    }

    #[test]
    fn outcome_probabilities_of_ghz_in_xxx() {
        let p = MeasurementSetting::from_str("xxx")
            .unwrap()
            .outcome_probabilities(&PureState::ghz().to_density());
        let xxx: PauliString = "xxx".parse().unwrap();
        let e: f64 = (0..8).map(|k| p[k] * xxx.outcome_sign(k)).sum();
        assert!((e - 1.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(PureState::basis(0)).unwrap();
        assert!(v.get("amplitudes_re").is_some() && v.get("amplitudes_im").is_some());
        let v = serde_json::to_value(DensityMatrix::maximally_mixed()).unwrap();
        assert_eq!(v["entries_re"].as_array().unwrap().len(), 8);
        let back: DensityMatrix = serde_json::from_value(v).unwrap();
        assert_eq!(back, DensityMatrix::maximally_mixed());
        let bad = serde_json::json!({"amplitudes_re": [1.0, 0.0], "amplitudes_im": [0.0, 0.0]});
        assert!(serde_json::from_value::<PureState>(bad).is_err());
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut g = rng::stream(5, 0);
        let u = random_unitary2(&mut g);
        assert!((u.adjoint() * u - Matrix2::identity()).norm() < 1e-12);
    }
}
