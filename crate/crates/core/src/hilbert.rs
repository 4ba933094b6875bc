//! Truncated rotor ⊗ motional-mode Hilbert spaces and the coherent operators on them.
//!
//! States are `|J, m⟩ ⊗ |n_1, …, n_k⟩`. The flat index is
//! `rotor_index(J, m) * mode_dim + mode_index(n)` with `rotor_index = J² + J + m`.
//! Units are ħ = 1 throughout.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HilbertError {
    #[error("state |{j}, {m}⟩ lies outside the truncation j_max = {j_max}")]
    OutOfTruncation { j: i64, m: i64, j_max: usize },
    #[error("motional mode {index} does not exist (basis has {modes} modes)")]
    InvalidMode { index: usize, modes: usize },
    #[error("operators live on different bases")]
    BasisMismatch,
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
}

/// Enumeration of `|J, m⟩ ⊗ |n⟩` under a rotational and motional truncation.
///
/// An optional cap on the total phonon number drops mode configurations with
/// `Σ n_k > cap`. Without a cap the space is the full tensor product.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct RotorBasis {
    j_max: usize,
    fock_cutoffs: Vec<usize>,
    excitation_cap: Option<usize>,
    mode_states: Vec<Vec<u8>>,
    mode_lookup: HashMap<Vec<u8>, usize>,
}

/// The serializable description of a [`RotorBasis`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub j_max: usize,
    #[serde(default)]
    pub fock_cutoffs: Vec<usize>,
    #[serde(default)]
    pub excitation_cap: Option<usize>,
}

impl TryFrom<BasisSpec> for RotorBasis {
    type Error = HilbertError;
    fn try_from(spec: BasisSpec) -> Result<Self, HilbertError> {
        RotorBasis::with_cap(spec.j_max, spec.fock_cutoffs, spec.excitation_cap)
    }
}

impl From<RotorBasis> for BasisSpec {
    fn from(basis: RotorBasis) -> Self {
        basis.spec()
    }
}

impl PartialEq for RotorBasis {
    fn eq(&self, other: &Self) -> bool {
        self.j_max == other.j_max
            && self.fock_cutoffs == other.fock_cutoffs
            && self.excitation_cap == other.excitation_cap
    }
}

impl fmt::Debug for RotorBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RotorBasis")
            .field("j_max", &self.j_max)
            .field("fock_cutoffs", &self.fock_cutoffs)
            .field("excitation_cap", &self.excitation_cap)
            .field("dim", &self.dim())
            .finish()
    }
}

/// A basis state resolved into its quantum numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisState {
    pub j: i64,
    pub m: i64,
    pub occupations: Vec<u8>,
}

impl RotorBasis {
    pub fn new(j_max: usize, fock_cutoffs: Vec<usize>) -> Result<Self, HilbertError> {
        Self::with_cap(j_max, fock_cutoffs, None)
    }

    pub fn rotor_only(j_max: usize) -> Self {
        Self::new(j_max, Vec::new()).expect("rotor-only basis is always valid")
    }

    pub fn with_cap(
        j_max: usize,
        fock_cutoffs: Vec<usize>,
        excitation_cap: Option<usize>,
    ) -> Result<Self, HilbertError> {
        if fock_cutoffs.iter().any(|&c| c > u8::MAX as usize - 1) {
            return Err(HilbertError::InvalidBasis(
                "Fock cutoffs above 254 are not supported".into(),
            ));
        }
        let mut mode_states: Vec<Vec<u8>> = vec![Vec::new()];
        for &cutoff in &fock_cutoffs {
            let mut next = Vec::with_capacity(mode_states.len() * (cutoff + 1));
            for prefix in &mode_states {
                for n in 0..=cutoff {
                    let mut s = prefix.clone();
                    s.push(n as u8);
                    next.push(s);
                }
            }
            mode_states = next;
        }
        if let Some(cap) = excitation_cap {
            mode_states.retain(|s| s.iter().map(|&n| n as usize).sum::<usize>() <= cap);
        }
        let mode_lookup = mode_states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(RotorBasis {
            j_max,
            fock_cutoffs,
            excitation_cap,
            mode_states,
            mode_lookup,
        })
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            j_max: self.j_max,
            fock_cutoffs: self.fock_cutoffs.clone(),
            excitation_cap: self.excitation_cap,
        }
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn fock_cutoffs(&self) -> &[usize] {
        &self.fock_cutoffs
    }

    pub fn excitation_cap(&self) -> Option<usize> {
        self.excitation_cap
    }

    pub fn n_modes(&self) -> usize {
        self.fock_cutoffs.len()
    }

    pub fn rotor_dim(&self) -> usize {
        (self.j_max + 1) * (self.j_max + 1)
    }

    pub fn mode_dim(&self) -> usize {
        self.mode_states.len()
    }

    pub fn dim(&self) -> usize {
        self.rotor_dim() * self.mode_dim()
    }

    pub fn contains(&self, j: i64, m: i64) -> bool {
        j >= 0 && j as usize <= self.j_max && m.abs() <= j
    }

    /// Index of `|J, m⟩` within the rotor factor.
    pub fn rotor_index(&self, j: i64, m: i64) -> Option<usize> {
        self.contains(j, m).then(|| (j * j + j + m) as usize)
    }

    pub fn rotor_state(&self, rotor_index: usize) -> (i64, i64) {
        let j = (rotor_index as f64).sqrt() as i64;
        // guard against rounding at perfect squares
        let j = if (j + 1) * (j + 1) <= rotor_index as i64 { j + 1 } else { j };
        (j, rotor_index as i64 - j * j - j)
    }

    pub fn mode_index(&self, occupations: &[u8]) -> Option<usize> {
        self.mode_lookup.get(occupations).copied()
    }

    pub fn mode_state(&self, mode_index: usize) -> &[u8] {
        &self.mode_states[mode_index]
    }

    pub fn index(&self, j: i64, m: i64, occupations: &[u8]) -> Option<usize> {
        let r = self.rotor_index(j, m)?;
        let s = self.mode_index(occupations)?;
        Some(r * self.mode_dim() + s)
    }

    /// Index of `|J, m⟩ ⊗ |vacuum⟩`.
    pub fn vacuum_index(&self, j: i64, m: i64) -> Option<usize> {
        let r = self.rotor_index(j, m)?;
        Some(r * self.mode_dim())
    }

    pub fn state(&self, index: usize) -> BasisState {
        let md = self.mode_dim();
        let (j, m) = self.rotor_state(index / md);
        BasisState {
            j,
            m,
            occupations: self.mode_states[index % md].clone(),
        }
    }

    fn check_mode(&self, k: usize) -> Result<(), HilbertError> {
        if k >= self.n_modes() {
            return Err(HilbertError::InvalidMode {
                index: k,
                modes: self.n_modes(),
            });
        }
        Ok(())
    }

    /// `a_k†` on a mode configuration, or `None` if the result leaves the truncation.
    fn raise(&self, s: usize, k: usize) -> Option<(usize, f64)> {
        let mut occ = self.mode_states[s].clone();
        let n = occ[k] as usize;
        if n >= self.fock_cutoffs[k] {
            return None;
        }
        occ[k] += 1;
        self.mode_index(&occ).map(|t| (t, ((n + 1) as f64).sqrt()))
    }

    fn lower(&self, s: usize, k: usize) -> Option<(usize, f64)> {
        let mut occ = self.mode_states[s].clone();
        let n = occ[k] as usize;
        if n == 0 {
            return None;
        }
        occ[k] -= 1;
        self.mode_index(&occ).map(|t| (t, (n as f64).sqrt()))
    }

    fn mode_map(&self, action: ModeAction) -> Vec<Option<(usize, f64)>> {
        (0..self.mode_dim())
            .map(|s| match action {
                ModeAction::Carrier => Some((s, 1.0)),
                ModeAction::Bsb(k) => self.raise(s, k),
                ModeAction::Rsb(k) => self.lower(s, k),
            })
            .collect()
    }
}

/// Action of an interaction on the motional modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeAction {
    /// Identity on the modes.
    Carrier,
    /// Adds a phonon to mode `k`.
    Bsb(usize),
    /// Removes a phonon from mode `k`.
    Rsb(usize),
}

impl ModeAction {
    fn mode(self) -> Option<usize> {
        match self {
            ModeAction::Carrier => None,
            ModeAction::Bsb(k) | ModeAction::Rsb(k) => Some(k),
        }
    }
}

/// Sparse complex operator in compressed-row form.
#[derive(Clone)]
pub struct LinOp {
    basis: Arc<RotorBasis>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinOp")
            .field("dim", &self.dim())
            .field("nnz", &self.nnz())
            .finish()
    }
}

impl LinOp {
    /// Builds an operator from `(row, col, value)` triplets; duplicates are summed
    /// and exact zeros dropped.
    ///
    /// # Panics
    /// If any index is out of range.
    pub fn from_triplets(
        basis: &Arc<RotorBasis>,
        mut triplets: Vec<(usize, usize, Complex64)>,
    ) -> LinOp {
        let dim = basis.dim();
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "operator index ({r}, {c}) out of range {dim}");
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_idx.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != ZERO {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        LinOp {
            basis: Arc::clone(basis),
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        }
    }

    pub fn zero(basis: &Arc<RotorBasis>) -> LinOp {
        LinOp::from_triplets(basis, Vec::new())
    }

    pub fn identity(basis: &Arc<RotorBasis>) -> LinOp {
        let trip = (0..basis.dim()).map(|i| (i, i, Complex64::new(1.0, 0.0))).collect();
        LinOp::from_triplets(basis, trip)
    }

    pub fn diagonal(basis: &Arc<RotorBasis>, diag: impl Fn(&BasisState) -> f64) -> LinOp {
        let trip = (0..basis.dim())
            .map(|i| (i, i, Complex64::new(diag(&basis.state(i)), 0.0)))
            .collect();
        LinOp::from_triplets(basis, trip)
    }

    /// `Σ amp · |r⟩⟨c| ⊗ M` for rotor-factor triplets `(r, c, amp)` and a mode action `M`.
    /// Terms whose mode image leaves the truncation are dropped.
    pub fn rotor_with_mode(
        basis: &Arc<RotorBasis>,
        rotor_terms: &[(usize, usize, Complex64)],
        action: ModeAction,
    ) -> Result<LinOp, HilbertError> {
        if let Some(k) = action.mode() {
            basis.check_mode(k)?;
        }
        let md = basis.mode_dim();
        let map = basis.mode_map(action);
        let mut trip = Vec::with_capacity(rotor_terms.len() * md);
        for &(r, c, amp) in rotor_terms {
            for (s, image) in map.iter().enumerate() {
                if let Some((t, f)) = *image {
                    trip.push((r * md + t, c * md + s, amp * f));
                }
            }
        }
        Ok(LinOp::from_triplets(basis, trip))
    }

    /// Rotor identity ⊗ `a_k`.
    pub fn annihilation(basis: &Arc<RotorBasis>, k: usize) -> Result<LinOp, HilbertError> {
        let one = Complex64::new(1.0, 0.0);
        let terms: Vec<_> = (0..basis.rotor_dim()).map(|r| (r, r, one)).collect();
        LinOp::rotor_with_mode(basis, &terms, ModeAction::Rsb(k))
    }

    pub fn basis(&self) -> &Arc<RotorBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.col_idx[p], self.values[p]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[range.clone()].binary_search(&col) {
            Ok(p) => self.values[range.start + p],
            Err(_) => ZERO,
        }
    }

    pub fn same_basis(&self, other: &LinOp) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis
    }

    fn require_same(&self, other: &LinOp) -> Result<(), HilbertError> {
        if self.same_basis(other) {
            Ok(())
        } else {
            Err(HilbertError::BasisMismatch)
        }
    }

    pub fn adjoint(&self) -> LinOp {
        let trip = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        LinOp::from_triplets(&self.basis, trip)
    }

    pub fn scale(&self, factor: Complex64) -> LinOp {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        if factor == ZERO {
            return LinOp::zero(&self.basis);
        }
        out
    }

    pub fn add(&self, other: &LinOp) -> Result<LinOp, HilbertError> {
        self.require_same(other)?;
        let trip = self.triplets().chain(other.triplets()).collect();
        Ok(LinOp::from_triplets(&self.basis, trip))
    }

    pub fn sub(&self, other: &LinOp) -> Result<LinOp, HilbertError> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Sum of several operators on one basis.
    pub fn sum<'a>(
        basis: &Arc<RotorBasis>,
        ops: impl IntoIterator<Item = &'a LinOp>,
    ) -> Result<LinOp, HilbertError> {
        let mut trip = Vec::new();
        for op in ops {
            if !(Arc::ptr_eq(basis, &op.basis) || **basis == *op.basis) {
                return Err(HilbertError::BasisMismatch);
            }
            trip.extend(op.triplets());
        }
        Ok(LinOp::from_triplets(basis, trip))
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &LinOp) -> Result<LinOp, HilbertError> {
        self.require_same(other)?;
        let mut trip = Vec::new();
        for (r, k, a) in self.triplets() {
            for p in other.row_ptr[k]..other.row_ptr[k + 1] {
                trip.push((r, other.col_idx[p], a * other.values[p]));
            }
        }
        Ok(LinOp::from_triplets(&self.basis, trip))
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim());
        (0..self.dim())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|p| self.values[p] * x[self.col_idx[p]])
                    .sum()
            })
            .collect()
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(r, c, _)| r == c)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// Builds an operator from a dense matrix, dropping entries below `cutoff`.
    pub fn from_dense(basis: &Arc<RotorBasis>, m: &DMatrix<Complex64>, cutoff: f64) -> LinOp {
        assert_eq!(m.nrows(), basis.dim());
        let mut trip = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)].norm() > cutoff {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        LinOp::from_triplets(basis, trip)
    }
}

fn rotor_pair(
    basis: &RotorBasis,
    j: i64,
    m: i64,
    dj: i64,
    dm: i64,
) -> Result<(usize, usize), HilbertError> {
    let out_of = |j: i64, m: i64| HilbertError::OutOfTruncation {
        j,
        m,
        j_max: basis.j_max(),
    };
    let src = basis.rotor_index(j, m).ok_or_else(|| out_of(j, m))?;
    let dst = basis
        .rotor_index(j + dj, m + dm)
        .ok_or_else(|| out_of(j + dj, m + dm))?;
    Ok((dst, src))
}

/// `T(J, m, δJ, δm) = |J+δJ, m+δm⟩⟨J, m|` on the rotor, identity on the modes.
pub fn ladder(
    basis: &Arc<RotorBasis>,
    j: i64,
    m: i64,
    dj: i64,
    dm: i64,
) -> Result<LinOp, HilbertError> {
    let (dst, src) = rotor_pair(basis, j, m, dj, dm)?;
    LinOp::rotor_with_mode(basis, &[(dst, src, Complex64::new(1.0, 0.0))], ModeAction::Carrier)
}

/// Model for the engineered nonlinear shifts `δω_{J,m}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftModel {
    /// Unresolved regime: no shifts.
    #[default]
    Zero,
    /// `δω = κ m²`. A placeholder form; the shifts are not otherwise specified.
    Quadratic { kappa: f64 },
    /// Explicit `(J, m, δω)` entries; missing sublevels are unshifted.
    Table { entries: Vec<(i64, i64, f64)> },
}

/// Nuclear magneton over ħ in rad s⁻¹ T⁻¹.
pub const NUCLEAR_MAGNETON_OVER_HBAR: f64 = 5.050_783_739_3e-27 / 1.054_571_817e-34;

/// Rotational and Zeeman parameters of the rotor, as angular frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorParams {
    /// `B_R / ħ`.
    pub rotational_constant: f64,
    #[serde(default)]
    pub g_factor: f64,
    /// Magnetic field in tesla.
    #[serde(default)]
    pub field: f64,
    #[serde(default)]
    pub nonlinear_shifts: ShiftModel,
}

impl Default for RotorParams {
    fn default() -> Self {
        RotorParams {
            rotational_constant: 1.0,
            g_factor: 0.0,
            field: 0.0,
            nonlinear_shifts: ShiftModel::Zero,
        }
    }
}

impl RotorParams {
    /// `ω_Z = g_J μ_N B / ħ`.
    pub fn zeeman_rate(&self) -> f64 {
        self.g_factor * NUCLEAR_MAGNETON_OVER_HBAR * self.field
    }

    pub fn omega_j(&self, j: i64) -> f64 {
        self.rotational_constant * (j * (j + 1)) as f64
    }

    pub fn shift(&self, j: i64, m: i64) -> f64 {
        match &self.nonlinear_shifts {
            ShiftModel::Zero => 0.0,
            ShiftModel::Quadratic { kappa } => kappa * (m * m) as f64,
            ShiftModel::Table { entries } => entries
                .iter()
                .filter(|(jj, mm, _)| *jj == j && *mm == m)
                .map(|(_, _, w)| *w)
                .sum(),
        }
    }
}

/// Diagonal `ω_J + m ω_Z` on every `|J, m⟩`.
pub fn h_rot(basis: &Arc<RotorBasis>, params: &RotorParams) -> LinOp {
    let wz = params.zeeman_rate();
    LinOp::diagonal(basis, |s| params.omega_j(s.j) + s.m as f64 * wz)
}

/// Diagonal `δω_{J,m}`.
pub fn h_nonlinear(basis: &Arc<RotorBasis>, params: &RotorParams) -> LinOp {
    LinOp::diagonal(basis, |s| params.shift(s.j, s.m))
}

/// Smallest splitting between Raman transitions (`δm ∈ {±1, ±2}`) inside `J_C`.
pub fn raman_gap_min(params: &RotorParams, j_c: i64) -> f64 {
    let mut best = f64::INFINITY;
    for m in -j_c..=j_c {
        for dm in [-2, -1, 1, 2] {
            let mp = m + dm;
            if mp.abs() <= j_c {
                best = best.min((params.shift(j_c, m) - params.shift(j_c, mp)).abs());
            }
        }
    }
    best
}

/// Extreme splittings of `|δJ| = 1`, `δm ∈ {0, ±1}` transitions touching `J_C`.
pub fn direct_gap_minmax(params: &RotorParams, j_c: i64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for m in -j_c..=j_c {
        for dj in [-1, 1] {
            let jp = j_c + dj;
            if jp < 0 {
                continue;
            }
            for dm in -1..=1 {
                let mp = m + dm;
                if mp.abs() <= jp {
                    let gap = (params.shift(j_c, m) - params.shift(jp, mp)).abs();
                    lo = lo.min(gap);
                    hi = hi.max(gap);
                }
            }
        }
    }
    (lo, hi)
}

/// `Ω T(J, m, δJ, δm) ⊗ M + h.c.`
pub fn interaction(
    basis: &Arc<RotorBasis>,
    j: i64,
    m: i64,
    dj: i64,
    dm: i64,
    rabi: Complex64,
    action: ModeAction,
) -> Result<LinOp, HilbertError> {
    let (dst, src) = rotor_pair(basis, j, m, dj, dm)?;
    let forward = LinOp::rotor_with_mode(basis, &[(dst, src, rabi)], action)?;
    forward.add(&forward.adjoint())
}

/// `Σ_m Ω_m T(J, m, δJ, δm) ⊗ M + h.c.` over every `m` whose source and target
/// both lie in the truncation. `weight(m)` supplies the per-sublevel coupling
/// relative to `rabi`.
pub fn unresolved_interaction(
    basis: &Arc<RotorBasis>,
    j: i64,
    dj: i64,
    dm: i64,
    rabi: Complex64,
    action: ModeAction,
    weight: impl Fn(i64) -> f64,
) -> Result<LinOp, HilbertError> {
    if let Some(k) = action.mode() {
        basis.check_mode(k)?;
    }
    let mut terms = Vec::new();
    for m in -j..=j {
        if let (Some(src), Some(dst)) = (basis.rotor_index(j, m), basis.rotor_index(j + dj, m + dm)) {
            let w = weight(m);
            if w != 0.0 {
                terms.push((dst, src, rabi * w));
            }
        }
    }
    let forward = LinOp::rotor_with_mode(basis, &terms, action)?;
    forward.add(&forward.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn ket(basis: &RotorBasis, idx: usize) -> Vec<Complex64> {
        let mut v = vec![ZERO; basis.dim()];
        v[idx] = c(1.0);
        v
    }

    #[test]
    fn dimension_and_round_trip() {
        let b = RotorBasis::new(3, vec![2, 1]).unwrap();
        assert_eq!(b.dim(), 16 * 6);
        for i in 0..b.dim() {
            let s = b.state(i);
            assert_eq!(b.index(s.j, s.m, &s.occupations), Some(i));
        }
    }

    #[test]
    fn excitation_cap_prunes_modes() {
        let b = RotorBasis::with_cap(1, vec![2, 2, 2, 2], Some(1)).unwrap();
        assert_eq!(b.mode_dim(), 5);
        assert_eq!(b.mode_index(&[1, 1, 0, 0]), None);
    }

    #[test]
    fn ladder_moves_states() {
        let b = Arc::new(RotorBasis::rotor_only(8));
        let t = ladder(&b, 0, 0, 1, 0).unwrap();
        let out = t.apply(&ket(&b, b.rotor_index(0, 0).unwrap()));
        assert_eq!(out[b.rotor_index(1, 0).unwrap()], c(1.0));
        let t = ladder(&b, 7, 5, -1, 1).unwrap();
        let out = t.apply(&ket(&b, b.rotor_index(7, 5).unwrap()));
        assert_eq!(out[b.rotor_index(6, 6).unwrap()], c(1.0));
        assert_eq!(t.mul(&t).unwrap().nnz(), 0);
    }

    #[test]
    fn ladder_out_of_truncation_is_error() {
        let b = Arc::new(RotorBasis::rotor_only(3));
        assert!(matches!(
            ladder(&b, 3, 0, 1, 0),
            Err(HilbertError::OutOfTruncation { .. })
        ));
        assert!(ladder(&b, 2, 2, -1, 0).is_err());
    }

    #[test]
    fn rotational_spectrum() {
        let b = Arc::new(RotorBasis::rotor_only(8));
        let p = RotorParams {
            rotational_constant: 1.5,
            g_factor: 2.0,
            field: 1e-3,
            ..Default::default()
        };
        let h = h_rot(&b, &p);
        let e = |j, m| h.get(b.rotor_index(j, m).unwrap(), b.rotor_index(j, m).unwrap()).re;
        assert!((e(7, 0) - 56.0 * 1.5).abs() < 1e-12);
        let wz = p.zeeman_rate();
        assert!((e(3, 2) - e(3, -2) - 4.0 * wz).abs() < 1e-9 * wz.abs().max(1.0));
        let p0 = RotorParams {
            rotational_constant: 1.5,
            ..Default::default()
        };
        let h0 = h_rot(&b, &p0);
        let i1 = b.rotor_index(1, 1).unwrap();
        let i2 = b.rotor_index(1, -1).unwrap();
        assert_eq!(h0.get(i1, i1), c(3.0));
        assert_eq!(h0.get(i2, i2), c(3.0));
    }

    #[test]
    fn nonlinear_models() {
        let b = Arc::new(RotorBasis::rotor_only(4));
        assert_eq!(h_nonlinear(&b, &RotorParams::default()).nnz(), 0);
        let single = RotorParams {
            nonlinear_shifts: ShiftModel::Table {
                entries: vec![(2, 1, 0.3)],
            },
            ..Default::default()
        };
        let h = h_nonlinear(&b, &single);
        assert_eq!(h.nnz(), 1);
        let quad = RotorParams {
            nonlinear_shifts: ShiftModel::Quadratic { kappa: 0.5 },
            ..Default::default()
        };
        let h = h_nonlinear(&b, &quad);
        let i = b.rotor_index(3, -2).unwrap();
        assert_eq!(h.get(i, i), c(2.0));
    }

    #[test]
    fn gaps_for_zero_and_single_shift() {
        let p = RotorParams::default();
        assert_eq!(raman_gap_min(&p, 7), 0.0);
        assert_eq!(direct_gap_minmax(&p, 7), (0.0, 0.0));
        // A shift on one level in J_C + 1 that only one direct transition sees.
        let one = RotorParams {
            nonlinear_shifts: ShiftModel::Table {
                entries: vec![(8, 8, 0.7)],
            },
            ..Default::default()
        };
        let (lo, hi) = direct_gap_minmax(&one, 7);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.7);
    }

    #[test]
    fn interaction_is_hermitian_and_sidebands_add_phonons() {
        let b = Arc::new(RotorBasis::new(8, vec![2]).unwrap());
        let h = interaction(&b, 8, 3, -1, 0, Complex64::new(0.3, 0.4), ModeAction::Bsb(0)).unwrap();
        assert_eq!(h.hermiticity_defect(), 0.0);
        let src = b.index(8, 3, &[0]).unwrap();
        let out = h.apply(&ket(&b, src));
        let dst = b.index(7, 3, &[1]).unwrap();
        assert_eq!(out[dst], Complex64::new(0.3, 0.4));
        assert!(matches!(
            interaction(&b, 8, 3, -1, 0, c(1.0), ModeAction::Bsb(1)),
            Err(HilbertError::InvalidMode { .. })
        ));
    }

    #[test]
    fn unresolved_matches_loop() {
        let b = Arc::new(RotorBasis::new(5, vec![1]).unwrap());
        let w = |m: i64| 1.0 + 0.1 * m as f64;
        let u = unresolved_interaction(&b, 4, 1, 0, c(2.0), ModeAction::Rsb(0), w).unwrap();
        let mut parts = Vec::new();
        for m in -4..=4 {
            parts.push(interaction(&b, 4, m, 1, 0, c(2.0 * w(m)), ModeAction::Rsb(0)).unwrap());
        }
        let looped = LinOp::sum(&b, &parts).unwrap();
        assert!(u.sub(&looped).unwrap().max_abs() < 1e-15);
        let j0 = unresolved_interaction(&b, 0, 1, 0, c(1.0), ModeAction::Carrier, |_| 1.0).unwrap();
        assert_eq!(j0.nnz(), 2 * b.mode_dim());
    }
}
