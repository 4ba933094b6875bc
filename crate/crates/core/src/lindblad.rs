//! Density operators and the Lindblad master equation
//! `dρ/dt = −i[H, ρ] + Σ_k (C_k ρ C_k† − ½{C_k†C_k, ρ})`.
//!
//! The integrator is an adaptive Dormand-Prince 5(4) scheme applied matrix-free:
//! with `H_eff = H − (i/2) Σ C†C` the right-hand side is
//! `−i(H_eff ρ − (H_eff ρ)†) + Σ C ρ C†`, so every product is sparse × dense.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{HilbertError, LinOp, RotorBasis};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("trace drifted to {trace} at t = {t}")]
    TraceDrift { t: f64, trace: f64 },
    #[error("sample times must be increasing and start at or after t0")]
    BadTimes,
    #[error("operator is not unitary (defect {0:e})")]
    NonUnitary(f64),
    #[error("step budget of {0} exhausted")]
    StepBudget(usize),
    #[error(transparent)]
    Basis(#[from] HilbertError),
}

/// Dense Hermitian state, stored row-major.
#[derive(Clone)]
pub struct DensityOp {
    basis: Arc<RotorBasis>,
    data: Vec<Complex64>,
}

impl fmt::Debug for DensityOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityOp")
            .field("dim", &self.dim())
            .field("trace", &self.trace())
            .finish()
    }
}

impl DensityOp {
    pub fn zeros(basis: &Arc<RotorBasis>) -> Self {
        let d = basis.dim();
        DensityOp {
            basis: Arc::clone(basis),
            data: vec![ZERO; d * d],
        }
    }

    /// `|ψ⟩⟨ψ|` for the normalized `ψ`.
    pub fn pure(basis: &Arc<RotorBasis>, psi: &[Complex64]) -> Self {
        let d = basis.dim();
        assert_eq!(psi.len(), d);
        let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        let mut rho = DensityOp::zeros(basis);
        for (r, a) in psi.iter().enumerate() {
            if *a == ZERO {
                continue;
            }
            for (c, b) in psi.iter().enumerate() {
                rho.data[r * d + c] = a * b.conj() / norm;
            }
        }
        rho
    }

    /// `Σ_k w_k |ψ_k⟩⟨ψ_k|` with each `ψ_k` normalized first.
    pub fn mixture(basis: &Arc<RotorBasis>, parts: &[(f64, Vec<Complex64>)]) -> Self {
        let mut rho = DensityOp::zeros(basis);
        for (w, psi) in parts {
            rho.add_scaled(*w, &DensityOp::pure(basis, psi));
        }
        rho
    }

    pub fn from_raw(basis: &Arc<RotorBasis>, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), basis.dim() * basis.dim());
        DensityOp {
            basis: Arc::clone(basis),
            data,
        }
    }

    pub fn from_dense(basis: &Arc<RotorBasis>, m: &DMatrix<Complex64>) -> Self {
        let d = basis.dim();
        let mut data = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                data[r * d + c] = m[(r, c)];
            }
        }
        DensityOp::from_raw(basis, data)
    }

    pub fn basis(&self) -> &Arc<RotorBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim() + c]
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.data[r * d + c])
    }

    pub fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i].re).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_scaled(&mut self, weight: f64, other: &DensityOp) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * weight;
        }
    }

    pub fn normalized(&self) -> DensityOp {
        let mut out = self.clone();
        let t = self.trace();
        if t > 0.0 {
            out.scale(1.0 / t);
        }
        out
    }

    /// Largest entry of `|ρ − ρ†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in r + 1..d {
                worst = worst.max((self.data[r * d + c] - self.data[c * d + r].conj()).norm());
            }
            worst = worst.max(self.data[r * d + r].im.abs());
        }
        worst
    }

    /// `ρ ← (ρ + ρ†)/2`.
    pub fn symmetrize(&mut self) {
        let d = self.dim();
        symmetrize(&mut self.data, d);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.to_dense());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `tr(ρ A)`.
    pub fn expectation(&self, op: &LinOp) -> Complex64 {
        let d = self.dim();
        op.triplets().map(|(r, c, v)| v * self.data[c * d + r]).sum()
    }

    /// Diagonal entries.
    pub fn populations(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i].re).collect()
    }

    /// `A ρ B†` for sparse `A`, `B`.
    pub fn sandwich(&self, a: &LinOp, b: &LinOp) -> DensityOp {
        let d = self.dim();
        let left = left_mul(a, &self.data, d);
        let mut out = vec![ZERO; d * d];
        // out = left · B†  :  out[r][c] = Σ_k left[r][k] conj(B[c][k])
        let (bp, bc, bv) = (b.row_ptr(), b.col_idx(), b.values());
        let rows: Vec<usize> = (0..d).filter(|&r| a.row_ptr()[r] != a.row_ptr()[r + 1]).collect();
        for c in 0..d {
            for p in bp[c]..bp[c + 1] {
                let k = bc[p];
                let w = bv[p].conj();
                for &r in &rows {
                    out[r * d + c] += left[r * d + k] * w;
                }
            }
        }
        DensityOp::from_raw(&self.basis, out)
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, u: &LinOp) -> DensityOp {
        self.sandwich(u, u)
    }

    /// Keeps only the rows and columns where `mask` is true.
    pub fn project(&self, mask: &[bool]) -> DensityOp {
        let d = self.dim();
        let mut out = vec![ZERO; d * d];
        for r in (0..d).filter(|&r| mask[r]) {
            for c in (0..d).filter(|&c| mask[c]) {
                out[r * d + c] = self.data[r * d + c];
            }
        }
        DensityOp::from_raw(&self.basis, out)
    }
}

const TILE: usize = 32;

fn symmetrize(data: &mut [Complex64], d: usize) {
    for r0 in (0..d).step_by(TILE) {
        for c0 in (r0..d).step_by(TILE) {
            for r in r0..(r0 + TILE).min(d) {
                for c in c0.max(r + 1)..(c0 + TILE).min(d) {
                    let avg = (data[r * d + c] + data[c * d + r].conj()) * 0.5;
                    data[r * d + c] = avg;
                    data[c * d + r] = avg.conj();
                }
            }
        }
    }
    for r in 0..d {
        data[r * d + r].im = 0.0;
    }
}

/// `A X` for sparse `A` and row-major dense `X`.
fn left_mul(a: &LinOp, x: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; d * d];
    left_mul_into(a, x, d, &mut out);
    out
}

fn left_mul_into(a: &LinOp, x: &[Complex64], d: usize, out: &mut [Complex64]) {
    let (rp, ci, vals) = (a.row_ptr(), a.col_idx(), a.values());
    for r in 0..d {
        let dst = &mut out[r * d..(r + 1) * d];
        dst.iter_mut().for_each(|v| *v = ZERO);
        for p in rp[r]..rp[r + 1] {
            let v = vals[p];
            let src = &x[ci[p] * d..(ci[p] + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += v * s;
            }
        }
    }
}

/// `tr(ρ σ)`, the overlap fidelity used for pure reference states.
pub fn fidelity(rho: &DensityOp, sigma: &DensityOp) -> f64 {
    let d = rho.dim();
    assert_eq!(d, sigma.dim());
    let mut acc = 0.0;
    for r in 0..d {
        for c in 0..d {
            acc += (rho.data[r * d + c] * sigma.data[c * d + r]).re;
        }
    }
    acc
}

/// `⟨ψ|ρ|ψ⟩` for a normalized ket.
pub fn overlap(rho: &DensityOp, psi: &[Complex64]) -> f64 {
    let d = rho.dim();
    let mut acc = ZERO;
    for (r, a) in psi.iter().enumerate() {
        if *a == ZERO {
            continue;
        }
        for (c, b) in psi.iter().enumerate() {
            if *b != ZERO {
                acc += a.conj() * rho.data[r * d + c] * b;
            }
        }
    }
    acc.re
}

/// Traces out every motional mode not listed in `keep`. The rotor is always kept.
pub fn partial_trace(rho: &DensityOp, keep: &[usize]) -> Result<DensityOp, HilbertError> {
    let basis = rho.basis();
    for &k in keep {
        if k >= basis.n_modes() {
            return Err(HilbertError::InvalidMode {
                index: k,
                modes: basis.n_modes(),
            });
        }
    }
    let cutoffs: Vec<usize> = keep.iter().map(|&k| basis.fock_cutoffs()[k]).collect();
    let cap = basis.excitation_cap();
    let reduced = Arc::new(RotorBasis::with_cap(basis.j_max(), cutoffs, cap)?);
    let md = basis.mode_dim();
    let rmd = reduced.mode_dim();
    // For every mode configuration: its reduced index and the traced-out remainder.
    let mut groups: HashMap<Vec<u8>, Vec<(usize, usize)>> = HashMap::new();
    for s in 0..md {
        let occ = basis.mode_state(s);
        let kept: Vec<u8> = keep.iter().map(|&k| occ[k]).collect();
        let traced: Vec<u8> = (0..occ.len())
            .filter(|k| !keep.contains(k))
            .map(|k| occ[k])
            .collect();
        let rs = reduced.mode_index(&kept).expect("kept configuration satisfies the cap");
        groups.entry(traced).or_default().push((s, rs));
    }
    let d = basis.dim();
    let rd = reduced.dim();
    let mut out = vec![ZERO; rd * rd];
    let rotor = basis.rotor_dim();
    for members in groups.values() {
        for r1 in 0..rotor {
            for &(s1, t1) in members {
                let row = r1 * md + s1;
                let rrow = r1 * rmd + t1;
                for r2 in 0..rotor {
                    for &(s2, t2) in members {
                        out[rrow * rd + r2 * rmd + t2] += rho.data[row * d + r2 * md + s2];
                    }
                }
            }
        }
    }
    Ok(DensityOp::from_raw(&reduced, out))
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn halved(self) -> Self {
        Tolerances {
            rtol: self.rtol / 2.0,
            atol: self.atol / 2.0,
        }
    }
}

/// Integrator bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Matrix entries actually integrated; below `d²` when the reachable set is small.
    #[serde(default)]
    pub state_entries: usize,
}

impl SolverStats {
    pub fn absorb(&mut self, other: SolverStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
        self.state_entries = self.state_entries.max(other.state_entries);
    }
}

/// A collapse list with its anti-Hermitian damping term, reusable across Hamiltonians.
#[derive(Clone, Debug)]
pub struct Dissipator {
    basis: Arc<RotorBasis>,
    kernels: Arc<Vec<CollapseKernel>>,
    damping: LinOp,
}

impl Dissipator {
    pub fn new(basis: &Arc<RotorBasis>, collapses: &[LinOp]) -> Result<Self, SolverError> {
        let mut decay = Vec::new();
        for c in collapses {
            if c.basis().as_ref() != basis.as_ref() {
                return Err(HilbertError::BasisMismatch.into());
            }
            if c.nnz() > 0 {
                decay.push(c.adjoint().mul(c)?);
            }
        }
        let damping = LinOp::sum(basis, &decay)?.scale(Complex64::new(0.0, -0.5));
        let d = basis.dim();
        let kernels = collapses
            .iter()
            .filter(|c| c.nnz() > 0)
            .map(|c| CollapseKernel {
                op: c.clone(),
                cols: c.adjoint(),
                rows: (0..d).filter(|&r| c.row_ptr()[r] != c.row_ptr()[r + 1]).collect(),
            })
            .collect();
        Ok(Dissipator {
            basis: Arc::clone(basis),
            kernels: Arc::new(kernels),
            damping,
        })
    }

    /// Number of nonzero collapse operators.
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// A Hamiltonian and collapse list prepared for repeated right-hand-side evaluation.
#[derive(Clone, Debug)]
pub struct Lindbladian {
    basis: Arc<RotorBasis>,
    h_eff: LinOp,
    collapses: Arc<Vec<CollapseKernel>>,
}

#[derive(Clone, Debug)]
struct CollapseKernel {
    op: LinOp,
    /// `C†`, giving column access for the reachability search.
    cols: LinOp,
    rows: Vec<usize>,
}

impl Lindbladian {
    pub fn new(h: &LinOp, collapses: &[LinOp]) -> Result<Self, SolverError> {
        Self::with_dissipator(h, &Dissipator::new(h.basis(), collapses)?)
    }

    pub fn with_dissipator(h: &LinOp, dissipator: &Dissipator) -> Result<Self, SolverError> {
        if h.basis().as_ref() != dissipator.basis.as_ref() {
            return Err(HilbertError::BasisMismatch.into());
        }
        Ok(Lindbladian {
            basis: Arc::clone(h.basis()),
            h_eff: h.add(&dissipator.damping)?,
            collapses: Arc::clone(&dissipator.kernels),
        })
    }

    pub fn basis(&self) -> &Arc<RotorBasis> {
        &self.basis
    }

    /// Writes `dρ/dt` into `out`, using `scratch` (length `d²`) as workspace.
    pub fn rhs(&self, rho: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let d = self.basis.dim();
        left_mul_into(&self.h_eff, rho, d, scratch);
        // out = -i (A - A†) with A = H_eff ρ, filled tile by tile
        for r0 in (0..d).step_by(TILE) {
            for c0 in (r0..d).step_by(TILE) {
                for r in r0..(r0 + TILE).min(d) {
                    for c in c0.max(r)..(c0 + TILE).min(d) {
                        let v = -I * scratch[r * d + c] + I * scratch[c * d + r].conj();
                        out[r * d + c] = v;
                        out[c * d + r] = v.conj();
                    }
                }
            }
        }
        for kernel in self.collapses.iter() {
            let (rp, ci, vals) = (kernel.op.row_ptr(), kernel.op.col_idx(), kernel.op.values());
            // scratch rows = (C ρ) rows, only where C has entries
            for &r in &kernel.rows {
                let dst = &mut scratch[r * d..(r + 1) * d];
                dst.iter_mut().for_each(|v| *v = ZERO);
                for p in rp[r]..rp[r + 1] {
                    let v = vals[p];
                    let src = &rho[ci[p] * d..(ci[p] + 1) * d];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            for &r in &kernel.rows {
                let row = &scratch[r * d..(r + 1) * d];
                for &c in &kernel.rows {
                    let mut acc = ZERO;
                    for p in rp[c]..rp[c + 1] {
                        acc += row[ci[p]] * vals[p].conj();
                    }
                    out[r * d + c] += acc;
                }
            }
        }
    }
}

/// A named scalar function of the state, sampled into a [`TimeSeries`].
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub eval: Arc<dyn Fn(&DensityOp) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new(name: impl Into<String>, eval: impl Fn(&DensityOp) -> f64 + Send + Sync + 'static) -> Self {
        Observable {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

/// Sampled observables. Column order is declaration order; time always comes first
/// on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(columns: Vec<String>) -> Self {
        TimeSeries {
            columns,
            times: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Appends a record. Times must increase strictly.
    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "record width mismatch");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "times must increase strictly ({t} after {last})");
        }
        self.times.push(t);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Value of `name` at the sample closest to `t`.
    pub fn value_at(&self, name: &str, t: f64) -> Option<f64> {
        let k = self.columns.iter().position(|c| c == name)?;
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        Some(self.rows[i][k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            out.push_str(&t.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated columns with a `#` header, as gnuplot reads them.
    pub fn to_dat(&self) -> String {
        let mut out = String::from("# time");
        for c in &self.columns {
            out.push(' ');
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            out.push_str(&t.to_string());
            for v in row {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty CSV")?;
        let mut cols = header.split(',');
        if cols.next() != Some("time") {
            return Err("first column must be time".into());
        }
        let mut ts = TimeSeries::new(cols.map(str::to_owned).collect());
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| format!("line {}: {e}", n + 2))?;
            if vals.len() != ts.columns.len() + 1 {
                return Err(format!("line {}: expected {} fields", n + 2, ts.columns.len() + 1));
            }
            if let Some(&last) = ts.times.last() {
                if vals[0] <= last {
                    return Err(format!("line {}: times not increasing", n + 2));
                }
            }
            ts.times.push(vals[0]);
            ts.rows.push(vals[1..].to_vec());
        }
        Ok(ts)
    }
}

/// Result of an [`evolve`] call.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub series: TimeSeries,
    pub final_state: DensityOp,
    pub stats: SolverStats,
}

// Dormand-Prince 5(4) tableau; the generator is time independent, so the node times are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 50_000_000;

/// A linear right-hand side `y ↦ L y` on some vectorization of `ρ`.
trait Generator {
    fn len(&self) -> usize;
    fn scratch_len(&self) -> usize;
    fn apply(&self, y: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]);
    fn symmetrize(&self, y: &mut [Complex64]);
}

impl Generator for Lindbladian {
    fn len(&self) -> usize {
        self.basis.dim() * self.basis.dim()
    }

    fn scratch_len(&self) -> usize {
        self.len()
    }

    fn apply(&self, y: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        self.rhs(y, out, scratch);
    }

    fn symmetrize(&self, y: &mut [Complex64]) {
        symmetrize(y, self.basis.dim());
    }
}

/// The generator restricted to the matrix entries reachable from an initial state.
///
/// Entries outside the reachable set stay exactly zero, so dropping them is lossless.
struct SparseGenerator {
    d: usize,
    entries: Vec<(usize, usize)>,
    partner: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
}

impl Generator for SparseGenerator {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn scratch_len(&self) -> usize {
        0
    }

    fn apply(&self, y: &[Complex64], out: &mut [Complex64], _scratch: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * y[self.cols[p] as usize];
            }
            *o = acc;
        }
    }

    fn symmetrize(&self, y: &mut [Complex64]) {
        for i in 0..y.len() {
            let j = self.partner[i];
            if j == i {
                y[i].im = 0.0;
            } else if j > i {
                let avg = (y[i] + y[j].conj()) * 0.5;
                y[i] = avg;
                y[j] = avg.conj();
            }
        }
    }
}

impl SparseGenerator {
    fn gather(&self, data: &[Complex64]) -> Vec<Complex64> {
        self.entries.iter().map(|&(r, c)| data[r * self.d + c]).collect()
    }

    fn scatter(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut data = vec![ZERO; self.d * self.d];
        for (&(r, c), &v) in self.entries.iter().zip(y) {
            data[r * self.d + c] = v;
        }
        data
    }
}

/// Above this share of tracked entries the dense kernel is cheaper.
const SPARSE_FRACTION: f64 = 0.25;

impl Lindbladian {
    /// Matrix entries `(r, c)` that can become nonzero when starting from `rho0`.
    fn reachable(&self, rho0: &DensityOp, limit: usize) -> Option<Vec<(usize, usize)>> {
        let d = self.basis.dim();
        let h_cols = self.h_eff.adjoint();
        // collapse indices with a nonzero in column k
        let mut touching: Vec<Vec<usize>> = vec![Vec::new(); d];
        for (idx, kernel) in self.collapses.iter().enumerate() {
            let rp = kernel.cols.row_ptr();
            for (k, list) in touching.iter_mut().enumerate() {
                if rp[k] != rp[k + 1] {
                    list.push(idx);
                }
            }
        }
        let mut seen = vec![false; d * d];
        let mut queue: Vec<(usize, usize)> = Vec::new();
        for (i, v) in rho0.data.iter().enumerate() {
            if *v != ZERO {
                seen[i] = true;
                queue.push((i / d, i % d));
            }
        }
        let mut head = 0;
        while head < queue.len() {
            if queue.len() > limit {
                return None;
            }
            let (k, l) = queue[head];
            head += 1;
            let mut visit = |r: usize, c: usize, queue: &mut Vec<(usize, usize)>| {
                if !seen[r * d + c] {
                    seen[r * d + c] = true;
                    queue.push((r, c));
                }
            };
            let (rp, ci) = (h_cols.row_ptr(), h_cols.col_idx());
            for p in rp[k]..rp[k + 1] {
                visit(ci[p], l, &mut queue);
            }
            for p in rp[l]..rp[l + 1] {
                visit(k, ci[p], &mut queue);
            }
            for &idx in &touching[k] {
                let ct = &self.collapses[idx].cols;
                let (rp, ci) = (ct.row_ptr(), ct.col_idx());
                if rp[l] == rp[l + 1] {
                    continue;
                }
                for p in rp[k]..rp[k + 1] {
                    for q in rp[l]..rp[l + 1] {
                        visit(ci[p], ci[q], &mut queue);
                    }
                }
            }
        }
        queue.sort_unstable();
        Some(queue)
    }

    fn restricted(&self, rho0: &DensityOp) -> Option<SparseGenerator> {
        let d = self.basis.dim();
        let limit = (SPARSE_FRACTION * (d * d) as f64) as usize;
        let entries = self.reachable(rho0, limit)?;
        let mut slot = vec![u32::MAX; d * d];
        for (i, &(r, c)) in entries.iter().enumerate() {
            slot[r * d + c] = i as u32;
        }
        let partner = entries.iter().map(|&(r, c)| slot[c * d + r] as usize).collect();
        let h = &self.h_eff;
        let (hp, hc, hv) = (h.row_ptr(), h.col_idx(), h.values());
        let mut row_ptr = Vec::with_capacity(entries.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut acc: HashMap<u32, Complex64> = HashMap::new();
        row_ptr.push(0);
        for &(r, c) in &entries {
            acc.clear();
            let mut add = |idx: u32, v: Complex64| {
                if idx != u32::MAX {
                    *acc.entry(idx).or_insert(ZERO) += v;
                }
            };
            // −i H_eff ρ
            for p in hp[r]..hp[r + 1] {
                add(slot[hc[p] * d + c], -I * hv[p]);
            }
            // +i ρ H_eff†
            for p in hp[c]..hp[c + 1] {
                add(slot[r * d + hc[p]], I * hv[p].conj());
            }
            for kernel in self.collapses.iter() {
                let (rp, ci, cv) = (kernel.op.row_ptr(), kernel.op.col_idx(), kernel.op.values());
                if rp[r] == rp[r + 1] || rp[c] == rp[c + 1] {
                    continue;
                }
                for p in rp[r]..rp[r + 1] {
                    for q in rp[c]..rp[c + 1] {
                        add(slot[ci[p] * d + ci[q]], cv[p] * cv[q].conj());
                    }
                }
            }
            let mut row: Vec<(u32, Complex64)> = acc.drain().filter(|(_, v)| *v != ZERO).collect();
            row.sort_unstable_by_key(|e| e.0);
            for (i, v) in row {
                cols.push(i);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Some(SparseGenerator {
            d,
            entries,
            partner,
            row_ptr,
            cols,
            vals,
        })
    }
}

struct Stepper<'a, G: Generator> {
    l: &'a G,
    tol: Tolerances,
    k: [Vec<Complex64>; 7],
    tmp: Vec<Complex64>,
    scratch: Vec<Complex64>,
    h: f64,
    fsal_valid: bool,
    stats: SolverStats,
}

impl<'a, G: Generator> Stepper<'a, G> {
    fn new(l: &'a G, tol: Tolerances) -> Self {
        let n = l.len();
        Stepper {
            l,
            tol,
            k: std::array::from_fn(|_| vec![ZERO; n]),
            tmp: vec![ZERO; n],
            scratch: vec![ZERO; l.scratch_len()],
            h: 0.0,
            fsal_valid: false,
            stats: SolverStats::default(),
        }
    }

    fn eval(&mut self, stage: usize, y_is_tmp: bool, y: &[Complex64]) {
        let src: &[Complex64] = if y_is_tmp { &self.tmp } else { y };
        // Borrow juggling: move the stage buffer out while evaluating.
        let mut out = std::mem::take(&mut self.k[stage]);
        self.l.apply(src, &mut out, &mut self.scratch);
        self.k[stage] = out;
        self.stats.rhs_evals += 1;
    }

    fn combine(&mut self, y: &[Complex64], h: f64, coeffs: &[(usize, f64)]) {
        self.tmp.copy_from_slice(y);
        for &(s, a) in coeffs {
            let w = a * h;
            for (t, k) in self.tmp.iter_mut().zip(&self.k[s]) {
                t.re += w * k.re;
                t.im += w * k.im;
            }
        }
    }

    fn initial_step(&mut self, y: &[Complex64], span: f64) -> f64 {
        self.eval(0, false, y);
        self.fsal_valid = true;
        let f_norm = rms(&self.k[0]);
        let y_norm = rms(y).max(1e-12);
        let h = if f_norm > 0.0 { 0.01 * y_norm / f_norm } else { span };
        h.min(span).max(1e-14)
    }

    /// Advances `y` from `t` to exactly `t_end`.
    fn advance(&mut self, y: &mut Vec<Complex64>, t: &mut f64, t_end: f64) -> Result<(), SolverError> {
        if self.h == 0.0 {
            self.h = self.initial_step(y, t_end - *t);
        }
        while *t < t_end {
            if self.stats.accepted + self.stats.rejected > MAX_STEPS {
                return Err(SolverError::StepBudget(MAX_STEPS));
            }
            let remaining = t_end - *t;
            let last = self.h >= remaining * (1.0 - 1e-12);
            let h = if last { remaining } else { self.h };
            if h < 1e-14 * t.abs().max(1.0) && !last {
                return Err(SolverError::StepUnderflow { t: *t, h });
            }
            if !self.fsal_valid {
                self.eval(0, false, y);
                self.fsal_valid = true;
            }
            self.combine(y, h, &[(0, A21)]);
            self.eval(1, true, y);
            self.combine(y, h, &[(0, A31), (1, A32)]);
            self.eval(2, true, y);
            self.combine(y, h, &[(0, A41), (1, A42), (2, A43)]);
            self.eval(3, true, y);
            self.combine(y, h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            self.eval(4, true, y);
            self.combine(y, h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            self.eval(5, true, y);
            self.combine(y, h, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
            self.eval(6, true, y);
            // max-norm over real components; an RMS over the mostly empty matrix is too lax
            let mut err = 0.0f64;
            let [k0, _, k2, k3, k4, k5, k6] = &self.k;
            for i in 0..y.len() {
                let e = (k0[i] * E1 + k2[i] * E3 + k3[i] * E4 + k4[i] * E5 + k5[i] * E6 + k6[i] * E7) * h;
                let (a, b) = (y[i], self.tmp[i]);
                let size = a.re.abs().max(a.im.abs()).max(b.re.abs()).max(b.im.abs());
                let scale = self.tol.atol + self.tol.rtol * size;
                err = err.max(e.re.abs().max(e.im.abs()) / scale);
            }
            if err <= 1.0 {
                *t = if last { t_end } else { *t + h };
                std::mem::swap(y, &mut self.tmp);
                self.l.symmetrize(y);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.stats.rejected += 1;
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        Ok(())
    }
}

fn rms(v: &[Complex64]) -> f64 {
    (v.iter().map(|x| x.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// Integrates from `t0` and samples `observables` at each of `times`.
pub fn evolve(
    l: &Lindbladian,
    rho0: &DensityOp,
    t0: f64,
    times: &[f64],
    observables: &[Observable],
    tol: Tolerances,
) -> Result<Evolution, SolverError> {
    evolve_impl(l, rho0, t0, times, observables, tol, true)
}

fn evolve_impl(
    l: &Lindbladian,
    rho0: &DensityOp,
    t0: f64,
    times: &[f64],
    observables: &[Observable],
    tol: Tolerances,
    allow_sparse: bool,
) -> Result<Evolution, SolverError> {
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < t0) {
        return Err(SolverError::BadTimes);
    }
    let trace0 = rho0.trace();
    let mut series = TimeSeries::new(observables.iter().map(|o| o.name.clone()).collect());
    let mut sample = |t: f64, ts: f64, data: Vec<Complex64>| -> Result<DensityOp, SolverError> {
        let state = DensityOp::from_raw(&l.basis, data);
        let trace = state.trace();
        if (trace - trace0).abs() > 10.0 * tol.rtol.max(1e-12) * trace0.max(1.0) {
            return Err(SolverError::TraceDrift { t, trace });
        }
        series.push(ts, observables.iter().map(|o| (o.eval)(&state)).collect());
        Ok(state)
    };
    let mut t = t0;
    let mut final_state = rho0.clone();
    let restricted = if allow_sparse { l.restricted(rho0) } else { None };
    let stats = if let Some(sparse) = restricted {
        let mut stepper = Stepper::new(&sparse, tol);
        let mut y = sparse.gather(&rho0.data);
        for &ts in times {
            if ts > t {
                stepper.advance(&mut y, &mut t, ts)?;
            }
            final_state = sample(t, ts, sparse.scatter(&y))?;
        }
        SolverStats {
            state_entries: sparse.len(),
            ..stepper.stats
        }
    } else {
        let mut stepper = Stepper::new(l, tol);
        let mut y = rho0.data.clone();
        for &ts in times {
            if ts > t {
                stepper.advance(&mut y, &mut t, ts)?;
            }
            final_state = sample(t, ts, y.clone())?;
        }
        SolverStats {
            state_entries: y.len(),
            ..stepper.stats
        }
    };
    Ok(Evolution {
        series,
        final_state,
        stats,
    })
}

/// Integrates to `t1` without sampling.
pub fn propagate(
    l: &Lindbladian,
    rho0: &DensityOp,
    duration: f64,
    tol: Tolerances,
) -> Result<(DensityOp, SolverStats), SolverError> {
    let ev = evolve(l, rho0, 0.0, &[duration], &[], tol)?;
    Ok((ev.final_state, ev.stats))
}

/// `exp(−iHt)` for Hermitian `H`, computed exactly on each connected block of `H`
/// and equal to the identity on states `H` does not touch.
pub fn unitary_propagator(h: &LinOp, t: f64) -> LinOp {
    let basis = h.basis();
    let d = basis.dim();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut touched = vec![false; d];
    for (r, c, _) in h.triplets() {
        touched[r] = true;
        touched[c] = true;
        let (a, b) = (find(&mut parent, r), find(&mut parent, c));
        if a != b {
            parent[a] = b;
        }
    }
    let mut blocks: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..d {
        if touched[i] {
            let root = find(&mut parent, i);
            blocks.entry(root).or_default().push(i);
        }
    }
    let mut trip: Vec<(usize, usize, Complex64)> = (0..d)
        .filter(|&i| !touched[i])
        .map(|i| (i, i, Complex64::new(1.0, 0.0)))
        .collect();
    let mut keys: Vec<_> = blocks.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let idx = &blocks[&key];
        let n = idx.len();
        let local = DMatrix::from_fn(n, n, |a, b| h.get(idx[a], idx[b]));
        let eig = SymmetricEigen::new(local);
        let v = &eig.eigenvectors;
        let phases: Vec<Complex64> = eig
            .eigenvalues
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * t))
            .collect();
        for a in 0..n {
            for b in 0..n {
                let val: Complex64 = (0..n).map(|k| v[(a, k)] * phases[k] * v[(b, k)].conj()).sum();
                if val.norm() > 1e-15 {
                    trip.push((idx[a], idx[b], val));
                }
            }
        }
    }
    LinOp::from_triplets(basis, trip)
}

/// Largest entry of `|U†U − 1|`.
pub fn unitarity_defect(u: &LinOp) -> f64 {
    let prod = u.adjoint().mul(u).expect("same basis");
    let id = LinOp::identity(u.basis());
    prod.sub(&id).expect("same basis").max_abs()
}

/// How a coherent pulse is applied to a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// Exact unitary, no dissipation.
    Exact,
    /// Lindblad evolution with the given collapse list active during the pulse.
    Noisy,
}

/// Applies a pulse `exp(−iH·duration)`, either exactly or with `collapses` active.
pub fn evolve_unitary(
    h: &LinOp,
    duration: f64,
    rho: &DensityOp,
    mode: PulseMode,
    collapses: &[LinOp],
    tol: Tolerances,
) -> Result<(DensityOp, SolverStats), SolverError> {
    match mode {
        PulseMode::Exact => Ok((rho.conjugate(&unitary_propagator(h, duration)), SolverStats::default())),
        PulseMode::Noisy => {
            let l = Lindbladian::new(h, collapses)?;
            propagate(&l, rho, duration, tol)
        }
    }
}

/// Applies a supplied unitary, rejecting non-unitary input.
pub fn apply_unitary(u: &LinOp, rho: &DensityOp) -> Result<DensityOp, SolverError> {
    let defect = unitarity_defect(u);
    if defect > 1e-10 {
        return Err(SolverError::NonUnitary(defect));
    }
    Ok(rho.conjugate(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{h_rot, interaction, ModeAction, RotorParams};

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn ket(b: &RotorBasis, i: usize) -> Vec<Complex64> {
        let mut v = vec![ZERO; b.dim()];
        v[i] = c(1.0);
        v
    }

    #[test]
    fn two_level_decay_matches_exponential() {
        let b = Arc::new(RotorBasis::rotor_only(1));
        let g = b.rotor_index(0, 0).unwrap();
        let e = b.rotor_index(1, 0).unwrap();
        let gamma: f64 = 1.7;
        let cop = LinOp::from_triplets(&b, vec![(g, e, c(gamma.sqrt()))]);
        let l = Lindbladian::new(&LinOp::zero(&b), &[cop]).unwrap();
        let rho = DensityOp::pure(&b, &ket(&b, e));
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 0.1).collect();
        let obs = [Observable::new("pe", move |r: &DensityOp| r.get(e, e).re)];
        let ev = evolve(&l, &rho, 0.0, &times, &obs, Tolerances::default()).unwrap();
        for (t, row) in ev.series.times.iter().zip(&ev.series.rows) {
            assert!((row[0] - (-gamma * t).exp()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn unitary_limit_keeps_populations_and_rotates_coherences() {
        let b = Arc::new(RotorBasis::rotor_only(2));
        let p = RotorParams {
            rotational_constant: 0.5,
            ..Default::default()
        };
        let h = h_rot(&b, &p);
        let i0 = b.rotor_index(0, 0).unwrap();
        let i1 = b.rotor_index(1, 0).unwrap();
        let mut psi = vec![ZERO; b.dim()];
        psi[i0] = c(1.0);
        psi[i1] = c(1.0);
        let rho = DensityOp::pure(&b, &psi);
        let l = Lindbladian::new(&h, &[]).unwrap();
        let ev = evolve(&l, &rho, 0.0, &[0.7], &[], Tolerances::default()).unwrap();
        let out = ev.final_state;
        assert!((out.get(i0, i0).re - 0.5).abs() < 1e-9);
        // ρ_01 picks up exp(+i ω t) with ω = E1 − E0 = 1
        let expected = Complex64::from_polar(0.5, 0.7);
        assert!((out.get(i0, i1) - expected).norm() < 1e-8);
    }

    #[test]
    fn carrier_pi_pulse_swaps() {
        let b = Arc::new(RotorBasis::rotor_only(7));
        let t = 0.3;
        let omega = std::f64::consts::PI / (2.0 * t);
        let h = interaction(&b, 7, 2, 0, -1, c(omega), ModeAction::Carrier).unwrap();
        let i = b.rotor_index(7, 2).unwrap();
        let j = b.rotor_index(7, 1).unwrap();
        let rho = DensityOp::pure(&b, &ket(&b, i));
        let (out, _) = evolve_unitary(&h, t, &rho, PulseMode::Exact, &[], Tolerances::default()).unwrap();
        assert!((out.get(j, j).re - 1.0).abs() < 1e-12);
        let (noisy, _) = evolve_unitary(&h, t, &rho, PulseMode::Noisy, &[], Tolerances::default()).unwrap();
        assert!((noisy.get(j, j).re - 1.0).abs() < 1e-8, "{:?}", noisy.get(j, j));
        let id = LinOp::identity(&b);
        let same = apply_unitary(&id, &rho).unwrap();
        assert_eq!(same.data(), rho.data());
        assert!(apply_unitary(&id.scale(c(2.0)), &rho).is_err());
    }

    #[test]
    fn reachable_set_matches_dense_integration() {
        let b = Arc::new(RotorBasis::new(3, vec![1]).unwrap());
        let drive = interaction(&b, 2, 1, 1, 0, c(3.0), ModeAction::Bsb(0)).unwrap();
        let cool = LinOp::annihilation(&b, 0).unwrap().scale(c(2.0));
        let decay = LinOp::from_triplets(
            &b,
            vec![(b.index(1, 1, &[0]).unwrap(), b.index(2, 1, &[0]).unwrap(), c(0.7))],
        );
        let l = Lindbladian::new(&drive, &[cool, decay]).unwrap();
        let mut psi = vec![ZERO; b.dim()];
        psi[b.index(3, 1, &[0]).unwrap()] = c(0.6);
        psi[b.index(2, -2, &[0]).unwrap()] = c(0.8);
        let rho = DensityOp::pure(&b, &psi);
        let sparse = evolve_impl(&l, &rho, 0.0, &[0.4, 1.0], &[], Tolerances::default(), true).unwrap();
        let dense = evolve_impl(&l, &rho, 0.0, &[0.4, 1.0], &[], Tolerances::default(), false).unwrap();
        assert!(sparse.stats.state_entries < dense.stats.state_entries);
        let diff = sparse
            .final_state
            .data()
            .iter()
            .zip(dense.final_state.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn partial_trace_of_entangled_state() {
        let b = Arc::new(RotorBasis::new(1, vec![1]).unwrap());
        let mut psi = vec![ZERO; b.dim()];
        psi[b.index(0, 0, &[0]).unwrap()] = c(1.0);
        psi[b.index(1, 0, &[1]).unwrap()] = c(1.0);
        let rho = DensityOp::pure(&b, &psi);
        let red = partial_trace(&rho, &[]).unwrap();
        assert_eq!(red.dim(), 4);
        assert!((red.trace() - 1.0).abs() < 1e-15);
        assert!((red.get(0, 0).re - 0.5).abs() < 1e-15);
        assert_eq!(red.get(0, 2), ZERO);
    }

    #[test]
    fn fidelity_basics() {
        let b = Arc::new(RotorBasis::rotor_only(1));
        let a = DensityOp::pure(&b, &ket(&b, 0));
        let z = DensityOp::pure(&b, &ket(&b, 1));
        assert!((fidelity(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&a, &z), 0.0);
        let mix = DensityOp::mixture(&b, &[(0.3, ket(&b, 0)), (0.7, ket(&b, 1))]);
        assert!((fidelity(&mix, &a) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut ts = TimeSeries::new(vec!["a".into(), "b".into()]);
        ts.push(0.0, vec![1.0, 0.5]);
        ts.push(0.1, vec![0.25, 1e-20]);
        let back = TimeSeries::from_csv(&ts.to_csv()).unwrap();
        assert_eq!(back, ts);
    }
}
