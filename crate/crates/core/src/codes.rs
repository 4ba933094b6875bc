//! Codewords, logical operators and error-correction conditions.
//!
//! `CS(J_C, m₁, m₂)` encodes
//! `|0̄⟩ = √(m₂/M)|J_C, −m₁⟩ + √(m₁/M)|J_C, m₂⟩` and
//! `|1̄⟩ = √(m₁/M)|J_C, −m₂⟩ + √(m₂/M)|J_C, m₁⟩` with `M = m₁ + m₂`.
//! `A(J_C, m₀, m₁)` encodes directly in two sublevels.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angmom::slater_int;
use crate::hilbert::{LinOp, ModeAction, RotorBasis};
use crate::lindblad::DensityOp;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("invalid code parameters: {0}")]
    Invalid(String),
    #[error("code manifold J_C = {j_c} exceeds basis truncation j_max = {j_max}")]
    OutsideBasis { j_c: i64, j_max: usize },
}

/// Code family and parameters, as written in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodeParams {
    /// Counter-symmetric code `CS(J_C, m₁, m₂)`.
    Cs { j_c: i64, m1: i64, m2: i64 },
    /// Approximate code `A(J_C, m₀, m₁)`.
    A { j_c: i64, m0: i64, m1: i64 },
}

impl CodeParams {
    pub fn j_c(&self) -> i64 {
        match *self {
            CodeParams::Cs { j_c, .. } | CodeParams::A { j_c, .. } => j_c,
        }
    }

    /// Checks the family's validity predicate, naming the violated condition.
    pub fn validate(&self) -> Result<(), CodeError> {
        match *self {
            CodeParams::Cs { j_c, m1, m2 } => {
                // m₁ ≥ 3/2 for integer momenta means m₁ ≥ 2.
                if m1 < 2 {
                    return Err(CodeError::Invalid(format!("CS requires m1 >= 3/2, got {m1}")));
                }
                if m2 < m1 + 3 {
                    return Err(CodeError::Invalid(format!(
                        "CS requires m2 >= m1 + 3, got m1 = {m1}, m2 = {m2}"
                    )));
                }
                if j_c < m2 {
                    return Err(CodeError::Invalid(format!("CS requires J_C >= m2, got J_C = {j_c}, m2 = {m2}")));
                }
            }
            CodeParams::A { j_c, m0, m1 } => {
                if (m0 - m1).abs() < 3 {
                    return Err(CodeError::Invalid(format!(
                        "A requires |m0 - m1| >= 3, got m0 = {m0}, m1 = {m1}"
                    )));
                }
                if m0.abs() > j_c || m1.abs() > j_c {
                    return Err(CodeError::Invalid(format!(
                        "A requires |m0|, |m1| <= J_C = {j_c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for CodeParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            CodeParams::Cs { j_c, m1, m2 } => write!(f, "CS({j_c},{m1},{m2})"),
            CodeParams::A { j_c, m0, m1 } => write!(f, "A({j_c},{m0},{m1})"),
        }
    }
}

/// A built code: two codewords as sublevel amplitudes inside `J_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    params: CodeParams,
    codewords: [Vec<(i64, f64)>; 2],
}

impl CodeSpec {
    pub fn build(params: CodeParams) -> Result<Self, CodeError> {
        params.validate()?;
        Ok(Self::build_unchecked(params))
    }

    /// Builds without the validity predicate, for studying invalid parameters.
    pub fn build_unchecked(params: CodeParams) -> Self {
        let codewords = match params {
            CodeParams::Cs { m1, m2, .. } => {
                let big_m = (m1 + m2) as f64;
                let a = (m2 as f64 / big_m).sqrt();
                let b = (m1 as f64 / big_m).sqrt();
                [vec![(-m1, a), (m2, b)], vec![(-m2, b), (m1, a)]]
            }
            CodeParams::A { m0, m1, .. } => [vec![(m0, 1.0)], vec![(m1, 1.0)]],
        };
        CodeSpec { params, codewords }
    }

    pub fn cs(j_c: i64, m1: i64, m2: i64) -> Result<Self, CodeError> {
        Self::build(CodeParams::Cs { j_c, m1, m2 })
    }

    pub fn approximate(j_c: i64, m0: i64, m1: i64) -> Result<Self, CodeError> {
        Self::build(CodeParams::A { j_c, m0, m1 })
    }

    pub fn params(&self) -> CodeParams {
        self.params
    }

    pub fn j_c(&self) -> i64 {
        self.params.j_c()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.params, CodeParams::Cs { .. })
    }

    /// Sublevel amplitudes of `|0̄⟩` (`which = 0`) or `|1̄⟩`.
    pub fn codeword(&self, which: usize) -> &[(i64, f64)] {
        &self.codewords[which]
    }

    /// All sublevels carrying codeword population, ascending.
    pub fn support(&self) -> Vec<i64> {
        let mut s: Vec<i64> = self.codewords.iter().flatten().map(|&(m, _)| m).collect();
        s.sort_unstable();
        s
    }

    /// The sublevel pairs exchanged by the logical `X`.
    pub fn x_pairs(&self) -> Vec<(i64, i64)> {
        match self.params {
            CodeParams::Cs { m1, m2, .. } => vec![(m2, -m2), (-m1, m1)],
            CodeParams::A { m0, m1, .. } => vec![(m0, m1)],
        }
    }

    /// `(m, ±1)` weights of the logical `Z`.
    pub fn z_signs(&self) -> Vec<(i64, f64)> {
        match self.params {
            CodeParams::Cs { m1, m2, .. } => vec![(-m1, 1.0), (m2, 1.0), (-m2, -1.0), (m1, -1.0)],
            CodeParams::A { m0, m1, .. } => vec![(m0, 1.0), (m1, -1.0)],
        }
    }

    fn check_basis(&self, basis: &RotorBasis) -> Result<(), CodeError> {
        if self.j_c() as usize > basis.j_max() {
            return Err(CodeError::OutsideBasis {
                j_c: self.j_c(),
                j_max: basis.j_max(),
            });
        }
        Ok(())
    }

    /// A codeword embedded in `basis` with every mode in vacuum.
    pub fn ket(&self, basis: &RotorBasis, which: usize) -> Result<Vec<Complex64>, CodeError> {
        let (alpha, beta) = if which == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
        self.superposition(basis, Complex64::new(alpha, 0.0), Complex64::new(beta, 0.0))
    }

    /// `α|0̄⟩ + β|1̄⟩` in `basis` with every mode in vacuum.
    pub fn superposition(
        &self,
        basis: &RotorBasis,
        alpha: Complex64,
        beta: Complex64,
    ) -> Result<Vec<Complex64>, CodeError> {
        self.check_basis(basis)?;
        let mut v = vec![ZERO; basis.dim()];
        for (coef, word) in [(alpha, &self.codewords[0]), (beta, &self.codewords[1])] {
            for &(m, a) in word {
                let i = basis.vacuum_index(self.j_c(), m).expect("codeword inside J_C");
                v[i] += coef * a;
            }
        }
        Ok(v)
    }

    /// `|±̄⟩ = (|0̄⟩ ± |1̄⟩)/√2`.
    pub fn plus(&self, basis: &RotorBasis, sign: f64) -> Result<Vec<Complex64>, CodeError> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.superposition(basis, Complex64::new(s, 0.0), Complex64::new(sign * s, 0.0))
    }
}

/// Logical `X̄` and `Z̄` on `basis`, acting as identity on the modes.
pub fn logical_ops(code: &CodeSpec, basis: &Arc<RotorBasis>) -> Result<(LinOp, LinOp), CodeError> {
    code.check_basis(basis)?;
    let j = code.j_c();
    let idx = |m: i64| basis.rotor_index(j, m).expect("inside J_C");
    let one = Complex64::new(1.0, 0.0);
    let mut xt = Vec::new();
    for (a, b) in code.x_pairs() {
        xt.push((idx(a), idx(b), one));
        xt.push((idx(b), idx(a), one));
    }
    let zt: Vec<_> = code
        .z_signs()
        .into_iter()
        .map(|(m, s)| (idx(m), idx(m), Complex64::new(s, 0.0)))
        .collect();
    let x = LinOp::rotor_with_mode(basis, &xt, ModeAction::Carrier).expect("carrier");
    let z = LinOp::rotor_with_mode(basis, &zt, ModeAction::Carrier).expect("carrier");
    Ok((x, z))
}

/// Logical fidelities `(ℱ₀, ℱ₁, ℱ₊, ℱ₋)` with `ℱ = (1 ± ⟨op⟩)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicalFidelities {
    pub f0: f64,
    pub f1: f64,
    pub f_plus: f64,
    pub f_minus: f64,
}

/// `(⟨X̄⟩, ⟨Z̄⟩)` summed over any motional modes; linear in `rho`.
pub fn logical_expectations(rho: &DensityOp, code: &CodeSpec) -> (f64, f64) {
    let basis = rho.basis();
    let md = basis.mode_dim();
    let j = code.j_c();
    let mut x = 0.0;
    let mut z = 0.0;
    for s in 0..md {
        let at = |m: i64| basis.rotor_index(j, m).expect("inside J_C") * md + s;
        for (a, b) in code.x_pairs() {
            x += 2.0 * rho.get(at(a), at(b)).re;
        }
        for (m, sign) in code.z_signs() {
            z += sign * rho.get(at(m), at(m)).re;
        }
    }
    (x, z)
}

/// Evaluates the logical fidelities of a normalized `rho`, summing over any motional modes.
pub fn logical_fidelities(rho: &DensityOp, code: &CodeSpec) -> LogicalFidelities {
    let (x, z) = logical_expectations(rho, code);
    LogicalFidelities::from_expectations(x, z)
}

impl LogicalFidelities {
    pub fn from_expectations(x: f64, z: f64) -> Self {
        LogicalFidelities {
            f0: (1.0 + z) / 2.0,
            f1: (1.0 - z) / 2.0,
            f_plus: (1.0 + x) / 2.0,
            f_minus: (1.0 - x) / 2.0,
        }
    }
}

/// Which form of the Knill-Laflamme conditions to test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KlMode {
    /// `⟨ī|K_a†K_b|j̄⟩ = c_ab δ_ij`.
    Full,
    /// `⟨0̄|K_a†K_b|0̄⟩ = ⟨1̄|K_a†K_b|1̄⟩`.
    Symmetric,
    /// The symmetric condition up to `epsilon`.
    Relaxed { epsilon: f64 },
}

/// `⟨ī|K_a†K_b|j̄⟩` for one Kraus pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEntry {
    pub a: usize,
    pub b: usize,
    /// `[[⟨0|·|0⟩, ⟨0|·|1⟩], [⟨1|·|0⟩, ⟨1|·|1⟩]]`.
    pub block: [[Complex64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub mode: KlMode,
    pub entries: Vec<KlEntry>,
    /// Largest `|⟨0̄|K_a†K_b|1̄⟩|` or `|⟨1̄|K_a†K_b|0̄⟩|`.
    pub max_offdiagonal: f64,
    /// Largest `|⟨0̄|K_a†K_b|0̄⟩ − ⟨1̄|K_a†K_b|1̄⟩|`.
    pub max_asymmetry: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// First-order Kraus set `{1, C_1, …, C_n}` of a collapse list; the `√dt` factors
/// drop out of the conditions at this order.
pub fn first_order_kraus(basis: &Arc<RotorBasis>, collapses: &[LinOp]) -> Vec<LinOp> {
    std::iter::once(LinOp::identity(basis))
        .chain(collapses.iter().cloned())
        .collect()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Tests the Knill-Laflamme conditions for an arbitrary pair of kets.
pub fn kl_check_kets(
    ket0: &[Complex64],
    ket1: &[Complex64],
    kraus: &[LinOp],
    mode: KlMode,
    tolerance: f64,
) -> KlReport {
    let images: Vec<[Vec<Complex64>; 2]> = kraus.iter().map(|k| [k.apply(ket0), k.apply(ket1)]).collect();
    let mut entries = Vec::new();
    let mut max_off = 0.0f64;
    let mut max_asym = 0.0f64;
    for a in 0..kraus.len() {
        for b in 0..kraus.len() {
            let mut block = [[ZERO; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    block[i][j] = dot(&images[a][i], &images[b][j]);
                }
            }
            max_off = max_off.max(block[0][1].norm()).max(block[1][0].norm());
            max_asym = max_asym.max((block[0][0] - block[1][1]).norm());
            entries.push(KlEntry { a, b, block });
        }
    }
    let (passed, tolerance) = match mode {
        KlMode::Full => (max_off <= tolerance && max_asym <= tolerance, tolerance),
        KlMode::Symmetric => (max_asym <= tolerance, tolerance),
        KlMode::Relaxed { epsilon } => (max_asym <= epsilon, epsilon),
    };
    KlReport {
        mode,
        entries,
        max_offdiagonal: max_off,
        max_asymmetry: max_asym,
        tolerance,
        passed,
    }
}

/// Tests the Knill-Laflamme conditions for `code` against `kraus`.
pub fn kl_check(
    code: &CodeSpec,
    basis: &RotorBasis,
    kraus: &[LinOp],
    mode: KlMode,
    tolerance: f64,
) -> Result<KlReport, CodeError> {
    let k0 = code.ket(basis, 0)?;
    let k1 = code.ket(basis, 1)?;
    Ok(kl_check_kets(&k0, &k1, kraus, mode, tolerance))
}

/// `ℱ₊` of `|+̄⟩` after one unresolved `(δJ, δm)` event followed by the ideal
/// equal-coupling `J` and `m` corrections. Each sublevel amplitude is scaled by
/// `|c^{J_C}(J_C+δJ, m+δm, 1, δm)|`.
pub fn single_error_fidelity(code: &CodeSpec, dj: i64, dm: i64) -> f64 {
    let j = code.j_c();
    let w = |m: i64| slater_int(j, j + dj, m + dm, 1, dm).abs();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps: Vec<(i64, f64)> = code
        .codeword(0)
        .iter()
        .chain(code.codeword(1))
        .map(|&(m, a)| (m, s * a * w(m)))
        .collect();
    let norm: f64 = amps.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 1.0;
    }
    amps.iter_mut().for_each(|(_, a)| *a /= norm);
    let amp = |m: i64| amps.iter().filter(|(mm, _)| *mm == m).map(|(_, a)| a).sum::<f64>();
    let x: f64 = code.x_pairs().iter().map(|&(a, b)| 2.0 * amp(a) * amp(b)).sum();
    (1.0 + x) / 2.0
}

/// Worst `1 − ℱ₊` over single absorption/emission events `δJ = ±1`, `δm ∈ {−1, 0, 1}`.
pub fn worst_case_infidelity(code: &CodeSpec) -> f64 {
    let mut worst = 0.0f64;
    for dj in [-1, 1] {
        for dm in -1..=1 {
            worst = worst.max(1.0 - single_error_fidelity(code, dj, dm));
        }
    }
    worst.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> Arc<RotorBasis> {
        Arc::new(RotorBasis::rotor_only(8))
    }

    #[test]
    fn cs_codewords() {
        let b = basis();
        let code = CodeSpec::cs(7, 2, 5).unwrap();
        let k0 = code.ket(&b, 0).unwrap();
        let i = |m| b.rotor_index(7, m).unwrap();
        assert!((k0[i(-2)].re - (5.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((k0[i(5)].re - (2.0f64 / 7.0).sqrt()).abs() < 1e-15);
        let k1 = code.ket(&b, 1).unwrap();
        assert!((k1[i(-5)].re - (2.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((k1[i(2)].re - (5.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!(dot(&k0, &k1).norm() < 1e-15);
        assert!((dot(&k0, &k0).re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn approximate_codewords() {
        let b = basis();
        let code = CodeSpec::approximate(7, -2, 2).unwrap();
        let k0 = code.ket(&b, 0).unwrap();
        assert_eq!(k0[b.rotor_index(7, -2).unwrap()], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn validity_predicates() {
        assert!(CodeSpec::cs(7, 1, 5).is_err());
        assert!(CodeSpec::cs(7, 2, 4).is_err());
        assert!(CodeSpec::cs(4, 2, 5).is_err());
        assert!(CodeSpec::approximate(7, -1, 1).is_err());
        let err = CodeSpec::cs(7, 2, 4).unwrap_err().to_string();
        assert!(err.contains("m2 >= m1 + 3"));
    }

    #[test]
    fn logical_algebra() {
        let b = basis();
        let code = CodeSpec::cs(7, 2, 5).unwrap();
        let (x, z) = logical_ops(&code, &b).unwrap();
        let k0 = code.ket(&b, 0).unwrap();
        let k1 = code.ket(&b, 1).unwrap();
        let xk0 = x.apply(&k0);
        assert!(xk0.iter().zip(&k1).all(|(a, c)| (a - c).norm() < 1e-15));
        let zk1 = z.apply(&k1);
        assert!(zk1.iter().zip(&k1).all(|(a, c)| (a + c).norm() < 1e-15));
        let anti = x.mul(&z).unwrap().add(&z.mul(&x).unwrap()).unwrap();
        assert!(anti.max_abs() < 1e-15);
    }

    #[test]
    fn fidelities_of_simple_states() {
        let b = basis();
        let code = CodeSpec::cs(7, 2, 5).unwrap();
        let rho = DensityOp::pure(&b, &code.ket(&b, 0).unwrap());
        let f = logical_fidelities(&rho, &code);
        assert!((f.f0 - 1.0).abs() < 1e-14);
        let mixed = DensityOp::mixture(
            &b,
            &[(0.5, code.ket(&b, 0).unwrap()), (0.5, code.ket(&b, 1).unwrap())],
        );
        let f = logical_fidelities(&mixed, &code);
        assert!((f.f0 - 0.5).abs() < 1e-14 && (f.f_plus - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_kraus_passes_full() {
        let b = basis();
        let code = CodeSpec::approximate(7, -2, 2).unwrap();
        let r = kl_check(&code, &b, &[LinOp::identity(&b)], KlMode::Full, 1e-10).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn single_error_fidelity_cs725() {
        let code = CodeSpec::cs(7, 2, 5).unwrap();
        let f = single_error_fidelity(&code, 1, -1);
        assert!((f - 0.877).abs() < 0.002, "{f}");
        assert!(worst_case_infidelity(&code) >= 0.0);
    }
}
