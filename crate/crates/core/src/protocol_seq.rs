//! Measurement-based (sequential) error correction.
//!
//! Each round lets the rotor evolve freely under unresolved blackbody noise, then
//! checks for `δJ = ∓1` with blue-sideband pulses and a phonon readout. Flagged
//! branches get `m`-resolved checks, Raman corrections and, for exact codes, the
//! amplitude refreshment that undoes the Slater-weighted distortion.

use std::f64::consts::{FRAC_PI_3, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angmom::slater_int;
use crate::channels::{env_family, EnvParams, Resolution};
use crate::codes::{logical_expectations, CodeError, CodeParams, CodeSpec, LogicalFidelities};
use crate::hilbert::{unresolved_interaction, HilbertError, LinOp, ModeAction, RotorBasis};
use crate::lindblad::{
    evolve, unitary_propagator, DensityOp, Dissipator, Lindbladian, Observable, SolverError,
    SolverStats, TimeSeries, Tolerances,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error)]
pub enum SeqError {
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Basis(#[from] HilbertError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("check operator must be diagonal with entries ±1")]
    NotACheck,
    #[error("invalid sequential scenario: {0}")]
    Invalid(String),
}

/// The four syndrome checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    MinusJ,
    PlusJ,
    MinusM,
    PlusM,
}

/// Diagonal check with eigenvalue `−1` exactly on the `J_C + δJ` manifold.
pub fn check_op_j(basis: &Arc<RotorBasis>, j_c: i64, dj: i64) -> Result<LinOp, SeqError> {
    if dj.abs() != 1 {
        return Err(SeqError::Invalid(format!("δJ = {dj} is not ±1")));
    }
    Ok(LinOp::diagonal(basis, |s| if s.j == j_c + dj { -1.0 } else { 1.0 }))
}

/// Diagonal check with eigenvalue `−1` on `|J_C, m_C + δm⟩` for every `m_C` in the code support.
pub fn check_op_m(basis: &Arc<RotorBasis>, code: &CodeSpec, dm: i64) -> Result<LinOp, SeqError> {
    if dm.abs() != 1 {
        return Err(SeqError::Invalid(format!("δm = {dm} is not ±1")));
    }
    let flagged: Vec<i64> = code.support().iter().map(|m| m + dm).collect();
    let j_c = code.j_c();
    Ok(LinOp::diagonal(basis, |s| {
        if s.j == j_c && flagged.contains(&s.m) {
            -1.0
        } else {
            1.0
        }
    }))
}

/// Outcome of a projective `±1` measurement.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub prob_minus: f64,
    /// Normalized `+1` branch; `None` when it has zero probability.
    pub plus: Option<DensityOp>,
    /// Normalized `−1` branch; `None` when it has zero probability.
    pub minus: Option<DensityOp>,
}

const BRANCH_FLOOR: f64 = 1e-15;

/// Projects onto both eigenspaces of a diagonal `±1` check.
pub fn measure(rho: &DensityOp, check: &LinOp) -> Result<Measurement, SeqError> {
    let mask = minus_mask(check)?;
    let total = rho.trace();
    let minus = rho.project(&mask);
    let plus = rho.project(&mask.iter().map(|b| !b).collect::<Vec<_>>());
    let (pm, pp) = (minus.trace(), plus.trace());
    let keep = |p: f64, r: DensityOp| (p > BRANCH_FLOOR * total).then(|| r.normalized());
    Ok(Measurement {
        prob_minus: pm / total,
        plus: keep(pp, plus),
        minus: keep(pm, minus),
    })
}

fn minus_mask(check: &LinOp) -> Result<Vec<bool>, SeqError> {
    if !check.is_diagonal() {
        return Err(SeqError::NotACheck);
    }
    (0..check.dim())
        .map(|i| {
            let v = check.get(i, i);
            if (v - ONE).norm() < 1e-12 {
                Ok(false)
            } else if (v + ONE).norm() < 1e-12 {
                Ok(true)
            } else {
                Err(SeqError::NotACheck)
            }
        })
        .collect()
}

/// Swaps each rotor pair and acts as the identity on every other rotor state.
fn swap_unitary(basis: &Arc<RotorBasis>, pairs: &[((i64, i64), (i64, i64))]) -> Result<LinOp, SeqError> {
    let mut paired = vec![false; basis.rotor_dim()];
    let mut terms = Vec::new();
    for &((ja, ma), (jb, mb)) in pairs {
        let out = |j, m| HilbertError::OutOfTruncation {
            j,
            m,
            j_max: basis.j_max(),
        };
        let a = basis.rotor_index(ja, ma).ok_or_else(|| out(ja, ma))?;
        let b = basis.rotor_index(jb, mb).ok_or_else(|| out(jb, mb))?;
        terms.push((a, b, ONE));
        terms.push((b, a, ONE));
        paired[a] = true;
        paired[b] = true;
    }
    terms.extend((0..basis.rotor_dim()).filter(|&r| !paired[r]).map(|r| (r, r, ONE)));
    Ok(LinOp::rotor_with_mode(basis, &terms, ModeAction::Carrier)?)
}

/// Equal-coupling `J` correction: swaps `|J_C+δJ, m⟩ ↔ |J_C, m⟩` for every `m` both manifolds share.
pub fn correct_j_ideal(basis: &Arc<RotorBasis>, j_c: i64, dj: i64) -> Result<LinOp, SeqError> {
    if dj.abs() != 1 {
        return Err(SeqError::Invalid(format!("δJ = {dj} is not ±1")));
    }
    let reach = j_c.min(j_c + dj);
    let pairs: Vec<_> = (-reach..=reach).map(|m| ((j_c + dj, m), (j_c, m))).collect();
    swap_unitary(basis, &pairs)
}

/// Equal-coupling `m` correction restricted to the code support:
/// swaps `|J_C, m_C+δm⟩ ↔ |J_C, m_C⟩`.
pub fn correct_m_ideal(basis: &Arc<RotorBasis>, code: &CodeSpec, dm: i64) -> Result<LinOp, SeqError> {
    if dm.abs() != 1 {
        return Err(SeqError::Invalid(format!("δm = {dm} is not ±1")));
    }
    let j = code.j_c();
    let pairs: Vec<_> = code
        .support()
        .into_iter()
        .filter(|m| (m + dm).abs() <= j)
        .map(|m| ((j, m + dm), (j, m)))
        .collect();
    swap_unitary(basis, &pairs)
}

/// Relative amplitude picked up by `|J_C, m⟩` under an unresolved `(δJ, δm)` jump.
pub fn jump_weight(j_c: i64, m: i64, dj: i64, dm: i64) -> f64 {
    slater_int(j_c, j_c + dj, m + dm, 1, dm).abs()
}

/// Applies an unresolved `(δJ, δm)` jump to the `J_C` part of `psi` and renormalizes.
///
/// Components outside `J_C` are dropped. Returns `None` if nothing survives.
pub fn apply_jump(
    basis: &RotorBasis,
    psi: &[Complex64],
    j_c: i64,
    dj: i64,
    dm: i64,
) -> Option<Vec<Complex64>> {
    let md = basis.mode_dim();
    let mut out = vec![ZERO; basis.dim()];
    for (i, &a) in psi.iter().enumerate() {
        let (j, m) = basis.rotor_state(i / md);
        if j != j_c || a == ZERO {
            continue;
        }
        if let Some(r) = basis.rotor_index(j_c + dj, m + dm) {
            out[r * md + i % md] += a * jump_weight(j_c, m, dj, dm);
        }
    }
    let norm = out.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    (norm > 0.0).then(|| out.iter().map(|v| v / norm).collect())
}

/// Refreshment angles for one error type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshAngles {
    pub dj: i64,
    pub dm: i64,
    pub theta1: f64,
    pub theta2: f64,
}

fn cs_params(code: &CodeSpec) -> Result<(i64, i64, i64), SeqError> {
    match code.params() {
        CodeParams::Cs { j_c, m1, m2 } => Ok((j_c, m1, m2)),
        CodeParams::A { .. } => Err(SeqError::Invalid("refreshment needs an exact CS code".into())),
    }
}

/// Distortion factors `(a, b, c, d)` of the sublevels `(−m₁, m₂, −m₂, m₁)`.
pub fn q_elements(code: &CodeSpec, dj: i64, dm: i64) -> Result<[f64; 4], SeqError> {
    let (j, m1, m2) = cs_params(code)?;
    if dj.abs() != 1 || dm.abs() > 1 {
        return Err(SeqError::Invalid(format!("no single jump (δJ, δm) = ({dj}, {dm})")));
    }
    Ok([-m1, m2, -m2, m1].map(|m| jump_weight(j, m, dj, dm)))
}

/// `θ_k = 2 atan[√(m₁m₂)(x_k − y_k) / (m₂x_k + m₁y_k)]` with `(x₁, y₁) = (a, b)`, `(x₂, y₂) = (d, c)`.
pub fn refresh_angles(code: &CodeSpec, dj: i64, dm: i64) -> Result<RefreshAngles, SeqError> {
    let (_, m1, m2) = cs_params(code)?;
    let [a, b, c, d] = q_elements(code, dj, dm)?;
    let (m1, m2) = (m1 as f64, m2 as f64);
    let theta = |x: f64, y: f64| 2.0 * ((m1 * m2).sqrt() * (x - y) / (m2 * x + m1 * y)).atan();
    Ok(RefreshAngles {
        dj,
        dm,
        theta1: theta(a, b),
        theta2: theta(d, c),
    })
}

/// Rotor sublevel pairs `(src, dst)` of the two refresh rotations: `m₂ → −m₁` and `−m₂ → m₁`.
fn refresh_planes(m1: i64, m2: i64) -> [(i64, i64); 2] {
    [(m2, -m1), (-m2, m1)]
}

/// `Π_k exp(−i θ_k/2 · R_k)` with `R_k = i T(src→dst) + h.c.`, which rotates each
/// plane from `src` toward `dst` by `θ_k/2`.
pub fn q_rotation(basis: &Arc<RotorBasis>, code: &CodeSpec, theta: [f64; 2]) -> Result<LinOp, SeqError> {
    let (j, m1, m2) = cs_params(code)?;
    let mut terms = Vec::new();
    let mut touched = vec![false; basis.rotor_dim()];
    for ((src, dst), th) in refresh_planes(m1, m2).into_iter().zip(theta) {
        let outside = || CodeError::OutsideBasis {
            j_c: j,
            j_max: basis.j_max(),
        };
        let s = basis.rotor_index(j, src).ok_or_else(outside)?;
        let d = basis.rotor_index(j, dst).ok_or_else(outside)?;
        let (c, sn) = ((th / 2.0).cos(), (th / 2.0).sin());
        terms.extend([
            (s, s, Complex64::new(c, 0.0)),
            (d, d, Complex64::new(c, 0.0)),
            (d, s, Complex64::new(sn, 0.0)),
            (s, d, Complex64::new(-sn, 0.0)),
        ]);
        touched[s] = true;
        touched[d] = true;
    }
    terms.extend((0..basis.rotor_dim()).filter(|&r| !touched[r]).map(|r| (r, r, ONE)));
    Ok(LinOp::rotor_with_mode(basis, &terms, ModeAction::Carrier)?)
}

/// The refreshment: the distortion rotation with both angles negated.
pub fn refresh_unitary(basis: &Arc<RotorBasis>, code: &CodeSpec, angles: &RefreshAngles) -> Result<LinOp, SeqError> {
    q_rotation(basis, code, [-angles.theta1, -angles.theta2])
}

/// A constant Hamiltonian applied for a fixed time.
#[derive(Debug, Clone)]
pub struct Pulse {
    pub label: String,
    pub h: LinOp,
    pub duration: f64,
}

impl Pulse {
    pub fn unitary(&self) -> LinOp {
        unitary_propagator(&self.h, self.duration)
    }
}

/// Total duration of a pulse list.
pub fn sequence_duration(pulses: &[Pulse]) -> f64 {
    pulses.iter().map(|p| p.duration).sum()
}

/// Product of the pulse unitaries in application order.
pub fn sequence_unitary(basis: &Arc<RotorBasis>, pulses: &[Pulse]) -> Result<LinOp, SeqError> {
    pulses
        .iter()
        .try_fold(LinOp::identity(basis), |acc, p| Ok(p.unitary().mul(&acc)?))
}

/// `(Ω/2)(e^{iφ} |J, m+δm⟩⟨J, m| ⊗ M + h.c.)` applied for `|angle|/Ω`.
///
/// A negative angle is realized with the phase shifted by `π`.
pub fn carrier(
    basis: &Arc<RotorBasis>,
    j: i64,
    m: i64,
    dm: i64,
    angle: f64,
    phase: f64,
    rabi: f64,
    action: ModeAction,
) -> Result<Pulse, SeqError> {
    let phase = if angle < 0.0 { phase + PI } else { phase };
    let out = |j, m| HilbertError::OutOfTruncation {
        j,
        m,
        j_max: basis.j_max(),
    };
    let src = basis.rotor_index(j, m).ok_or_else(|| out(j, m))?;
    let dst = basis.rotor_index(j, m + dm).ok_or_else(|| out(j, m + dm))?;
    let g = Complex64::from_polar(rabi / 2.0, phase);
    let fwd = LinOp::rotor_with_mode(basis, &[(dst, src, g)], action)?;
    Ok(Pulse {
        label: format!("car J={j} m={m}→{}", m + dm),
        h: fwd.add(&fwd.adjoint())?,
        duration: angle.abs() / rabi,
    })
}

/// Pulses realizing `refresh_unitary` with Raman transfers: for each plane, a chain of
/// `δm = 2` π pulses carries the lower sublevel next to the upper one, a single rotation
/// acts there, and the chain is undone.
pub fn refresh_sequence(
    basis: &Arc<RotorBasis>,
    code: &CodeSpec,
    angles: &RefreshAngles,
    rabi: f64,
) -> Result<Vec<Pulse>, SeqError> {
    let (j, m1, m2) = cs_params(code)?;
    let mut pulses = Vec::new();
    // lower plane first, matching the order of the rotation product
    let planes = refresh_planes(m1, m2);
    for ((src, dst), theta) in [(planes[1], angles.theta2), (planes[0], angles.theta1)] {
        let (lo, hi) = (src.min(dst), src.max(dst));
        let mut chain = Vec::new();
        let mut at = lo;
        while hi - at > 2 {
            chain.push(carrier(basis, j, at, 2, PI, 0.0, rabi, ModeAction::Carrier)?);
            at += 2;
        }
        // each π pulse maps |a⟩ → −i|a+2⟩
        let carried = Complex64::new(0.0, -1.0).powi(chain.len() as i32);
        // rotation of lo toward hi by α/2 needs e^{iφ}·carried = i
        let phase = (Complex64::new(0.0, 1.0) / carried).arg();
        // the refresh turns src → dst by −θ/2
        let alpha = if src == lo { -theta } else { theta };
        let rotation = carrier(basis, j, at, hi - at, alpha, phase, rabi, ModeAction::Carrier)?;
        let undo: Vec<Pulse> = chain
            .iter()
            .rev()
            .map(|p| Pulse {
                label: format!("{} (undo)", p.label),
                h: p.h.scale(Complex64::new(-1.0, 0.0)),
                duration: p.duration,
            })
            .collect();
        pulses.extend(chain);
        pulses.push(rotation);
        pulses.extend(undo);
    }
    Ok(pulses)
}

/// Pulse shaping for the unresolved blue-sideband `J` correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseScheme {
    /// One pulse with Slater-weighted Rabi rates, timed for the best mean transfer.
    #[default]
    SinglePi,
    /// The three-pulse composite `π_{π/3} π_{−π/3} π_{π/3}`.
    Scrofulous,
    /// One π pulse with `m`-independent coupling.
    Uniform,
}

impl PulseScheme {
    fn phases(self) -> &'static [f64] {
        match self {
            PulseScheme::Scrofulous => &[FRAC_PI_3, -FRAC_PI_3, FRAC_PI_3],
            PulseScheme::SinglePi | PulseScheme::Uniform => &[0.0],
        }
    }
}

/// Relative sideband coupling of `|J_C+δJ, m⟩ ↔ |J_C, m⟩`.
pub fn bsb_weight(j_c: i64, dj: i64, m: i64) -> f64 {
    (4.0 * PI / 3.0).sqrt() * slater_int(j_c + dj, j_c, m, 1, 0)
}

type Mat2 = [[Complex64; 2]; 2];

/// Two-level propagator of `(ω/2)(e^{iφ}|e⟩⟨g| + h.c.)` in the `(g, e)` basis.
fn two_level(omega: f64, t: f64, phase: f64) -> Mat2 {
    let (c, s) = ((omega * t / 2.0).cos(), (omega * t / 2.0).sin());
    let mi = Complex64::new(0.0, -s);
    [
        [Complex64::new(c, 0.0), mi * Complex64::from_polar(1.0, -phase)],
        [mi * Complex64::from_polar(1.0, phase), Complex64::new(c, 0.0)],
    ]
}

/// Excited-state amplitude after the composite, starting in `g`.
fn transfer_amplitude(omega: f64, t: f64, phases: &[f64]) -> Complex64 {
    let mut psi = [ONE, ZERO];
    for &ph in phases {
        let u = two_level(omega, t, ph);
        psi = [u[0][0] * psi[0] + u[0][1] * psi[1], u[1][0] * psi[0] + u[1][1] * psi[1]];
    }
    psi[1]
}

/// Populations of `|J_C+δJ, m⟩` after a `δm = 0` jump out of the code space, codewords equally mixed.
pub fn jump_populations(code: &CodeSpec, dj: i64) -> Vec<(i64, f64)> {
    let j = code.j_c();
    let mut pops: Vec<(i64, f64)> = Vec::new();
    for which in 0..2 {
        for &(m, a) in code.codeword(which) {
            let p = (a * jump_weight(j, m, dj, 0)).powi(2);
            match pops.iter_mut().find(|e| e.0 == m) {
                Some(e) => e.1 += p,
                None => pops.push((m, p)),
            }
        }
    }
    let total: f64 = pops.iter().map(|e| e.1).sum();
    pops.retain(|e| e.1 > 0.0);
    pops.iter_mut().for_each(|e| e.1 /= total);
    pops
}

/// Segment duration maximizing the mean transfer probability for `code`'s jump populations.
pub fn calibrate_bsb(code: &CodeSpec, dj: i64, rabi: f64, scheme: PulseScheme) -> f64 {
    if scheme == PulseScheme::Uniform {
        return PI / rabi;
    }
    let j = code.j_c();
    let pops = jump_populations(code, dj);
    let omegas: Vec<(f64, f64)> = pops.iter().map(|&(m, p)| (p, rabi * bsb_weight(j, dj, m).abs())).collect();
    let mean_omega: f64 = omegas.iter().map(|(p, w)| p * w).sum();
    let transfer = |t: f64| -> f64 {
        omegas
            .iter()
            .map(|&(p, w)| p * transfer_amplitude(w, t, scheme.phases()).norm_sqr())
            .sum()
    };
    let nominal = PI / mean_omega;
    let (lo, hi) = (0.5 * nominal, 1.5 * nominal);
    let n = 400;
    let best = (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .max_by(|a, b| transfer(*a).total_cmp(&transfer(*b)))
        .expect("non-empty scan");
    golden_max(transfer, best - (hi - lo) / n as f64, best + (hi - lo) / n as f64)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while (b - a).abs() > 1e-13 * b.abs().max(1.0) {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    (a + b) / 2.0
}

/// Sideband pulses moving `|J_C+δJ, m⟩ ⊗ |n⟩` to `|J_C, m⟩ ⊗ |n+1⟩` on `mode`.
pub fn bsb_correction_j(
    basis: &Arc<RotorBasis>,
    code: &CodeSpec,
    dj: i64,
    rabi: f64,
    mode: usize,
    scheme: PulseScheme,
) -> Result<Vec<Pulse>, SeqError> {
    if dj.abs() != 1 {
        return Err(SeqError::Invalid(format!("δJ = {dj} is not ±1")));
    }
    let j = code.j_c();
    let t = calibrate_bsb(code, dj, rabi, scheme);
    scheme
        .phases()
        .iter()
        .map(|&ph| {
            let g = Complex64::from_polar(rabi / 2.0, ph);
            let h = match scheme {
                PulseScheme::Uniform => {
                    unresolved_interaction(basis, j + dj, -dj, 0, g, ModeAction::Bsb(mode), |m| {
                        if bsb_weight(j, dj, m) != 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    })?
                }
                _ => unresolved_interaction(basis, j + dj, -dj, 0, g, ModeAction::Bsb(mode), |m| {
                    bsb_weight(j, dj, m)
                })?,
            };
            Ok(Pulse {
                label: format!("bsb δJ={dj} φ={ph:.4}"),
                h,
                duration: t,
            })
        })
        .collect()
}

/// Resolved sideband π pulses `|J_C, m_C+δm⟩ ⊗ |n⟩ → |J_C, m_C⟩ ⊗ |n+1⟩`, one per support sublevel.
pub fn raman_correction_m(
    basis: &Arc<RotorBasis>,
    code: &CodeSpec,
    dm: i64,
    rabi: f64,
    mode: usize,
) -> Result<Vec<Pulse>, SeqError> {
    if dm.abs() != 1 {
        return Err(SeqError::Invalid(format!("δm = {dm} is not ±1")));
    }
    let j = code.j_c();
    code.support()
        .into_iter()
        .filter(|m| (m + dm).abs() <= j)
        .map(|m| carrier(basis, j, m + dm, -dm, PI, 0.0, rabi, ModeAction::Bsb(mode)))
        .collect()
}

/// Initial logical state of a sequential run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqInitial {
    #[default]
    Zero,
    Plus,
}

/// How phonon readouts are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeasurementMode {
    /// Every outcome is kept with its Born weight.
    #[default]
    Ensemble,
    /// Outcomes are sampled; the record is a single trajectory.
    Trajectory { seed: u64 },
}

fn default_rabi() -> f64 {
    500.0
}
fn default_spacing() -> f64 {
    0.05
}
fn default_duration() -> f64 {
    2.0
}
fn default_sample() -> f64 {
    0.01
}
fn default_j_max() -> usize {
    10
}
fn default_true() -> bool {
    true
}

/// A declarative sequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqScenario {
    pub code: CodeParams,
    #[serde(default)]
    pub env: EnvParams,
    #[serde(default)]
    pub initial: SeqInitial,
    /// Rabi rate of every pulse, in units of `Γ_C`.
    #[serde(default = "default_rabi")]
    pub omega_bsb: f64,
    /// Free evolution between correction blocks.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_sample")]
    pub sample_interval: f64,
    #[serde(default)]
    pub pulse_scheme: PulseScheme,
    #[serde(default = "default_true")]
    pub noise_during_pulses: bool,
    /// Refreshment after `m` correction; ignored for approximate codes.
    #[serde(default = "default_true")]
    pub refresh: bool,
    #[serde(default)]
    pub measurement: MeasurementMode,
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl SeqScenario {
    pub fn new(code: CodeParams) -> Self {
        SeqScenario {
            code,
            env: EnvParams::default(),
            initial: SeqInitial::Zero,
            omega_bsb: default_rabi(),
            spacing: default_spacing(),
            duration: default_duration(),
            sample_interval: default_sample(),
            pulse_scheme: PulseScheme::SinglePi,
            noise_during_pulses: true,
            refresh: true,
            measurement: MeasurementMode::Ensemble,
            baseline: true,
            j_max: default_j_max(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<CodeSpec, SeqError> {
        let code = CodeSpec::build(self.code)?;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.omega_bsb) && positive(self.spacing) && positive(self.duration) && positive(self.sample_interval)) {
            return Err(SeqError::Invalid(
                "omega_bsb, spacing, duration and sample_interval must be positive".into(),
            ));
        }
        if (code.j_c() + 1) as usize > self.j_max {
            return Err(SeqError::Invalid(format!(
                "j_max = {} leaves no room above J_C = {}",
                self.j_max,
                code.j_c()
            )));
        }
        Ok(code)
    }
}

/// Output of [`run_sequential`].
#[derive(Debug, Clone)]
pub struct SeqRun {
    pub series: TimeSeries,
    pub stats: SolverStats,
    pub rounds: usize,
    /// Largest population seen outside `J_C − 1 … J_C + 1`.
    pub leakage_bound: f64,
    /// Branch weight dropped below the pruning floor, summed over the run.
    pub pruned_weight: f64,
    /// State at `duration`; in ensemble mode this is the full branch mixture.
    pub final_state: DensityOp,
}

/// Column names written by [`run_sequential`], in order; the `free_` columns appear
/// only with the baseline enabled.
pub const SEQ_COLUMNS: [&str; 10] = [
    "f0", "f1", "f_plus", "f_minus", "fidelity", "pop_below", "pop_code", "pop_above", "leakage",
    "trace",
];

/// Linear raw quantities accumulated over branches: trace, ⟨X̄⟩, ⟨Z̄⟩, three manifold populations.
const RAW: usize = 6;

fn raw_observables(code: &CodeSpec) -> Vec<Observable> {
    let j = code.j_c();
    let cx = code.clone();
    let cz = code.clone();
    let pop = move |dj: i64| {
        move |r: &DensityOp| {
            let b = r.basis();
            let md = b.mode_dim();
            (0..b.dim())
                .filter(|i| b.rotor_state(i / md).0 == j + dj)
                .map(|i| r.get(i, i).re)
                .sum::<f64>()
        }
    };
    vec![
        Observable::new("trace", |r: &DensityOp| r.trace()),
        Observable::new("x", move |r: &DensityOp| logical_expectations(r, &cx).0),
        Observable::new("z", move |r: &DensityOp| logical_expectations(r, &cz).1),
        Observable::new("below", pop(-1)),
        Observable::new("code", pop(0)),
        Observable::new("above", pop(1)),
    ]
}

struct Recorder {
    grid: Vec<f64>,
    acc: Vec<[f64; RAW]>,
}

impl Recorder {
    fn points_in(&self, a: f64, b: f64) -> Vec<usize> {
        let eps = 1e-12 * b.abs().max(1.0);
        (0..self.grid.len())
            .filter(|&k| self.grid[k] > a + eps && self.grid[k] <= b + eps)
            .collect()
    }
}

struct Engine {
    obs: Vec<Observable>,
    tol: Tolerances,
    unresolved: Dissipator,
    resolved: Dissipator,
    silent: Dissipator,
    stats: SolverStats,
    recorder: Recorder,
}

impl Engine {
    /// Evolves `rho` from `t` for `duration`, recording any grid points passed, weighted by `weight`.
    fn segment(
        &mut self,
        rho: &DensityOp,
        t: f64,
        duration: f64,
        h: &LinOp,
        noise: Noise,
        weight: f64,
    ) -> Result<DensityOp, SeqError> {
        if duration <= 0.0 {
            return Ok(rho.clone());
        }
        let dissipator = match noise {
            Noise::Unresolved => &self.unresolved,
            Noise::Resolved => &self.resolved,
            Noise::Off => &self.silent,
        };
        let l = Lindbladian::with_dissipator(h, dissipator)?;
        let points = self.recorder.points_in(t, t + duration);
        let mut times: Vec<f64> = points.iter().map(|&k| (self.recorder.grid[k] - t).min(duration)).collect();
        if times.last().is_none_or(|&x| x < duration) {
            times.push(duration);
        }
        let ev = evolve(&l, rho, 0.0, &times, &self.obs, self.tol)?;
        self.stats.absorb(ev.stats);
        for (&k, row) in points.iter().zip(&ev.series.rows) {
            for (a, v) in self.recorder.acc[k].iter_mut().zip(row) {
                *a += weight * v;
            }
        }
        Ok(ev.final_state)
    }

    fn pulses(
        &mut self,
        rho: &DensityOp,
        t: &mut f64,
        pulses: &[Pulse],
        noise: Noise,
        weight: f64,
    ) -> Result<DensityOp, SeqError> {
        let mut state = rho.clone();
        for p in pulses {
            state = self.segment(&state, *t, p.duration, &p.h, noise, weight)?;
            *t += p.duration;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy)]
enum Noise {
    Unresolved,
    Resolved,
    Off,
}

/// Unnormalized branch tagged with the syndrome seen so far.
struct Branch {
    rho: DensityOp,
    dj: Option<i64>,
    dm: i64,
    t: f64,
}

/// Splits off the one-phonon part and returns it to the vacuum.
fn phonon_readout(rho: &DensityOp, excited: &[bool], reset: &LinOp) -> (DensityOp, DensityOp) {
    let flagged = rho.project(excited).sandwich(reset, reset);
    let ground = rho.project(&excited.iter().map(|b| !b).collect::<Vec<_>>());
    (ground, flagged)
}

fn merge(branches: Vec<Branch>) -> Vec<Branch> {
    let mut out: Vec<Branch> = Vec::new();
    for b in branches {
        match out.iter_mut().find(|o| o.dj == b.dj && o.dm == b.dm && (o.t - b.t).abs() < 1e-12) {
            Some(o) => o.rho.add_scaled(1.0, &b.rho),
            None => out.push(b),
        }
    }
    out
}

/// Runs the repeated correction protocol and, optionally, the uncorrected baseline.
pub fn run_sequential(scenario: &SeqScenario) -> Result<SeqRun, SeqError> {
    let code = scenario.validate()?;
    let basis = Arc::new(RotorBasis::new(scenario.j_max, vec![1])?);
    let rabi = scenario.omega_bsb;
    let noisy = scenario.noise_during_pulses;

    let unresolved_ops: Vec<LinOp> = env_family(&basis, &scenario.env, None, Resolution::Unresolved)
        .into_iter()
        .map(|c| c.op)
        .collect();
    let resolved_ops: Vec<LinOp> = env_family(&basis, &scenario.env, None, Resolution::Resolved)
        .into_iter()
        .map(|c| c.op)
        .collect();

    let n_samples = (scenario.duration / scenario.sample_interval).round() as usize;
    let grid: Vec<f64> = (0..=n_samples).map(|k| k as f64 * scenario.sample_interval).collect();
    let mut engine = Engine {
        obs: raw_observables(&code),
        tol: scenario.tolerances,
        unresolved: Dissipator::new(&basis, &unresolved_ops)?,
        resolved: Dissipator::new(&basis, &resolved_ops)?,
        silent: Dissipator::new(&basis, &[])?,
        stats: SolverStats::default(),
        recorder: Recorder {
            acc: vec![[0.0; RAW]; grid.len()],
            grid: grid.clone(),
        },
    };
    let pulse_noise = |n: Noise| if noisy { n } else { Noise::Off };

    // pulse programs, built once
    let bsb: Vec<(i64, Vec<Pulse>)> = [-1, 1]
        .into_iter()
        .map(|dj| Ok((dj, bsb_correction_j(&basis, &code, dj, rabi, 0, scenario.pulse_scheme)?)))
        .collect::<Result<_, SeqError>>()?;
    let raman: Vec<(i64, Vec<Pulse>)> = [-1, 1]
        .into_iter()
        .map(|dm| Ok((dm, raman_correction_m(&basis, &code, dm, rabi, 0)?)))
        .collect::<Result<_, SeqError>>()?;
    let refresh_on = scenario.refresh && code.is_exact();
    let mut refresh: Vec<((i64, i64), Vec<Pulse>)> = Vec::new();
    if refresh_on {
        for dj in [-1, 1] {
            for dm in -1..=1 {
                let angles = refresh_angles(&code, dj, dm)?;
                refresh.push(((dj, dm), refresh_sequence(&basis, &code, &angles, rabi)?));
            }
        }
    }
    let t_j: f64 = bsb.iter().map(|(_, p)| sequence_duration(p)).sum();
    let t_m: f64 = raman.iter().map(|(_, p)| sequence_duration(p)).sum();
    let t_ref = refresh.iter().map(|(_, p)| sequence_duration(p)).fold(0.0, f64::max);
    let block = t_j + t_m + t_ref;

    let excited: Vec<bool> = (0..basis.dim()).map(|i| basis.state(i).occupations[0] == 1).collect();
    let reset = LinOp::annihilation(&basis, 0)?;
    let zero_h = LinOp::zero(&basis);

    let psi0 = match scenario.initial {
        SeqInitial::Zero => code.ket(&basis, 0)?,
        SeqInitial::Plus => code.plus(&basis, 1.0)?,
    };
    let rho0 = DensityOp::pure(&basis, &psi0);
    {
        let row: Vec<f64> = engine.obs.iter().map(|o| (o.eval)(&rho0)).collect();
        engine.recorder.acc[0].copy_from_slice(&row);
    }
    let mut rng = match scenario.measurement {
        MeasurementMode::Trajectory { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        MeasurementMode::Ensemble => None,
    };
    // in trajectory mode a readout keeps one normalized branch
    let mut choose = |ground: DensityOp, flagged: DensityOp| -> (Option<DensityOp>, Option<DensityOp>) {
        match rng.as_mut() {
            None => (Some(ground), Some(flagged)),
            Some(rng) => {
                let (pg, pf) = (ground.trace(), flagged.trace());
                if rng.gen::<f64>() * (pg + pf) < pf {
                    (None, Some(flagged.normalized()))
                } else {
                    (Some(ground.normalized()), None)
                }
            }
        }
    };

    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut rounds = 0;
    let mut pruned = 0.0;
    let end = scenario.duration;
    while t < end - 1e-12 {
        // free evolution
        let free = scenario.spacing.min(end - t);
        rho = engine.segment(&rho, t, free, &zero_h, Noise::Unresolved, 1.0)?;
        t += free;
        if t >= end - 1e-12 {
            break;
        }
        rounds += 1;
        let round_end = t + block;
        let mut branches = vec![Branch {
            rho: rho.clone(),
            dj: None,
            dm: 0,
            t,
        }];
        // J checks
        for (dj, pulses) in &bsb {
            let mut next = Vec::new();
            for mut b in branches {
                let state = engine.pulses(&b.rho, &mut b.t, pulses, pulse_noise(Noise::Unresolved), 1.0)?;
                let (ground, flagged) = phonon_readout(&state, &excited, &reset);
                let (g, f) = choose(ground, flagged);
                if let Some(g) = g {
                    next.push(Branch { rho: g, ..b });
                }
                if let Some(f) = f {
                    next.push(Branch {
                        rho: f,
                        dj: Some(*dj),
                        dm: 0,
                        t: b.t,
                    });
                }
            }
            branches = merge(next);
        }
        // m checks on flagged branches
        for (dm, pulses) in &raman {
            let mut next = Vec::new();
            for mut b in branches {
                if b.dj.is_none() {
                    next.push(b);
                    continue;
                }
                let state = engine.pulses(&b.rho, &mut b.t, pulses, pulse_noise(Noise::Resolved), 1.0)?;
                let (ground, flagged) = phonon_readout(&state, &excited, &reset);
                let (g, f) = choose(ground, flagged);
                if let Some(g) = g {
                    next.push(Branch { rho: g, ..b });
                }
                if let Some(f) = f {
                    next.push(Branch {
                        rho: f,
                        dm: *dm,
                        ..b
                    });
                }
            }
            branches = merge(next);
        }
        // refreshment, then idle until the block ends
        let mut merged: Option<DensityOp> = None;
        for mut b in branches {
            let w = b.rho.trace();
            if w < BRANCH_FLOOR {
                pruned += w.max(0.0);
                continue;
            }
            if let (Some(dj), true) = (b.dj, refresh_on) {
                let pulses = &refresh
                    .iter()
                    .find(|(key, _)| *key == (dj, b.dm))
                    .expect("all syndromes have a refresh program")
                    .1;
                b.rho = engine.pulses(&b.rho, &mut b.t, pulses, pulse_noise(Noise::Resolved), 1.0)?;
            }
            let idle = (round_end - b.t).max(0.0);
            b.rho = engine.segment(&b.rho, b.t, idle, &zero_h, Noise::Unresolved, 1.0)?;
            match merged.as_mut() {
                Some(m) => m.add_scaled(1.0, &b.rho),
                None => merged = Some(b.rho),
            }
        }
        rho = merged.ok_or_else(|| SeqError::Invalid("every branch was pruned".into()))?;
        t = round_end;
    }

    // assemble columns
    let fidelity_of = |f: &LogicalFidelities| match scenario.initial {
        SeqInitial::Zero => f.f0,
        SeqInitial::Plus => f.f_plus,
    };
    let mut columns: Vec<String> = SEQ_COLUMNS.iter().map(|s| s.to_string()).collect();
    let baseline = if scenario.baseline {
        columns.extend(["free_f0", "free_f_plus", "free_fidelity"].map(String::from));
        let l = Lindbladian::with_dissipator(&zero_h, &engine.unresolved)?;
        let obs = raw_observables(&code);
        let ev = evolve(&l, &rho0, 0.0, &grid, &obs, scenario.tolerances)?;
        engine.stats.absorb(ev.stats);
        Some(ev.series)
    } else {
        None
    };
    let mut series = TimeSeries::new(columns);
    let mut leakage_bound = 0.0f64;
    for (k, &tk) in grid.iter().enumerate() {
        let [tr, x, z, below, inside, above] = engine.recorder.acc[k];
        let f = LogicalFidelities::from_expectations(x / tr, z / tr);
        let leakage = (1.0 - (below + inside + above) / tr).max(0.0);
        leakage_bound = leakage_bound.max(leakage);
        let mut row = vec![
            f.f0,
            f.f1,
            f.f_plus,
            f.f_minus,
            fidelity_of(&f),
            below / tr,
            inside / tr,
            above / tr,
            leakage,
            tr,
        ];
        if let Some(b) = &baseline {
            let r = &b.rows[k];
            let fb = LogicalFidelities::from_expectations(r[1] / r[0], r[2] / r[0]);
            row.extend([fb.f0, fb.f_plus, fidelity_of(&fb)]);
        }
        series.push(tk, row);
    }
    Ok(SeqRun {
        series,
        stats: engine.stats,
        rounds,
        leakage_bound,
        pruned_weight: pruned,
        final_state: rho,
    })
}
