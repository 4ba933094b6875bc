//! Dissipative (autonomous) error correction.
//!
//! Blue-sideband drives on two motional modes pump `J_C ± 1` back into `J_C`;
//! two more modes drive the `m`-shift corrections inside `J_C`. Sideband cooling
//! of each mode makes the correction irreversible.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angmom::slater_int;
use crate::channels::{env_family, EnvParams, Resolution};
use crate::codes::{logical_fidelities, CodeError, CodeParams, CodeSpec};
use crate::hilbert::{HilbertError, LinOp, ModeAction, RotorBasis};
use crate::lindblad::{
    evolve, partial_trace, DensityOp, Lindbladian, Observable, SolverError, SolverStats, TimeSeries,
    Tolerances,
};

#[derive(Debug, Error)]
pub enum DecError {
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Basis(#[from] HilbertError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid DEC scenario: {0}")]
    Invalid(String),
}

/// Which correction drives are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecMode {
    Nothing,
    RepumpOnly,
    ZeemanOnly,
    Full,
}

impl DecMode {
    fn repump(self) -> bool {
        matches!(self, DecMode::RepumpOnly | DecMode::Full)
    }

    fn zeeman(self) -> bool {
        matches!(self, DecMode::ZeemanOnly | DecMode::Full)
    }
}

/// Initial rotor state; every mode starts in vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecInitial {
    /// `|0̄⟩`.
    Zero,
    /// `|+̄⟩`.
    Plus,
    /// `Σ_m T(J_C, m, −1, 0)|0̄⟩`, normalized.
    Down,
    /// `Σ_m T(J_C, m, +1, 0)|0̄⟩`, normalized.
    Up,
    /// `Σ_m T(J_C, m, 0, −1)|0̄⟩`, normalized.
    Left,
    /// `Σ_m T(J_C, m, 0, +1)|0̄⟩`, normalized.
    Right,
}

impl DecInitial {
    /// `(δJ, δm)` shift applied to `|0̄⟩`, if any.
    fn shift(self) -> Option<(i64, i64)> {
        match self {
            DecInitial::Zero | DecInitial::Plus => None,
            DecInitial::Down => Some((-1, 0)),
            DecInitial::Up => Some((1, 0)),
            DecInitial::Left => Some((0, -1)),
            DecInitial::Right => Some((0, 1)),
        }
    }
}

/// Drive, cooling and truncation parameters in units of `Γ_C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecParams {
    pub omega_down: f64,
    pub omega_up: f64,
    pub omega_right: f64,
    pub omega_left: f64,
    /// Cooling rates for the `↓, ↑, →, ←` modes.
    pub cool_rates: [f64; 4],
    /// Fock cutoff for each of the `↓, ↑, →, ←` modes.
    pub fock_cutoffs: [usize; 4],
    /// Cap on the total phonon number across modes; `None` keeps the full product space.
    pub excitation_cap: Option<usize>,
    pub j_max: usize,
    /// Drive both Zeeman corrections through a single mode (the `→` one).
    pub shared_zeeman_mode: bool,
}

impl Default for DecParams {
    fn default() -> Self {
        let omega = 1000.0;
        let zeeman = omega / 100.0;
        DecParams {
            omega_down: omega,
            omega_up: omega,
            omega_right: zeeman,
            omega_left: zeeman,
            cool_rates: [2.0 * omega, 2.0 * omega, 2.0 * zeeman, 2.0 * zeeman],
            fock_cutoffs: [2; 4],
            excitation_cap: Some(2),
            j_max: 10,
            shared_zeeman_mode: false,
        }
    }
}

/// Positions of the `↓, ↑, →, ←` modes in a basis, where present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeLayout {
    pub down: Option<usize>,
    pub up: Option<usize>,
    pub right: Option<usize>,
    pub left: Option<usize>,
}

impl ModeLayout {
    /// The repump pair only drops the Zeeman modes and vice versa.
    pub fn for_mode(mode: DecMode) -> Self {
        Self::new(mode, false)
    }

    /// As [`ModeLayout::for_mode`], optionally folding `←` onto the `→` mode.
    pub fn new(mode: DecMode, shared_zeeman: bool) -> Self {
        let zeeman = |first: usize| {
            let second = if shared_zeeman { first } else { first + 1 };
            (Some(first), Some(second))
        };
        match mode {
            DecMode::Nothing => ModeLayout::default(),
            DecMode::RepumpOnly => ModeLayout {
                down: Some(0),
                up: Some(1),
                ..Default::default()
            },
            DecMode::ZeemanOnly => {
                let (right, left) = zeeman(0);
                ModeLayout {
                    right,
                    left,
                    ..Default::default()
                }
            }
            DecMode::Full => {
                let (right, left) = zeeman(2);
                ModeLayout {
                    down: Some(0),
                    up: Some(1),
                    right,
                    left,
                }
            }
        }
    }

    /// `(slot in DecParams arrays, basis mode index)` for every distinct mode.
    fn present(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (slot, k) in [self.down, self.up, self.right, self.left].iter().enumerate() {
            if let Some(k) = *k {
                if out.iter().all(|&(_, seen)| seen != k) {
                    out.push((slot, k));
                }
            }
        }
        out
    }
}

/// The basis used for a DEC run in `mode`.
pub fn dec_basis(params: &DecParams, mode: DecMode) -> Result<RotorBasis, HilbertError> {
    let layout = ModeLayout::new(mode, params.shared_zeeman_mode);
    let cutoffs = layout.present().iter().map(|&(slot, _)| params.fock_cutoffs[slot]).collect();
    RotorBasis::with_cap(params.j_max, cutoffs, params.excitation_cap)
}

fn require(k: Option<usize>, name: &str) -> Result<usize, HilbertError> {
    k.ok_or_else(|| HilbertError::InvalidBasis(format!("layout has no {name} mode")))
}

/// Slater-weighted, `π`-polarized repump drive on the `↓` and `↑` modes.
pub fn h_dec_j(
    basis: &Arc<RotorBasis>,
    j_c: i64,
    params: &DecParams,
    layout: &ModeLayout,
) -> Result<LinOp, HilbertError> {
    let down = require(layout.down, "down")?;
    let up = require(layout.up, "up")?;
    let pref = (4.0 * PI / 3.0).sqrt();
    let mut from_above = Vec::new();
    let mut from_below = Vec::new();
    for m in -j_c..=j_c {
        let target = basis.rotor_index(j_c, m).ok_or(HilbertError::OutOfTruncation {
            j: j_c,
            m,
            j_max: basis.j_max(),
        })?;
        if let Some(src) = basis.rotor_index(j_c + 1, m) {
            let g = pref * params.omega_down * slater_int(j_c + 1, j_c, m, 1, 0);
            if g != 0.0 {
                from_above.push((target, src, Complex64::new(g, 0.0)));
            }
        }
        if let Some(src) = basis.rotor_index(j_c - 1, m) {
            let g = pref * params.omega_up * slater_int(j_c - 1, j_c, m, 1, 0);
            if g != 0.0 {
                from_below.push((target, src, Complex64::new(g, 0.0)));
            }
        }
    }
    let a = LinOp::rotor_with_mode(basis, &from_above, ModeAction::Bsb(down))?;
    let b = LinOp::rotor_with_mode(basis, &from_below, ModeAction::Bsb(up))?;
    let forward = a.add(&b)?;
    forward.add(&forward.adjoint())
}

/// Equal-coupling Zeeman correction on the `→` and `←` modes.
pub fn h_dec_m(
    basis: &Arc<RotorBasis>,
    code: &CodeSpec,
    params: &DecParams,
    layout: &ModeLayout,
) -> Result<LinOp, HilbertError> {
    let right = require(layout.right, "right")?;
    let left = require(layout.left, "left")?;
    let j = code.j_c();
    let mut raise = Vec::new();
    let mut lower = Vec::new();
    for m_c in code.support() {
        let target = basis.rotor_index(j, m_c).ok_or(HilbertError::OutOfTruncation {
            j,
            m: m_c,
            j_max: basis.j_max(),
        })?;
        if let Some(src) = basis.rotor_index(j, m_c - 1) {
            raise.push((target, src, Complex64::new(params.omega_right, 0.0)));
        }
        if let Some(src) = basis.rotor_index(j, m_c + 1) {
            lower.push((target, src, Complex64::new(params.omega_left, 0.0)));
        }
    }
    let a = LinOp::rotor_with_mode(basis, &raise, ModeAction::Bsb(right))?;
    let b = LinOp::rotor_with_mode(basis, &lower, ModeAction::Bsb(left))?;
    let forward = a.add(&b)?;
    forward.add(&forward.adjoint())
}

/// `√Γ_cool · 1 ⊗ a_k` for every mode in the layout.
pub fn cooling_collapses(
    basis: &Arc<RotorBasis>,
    params: &DecParams,
    layout: &ModeLayout,
) -> Result<Vec<LinOp>, HilbertError> {
    layout
        .present()
        .into_iter()
        .map(|(slot, k)| {
            let a = LinOp::annihilation(basis, k)?;
            Ok(a.scale(Complex64::new(params.cool_rates[slot].sqrt(), 0.0)))
        })
        .collect()
}

/// Rotor ket of a DEC initial state, as `(rotor index, amplitude)` pairs.
pub fn initial_rotor_ket(
    basis: &RotorBasis,
    code: &CodeSpec,
    initial: DecInitial,
) -> Result<Vec<(usize, Complex64)>, DecError> {
    let j = code.j_c();
    let mut out: Vec<(i64, i64, f64)> = match initial {
        DecInitial::Plus => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            code.codeword(0)
                .iter()
                .map(|&(m, a)| (j, m, s * a))
                .chain(code.codeword(1).iter().map(|&(m, a)| (j, m, s * a)))
                .collect()
        }
        _ => {
            let (dj, dm) = initial.shift().unwrap_or((0, 0));
            code.codeword(0)
                .iter()
                .filter(|&&(m, _)| (m + dm).abs() <= j + dj)
                .map(|&(m, a)| (j + dj, m + dm, a))
                .collect()
        }
    };
    let norm: f64 = out.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(DecError::Invalid("initial state is empty after the shift".into()));
    }
    out.iter_mut().for_each(|t| t.2 /= norm);
    out.into_iter()
        .map(|(jj, m, a)| {
            basis
                .rotor_index(jj, m)
                .map(|i| (i, Complex64::new(a, 0.0)))
                .ok_or(DecError::Basis(HilbertError::OutOfTruncation {
                    j: jj,
                    m,
                    j_max: basis.j_max(),
                }))
        })
        .collect()
}

/// `Σ_s ⟨ψ, s|ρ|ψ, s⟩` for a rotor ket `ψ`, i.e. the overlap after tracing out the modes.
pub fn rotor_overlap(rho: &DensityOp, ket: &[(usize, Complex64)]) -> f64 {
    let md = rho.basis().mode_dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for s in 0..md {
        for &(r1, a1) in ket {
            for &(r2, a2) in ket {
                acc += a1.conj() * rho.get(r1 * md + s, r2 * md + s) * a2;
            }
        }
    }
    acc.re
}

/// Population in manifold `j`, summed over modes.
pub fn manifold_population(rho: &DensityOp, j: i64) -> f64 {
    let basis = rho.basis();
    let md = basis.mode_dim();
    (-j..=j)
        .filter_map(|m| basis.rotor_index(j, m))
        .flat_map(|r| (0..md).map(move |s| r * md + s))
        .map(|i| rho.get(i, i).re)
        .sum()
}

/// `⟨J⟩`.
pub fn mean_j(rho: &DensityOp) -> f64 {
    let basis = rho.basis();
    let md = basis.mode_dim();
    (0..basis.dim())
        .map(|i| basis.rotor_state(i / md).0 as f64 * rho.get(i, i).re)
        .sum()
}

/// A declarative DEC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecScenario {
    pub code: CodeParams,
    pub mode: DecMode,
    pub initial: DecInitial,
    /// `None` switches the environment off.
    #[serde(default)]
    pub env: Option<EnvParams>,
    #[serde(default)]
    pub params: DecParams,
    pub duration: f64,
    pub samples: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// Output of [`run_dec`].
#[derive(Debug, Clone)]
pub struct DecRun {
    pub series: TimeSeries,
    /// Final state with the modes traced out.
    pub final_rotor_state: DensityOp,
    pub stats: SolverStats,
    pub dim: usize,
}

/// Column names written by [`run_dec`], in order.
pub const DEC_COLUMNS: [&str; 10] = [
    "f0", "f1", "f_plus", "f_minus", "physical_fidelity", "mean_j", "pop_below", "pop_code",
    "pop_above", "trace",
];

/// Evolves a DEC scenario over `[0, duration]` at `samples + 1` evenly spaced times.
///
/// The physical fidelity is taken against `|+̄⟩` for the `Plus` start and
/// against `|0̄⟩` otherwise.
pub fn run_dec(scenario: &DecScenario) -> Result<DecRun, DecError> {
    if scenario.samples == 0 || !(scenario.duration > 0.0) {
        return Err(DecError::Invalid("duration and samples must be positive".into()));
    }
    let code = CodeSpec::build(scenario.code)?;
    let j_c = code.j_c();
    if (j_c + 1) as usize > scenario.params.j_max {
        return Err(DecError::Invalid(format!(
            "j_max = {} leaves no room above J_C = {j_c}",
            scenario.params.j_max
        )));
    }
    let basis = Arc::new(dec_basis(&scenario.params, scenario.mode)?);
    let layout = ModeLayout::new(scenario.mode, scenario.params.shared_zeeman_mode);
    let mut h = LinOp::zero(&basis);
    if scenario.mode.repump() {
        h = h.add(&h_dec_j(&basis, j_c, &scenario.params, &layout)?)?;
    }
    if scenario.mode.zeeman() {
        h = h.add(&h_dec_m(&basis, &code, &scenario.params, &layout)?)?;
    }
    let mut collapses = cooling_collapses(&basis, &scenario.params, &layout)?;
    if let Some(env) = &scenario.env {
        collapses.extend(env_family(&basis, env, None, Resolution::Unresolved).into_iter().map(|c| c.op));
    }
    let lindbladian = Lindbladian::new(&h, &collapses)?;

    let md = basis.mode_dim();
    let ket = initial_rotor_ket(&basis, &code, scenario.initial)?;
    let mut psi = vec![Complex64::new(0.0, 0.0); basis.dim()];
    for &(r, a) in &ket {
        psi[r * md] = a;
    }
    let rho0 = DensityOp::pure(&basis, &psi);
    let reference = initial_rotor_ket(
        &basis,
        &code,
        if scenario.initial == DecInitial::Plus {
            DecInitial::Plus
        } else {
            DecInitial::Zero
        },
    )?;

    let obs = dec_observables(&code, reference);
    let times: Vec<f64> = (0..=scenario.samples)
        .map(|k| scenario.duration * k as f64 / scenario.samples as f64)
        .collect();
    let ev = evolve(&lindbladian, &rho0, 0.0, &times, &obs, scenario.tolerances)?;
    let reduced = partial_trace(&ev.final_state, &[])?;
    Ok(DecRun {
        series: ev.series,
        final_rotor_state: reduced,
        stats: ev.stats,
        dim: basis.dim(),
    })
}

fn dec_observables(code: &CodeSpec, reference: Vec<(usize, Complex64)>) -> Vec<Observable> {
    let j_c = code.j_c();
    let c0 = code.clone();
    let c1 = code.clone();
    let c2 = code.clone();
    let c3 = code.clone();
    vec![
        Observable::new("f0", move |r: &DensityOp| logical_fidelities(r, &c0).f0),
        Observable::new("f1", move |r: &DensityOp| logical_fidelities(r, &c1).f1),
        Observable::new("f_plus", move |r: &DensityOp| logical_fidelities(r, &c2).f_plus),
        Observable::new("f_minus", move |r: &DensityOp| logical_fidelities(r, &c3).f_minus),
        Observable::new("physical_fidelity", move |r: &DensityOp| rotor_overlap(r, &reference)),
        Observable::new("mean_j", mean_j),
        Observable::new("pop_below", move |r: &DensityOp| manifold_population(r, j_c - 1)),
        Observable::new("pop_code", move |r: &DensityOp| manifold_population(r, j_c)),
        Observable::new("pop_above", move |r: &DensityOp| manifold_population(r, j_c + 1)),
        Observable::new("trace", |r: &DensityOp| r.trace()),
    ]
}

/// One cell of a population grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintonCell {
    pub j: i64,
    pub m: i64,
    pub population: f64,
}

/// `(J, m)`-resolved populations with the modes traced out.
pub fn hinton_snapshot(rho: &DensityOp) -> Vec<HintonCell> {
    let basis = rho.basis();
    let md = basis.mode_dim();
    (0..basis.rotor_dim())
        .map(|r| {
            let (j, m) = basis.rotor_state(r);
            let population = (0..md).map(|s| rho.get(r * md + s, r * md + s).re).sum();
            HintonCell { j, m, population }
        })
        .collect()
}
