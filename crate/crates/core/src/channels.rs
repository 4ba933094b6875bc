//! Environment coupling: spontaneous decay and blackbody absorption/emission.
//!
//! Stimulated emission `J → J−1` and absorption `J−1 → J` are separate directed
//! collapse operators with identical rates
//! `Γ(J, m, δm) = γ_J (4π/3) |c^J(J−1, m+δm, 1, δm)|²`.

use std::ops::RangeInclusive;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angmom::dipole_weight;
use crate::hilbert::{LinOp, ModeAction, RotorBasis};

pub const DEBYE: f64 = 3.335_640_952e-30;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("manifold J = {j} has no transition inside j_max = {j_max}")]
    OutOfRange { j: i64, j_max: usize },
}

/// Environment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvParams {
    /// `J`-independent BBR rate and no spontaneous decay.
    GenericFlat { gamma: f64 },
    /// Rates from the molecular dipole, rotational constant and temperature, in s⁻¹.
    Physical {
        /// Permanent dipole in debye.
        dipole: f64,
        /// `B_R / h` in hertz.
        rotational_constant_hz: f64,
        /// Temperature in kelvin.
        temperature: f64,
    },
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams::GenericFlat { gamma: 1.0 }
    }
}

/// Which directed process a collapse operator describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    /// BBR-stimulated emission `J → J−1`.
    Emission,
    /// BBR absorption `J−1 → J`.
    Absorption,
    /// Spontaneous decay `J → J−1`.
    Spontaneous,
}

/// `m`-independent spontaneous-decay prefactor `γ_J^SD`.
pub fn gamma_sd(j: i64, env: &EnvParams) -> f64 {
    match *env {
        EnvParams::GenericFlat { .. } => 0.0,
        EnvParams::Physical {
            dipole,
            rotational_constant_hz,
            ..
        } => {
            if j < 1 {
                return 0.0;
            }
            let d = dipole * DEBYE;
            let b = PLANCK * rotational_constant_hz;
            8.0 * d * d * b.powi(3) * (j as f64).powi(3)
                / (3.0 * std::f64::consts::PI * EPSILON_0 * HBAR.powi(4) * SPEED_OF_LIGHT.powi(3))
        }
    }
}

/// `m`-independent BBR prefactor `γ_J^BBR`.
pub fn gamma_bbr(j: i64, env: &EnvParams) -> f64 {
    match *env {
        EnvParams::GenericFlat { gamma } => gamma,
        EnvParams::Physical {
            rotational_constant_hz,
            temperature,
            ..
        } => {
            if j < 1 || temperature <= 0.0 {
                return 0.0;
            }
            let x = 2.0 * PLANCK * rotational_constant_hz * j as f64 / (BOLTZMANN * temperature);
            gamma_sd(j, env) / x.exp_m1()
        }
    }
}

/// Rate of the `|J, m⟩ → |J−1, m+δm⟩` channel (and its reverse) for prefactor `gamma`.
pub fn transition_rate(gamma: f64, j: i64, m: i64, dm: i64) -> f64 {
    if j < 1 || m.abs() > j || (m + dm).abs() > j - 1 {
        return 0.0;
    }
    gamma * dipole_weight(j, j - 1, m + dm, dm)
}

fn prefactor(j: i64, env: &EnvParams, process: Process) -> f64 {
    match process {
        Process::Emission | Process::Absorption => gamma_bbr(j, env),
        Process::Spontaneous => gamma_sd(j, env),
    }
}

fn check_j(basis: &RotorBasis, j: i64) -> Result<(), ChannelError> {
    if j < 1 || j as usize > basis.j_max() {
        return Err(ChannelError::OutOfRange {
            j,
            j_max: basis.j_max(),
        });
    }
    Ok(())
}

/// Rotor triplet of the downward `|J, m⟩ → |J−1, m+δm⟩` channel, oriented for `process`.
fn channel_term(
    basis: &RotorBasis,
    j: i64,
    m: i64,
    dm: i64,
    gamma: f64,
    process: Process,
) -> Option<(usize, usize, Complex64)> {
    let rate = transition_rate(gamma, j, m, dm);
    if rate == 0.0 {
        return None;
    }
    let upper = basis.rotor_index(j, m)?;
    let lower = basis.rotor_index(j - 1, m + dm)?;
    let amp = Complex64::new(rate.sqrt(), 0.0);
    Some(match process {
        Process::Emission | Process::Spontaneous => (lower, upper, amp),
        Process::Absorption => (upper, lower, amp),
    })
}

/// Resolved collapse operator for one sublevel pair `|J, m⟩ ↔ |J−1, m+δm⟩`.
///
/// Emission and spontaneous decay act downward, absorption upward. A pair
/// forbidden by the dipole selection rules gives the zero operator.
pub fn resolved_collapse(
    basis: &Arc<RotorBasis>,
    j: i64,
    m: i64,
    dm: i64,
    env: &EnvParams,
    process: Process,
) -> Result<LinOp, ChannelError> {
    check_j(basis, j)?;
    let terms: Vec<_> = channel_term(basis, j, m, dm, prefactor(j, env, process), process)
        .into_iter()
        .collect();
    Ok(LinOp::rotor_with_mode(basis, &terms, ModeAction::Carrier).expect("carrier is always valid"))
}

/// Unresolved collapse operator: the coherent sum over `m` of the resolved ones.
pub fn unresolved_collapse(
    basis: &Arc<RotorBasis>,
    j: i64,
    dm: i64,
    env: &EnvParams,
    process: Process,
) -> Result<LinOp, ChannelError> {
    check_j(basis, j)?;
    let gamma = prefactor(j, env, process);
    let terms: Vec<_> = (-j..=j)
        .filter_map(|m| channel_term(basis, j, m, dm, gamma, process))
        .collect();
    Ok(LinOp::rotor_with_mode(basis, &terms, ModeAction::Carrier).expect("carrier is always valid"))
}

/// A collapse operator tagged with the channel it describes.
#[derive(Debug, Clone)]
pub struct Channel {
    /// Upper manifold of the transition.
    pub j: i64,
    pub dm: i64,
    pub process: Process,
    pub op: LinOp,
}

/// How collapse operators are grouped over `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Unresolved,
    Resolved,
}

/// Every nonzero BBR and SD collapse operator with upper manifold in `j_range`
/// and `δm ∈ {−1, 0, 1}`. Passing `None` uses `[1, j_max]`.
pub fn env_family(
    basis: &Arc<RotorBasis>,
    env: &EnvParams,
    j_range: Option<RangeInclusive<i64>>,
    resolution: Resolution,
) -> Vec<Channel> {
    let range = j_range.unwrap_or(1..=basis.j_max() as i64);
    let mut out = Vec::new();
    for j in range {
        if j < 1 || j as usize > basis.j_max() {
            continue;
        }
        for process in [Process::Emission, Process::Absorption, Process::Spontaneous] {
            if prefactor(j, env, process) == 0.0 {
                continue;
            }
            for dm in -1..=1 {
                let ops = match resolution {
                    Resolution::Unresolved => vec![unresolved_collapse(basis, j, dm, env, process)],
                    Resolution::Resolved => (-j..=j)
                        .map(|m| resolved_collapse(basis, j, m, dm, env, process))
                        .collect(),
                };
                for op in ops {
                    let op = op.expect("j checked against truncation");
                    if op.nnz() > 0 {
                        out.push(Channel { j, dm, process, op });
                    }
                }
            }
        }
    }
    out
}

/// The channels that take population out of `J_C`: emission and decay from `J_C`
/// and absorption into `J_C + 1`.
pub fn recoverable_family(basis: &Arc<RotorBasis>, env: &EnvParams, j_c: i64) -> Vec<Channel> {
    env_family(basis, env, Some(j_c..=j_c + 1), Resolution::Unresolved)
        .into_iter()
        .filter(|ch| match ch.process {
            Process::Absorption => ch.j == j_c + 1,
            Process::Emission | Process::Spontaneous => ch.j == j_c,
        })
        .collect()
}

/// Decay linewidth out of manifold `J`:
/// `Γ_J = [J(γ_J^SD + γ_J^BBR) + (J+1) γ_{J+1}^BBR] / (2J+1)`.
pub fn code_linewidth(j: i64, env: &EnvParams) -> f64 {
    let jf = j as f64;
    (jf * (gamma_sd(j, env) + gamma_bbr(j, env)) + (jf + 1.0) * gamma_bbr(j + 1, env))
        / (2.0 * jf + 1.0)
}
