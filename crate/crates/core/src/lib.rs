//! Absorption-emission error-correcting codes on the rotational states of a linear
//! molecule.
//!
//! The crate is layered:
//! - [`angmom`]: exact Wigner 3-j symbols and Slater integrals;
//! - [`hilbert`]: truncated rotor ⊗ Fock bases and sparse operators;
//! - [`channels`]: blackbody and spontaneous-decay collapse operators;
//! - [`codes`]: codewords, logical observables and Knill-Laflamme checks;
//! - [`lindblad`]: density operators and an adaptive master-equation integrator;
//! - [`protocol_seq`] and [`protocol_dec`]: measurement-based and dissipative correction.
//!
//! Times are in units of `1/Γ_C` and rates in units of `Γ_C`.

pub mod angmom;
pub mod channels;
pub mod codes;
pub mod hilbert;
pub mod lindblad;
pub mod protocol_dec;
pub mod protocol_seq;

pub use angmom::{slater, slater_int, wigner3j, HalfInt};
pub use channels::{env_family, EnvParams, Resolution};
pub use codes::{logical_fidelities, CodeParams, CodeSpec, LogicalFidelities};
pub use hilbert::{LinOp, RotorBasis};
pub use lindblad::{evolve, DensityOp, Lindbladian, SolverStats, TimeSeries, Tolerances};
pub use protocol_dec::{run_dec, DecInitial, DecMode, DecParams, DecRun, DecScenario};
pub use protocol_seq::{run_sequential, SeqInitial, SeqRun, SeqScenario};
