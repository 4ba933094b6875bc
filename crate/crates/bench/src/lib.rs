//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use rotqec::channels::{env_family, EnvParams, Resolution};
use rotqec::hilbert::{h_rot, RotorParams};
use rotqec::{LinOp, Lindbladian, RotorBasis};

/// Rotor-only Lindbladian with the full flat-environment channel family up to `j_max`.
pub fn rotor_lindbladian(j_max: usize) -> Lindbladian {
    let basis = Arc::new(RotorBasis::rotor_only(j_max));
    let env = EnvParams::default();
    let ops: Vec<LinOp> = env_family(&basis, &env, None, Resolution::Unresolved)
        .into_iter()
        .map(|c| c.op)
        .collect();
    Lindbladian::new(&h_rot(&basis, &RotorParams::default()), &ops).expect("valid Lindbladian")
}
