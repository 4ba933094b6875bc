use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rotqec::angmom::{wigner3j, HalfInt};
use rotqec::codes::{logical_fidelities, CodeSpec};
use rotqec::hilbert::{LinOp, RotorBasis};
use rotqec::lindblad::{evolve, DensityOp, Lindbladian, Tolerances};
use rotqec::protocol_seq::{
    apply_jump, check_op_j, check_op_m, correct_j_ideal, correct_m_ideal, measure, refresh_angles,
    refresh_unitary,
};

fn h(twice: i64) -> HalfInt {
    HalfInt::from_twice(twice)
}

fn tj(t: [i64; 6]) -> f64 {
    wigner3j(h(t[0]), h(t[1]), h(t[2]), h(t[3]), h(t[4]), h(t[5])).unwrap()
}

/// Doubled `(j1, j2, j3, m1, m2, m3)` with valid projections and `Σm = 0`, triangle not enforced.
fn three_j_args() -> impl Strategy<Value = [i64; 6]> {
    (0..=8i64, 0..=8i64, 0..=8i64)
        .prop_flat_map(|(a, b, c)| {
            let c = if (a + b + c) % 2 == 0 { c } else { (c + 1).min(9) };
            (Just(a), Just(b), Just(c), 0..=a, 0..=b)
        })
        .prop_filter_map("third projection out of range", |(a, b, c, i, k)| {
            let (m1, m2) = (2 * i - a, 2 * k - b);
            let m3 = -m1 - m2;
            (m3.abs() <= c && (c + m3) % 2 == 0).then_some([a, b, c, m1, m2, m3])
        })
}

fn cs_code() -> impl Strategy<Value = CodeSpec> {
    cs_code_from(0)
}

/// `J_C ≥ m₂ + min_extra`.
fn cs_code_from(min_extra: i64) -> impl Strategy<Value = CodeSpec> {
    (2..=4i64, 3..=5i64, min_extra..=3i64).prop_map(|(m1, gap, extra)| {
        let m2 = m1 + gap;
        CodeSpec::cs(m2 + extra, m1, m2).unwrap()
    })
}

fn random_op(basis: &Arc<RotorBasis>, entries: &[(usize, usize, f64, f64)]) -> LinOp {
    let d = basis.dim();
    LinOp::from_triplets(
        basis,
        entries.iter().map(|&(r, c, re, im)| (r % d, c % d, Complex64::new(re, im))).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn three_j_column_permutations(t in three_j_args()) {
        let v = tj(t);
        let [a, b, c, x, y, z] = t;
        prop_assert!((tj([b, c, a, y, z, x]) - v).abs() < 1e-13);
        prop_assert!((tj([c, a, b, z, x, y]) - v).abs() < 1e-13);
        let odd = if ((a + b + c) / 2) % 2 == 1 { -1.0 } else { 1.0 };
        prop_assert!((tj([b, a, c, y, x, z]) - odd * v).abs() < 1e-13);
        prop_assert!((tj([a, b, c, -x, -y, -z]) - odd * v).abs() < 1e-13);
    }

    #[test]
    fn three_j_orthogonality(
        (a, b, c, cp, tm3) in (0..=8i64, 0..=8i64).prop_flat_map(|(a, b)| {
            let lo = (a - b).abs();
            let span = (a + b - lo) / 2;
            (Just(a), Just(b), 0..=span + 1, 0..=span + 1).prop_flat_map(move |(a, b, i, k)| {
                // one step past the triangle on each side exercises the vanishing case
                let (c, cp) = (lo + 2 * i, lo + 2 * k);
                let top = c.min(cp);
                (Just(a), Just(b), Just(c), Just(cp), (0..=top).prop_map(move |x| 2 * x - top))
            })
        })
    ) {
        let mut s = 0.0;
        for m1 in (-a..=a).step_by(2) {
            let m2 = -tm3 - m1;
            if m2.abs() > b || (b + m2) % 2 != 0 {
                continue;
            }
            s += tj([a, b, c, m1, m2, tm3]) * tj([a, b, cp, m1, m2, tm3]);
        }
        let tri = c <= a + b;
        let want = if c == cp && tri { 1.0 / (c as f64 + 1.0) } else { 0.0 };
        prop_assert!((s - want).abs() < 1e-13);
    }

    #[test]
    fn checks_are_commuting_involutions(code in cs_code()) {
        let b = Arc::new(RotorBasis::rotor_only(code.j_c() as usize + 1));
        let ops = [
            check_op_j(&b, code.j_c(), -1).unwrap(),
            check_op_j(&b, code.j_c(), 1).unwrap(),
            check_op_m(&b, &code, -1).unwrap(),
            check_op_m(&b, &code, 1).unwrap(),
        ];
        let id = LinOp::identity(&b);
        for p in &ops {
            prop_assert_eq!(p.mul(p).unwrap().sub(&id).unwrap().max_abs(), 0.0);
            for q in &ops {
                let comm = p.mul(q).unwrap().sub(&q.mul(p).unwrap()).unwrap();
                prop_assert_eq!(comm.max_abs(), 0.0);
            }
        }
        for which in 0..2 {
            let rho = DensityOp::pure(&b, &code.ket(&b, which).unwrap());
            for p in &ops {
                prop_assert_eq!(measure(&rho, p).unwrap().prob_minus, 0.0);
            }
        }
    }

    #[test]
    // With m₂ = J_C an outward jump lands on |m| = J_C + 1, which the equal-coupling
    // swap cannot return, so the edge of the ladder is excluded here.
    fn refresh_restores_cs_codes(code in cs_code_from(1), dj in prop::sample::select(vec![-1i64, 1]), dm in -1..=1i64, phase in 0.0..std::f64::consts::TAU) {
        let j = code.j_c();
        let b = Arc::new(RotorBasis::rotor_only(j as usize + 1));
        let angles = refresh_angles(&code, dj, dm).unwrap();
        let u = refresh_unitary(&b, &code, &angles).unwrap();
        let k0 = code.ket(&b, 0).unwrap();
        let k1 = code.ket(&b, 1).unwrap();
        let rot = Complex64::from_polar(1.0, phase);
        let psi: Vec<Complex64> = k0.iter().zip(&k1).map(|(a, c)| (a + rot * c) / 2f64.sqrt()).collect();
        let err = apply_jump(&b, &psi, j, dj, dm).unwrap();
        let mut fixed = correct_j_ideal(&b, j, dj).unwrap().apply(&err);
        if dm != 0 {
            fixed = correct_m_ideal(&b, &code, dm).unwrap().apply(&fixed);
        }
        let out = u.apply(&fixed);
        let ov: Complex64 = psi.iter().zip(&out).map(|(a, c)| a.conj() * c).sum();
        prop_assert!(ov.norm_sqr() > 1.0 - 1e-10, "{:?} ({dj},{dm}): {}", code.params(), ov.norm_sqr());
    }

    #[test]
    fn measurement_splits_the_state(
        amps in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16),
        dm in prop::sample::select(vec![-1i64, 1]),
    ) {
        let code = CodeSpec::cs(7, 2, 5).unwrap();
        let b = Arc::new(RotorBasis::rotor_only(8));
        let mut psi = vec![Complex64::new(0.0, 0.0); b.dim()];
        for (k, &(re, im)) in amps.iter().enumerate() {
            psi[b.rotor_index(7, k as i64 - 7).unwrap_or(0)] += Complex64::new(re, im);
        }
        let norm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        psi.iter_mut().for_each(|v| *v /= norm);
        let rho = DensityOp::pure(&b, &psi);
        let check = check_op_m(&b, &code, dm).unwrap();
        let m = measure(&rho, &check).unwrap();
        let expect_minus = (1.0 - rho.expectation(&check).re) / 2.0;
        prop_assert!((m.prob_minus - expect_minus).abs() < 1e-12);
        if let Some(minus) = &m.minus {
            prop_assert!((minus.trace() - 1.0).abs() < 1e-12);
            prop_assert!((minus.expectation(&check).re + 1.0).abs() < 1e-12);
        }
        if let Some(plus) = &m.plus {
            prop_assert!((plus.expectation(&check).re - 1.0).abs() < 1e-12);
        }
        let f = logical_fidelities(&rho, &code);
        prop_assert!((f.f0 + f.f1 - 1.0).abs() < 1e-12 && (f.f_plus + f.f_minus - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lindblad_flow_preserves_trace_and_positivity(
        h_entries in prop::collection::vec((0..16usize, 0..16usize, -2.0..2.0f64, -2.0..2.0f64), 1..12),
        c1 in prop::collection::vec((0..16usize, 0..16usize, -1.0..1.0f64, -1.0..1.0f64), 1..6),
        c2 in prop::collection::vec((0..16usize, 0..16usize, -1.0..1.0f64, -1.0..1.0f64), 1..6),
        start in 0..8usize,
    ) {
        let b = Arc::new(RotorBasis::new(1, vec![1]).unwrap());
        let raw = random_op(&b, &h_entries);
        let h = raw.add(&raw.adjoint()).unwrap();
        let cs = [random_op(&b, &c1), random_op(&b, &c2)];
        let l = Lindbladian::new(&h, &cs).unwrap();
        let mut psi = vec![Complex64::new(0.0, 0.0); b.dim()];
        psi[start] = Complex64::new(1.0, 0.0);
        let rho0 = DensityOp::pure(&b, &psi);
        let ev = evolve(&l, &rho0, 0.0, &[0.25, 0.5, 1.0], &[], Tolerances::default()).unwrap();
        let rho = ev.final_state;
        prop_assert!((rho.trace() - 1.0).abs() < 1e-8);
        prop_assert!(rho.min_eigenvalue() > -1e-8);
        prop_assert!(rho.hermiticity_defect() < 1e-12);
    }
}
