mod common;

use common::{gauss_legendre, quad_slater, racah_3j};
use rotqec::angmom::{slater, slater_int, wigner3j, HalfInt};

fn h(twice: i64) -> HalfInt {
    HalfInt::from_twice(twice)
}

#[test]
fn gauss_legendre_integrates_polynomials_exactly() {
    let nodes = gauss_legendre(20);
    let w: f64 = nodes.iter().map(|n| n.1).sum();
    assert!((w - 2.0).abs() < 1e-14);
    for p in 0..=39 {
        let got: f64 = nodes.iter().map(|&(x, w)| w * x.powi(p)).sum();
        let want = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
        assert!((got - want).abs() < 1e-14, "x^{p}: {got} vs {want}");
    }
}

#[test]
fn spherical_harmonics_are_orthonormal_under_quadrature() {
    let nodes = gauss_legendre(40);
    for l in 0..=6 {
        for lp in 0..=6 {
            for m in -(l.min(lp))..=l.min(lp) {
                let s: f64 = 2.0
                    * std::f64::consts::PI
                    * nodes
                        .iter()
                        .map(|&(x, w)| w * common::theta_part(l, m, x) * common::theta_part(lp, m, x))
                        .sum::<f64>();
                let want = if l == lp { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn wigner3j_matches_float_racah_sum_up_to_six() {
    let mut checked = 0;
    for tj1 in 0..=12i64 {
        for tj2 in 0..=12i64 {
            for tj3 in 0..=12i64 {
                if (tj1 + tj2 + tj3) % 2 != 0 {
                    continue;
                }
                for tm1 in (-tj1..=tj1).step_by(2) {
                    for tm2 in (-tj2..=tj2).step_by(2) {
                        let tm3 = -tm1 - tm2;
                        if tm3.abs() > tj3 || (tj3 + tm3) % 2 != 0 {
                            continue;
                        }
                        let got = wigner3j(h(tj1), h(tj2), h(tj3), h(tm1), h(tm2), h(tm3)).unwrap();
                        let want = racah_3j(tj1, tj2, tj3, tm1, tm2, tm3);
                        assert!((got - want).abs() < 1e-13, "({tj1} {tj2} {tj3}; {tm1} {tm2} {tm3})/2");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn slater_matches_quadrature_for_low_momenta() {
    let nodes = gauss_legendre(48);
    for j1 in 0..=5 {
        for j2 in 0..=5 {
            for j3 in 0..=5 {
                for m3 in -j3..=j3 {
                    for m2 in -j2..=j2 {
                        let got = slater_int(j1, j3, m3, j2, m2);
                        let want = quad_slater(&nodes, j1, j3, m3, j2, m2);
                        assert!((got - want).abs() < 1e-12, "c^{j1}({j3},{m3},{j2},{m2})");
                    }
                }
            }
        }
    }
}

#[test]
fn half_integer_slater_vanishes_without_parity() {
    assert_eq!(slater(h(2), h(3), h(1), h(3), h(1)).unwrap(), 0.0);
}
