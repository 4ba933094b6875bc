//! Independent reference implementations used only by tests.
#![allow(dead_code)]

use std::f64::consts::PI;

fn fact(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Wigner 3-j symbol from the Racah sum in plain `f64`. Arguments are doubled momenta.
pub fn racah_3j(tj1: i64, tj2: i64, tj3: i64, tm1: i64, tm2: i64, tm3: i64) -> f64 {
    if tm1 + tm2 + tm3 != 0 {
        return 0.0;
    }
    for (tj, tm) in [(tj1, tm1), (tj2, tm2), (tj3, tm3)] {
        if tm.abs() > tj || (tj + tm) % 2 != 0 {
            return 0.0;
        }
    }
    if tj3 < (tj1 - tj2).abs() || tj3 > tj1 + tj2 || (tj1 + tj2 + tj3) % 2 != 0 {
        return 0.0;
    }
    let (j1, j2, j3) = (tj1 as f64 / 2.0, tj2 as f64 / 2.0, tj3 as f64 / 2.0);
    let (m1, m2) = (tm1 as f64 / 2.0, tm2 as f64 / 2.0);
    let i = |x: f64| x.round() as i64;
    let delta = fact(i(j1 + j2 - j3)) * fact(i(j1 - j2 + j3)) * fact(i(-j1 + j2 + j3)) / fact(i(j1 + j2 + j3) + 1);
    let mut norm = delta;
    for (tj, tm) in [(tj1, tm1), (tj2, tm2), (tj3, tm3)] {
        norm *= fact((tj + tm) / 2) * fact((tj - tm) / 2);
    }
    let mut sum = 0.0;
    for k in 0..=i(j1 + j2 + j3) {
        let args = [
            k,
            i(j3 - j2 + m1) + k,
            i(j3 - j1 - m2) + k,
            i(j1 + j2 - j3) - k,
            i(j1 - m1) - k,
            i(j2 + m2) - k,
        ];
        if args.iter().any(|&a| a < 0) {
            continue;
        }
        let term = 1.0 / args.iter().map(|&a| fact(a)).product::<f64>();
        sum += if k % 2 == 0 { term } else { -term };
    }
    let phase = if ((tj1 - tj2 - tm3) / 2).rem_euclid(2) == 1 { -1.0 } else { 1.0 };
    phase * norm.sqrt() * sum
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for l in 2..=n {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * x * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Polar part of `Y_lm`, Condon-Shortley phase included, so that
/// `Y_lm(θ, φ) = theta_part(l, m, cos θ) e^{imφ}`.
pub fn theta_part(l: i64, m: i64, x: f64) -> f64 {
    let am = m.abs();
    if am > l {
        return 0.0;
    }
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for k in 1..=am {
        pmm *= -((2 * k - 1) as f64) * s;
    }
    let p = if l == am {
        pmm
    } else {
        let mut p0 = pmm;
        let mut p1 = x * (2 * am + 1) as f64 * pmm;
        for ll in (am + 2)..=l {
            let p2 = ((2 * ll - 1) as f64 * x * p1 - (ll + am - 1) as f64 * p0) / (ll - am) as f64;
            p0 = p1;
            p1 = p2;
        }
        p1
    };
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * fact(l - am) / fact(l + am)).sqrt();
    let y = norm * p;
    if m < 0 && am % 2 == 1 {
        -y
    } else {
        y
    }
}

/// `∫ Y*_{j3 m3} Y_{j2 m2} Y_{j1 m1} dΩ` with `m1 = m3 − m2`, by quadrature.
pub fn quad_slater(nodes: &[(f64, f64)], j1: i64, j3: i64, m3: i64, j2: i64, m2: i64) -> f64 {
    let m1 = m3 - m2;
    if m3.abs() > j3 || m2.abs() > j2 || m1.abs() > j1 {
        return 0.0;
    }
    // the azimuthal integral is 2π because the phases cancel exactly
    2.0 * PI
        * nodes
            .iter()
            .map(|&(x, w)| w * theta_part(j3, m3, x) * theta_part(j2, m2, x) * theta_part(j1, m1, x))
            .sum::<f64>()
}
