//! Exact angular-momentum algebra.
//!
//! Wigner 3-j symbols are evaluated with the Racah sum in exact rational
//! arithmetic; only the final square root is taken in floating point, so the
//! values stay accurate to a few ulps well beyond `j = 20`. Clebsch-Gordan
//! coefficients and Slater integrals (triple spherical-harmonic overlaps) are
//! derived from them using the Condon-Shortley phase convention.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AngMomError {
    #[error("angular momentum {0} is negative")]
    NegativeMomentum(HalfInt),
    #[error("projection {m} is not in the ladder of j = {j}")]
    InvalidProjection { j: HalfInt, m: HalfInt },
}

/// An integer or half-integer quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HalfInt {
    twice_value: i64,
}

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt { twice_value: 0 };

    pub const fn from_twice(twice_value: i64) -> Self {
        HalfInt { twice_value }
    }

    pub const fn int(value: i64) -> Self {
        HalfInt {
            twice_value: 2 * value,
        }
    }

    pub const fn twice(self) -> i64 {
        self.twice_value
    }

    pub const fn is_integer(self) -> bool {
        self.twice_value % 2 == 0
    }

    pub fn as_f64(self) -> f64 {
        self.twice_value as f64 / 2.0
    }

    /// The integer value, if there is one.
    pub fn to_int(self) -> Option<i64> {
        self.is_integer().then_some(self.twice_value / 2)
    }

    /// Whether `m` is one of the `2j + 1` projections of `self`.
    pub fn admits(self, m: HalfInt) -> bool {
        self.twice_value >= 0
            && m.twice_value.abs() <= self.twice_value
            && (self.twice_value - m.twice_value) % 2 == 0
    }
}

impl From<i64> for HalfInt {
    fn from(value: i64) -> Self {
        HalfInt::int(value)
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value + rhs.twice_value)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value - rhs.twice_value)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt::from_twice(-self.twice_value)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.twice_value / 2)
        } else {
            write!(f, "{}/2", self.twice_value)
        }
    }
}

thread_local! {
    static FACTORIALS: RefCell<Vec<BigInt>> = RefCell::new(vec![BigInt::one()]);
}

fn factorial(n: i64) -> BigInt {
    debug_assert!(n >= 0);
    let n = n as usize;
    FACTORIALS.with(|cell| {
        let mut table = cell.borrow_mut();
        while table.len() <= n {
            let k = table.len();
            let next = &table[k - 1] * BigInt::from(k);
            table.push(next);
        }
        table[n].clone()
    })
}

fn check_pair(j: HalfInt, m: HalfInt) -> Result<(), AngMomError> {
    if j.twice() < 0 {
        return Err(AngMomError::NegativeMomentum(j));
    }
    if !j.admits(m) {
        return Err(AngMomError::InvalidProjection { j, m });
    }
    Ok(())
}

fn triangle(a: i64, b: i64, c: i64) -> bool {
    // doubled values
    c <= a + b && c >= (a - b).abs() && (a + b + c) % 2 == 0
}

/// Wigner 3-j symbol `(j1 j2 j3; m1 m2 m3)`.
///
/// Returns zero whenever the projections do not sum to zero or the triangle
/// condition fails. Projections outside their ladder are rejected.
pub fn wigner3j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m3: HalfInt,
) -> Result<f64, AngMomError> {
    check_pair(j1, m1)?;
    check_pair(j2, m2)?;
    check_pair(j3, m3)?;
    let (tj1, tj2, tj3) = (j1.twice(), j2.twice(), j3.twice());
    let (tm1, tm2, tm3) = (m1.twice(), m2.twice(), m3.twice());
    if tm1 + tm2 + tm3 != 0 || !triangle(tj1, tj2, tj3) {
        return Ok(0.0);
    }
    // All of the following are integers once the checks above pass.
    let h = |x: i64| x / 2;
    let a = h(tj1 + tj2 - tj3);
    let b = h(tj1 - tj2 + tj3);
    let c = h(-tj1 + tj2 + tj3);
    let big_j = h(tj1 + tj2 + tj3);

    let mut prefactor = BigRational::new(
        factorial(a) * factorial(b) * factorial(c),
        factorial(big_j + 1),
    );
    for (tj, tm) in [(tj1, tm1), (tj2, tm2), (tj3, tm3)] {
        prefactor *= BigRational::from_integer(factorial(h(tj + tm)) * factorial(h(tj - tm)));
    }

    let t1 = h(tj3 - tj2 + tm1);
    let t2 = h(tj3 - tj1 - tm2);
    let t3 = a;
    let t4 = h(tj1 - tm1);
    let t5 = h(tj2 + tm2);
    let k_min = 0.max(-t1).max(-t2);
    let k_max = t3.min(t4).min(t5);
    let mut sum = BigRational::zero();
    for k in k_min..=k_max {
        let denom = factorial(k)
            * factorial(t1 + k)
            * factorial(t2 + k)
            * factorial(t3 - k)
            * factorial(t4 - k)
            * factorial(t5 - k);
        let term = BigRational::new(BigInt::one(), denom);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return Ok(0.0);
    }
    let negative = sum.is_negative();
    let squared = prefactor * &sum * &sum;
    let magnitude = squared
        .to_f64()
        .expect("3-j magnitude is finite for representable momenta")
        .sqrt();
    // phase (-1)^(j1 - j2 - m3)
    let phase_odd = h(tj1 - tj2 - tm3).rem_euclid(2) == 1;
    Ok(if negative ^ phase_odd {
        -magnitude
    } else {
        magnitude
    })
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | j3 m3>`.
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j3: HalfInt,
    m3: HalfInt,
) -> Result<f64, AngMomError> {
    let three_j = wigner3j(j1, j2, j3, m1, m2, -m3)?;
    if three_j == 0.0 {
        return Ok(0.0);
    }
    let phase_odd = ((j1.twice() - j2.twice() + m3.twice()) / 2).rem_euclid(2) == 1;
    let sign = if phase_odd { -1.0 } else { 1.0 };
    Ok(sign * (j3.twice() as f64 + 1.0).sqrt() * three_j)
}

/// Slater integral `c^{J1}(J3, m3, J2, m2) = ∫ Y*_{J3 m3} Y_{J2 m2} Y_{J1 m1} dΩ`
/// with `m1 = m3 - m2`.
///
/// Zero when `m1` lies outside the `J1` ladder, when `J1 + J2 + J3` is odd, or
/// when the triangle condition fails.
pub fn slater(
    j1: HalfInt,
    j3: HalfInt,
    m3: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
) -> Result<f64, AngMomError> {
    check_pair(j3, m3)?;
    check_pair(j2, m2)?;
    let m1 = m3 - m2;
    if j1.twice() < 0 {
        return Err(AngMomError::NegativeMomentum(j1));
    }
    if !j1.admits(m1) {
        return Ok(0.0);
    }
    let parity = wigner3j(j3, j2, j1, HalfInt::ZERO, HalfInt::ZERO, HalfInt::ZERO);
    // (0 0 0) requires integer momenta; half-integer triples have no parity factor.
    let parity = match parity {
        Ok(v) => v,
        Err(_) => return Ok(0.0),
    };
    if parity == 0.0 {
        return Ok(0.0);
    }
    let projected = wigner3j(j3, j2, j1, -m3, m2, m1)?;
    let degeneracy = (j1.twice() as f64 + 1.0) * (j2.twice() as f64 + 1.0) * (j3.twice() as f64 + 1.0);
    let sign = if (m3.twice() / 2).rem_euclid(2) == 1 {
        -1.0
    } else {
        1.0
    };
    Ok((degeneracy / (4.0 * PI)).sqrt() * sign * projected * parity)
}

/// Integer-momentum Slater integral; out-of-ladder arguments give zero.
pub fn slater_int(j1: i64, j3: i64, m3: i64, j2: i64, m2: i64) -> f64 {
    if j1 < 0 || j2 < 0 || j3 < 0 || m3.abs() > j3 || m2.abs() > j2 {
        return 0.0;
    }
    slater(
        HalfInt::int(j1),
        HalfInt::int(j3),
        HalfInt::int(m3),
        HalfInt::int(j2),
        HalfInt::int(m2),
    )
    .unwrap_or(0.0)
}

/// Dipole coupling weight `(4π/3) |c^J(J', m', 1, δm)|²` between `|J, m' - δm⟩`
/// and `|J', m'⟩`.
pub fn dipole_weight(j: i64, j_other: i64, m_other: i64, dm: i64) -> f64 {
    let c = slater_int(j, j_other, m_other, 1, dm);
    4.0 * PI / 3.0 * c * c
}
