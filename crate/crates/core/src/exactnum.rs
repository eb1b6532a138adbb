//! Exact dyadic rationals: values of the form `±mantissa · 2^exponent` with an
//! unbounded integer mantissa.
//!
//! Every finite binary floating-point value is a dyadic rational, and sums and
//! products of dyadics stay dyadic, so this type can carry the infinitely
//! precise intermediate result that correct rounding is defined against.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};

/// An exact value `(-1)^negative · mantissa · 2^exponent`.
///
/// Always canonical: the mantissa is odd, or the value is zero and stored as
/// `(+, 0, 0)`. Structural equality is therefore value equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Dyadic {
    negative: bool,
    mantissa: BigUint,
    exponent: i64,
}

impl Dyadic {
    pub fn new(negative: bool, mantissa: BigUint, exponent: i64) -> Self {
        if mantissa.is_zero() {
            return Self::zero();
        }
        let tz = mantissa.trailing_zeros().unwrap_or(0);
        Self {
            negative,
            mantissa: mantissa >> tz,
            exponent: exponent + tz as i64,
        }
    }

    pub fn zero() -> Self {
        Self {
            negative: false,
            mantissa: BigUint::zero(),
            exponent: 0,
        }
    }

    pub fn one() -> Self {
        Self::pow2(0)
    }

    /// `2^e`.
    pub fn pow2(e: i64) -> Self {
        Self {
            negative: false,
            mantissa: BigUint::one(),
            exponent: e,
        }
    }

    pub fn from_int(v: i64) -> Self {
        Self::new(v < 0, BigUint::from(v.unsigned_abs()), 0)
    }

    /// `v · 2^e` for a small signed integer `v`.
    pub fn from_parts(v: i64, e: i64) -> Self {
        Self::new(v < 0, BigUint::from(v.unsigned_abs()), e)
    }

    /// Exact conversion of a finite `f64`; `None` for NaN or infinity.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        if v == 0.0 {
            return Some(Self::zero());
        }
        let bits = v.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Some(Self::new(negative, BigUint::from(m), e))
    }

    /// Nearest `f64`, for display only.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        // Keep the top 64 bits so the float conversion does not overflow.
        let bits = self.mantissa.bits() as i64;
        let shift = (bits - 64).max(0);
        let top = (&self.mantissa >> shift as usize).to_f64().unwrap_or(f64::INFINITY);
        let v = ldexp(top, self.exponent + shift);
        if self.negative {
            -v
        } else {
            v
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    pub fn mantissa(&self) -> &BigUint {
        &self.mantissa
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn abs(&self) -> Self {
        Self {
            negative: false,
            ..self.clone()
        }
    }

    /// `floor(log2 |x|)`, or `None` for zero.
    pub fn lead_exponent(&self) -> Option<i64> {
        if self.is_zero() {
            None
        } else {
            Some(self.exponent + self.mantissa.bits() as i64 - 1)
        }
    }

    /// Multiply by `2^k`.
    pub fn scale(&self, k: i64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Self {
            exponent: self.exponent + k,
            ..self.clone()
        }
    }

    /// Truncate toward zero onto the grid of multiples of `2^grid_exp`.
    /// Returns the truncated value and whether anything nonzero was dropped.
    pub fn truncate_to_grid(&self, grid_exp: i64) -> (Self, bool) {
        if self.is_zero() || self.exponent >= grid_exp {
            return (self.clone(), false);
        }
        let shift = (grid_exp - self.exponent) as u64;
        // The mantissa is odd, so any positive shift drops a set bit.
        let kept = &self.mantissa >> shift;
        (Self::new(self.negative, kept, grid_exp), true)
    }

    /// Integer multiple of `2^grid_exp` (magnitude, truncated) plus the
    /// discarded remainder as a dyadic. Used by the rounding code.
    pub fn split_at_grid(&self, grid_exp: i64) -> (BigUint, Self) {
        if self.is_zero() {
            return (BigUint::zero(), Self::zero());
        }
        if self.exponent >= grid_exp {
            let q = &self.mantissa << (self.exponent - grid_exp) as u64;
            return (q, Self::zero());
        }
        let shift = (grid_exp - self.exponent) as u64;
        let (q, r) = self.mantissa.div_rem(&(BigUint::one() << shift));
        (q, Self::new(false, r, self.exponent))
    }

    /// `Σ aᵢ·bᵢ + c`, exactly.
    pub fn exact_dot(terms: &[(Dyadic, Dyadic)], c: &Dyadic) -> Dyadic {
        terms.iter().fold(c.clone(), |acc, (a, b)| &acc + &(a * b))
    }

    pub fn sum<'a, I: IntoIterator<Item = &'a Dyadic>>(items: I) -> Dyadic {
        items.into_iter().fold(Dyadic::zero(), |acc, x| &acc + x)
    }
}

/// `x · 2^e` in steps that stay inside the normal range until the last one.
fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(e as i32)
}

impl Default for Dyadic {
    fn default() -> Self {
        Self::zero()
    }
}

impl<'a> Add<&'a Dyadic> for &'a Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: &'a Dyadic) -> Dyadic {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        let e = self.exponent.min(rhs.exponent);
        let a = &self.mantissa << (self.exponent - e) as u64;
        let b = &rhs.mantissa << (rhs.exponent - e) as u64;
        if self.negative == rhs.negative {
            return Dyadic::new(self.negative, a + b, e);
        }
        match a.cmp(&b) {
            Ordering::Equal => Dyadic::zero(),
            Ordering::Greater => Dyadic::new(self.negative, a - b, e),
            Ordering::Less => Dyadic::new(rhs.negative, b - a, e),
        }
    }
}

impl Add for Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: Dyadic) -> Dyadic {
        &self + &rhs
    }
}

impl<'a> Sub<&'a Dyadic> for &'a Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &'a Dyadic) -> Dyadic {
        self + &(-rhs)
    }
}

impl Sub for Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: Dyadic) -> Dyadic {
        &self - &rhs
    }
}

impl<'a> Mul<&'a Dyadic> for &'a Dyadic {
    type Output = Dyadic;

    fn mul(self, rhs: &'a Dyadic) -> Dyadic {
        if self.is_zero() || rhs.is_zero() {
            return Dyadic::zero();
        }
        // Odd times odd stays odd: already canonical.
        Dyadic {
            negative: self.negative != rhs.negative,
            mantissa: &self.mantissa * &rhs.mantissa,
            exponent: self.exponent + rhs.exponent,
        }
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: Dyadic) -> Dyadic {
        &self * &rhs
    }
}

impl Neg for &Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        if self.is_zero() {
            return Dyadic::zero();
        }
        Dyadic {
            negative: !self.negative,
            ..self.clone()
        }
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        -&self
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let d = self - other;
        if d.is_zero() {
            Ordering::Equal
        } else if d.negative {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}·2^{}",
            if self.negative { "-" } else { "+" },
            self.mantissa,
            self.exponent
        )
    }
}

impl fmt::Display for Dyadic {
    /// Exact decimal expansion (every dyadic has a finite one).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let sign = if self.negative { "-" } else { "" };
        if self.exponent >= 0 {
            return write!(f, "{sign}{}", &self.mantissa << self.exponent as u64);
        }
        // m / 2^k = m·5^k / 10^k
        let k = (-self.exponent) as u32;
        let scaled = &self.mantissa * BigUint::from(5u32).pow(k);
        let digits = scaled.to_string();
        let k = k as usize;
        let (int, frac) = if digits.len() > k {
            let (a, b) = digits.split_at(digits.len() - k);
            (a.to_string(), b.to_string())
        } else {
            ("0".to_string(), format!("{}{}", "0".repeat(k - digits.len()), digits))
        };
        let frac = frac.trim_end_matches('0');
        write!(f, "{sign}{int}.{frac}")
    }
}
