use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational number used for literals, stencil weights, and scheme
/// coefficients. Always stored reduced, with a positive denominator.
///
/// Arbitrary-precision integers back the representation: the moment-condition
/// solve for high-order stencils cross-multiplies intermediate pivots far past
/// what fixed-width integers hold.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    /// Build `num/den`, reducing to lowest terms. Panics if `den == 0`;
    /// fallible callers should use [`Rational::checked_div`] instead.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational with zero denominator");
        Rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_bigint(n: BigInt) -> Self {
        Rational(BigRational::from_integer(n))
    }

    pub fn integer(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn numerator(&self) -> BigInt {
        self.0.numer().clone()
    }

    pub fn denominator(&self) -> BigInt {
        self.0.denom().clone()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Integer value if the denominator is one and the numerator fits in i64.
    pub fn as_integer(&self) -> Option<i64> {
        if self.0.is_integer() {
            self.0.numer().to_i64()
        } else {
            None
        }
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(Rational(self.0.recip()))
        }
    }

    pub fn checked_div(&self, rhs: &Rational) -> Option<Self> {
        if rhs.is_zero() {
            None
        } else {
            Some(Rational(&self.0 / &rhs.0))
        }
    }

    /// Exact integer power (negative exponents invert; 0^negative is None).
    pub fn pow(&self, exp: i64) -> Option<Self> {
        if exp >= 0 {
            Some(Rational(self.0.pow(exp as i32)))
        } else {
            self.recip().map(|r| Rational(r.0.pow((-exp) as i32)))
        }
    }

    /// Nearest f64. Numerator and denominator are each converted (exact for
    /// the magnitudes produced by reduced stencil weights and literals) and
    /// divided once, so the rounding is the IEEE division's.
    pub fn to_f64(&self) -> f64 {
        match (self.0.numer().to_f64(), self.0.denom().to_f64()) {
            (Some(n), Some(d)) => n / d,
            _ => self.0.to_f64().unwrap_or(f64::NAN),
        }
    }
}

impl Add for &Rational {
    type Output = Rational;
    fn add(self, rhs: &Rational) -> Rational {
        Rational(&self.0 + &rhs.0)
    }
}

impl Sub for &Rational {
    type Output = Rational;
    fn sub(self, rhs: &Rational) -> Rational {
        Rational(&self.0 - &rhs.0)
    }
}

impl Mul for &Rational {
    type Output = Rational;
    fn mul(self, rhs: &Rational) -> Rational {
        Rational(&self.0 * &rhs.0)
    }
}

impl Div for &Rational {
    type Output = Rational;
    fn div(self, rhs: &Rational) -> Rational {
        assert!(!rhs.is_zero(), "rational division by zero");
        Rational(&self.0 / &rhs.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        &self + &rhs
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        &self - &rhs
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        &self * &rhs
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        -&self
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_and_normalizes_sign() {
        let r = Rational::new(2, 4);
        assert_eq!(r.numerator(), BigInt::from(1));
        assert_eq!(r.denominator(), BigInt::from(2));
        let r = Rational::new(1, -3);
        assert_eq!(r.numerator(), BigInt::from(-1));
        assert_eq!(r.denominator(), BigInt::from(3));
        assert_eq!(Rational::new(-6, -4), Rational::new(3, 2));
    }

    #[test]
    fn arithmetic_is_exact() {
        let a = &Rational::new(1, 3) + &Rational::new(1, 6);
        assert_eq!(a, Rational::new(1, 2));
        let b = &Rational::new(2, 3) * &Rational::new(3, 4);
        assert_eq!(b, Rational::new(1, 2));
        let c = &Rational::new(1, 2) - &Rational::new(1, 2);
        assert!(c.is_zero());
    }

    #[test]
    fn division_by_zero_is_detected() {
        assert!(Rational::one().checked_div(&Rational::zero()).is_none());
        assert!(Rational::zero().recip().is_none());
        assert!(Rational::zero().pow(-1).is_none());
    }

    #[test]
    fn to_f64_matches_ieee_division() {
        assert_eq!(Rational::new(1, 2).to_f64(), 0.5);
        assert_eq!(Rational::new(-153, 128).to_f64(), -153.0 / 128.0);
        assert_eq!(Rational::new(1, 3).to_f64(), 1.0 / 3.0);
    }

    #[test]
    fn pow_handles_negative_exponents() {
        assert_eq!(Rational::new(2, 3).pow(-2).unwrap(), Rational::new(9, 4));
        assert_eq!(Rational::integer(5).pow(0).unwrap(), Rational::one());
    }
}
