//! Exact rational constants for expression trees.

use std::cmp::Ordering;
use std::fmt;

/// Reduced fraction with positive denominator.
///
/// Arithmetic runs through `i128` intermediates and panics if a reduced
/// result no longer fits in `i64`; the expression fragment this crate works
/// with keeps coefficients far below that range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn reduced(num: i128, den: i128) -> Rational {
    assert!(den != 0, "rational with zero denominator");
    let sign = if den < 0 { -1 } else { 1 };
    let g = gcd(num, den).max(1);
    let num = sign * num / g;
    let den = sign * den / g;
    Rational {
        num: i64::try_from(num).expect("rational numerator overflow"),
        den: i64::try_from(den).expect("rational denominator overflow"),
    }
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: i64, den: i64) -> Rational {
        reduced(num as i128, den as i128)
    }

    pub fn int(n: i64) -> Rational {
        Rational { num: n, den: 1 }
    }

    pub fn numerator(&self) -> i64 {
        self.num
    }

    pub fn denominator(&self) -> i64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_one(&self) -> bool {
        self.num == 1 && self.den == 1
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn add(&self, other: &Rational) -> Rational {
        reduced(
            self.num as i128 * other.den as i128 + other.num as i128 * self.den as i128,
            self.den as i128 * other.den as i128,
        )
    }

    pub fn mul(&self, other: &Rational) -> Rational {
        reduced(
            self.num as i128 * other.num as i128,
            self.den as i128 * other.den as i128,
        )
    }

    pub fn neg(&self) -> Rational {
        Rational {
            num: -self.num,
            den: self.den,
        }
    }

    /// Multiplicative inverse; panics on zero (callers gate on `is_zero`).
    pub fn recip(&self) -> Rational {
        reduced(self.den as i128, self.num as i128)
    }

    pub fn pow(&self, exp: i32) -> Rational {
        if exp < 0 {
            return self.recip().pow(-exp);
        }
        let mut acc = Rational::ONE;
        for _ in 0..exp {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.num as i128 * other.den as i128;
        let rhs = other.num as i128 * self.den as i128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_and_normalizes_sign() {
        let r = Rational::new(-4, -6);
        assert_eq!((r.numerator(), r.denominator()), (2, 3));
        let r = Rational::new(4, -6);
        assert_eq!((r.numerator(), r.denominator()), (-2, 3));
    }

    #[test]
    fn arithmetic() {
        let half = Rational::new(1, 2);
        let third = Rational::new(1, 3);
        assert_eq!(half.add(&third), Rational::new(5, 6));
        assert_eq!(half.mul(&third), Rational::new(1, 6));
        assert_eq!(half.recip(), Rational::int(2));
        assert_eq!(half.pow(-2), Rational::int(4));
        assert!(third < half);
    }
}
