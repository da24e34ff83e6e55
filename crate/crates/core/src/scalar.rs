//! Number types shared by the exact (rational) and floating-point code paths.
//!
//! Every geometric and density routine is generic over [`Scalar`]. With
//! [`Rational`] all breakpoints, hole endpoints and integrals are exact; with
//! `f64` the same code runs with a small set of tolerances (sliver removal,
//! snapping of images onto `-1`, `0`, `1`).

use std::fmt::Debug;

use num::traits::{Num, Signed, ToPrimitive};
use num::{BigInt, BigRational};

/// Arbitrary-precision rational used for exact computations.
pub type Rational = BigRational;

pub trait Scalar: Clone + Debug + PartialOrd + Num + Signed + Send + Sync + 'static {
    /// Exact conversion for rationals (every finite `f64` is a dyadic rational).
    fn from_f64(x: f64) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    fn to_f64(&self) -> f64;
    /// Whether arithmetic is exact.
    fn is_exact() -> bool;
    /// Cells narrower than this are absorbed into a neighbour. `None` when exact.
    fn sliver_width() -> Option<Self>;

    fn from_i64(n: i64) -> Self {
        Self::from_ratio(n, 1)
    }

    fn half() -> Self {
        Self::from_ratio(1, 2)
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

/// Parses `p/q`, integers and decimals such as `0.0004` or `4e-4` exactly.
pub fn parse_rational(text: &str) -> crate::error::Result<Rational> {
    let bad = || crate::error::Error::Config(format!("not a number: {text:?}"));
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q == BigInt::from(0) {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    let (mant, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.trim_start_matches(['+', '-']).is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let shift = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    Ok(if shift >= 0 {
        BigRational::from_integer(digits * num::pow(ten, shift as usize))
    } else {
        BigRational::new(digits, num::pow(ten, (-shift) as usize))
    })
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn is_exact() -> bool {
        false
    }

    fn sliver_width() -> Option<Self> {
        Some(1e-13)
    }
}

impl Scalar for Rational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // numerator/denominator beyond f64 range: scale down both
            let n = self.numer().bits() as i64;
            let d = self.denom().bits() as i64;
            let shift = (n.max(d) - 1000).max(0) as usize;
            let num = (self.numer() >> shift).to_f64().unwrap_or(0.0);
            let den = (self.denom() >> shift).to_f64().unwrap_or(f64::INFINITY);
            num / den
        })
    }

    fn is_exact() -> bool {
        true
    }

    fn sliver_width() -> Option<Self> {
        None
    }
}

/// Closed interval `[lo, hi]` with `lo <= hi`. Degenerate intervals are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval<S> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Self {
        debug_assert!(lo <= hi, "interval endpoints out of order");
        Interval { lo, hi }
    }

    pub fn measure(&self) -> S {
        self.hi.clone() - self.lo.clone()
    }

    pub fn contains(&self, x: &S) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    /// Intersection, `None` if empty or a single point.
    pub fn overlap(&self, other: &Interval<S>) -> Option<Interval<S>> {
        let lo = S::max_of(self.lo.clone(), other.lo.clone());
        let hi = S::min_of(self.hi.clone(), other.hi.clone());
        (lo < hi).then(|| Interval { lo, hi })
    }

    pub fn to_f64(&self) -> Interval<f64> {
        Interval { lo: self.lo.to_f64(), hi: self.hi.to_f64() }
    }
}
