//! The paired tent map family on `J = [-1, 1]`.
//!
//! `T_{a,b}` couples two tent maps, one on `J- = [-1, 0]` and one on
//! `J+ = [0, 1]`. Points near `-1/2` leak into `J+` and points near `1/2`
//! leak into `J-`; the leakage strengths are `eps_a` and `eps_b`:
//!
//! ```text
//!   T(x) = 2(1+b)(x+1) - 1    x in [-1, -1/2]
//!          -2(1+b)x - 1       x in [-1/2, 0)
//!          0                  x = 0
//!          -2(1+a)x + 1       x in (0, 1/2]
//!          2(1+a)(x-1) + 1    x in [1/2, 1]
//! ```

use crate::error::{Error, Result};
use crate::scalar::{Interval, Scalar};

/// One fibre map `T_{eps_a, eps_b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedTentMap<S> {
    eps_a: S,
    eps_b: S,
}

/// One affine branch `y = slope * (x - anchor_x) + anchor_y` on `domain`.
///
/// The anchor is the domain endpoint that maps to `-1` or `1`, which keeps
/// the float images of `±1` and of `0±` exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<S> {
    pub domain: Interval<S>,
    pub slope: S,
    pub anchor_x: S,
    pub anchor_y: S,
}

/// The two leak regions `H-` (in `J-`) and `H+` (in `J+`).
#[derive(Clone, Debug, PartialEq)]
pub struct HolePair<S> {
    pub h_minus: Interval<S>,
    pub h_plus: Interval<S>,
}

impl<S: Scalar> HolePair<S> {
    pub fn as_set(&self) -> Vec<Interval<S>> {
        vec![self.h_minus.clone(), self.h_plus.clone()]
    }

    /// `[-1, 1]` minus the open holes, as three closed intervals.
    pub fn complement(&self) -> Vec<Interval<S>> {
        vec![
            Interval::new(-S::one(), self.h_minus.lo.clone()),
            Interval::new(self.h_minus.hi.clone(), self.h_plus.lo.clone()),
            Interval::new(self.h_plus.hi.clone(), S::one()),
        ]
    }

    pub fn measure(&self) -> S {
        self.h_minus.measure() + self.h_plus.measure()
    }
}

impl<S: Scalar> Branch<S> {
    pub fn apply(&self, x: &S) -> S {
        self.slope.clone() * (x.clone() - self.anchor_x.clone()) + self.anchor_y.clone()
    }

    pub fn inverse(&self, y: &S) -> S {
        (y.clone() - self.anchor_y.clone()) / self.slope.clone() + self.anchor_x.clone()
    }

    /// `b` in `y = slope * x + b`.
    pub fn intercept(&self) -> S {
        self.anchor_y.clone() - self.slope.clone() * self.anchor_x.clone()
    }

    pub fn image(&self) -> Interval<S> {
        let p = self.apply(&self.domain.lo);
        let q = self.apply(&self.domain.hi);
        if p <= q {
            Interval::new(p, q)
        } else {
            Interval::new(q, p)
        }
    }
}

impl<S: Scalar> PairedTentMap<S> {
    pub fn new(eps_a: S, eps_b: S) -> Result<Self> {
        let unit = |v: &S| v >= &S::zero() && v <= &S::one();
        if !unit(&eps_a) || !unit(&eps_b) {
            return Err(Error::Domain(format!(
                "leakage parameters must lie in [0,1], got ({eps_a:?}, {eps_b:?})"
            )));
        }
        Ok(PairedTentMap { eps_a, eps_b })
    }

    /// The uncoupled pair of standard tent maps.
    pub fn uncoupled() -> Self {
        PairedTentMap { eps_a: S::zero(), eps_b: S::zero() }
    }

    pub fn eps_a(&self) -> &S {
        &self.eps_a
    }

    pub fn eps_b(&self) -> &S {
        &self.eps_b
    }

    pub fn slope_plus(&self) -> S {
        S::from_i64(2) * (S::one() + self.eps_a.clone())
    }

    pub fn slope_minus(&self) -> S {
        S::from_i64(2) * (S::one() + self.eps_b.clone())
    }

    pub fn eval(&self, x: &S) -> Result<S> {
        let one = S::one();
        if x < &(-one.clone()) || x > &one {
            return Err(Error::Domain(format!("x = {x:?} outside [-1,1]")));
        }
        if x.is_zero() {
            return Ok(S::zero());
        }
        let branch = self
            .branches()
            .into_iter()
            .find(|b| b.domain.contains(x))
            .expect("branches tile [-1,1]");
        Ok(branch.apply(x))
    }

    /// The four affine branches in left-to-right order. Domains share
    /// endpoints at `-1/2`, `0`, `1/2`; the isolated value at `0` is ignored.
    pub fn branches(&self) -> [Branch<S>; 4] {
        let one = S::one();
        let half = S::half();
        let sm = self.slope_minus();
        let sp = self.slope_plus();
        [
            Branch {
                domain: Interval::new(-one.clone(), -half.clone()),
                slope: sm.clone(),
                anchor_x: -one.clone(),
                anchor_y: -one.clone(),
            },
            Branch {
                domain: Interval::new(-half.clone(), S::zero()),
                slope: -sm,
                anchor_x: S::zero(),
                anchor_y: -one.clone(),
            },
            Branch {
                domain: Interval::new(S::zero(), half.clone()),
                slope: -sp.clone(),
                anchor_x: S::zero(),
                anchor_y: one.clone(),
            },
            Branch {
                domain: Interval::new(half, one.clone()),
                slope: sp,
                anchor_x: one.clone(),
                anchor_y: one,
            },
        ]
    }

    pub fn holes(&self) -> HolePair<S> {
        let one = S::one();
        let two = S::from_i64(2);
        let ip = one.clone() / (two.clone() * (one.clone() + self.eps_a.clone()));
        let im = one.clone() / (two * (one.clone() + self.eps_b.clone()));
        HolePair {
            h_minus: Interval::new(-one.clone() + im.clone(), -im),
            h_plus: Interval::new(ip.clone(), one - ip),
        }
    }

    /// `T^{-1}(target)` as disjoint intervals (up to finitely many points),
    /// sorted left to right.
    pub fn preimage_of_interval(&self, target: &Interval<S>) -> Vec<Interval<S>> {
        let mut out = Vec::with_capacity(4);
        for branch in self.branches() {
            let Some(hit) = branch.image().overlap(target) else {
                continue;
            };
            let p = branch.inverse(&hit.lo);
            let q = branch.inverse(&hit.hi);
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            // clamp round-off in float mode
            let lo = S::max_of(lo, branch.domain.lo.clone());
            let hi = S::min_of(hi, branch.domain.hi.clone());
            if lo < hi {
                out.push(Interval::new(lo, hi));
            }
        }
        // adjacent pieces from neighbouring branches may touch; merge them
        let mut merged: Vec<Interval<S>> = Vec::with_capacity(out.len());
        for iv in out {
            match merged.last_mut() {
                Some(last) if last.hi >= iv.lo => {
                    last.hi = S::max_of(last.hi.clone(), iv.hi);
                }
                _ => merged.push(iv),
            }
        }
        merged
    }

    pub fn to_f64(&self) -> PairedTentMap<f64> {
        PairedTentMap { eps_a: self.eps_a.to_f64(), eps_b: self.eps_b.to_f64() }
    }
}
