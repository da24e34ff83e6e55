//! Piecewise-constant densities on `[-1, 1]` and their exact pushforward.
//!
//! A [`PCDensity`] is an equivalence class modulo null sets: only cell values
//! matter, never the value at a breakpoint. `0` is always a breakpoint so
//! that the two halves `J-` and `J+` can be treated separately.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval_maps::PairedTentMap;
use crate::scalar::{Interval, Scalar};

/// Float images closer than this to `-1`, `0` or `1` are snapped onto them.
const SNAP: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct PCDensity<S> {
    breakpoints: Vec<S>,
    values: Vec<S>,
}

/// `bv = max(var0c, l1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BVNormReport<S> {
    pub l1: S,
    pub var0c: S,
    pub bv: S,
}

impl<S: Scalar> BVNormReport<S> {
    pub fn to_f64(&self) -> BVNormReport<f64> {
        BVNormReport { l1: self.l1.to_f64(), var0c: self.var0c.to_f64(), bv: self.bv.to_f64() }
    }
}

impl<S: Scalar> PCDensity<S> {
    /// Validated constructor. `breakpoints` must be strictly increasing,
    /// run from `-1` to `1` and contain `0`.
    pub fn new(breakpoints: Vec<S>, values: Vec<S>) -> Result<Self> {
        if breakpoints.len() < 3 || values.len() + 1 != breakpoints.len() {
            return Err(Error::Domain(format!(
                "need n+1 breakpoints for n values (got {} and {})",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != -S::one() || breakpoints[breakpoints.len() - 1] != S::one() {
            return Err(Error::Domain("breakpoints must start at -1 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        if !breakpoints.iter().any(|x| x.is_zero()) {
            return Err(Error::Domain("0 must be a breakpoint".into()));
        }
        Ok(PCDensity { breakpoints, values })
    }

    /// Like [`PCDensity::new`] but inserts `0` when it is missing.
    pub fn from_steps(mut breakpoints: Vec<S>, mut values: Vec<S>) -> Result<Self> {
        if values.len() + 1 == breakpoints.len() && !breakpoints.iter().any(|x| x.is_zero()) {
            if let Some(i) = breakpoints.iter().position(|x| x > &S::zero()) {
                if i > 0 {
                    breakpoints.insert(i, S::zero());
                    values.insert(i, values[i - 1].clone());
                }
            }
        }
        Self::new(breakpoints, values)
    }

    pub fn constant(c: S) -> Self {
        PCDensity { breakpoints: vec![-S::one(), S::zero(), S::one()], values: vec![c.clone(), c] }
    }

    pub fn zero() -> Self {
        Self::constant(S::zero())
    }

    /// `1_{J+} - 1_{J-}`.
    pub fn sign() -> Self {
        PCDensity {
            breakpoints: vec![-S::one(), S::zero(), S::one()],
            values: vec![-S::one(), S::one()],
        }
    }

    /// Value `alpha` on `J-` and `beta` on `J+`.
    pub fn two_level(alpha: S, beta: S) -> Self {
        PCDensity { breakpoints: vec![-S::one(), S::zero(), S::one()], values: vec![alpha, beta] }
    }

    /// Indicator of `[lo, hi]`.
    pub fn indicator(lo: S, hi: S) -> Result<Self> {
        let set = [Interval::new(lo, hi)];
        Ok(Self::constant(S::one()).masked(&set))
    }

    pub fn breakpoints(&self) -> &[S] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    /// `(lo, hi, value)` for every cell.
    pub fn cells(&self) -> impl Iterator<Item = (&S, &S, &S)> + '_ {
        self.breakpoints.windows(2).zip(&self.values).map(|(w, v)| (&w[0], &w[1], v))
    }

    pub fn integral(&self) -> S {
        self.cells().fold(S::zero(), |acc, (lo, hi, v)| acc + v.clone() * (hi.clone() - lo.clone()))
    }

    pub fn integral_over(&self, set: &Interval<S>) -> S {
        self.cells().fold(S::zero(), |acc, (lo, hi, v)| {
            let cell = Interval { lo: lo.clone(), hi: hi.clone() };
            match cell.overlap(set) {
                Some(ov) => acc + v.clone() * ov.measure(),
                None => acc,
            }
        })
    }

    /// `∫_{J+} f`.
    pub fn integral_plus(&self) -> S {
        self.cells()
            .filter(|(lo, _, _)| *lo >= &S::zero())
            .fold(S::zero(), |acc, (lo, hi, v)| acc + v.clone() * (hi.clone() - lo.clone()))
    }

    /// `∫_{J-} f`.
    pub fn integral_minus(&self) -> S {
        self.cells()
            .filter(|(_, hi, _)| *hi <= &S::zero())
            .fold(S::zero(), |acc, (lo, hi, v)| acc + v.clone() * (hi.clone() - lo.clone()))
    }

    pub fn l1(&self) -> S {
        self.cells().fold(S::zero(), |acc, (lo, hi, v)| acc + v.abs() * (hi.clone() - lo.clone()))
    }

    pub fn sup_norm(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| S::max_of(m, v.abs()))
    }

    /// Total variation over `[-1,0)` plus over `(0,1]`; the jump at `0` is excluded.
    pub fn var0c(&self) -> S {
        let mut var = S::zero();
        for i in 1..self.values.len() {
            if self.breakpoints[i].is_zero() {
                continue;
            }
            var = var + (self.values[i].clone() - self.values[i - 1].clone()).abs();
        }
        var
    }

    pub fn bv_norm(&self) -> BVNormReport<S> {
        let l1 = self.l1();
        let var0c = self.var0c();
        let bv = S::max_of(l1.clone(), var0c.clone());
        BVNormReport { l1, var0c, bv }
    }

    /// Value on the cell whose interior contains `x`; `None` at a breakpoint
    /// or outside `(-1, 1)`.
    pub fn value_at(&self, x: &S) -> Option<&S> {
        let i = self.breakpoints.partition_point(|b| b <= x);
        if i == 0 || i >= self.breakpoints.len() || &self.breakpoints[i - 1] == x {
            return None;
        }
        Some(&self.values[i - 1])
    }

    /// Same density on a finer grid containing every point of `points`
    /// that lies strictly inside `(-1, 1)`.
    pub fn refined(&self, points: &[S]) -> Self {
        let mut extra: Vec<S> = points
            .iter()
            .filter(|p| *p > &-S::one() && *p < &S::one())
            .cloned()
            .collect();
        if extra.is_empty() {
            return self.clone();
        }
        extra.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
        extra.dedup();
        let mut bps = Vec::with_capacity(self.breakpoints.len() + extra.len());
        let mut vals = Vec::with_capacity(self.values.len() + extra.len());
        let mut e = extra.into_iter().peekable();
        for (lo, hi, v) in self.cells() {
            bps.push(lo.clone());
            vals.push(v.clone());
            while let Some(p) = e.peek() {
                if p <= lo {
                    e.next();
                } else if p < hi {
                    bps.push(p.clone());
                    vals.push(v.clone());
                    e.next();
                } else {
                    break;
                }
            }
        }
        bps.push(S::one());
        PCDensity { breakpoints: bps, values: vals }
    }

    /// Pointwise combination on the common refinement of both grids.
    pub fn zip_with(&self, other: &Self, op: impl Fn(&S, &S) -> S) -> Self {
        let mut bps = Vec::with_capacity(self.breakpoints.len() + other.breakpoints.len());
        let mut vals = Vec::with_capacity(bps.capacity());
        let (mut i, mut j) = (0usize, 0usize);
        bps.push(-S::one());
        while i < self.values.len() && j < other.values.len() {
            vals.push(op(&self.values[i], &other.values[j]));
            let a = &self.breakpoints[i + 1];
            let b = &other.breakpoints[j + 1];
            if a < b {
                bps.push(a.clone());
                i += 1;
            } else if b < a {
                bps.push(b.clone());
                j += 1;
            } else {
                bps.push(a.clone());
                i += 1;
                j += 1;
            }
        }
        PCDensity { breakpoints: bps, values: vals }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a.clone() + b.clone())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a.clone() - b.clone())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: &S, other: &Self) -> Self {
        self.zip_with(other, |a, b| a.clone() + c.clone() * b.clone())
    }

    pub fn scaled(&self, c: &S) -> Self {
        PCDensity {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v.clone() * c.clone()).collect(),
        }
    }

    /// `1_set * f` for a finite union of closed intervals.
    pub fn masked(&self, set: &[Interval<S>]) -> Self {
        let cuts: Vec<S> = set.iter().flat_map(|iv| [iv.lo.clone(), iv.hi.clone()]).collect();
        let mut out = self.refined(&cuts);
        for (k, v) in out.values.iter_mut().enumerate() {
            let lo = &out.breakpoints[k];
            let hi = &out.breakpoints[k + 1];
            let inside = set.iter().any(|iv| &iv.lo <= lo && hi <= &iv.hi);
            if !inside {
                *v = S::zero();
            }
        }
        out
    }

    /// Merges runs of adjacent cells whose values span at most `tol`,
    /// replacing each run by its mean. The integral is preserved, the L¹
    /// change is at most `2 * tol`, and runs never cross `0`.
    pub fn coarsen(&self, tol: &S) -> Self {
        let n = self.values.len();
        let mut bps = Vec::with_capacity(self.breakpoints.len());
        let mut vals = Vec::with_capacity(n);
        bps.push(self.breakpoints[0].clone());
        let mut start = 0;
        while start < n {
            let mut lo_v = self.values[start].clone();
            let mut hi_v = lo_v.clone();
            let mut end = start + 1;
            while end < n && !self.breakpoints[end].is_zero() {
                let v = &self.values[end];
                let nlo = S::min_of(lo_v.clone(), v.clone());
                let nhi = S::max_of(hi_v.clone(), v.clone());
                if nhi.clone() - nlo.clone() > *tol {
                    break;
                }
                lo_v = nlo;
                hi_v = nhi;
                end += 1;
            }
            let value = if end == start + 1 || lo_v == hi_v {
                self.values[start].clone()
            } else {
                let mut mass = S::zero();
                for k in start..end {
                    mass = mass
                        + self.values[k].clone()
                            * (self.breakpoints[k + 1].clone() - self.breakpoints[k].clone());
                }
                let width = self.breakpoints[end].clone() - self.breakpoints[start].clone();
                let mean = mass / width;
                // keep the mean inside the run's range despite round-off
                S::min_of(S::max_of(mean, lo_v), hi_v)
            };
            vals.push(value);
            bps.push(self.breakpoints[end].clone());
            start = end;
        }
        PCDensity { breakpoints: bps, values: vals }
    }

    /// Absorbs float slivers (cells narrower than [`Scalar::sliver_width`])
    /// into the wider neighbour on the same side of `0`, conserving mass.
    fn without_slivers(mut self) -> Self {
        let Some(width) = S::sliver_width() else {
            return self;
        };
        let mut k = 0;
        while k < self.values.len() {
            let w = self.breakpoints[k + 1].clone() - self.breakpoints[k].clone();
            if w >= width {
                k += 1;
                continue;
            }
            let left_ok = k > 0 && !self.breakpoints[k].is_zero();
            let right_ok = k + 1 < self.values.len() && !self.breakpoints[k + 1].is_zero();
            let nb = match (left_ok, right_ok) {
                (true, true) => {
                    let wl = self.breakpoints[k].clone() - self.breakpoints[k - 1].clone();
                    let wr = self.breakpoints[k + 2].clone() - self.breakpoints[k + 1].clone();
                    if wl >= wr {
                        k - 1
                    } else {
                        k + 1
                    }
                }
                (true, false) => k - 1,
                (false, true) => k + 1,
                (false, false) => {
                    k += 1;
                    continue;
                }
            };
            let wn = self.breakpoints[nb + 1].clone() - self.breakpoints[nb].clone();
            let mass = self.values[nb].clone() * wn.clone() + self.values[k].clone() * w.clone();
            self.values[nb] = mass / (wn + w);
            self.values.remove(k);
            // drop the breakpoint shared by the sliver and its neighbour
            let shared = if nb < k { k } else { k + 1 };
            self.breakpoints.remove(shared);
            if nb < k {
                k = nb;
            }
        }
        self
    }

    /// Exact Perron–Frobenius pushforward `(Lf)(y) = Σ_{T(x)=y} f(x)/|T'(x)|`.
    pub fn transfer(&self, map: &PairedTentMap<S>) -> Self {
        let half = S::half();
        let f = self.refined(&[-half.clone(), half]);
        let branches = map.branches();
        let mut pieces: [Vec<(S, S, S)>; 4] = Default::default();
        for (lo, hi, v) in f.cells() {
            let mid_neg = lo < &S::zero();
            let idx = branches
                .iter()
                .position(|b| &b.domain.lo <= lo && hi <= &b.domain.hi)
                .unwrap_or(if mid_neg { 1 } else { 2 });
            let b = &branches[idx];
            let p = snap(b.apply(lo));
            let q = snap(b.apply(hi));
            let val = v.clone() / b.slope.abs();
            let (s, e) = if p <= q { (p, q) } else { (q, p) };
            if s < e {
                pieces[idx].push((s, e, val));
            }
        }
        for (idx, list) in pieces.iter_mut().enumerate() {
            if branches[idx].slope < S::zero() {
                list.reverse();
            }
        }

        let mut points: Vec<S> = vec![S::zero()];
        for list in &pieces {
            for (s, e, _) in list {
                points.push(s.clone());
                points.push(e.clone());
            }
        }
        points.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
        points.dedup();

        let mut cursor = [0usize; 4];
        let mut bps = Vec::with_capacity(points.len());
        let mut vals: Vec<S> = Vec::with_capacity(points.len());
        bps.push(points[0].clone());
        for w in points.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            let mut acc = S::zero();
            for (list, c) in pieces.iter().zip(cursor.iter_mut()) {
                while *c < list.len() && &list[*c].1 <= lo {
                    *c += 1;
                }
                if *c < list.len() && &list[*c].0 <= lo {
                    acc = acc + list[*c].2.clone();
                }
            }
            // exact-equal neighbours on the same side of 0 merge for free
            if let Some(last) = vals.last() {
                if *last == acc && !lo.is_zero() {
                    *bps.last_mut().expect("nonempty") = hi.clone();
                    continue;
                }
            }
            vals.push(acc);
            bps.push(hi.clone());
        }
        PCDensity { breakpoints: bps, values: vals }.without_slivers()
    }

    /// `∫ self · other`.
    pub fn pairing(&self, other: &Self) -> S {
        self.zip_with(other, |a, b| a.clone() * b.clone()).integral()
    }

    /// The composition `self ∘ T`, a step function since every branch is
    /// monotone.
    pub fn composed_with(&self, map: &PairedTentMap<S>) -> Self {
        let mut bps = vec![-S::one()];
        let mut vals = Vec::new();
        for br in map.branches() {
            let img = br.image();
            let mut xs: Vec<S> = self
                .breakpoints
                .iter()
                .filter(|y| **y > img.lo && **y < img.hi)
                .map(|y| br.inverse(y))
                .collect();
            xs.push(br.domain.hi.clone());
            xs.sort_by(|a, b| a.partial_cmp(b).expect("ordered"));
            let mut left = br.domain.lo.clone();
            for x in xs {
                if x <= left {
                    continue;
                }
                let mid = (left.clone() + x.clone()) * S::half();
                let y = br.apply(&mid);
                let v = self.value_at(&y).cloned().unwrap_or_else(S::zero);
                bps.push(x.clone());
                vals.push(v);
                left = x;
            }
        }
        PCDensity { breakpoints: bps, values: vals }
    }

    /// Writes the two-column `breakpoint value` text format used for plots.
    /// Each row holds a breakpoint and the value on the cell to its right; the
    /// final row (`x = 1`) repeats the last cell value so step plots close.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        for (lo, _, v) in self.cells() {
            let _ = writeln!(out, "{:.16e} {:.16e}", lo.to_f64(), v.to_f64());
        }
        let last = self.values.last().map(|v| v.to_f64()).unwrap_or(0.0);
        let _ = writeln!(out, "{:.16e} {:.16e}", 1.0, last);
        out
    }

    pub fn to_f64(&self) -> PCDensity<f64> {
        PCDensity {
            breakpoints: self.breakpoints.iter().map(|x| x.to_f64()).collect(),
            values: self.values.iter().map(|x| x.to_f64()).collect(),
        }
    }
}

impl PCDensity<f64> {
    /// Parses the text format written by [`PCDensity::to_text`]. Returns the
    /// header lines (without `# `) and the density.
    pub fn from_text(text: &str) -> Result<(Vec<String>, Self)> {
        let mut header = Vec::new();
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                header.push(h.trim().to_string());
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(v)), None) => rows.push((x, v)),
                _ => return Err(Error::Config(format!("malformed density row: {line:?}"))),
            }
        }
        if rows.len() < 2 {
            return Err(Error::Config("density dump needs at least two rows".into()));
        }
        let bps = rows.iter().map(|r| r.0).collect();
        let vals = rows[..rows.len() - 1].iter().map(|r| r.1).collect();
        Ok((header, PCDensity::new(bps, vals)?))
    }
}

fn snap<S: Scalar>(y: S) -> S {
    if S::is_exact() {
        return y;
    }
    let one = S::one();
    let tol = S::from_f64(SNAP);
    for target in [-one.clone(), S::zero(), one.clone()] {
        if (y.clone() - target.clone()).abs() < tol {
            return target;
        }
    }
    S::min_of(S::max_of(y, -one.clone()), one)
}

/// `L f` for one fibre map.
pub fn transfer_pc<S: Scalar>(map: &PairedTentMap<S>, f: &PCDensity<S>) -> PCDensity<S> {
    f.transfer(map)
}

/// Splits `L^{(k)} f` into the part that never entered a hole and the parts
/// `g_j` that leaked on step `j`:
/// `g_j = L(1_H h_{j-1})`, `h_j = L(1_{H^c} h_{j-1})`, `h_0 = f`.
pub fn leak_decomposition<S: Scalar>(
    orbit: &[PairedTentMap<S>],
    f: &PCDensity<S>,
) -> Result<(PCDensity<S>, Vec<PCDensity<S>>)> {
    if orbit.is_empty() {
        return Err(Error::Domain("leak decomposition needs a nonempty orbit".into()));
    }
    let mut h = f.clone();
    let mut leaks = Vec::with_capacity(orbit.len());
    for map in orbit {
        let holes = map.holes();
        leaks.push(h.masked(&holes.as_set()).transfer(map));
        h = h.masked(&holes.complement()).transfer(map);
    }
    Ok((h, leaks))
}
