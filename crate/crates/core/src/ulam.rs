//! Ulam discretization of a fibre transfer operator on the uniform
//! `n`-bin partition of `[-1, 1]`.
//!
//! Vectors hold bin masses. `P_ij = m(I_i ∩ T⁻¹I_j) / m(I_i)` is
//! row-stochastic and acts on the left, `w_j = Σ_i v_i P_ij`, so total
//! mass is conserved.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::densities::PCDensity;
use crate::error::{Error, Result};
use crate::interval_maps::PairedTentMap;
use crate::scalar::{Interval, Scalar};

/// Sparse row-major (CSR) Ulam matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct UlamMatrix<S> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<S>,
}

fn check_bins(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Config(format!("Ulam partition needs an even number of bins >= 2, got {n}")));
    }
    Ok(())
}

/// Bin `i` of the uniform `n`-partition.
pub fn bin<S: Scalar>(n: usize, i: usize) -> Interval<S> {
    let n = n as i64;
    let i = i as i64;
    Interval::new(S::from_ratio(2 * i - n, n), S::from_ratio(2 * i + 2 - n, n))
}

/// Warns when bins are too coarse to resolve holes of size about `eps`.
pub fn check_resolution(n: usize, eps: f64) -> bool {
    let ok = eps <= 0.0 || n as f64 >= 64.0 / eps;
    if !ok {
        warn!("Ulam resolution n = {n} is below 64/eps = {:.0}; lambda_2 may be biased", 64.0 / eps);
    }
    ok
}

fn row_entries<S: Scalar>(map: &PairedTentMap<S>, n: usize, i: usize) -> Vec<(usize, S)> {
    let cell = bin::<S>(n, i);
    let width = cell.measure();
    let mut acc: Vec<(usize, S)> = Vec::new();
    for br in map.branches() {
        let Some(piece) = cell.overlap(&br.domain) else { continue };
        let y0 = br.apply(&piece.lo);
        let y1 = br.apply(&piece.hi);
        let image = if y0 <= y1 { Interval::new(y0, y1) } else { Interval::new(y1, y0) };
        let first = ((image.lo.to_f64() + 1.0) * (n as f64) / 2.0).floor() as i64 - 1;
        let last = ((image.hi.to_f64() + 1.0) * (n as f64) / 2.0).ceil() as i64 + 1;
        let slope = br.slope.abs();
        for j in first.max(0)..=last.min(n as i64 - 1) {
            let j = j as usize;
            if let Some(ov) = image.overlap(&bin::<S>(n, j)) {
                let p = ov.measure() / slope.clone() / width.clone();
                match acc.iter_mut().find(|(c, _)| *c == j) {
                    Some(e) => e.1 = e.1.clone() + p,
                    None => acc.push((j, p)),
                }
            }
        }
    }
    acc.sort_by_key(|e| e.0);
    acc
}

/// Exact Ulam matrix of `map` on `n` bins (`n` even, so `0` is a bin edge).
pub fn build_ulam<S: Scalar>(map: &PairedTentMap<S>, n: usize) -> Result<UlamMatrix<S>> {
    check_bins(n)?;
    let rows: Vec<Vec<(usize, S)>> = (0..n).into_par_iter().map(|i| row_entries(map, n, i)).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for row in rows {
        for (j, p) in row {
            cols.push(j);
            vals.push(p);
        }
        row_ptr.push(cols.len());
    }
    Ok(UlamMatrix { n, row_ptr, cols, vals })
}

impl<S: Scalar> UlamMatrix<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &S)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(&self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.row(i).find(|(c, _)| *c == j).map(|(_, v)| v.clone()).unwrap_or_else(S::zero)
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.n).map(|i| self.row(i).fold(S::zero(), |a, (_, v)| a + v.clone())).collect()
    }

    /// `max_i |Σ_j P_ij - 1|`.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.row_sums().iter().map(|s| (s.to_f64() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Left action `v ↦ vP` on mass vectors.
    pub fn apply(&self, v: &[S]) -> Result<Vec<S>> {
        if v.len() != self.n {
            return Err(Error::Domain(format!(
                "vector of length {} applied to {}-bin Ulam matrix",
                v.len(),
                self.n
            )));
        }
        let mut w = vec![S::zero(); self.n];
        for (i, vi) in v.iter().enumerate() {
            if vi.is_zero() {
                continue;
            }
            for (j, p) in self.row(i) {
                w[j] = w[j].clone() + vi.clone() * p.clone();
            }
        }
        Ok(w)
    }

    pub fn to_f64(&self) -> UlamMatrix<f64> {
        UlamMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| v.to_f64()).collect(),
        }
    }

    /// Coordinate text dump: one `row col value` line per nonzero.
    pub fn to_coordinate_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        for i in 0..self.n {
            for (j, p) in self.row(i) {
                let _ = writeln!(out, "{i} {j} {:.16e}", p.to_f64());
            }
        }
        out
    }
}

impl UlamMatrix<f64> {
    /// In-place left action into a preallocated buffer.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += vi * self.vals[k];
            }
        }
    }
}

/// Bin masses `∫_{I_i} f`.
pub fn discretize<S: Scalar>(f: &PCDensity<S>, n: usize) -> Result<Vec<S>> {
    check_bins(n)?;
    let mut out = vec![S::zero(); n];
    let mut i = 0;
    for (lo, hi, v) in f.cells() {
        let cell = Interval::new(lo.clone(), hi.clone());
        while i < n {
            let b = bin::<S>(n, i);
            if let Some(ov) = b.overlap(&cell) {
                out[i] = out[i].clone() + v.clone() * ov.measure();
            }
            if b.hi > *hi {
                break;
            }
            i += 1;
        }
    }
    Ok(out)
}

/// Density with bin masses `v`; right inverse of [`discretize`].
pub fn lift<S: Scalar>(v: &[S], n: usize) -> Result<PCDensity<S>> {
    check_bins(n)?;
    if v.len() != n {
        return Err(Error::Domain(format!("mass vector of length {} for {n} bins", v.len())));
    }
    let scale = S::from_ratio(n as i64, 2);
    let bps = (0..=n).map(|i| S::from_ratio(2 * i as i64 - n as i64, n as i64)).collect();
    let vals = v.iter().map(|m| m.clone() * scale.clone()).collect();
    PCDensity::new(bps, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driving::reference_matrix;
    use crate::scalar::Rational;
    use num::{One, Signed, Zero};

    fn r(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn odd_or_tiny_bins_rejected() {
        let m = PairedTentMap::<f64>::uncoupled();
        assert!(matches!(build_ulam(&m, 7), Err(Error::Config(_))));
        assert!(build_ulam(&m, 0).is_err());
        assert!(discretize(&PCDensity::<f64>::sign(), 3).is_err());
    }

    #[test]
    fn no_coupling_without_holes() {
        let m = build_ulam(&PairedTentMap::<Rational>::uncoupled(), 16).unwrap();
        for i in 0..16 {
            for (j, p) in m.row(i) {
                assert!((i < 8) == (j < 8) || p.is_zero());
            }
        }
    }

    #[test]
    fn two_bin_matrix_is_exact() {
        let (ea, eb) = (r(3, 100), r(1, 50));
        let map = PairedTentMap::new(ea.clone(), eb.clone()).unwrap();
        let m = build_ulam(&map, 2).unwrap();
        let one = Rational::one();
        let pb = eb.clone() / (one.clone() + eb.clone());
        let pa = ea.clone() / (one.clone() + ea.clone());
        assert_eq!(m.get(0, 0), one.clone() - pb.clone());
        assert_eq!(m.get(0, 1), pb);
        assert_eq!(m.get(1, 0), pa);
        assert_eq!(m.get(1, 1), one - pa);
        // the lumped reference cocycle is the column-stochastic idealization
        let a = reference_matrix(&ea, &eb);
        let eps_sq = r(3, 100) * r(3, 100);
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.get(i, j) - a[j][i].clone()).abs() <= eps_sq);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_exactly() {
        let map = PairedTentMap::new(r(1, 100), r(1, 70)).unwrap();
        for n in [2, 64, 4096] {
            let m = build_ulam(&map, n).unwrap();
            assert!(m.row_sums().iter().all(|s| s.is_one()), "n = {n}");
        }
    }

    #[test]
    fn float_row_sums_close() {
        let map = PairedTentMap::new(0.01, 0.013).unwrap();
        let m = build_ulam(&map, 4096).unwrap();
        assert!(m.max_row_sum_deviation() <= 1e-12);
        assert!(m.vals.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn entries_match_preimages() {
        let map = PairedTentMap::new(r(1, 7), r(2, 9)).unwrap();
        let n = 12;
        let m = build_ulam(&map, n).unwrap();
        for j in 0..n {
            let pre = map.preimage_of_interval(&bin(n, j));
            for i in 0..n {
                let bi = bin::<Rational>(n, i);
                let mass = pre
                    .iter()
                    .filter_map(|iv| iv.overlap(&bi))
                    .fold(Rational::zero(), |a, ov| a + ov.measure());
                assert_eq!(m.get(i, j), mass / bi.measure(), "({i},{j})");
            }
        }
    }

    #[test]
    fn coupling_mass_equals_hole_measure() {
        let map = PairedTentMap::new(r(1, 40), r(1, 25)).unwrap();
        let n = 256;
        let m = build_ulam(&map, n).unwrap();
        let w = r(2, n as i64);
        let mut cross = Rational::zero();
        for i in 0..n {
            for (j, p) in m.row(i) {
                if (i < n / 2) != (j < n / 2) {
                    cross = cross + p.clone() * w.clone();
                }
            }
        }
        assert_eq!(cross, map.holes().measure());
    }

    #[test]
    fn apply_conserves_mass() {
        let map = PairedTentMap::new(r(1, 10), r(1, 3)).unwrap();
        let m = build_ulam(&map, 32).unwrap();
        let v: Vec<Rational> = (0..32).map(|i| r(i * i - 40, 7)).collect();
        let w = m.apply(&v).unwrap();
        let sum = |x: &[Rational]| x.iter().fold(Rational::zero(), |a, b| a + b.clone());
        assert_eq!(sum(&w), sum(&v));
        assert!(m.apply(&v[..5]).is_err());
        let unif = vec![r(1, 16); 32];
        let m0 = build_ulam(&PairedTentMap::uncoupled(), 32).unwrap();
        assert_eq!(m0.apply(&unif).unwrap(), unif);
    }

    #[test]
    fn apply_into_matches_apply() {
        let map = PairedTentMap::new(0.02, 0.03).unwrap();
        let m = build_ulam(&map, 64).unwrap();
        let v: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let mut out = vec![0.0; 64];
        m.apply_into(&v, &mut out);
        assert_eq!(out, m.apply(&v).unwrap());
    }

    #[test]
    fn ulam_equals_exact_push_on_aligned_densities() {
        let map = PairedTentMap::new(r(1, 20), r(1, 30)).unwrap();
        let n = 64;
        let v: Vec<Rational> = (0..n).map(|i| r((i as i64 * 37) % 11 - 5, 64)).collect();
        let f = lift(&v, n).unwrap();
        assert_eq!(discretize(&f, n).unwrap(), v);
        let exact = discretize(&f.transfer(&map), n).unwrap();
        assert_eq!(build_ulam(&map, n).unwrap().apply(&v).unwrap(), exact);
    }

    #[test]
    fn discretize_sign_and_mass() {
        let v = discretize(&PCDensity::<Rational>::sign(), 8).unwrap();
        assert_eq!(v[..4], vec![r(-1, 4); 4][..]);
        assert_eq!(v[4..], vec![r(1, 4); 4][..]);
        let f = PCDensity::from_steps(vec![r(-1, 1), r(-1, 3), r(2, 7), r(1, 1)], vec![r(1, 1), r(5, 2), r(-3, 1)])
            .unwrap();
        let total = discretize(&f, 10).unwrap().into_iter().fold(Rational::zero(), |a, b| a + b);
        assert_eq!(total, f.integral());
        assert_eq!(lift(&discretize(&f, 10).unwrap(), 10).unwrap().integral(), f.integral());
    }

    #[test]
    fn coordinate_dump() {
        let m = build_ulam(&PairedTentMap::<Rational>::uncoupled(), 2).unwrap();
        let text = m.to_coordinate_text(&["n=2".into()]);
        assert_eq!(text, "# n=2\n0 0 1.0000000000000000e0\n1 1 1.0000000000000000e0\n");
    }

    #[test]
    fn resolution_warning_threshold() {
        assert!(check_resolution(8192, 0.01));
        assert!(!check_resolution(1024, 0.01));
        assert!(check_resolution(2, 0.0));
    }
}
