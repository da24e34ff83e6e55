//! The quarantine operator on `(k+1)`-tuples of densities and the cone it
//! preserves.
//!
//! `f_0` carries mass that has not recently crossed a hole; `f_j` carries
//! mass that leaked `j` steps ago. One step of `Λ` is
//! `(L(f_0 1_{H^c} + f_k), L(1_H f_0), L f_1, …, L f_{k-1})`.

use log::{info, warn};
use num::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::densities::PCDensity;
use crate::driving::{generate, DriverSpec};
use crate::error::{Error, Result};
use crate::interval_maps::PairedTentMap;
use crate::scalar::{Interval, Rational, Scalar};

/// Largest `eps` for which invariance is asserted rather than only measured.
pub const INVARIANCE_EPS_MAX: f64 = 1.0 / 2000.0;
const MAX_RESAMPLES: usize = 64;

/// The unique `k` with `2^k eps < 1/4 <= 2^{k+1} eps`.
pub fn k_from_epsilon<S: Scalar>(eps: &S) -> Result<usize> {
    let quarter = S::from_ratio(1, 4);
    if *eps <= S::zero() || *eps >= quarter {
        return Err(Error::Domain(format!("k needs 0 < eps < 1/4, got {}", eps.to_f64())));
    }
    let two = S::from_i64(2);
    let mut k = 0;
    let mut scaled = eps.clone();
    while scaled.clone() * two.clone() < quarter {
        scaled = scaled * two.clone();
        k += 1;
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeParams<S> {
    pub eps: S,
    pub k: usize,
    /// `2(1 - 39 eps)`
    pub c1_rate: S,
    /// `1 - 39 eps`
    pub c2_rate: S,
}

impl<S: Scalar> ConeParams<S> {
    pub fn new(eps: S) -> Result<Self> {
        let k = k_from_epsilon(&eps)?;
        Self::with_k(eps, k)
    }

    /// Explicit `k`; also admits `eps = 0`, where every hole is empty.
    pub fn with_k(eps: S, k: usize) -> Result<Self> {
        let c2_rate = S::one() - S::from_i64(39) * eps.clone();
        if eps < S::zero() || c2_rate <= S::zero() {
            return Err(Error::Domain(format!("cone needs 0 <= eps < 1/39, got {}", eps.to_f64())));
        }
        if eps.to_f64() > INVARIANCE_EPS_MAX {
            warn!(
                "eps = {} exceeds 1/2000; cone invariance is only proved for smaller eps",
                eps.to_f64()
            );
        }
        let c1_rate = S::from_i64(2) * c2_rate.clone();
        Ok(ConeParams { eps, k, c1_rate, c2_rate })
    }

    /// Whether `3 / (1 - 39 eps)^k < 4`.
    pub fn small_enough(&self) -> bool {
        S::from_i64(3) < S::from_i64(4) * pow(&self.c2_rate, self.k)
    }

    /// `4 (2(1-39eps))^{-j} ||f_0||_1`
    pub fn c1_bound(&self, j: usize, l1_f0: &S) -> S {
        S::from_i64(4) * l1_f0.clone() / pow(&self.c1_rate, j)
    }

    /// `3 (1-39eps)^{-j} eps ||f_0||_1`
    pub fn c2_bound(&self, j: usize, l1_f0: &S) -> S {
        S::from_i64(3) * self.eps.clone() * l1_f0.clone() / pow(&self.c2_rate, j)
    }

    /// `33 eps ||f_0||_1`
    pub fn c3_bound(&self, l1_f0: &S) -> S {
        S::from_i64(33) * self.eps.clone() * l1_f0.clone()
    }

    /// Half-width `δ_j` of the region that may carry `f_j`:
    /// `δ_1 = eps`, `δ_{j+1} = 2(1+eps) δ_j`.
    pub fn support_width(&self, j: usize) -> S {
        let grow = S::from_i64(2) * (S::one() + self.eps.clone());
        self.eps.clone() * pow(&grow, j.saturating_sub(1))
    }

    /// Where `f_j` may be nonzero: `[-δ_1, δ_1]` for `j = 1`, and the two
    /// end intervals `[-1, -1+δ_j] ∪ [1-δ_j, 1]` for `j >= 2`.
    pub fn support(&self, j: usize) -> Vec<Interval<S>> {
        let d = S::min_of(self.support_width(j), S::one());
        let one = S::one();
        if j == 1 {
            vec![Interval::new(-d.clone(), d)]
        } else {
            vec![
                Interval::new(-one.clone(), -one.clone() + d.clone()),
                Interval::new(one.clone() - d, one),
            ]
        }
    }
}

fn pow<S: Scalar>(x: &S, n: usize) -> S {
    (0..n).fold(S::one(), |acc, _| acc * x.clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuarantineTuple<S> {
    components: Vec<PCDensity<S>>,
}

impl<S: Scalar> QuarantineTuple<S> {
    pub fn new(components: Vec<PCDensity<S>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("a quarantine tuple needs at least f_0".into()));
        }
        Ok(QuarantineTuple { components })
    }

    /// `(f, 0, …, 0)` with `k` trailing zeros.
    pub fn from_density(f: PCDensity<S>, k: usize) -> Self {
        let mut components = vec![f];
        components.extend(std::iter::repeat_with(PCDensity::zero).take(k));
        QuarantineTuple { components }
    }

    pub fn k(&self) -> usize {
        self.components.len() - 1
    }

    pub fn components(&self) -> &[PCDensity<S>] {
        &self.components
    }

    pub fn f0(&self) -> &PCDensity<S> {
        &self.components[0]
    }

    /// `Φ(t) = f_0 + … + f_k`.
    pub fn phi(&self) -> PCDensity<S> {
        let mut acc = self.components[0].clone();
        for f in &self.components[1..] {
            acc = acc.add(f);
        }
        acc.coarsen(&S::zero())
    }

    pub fn l1_sum(&self) -> S {
        self.components.iter().fold(S::zero(), |a, f| a + f.l1())
    }

    /// Merges cells whose values differ by at most `tol` in every component.
    pub fn coarsened(&self, tol: &S) -> Self {
        QuarantineTuple { components: self.components.iter().map(|f| f.coarsen(tol)).collect() }
    }

    pub fn to_f64(&self) -> QuarantineTuple<f64> {
        QuarantineTuple { components: self.components.iter().map(|f| f.to_f64()).collect() }
    }
}

/// One step of the quarantine operator, with `k` taken from the tuple.
/// When `k = 0` this is plain `L`.
pub fn lambda_step<S: Scalar>(map: &PairedTentMap<S>, t: &QuarantineTuple<S>) -> QuarantineTuple<S> {
    let f = &t.components;
    let k = t.k();
    if k == 0 {
        return QuarantineTuple { components: vec![f[0].transfer(map)] };
    }
    let holes = map.holes();
    let mut out = Vec::with_capacity(k + 1);
    out.push(f[0].masked(&holes.complement()).add(&f[k]).transfer(map));
    out.push(f[0].masked(&holes.as_set()).transfer(map));
    for fj in &f[1..k] {
        out.push(fj.transfer(map));
    }
    QuarantineTuple { components: out }
}

/// `(φ⁺, φ⁻) = (∫_{J+} Φ(t), ∫_{J-} Φ(t))`.
pub fn phi_pm<S: Scalar>(t: &QuarantineTuple<S>) -> (S, S) {
    t.components.iter().fold((S::zero(), S::zero()), |(p, m), f| {
        (p + f.integral_plus(), m + f.integral_minus())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeReport {
    /// Per `j = 1..k`.
    pub c1: Vec<bool>,
    pub c2: Vec<bool>,
    pub c3: bool,
    /// Slack `(bound - value) / ||f_0||_1`; negative means violated.
    pub c1_margin: Vec<f64>,
    pub c2_margin: Vec<f64>,
    pub c3_margin: f64,
    /// Whether each `f_j` lives where leaked mass can be after `j` steps.
    pub support: bool,
}

impl ConeReport {
    pub fn in_cone(&self) -> bool {
        self.c3 && self.c1.iter().all(|&b| b) && self.c2.iter().all(|&b| b)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, ok) in self.c1.iter().enumerate() {
            if !ok {
                out.push(format!("C1[j={}]", j + 1));
            }
        }
        for (j, ok) in self.c2.iter().enumerate() {
            if !ok {
                out.push(format!("C2[j={}]", j + 1));
            }
        }
        if !self.c3 {
            out.push("C3".into());
        }
        if !self.support {
            out.push("support".into());
        }
        out
    }

    pub fn min_c1_margin(&self) -> f64 {
        self.c1_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_c2_margin(&self) -> f64 {
        self.c2_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn supported_in<S: Scalar>(f: &PCDensity<S>, set: &[Interval<S>]) -> bool {
    f.cells()
        .filter(|(_, _, v)| !v.is_zero())
        .all(|(lo, hi, _)| set.iter().any(|iv| &iv.lo <= lo && hi <= &iv.hi))
}

/// Checks (C1)–(C3) exactly in the arithmetic of `S`, plus the support condition.
pub fn cone_check<S: Scalar>(t: &QuarantineTuple<S>, p: &ConeParams<S>) -> Result<ConeReport> {
    if t.k() != p.k {
        return Err(Error::Domain(format!("tuple has k = {} but the cone uses k = {}", t.k(), p.k)));
    }
    let l1 = t.f0().l1();
    let norm = if l1.is_zero() { 1.0 } else { l1.to_f64() };
    let mut report = ConeReport {
        c1: Vec::new(),
        c2: Vec::new(),
        c3: true,
        c1_margin: Vec::new(),
        c2_margin: Vec::new(),
        c3_margin: 0.0,
        support: true,
    };
    for (j, fj) in t.components.iter().enumerate().skip(1) {
        let var = fj.var0c();
        let b1 = p.c1_bound(j, &l1);
        report.c1.push(var <= b1);
        report.c1_margin.push((b1 - var).to_f64() / norm);
        let mass = fj.l1();
        let b2 = p.c2_bound(j, &l1);
        report.c2.push(mass <= b2);
        report.c2_margin.push((b2 - mass).to_f64() / norm);
        report.support &= supported_in(fj, &p.support(j));
    }
    let var0 = t.f0().var0c();
    let b3 = p.c3_bound(&l1);
    report.c3 = var0 <= b3;
    report.c3_margin = (b3 - var0).to_f64() / norm;
    Ok(report)
}

/// Whether `var0c(L f) <= var0c(f) / 2`; violations are logged.
pub fn variation_halves<S: Scalar>(map: &PairedTentMap<S>, f: &PCDensity<S>) -> bool {
    let before = f.var0c();
    let after = f.transfer(map).var0c();
    let ok = after.clone() * S::from_i64(2) <= before;
    if !ok {
        info!(
            "variation did not halve: var0c(f) = {:e}, var0c(Lf) = {:e}",
            before.to_f64(),
            after.to_f64()
        );
    }
    ok
}

/// Checks the per-component mass bookkeeping of one `Λ` step:
/// `∫_{J±} g_0 = ∫_{J±∖H} f_0 + ∫_{J±} f_k`, `∫_{J±} g_1 = ∫_{H∓} f_0`,
/// and `∫_{J±} g_j = ∫_{J±} f_{j-1}` for `2 <= j <= k`.
pub fn mass_ledger_holds<S: Scalar>(
    map: &PairedTentMap<S>,
    t: &QuarantineTuple<S>,
    g: &QuarantineTuple<S>,
) -> bool {
    let k = t.k();
    if k == 0 || g.k() != k {
        return k == 0 && g.k() == 0 && g.f0().integral() == t.f0().integral();
    }
    let f = &t.components;
    let h = map.holes();
    let f0_plus = f[0].integral_plus();
    let f0_minus = f[0].integral_minus();
    let hp = f[0].integral_over(&h.h_plus);
    let hm = f[0].integral_over(&h.h_minus);
    let mut ok = g.components[0].integral_plus() == f0_plus - hp.clone() + f[k].integral_plus()
        && g.components[0].integral_minus() == f0_minus - hm.clone() + f[k].integral_minus()
        && g.components[1].integral_plus() == hm
        && g.components[1].integral_minus() == hp;
    for j in 2..=k {
        ok &= g.components[j].integral_plus() == f[j - 1].integral_plus()
            && g.components[j].integral_minus() == f[j - 1].integral_minus();
    }
    ok
}

fn small_rational<S: Scalar>(rng: &mut ChaCha8Rng, max: i64, den: i64) -> S {
    S::from_ratio(rng.gen_range(-max..=max), den)
}

/// Piecewise-constant `p` with `∫_{J±} p = 0` and `var0c(p) = 1` (or `p = 0`).
fn zero_mean_perturbation<S: Scalar>(rng: &mut ChaCha8Rng) -> PCDensity<S> {
    let mut bps = Vec::new();
    let mut vals = Vec::new();
    for half in [-1i64, 0] {
        let m = rng.gen_range(1..=4);
        let mut cuts: Vec<i64> = (0..m).map(|_| rng.gen_range(1..64)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut pts: Vec<S> = vec![S::from_i64(half)];
        pts.extend(cuts.iter().map(|&c| S::from_i64(half) + S::from_ratio(c, 64)));
        let raw: Vec<S> = (0..pts.len()).map(|_| small_rational(rng, 8, 1)).collect();
        pts.push(S::from_i64(half + 1));
        let mean = pts
            .windows(2)
            .zip(&raw)
            .fold(S::zero(), |a, (w, v)| a + v.clone() * (w[1].clone() - w[0].clone()));
        bps.extend(pts[..pts.len() - 1].iter().cloned());
        vals.extend(raw.into_iter().map(|v| v - mean.clone()));
    }
    bps.push(S::one());
    let p = PCDensity::new(bps, vals).expect("valid perturbation grid");
    let var = p.var0c();
    if var.is_zero() {
        return PCDensity::zero();
    }
    p.scaled(&(S::one() / var))
}

/// Random step function supported in `set`, cut at small fractions of each
/// interval.
fn random_supported<S: Scalar>(rng: &mut ChaCha8Rng, set: &[Interval<S>]) -> PCDensity<S> {
    let mut out = PCDensity::zero();
    for iv in set {
        let parts: Vec<Interval<S>> = if iv.lo < S::zero() && iv.hi > S::zero() {
            vec![
                Interval::new(iv.lo.clone(), S::zero()),
                Interval::new(S::zero(), iv.hi.clone()),
            ]
        } else {
            vec![iv.clone()]
        };
        for part in parts {
            let w = part.measure();
            let m = rng.gen_range(0..=2);
            let mut cuts: Vec<i64> = (0..m).map(|_| rng.gen_range(1..8)).collect();
            cuts.sort_unstable();
            cuts.dedup();
            let mut edges = vec![part.lo.clone()];
            edges.extend(cuts.iter().map(|&c| part.lo.clone() + w.clone() * S::from_ratio(c, 8)));
            edges.push(part.hi.clone());
            for e in edges.windows(2) {
                let v: S = small_rational(rng, 6, 1);
                let piece = PCDensity::indicator(e[0].clone(), e[1].clone())
                    .expect("ordered edges")
                    .scaled(&v);
                out = out.add(&piece);
            }
        }
    }
    out.coarsen(&S::zero())
}

/// Random element of the cone (of `𝒞₀` when `zero_mass`) satisfying the
/// support condition, built from small-denominator rationals.
///
/// `f_0` is a two-level function plus a zero-mean perturbation whose
/// variation is at most `0.95 · 33 eps ||f_0||_1`; each `f_j` is a random step
/// function on its support, scaled below the (C1) and (C2) bounds with
/// random slack. Membership is verified before returning.
pub fn sample_cone_element<S: Scalar>(
    seed: u64,
    p: &ConeParams<S>,
    zero_mass: bool,
) -> Result<QuarantineTuple<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let t = sample_once(&mut rng, p, zero_mass);
        let report = cone_check(&t, p)?;
        let (pp, pm) = phi_pm(&t);
        if report.in_cone() && report.support && (!zero_mass || (pp + pm).is_zero()) {
            return Ok(t);
        }
    }
    Err(Error::Anomaly(format!("cone sampler failed {MAX_RESAMPLES} times (seed {seed})")))
}

fn sample_once<S: Scalar>(rng: &mut ChaCha8Rng, p: &ConeParams<S>, zero_mass: bool) -> QuarantineTuple<S> {
    let nonzero = |rng: &mut ChaCha8Rng| loop {
        let v: S = small_rational(rng, 8, 4);
        if !v.is_zero() {
            return v;
        }
    };
    let beta = nonzero(rng);
    let alpha0 = if zero_mass { S::zero() } else { small_rational(rng, 8, 4) };
    // a lower bound for ||f_0||_1 that holds before and after the zero-mass fix
    let floor = if zero_mass { beta.abs() } else { alpha0.abs() + beta.abs() };

    let mut fj = Vec::with_capacity(p.k);
    for j in 1..=p.k {
        if rng.gen_ratio(1, 4) {
            fj.push(PCDensity::zero());
            continue;
        }
        let raw = random_supported(rng, &p.support(j));
        let var = raw.var0c();
        let mass = raw.l1();
        if mass.is_zero() {
            fj.push(raw);
            continue;
        }
        let slack1 = S::from_ratio(rng.gen_range(1..=9), 10);
        let slack2 = S::from_ratio(rng.gen_range(1..=9), 10);
        let mut scale = slack2 * p.c2_bound(j, &floor) / mass;
        if !var.is_zero() {
            scale = S::min_of(scale, slack1 * p.c1_bound(j, &floor) / var);
        }
        fj.push(raw.scaled(&scale));
    }

    let alpha = if zero_mass {
        -beta.clone() - fj.iter().fold(S::zero(), |a, f| a + f.integral())
    } else {
        alpha0
    };
    let u = S::from_ratio(rng.gen_range(0..=95), 100);
    let c = S::from_i64(33) * p.eps.clone() * u * floor;
    let f0 = PCDensity::two_level(alpha, beta).axpy(&c, &zero_mean_perturbation(rng));
    let mut components = vec![f0];
    components.extend(fj);
    QuarantineTuple { components }
}

/// Plain-float copy of a density for JSON reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityDump {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl DensityDump {
    pub fn of<S: Scalar>(f: &PCDensity<S>) -> Self {
        let g = f.to_f64();
        DensityDump { breakpoints: g.breakpoints().to_vec(), values: g.values().to_vec() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub sample: usize,
    pub eps_a: f64,
    pub eps_b: f64,
    pub failed: Vec<String>,
    pub input: Vec<DensityDump>,
    pub output: Vec<DensityDump>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub eps: f64,
    pub k: usize,
    pub driver: String,
    pub seed: u64,
    pub n_samples: usize,
    pub violations: usize,
    pub support_violations: usize,
    pub mass_ledger_violations: usize,
    pub zero_mass_violations: usize,
    pub worst_c1_margin: f64,
    pub worst_c2_margin: f64,
    pub worst_c3_margin: f64,
    /// `min ||g_0||_1 / ||f_0||_1` over all trials.
    pub worst_g0_ratio: f64,
    pub g0_ratio_bound: f64,
    pub counterexamples: Vec<Counterexample>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
            && self.support_violations == 0
            && self.mass_ledger_violations == 0
            && self.zero_mass_violations == 0
    }
}

struct TrialOutcome {
    report: ConeReport,
    g0_ok: bool,
    g0_ratio: f64,
    ledger_ok: bool,
    zero_mass_ok: bool,
    counterexample: Option<Counterexample>,
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

fn run_trial(
    i: usize,
    seed: u64,
    map: &PairedTentMap<Rational>,
    p: &ConeParams<Rational>,
) -> Result<TrialOutcome> {
    let zero_mass = i % 2 == 1;
    let t = sample_cone_element(sample_seed(seed, i), p, zero_mass)?;
    let g = lambda_step(map, &t);
    let report = cone_check(&g, p)?;
    let l1_f0 = t.f0().l1();
    let l1_g0 = g.f0().l1();
    let g0_ok = l1_g0 >= p.c2_rate.clone() * l1_f0.clone();
    let g0_ratio = (l1_g0 / l1_f0).to_f64();
    let ledger_ok = mass_ledger_holds(map, &t, &g);
    let (gp, gm) = phi_pm(&g);
    let zero_mass_ok = !zero_mass || (gp + gm).is_zero();
    let mut failed = report.failures();
    if !g0_ok {
        failed.push("g0_norm".into());
    }
    if !ledger_ok {
        failed.push("mass_ledger".into());
    }
    if !zero_mass_ok {
        failed.push("zero_mass".into());
    }
    let counterexample = (!failed.is_empty()).then(|| Counterexample {
        sample: i,
        eps_a: map.eps_a().to_f64(),
        eps_b: map.eps_b().to_f64(),
        failed,
        input: t.components().iter().map(DensityDump::of).collect(),
        output: g.components().iter().map(DensityDump::of).collect(),
    });
    Ok(TrialOutcome { report, g0_ok, g0_ratio, ledger_ok, zero_mass_ok, counterexample })
}

/// Machine check of `Λ 𝒞 ⊆ 𝒞` on random cone elements and random fibre maps,
/// in exact arithmetic. `eps = 0` uses `k = 1`.
pub fn invariance_trial(
    spec: &DriverSpec,
    eps: &Rational,
    n_samples: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if eps.to_f64() > INVARIANCE_EPS_MAX {
        return Err(Error::Config(format!(
            "cone invariance is asserted only for eps <= 1/2000, got {}",
            eps.to_f64()
        )));
    }
    let p = if eps.is_zero() {
        ConeParams::with_k(eps.clone(), 1)?
    } else {
        ConeParams::new(eps.clone())?
    };
    let maps = generate(spec, n_samples.max(1))?.maps(eps)?;
    let outcomes: Vec<TrialOutcome> = (0..n_samples)
        .into_par_iter()
        .map(|i| run_trial(i, seed, &maps[i], &p))
        .collect::<Result<_>>()?;
    let mut report = InvarianceReport {
        eps: eps.to_f64(),
        k: p.k,
        driver: spec.to_string(),
        seed,
        n_samples,
        violations: 0,
        support_violations: 0,
        mass_ledger_violations: 0,
        zero_mass_violations: 0,
        worst_c1_margin: f64::INFINITY,
        worst_c2_margin: f64::INFINITY,
        worst_c3_margin: f64::INFINITY,
        worst_g0_ratio: f64::INFINITY,
        g0_ratio_bound: p.c2_rate.to_f64(),
        counterexamples: Vec::new(),
    };
    for o in outcomes {
        if !o.report.in_cone() || !o.g0_ok {
            report.violations += 1;
        }
        report.support_violations += usize::from(!o.report.support);
        report.mass_ledger_violations += usize::from(!o.ledger_ok);
        report.zero_mass_violations += usize::from(!o.zero_mass_ok);
        report.worst_c1_margin = report.worst_c1_margin.min(o.report.min_c1_margin());
        report.worst_c2_margin = report.worst_c2_margin.min(o.report.min_c2_margin());
        report.worst_c3_margin = report.worst_c3_margin.min(o.report.c3_margin);
        report.worst_g0_ratio = report.worst_g0_ratio.min(o.g0_ratio);
        report.counterexamples.extend(o.counterexample);
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiRatioReport {
    pub eps: f64,
    pub k: usize,
    pub n_samples: usize,
    /// `max |φ⁺(Λt)/φ⁺(t) - (1 - ε(a+b))|`
    pub worst_deviation: f64,
    /// `worst_deviation / (ε² |ln ε|)`
    pub constant: f64,
    /// `3(68 + 6k(1-39ε)^{-k}) / |ln ε|`, when the lower bound
    /// `max|φ±| >= ||f_0||_1 / 3` is guaranteed (`(33 + 4k) ε <= 1/6`).
    pub derived_bound: Option<f64>,
}

/// Bound on `|φ⁺(Λt)/φ⁺(t) - (1-ε(a+b))| / (ε²|ln ε|)` for `t ∈ 𝒞₀`.
pub fn phi_ratio_bound(eps: f64, k: usize) -> Option<f64> {
    let guaranteed = (33.0 + 4.0 * k as f64) * eps <= 1.0 / 6.0;
    guaranteed.then(|| {
        let growth = (1.0 - 39.0 * eps).powi(-(k as i32));
        3.0 * (68.0 + 6.0 * k as f64 * growth) / eps.ln().abs()
    })
}

/// One-step `φ⁺` ratio on random `𝒞₀` samples.
pub fn phi_ratio_trial(
    spec: &DriverSpec,
    eps: &Rational,
    n_samples: usize,
    seed: u64,
) -> Result<PhiRatioReport> {
    let p = ConeParams::new(eps.clone())?;
    let maps = generate(spec, n_samples)?.maps(eps)?;
    let devs: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let t = sample_cone_element(sample_seed(seed, i), &p, true)?;
            let g = lambda_step(&maps[i], &t);
            let (before, _) = phi_pm(&t);
            let (after, _) = phi_pm(&g);
            if before.is_zero() {
                return Err(Error::Anomaly("sampled φ⁺ vanished".into()));
            }
            let predicted = Rational::from_i64(1) - maps[i].eps_a().clone() - maps[i].eps_b().clone();
            Ok((after / before - predicted).abs().to_f64())
        })
        .collect::<Result<_>>()?;
    let worst = devs.iter().copied().fold(0.0, f64::max);
    let e = eps.to_f64();
    Ok(PhiRatioReport {
        eps: e,
        k: p.k,
        n_samples,
        worst_deviation: worst,
        constant: worst / (e * e * e.ln().abs()),
        derived_bound: phi_ratio_bound(e, p.k),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitProductReport {
    pub eps: f64,
    pub n_steps: usize,
    /// `max_j |e_j| / (ε² |ln ε|)` where
    /// `φ⁺(Λ^{j+1} t) = (1 - ε(a_j+b_j) + e_j) φ⁺(Λ^j t)`.
    pub worst_constant: f64,
    /// `log |φ⁺(Λ^n t) / φ⁺(t)|`
    pub log_phi_ratio: f64,
    /// `Σ_j log(1 - ε(a_j + b_j))`
    pub log_product: f64,
    pub stayed_in_cone: bool,
}

/// Follows one `𝒞₀` element for `n_steps` exactly and records the per-step
/// defects of the product formula for `φ⁺`.
pub fn orbit_product_check(
    spec: &DriverSpec,
    eps: &Rational,
    n_steps: usize,
    seed: u64,
) -> Result<OrbitProductReport> {
    let p = ConeParams::new(eps.clone())?;
    let maps = generate(spec, n_steps)?.maps(eps)?;
    let mut t = sample_cone_element(seed, &p, true)?;
    let (phi0, _) = phi_pm(&t);
    let e = eps.to_f64();
    let scale = e * e * e.ln().abs();
    let mut worst: f64 = 0.0;
    let mut log_product = 0.0;
    let mut in_cone = true;
    for map in &maps {
        let g = lambda_step(map, &t);
        let (before, _) = phi_pm(&t);
        let (after, _) = phi_pm(&g);
        let predicted = Rational::from_i64(1) - map.eps_a().clone() - map.eps_b().clone();
        let defect = (after / before - predicted.clone()).abs().to_f64();
        worst = worst.max(defect / scale);
        log_product += predicted.to_f64().ln();
        let report = cone_check(&g, &p)?;
        in_cone &= report.in_cone() && report.support;
        t = g;
    }
    let (phin, _) = phi_pm(&t);
    Ok(OrbitProductReport {
        eps: e,
        n_steps,
        worst_constant: worst,
        log_phi_ratio: (phin / phi0).abs().to_f64().ln(),
        log_product,
        stayed_in_cone: in_cone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::{Signed, Zero};
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn k_examples() {
        assert_eq!(k_from_epsilon(&r(1, 16)).unwrap(), 1);
        assert_eq!(k_from_epsilon(&r(1, 1000)).unwrap(), 7);
        assert_eq!(k_from_epsilon(&0.001).unwrap(), 7);
        assert_eq!(k_from_epsilon(&r(1, 8)).unwrap(), 0);
        assert!(k_from_epsilon(&r(1, 4)).is_err());
        assert!(k_from_epsilon(&0.0).is_err());
    }

    proptest! {
        #[test]
        fn k_brackets_quarter(den in 5i64..100_000) {
            let eps = r(1, den);
            let k = k_from_epsilon(&eps).unwrap();
            let two_k = r(1 << k, 1);
            prop_assert!(two_k.clone() * eps.clone() < r(1, 4));
            prop_assert!(r(1, 4) <= two_k * r(2, 1) * eps);
        }
    }

    #[test]
    fn empty_holes_keep_tuple_in_slot_zero() {
        let p = ConeParams::with_k(r(0, 1), 3).unwrap();
        let f = PCDensity::from_steps(vec![r(-1, 1), r(1, 3), r(1, 1)], vec![r(2, 1), r(-1, 1)]).unwrap();
        let t = QuarantineTuple::from_density(f.clone(), 3);
        let g = lambda_step(&PairedTentMap::uncoupled(), &t);
        assert_eq!(g.k(), p.k);
        assert_eq!(g.components()[0], f.transfer(&PairedTentMap::uncoupled()));
        assert!(g.components()[1..].iter().all(|c| c.l1().is_zero()));
    }

    #[test]
    fn cone_check_rejects_wrong_length() {
        let p = ConeParams::new(r(1, 1000)).unwrap();
        let t = QuarantineTuple::from_density(PCDensity::constant(r(1, 1)), 2);
        assert!(cone_check(&t, &p).is_err());
    }

    #[test]
    fn k_zero_is_plain_transfer() {
        assert_eq!(k_from_epsilon(&r(1, 8)).unwrap(), 0);
        let map = PairedTentMap::new(r(1, 8), r(1, 8)).unwrap();
        let f = PCDensity::<Rational>::sign();
        let g = lambda_step(&map, &QuarantineTuple::from_density(f.clone(), 0));
        assert_eq!(g.components(), &[f.transfer(&map)]);
    }

    #[test]
    fn cone_check_examples() {
        let p = ConeParams::new(r(1, 1000)).unwrap();
        let c = QuarantineTuple::from_density(PCDensity::constant(r(3, 2)), p.k);
        assert!(cone_check(&c, &p).unwrap().in_cone());
        let s = QuarantineTuple::from_density(PCDensity::sign(), p.k);
        assert!(cone_check(&s, &p).unwrap().in_cone());
        let bump = PCDensity::indicator(r(0, 1), r(1, 2)).unwrap();
        let rep = cone_check(&QuarantineTuple::from_density(bump, p.k), &p).unwrap();
        assert!(!rep.c3);
        // var0c = 1 against 33 eps ||f0|| = 0.0165
        assert!((rep.c3_margin - (0.033 * 0.5 - 1.0) / 0.5).abs() < 1e-12);
        assert_eq!(rep.failures(), vec!["C3".to_string()]);
    }

    #[test]
    fn phi_examples() {
        let s = QuarantineTuple::from_density(PCDensity::<Rational>::sign(), 3);
        assert_eq!(phi_pm(&s), (r(1, 1), r(-1, 1)));
        let one = QuarantineTuple::from_density(PCDensity::<Rational>::constant(r(1, 1)), 3);
        assert_eq!(phi_pm(&one), (r(1, 1), r(1, 1)));
    }

    #[test]
    fn sampler_produces_cone_elements() {
        let p = ConeParams::new(r(1, 1000)).unwrap();
        for seed in 0..200 {
            let zero_mass = seed % 2 == 0;
            let t = sample_cone_element(seed, &p, zero_mass).unwrap();
            let rep = cone_check(&t, &p).unwrap();
            assert!(rep.in_cone() && rep.support, "seed {seed}: {:?}", rep.failures());
            let (pp, pm) = phi_pm(&t);
            if zero_mass {
                assert!((pp.clone() + pm.clone()).is_zero());
            }
            // lower half of the φ-vs-L¹ sandwich
            let l1 = t.f0().l1();
            let big = if pp.abs() > pm.abs() { pp.abs() } else { pm.abs() };
            assert!(big * r(3, 1) >= l1);
        }
    }

    #[test]
    fn phi_can_exceed_f0_norm_by_leaked_mass() {
        // f_0 entirely on J+ with positive leaked mass next to it
        let p = ConeParams::new(r(1, 1000)).unwrap();
        let f0 = PCDensity::two_level(r(0, 1), r(1, 1));
        let mut comps = vec![f0];
        for j in 1..=p.k {
            let piece = PCDensity::indicator(r(1, 1) - p.support_width(j), r(1, 1)).unwrap();
            let scale = p.c2_bound(j, &r(1, 1)) / piece.l1() * r(1, 2);
            comps.push(if j == 1 { PCDensity::zero() } else { piece.scaled(&scale) });
        }
        let t = QuarantineTuple::new(comps).unwrap();
        let rep = cone_check(&t, &p).unwrap();
        assert!(rep.in_cone() && rep.support);
        let (pp, _) = phi_pm(&t);
        assert!(pp > t.f0().l1());
        assert!(pp < t.f0().l1() * (r(1, 1) + r(4 * p.k as i64, 1000)));
    }

    #[test]
    fn step_conserves_mass_and_ledger() {
        let p = ConeParams::new(r(1, 1000)).unwrap();
        let map = PairedTentMap::new(r(1, 1000), r(3, 5000)).unwrap();
        for seed in 0..40 {
            let t = sample_cone_element(seed, &p, seed % 3 == 0).unwrap();
            let g = lambda_step(&map, &t);
            assert_eq!(g.phi().integral(), t.phi().integral());
            let (a, b) = phi_pm(&t);
            let (c, d) = phi_pm(&g);
            assert_eq!(a + b, c + d);
            assert!(g.l1_sum() <= t.l1_sum());
            assert!(mass_ledger_holds(&map, &t, &g));
        }
    }

    #[test]
    fn telescoping_identity() {
        let eps = r(1, 500);
        let p = ConeParams::new(eps.clone()).unwrap();
        let maps = generate(&DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 4), 12)
            .unwrap()
            .maps(&eps)
            .unwrap();
        let f = PCDensity::from_steps(
            vec![r(-1, 1), r(-2, 3), r(1, 5), r(5, 7), r(1, 1)],
            vec![r(1, 1), r(-2, 1), r(3, 1), r(1, 2)],
        )
        .unwrap();
        let mut t = QuarantineTuple::from_density(f.clone(), p.k);
        let mut lf = f;
        for m in &maps {
            t = lambda_step(m, &t);
            lf = lf.transfer(m);
        }
        assert!(t.phi().sub(&lf).l1().is_zero());
    }

    #[test]
    fn components_halve_variation_on_cone_samples() {
        let p = ConeParams::new(r(1, 2000)).unwrap();
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 13);
        let maps = generate(&spec, 30).unwrap().maps(&p.eps).unwrap();
        for (i, map) in maps.iter().enumerate() {
            let t = sample_cone_element(100 + i as u64, &p, false).unwrap();
            for fj in &t.components()[1..] {
                assert!(variation_halves(map, fj));
            }
        }
    }

    #[test]
    fn unconstrained_leaked_mass_breaks_invariance() {
        // f_k sitting on the fold point instead of near ±1 is allowed by
        // (C1)-(C3) but re-enters g_0 as a narrow bump and breaks (C3)
        let eps = r(1, 2500);
        let p = ConeParams::new(eps.clone()).unwrap();
        assert_eq!(p.k, 9);
        let map = PairedTentMap::new(eps.clone(), eps.clone()).unwrap();
        let wiggle = PCDensity::indicator(r(0, 1), r(1, 8))
            .unwrap()
            .sub(&PCDensity::indicator(r(1, 8), r(1, 4)).unwrap())
            .scaled(&r(1, 3));
        let c = r(95, 100) * r(33, 1) * eps.clone() * r(2, 1);
        let f0 = PCDensity::constant(r(1, 1)).axpy(&c, &wiggle);
        let w = r(1, 10_000);
        let fk = PCDensity::indicator(r(1, 2) - w.clone(), r(1, 2) + w)
            .unwrap()
            .scaled(&r(17, 2000));
        let mut comps = vec![f0];
        comps.extend((1..p.k).map(|_| PCDensity::zero()));
        comps.push(fk);
        let t = QuarantineTuple::new(comps).unwrap();
        let before = cone_check(&t, &p).unwrap();
        assert!(before.in_cone());
        assert!(!before.support);
        let after = cone_check(&lambda_step(&map, &t), &p).unwrap();
        assert!(!after.c3, "c3 margin {}", after.c3_margin);
    }

    #[test]
    fn invariance_small_run() {
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 2);
        let rep = invariance_trial(&spec, &r(1, 2500), 40, 17).unwrap();
        assert!(rep.passed(), "{:?}", rep.counterexamples.first().map(|c| &c.failed));
        assert!(rep.worst_g0_ratio >= rep.g0_ratio_bound);
        assert!(invariance_trial(&spec, &r(1, 100), 1, 0).is_err());
        let zero = invariance_trial(&DriverSpec::constant(1.0, 1.0), &r(0, 1), 10, 1).unwrap();
        assert!(zero.passed());
        assert_eq!(zero.k, 1);
    }

    #[test]
    fn phi_ratio_is_small() {
        let rep = phi_ratio_trial(&DriverSpec::constant(1.0, 1.0), &r(1, 1000), 30, 5).unwrap();
        let bound = rep.derived_bound.unwrap();
        assert!(rep.constant <= bound, "{} > {}", rep.constant, bound);
        assert!(rep.worst_deviation > 0.0);
    }

    #[test]
    fn orbit_product_tracks_prediction() {
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 6);
        let eps = r(1, 1000);
        let rep = orbit_product_check(&spec, &eps, 25, 3).unwrap();
        assert!(rep.stayed_in_cone);
        let bound = phi_ratio_bound(1e-3, 7).unwrap();
        assert!(rep.worst_constant <= bound);
        let slack = 25.0 * bound * 1e-6 * (1e-3f64).ln().abs() * 1.1;
        assert!((rep.log_phi_ratio - rep.log_product).abs() <= slack);
    }
}
