//! Lyapunov-spectrum estimators for the transfer-operator cocycle
//! `L^{(n)} = L_{σ^{n-1}ω} ∘ … ∘ L_ω`.
//!
//! Every estimator pushes the invariant-density candidate `ρ = 1/2` along
//! the same orbit and removes the `ρ`-component from zero-mass pushes. In
//! floating point the mass of a pushed zero-mass function is only zero up to
//! round-off, and that error lives in the non-decaying direction, so without
//! the projection it overtakes a decaying signal after a few hundred steps.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::densities::{BVNormReport, PCDensity};
use crate::driving::{generate_range, DriverSpec};
use crate::error::{Error, Result};
use crate::interval_maps::PairedTentMap;
use crate::quarantine::k_from_epsilon;
use crate::ulam::{build_ulam, check_resolution, discretize, lift, UlamMatrix};

pub const DEFAULT_REORTHO_PERIOD: usize = 32;
pub const DEFAULT_COARSEN_TOL: f64 = 1e-14;
pub const JACKKNIFE_BLOCKS: usize = 10;
const MAX_QR_VECTORS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Ulam { n_bins: usize },
    /// Exact pushforward of step functions, coarsened with tolerance
    /// `coarsen_tol · ||f||_∞` after every step.
    ExactPc { coarsen_tol: f64 },
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Ulam { n_bins } => write!(f, "ulam({n_bins})"),
            BackendKind::ExactPc { coarsen_tol } => write!(f, "exact({coarsen_tol:e})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CocycleRun {
    pub spec: DriverSpec,
    pub eps: f64,
    pub n_steps: usize,
    pub backend: BackendKind,
    /// Renormalization period of the `λ₂` push.
    pub reortho_period: usize,
    /// Re-deflation period of the `λ₃` push and re-orthonormalization
    /// period of the QR iteration.
    pub deflation_period: usize,
    /// Leading steps excluded from growth rates.
    pub burn_in: usize,
}

impl CocycleRun {
    /// Defaults: renormalize every 32 steps, re-deflate every step, discard
    /// the first tenth of the orbit as transient.
    pub fn new(spec: DriverSpec, eps: f64, n_steps: usize, backend: BackendKind) -> Self {
        CocycleRun {
            spec,
            eps,
            n_steps,
            backend,
            reortho_period: DEFAULT_REORTHO_PERIOD,
            deflation_period: 1,
            burn_in: n_steps / 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::Config(format!("eps must lie in [0,1], got {}", self.eps)));
        }
        if self.reortho_period == 0 || self.deflation_period == 0 {
            return Err(Error::Config("renormalization periods must be positive".into()));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::Config("burn_in must be shorter than the run".into()));
        }
        if let BackendKind::Ulam { n_bins } = self.backend {
            if n_bins < 2 || n_bins % 2 != 0 {
                return Err(Error::Config(format!("n_bins must be even and >= 2, got {n_bins}")));
            }
            check_resolution(n_bins, self.eps);
        }
        self.spec.validate()
    }

    /// Fibre maps for orbit indices `start..end`.
    pub fn maps(&self, start: i64, end: i64) -> Result<Vec<PairedTentMap<f64>>> {
        generate_range(&self.spec, start, end)?.maps(&self.eps)
    }
}

/// A representation of densities on which the cocycle can act.
pub trait Backend {
    type State: Clone;
    fn load(&self, f: &PCDensity<f64>) -> Result<Self::State>;
    fn density(&self, s: &Self::State) -> Result<PCDensity<f64>>;
    fn push(&mut self, map: &PairedTentMap<f64>, s: &Self::State) -> Result<Self::State>;
    fn integral(&self, s: &Self::State) -> f64;
    fn integral_plus(&self, s: &Self::State) -> f64;
    fn bv(&self, s: &Self::State) -> BVNormReport<f64>;
    /// `s += c * other`
    fn axpy(&self, s: &mut Self::State, c: f64, other: &Self::State);
    fn scale(&self, s: &mut Self::State, c: f64);
}

/// Ulam matrices on `n` bins; states are bin-mass vectors.
pub struct UlamBackend {
    n: usize,
    cache: Option<((u64, u64), UlamMatrix<f64>)>,
}

impl UlamBackend {
    pub fn new(n: usize) -> Self {
        UlamBackend { n, cache: None }
    }

    pub fn matrix(&mut self, map: &PairedTentMap<f64>) -> Result<&UlamMatrix<f64>> {
        let key = (map.eps_a().to_bits(), map.eps_b().to_bits());
        if self.cache.as_ref().map(|c| c.0) != Some(key) {
            self.cache = Some((key, build_ulam(map, self.n)?));
        }
        Ok(&self.cache.as_ref().expect("just filled").1)
    }
}

impl Backend for UlamBackend {
    type State = Vec<f64>;

    fn load(&self, f: &PCDensity<f64>) -> Result<Vec<f64>> {
        discretize(f, self.n)
    }

    fn density(&self, s: &Vec<f64>) -> Result<PCDensity<f64>> {
        lift(s, self.n)
    }

    fn push(&mut self, map: &PairedTentMap<f64>, s: &Vec<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; s.len()];
        self.matrix(map)?.apply_into(s, &mut out);
        Ok(out)
    }

    fn integral(&self, s: &Vec<f64>) -> f64 {
        s.iter().sum()
    }

    fn integral_plus(&self, s: &Vec<f64>) -> f64 {
        s[self.n / 2..].iter().sum()
    }

    fn bv(&self, s: &Vec<f64>) -> BVNormReport<f64> {
        let h = self.n as f64 / 2.0;
        let l1 = s.iter().map(|m| m.abs()).sum::<f64>();
        let var0c = (1..self.n)
            .filter(|&i| i != self.n / 2)
            .map(|i| (s[i] - s[i - 1]).abs() * h)
            .sum::<f64>();
        BVNormReport { l1, var0c, bv: l1.max(var0c) }
    }

    fn axpy(&self, s: &mut Vec<f64>, c: f64, other: &Vec<f64>) {
        s.iter_mut().zip(other).for_each(|(x, y)| *x += c * y);
    }

    fn scale(&self, s: &mut Vec<f64>, c: f64) {
        s.iter_mut().for_each(|x| *x *= c);
    }
}

/// Exact pushforward of step functions with relative coarsening.
pub struct ExactPcBackend {
    tol: f64,
}

impl ExactPcBackend {
    pub fn new(tol: f64) -> Self {
        ExactPcBackend { tol }
    }

    fn tidy(&self, f: PCDensity<f64>) -> PCDensity<f64> {
        let t = self.tol * f.sup_norm();
        f.coarsen(&t)
    }
}

impl Backend for ExactPcBackend {
    type State = PCDensity<f64>;

    fn load(&self, f: &PCDensity<f64>) -> Result<PCDensity<f64>> {
        Ok(f.clone())
    }

    fn density(&self, s: &PCDensity<f64>) -> Result<PCDensity<f64>> {
        Ok(s.clone())
    }

    fn push(&mut self, map: &PairedTentMap<f64>, s: &PCDensity<f64>) -> Result<PCDensity<f64>> {
        Ok(self.tidy(s.transfer(map)))
    }

    fn integral(&self, s: &PCDensity<f64>) -> f64 {
        s.integral()
    }

    fn integral_plus(&self, s: &PCDensity<f64>) -> f64 {
        s.integral_plus()
    }

    fn bv(&self, s: &PCDensity<f64>) -> BVNormReport<f64> {
        s.bv_norm()
    }

    fn axpy(&self, s: &mut PCDensity<f64>, c: f64, other: &PCDensity<f64>) {
        *s = self.tidy(s.axpy(&c, other));
    }

    fn scale(&self, s: &mut PCDensity<f64>, c: f64) {
        *s = s.scaled(&c);
    }
}

macro_rules! with_backend {
    ($run:expr, $b:ident => $body:expr) => {
        match $run.backend {
            BackendKind::Ulam { n_bins } => {
                let mut $b = UlamBackend::new(n_bins);
                $body
            }
            BackendKind::ExactPc { coarsen_tol } => {
                let mut $b = ExactPcBackend::new(coarsen_tol);
                $body
            }
        }
    };
}

/// Jackknife standard error of a growth rate from `(steps, log growth)`
/// increments, over `blocks` contiguous groups.
pub fn jackknife_rate(increments: &[(usize, f64)], blocks: usize) -> f64 {
    let b = blocks.min(increments.len());
    if b < 2 {
        return f64::NAN;
    }
    let total_steps: usize = increments.iter().map(|x| x.0).sum();
    let total_log: f64 = increments.iter().map(|x| x.1).sum();
    let per = increments.len() as f64 / b as f64;
    let mut thetas = Vec::with_capacity(b);
    for i in 0..b {
        let lo = (i as f64 * per).round() as usize;
        let hi = ((i + 1) as f64 * per).round() as usize;
        let steps: usize = increments[lo..hi].iter().map(|x| x.0).sum();
        let log: f64 = increments[lo..hi].iter().map(|x| x.1).sum();
        thetas.push((total_log - log) / (total_steps - steps) as f64);
    }
    let mean = thetas.iter().sum::<f64>() / b as f64;
    let ss: f64 = thetas.iter().map(|t| (t - mean) * (t - mean)).sum();
    ((b as f64 - 1.0) / b as f64 * ss).sqrt()
}

fn half_one() -> PCDensity<f64> {
    PCDensity::constant(0.5)
}

/// Removes the mass of `s` along `rho` (which carries mass `∫rho`).
fn project_mass<B: Backend>(b: &B, s: &mut B::State, rho: &B::State) {
    let m = b.integral(s);
    if m != 0.0 {
        b.axpy(s, -m / b.integral(rho), rho);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lambda1Estimate {
    /// `log(||L^n f|| / ||L^b f||) / (n - b)` with `b` the burn-in.
    pub value: f64,
    /// `log(||L^n f|| / ||f||) / n`.
    pub literal: f64,
    pub error_bar: f64,
    pub burn_in: usize,
}

fn lambda1_with<B: Backend>(run: &CocycleRun, b: &mut B, f: &PCDensity<f64>) -> Result<Lambda1Estimate> {
    let maps = run.maps(0, run.n_steps as i64)?;
    let mut s = b.load(f)?;
    let log_norm = |b: &B, s: &B::State| b.bv(s).bv.ln();
    let start = log_norm(b, &s);
    let mut at_burn = start;
    let mut marks = Vec::new();
    let block = ((run.n_steps - run.burn_in) / JACKKNIFE_BLOCKS).max(1);
    let mut last = (run.burn_in, start);
    for (j, map) in maps.iter().enumerate() {
        s = b.push(map, &s)?;
        let step = j + 1;
        if step == run.burn_in {
            at_burn = log_norm(b, &s);
            last = (step, at_burn);
        }
        if step > run.burn_in && ((step - run.burn_in) % block == 0 || step == run.n_steps) {
            let ln = log_norm(b, &s);
            marks.push((step - last.0, ln - last.1));
            last = (step, ln);
        }
    }
    let end = log_norm(b, &s);
    if !end.is_finite() {
        return Err(Error::Anomaly("lambda_1 push lost all mass".into()));
    }
    Ok(Lambda1Estimate {
        value: (end - at_burn) / (run.n_steps - run.burn_in) as f64,
        literal: (end - start) / run.n_steps as f64,
        error_bar: jackknife_rate(&marks, JACKKNIFE_BLOCKS),
        burn_in: run.burn_in,
    })
}

/// Top exponent from the push of `1/2`.
pub fn lambda1_estimate(run: &CocycleRun) -> Result<Lambda1Estimate> {
    lambda1_estimate_for(run, &half_one())
}

/// Top exponent from the push of an arbitrary `f` (meaningful when `∫f ≠ 0`).
pub fn lambda1_estimate_for(run: &CocycleRun, f: &PCDensity<f64>) -> Result<Lambda1Estimate> {
    run.validate()?;
    with_backend!(run, b => lambda1_with(run, &mut b, f))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lambda2Estimate {
    /// `(1/n) Σ log |∫_{J+} L^{(j+1)} sign / ∫_{J+} L^{(j)} sign|`
    pub value: f64,
    pub error_bar: f64,
    /// `(1/n) log ||L^{(n)} sign||_BV` on the same orbit.
    pub bv_rate: f64,
    /// Log growth per renormalization block.
    pub block_logs: Vec<f64>,
    pub renormalizations: usize,
}

fn lambda2_with<B: Backend>(run: &CocycleRun, b: &mut B) -> Result<Lambda2Estimate> {
    let maps = run.maps(0, run.n_steps as i64)?;
    let sign = PCDensity::sign();
    let mut s = b.load(&sign)?;
    let mut rho = b.load(&half_one())?;
    let mut incs: Vec<(usize, f64)> = Vec::new();
    let mut since = 0;
    for (j, map) in maps.iter().enumerate() {
        s = b.push(map, &s)?;
        rho = b.push(map, &rho)?;
        since += 1;
        if since == run.reortho_period || j + 1 == run.n_steps {
            project_mass(b, &mut s, &rho);
            let c = b.integral_plus(&s);
            if c == 0.0 || !c.is_finite() {
                return Err(Error::Anomaly(format!("∫_J+ of the sign push vanished at step {}", j + 1)));
            }
            incs.push((since, c.abs().ln()));
            b.scale(&mut s, 1.0 / c);
            since = 0;
        }
    }
    let total: f64 = incs.iter().map(|x| x.1).sum();
    let bv_end = b.bv(&s).bv.ln();
    let bv_start = sign.bv_norm().bv.ln();
    Ok(Lambda2Estimate {
        value: total / run.n_steps as f64,
        error_bar: jackknife_rate(&incs, JACKKNIFE_BLOCKS),
        bv_rate: (total + bv_end - bv_start) / run.n_steps as f64,
        block_logs: incs.iter().map(|x| x.1).collect(),
        renormalizations: incs.len(),
    })
}

/// Second exponent from the push of `sign`.
pub fn lambda2_estimate(run: &CocycleRun) -> Result<Lambda2Estimate> {
    run.validate()?;
    with_backend!(run, b => lambda2_with(run, &mut b))
}

fn psi_with<B: Backend>(
    run: &CocycleRun,
    b: &mut B,
    f: &PCDensity<f64>,
    checkpoints: &[usize],
) -> Result<Vec<f64>> {
    let n_max = checkpoints.iter().copied().max().unwrap_or(0);
    let maps = run.maps(0, n_max as i64)?;
    let shifted = f.axpy(&(-0.5 * f.integral()), &PCDensity::constant(1.0));
    let mut u = b.load(&shifted)?;
    let mut s = b.load(&PCDensity::sign())?;
    let mut rho = b.load(&half_one())?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    let mut sorted: Vec<(usize, usize)> = checkpoints.iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
    sorted.sort_unstable();
    let mut values = vec![f64::NAN; checkpoints.len()];
    let ratio = |b: &B, u: &B::State, s: &B::State| -> Result<f64> {
        let d = b.integral_plus(s);
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Anomaly("ψ denominator vanished".into()));
        }
        Ok(b.integral_plus(u) / d)
    };
    while next < sorted.len() && sorted[next].0 == 0 {
        values[sorted[next].1] = ratio(b, &u, &s)?;
        next += 1;
    }
    let mut since = 0;
    for (j, map) in maps.iter().enumerate() {
        u = b.push(map, &u)?;
        s = b.push(map, &s)?;
        rho = b.push(map, &rho)?;
        project_mass(b, &mut u, &rho);
        project_mass(b, &mut s, &rho);
        since += 1;
        if since == run.reortho_period {
            let c = b.integral_plus(&s);
            if c != 0.0 && c.is_finite() {
                b.scale(&mut u, 1.0 / c);
                b.scale(&mut s, 1.0 / c);
            }
            since = 0;
        }
        while next < sorted.len() && sorted[next].0 == j + 1 {
            values[sorted[next].1] = ratio(b, &u, &s)?;
            next += 1;
        }
    }
    out.extend(values);
    Ok(out)
}

/// `ψ_n(f) = ∫_{J+} L^{(n)}(f - ½∫f) / ∫_{J+} L^{(n)} sign` at each requested `n`.
pub fn psi_sequence(run: &CocycleRun, f: &PCDensity<f64>, checkpoints: &[usize]) -> Result<Vec<f64>> {
    run.validate()?;
    with_backend!(run, b => psi_with(run, &mut b, f, checkpoints))
}

pub fn psi_n(run: &CocycleRun, f: &PCDensity<f64>, n: usize) -> Result<f64> {
    Ok(psi_sequence(run, f, &[n])?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiStar {
    pub value: f64,
    /// Checkpoint spacing (`k` from `eps`, at least 1).
    pub k: usize,
    /// `ψ_{mk}` for `m = 0, 1, …`.
    pub values: Vec<f64>,
    /// `|ψ_{(m+1)k} - ψ_{mk}|`.
    pub differences: Vec<f64>,
    /// Geometric-mean contraction of successive differences above the
    /// round-off floor.
    pub ratio: f64,
}

/// Iterates `ψ` at multiples of `k` until successive values differ by less
/// than `tol`.
pub fn psi_star(run: &CocycleRun, f: &PCDensity<f64>, tol: f64, max_blocks: usize) -> Result<PsiStar> {
    if tol <= 0.0 {
        return Err(Error::Config("psi_star tolerance must be positive".into()));
    }
    let k = if run.eps > 0.0 && run.eps < 0.25 { k_from_epsilon(&run.eps)?.max(1) } else { 1 };
    let checkpoints: Vec<usize> = (0..=max_blocks).map(|m| m * k).collect();
    let values = psi_sequence(run, f, &checkpoints)?;
    let mut differences = Vec::new();
    for m in 1..values.len() {
        let d = (values[m] - values[m - 1]).abs();
        differences.push(d);
        if d < tol {
            let floor = 1e-13 * values[m].abs().max(1.0);
            let useful: Vec<f64> = differences.iter().copied().take_while(|&x| x > floor).collect();
            let ratio = if useful.len() >= 2 {
                (useful[useful.len() - 1] / useful[0]).powf(1.0 / (useful.len() - 1) as f64)
            } else {
                0.0
            };
            return Ok(PsiStar { value: values[m], k, values: values[..=m].to_vec(), differences, ratio });
        }
    }
    Err(Error::Anomaly(format!(
        "ψ did not settle to {tol:e} within {max_blocks} blocks of {k} steps"
    )))
}

/// A zero-mass test function with breakpoints away from dyadic rationals.
pub fn generic_test_density() -> PCDensity<f64> {
    PCDensity::new(
        vec![-1.0, -0.73, -0.41, -0.12, 0.0, 0.17, 0.38, 0.66, 0.91, 1.0],
        vec![0.3, -1.2, 0.8, 0.1, 1.1, -0.4, 0.9, -0.7, 0.2],
    )
    .expect("valid grid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayEstimate {
    /// BV-norm log-growth rate after the burn-in.
    pub value: f64,
    pub literal: f64,
    pub error_bar: f64,
    pub psi_star: Option<f64>,
    /// Largest `|∫_{J+} f| / ||f||_BV` seen after a deflation.
    pub deflation_health: f64,
    /// Step at which the push became exactly zero; rates then cover the
    /// steps before it.
    pub vanished_at: Option<usize>,
}

fn decay_with<B: Backend>(run: &CocycleRun, b: &mut B, f: &PCDensity<f64>, deflate: bool) -> Result<DecayEstimate> {
    let maps = run.maps(0, run.n_steps as i64)?;
    let mut g = b.load(f)?;
    let mut s = b.load(&PCDensity::sign())?;
    let mut rho = b.load(&half_one())?;
    let mut incs: Vec<(usize, f64)> = Vec::new();
    let mut log_total = 0.0;
    let mut log_burn = 0.0;
    let mut health: f64 = 0.0;
    let mut vanished_at = None;
    let mut completed = 0;
    let start = b.bv(&g).bv;
    if start == 0.0 {
        return Err(Error::Domain("decay estimate needs a nonzero start".into()));
    }
    b.scale(&mut g, 1.0 / start);
    let mut since = 0;
    let mut acc_steps = 0;
    let mut acc_log = 0.0;
    for (j, map) in maps.iter().enumerate() {
        g = b.push(map, &g)?;
        since += 1;
        s = b.push(map, &s)?;
        rho = b.push(map, &rho)?;
        if since == run.deflation_period {
            project_mass(b, &mut s, &rho);
            project_mass(b, &mut g, &rho);
            let sp = b.integral_plus(&s);
            if deflate {
                let c = -b.integral_plus(&g) / sp;
                b.axpy(&mut g, c, &s);
            }
            b.scale(&mut s, 1.0 / sp);
            since = 0;
        }
        let norm = b.bv(&g).bv;
        if norm == 0.0 {
            vanished_at = Some(j + 1);
            break;
        }
        if !norm.is_finite() {
            return Err(Error::Anomaly(format!("decaying push blew up at step {}", j + 1)));
        }
        if deflate && since == 0 {
            health = health.max(b.integral_plus(&g).abs() / norm);
        }
        let l = norm.ln();
        b.scale(&mut g, 1.0 / norm);
        log_total += l;
        completed = j + 1;
        if j + 1 == run.burn_in {
            log_burn = log_total;
        }
        if j + 1 > run.burn_in {
            acc_steps += 1;
            acc_log += l;
            if acc_steps == run.deflation_period.max(1) * 8 || j + 1 == run.n_steps {
                incs.push((acc_steps, acc_log));
                acc_steps = 0;
                acc_log = 0.0;
            }
        }
    }
    if completed == 0 {
        return Err(Error::Anomaly("decaying push vanished on the first step".into()));
    }
    if acc_steps > 0 {
        incs.push((acc_steps, acc_log));
    }
    let value = if completed > run.burn_in {
        (log_total - log_burn) / (completed - run.burn_in) as f64
    } else {
        log_total / completed as f64
    };
    Ok(DecayEstimate {
        value,
        literal: log_total / completed as f64,
        vanished_at,
        error_bar: jackknife_rate(&incs, JACKKNIFE_BLOCKS),
        psi_star: None,
        deflation_health: health,
    })
}

/// BV-norm growth rate of `f` pushed along the orbit. Mass is projected out
/// every `deflation_period` steps; with `deflate` the component along the
/// running sign push is removed as well.
pub fn bv_growth_rate(run: &CocycleRun, f: &PCDensity<f64>, deflate: bool) -> Result<DecayEstimate> {
    run.validate()?;
    with_backend!(run, b => decay_with(run, &mut b, f, deflate))
}

/// Third exponent: deflate `f_raw` by mass and `ψ*`, then track its BV growth.
pub fn lambda3_estimate_for(run: &CocycleRun, f_raw: &PCDensity<f64>) -> Result<DecayEstimate> {
    run.validate()?;
    let ps = psi_star(run, f_raw, 1e-13, 400)?;
    let f = f_raw
        .axpy(&(-0.5 * f_raw.integral()), &PCDensity::constant(1.0))
        .axpy(&(-ps.value), &PCDensity::sign());
    let mut est = bv_growth_rate(run, &f, true)?;
    est.psi_star = Some(ps.value);
    Ok(est)
}

pub fn lambda3_estimate(run: &CocycleRun) -> Result<DecayEstimate> {
    lambda3_estimate_for(run, &generic_test_density())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub eps: f64,
    pub driver: String,
    pub seed: u64,
    pub backend: String,
    pub n_steps: usize,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: Option<f64>,
    pub error_bars: Vec<f64>,
    /// Per-block log growth of the leading direction of each exponent.
    pub block_logs: Vec<Vec<f64>>,
    pub renormalizations: usize,
    pub flags: Vec<String>,
}

/// QR iteration of `q` vectors through the Ulam matrix chain.
pub fn qr_spectrum(run: &CocycleRun, q: usize) -> Result<SpectrumReport> {
    run.validate()?;
    let BackendKind::Ulam { n_bins } = run.backend else {
        return Err(Error::Config("qr_spectrum needs the ulam backend".into()));
    };
    if q == 0 || q > MAX_QR_VECTORS || q > n_bins {
        return Err(Error::Config(format!("qr_spectrum needs 1 <= q <= {MAX_QR_VECTORS}")));
    }
    let mut b = UlamBackend::new(n_bins);
    let maps = run.maps(0, run.n_steps as i64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.spec.seed ^ 0x51_7cc1_b727_220a);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(q);
    vs.push(b.load(&half_one())?);
    if q > 1 {
        vs.push(b.load(&PCDensity::sign())?);
    }
    while vs.len() < q {
        vs.push((0..n_bins).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let mut flags = Vec::new();
    let mut active = q;
    gram_schmidt(&mut vs, &mut active, &mut flags);
    let mut logs = vec![0.0; q];
    let mut incs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); q];
    let mut acc = vec![0.0; q];
    let mut acc_steps = 0;
    let mut since = 0;
    let mut renorms = 0;
    let block = ((run.n_steps - run.burn_in) / (JACKKNIFE_BLOCKS * 4)).max(1);
    for (j, map) in maps.iter().enumerate() {
        let m = b.matrix(map)?;
        for v in vs.iter_mut().take(active) {
            let mut out = vec![0.0; n_bins];
            m.apply_into(v, &mut out);
            *v = out;
        }
        since += 1;
        if since == run.deflation_period || j + 1 == run.n_steps {
            let diag = gram_schmidt(&mut vs, &mut active, &mut flags);
            renorms += 1;
            since = 0;
            if j + 1 > run.burn_in {
                for (i, r) in diag.iter().enumerate().take(active) {
                    logs[i] += r.ln();
                    acc[i] += r.ln();
                }
            }
        }
        if j + 1 > run.burn_in {
            acc_steps += 1;
            if (acc_steps >= block && since == 0) || j + 1 == run.n_steps {
                for i in 0..q {
                    incs[i].push((acc_steps, acc[i]));
                    acc[i] = 0.0;
                }
                acc_steps = 0;
            }
        }
    }
    let span = (run.n_steps - run.burn_in) as f64;
    let mut exps: Vec<f64> = logs.iter().take(active).map(|l| l / span).collect();
    let mut order: Vec<usize> = (0..exps.len()).collect();
    order.sort_by(|&x, &y| exps[y].total_cmp(&exps[x]));
    let bars: Vec<f64> = order.iter().map(|&i| jackknife_rate(&incs[i], JACKKNIFE_BLOCKS)).collect();
    let block_logs: Vec<Vec<f64>> = order.iter().map(|&i| incs[i].iter().map(|x| x.1).collect()).collect();
    exps = order.iter().map(|&i| exps[i]).collect();
    Ok(SpectrumReport {
        eps: run.eps,
        driver: run.spec.to_string(),
        seed: run.spec.seed,
        backend: run.backend.to_string(),
        n_steps: run.n_steps,
        lambda_1: exps[0],
        lambda_2: exps.get(1).copied().unwrap_or(f64::NAN),
        lambda_3: exps.get(2).copied(),
        error_bars: bars,
        block_logs,
        renormalizations: renorms,
        flags,
    })
}

/// Modified Gram–Schmidt on the first `active` vectors; returns the
/// diagonal of the triangular factor. Collapsing vectors shrink `active`.
fn gram_schmidt(vs: &mut [Vec<f64>], active: &mut usize, flags: &mut Vec<String>) -> Vec<f64> {
    let mut diag = Vec::with_capacity(*active);
    for i in 0..*active {
        for j in 0..i {
            let (head, tail) = vs.split_at_mut(i);
            let d: f64 = head[j].iter().zip(tail[0].iter()).map(|(a, b)| a * b).sum();
            tail[0].iter_mut().zip(&head[j]).for_each(|(x, y)| *x -= d * y);
        }
        let r = vs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(r > 1e-300) || !r.is_finite() {
            flags.push(format!("rank collapse: keeping {i} of {} vectors", *active));
            warn!("QR rank collapse; reducing to {i} vectors");
            *active = i;
            break;
        }
        vs[i].iter_mut().for_each(|x| *x /= r);
        diag.push(r);
    }
    diag
}

/// The individual estimates behind a [`SpectrumReport`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumDetail {
    pub lambda1: Lambda1Estimate,
    pub lambda2: Lambda2Estimate,
    pub lambda3: Option<DecayEstimate>,
}

/// Leading three exponents from the `1/2`, `sign` and deflated pushes.
pub fn spectrum(run: &CocycleRun) -> Result<(SpectrumReport, SpectrumDetail)> {
    let lambda1 = lambda1_estimate(run)?;
    let lambda2 = lambda2_estimate(run)?;
    let mut flags = Vec::new();
    let lambda3 = match lambda3_estimate(run) {
        Ok(e) => Some(e),
        Err(Error::Anomaly(msg)) => {
            flags.push(format!("lambda_3: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let detail = SpectrumDetail { lambda1, lambda2, lambda3 };
    Ok((spectrum_from(run, &detail, flags), detail))
}

fn spectrum_from(run: &CocycleRun, d: &SpectrumDetail, mut flags: Vec<String>) -> SpectrumReport {
    if (d.lambda2.value - d.lambda2.bv_rate).abs() > 1e-3 {
        flags.push(format!(
            "sign-push rates disagree: phi rate {:.6e} vs BV rate {:.6e}",
            d.lambda2.value, d.lambda2.bv_rate
        ));
    }
    let mut lambdas = vec![d.lambda1.value, d.lambda2.value];
    let mut bars = vec![d.lambda1.error_bar, d.lambda2.error_bar];
    if let Some(e) = &d.lambda3 {
        lambdas.push(e.value);
        bars.push(e.error_bar);
    }
    let mut idx: Vec<usize> = (0..lambdas.len()).collect();
    idx.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    if idx.iter().enumerate().any(|(i, &j)| i != j) {
        flags.push("estimates were reordered to keep lambda_1 >= lambda_2 >= lambda_3".into());
    }
    let sorted: Vec<f64> = idx.iter().map(|&i| lambdas[i]).collect();
    SpectrumReport {
        eps: run.eps,
        driver: run.spec.to_string(),
        seed: run.spec.seed,
        backend: run.backend.to_string(),
        n_steps: run.n_steps,
        lambda_1: sorted[0],
        lambda_2: sorted[1],
        lambda_3: sorted.get(2).copied(),
        error_bars: idx.iter().map(|&i| bars[i]).collect(),
        block_logs: vec![Vec::new(), d.lambda2.block_logs.clone()],
        renormalizations: d.lambda2.renormalizations,
        flags,
    }
}

fn pullback_with<B: Backend>(run: &CocycleRun, b: &mut B, depth: usize) -> Result<PCDensity<f64>> {
    let mut s = b.load(&PCDensity::sign())?;
    if depth > 0 {
        let maps = run.maps(-(depth as i64), 0)?;
        let mut rho = b.load(&half_one())?;
        for map in &maps {
            s = b.push(map, &s)?;
            rho = b.push(map, &rho)?;
            project_mass(b, &mut s, &rho);
            let c = b.integral_plus(&s);
            if c == 0.0 || !c.is_finite() {
                return Err(Error::Anomaly("pulled-back sign lost its J+ mass".into()));
            }
            b.scale(&mut s, 1.0 / c);
        }
    }
    b.density(&s)
}

/// `L^{(n)}_{σ^{-n}ω} sign`, normalized to `∫_{J+} = 1`.
pub fn oseledets_vector_2(run: &CocycleRun, pullback_depth: usize) -> Result<PCDensity<f64>> {
    run.validate()?;
    with_backend!(run, b => pullback_with(run, &mut b, pullback_depth))
}

/// L¹ distances between pullbacks at consecutive `depths`.
pub fn oseledets_cauchy(run: &CocycleRun, depths: &[usize]) -> Result<Vec<f64>> {
    let vs: Vec<PCDensity<f64>> = depths.iter().map(|&d| oseledets_vector_2(run, d)).collect::<Result<_>>()?;
    Ok(vs.windows(2).map(|w| w[1].sub(&w[0]).l1()).collect())
}
