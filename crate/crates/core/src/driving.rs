//! Ergodic driving systems for the leakage pair `(a_j, b_j)` and the
//! two-state reference cocycle obtained by lumping each half into one bin.
//!
//! Orbits are indexed by `j ∈ ℤ`. Forward samples (`j ≥ 0`) and past samples
//! (`j < 0`) come from separate deterministic streams of the same seed, so a
//! window can be regenerated bit-for-bit.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval_maps::PairedTentMap;
use crate::scalar::Scalar;

const ROW_SUM_TOL: f64 = 1e-12;
const QUADRATURE_NODES: usize = 256;

/// `c0 + Σ_k (cos_k cos 2πkθ + sin_k sin 2πkθ)` on the circle `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrigPoly {
    pub c0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn eval(&self, theta: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let mut v = self.c0;
        for (k, c) in self.cos.iter().enumerate() {
            v += c * (tau * (k + 1) as f64 * theta).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            v += s * (tau * (k + 1) as f64 * theta).sin();
        }
        v
    }

    fn amplitude(&self) -> f64 {
        self.cos.iter().chain(&self.sin).map(|c| c.abs()).sum()
    }

    fn is_zero(&self) -> bool {
        self.c0 == 0.0 && self.amplitude() == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverKind {
    Constant { a: f64, b: f64 },
    IidUniform { a: (f64, f64), b: (f64, f64) },
    /// Stationary chain on `states.len()` states; state `i` emits `states[i]`.
    FiniteMarkov { transition: Vec<Vec<f64>>, states: Vec<(f64, f64)> },
    /// `θ_j = θ0 + jα mod 1`, emitting `(a(θ_j), b(θ_j))`.
    Rotation { alpha: f64, theta0: f64, a: TrigPoly, b: TrigPoly },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriverSpec {
    #[serde(flatten)]
    pub kind: DriverKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriverOrbit {
    /// Index of `samples[0]` along the two-sided orbit.
    pub start: i64,
    pub samples: Vec<(f64, f64)>,
}

impl DriverOrbit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fibre maps `T_{εa_j, εb_j}` along the orbit.
    pub fn maps<S: Scalar>(&self, eps: &S) -> Result<Vec<PairedTentMap<S>>> {
        self.samples
            .iter()
            .map(|&(a, b)| {
                PairedTentMap::new(eps.clone() * S::from_f64(a), eps.clone() * S::from_f64(b))
            })
            .collect()
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl DriverSpec {
    pub fn constant(a: f64, b: f64) -> Self {
        DriverSpec { kind: DriverKind::Constant { a, b }, seed: 0 }
    }

    pub fn iid_uniform(a: (f64, f64), b: (f64, f64), seed: u64) -> Self {
        DriverSpec { kind: DriverKind::IidUniform { a, b }, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("driver {}: {msg}", self)));
        match &self.kind {
            DriverKind::Constant { a, b } => {
                if !in_unit(*a) || !in_unit(*b) {
                    return bad("values must lie in [0,1]");
                }
                if *a == 0.0 || *b == 0.0 {
                    return bad("a and b must not vanish identically");
                }
            }
            DriverKind::IidUniform { a, b } => {
                for r in [a, b] {
                    if !in_unit(r.0) || !in_unit(r.1) || r.0 > r.1 {
                        return bad("ranges must be ordered subintervals of [0,1]");
                    }
                }
                if a.1 == 0.0 || b.1 == 0.0 {
                    return bad("a and b must not vanish identically");
                }
            }
            DriverKind::FiniteMarkov { transition, states } => {
                let n = states.len();
                if n == 0 || transition.len() != n || transition.iter().any(|r| r.len() != n) {
                    return bad("transition matrix must be square with one row per state");
                }
                for row in transition {
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return bad("transition probabilities must be nonnegative");
                    }
                    if (row.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
                        return bad("transition rows must sum to 1");
                    }
                }
                if states.iter().any(|(a, b)| !in_unit(*a) || !in_unit(*b)) {
                    return bad("state values must lie in [0,1]");
                }
                let pi = stationary_distribution(transition)?;
                let ea: f64 = pi.iter().zip(states).map(|(p, s)| p * s.0).sum();
                let eb: f64 = pi.iter().zip(states).map(|(p, s)| p * s.1).sum();
                if ea == 0.0 || eb == 0.0 {
                    return bad("a and b must not vanish identically");
                }
            }
            DriverKind::Rotation { alpha, theta0, a, b } => {
                if !alpha.is_finite() || !theta0.is_finite() {
                    return bad("alpha and theta0 must be finite");
                }
                for p in [a, b] {
                    if p.c0 - p.amplitude() < 0.0 || p.c0 + p.amplitude() > 1.0 {
                        return bad("trigonometric polynomial must stay within [0,1]");
                    }
                }
                if a.is_zero() || b.is_zero() {
                    return bad("a and b must not vanish identically");
                }
            }
        }
        Ok(())
    }

    /// Whether the orbit does not depend on the seed.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, DriverKind::Constant { .. } | DriverKind::Rotation { .. })
    }

    /// Parses `kind` or `kind:key=value;key=value`, e.g.
    /// `constant:a=1;b=1`, `iid_uniform:a=0,1;b=0,1`,
    /// `finite_markov:p=0.9,0.1/0.2,0.8;a=1,0;b=0,1`,
    /// `rotation:alpha=0.618;a=0.5,0.2;b=0.5,0,0.3`.
    /// Trigonometric coefficients are listed as `c0,cos1,sin1,cos2,sin2,...`.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let (kind, rest) = match text.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => (text.trim(), ""),
        };
        let mut params = std::collections::BTreeMap::new();
        for item in rest.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("driver parameter {item:?} lacks '='")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let list = |key: &str| -> Result<Option<Vec<f64>>> {
            params
                .get(key)
                .map(|v| {
                    v.split(',')
                        .map(|x| {
                            x.trim().parse::<f64>().map_err(|_| {
                                Error::Config(format!("driver parameter {key}: bad number {x:?}"))
                            })
                        })
                        .collect()
                })
                .transpose()
        };
        let pair = |key: &str, default: (f64, f64)| -> Result<(f64, f64)> {
            match list(key)? {
                None => Ok(default),
                Some(v) if v.len() == 2 => Ok((v[0], v[1])),
                Some(_) => Err(Error::Config(format!("driver parameter {key} needs two numbers"))),
            }
        };
        let scalar = |key: &str, default: f64| -> Result<f64> {
            match list(key)? {
                None => Ok(default),
                Some(v) if v.len() == 1 => Ok(v[0]),
                Some(_) => Err(Error::Config(format!("driver parameter {key} needs one number"))),
            }
        };
        let allowed: &[&str] = match kind {
            "constant" => &["a", "b"],
            "iid_uniform" => &["a", "b"],
            "finite_markov" => &["p", "a", "b"],
            "rotation" => &["alpha", "theta0", "a", "b"],
            other => return Err(Error::Config(format!("unknown driver kind {other:?}"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("driver {kind} has no parameter {k:?}")));
        }
        let kind = match kind {
            "constant" => DriverKind::Constant { a: scalar("a", 1.0)?, b: scalar("b", 1.0)? },
            "iid_uniform" => {
                DriverKind::IidUniform { a: pair("a", (0.0, 1.0))?, b: pair("b", (0.0, 1.0))? }
            }
            "finite_markov" => {
                let p = params
                    .get("p")
                    .ok_or_else(|| Error::Config("finite_markov needs p=<rows>".into()))?;
                let transition = p
                    .split('/')
                    .map(|row| {
                        row.split(',')
                            .map(|x| {
                                x.trim().parse::<f64>().map_err(|_| {
                                    Error::Config(format!("transition entry {x:?} is not a number"))
                                })
                            })
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let a = list("a")?.ok_or_else(|| Error::Config("finite_markov needs a=".into()))?;
                let b = list("b")?.ok_or_else(|| Error::Config("finite_markov needs b=".into()))?;
                if a.len() != b.len() {
                    return Err(Error::Config("finite_markov: a and b lengths differ".into()));
                }
                DriverKind::FiniteMarkov { transition, states: a.into_iter().zip(b).collect() }
            }
            _ => {
                let trig = |key: &str| -> Result<TrigPoly> {
                    let v = list(key)?.unwrap_or_else(|| vec![0.5]);
                    let (c0, rest) = v.split_first().expect("nonempty");
                    let cos = rest.iter().step_by(2).copied().collect();
                    let sin = rest.iter().skip(1).step_by(2).copied().collect();
                    Ok(TrigPoly { c0: *c0, cos, sin })
                };
                DriverKind::Rotation {
                    alpha: scalar("alpha", (5f64.sqrt() - 1.0) / 2.0)?,
                    theta0: scalar("theta0", 0.0)?,
                    a: trig("a")?,
                    b: trig("b")?,
                }
            }
        };
        let spec = DriverSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let trig = |p: &TrigPoly| {
            let mut v = vec![p.c0];
            for k in 0..p.cos.len().max(p.sin.len()) {
                v.push(p.cos.get(k).copied().unwrap_or(0.0));
                v.push(p.sin.get(k).copied().unwrap_or(0.0));
            }
            join(&v)
        };
        match &self.kind {
            DriverKind::Constant { a, b } => write!(f, "constant:a={a};b={b}"),
            DriverKind::IidUniform { a, b } => {
                write!(f, "iid_uniform:a={},{};b={},{}", a.0, a.1, b.0, b.1)
            }
            DriverKind::FiniteMarkov { transition, states } => {
                let p = transition.iter().map(|r| join(r)).collect::<Vec<_>>().join("/");
                let a: Vec<f64> = states.iter().map(|s| s.0).collect();
                let b: Vec<f64> = states.iter().map(|s| s.1).collect();
                write!(f, "finite_markov:p={p};a={};b={}", join(&a), join(&b))
            }
            DriverKind::Rotation { alpha, theta0, a, b } => {
                write!(f, "rotation:alpha={alpha};theta0={theta0};a={};b={}", trig(a), trig(b))
            }
        }
    }
}

/// Solves `π P = π`, `Σπ = 1` by Gaussian elimination with partial pivoting.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    // rows of (Pᵀ - I) with the last equation replaced by the normalization
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| p[j][i] - if i == j { 1.0 } else { 0.0 }).collect();
            row.push(0.0);
            row
        })
        .collect();
    m[n - 1] = vec![1.0; n + 1];
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .expect("nonempty");
        if m[piv][col].abs() < 1e-14 {
            return Err(Error::Config("transition matrix has no unique stationary law".into()));
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let factor = m[r][col] / m[col][col];
                if factor != 0.0 {
                    for c in col..=n {
                        m[r][c] -= factor * m[col][c];
                    }
                }
            }
        }
    }
    Ok((0..n).map(|i| (m[i][n] / m[i][i]).max(0.0)).collect())
}

fn draw_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples at indices `0..n` (`forward`) or `-1, -2, …, -n` (`!forward`).
fn one_sided(spec: &DriverSpec, n: usize, forward: bool) -> Result<Vec<(f64, f64)>> {
    let stream = if forward { 0 } else { 1 };
    Ok(match &spec.kind {
        DriverKind::Constant { a, b } => vec![(*a, *b); n],
        DriverKind::IidUniform { a, b } => {
            let mut rng = rng_for(spec.seed, stream);
            (0..n)
                .map(|_| {
                    let ua: f64 = rng.gen();
                    let ub: f64 = rng.gen();
                    (a.0 + (a.1 - a.0) * ua, b.0 + (b.1 - b.0) * ub)
                })
                .collect()
        }
        DriverKind::FiniteMarkov { transition, states } => {
            let pi = stationary_distribution(transition)?;
            let mut rng0 = rng_for(spec.seed, 0);
            let x0 = draw_index(&mut rng0, &pi);
            let mut out = Vec::with_capacity(n);
            if forward {
                let mut x = x0;
                for _ in 0..n {
                    out.push(states[x]);
                    x = draw_index(&mut rng0, &transition[x]);
                }
            } else {
                let k = states.len();
                let reversed: Vec<Vec<f64>> = (0..k)
                    .map(|i| {
                        (0..k)
                            .map(|j| if pi[i] > 0.0 { pi[j] * transition[j][i] / pi[i] } else { 0.0 })
                            .collect()
                    })
                    .collect();
                let mut rng = rng_for(spec.seed, 1);
                let mut x = x0;
                for _ in 0..n {
                    x = draw_index(&mut rng, &reversed[x]);
                    out.push(states[x]);
                }
            }
            out
        }
        DriverKind::Rotation { alpha, theta0, a, b } => (0..n)
            .map(|m| {
                let j = if forward { m as f64 } else { -((m + 1) as f64) };
                let theta = (theta0 + j * alpha).rem_euclid(1.0);
                (a.eval(theta).clamp(0.0, 1.0), b.eval(theta).clamp(0.0, 1.0))
            })
            .collect(),
    })
}

/// Forward orbit `j = 0..n`.
pub fn generate(spec: &DriverSpec, n: usize) -> Result<DriverOrbit> {
    if n == 0 {
        return Err(Error::Config("orbit length must be positive".into()));
    }
    spec.validate()?;
    Ok(DriverOrbit { start: 0, samples: one_sided(spec, n, true)? })
}

/// Window `j = start..end` of the two-sided orbit.
pub fn generate_range(spec: &DriverSpec, start: i64, end: i64) -> Result<DriverOrbit> {
    if end <= start {
        return Err(Error::Config("empty orbit window".into()));
    }
    spec.validate()?;
    let mut samples = Vec::with_capacity((end - start) as usize);
    if start < 0 {
        let past = one_sided(spec, start.unsigned_abs() as usize, false)?;
        let upto = if end < 0 { end.unsigned_abs() as usize } else { 0 };
        samples.extend(past[upto..].iter().rev());
    }
    if end > 0 {
        let fwd = one_sided(spec, end as usize, true)?;
        samples.extend_from_slice(&fwd[start.max(0) as usize..]);
    }
    Ok(DriverOrbit { start, samples })
}

/// Stationary expectation `E[a + b]`.
pub fn mean_ab(spec: &DriverSpec) -> f64 {
    match &spec.kind {
        DriverKind::Constant { a, b } => a + b,
        DriverKind::IidUniform { a, b } => 0.5 * (a.0 + a.1) + 0.5 * (b.0 + b.1),
        DriverKind::FiniteMarkov { transition, states } => match stationary_distribution(transition) {
            Ok(pi) => pi.iter().zip(states).map(|(p, s)| p * (s.0 + s.1)).sum(),
            Err(_) => f64::NAN,
        },
        // periodic trapezoid rule, exact for trigonometric polynomials of low degree
        DriverKind::Rotation { a, b, .. } => {
            let h = 1.0 / QUADRATURE_NODES as f64;
            (0..QUADRATURE_NODES)
                .map(|i| {
                    let t = i as f64 * h;
                    a.eval(t) + b.eval(t)
                })
                .sum::<f64>()
                * h
        }
    }
}

/// The two-state cocycle `[[1-εb, εa], [εb, 1-εa]]` acting on `(J-, J+)` masses.
pub fn reference_matrix<S: Scalar>(eps_a: &S, eps_b: &S) -> [[S; 2]; 2] {
    [
        [S::one() - eps_b.clone(), eps_a.clone()],
        [eps_b.clone(), S::one() - eps_a.clone()],
    ]
}

fn log_det(eps: f64, (a, b): (f64, f64)) -> Result<f64> {
    let d = 1.0 - eps * (a + b);
    if d <= 0.0 {
        return Err(Error::Anomaly(format!(
            "singular reference cocycle: 1 - eps(a+b) = {d} at eps = {eps}, (a,b) = ({a},{b})"
        )));
    }
    Ok(d.ln())
}

/// Birkhoff average `(1/n) Σ log(1 - ε(a_j + b_j))`.
pub fn mc_second_exponent(spec: &DriverSpec, eps: f64, n: usize) -> Result<f64> {
    if eps == 0.0 {
        return Ok(0.0);
    }
    if let DriverKind::Constant { a, b } = spec.kind {
        return log_det(eps, (a, b));
    }
    let orbit = generate(spec, n)?;
    let mut sum = 0.0;
    for &s in &orbit.samples {
        sum += log_det(eps, s)?;
    }
    Ok(sum / n as f64)
}

/// Both exponents of the reference cocycle by QR iteration.
///
/// The iteration runs on the transposed cocycle, whose frame starts at the
/// fixed covector `(1, 1)/√2`. That vector is preserved exactly, so the top
/// exponent carries no initial transient and the second one equals the
/// log-determinant average on the same orbit up to round-off.
pub fn mc_cocycle_exponents_qr(spec: &DriverSpec, eps: f64, n: usize) -> Result<(f64, f64)> {
    let orbit = generate(spec, n)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut q = [[s, s], [s, -s]]; // columns q[0], q[1]
    let (mut l1, mut l2) = (0.0, 0.0);
    for &(a, b) in &orbit.samples {
        log_det(eps, (a, b))?;
        let m = reference_matrix(&(eps * a), &(eps * b));
        // columns of mᵀ q
        let mut cols = [[0.0; 2]; 2];
        for (k, col) in cols.iter_mut().enumerate() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = m[0][i] * q[k][0] + m[1][i] * q[k][1];
            }
        }
        let r11 = cols[0][0].hypot(cols[0][1]);
        let q0 = [cols[0][0] / r11, cols[0][1] / r11];
        let r12 = q0[0] * cols[1][0] + q0[1] * cols[1][1];
        let v = [cols[1][0] - r12 * q0[0], cols[1][1] - r12 * q0[1]];
        let r22 = v[0].hypot(v[1]);
        if r22 == 0.0 || !r22.is_finite() {
            return Err(Error::Anomaly("rank collapse in reference cocycle".into()));
        }
        l1 += r11.ln();
        l2 += r22.ln();
        q = [q0, [v[0] / r22, v[1] / r22]];
    }
    Ok((l1 / n as f64, l2 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;

    fn markov2() -> DriverSpec {
        DriverSpec::parse("finite_markov:p=0.7,0.3/0.3,0.7;a=1,0;b=0,1", 11).unwrap()
    }

    #[test]
    fn constant_orbit() {
        let o = generate(&DriverSpec::constant(1.0, 1.0), 3).unwrap();
        assert_eq!(o.samples, vec![(1.0, 1.0); 3]);
        assert!(generate(&DriverSpec::constant(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn validation() {
        assert!(DriverSpec::constant(1.5, 1.0).validate().is_err());
        assert!(DriverSpec::constant(0.0, 1.0).validate().is_err());
        assert!(DriverSpec::iid_uniform((0.2, 1.1), (0.0, 1.0), 0).validate().is_err());
        assert!(DriverSpec::parse("finite_markov:p=0.5,0.6/0.5,0.5;a=1,0;b=0,1", 0).is_err());
        assert!(DriverSpec::parse("rotation:a=0.5,0.6;b=0.5", 0).is_err());
        assert!(DriverSpec::parse("bogus", 0).is_err());
        assert!(DriverSpec::parse("constant:c=1", 0).is_err());
    }

    #[test]
    fn parse_display_round_trip() {
        for text in [
            "constant:a=1;b=0.5",
            "iid_uniform:a=0,1;b=0.25,0.75",
            "finite_markov:p=0.7,0.3/0.3,0.7;a=1,0;b=0,1",
            "rotation:alpha=0.1;theta0=0.2;a=0.5,0.1,0.2;b=0.5,0,0.3",
        ] {
            let spec = DriverSpec::parse(text, 5).unwrap();
            assert_eq!(spec.to_string(), text);
            assert_eq!(DriverSpec::parse(&spec.to_string(), 5).unwrap(), spec);
        }
        let d = DriverSpec::parse("iid_uniform", 3).unwrap();
        assert_eq!(d.kind, DriverKind::IidUniform { a: (0.0, 1.0), b: (0.0, 1.0) });
    }

    #[test]
    fn seed_determinism() {
        let s = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 42);
        assert_eq!(generate(&s, 100).unwrap(), generate(&s, 100).unwrap());
        assert_ne!(generate(&s, 100).unwrap(), generate(&s.clone().with_seed(43), 100).unwrap());
        let m = markov2();
        assert_eq!(generate(&m, 50).unwrap(), generate(&m, 50).unwrap());
    }

    #[test]
    fn single_state_markov_is_constant() {
        let s = DriverSpec::parse("finite_markov:p=1;a=0.5;b=0.3", 9).unwrap();
        let o = generate(&s, 20).unwrap();
        assert!(o.samples.iter().all(|&x| x == (0.5, 0.3)));
        assert_eq!(generate_range(&s, -5, 5).unwrap().samples, vec![(0.5, 0.3); 10]);
    }

    #[test]
    fn iid_mean_converges() {
        let s = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 7);
        let n = 200_000;
        let o = generate(&s, n).unwrap();
        let mean = o.samples.iter().map(|(a, b)| a + b).sum::<f64>() / n as f64;
        // Var(a+b) = 1/6
        let se = (1.0 / 6.0 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn means() {
        assert_eq!(mean_ab(&DriverSpec::constant(1.0, 1.0)), 2.0);
        assert_eq!(mean_ab(&DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 0)), 1.0);
        let sym = DriverSpec::parse("finite_markov:p=0.9,0.1/0.1,0.9;a=1,0;b=0,1", 0).unwrap();
        assert!((mean_ab(&sym) - 1.0).abs() < 1e-14);
        let skew = DriverSpec::parse("finite_markov:p=0.9,0.1/0.3,0.7;a=1,0;b=1,1", 0).unwrap();
        // π = (3/4, 1/4)
        assert!((mean_ab(&skew) - (0.75 * 2.0 + 0.25)).abs() < 1e-14);
        let rot = DriverSpec::parse("rotation:alpha=0.3;a=0.4,0.2,0.1;b=0.3,0,0.25", 0).unwrap();
        assert!((mean_ab(&rot) - 0.7).abs() < 1e-10);
    }

    #[test]
    fn two_sided_windows_agree() {
        for spec in [
            DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 3),
            markov2(),
            DriverSpec::parse("rotation:alpha=0.37;a=0.5,0.3;b=0.5,0,0.4", 0).unwrap(),
        ] {
            let wide = generate_range(&spec, -20, 20).unwrap();
            let past = generate_range(&spec, -20, -5).unwrap();
            let mid = generate_range(&spec, -5, 7).unwrap();
            let fwd = generate(&spec, 20).unwrap();
            assert_eq!(&wide.samples[..15], &past.samples[..]);
            assert_eq!(&wide.samples[15..27], &mid.samples[..]);
            assert_eq!(&wide.samples[20..], &fwd.samples[..]);
        }
    }

    #[test]
    fn rotation_orbit_is_exact_shift() {
        let spec = DriverSpec::parse("rotation:alpha=0.25;a=0.5,0.5;b=0.5", 0).unwrap();
        let o = generate_range(&spec, -2, 2).unwrap();
        let a: Vec<f64> = o.samples.iter().map(|s| s.0).collect();
        // a(θ) = 0.5 + 0.5 cos 2πθ at θ = 1/2, 3/4, 0, 1/4
        let want = [0.0, 0.5, 1.0, 0.5];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn second_exponent_closed_form() {
        let c = DriverSpec::constant(1.0, 1.0);
        assert_eq!(mc_second_exponent(&c, 0.01, 10).unwrap(), 0.98f64.ln());
        assert!((0.98f64.ln() + 0.0202027).abs() < 1e-7);
        assert_eq!(mc_second_exponent(&markov2(), 0.0, 10).unwrap(), 0.0);
        assert!(matches!(mc_second_exponent(&c, 0.5, 10), Err(Error::Anomaly(_))));
    }

    #[test]
    fn second_exponent_iid_matches_quadrature() {
        let eps = 0.01;
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 1);
        let n = 1_000_000;
        let est = mc_second_exponent(&spec, eps, n).unwrap();
        // s = a + b has the triangular density min(s, 2 - s) on [0, 2]
        let m = 20_000;
        let h = 2.0 / m as f64;
        let (mut mean, mut second) = (0.0, 0.0);
        for i in 0..m {
            let s = (i as f64 + 0.5) * h;
            let w = s.min(2.0 - s) * h;
            let l = (1.0 - eps * s).ln();
            mean += w * l;
            second += w * l * l;
        }
        let se = ((second - mean * mean) / n as f64).sqrt();
        assert!((est - mean).abs() < 3.0 * se, "est {est} quad {mean} se {se}");
    }

    #[test]
    fn reference_matrix_structure() {
        let m = reference_matrix(&Rational::from_ratio(1, 50), &Rational::from_ratio(3, 100));
        let one = Rational::from_i64(1);
        assert_eq!(m[0][0].clone() + m[1][0].clone(), one);
        assert_eq!(m[0][1].clone() + m[1][1].clone(), one);
        let det = m[0][0].clone() * m[1][1].clone() - m[0][1].clone() * m[1][0].clone();
        assert_eq!(det, one - Rational::from_ratio(5, 100));
    }

    #[test]
    fn qr_exponents() {
        let c = DriverSpec::constant(1.0, 1.0);
        let (l1, l2) = mc_cocycle_exponents_qr(&c, 0.01, 1000).unwrap();
        assert!(l1.abs() < 1e-12);
        assert!((l2 - 0.98f64.ln()).abs() < 1e-12);
        assert_eq!(mc_cocycle_exponents_qr(&c, 0.0, 100).unwrap(), (0.0, 0.0));
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 2);
        let n = 10_000;
        let (l1, l2) = mc_cocycle_exponents_qr(&spec, 0.05, n).unwrap();
        let birkhoff = mc_second_exponent(&spec, 0.05, n).unwrap();
        assert!(l1.abs() < 1e-8);
        assert!((l2 - birkhoff).abs() < 1e-8);
        assert!((l1 + l2 - birkhoff).abs() < 1e-8);
    }

    #[test]
    fn qr_against_exact_product() {
        let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 8);
        let n = 120;
        let eps = 0.05;
        let orbit = generate(&spec, n).unwrap();
        let one = Rational::from_i64(1);
        let zero = Rational::from_i64(0);
        let mut prod = [[one.clone(), zero.clone()], [zero, one.clone()]];
        for &(a, b) in &orbit.samples {
            let m = reference_matrix(&Rational::from_f64(eps * a), &Rational::from_f64(eps * b));
            let next: [[Rational; 2]; 2] = std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    m[i][0].clone() * prod[0][j].clone() + m[i][1].clone() * prod[1][j].clone()
                })
            });
            prod = next;
        }
        // column sums stay 1, so the product never grows
        for j in 0..2 {
            assert_eq!(prod[0][j].clone() + prod[1][j].clone(), one);
        }
        let det = prod[0][0].clone() * prod[1][1].clone() - prod[0][1].clone() * prod[1][0].clone();
        let det_log = Scalar::to_f64(&det).ln();
        let (l1, l2) = mc_cocycle_exponents_qr(&spec, eps, n).unwrap();
        assert!(l1.abs() < 1e-14);
        assert!(((l1 + l2) * n as f64 - det_log).abs() < 1e-11, "{l1} {l2} {det_log}");
    }

}
