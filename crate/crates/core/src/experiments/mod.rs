//! Experiment orchestration behind the `tentlab` command line.
//!
//! Output schemas (all floating-point fields printed with 17 significant
//! digits in CSV, shortest round-trip form in JSON):
//!
//! * `sweep` CSV: `#`-prefixed `key=value` preamble, then the header
//!   `eps,lambda2,err,mc_lambda2,predicted,r,seed,backend,n_steps`, one row
//!   per eps in increasing order, then trailer lines `# slope=…`,
//!   `# intercept=…`, `# corrected_slope=…` (the `ε` coefficient of a fit
//!   `s ε + c ε² |ln ε|`), `# r_ratio=…` where `r = |λ₂ + ε E[a+b]| / (ε² |ln ε|)`
//!   and `r_ratio = r(ε_min) / r(ε_max)`.
//! * `mc-compare` CSV: header
//!   `eps,lambda2,err,mc_lambda2,mc_qr_lambda1,mc_qr_lambda2,diff,seed,backend,n_steps`.
//! * `lyapunov`, `cone-check`, `ulam` JSON: an object with `config`,
//!   `config_hash` and `runs`, one record per eps carrying `eps`, `seed`,
//!   `backend` and `n_steps`.
//! * `oseledets` density dump: `# key=value` header lines (`eps`, `seed`,
//!   `backend`, `n_steps`, `depth`, `driver`, `bv_norm`, `l1`, `var0c`,
//!   `integral_plus`, `cauchy_l1`, `config_hash`) followed by rows
//!   `x value`: each row gives a breakpoint and the value on the cell to its
//!   right; the final row has `x = 1` and repeats the last value.
//!
//! Timestamps never enter these files; they go to a sidecar `<out>.log`.

pub mod cli;
pub mod config;

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

pub use config::{Command, ExperimentConfig};

use crate::densities::PCDensity;
use crate::driving::{generate, mc_cocycle_exponents_qr, mc_second_exponent, mean_ab, DriverSpec};
use crate::error::{Error, Result};
use crate::lyapunov::{
    lambda2_estimate, oseledets_cauchy, oseledets_vector_2, qr_spectrum, spectrum, BackendKind, CocycleRun,
};
use crate::quarantine::{invariance_trial, phi_ratio_trial};
use crate::scalar::{Rational, Scalar};
use crate::ulam::build_ulam;

/// What a command produced: the main artifact, optional side files, and
/// whether a cone violation was found.
#[derive(Debug)]
pub struct Outcome {
    pub primary: String,
    pub extra: Vec<(PathBuf, String)>,
    pub violation: Option<String>,
}

impl Outcome {
    fn text(primary: String) -> Self {
        Outcome { primary, extra: Vec::new(), violation: None }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.command {
        Command::Ulam => cmd_ulam(cfg),
        Command::Lyapunov => cmd_lyapunov(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::ConeCheck => cmd_cone_check(cfg),
        Command::McCompare => cmd_mc_compare(cfg),
        Command::Oseledets => cmd_oseledets(cfg),
    }
}

/// Writes the primary artifact to `cfg.out` (or stdout), side files, and a
/// timestamped line to the sidecar log.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<()> {
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &outcome.primary)?;
            let mut log_path = path.clone().into_os_string();
            log_path.push(".log");
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let status = if outcome.violation.is_some() { "violation" } else { "ok" };
            let line = format!(
                "unix_time={stamp} command={} config_hash={} status={status}\n",
                cfg.command.name(),
                cfg.hash()
            );
            use std::io::Write as _;
            std::fs::OpenOptions::new().create(true).append(true).open(log_path)?.write_all(line.as_bytes())?;
        }
        None => print!("{}", outcome.primary),
    }
    for (path, text) in &outcome.extra {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn single_eps(cfg: &ExperimentConfig) -> Result<Rational> {
    let mut e = cfg.eps_values()?;
    if e.len() != 1 {
        return Err(Error::Config(format!("{} takes a single eps", cfg.command.name())));
    }
    Ok(e.remove(0))
}

fn envelope(cfg: &ExperimentConfig, runs: serde_json::Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&json!({
        "config": cfg,
        "config_hash": cfg.hash(),
        "runs": runs,
    }))?;
    s.push('\n');
    Ok(s)
}

fn cmd_ulam(cfg: &ExperimentConfig) -> Result<Outcome> {
    let eps = single_eps(cfg)?;
    let spec = cfg.driver_spec()?;
    let map = generate(&spec, 1)?.maps(&eps)?.remove(0).to_f64();
    let m = build_ulam(&map, cfg.bins)?;
    let record = json!({
        "eps": eps.to_f64(),
        "seed": cfg.seed,
        "backend": format!("ulam({})", cfg.bins),
        "n_steps": 1,
        "eps_a": map.eps_a(),
        "eps_b": map.eps_b(),
        "n_bins": cfg.bins,
        "nnz": m.nnz(),
        "max_row_sum_deviation": m.max_row_sum_deviation(),
    });
    let mut out = Outcome::text(envelope(cfg, json!([record]))?);
    if let Some(path) = &cfg.dump_matrix {
        let header = vec![
            format!("eps={}", eps.to_f64()),
            format!("n_bins={}", cfg.bins),
            format!("config_hash={}", cfg.hash()),
        ];
        out.extra.push((path.clone(), m.to_coordinate_text(&header)));
    }
    Ok(out)
}

fn cocycle(cfg: &ExperimentConfig, spec: &DriverSpec, eps: f64, backend: BackendKind) -> CocycleRun {
    CocycleRun::new(spec.clone(), eps, cfg.steps, backend)
}

fn cmd_lyapunov(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.driver_spec()?;
    let backend = cfg.backend_kind()?;
    let mut runs = Vec::new();
    for eps in cfg.eps_values()? {
        let run = cocycle(cfg, &spec, eps.to_f64(), backend);
        let (report, detail) = spectrum(&run)?;
        let qr = match backend {
            BackendKind::Ulam { .. } => Some(qr_spectrum(&run, cfg.qr)?),
            BackendKind::ExactPc { .. } => None,
        };
        runs.push(json!({
            "eps": run.eps,
            "seed": cfg.seed,
            "backend": backend.to_string(),
            "n_steps": run.n_steps,
            "spectrum": report,
            "detail": detail,
            "qr": qr,
        }));
    }
    Ok(Outcome::text(envelope(cfg, json!(runs))?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub lambda2: f64,
    pub err: f64,
    pub mc_lambda2: f64,
    pub predicted: f64,
    /// `|λ₂ + ε E[a+b]| / (ε² |ln ε|)`
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sweep {
    pub seed: u64,
    pub backend: String,
    pub n_steps: usize,
    pub mean_ab: f64,
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of `ε` in the fit `λ₂ ≈ s ε + c ε² |ln ε|`.
    pub corrected_slope: f64,
    /// `r(ε_min) / r(ε_max)`
    pub r_ratio: f64,
}

/// Ordinary least squares `y ≈ intercept + slope · x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Least squares `y ≈ s x + c x² |ln x|` without intercept; returns `(s, c)`.
pub fn corrected_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let g: Vec<f64> = xs.iter().map(|x| x * x * x.ln().abs()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let (a11, a12, a22) = (dot(xs, xs), dot(xs, &g), dot(&g, &g));
    let (b1, b2) = (dot(xs, ys), dot(&g, ys));
    let det = a11 * a22 - a12 * a12;
    ((b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det)
}

/// `λ₂` at every eps on a shared driver orbit, run in parallel and reported
/// in increasing eps.
pub fn lambda2_sweep(spec: &DriverSpec, eps: &[f64], n_steps: usize, backend: BackendKind) -> Result<Sweep> {
    let e_ab = mean_ab(spec);
    let mut rows: Vec<SweepRow> = eps
        .par_iter()
        .map(|&e| -> Result<SweepRow> {
            let run = CocycleRun::new(spec.clone(), e, n_steps, backend);
            let l2 = lambda2_estimate(&run)?;
            let predicted = -e * e_ab;
            Ok(SweepRow {
                eps: e,
                lambda2: l2.value,
                err: l2.error_bar,
                mc_lambda2: mc_second_exponent(spec, e, n_steps)?,
                predicted,
                r: (l2.value - predicted).abs() / (e * e * e.ln().abs()),
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.lambda2).collect();
    let (slope, intercept) = if rows.len() >= 2 { least_squares(&xs, &ys) } else { (f64::NAN, f64::NAN) };
    let corrected_slope = if rows.len() >= 2 { corrected_fit(&xs, &ys).0 } else { f64::NAN };
    let r_ratio = match (rows.first(), rows.last()) {
        (Some(lo), Some(hi)) => lo.r / hi.r,
        _ => f64::NAN,
    };
    Ok(Sweep { seed: spec.seed, backend: backend.to_string(), n_steps, mean_ab: e_ab, rows, slope, intercept, corrected_slope, r_ratio })
}

impl Sweep {
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut s = String::new();
        for p in preamble {
            let _ = writeln!(s, "# {p}");
        }
        let _ = writeln!(s, "eps,lambda2,err,mc_lambda2,predicted,r,seed,backend,n_steps");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
                r.eps, r.lambda2, r.err, r.mc_lambda2, r.predicted, r.r, self.seed, self.backend, self.n_steps
            );
        }
        let _ = writeln!(s, "# slope={:.16e}", self.slope);
        let _ = writeln!(s, "# intercept={:.16e}", self.intercept);
        let _ = writeln!(s, "# corrected_slope={:.16e}", self.corrected_slope);
        let _ = writeln!(s, "# r_ratio={:.16e}", self.r_ratio);
        s
    }
}

fn preamble(cfg: &ExperimentConfig, spec: &DriverSpec) -> Vec<String> {
    vec![
        format!("command={}", cfg.command.name()),
        format!("driver={spec}"),
        format!("config_hash={}", cfg.hash()),
    ]
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.driver_spec()?;
    let eps: Vec<f64> = cfg.eps_values()?.iter().map(|e| e.to_f64()).collect();
    let sweep = lambda2_sweep(&spec, &eps, cfg.steps, cfg.backend_kind()?)?;
    Ok(Outcome::text(sweep.to_csv(&preamble(cfg, &spec))))
}

fn cmd_mc_compare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.driver_spec()?;
    let backend = cfg.backend_kind()?;
    let mut eps: Vec<f64> = cfg.eps_values()?.iter().map(|e| e.to_f64()).collect();
    eps.sort_by(f64::total_cmp);
    let rows: Vec<String> = eps
        .par_iter()
        .map(|&e| -> Result<String> {
            let run = cocycle(cfg, &spec, e, backend);
            let l2 = lambda2_estimate(&run)?;
            let mc = mc_second_exponent(&spec, e, cfg.steps)?;
            let (q1, q2) = mc_cocycle_exponents_qr(&spec, e, cfg.steps)?;
            Ok(format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
                e,
                l2.value,
                l2.error_bar,
                mc,
                q1,
                q2,
                l2.value - mc,
                cfg.seed,
                backend,
                cfg.steps
            ))
        })
        .collect::<Result<_>>()?;
    let mut s = String::new();
    for p in preamble(cfg, &spec) {
        let _ = writeln!(s, "# {p}");
    }
    let _ = writeln!(s, "eps,lambda2,err,mc_lambda2,mc_qr_lambda1,mc_qr_lambda2,diff,seed,backend,n_steps");
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    Ok(Outcome::text(s))
}

fn cmd_cone_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.driver_spec()?;
    let mut runs = Vec::new();
    let mut violation = None;
    for eps in cfg.eps_values()? {
        let inv = invariance_trial(&spec, &eps, cfg.samples, cfg.seed)?;
        let phi = if eps.to_f64() > 0.0 { Some(phi_ratio_trial(&spec, &eps, cfg.samples, cfg.seed)?) } else { None };
        if !inv.passed() && violation.is_none() {
            violation = Some(format!("{} violations at eps = {}", inv.violations, eps.to_f64()));
        }
        runs.push(json!({
            "eps": eps.to_f64(),
            "seed": cfg.seed,
            "backend": "exact",
            "n_steps": 1,
            "invariance": inv,
            "phi_ratio": phi,
        }));
    }
    let mut out = Outcome::text(envelope(cfg, json!(runs))?);
    out.violation = violation;
    Ok(out)
}

/// Header lines written above an Oseledets density dump.
pub fn oseledets_header(cfg: &ExperimentConfig, run: &CocycleRun, v: &PCDensity<f64>, cauchy: f64) -> Vec<String> {
    let bv = v.bv_norm();
    vec![
        format!("eps={}", run.eps),
        format!("seed={}", cfg.seed),
        format!("backend={}", run.backend),
        format!("n_steps={}", run.n_steps),
        format!("depth={}", cfg.depth),
        format!("driver={}", run.spec),
        format!("bv_norm={:.16e}", bv.bv),
        format!("l1={:.16e}", bv.l1),
        format!("var0c={:.16e}", bv.var0c),
        format!("integral_plus={:.16e}", v.integral_plus()),
        format!("cauchy_l1={cauchy:.16e}"),
        format!("config_hash={}", cfg.hash()),
    ]
}

fn cmd_oseledets(cfg: &ExperimentConfig) -> Result<Outcome> {
    let eps = single_eps(cfg)?.to_f64();
    let run = cocycle(cfg, &cfg.driver_spec()?, eps, cfg.backend_kind()?);
    let v = oseledets_vector_2(&run, cfg.depth)?;
    let cauchy = oseledets_cauchy(&run, &[cfg.depth, cfg.depth + 50])?[0];
    Ok(Outcome::text(v.to_text(&oseledets_header(cfg, &run, &v, cauchy))))
}
