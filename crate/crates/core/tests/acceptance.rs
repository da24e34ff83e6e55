//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `ACCEPTANCE_ONLY=2,5` runs a subset.

use std::time::Instant;

use metastable_tent::densities::PCDensity;
use metastable_tent::driving::reference_matrix;
use metastable_tent::experiments::lambda2_sweep;
use metastable_tent::lyapunov::{
    bv_growth_rate, lambda1_estimate, lambda2_estimate, lambda3_estimate, oseledets_vector_2, psi_sequence,
    psi_star, qr_spectrum, BackendKind, CocycleRun, DEFAULT_COARSEN_TOL,
};
use metastable_tent::quarantine::{invariance_trial, phi_ratio_trial};
use metastable_tent::ulam::build_ulam;
use metastable_tent::{DriverSpec, PairedTentMap, Rational, Scalar};
use num::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXACT: BackendKind = BackendKind::ExactPc { coarsen_tol: DEFAULT_COARSEN_TOL };

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn constant() -> DriverSpec {
    DriverSpec::constant(1.0, 1.0)
}

fn iid(seed: u64) -> DriverSpec {
    DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), seed)
}

fn lambda1_vanishes() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for eps in [0.0, 0.005, 0.01, 0.02] {
        for backend in [EXACT, BackendKind::Ulam { n_bins: 1 << 14 }] {
            let est = lambda1_estimate(&CocycleRun::new(constant(), eps, 10_000, backend)).unwrap();
            worst = worst.max(est.value.abs());
        }
        parts.push(format!("{eps}"));
    }
    verdict(worst <= 1e-8, format!("max |lambda_1| = {worst:.3e} over eps {{{}}}, exact and ulam(2^14)", parts.join(", ")))
}

fn lambda2_value() -> Verdict {
    let run = CocycleRun::new(constant(), 0.01, 100_000, BackendKind::Ulam { n_bins: 1 << 13 });
    let est = lambda2_estimate(&run).unwrap();
    let d_mc = (est.value - 0.98f64.ln()).abs();
    let d_th = (est.value + 0.02).abs();
    let tol_th = 10.0 * 0.01f64.powi(2) * 0.01f64.ln().abs();
    verdict(
        d_mc <= 2e-3 && d_th <= tol_th,
        format!(
            "lambda_2 = {:.6} +- {:.1e}; |. - log 0.98| = {d_mc:.2e} (<= 2e-3), |. + 0.02| = {d_th:.2e} (<= {tol_th:.2e})",
            est.value, est.error_bar
        ),
    )
}

fn lambda2_slope() -> Verdict {
    let s = lambda2_sweep(&iid(2024), &[0.04, 0.02, 0.01, 0.005], 100_000, EXACT).unwrap();
    let rel = (s.slope + 1.0).abs();
    let r: Vec<String> = s.rows.iter().map(|r| format!("r({})={:.3}", r.eps, r.r)).collect();
    verdict(
        rel <= 0.03 && s.r_ratio <= 2.0,
        format!(
            "slope = {:.4} (|slope+1| = {rel:.3}, need <= 0.03); r_ratio = {:.3} (<= 2); {}; slope of the fit with an eps^2|ln eps| term = {:.4}",
            s.slope,
            s.r_ratio,
            r.join(" "),
            s.corrected_slope
        ),
    )
}

fn lambda3_bound() -> Verdict {
    let l3 = lambda3_estimate(&CocycleRun::new(constant(), 0.01, 10_000, EXACT)).unwrap();
    let qr = qr_spectrum(&CocycleRun::new(constant(), 0.01, 10_000, BackendKind::Ulam { n_bins: 1 << 13 }), 3).unwrap();
    let qr3 = qr.lambda_3.unwrap_or(f64::NAN);
    let f = PCDensity::new(vec![-1.0, 0.0, 0.3183, 0.5772, 1.0], vec![0.0, 1.0, -2.0, 1.0]).unwrap();
    let f = f.axpy(&(-f.integral()), &PCDensity::two_level(0.0, 1.0));
    let bound = -(2f64.ln()) + 1e-2;
    let mut worst0 = f64::NEG_INFINITY;
    for backend in [EXACT, BackendKind::Ulam { n_bins: 1 << 12 }] {
        let est = bv_growth_rate(&CocycleRun::new(constant(), 0.0, 2000, backend), &f, true).unwrap();
        worst0 = worst0.max(est.value);
    }
    verdict(
        l3.value <= -0.4 && qr3 <= -0.4 && worst0 <= bound,
        format!(
            "lambda_3 = {:.4}, QR lambda_3 = {qr3:.4} (<= -0.4); eps = 0 decay rate {worst0:.4} (<= {bound:.4})",
            l3.value
        ),
    )
}

fn cone_invariance() -> Verdict {
    let eps = Rational::from_ratio(1, 2500);
    let rep = invariance_trial(&iid(5), &eps, 1000, 77).unwrap();
    let g0_ok = rep.worst_g0_ratio >= rep.g0_ratio_bound;
    verdict(
        rep.violations == 0 && g0_ok && rep.passed(),
        format!(
            "{} samples, {} violations, worst ||g0||/||f0|| = {:.6} (>= {:.6}), margins c1 {:.2e} c2 {:.2e} c3 {:.2e}",
            rep.n_samples,
            rep.violations,
            rep.worst_g0_ratio,
            rep.g0_ratio_bound,
            rep.worst_c1_margin,
            rep.worst_c2_margin,
            rep.worst_c3_margin
        ),
    )
}

fn phi_product() -> Verdict {
    let mut ks = Vec::new();
    for (n, d) in [(1, 250), (1, 500), (1, 1000), (1, 2000)] {
        let rep = phi_ratio_trial(&iid(11), &Rational::from_ratio(n, d), 500, 3).unwrap();
        ks.push((rep.eps, rep.constant));
    }
    let max = ks.iter().map(|k| k.1).fold(0.0, f64::max);
    let min = ks.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
    let list: Vec<String> = ks.iter().map(|(e, k)| format!("K({e})={k:.3}")).collect();
    verdict(min > 0.0 && max / min <= 2.0, format!("{}; max/min = {:.3} (<= 2)", list.join(" "), max / min))
}

fn random_step(rng: &mut ChaCha8Rng) -> PCDensity<Rational> {
    let n = rng.gen_range(1..8);
    let mut pts: Vec<Rational> = (0..n).map(|_| Rational::from_ratio(rng.gen_range(-999..1000), 1000)).collect();
    pts.sort();
    pts.dedup();
    let mut bps = vec![-Rational::one()];
    bps.extend(pts.into_iter().filter(|p| *p > -Rational::one()));
    bps.push(Rational::one());
    let vals = (1..bps.len()).map(|_| Rational::from_ratio(rng.gen_range(-20..21), 7)).collect();
    PCDensity::from_steps(bps, vals).unwrap()
}

fn exactness() -> Verdict {
    let eps = Rational::from_ratio(1, 100);
    let map = PairedTentMap::new(eps.clone(), eps.clone()).unwrap();
    let rows_exact = [2usize, 64, 4096]
        .iter()
        .all(|&n| build_ulam(&map, n).unwrap().row_sums().iter().all(|s| s.is_one()));
    let (ea, eb) = (Rational::from_ratio(3, 100), Rational::from_ratio(7, 1000));
    let m2 = build_ulam(&PairedTentMap::new(ea.clone(), eb.clone()).unwrap(), 2).unwrap();
    let one = Rational::one();
    let entries_exact = m2.get(0, 1) == eb.clone() / (one.clone() + eb.clone())
        && m2.get(1, 0) == ea.clone() / (one.clone() + ea.clone())
        && m2.get(0, 0) == one.clone() / (one.clone() + eb.clone())
        && m2.get(1, 1) == one.clone() / (one + ea.clone());
    let a = reference_matrix(&ea, &eb);
    let bound = Scalar::max_of(ea.clone() * ea.clone(), eb.clone() * eb.clone());
    let mut gap = Rational::zero();
    for i in 0..2 {
        for j in 0..2 {
            let d = (m2.get(i, j) - a[j][i].clone()).abs();
            if d > gap {
                gap = d;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut dual_ok = 0;
    for _ in 0..100 {
        let map = PairedTentMap::new(
            Rational::from_ratio(rng.gen_range(0..60), 1000),
            Rational::from_ratio(rng.gen_range(0..60), 1000),
        )
        .unwrap();
        let f = random_step(&mut rng);
        let g = random_step(&mut rng);
        if (f.transfer(&map).pairing(&g) - f.pairing(&g.composed_with(&map))).is_zero() {
            dual_ok += 1;
        }
    }
    verdict(
        rows_exact && entries_exact && gap <= bound && dual_ok == 100,
        format!(
            "row sums exactly 1: {rows_exact}; 2-bin entries exact: {entries_exact}; max |P - A^T| = {:.3e} (<= eps^2 = {:.3e}); duality exact on {dual_ok}/100 pairs",
            gap.to_f64(),
            bound.to_f64()
        ),
    )
}

fn backend_agreement() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for spec in [constant(), iid(8)] {
        let run = CocycleRun::new(spec.clone(), 0.01, 10_000, EXACT);
        let a = lambda2_estimate(&run).unwrap().value;
        let mut u = run.clone();
        u.backend = BackendKind::Ulam { n_bins: 1 << 13 };
        let b = lambda2_estimate(&u).unwrap().value;
        worst = worst.max((a - b).abs());
        parts.push(format!("{spec}: exact {a:.6} ulam {b:.6}"));
    }
    verdict(worst <= 1e-3, format!("{}; max diff {worst:.2e} (<= 1e-3)", parts.join("; ")))
}

fn random_f64_step(rng: &mut ChaCha8Rng) -> PCDensity<f64> {
    let n = rng.gen_range(2..10);
    let mut pts: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.99..0.99)).collect();
    pts.sort_by(f64::total_cmp);
    let mut bps = vec![-1.0];
    bps.extend(pts);
    bps.push(1.0);
    let vals = (1..bps.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    PCDensity::from_steps(bps, vals).unwrap()
}

fn psi_functional() -> Verdict {
    let run = CocycleRun::new(iid(12), 0.01, 1000, EXACT);
    let ns: Vec<usize> = (0..=1000).step_by(50).collect();
    let s = psi_sequence(&run, &PCDensity::sign(), &ns).unwrap();
    let one = psi_sequence(&run, &PCDensity::constant(1.0), &ns).unwrap();
    let trivial = s.iter().map(|v| (v - 1.0).abs()).chain(one.iter().map(|v| v.abs())).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut affine: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut converged = 0;
    for _ in 0..20 {
        let f = random_f64_step(&mut rng);
        let a = rng.gen_range(-3.0..3.0);
        let base = psi_sequence(&run, &f, &ns).unwrap();
        let shifted = psi_sequence(&run, &f.axpy(&a, &PCDensity::sign()), &ns).unwrap();
        for (x, y) in base.iter().zip(&shifted) {
            affine = affine.max((y - x - a).abs());
        }
        if let Ok(p) = psi_star(&run, &f, 1e-12, 400) {
            if p.ratio < 1.0 {
                converged += 1;
            }
            worst_ratio = worst_ratio.max(p.ratio);
        }
    }
    verdict(
        trivial <= 1e-10 && affine <= 1e-10 && converged == 20,
        format!(
            "max |psi(sign)-1|, |psi(1)| = {trivial:.1e}; affine defect {affine:.1e} (<= 1e-10); psi* geometric on {converged}/20 inputs, worst per-k ratio {worst_ratio:.3}"
        ),
    )
}

fn oseledets() -> Verdict {
    let v = oseledets_vector_2(&CocycleRun::new(constant(), 0.01, 10, EXACT), 200).unwrap();
    let bv = v.bv_norm().bv;
    let ip = v.integral_plus();
    let v0 = oseledets_vector_2(&CocycleRun::new(constant(), 0.0, 10, EXACT), 200).unwrap();
    let exact0 = v0 == PCDensity::sign();
    verdict(
        bv <= 15.0 && (ip - 1.0).abs() <= 1e-12 && exact0,
        format!("eps = 0.01: ||v||_BV = {bv:.4} (<= 15), int_J+ v = {ip:.15}; eps = 0 gives sign exactly: {exact0}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "lambda_1 = 0", lambda1_vanishes),
        (2, "lambda_2 value", lambda2_value),
        (3, "lambda_2 slope", lambda2_slope),
        (4, "lambda_3 bound", lambda3_bound),
        (5, "cone invariance", cone_invariance),
        (6, "phi+ one-step product", phi_product),
        (7, "exactness oracles", exactness),
        (8, "backend agreement", backend_agreement),
        (9, "psi functional", psi_functional),
        (10, "Oseledets vector", oseledets),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{name}]: {status} ({:.1} s) {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
