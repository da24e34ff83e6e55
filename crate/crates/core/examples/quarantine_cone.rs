//! cargo run --release --example quarantine_cone
use metastable_tent::driving::generate;
use metastable_tent::quarantine::{cone_check, invariance_trial, lambda_step, phi_pm, sample_cone_element, ConeParams};
use metastable_tent::{DriverSpec, Rational, Scalar};

fn main() -> metastable_tent::Result<()> {
    let eps = Rational::from_ratio(1, 2500);
    let p = ConeParams::new(eps.clone())?;
    println!("eps = {eps}, k = {}", p.k);

    let t = sample_cone_element(1, &p, true)?;
    let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 1);
    let map = generate(&spec, 1)?.maps(&eps)?.remove(0);
    let g = lambda_step(&map, &t);
    for (name, x) in [("t", &t), ("Λt", &g)] {
        let r = cone_check(x, &p)?;
        let (plus, minus) = phi_pm(x);
        println!(
            "{name:>2}: in cone {} | φ+ = {:.8} φ- = {:.8} | min C1 margin {:.3e}, C3 margin {:.3e}",
            r.in_cone(),
            plus.to_f64(),
            minus.to_f64(),
            r.min_c1_margin(),
            r.c3_margin
        );
    }

    let report = invariance_trial(&spec, &eps, 50, 9)?;
    println!(
        "{} samples, {} violations, worst ||g0||/||f0|| = {:.6} (bound {:.6})",
        report.n_samples, report.violations, report.worst_g0_ratio, report.g0_ratio_bound
    );
    Ok(())
}
