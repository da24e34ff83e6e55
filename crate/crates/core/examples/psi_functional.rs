//! cargo run --release --example psi_functional
//!
//! ψ* measures how much of the second Oseledets direction a function
//! carries; removing it exposes the third exponent.
use metastable_tent::lyapunov::{
    generic_test_density, lambda3_estimate, psi_star, BackendKind, CocycleRun, DEFAULT_COARSEN_TOL,
};
use metastable_tent::{DriverSpec, PCDensity};

fn main() -> metastable_tent::Result<()> {
    let run = CocycleRun::new(
        DriverSpec::constant(1.0, 1.0),
        0.01,
        5_000,
        BackendKind::ExactPc { coarsen_tol: DEFAULT_COARSEN_TOL },
    );
    let f = generic_test_density();
    let ps = psi_star(&run, &f, 1e-13, 400)?;
    println!("ψ*(f) = {:.15} after {} blocks of k = {}", ps.value, ps.differences.len(), ps.k);
    for (m, d) in ps.differences.iter().enumerate() {
        println!("  |ψ_{}k - ψ_{}k| = {d:.3e}", m + 1, m);
    }
    println!("contraction per block ≈ {:.4}", ps.ratio);

    let shifted = psi_star(&run, &f.axpy(&0.5, &PCDensity::sign()), 1e-13, 400)?;
    println!("ψ*(f + sign/2) - ψ*(f) = {:.15}", shifted.value - ps.value);

    let l3 = lambda3_estimate(&run)?;
    println!("λ3 ≈ {:.4} ± {:.1e}", l3.value, l3.error_bar);
    Ok(())
}
