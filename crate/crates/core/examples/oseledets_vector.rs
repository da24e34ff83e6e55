//! cargo run --release --example oseledets_vector [OUT]
//!
//! Pulls `sign` back along the driver and writes the limit in the
//! two-column dump format.
use metastable_tent::lyapunov::{oseledets_cauchy, oseledets_vector_2, BackendKind, CocycleRun, DEFAULT_COARSEN_TOL};
use metastable_tent::DriverSpec;

fn main() -> metastable_tent::Result<()> {
    let run = CocycleRun::new(
        DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 5),
        0.01,
        1,
        BackendKind::ExactPc { coarsen_tol: DEFAULT_COARSEN_TOL },
    );
    let depths = [25, 50, 100, 200, 250];
    for (d, gap) in depths.windows(2).zip(oseledets_cauchy(&run, &depths)?) {
        println!("||v({}) - v({})||_1 = {gap:.3e}", d[1], d[0]);
    }
    let v = oseledets_vector_2(&run, 200)?;
    let bv = v.bv_norm();
    println!("cells {}, ||v||_BV = {:.4}, ∫_J+ v = {:.15}", v.n_cells(), bv.bv, v.integral_plus());
    let header = vec![format!("eps={}", run.eps), format!("bv_norm={:.16e}", bv.bv)];
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(path, v.to_text(&header))?,
        None => println!("{}", v.to_text(&header).lines().take(8).collect::<Vec<_>>().join("\n")),
    }
    Ok(())
}
