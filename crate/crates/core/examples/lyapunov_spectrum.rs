//! cargo run --release --example lyapunov_spectrum
use metastable_tent::lyapunov::{qr_spectrum, spectrum, BackendKind, CocycleRun, DEFAULT_COARSEN_TOL};
use metastable_tent::DriverSpec;

fn main() -> metastable_tent::Result<()> {
    let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 42);
    let exact = CocycleRun::new(spec.clone(), 0.01, 10_000, BackendKind::ExactPc { coarsen_tol: DEFAULT_COARSEN_TOL });
    let (report, detail) = spectrum(&exact)?;
    println!("exact step functions:");
    println!("  λ1 = {:+.3e}   (without burn-in: {:+.3e})", report.lambda_1, detail.lambda1.literal);
    println!("  λ2 = {:+.6} ± {:.1e}   BV-norm rate {:+.6}", report.lambda_2, detail.lambda2.error_bar, detail.lambda2.bv_rate);
    if let Some(l3) = report.lambda_3 {
        println!("  λ3 = {l3:+.4}");
    }

    let ulam = CocycleRun { backend: BackendKind::Ulam { n_bins: 1 << 12 }, ..exact };
    let qr = qr_spectrum(&ulam, 4)?;
    println!("QR on Ulam(2^12): {:+.3e} {:+.6} {:+.4}", qr.lambda_1, qr.lambda_2, qr.lambda_3.unwrap_or(f64::NAN));
    println!("error bars: {:?}", qr.error_bars);
    Ok(())
}
