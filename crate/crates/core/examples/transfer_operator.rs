//! cargo run --example transfer_operator
//!
//! Pushes `sign` forward exactly and splits off the mass that leaked through
//! the holes at each step.
use metastable_tent::densities::leak_decomposition;
use metastable_tent::driving::generate;
use metastable_tent::{DriverSpec, PCDensity, Rational, Scalar};

fn main() -> metastable_tent::Result<()> {
    let eps = Rational::from_ratio(1, 50);
    let spec = DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 7);
    let maps = generate(&spec, 4)?.maps(&eps)?;

    let mut f = PCDensity::<Rational>::sign();
    for (n, map) in maps.iter().enumerate() {
        f = f.transfer(map);
        let bv = f.bv_norm().to_f64();
        println!(
            "n={} cells={:3} ∫f={} ∫_J+ f={:.12} var0c={:.6}",
            n + 1,
            f.n_cells(),
            f.integral(),
            f.integral_plus().to_f64(),
            bv.var0c
        );
    }

    let (kept, leaked) = leak_decomposition(&maps, &PCDensity::<Rational>::constant(Rational::from_ratio(1, 2)))?;
    println!("mass never leaked: {:.12}", kept.integral().to_f64());
    for (j, g) in leaked.iter().enumerate() {
        println!("leaked at step {}: {:.12}", j + 1, g.integral().to_f64());
    }
    Ok(())
}
