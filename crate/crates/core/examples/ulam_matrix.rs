//! cargo run --example ulam_matrix
use metastable_tent::driving::reference_matrix;
use metastable_tent::ulam::{build_ulam, discretize};
use metastable_tent::{PCDensity, PairedTentMap, Rational, Scalar};

fn main() -> metastable_tent::Result<()> {
    let (ea, eb) = (Rational::from_ratio(1, 100), Rational::from_ratio(1, 50));
    let map = PairedTentMap::new(ea.clone(), eb.clone())?;

    // Two bins: the exact overlaps εa/(1+εa), εb/(1+εb) against the
    // idealized reference matrix built from εa, εb.
    let p = build_ulam(&map, 2)?;
    let a = reference_matrix(&ea, &eb);
    for i in 0..2 {
        for j in 0..2 {
            println!("P[{i}][{j}] = {:<12}  A[{j}][{i}] = {}", p.get(i, j), a[j][i]);
        }
    }

    let p = build_ulam(&map, 256)?;
    let exact = p.row_sums().iter().all(|s| *s == Rational::from_i64(1));
    println!("n=256: nnz={} row sums exactly one: {exact}", p.nnz());

    let v = discretize(&PCDensity::<Rational>::sign(), 256)?;
    let w = p.apply(&v)?;
    let plus: Rational = w[128..].iter().cloned().sum();
    println!("mass of P·sign on J+: {} = {:.10}", plus, plus.to_f64());

    let text = build_ulam(&map.to_f64(), 8)?.to_coordinate_text(&["n_bins=8".to_string()]);
    println!("{}", text.lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
