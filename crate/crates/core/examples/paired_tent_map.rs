//! cargo run --example paired_tent_map
use metastable_tent::{Interval, PairedTentMap, Rational, Scalar};

fn main() -> metastable_tent::Result<()> {
    // eps_a = eps * a(ω), eps_b = eps * b(ω), kept as exact rationals.
    let map = PairedTentMap::new(Rational::from_ratio(1, 100), Rational::from_ratio(3, 200))?;
    let holes = map.holes();
    println!("H- = [{}, {}]", holes.h_minus.lo, holes.h_minus.hi);
    println!("H+ = [{}, {}]", holes.h_plus.lo, holes.h_plus.hi);
    println!("m(H-) + m(H+) = {}", holes.measure());

    for x in ["-0.75", "-0.5", "0.25", "0.5", "0.9"] {
        let x = metastable_tent::scalar::parse_rational(x)?;
        println!("T({x}) = {}", map.eval(&x)?);
    }

    let target = Interval::new(Rational::from_ratio(0, 1), Rational::from_ratio(1, 50));
    for iv in map.preimage_of_interval(&target) {
        println!("part of T^-1([0, 1/50]): [{}, {}]  ~ [{:.6}, {:.6}]", iv.lo, iv.hi, iv.lo.to_f64(), iv.hi.to_f64());
    }
    Ok(())
}
