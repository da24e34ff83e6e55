//! cargo run --example markov_reference
//!
//! The two-state cocycle on masses of J- and J+: its second exponent is the
//! Birkhoff average of log(1 - ε(a+b)).
use metastable_tent::driving::{mc_cocycle_exponents_qr, mc_second_exponent, mean_ab};
use metastable_tent::DriverSpec;

fn main() -> metastable_tent::Result<()> {
    let drivers = [
        DriverSpec::constant(1.0, 1.0),
        DriverSpec::iid_uniform((0.0, 1.0), (0.0, 1.0), 3),
        DriverSpec::parse("finite_markov:p=0.9,0.1/0.2,0.8;a=1,0.2;b=0.5,1", 3)?,
        DriverSpec::parse("rotation:alpha=0.6180339887;theta0=0.1;a=0.5,0.4;b=0.5,0,0.4", 3)?,
    ];
    for spec in &drivers {
        for eps in [0.02, 0.005] {
            let l2 = mc_second_exponent(spec, eps, 50_000)?;
            let (q1, q2) = mc_cocycle_exponents_qr(spec, eps, 50_000)?;
            println!(
                "{spec:<58} eps={eps:<6} E[a+b]={:.4} λ2={l2:.6} QR=({q1:.1e}, {q2:.6}) -εE[a+b]={:.6}",
                mean_ab(spec),
                -eps * mean_ab(spec)
            );
        }
    }
    Ok(())
}
