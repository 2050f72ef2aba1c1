//! Conic scalarization over a small grid of loss pairs.

use morel::scalarization::{conic_scalarize, scalarization_weights, ScalarizationParams};

fn main() -> morel::Result<()> {
    let p = ScalarizationParams::default();
    p.validate()?;
    let (w1, w2) = scalarization_weights(1.0, 2.0, &p);
    println!("k = ({}, {}), γ = {}, gradient weights ({w1}, {w2})", p.k1, p.k2, p.gamma);
    println!("{:>6} {:>6} {:>10}", "L1", "L2", "CS");
    for l1 in [0.0, 0.5, 1.0] {
        for l2 in [0.5, 1.0, 2.0] {
            println!("{l1:>6.2} {l2:>6.2} {:>10.5}", conic_scalarize(l1, l2, &p));
        }
    }

    let abs = ScalarizationParams {
        a1: 0.8,
        abs_mode: true,
        gamma: 0.05,
        ..p
    };
    println!(
        "abs mode with a1 = 0.8 at L = (0.5, 1): {:.5} vs signed {:.5}",
        conic_scalarize(0.5, 1.0, &abs),
        conic_scalarize(0.5, 1.0, &ScalarizationParams { abs_mode: false, ..abs })
    );
    Ok(())
}
