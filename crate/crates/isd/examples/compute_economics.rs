//! Closed-form compute economics at stride 4: tokens-per-forward, overhead,
//! efficiency curves, and the break-even acceptance rates for each paradigm.
//!
//! ```bash
//! cargo run --example compute_economics
//! ```

use isd::analytics::{break_even_acceptance, curve_sweep, BreakEven, ParadigmMethod};

fn main() {
    let n = 4;
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();

    println!("efficiency = tpf / oh at stride {n} (>1 means parallelism beats extra compute)\n");
    println!("{:>6} {:>14} {:>10} {:>10} {:>10}", "p", "method", "tpf", "oh", "eff");
    for method in ParadigmMethod::ALL {
        let curve = curve_sweep(method, n, &grid);
        for s in curve.samples.iter().filter(|s| ((s.p * 20.0) as usize).is_multiple_of(5)) {
            println!(
                "{:>6.2} {:>14} {:>10.3} {:>10.3} {:>10.3}",
                s.p,
                method.to_string(),
                s.tpf,
                s.oh,
                s.efficiency
            );
        }
        println!();
    }

    println!("break-even acceptance (efficiency crosses 1):");
    for method in ParadigmMethod::ALL {
        match break_even_acceptance(method, n) {
            BreakEven::Crossing(p) => println!("  {:>14}: p = {p:.4}", method.to_string()),
            BreakEven::NoCrossing => println!("  {:>14}: no-crossing", method.to_string()),
        }
    }
    println!();
    println!(
        "block diffusion is capped at tpf = N/2 by its commit pass; branched drafting at\n\
         efficiency N/(N+1) = {:.2} by its N^2 branch masks; only strided introspection\n\
         crosses break-even, at p = 0.83 (variable) / 0.86 (fixed) for N = 4",
        ParadigmMethod::Tidar.efficiency(n, 1.0)
    );
}
