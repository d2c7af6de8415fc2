//! The process simulators and the closed forms are mutual oracles: this
//! sweep prints both side by side with the Monte Carlo standard errors.
//!
//! ```bash
//! cargo run --example monte_carlo_crosscheck
//! ```

use isd::analytics::{oh_isd, sdar_expected_steps, tpf_isd, tpf_oh_tidar};
use isd::decode::QueryAccounting;
use isd::prob::RngStream;
use isd::sim::{simulate_isd, simulate_sdar, simulate_tidar, AcceptanceSchedule};

fn main() -> isd::Result<()> {
    let cycles = 200_000u64;
    let stream = RngStream::new(2718);

    println!("strided decoding, {cycles} renewal cycles per point:");
    println!("{:>3} {:>6} {:>22} {:>22}", "N", "p", "tpf sim (se) / formula", "oh_var sim / formula");
    for (i, &(n, p)) in
        [(2usize, 0.7), (3, 0.85), (4, 0.85), (4, 0.95), (8, 0.9)].iter().enumerate()
    {
        let schedule = AcceptanceSchedule::uniform(n, p)?;
        let sim = simulate_isd(n, &schedule, cycles, &stream.substream(i as u64))?;
        println!(
            "{:>3} {:>6.2} {:>9.4} ({:.1e}) / {:>7.4} {:>12.4} / {:>7.4}",
            n,
            p,
            sim.tpf,
            sim.tpf_se,
            tpf_isd(n, p),
            sim.oh_variable,
            oh_isd(n, p, QueryAccounting::Variable)
        );
    }

    println!("\nblock diffusion, {cycles} blocks per point (mean denoising steps vs recursion):");
    for (i, &(n, p)) in [(4usize, 0.7), (4, 0.85), (8, 0.9)].iter().enumerate() {
        let sim = simulate_sdar(n, p, cycles, &stream.substream(100 + i as u64))?;
        let mean_steps = sim.forwards as f64 / sim.cycles as f64 - 1.0;
        println!(
            "  N={n} p={p}: steps {mean_steps:.4} / {:.4}, tpf {:.4}, tpf*oh = {:.6}",
            sdar_expected_steps(n, p),
            sim.tpf,
            sim.tpf * sim.oh_variable
        );
    }

    println!("\nbranched drafting, {cycles} cycles per point:");
    for (i, &(n, p)) in [(4usize, 0.68), (4, 1.0)].iter().enumerate() {
        let sim = simulate_tidar(n, p, cycles, &stream.substream(200 + i as u64))?;
        let (tpf, oh) = tpf_oh_tidar(n, p);
        println!(
            "  N={n} p={p}: tpf {:.4} / {tpf:.4}, oh {:.4} / {oh:.4}",
            sim.tpf, sim.oh_variable
        );
    }
    Ok(())
}
