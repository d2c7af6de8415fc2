//! Continuous batching versus block-synchronized batching on a heterogeneous
//! burst workload, at matched per-forward token yield, plus a batch-size
//! throughput sweep.
//!
//! ```bash
//! cargo run --example serving_contrast
//! ```

use isd::analytics::{sdar_expected_steps, tpf_isd};
use isd::prob::RngStream;
use isd::serving::{run_serving_sim, throughput_vs_batch, CostModel, Policy, Workload};
use isd::sim::CommitProcess;

fn main() -> isd::Result<()> {
    let cost = CostModel::default_desk();

    // Match the strided process to block diffusion's tokens-per-forward at
    // p = 0.7, so the contrast isolates scheduling rather than raw yield.
    let sdar_tpf = 4.0 / (sdar_expected_steps(4, 0.7) + 1.0);
    let mut lo = 0.01;
    let mut hi = 0.99;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if tpf_isd(4, mid) > sdar_tpf {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let isd_p = 0.5 * (lo + hi);
    println!("matched token yield: both processes commit {sdar_tpf:.3} tokens per forward\n");

    let isd_load = Workload::bundled_heterogeneous(CommitProcess::Isd { n: 4, p: isd_p });
    let sdar_load = Workload::bundled_heterogeneous(CommitProcess::Sdar { n: 4, p: 0.7 });

    let cont = run_serving_sim(&isd_load, Policy::Continuous, &cost, true, 8, &RngStream::new(1))?;
    let sync = run_serving_sim(&sdar_load, Policy::BlockSync, &cost, false, 8, &RngStream::new(1))?;
    println!("batch 8, 16 heterogeneous requests (160..480 tokens):");
    println!(
        "  continuous + strided + stationary loop: {:.1} tok/s, makespan {:.0} ms, {} steps",
        cont.aggregate_tps, cont.makespan_ms, cont.step_count
    );
    println!(
        "  block-sync + block diffusion:           {:.1} tok/s, makespan {:.0} ms, {} steps",
        sync.aggregate_tps, sync.makespan_ms, sync.step_count
    );
    println!("  throughput ratio: {:.2}x\n", cont.aggregate_tps / sync.aggregate_tps);

    println!("throughput vs batch size (aggregate tok/s @ tokens per batched step):");
    let batches = [1usize, 2, 4, 8, 16];
    let cont_sweep =
        throughput_vs_batch(&isd_load, &batches, Policy::Continuous, &cost, true, &RngStream::new(2))?;
    let sync_sweep =
        throughput_vs_batch(&sdar_load, &batches, Policy::BlockSync, &cost, false, &RngStream::new(2))?;
    println!("{:>7} {:>24} {:>24}", "batch", "continuous/strided", "block-sync/diffusion");
    for (c, s) in cont_sweep.points.iter().zip(&sync_sweep.points) {
        println!(
            "{:>7} {:>15.1} @ {:>5.2} {:>15.1} @ {:>5.2}",
            c.batch, c.aggregate_tps, c.tokens_per_step, s.aggregate_tps, s.tokens_per_step
        );
    }
    println!(
        "\nslope of throughput vs serving tpf: continuous {:.0}, block-sync {:.0}",
        cont_sweep.slope_tps_per_tpf, sync_sweep.slope_tps_per_tpf
    );
    println!("synchronizing at the slowest block wastes the yield; uniform advancement keeps it");
    Ok(())
}
