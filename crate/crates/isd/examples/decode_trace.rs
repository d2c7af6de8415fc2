//! Run strided decoding over a random tabular model and inspect the trace:
//! per-forward records, tokens-per-forward, compute overhead, and the mean
//! acceptance ratio.
//!
//! ```bash
//! cargo run --example decode_trace
//! ```

use isd::decode::{decode, measure_tpf_oh, QueryAccounting, StrideConfig};
use isd::prob::RngStream;
use isd::toy::{ProposalSource, TabularAnchorModel};

fn main() -> isd::Result<()> {
    let model = TabularAnchorModel::random(8, 2, 0.7, &RngStream::new(42))?;
    let source = ProposalSource::EpsilonMixture { epsilon: 0.25 };
    let cfg = StrideConfig::new(4, 2_000, 7)?;

    let trace = decode(&model, &source, &[0, 1], &cfg)?;
    let (tpf, oh_var) = measure_tpf_oh(&trace, QueryAccounting::Variable)?;
    let (_, oh_fix) = measure_tpf_oh(&trace, QueryAccounting::Fixed)?;

    println!("model: vocab 8, order 2; stride 4, epsilon-mixture proposals (eps = 0.25)\n");
    println!("first ten forward passes:");
    for record in trace.records.iter().take(10) {
        println!(
            "  {:?}: {} queries, {} committed, rejection {:?}, bonus {}",
            record.kind,
            record.query_tokens,
            record.committed_tokens,
            record.rejection_position,
            record.bonus_emitted,
        );
    }
    println!("\ncommitted {} tokens over {} forwards", trace.output.len(), trace.records.len());
    println!("tpf          {tpf:.4}");
    println!("oh variable  {oh_var:.4}");
    println!("oh fixed     {oh_fix:.4}");
    println!("mean ratio   {:.4}", trace.mean_acceptance_ratio().unwrap());

    // The same run serialized as JSON lines.
    let mut jsonl = Vec::new();
    trace.write_jsonl(&mut jsonl)?;
    let text = String::from_utf8(jsonl).unwrap();
    println!("\ntrace trailer: {}", text.lines().last().unwrap());
    Ok(())
}
