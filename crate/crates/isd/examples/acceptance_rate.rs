//! The introspective acceptance rate alpha: how strongly a model endorses
//! its own generated tokens when it re-examines them against its causal
//! anchor distribution. Autoregressive generation has p = q and scores 1;
//! the further proposals drift from the anchors, the lower alpha falls.
//!
//! ```bash
//! cargo run --example acceptance_rate
//! ```

use isd::prob::{introspective_acceptance_rate, RngStream};
use isd::toy::{GatedResidualModel, ProposalSource, TabularAnchorModel};

fn main() -> isd::Result<()> {
    let model = TabularAnchorModel::random(6, 1, 0.8, &RngStream::new(17))?;
    let mut rng = RngStream::new(18).rng();

    let sources = [
        ("mirror (q = p, the AR case)".to_string(), ProposalSource::Mirror),
        ("epsilon mixture 0.2".to_string(), ProposalSource::EpsilonMixture { epsilon: 0.2 }),
        ("epsilon mixture 0.6".to_string(), ProposalSource::EpsilonMixture { epsilon: 0.6 }),
        ("pure noise (epsilon 1)".to_string(), ProposalSource::EpsilonMixture { epsilon: 1.0 }),
        (
            "adversarial gated residual".to_string(),
            ProposalSource::GatedResidual(GatedResidualModel::adversarial(model.clone(), 5.0)),
        ),
    ];

    println!("alpha over 20k generated tokens, order-1 anchor, vocab 6:\n");
    for (name, source) in sources {
        // Generate from q along a chain, then score each token against the
        // anchor p for the same context.
        let mut ctx = vec![0u32];
        let mut pairs = Vec::new();
        for _ in 0..20_000 {
            let q = source.proposal(&model, &ctx)?;
            let token = q.sample(&mut rng);
            let p = model.anchor_distribution(&ctx)?.clone();
            pairs.push((p, q, token));
            ctx.push(token);
            if ctx.len() > 4 {
                ctx.drain(..ctx.len() - 4);
            }
        }
        let alpha = introspective_acceptance_rate(pairs.iter().map(|(p, q, t)| (p, q, *t)))?;
        println!("  {name:<30} alpha = {alpha:.4}");
    }
    println!("\nalpha is exactly the per-position acceptance probability the decoder sees,");
    println!("so it predicts tokens-per-forward before any decoding is run");
    Ok(())
}
