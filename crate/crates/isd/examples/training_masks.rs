//! Attention masks for introspective-consistency training over the doubled
//! `[noisy | clean]` sequence, plus the split and auto-balanced losses.
//!
//! ```bash
//! cargo run --example training_masks
//! ```

use isd::train::{
    auto_balanced_loss, build_mask, fixed_scale_loss, loss_split, LossRegions, MaskSpec,
    MaskVariant,
};

fn main() -> isd::Result<()> {
    for (name, variant) in
        [("strict-causal (idlm)", MaskVariant::Idlm), ("block-causal (sdar)", MaskVariant::Sdar)]
    {
        let mask = build_mask(&MaskSpec::new(6, 2, variant)?)?;
        println!("{name}, L = 6, B = 2, rows = queries, cols = keys, [noisy | clean]:");
        let text = mask.to_bitmap_string();
        for (i, line) in text.lines().skip(1).enumerate() {
            let (noisy, clean) = line.split_at(6);
            let tag = if i == 6 { "  <- clean region starts" } else { "" };
            println!("  {noisy} {clean}{tag}");
        }
        println!();
    }

    // Losses are computed from supplied per-position target log-probs; the
    // regions carry their own padding flags.
    let regions = LossRegions::dense(
        vec![-2.1, -1.7, -2.5, -1.9], // masked positions predict harder
        vec![-0.6, -0.4, -0.8, -0.5],
    );
    let (l_mask, l_clean) = loss_split(&regions)?;
    let balanced = auto_balanced_loss(l_mask, l_clean);
    println!("l_mask = {l_mask:.4}, l_clean = {l_clean:.4}");
    println!(
        "auto-balanced: s_hat = {:.4}, total = {:.4} (identically 2 * l_mask = {:.4})",
        balanced.s_hat.unwrap(),
        balanced.total,
        2.0 * l_mask
    );
    println!("fixed scale 0.2: total = {:.4}", fixed_scale_loss(l_mask, l_clean, 0.2));
    Ok(())
}
