//! Training-side artifacts: attention masks over a concatenated
//! `[noisy | clean]` sequence and the split/balanced loss computations.
//!
//! The training input doubles the sequence: positions `0..L` hold the
//! all-masked (noisy) copy `x_t`, positions `L..2L` the clean reference
//! `x_0`. The mask is the union of three regions:
//!
//! * noisy self-attention — causal within each block (strict-causal variant)
//!   or bidirectional within each block (block-causal variant);
//! * cross-attention — each noisy block sees the clean tokens of all strictly
//!   preceding blocks;
//! * clean self-attention — strict token-level causal (strict-causal variant)
//!   or block-causal (block-causal variant).
//!
//! Clean positions never attend to noisy positions, so the clean pathway is
//! exactly an ordinary causal language model.

use std::io::Write;

use crate::error::{invalid_input, Result};

/// Which masking discipline to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskVariant {
    /// Strict causal everywhere: causal within noisy blocks, strict causal in
    /// the clean region. The discipline that keeps generation and
    /// introspection under one attention pattern.
    Idlm,
    /// Block-diffusion style: bidirectional within noisy blocks, block-causal
    /// in the clean region.
    Sdar,
}

/// Mask parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub seq_len: usize,
    pub block: usize,
    pub variant: MaskVariant,
    /// Permit a short final block when `seq_len % block != 0`. Off by
    /// default: an indivisible length is an error unless explicitly allowed.
    pub allow_ragged: bool,
}

impl MaskSpec {
    pub fn new(seq_len: usize, block: usize, variant: MaskVariant) -> Result<Self> {
        if seq_len == 0 || block == 0 {
            return Err(invalid_input(format!(
                "sequence length and block size must be >= 1, got {seq_len} and {block}"
            )));
        }
        Ok(Self { seq_len, block, variant, allow_ragged: false })
    }

    pub fn ragged(mut self) -> Self {
        self.allow_ragged = true;
        self
    }
}

/// Boolean attention mask of shape `(2L) x (2L)`; `true` = attention
/// permitted from query row to key column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    size: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.size + key]
    }

    fn set(&mut self, query: usize, key: usize) {
        self.bits[query * self.size + key] = true;
    }

    /// Portable bitmap text: first line `rows cols`, then one line of `0`/`1`
    /// characters per row. Stable byte-for-byte for golden-file diffing.
    pub fn to_bitmap_string(&self) -> String {
        let mut out = String::with_capacity((self.size + 1) * (self.size + 1) + 16);
        out.push_str(&format!("{} {}\n", self.size, self.size));
        for q in 0..self.size {
            for k in 0..self.size {
                out.push(if self.allowed(q, k) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn write_bitmap<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_bitmap_string().as_bytes())?;
        Ok(())
    }
}

/// Builds the union mask for a doubled `[noisy | clean]` sequence.
pub fn build_mask(spec: &MaskSpec) -> Result<MaskMatrix> {
    if spec.seq_len == 0 || spec.block == 0 {
        return Err(invalid_input("sequence length and block size must be >= 1"));
    }
    if !spec.seq_len.is_multiple_of(spec.block) && !spec.allow_ragged {
        return Err(invalid_input(format!(
            "sequence length {} is not a multiple of block size {} (enable the ragged flag to pad)",
            spec.seq_len, spec.block
        )));
    }
    let l = spec.seq_len;
    let size = 2 * l;
    let block_of = |i: usize| i / spec.block;
    let mut mask = MaskMatrix { size, bits: vec![false; size * size] };

    for i in 0..l {
        let b = block_of(i);
        // Noisy self-attention within the block.
        for j in 0..l {
            if block_of(j) != b {
                continue;
            }
            let ok = match spec.variant {
                MaskVariant::Idlm => j <= i, // causal within block
                MaskVariant::Sdar => true,   // bidirectional within block
            };
            if ok {
                mask.set(i, j);
            }
        }
        // Cross-attention to clean tokens of strictly preceding blocks.
        for j in 0..l {
            if block_of(j) < b {
                mask.set(i, l + j);
            }
        }
    }

    // Clean self-attention; clean rows never see noisy columns.
    for i in 0..l {
        for j in 0..l {
            let ok = match spec.variant {
                MaskVariant::Idlm => j <= i,                    // strict token causal
                MaskVariant::Sdar => block_of(j) <= block_of(i), // block causal
            };
            if ok {
                mask.set(l + i, l + j);
            }
        }
    }
    Ok(mask)
}

/// Per-position target log-probabilities for the masked (`S_t`) and clean
/// (`S_0`) regions, with padding flags excluding positions from the means.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRegions {
    pub masked_logprobs: Vec<f64>,
    pub masked_padding: Vec<bool>,
    pub clean_logprobs: Vec<f64>,
    pub clean_padding: Vec<bool>,
}

impl LossRegions {
    /// Both regions without any padding.
    pub fn dense(masked_logprobs: Vec<f64>, clean_logprobs: Vec<f64>) -> Self {
        let masked_padding = vec![false; masked_logprobs.len()];
        let clean_padding = vec![false; clean_logprobs.len()];
        Self { masked_logprobs, masked_padding, clean_logprobs, clean_padding }
    }

    fn validate(&self) -> Result<()> {
        if self.masked_logprobs.len() != self.masked_padding.len() {
            return Err(invalid_input("masked logprobs and padding flags differ in length"));
        }
        if self.clean_logprobs.len() != self.clean_padding.len() {
            return Err(invalid_input("clean logprobs and padding flags differ in length"));
        }
        Ok(())
    }
}

/// Mean negative target log-probability over each region's non-padding
/// positions: `(l_mask, l_clean)`.
pub fn loss_split(regions: &LossRegions) -> Result<(f64, f64)> {
    regions.validate()?;
    let mean = |logprobs: &[f64], padding: &[bool], name: &str| -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (&lp, &pad) in logprobs.iter().zip(padding) {
            if !pad {
                total -= lp;
                count += 1;
            }
        }
        if count == 0 {
            return Err(invalid_input(format!("{name} region has no non-padding positions")));
        }
        Ok(total / count as f64)
    };
    Ok((
        mean(&regions.masked_logprobs, &regions.masked_padding, "masked")?,
        mean(&regions.clean_logprobs, &regions.clean_padding, "clean")?,
    ))
}

/// Output of [`auto_balanced_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedLoss {
    pub total: f64,
    /// `l_mask / l_clean`, treated as a fixed per-step scalar. `None` in the
    /// degenerate perfect-clean case `l_clean <= 0`, where the total falls
    /// back to `l_mask` alone.
    pub s_hat: Option<f64>,
}

/// Auto-balanced total `l_mask + s_hat * l_clean` with
/// `s_hat = l_mask / l_clean`. Algebraically this is `2 * l_mask`: the
/// balance always equalizes the two pathways' effective magnitudes.
pub fn auto_balanced_loss(l_mask: f64, l_clean: f64) -> BalancedLoss {
    if l_clean <= 0.0 {
        return BalancedLoss { total: l_mask, s_hat: None };
    }
    let s_hat = l_mask / l_clean;
    BalancedLoss { total: l_mask + s_hat * l_clean, s_hat: Some(s_hat) }
}

/// Fixed-scale total `l_mask + scale * l_clean`.
pub fn fixed_scale_loss(l_mask: f64, l_clean: f64, scale: f64) -> f64 {
    debug_assert!(scale >= 0.0, "scale must be >= 0");
    l_mask + scale * l_clean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idlm_spec() -> MaskSpec {
        MaskSpec::new(6, 2, MaskVariant::Idlm).unwrap()
    }

    #[test]
    fn idlm_rows_match_expected_pattern() {
        let mask = build_mask(&idlm_spec()).unwrap();
        // Noisy row 2 (second block) sees itself and clean block 0 only.
        let row: Vec<usize> = (0..12).filter(|&k| mask.allowed(2, k)).collect();
        assert_eq!(row, vec![2, 6, 7]);
        // First clean row sees only itself.
        let row: Vec<usize> = (0..12).filter(|&k| mask.allowed(6, k)).collect();
        assert_eq!(row, vec![6]);
        // Noisy block 0 has no clean context at all.
        let row: Vec<usize> = (0..12).filter(|&k| mask.allowed(0, k)).collect();
        assert_eq!(row, vec![0]);
    }

    #[test]
    fn sdar_rows_match_expected_pattern() {
        let mask = build_mask(&MaskSpec::new(6, 2, MaskVariant::Sdar).unwrap()).unwrap();
        // Bidirectional within the noisy block.
        let row: Vec<usize> = (0..12).filter(|&k| mask.allowed(0, k)).collect();
        assert_eq!(row, vec![0, 1]);
        // Block-causal clean region: row 6 sees its whole block.
        let row: Vec<usize> = (0..12).filter(|&k| mask.allowed(6, k)).collect();
        assert_eq!(row, vec![6, 7]);
    }

    #[test]
    fn strict_variant_never_leaks_future_tokens() {
        // Map both copies of position i to time i; every permitted edge must
        // point backward in time (or at itself).
        for (l, b) in [(6usize, 2usize), (8, 4), (12, 3), (9, 2)] {
            let spec = MaskSpec { seq_len: l, block: b, variant: MaskVariant::Idlm, allow_ragged: true };
            let mask = build_mask(&spec).unwrap();
            for q in 0..2 * l {
                for k in 0..2 * l {
                    if mask.allowed(q, k) {
                        let tq = if q < l { q } else { q - l };
                        let tk = if k < l { k } else { k - l };
                        assert!(tk <= tq, "leak: query {q} sees key {k}");
                        // Clean queries never look at noisy keys.
                        assert!(!(q >= l && k < l));
                    }
                }
            }
        }
    }

    #[test]
    fn ragged_length_requires_the_flag() {
        assert!(build_mask(&MaskSpec::new(7, 2, MaskVariant::Idlm).unwrap()).is_err());
        let mask = build_mask(&MaskSpec::new(7, 2, MaskVariant::Idlm).unwrap().ragged()).unwrap();
        assert_eq!(mask.size(), 14);
        // The short final block follows the same rules with reduced extent.
        let row: Vec<usize> = (0..14).filter(|&k| mask.allowed(6, k)).collect();
        assert_eq!(row, vec![6, 7, 8, 9, 10, 11, 12]);
    }

    #[test]
    fn masks_are_deterministic() {
        assert_eq!(build_mask(&idlm_spec()).unwrap(), build_mask(&idlm_spec()).unwrap());
    }

    #[test]
    fn bitmap_format_shape() {
        let text = build_mask(&idlm_spec()).unwrap().to_bitmap_string();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("12 12"));
        assert_eq!(lines.clone().count(), 12);
        assert!(lines.all(|l| l.len() == 12 && l.chars().all(|c| c == '0' || c == '1')));
    }

    #[test]
    fn loss_split_examples() {
        let (lm, lc) = loss_split(&LossRegions::dense(vec![0.0, 0.0], vec![0.0])).unwrap();
        assert_eq!((lm, lc), (0.0, 0.0));

        let (lm, lc) =
            loss_split(&LossRegions::dense(vec![-2.0, -2.0], vec![-0.5, -1.5])).unwrap();
        assert_eq!((lm, lc), (2.0, 1.0));

        let regions = LossRegions {
            masked_logprobs: vec![-2.0, -4.0],
            masked_padding: vec![true, false],
            clean_logprobs: vec![-1.0],
            clean_padding: vec![false],
        };
        let (lm, _) = loss_split(&regions).unwrap();
        assert_eq!(lm, 4.0);
    }

    #[test]
    fn loss_split_rejects_fully_padded_regions() {
        let regions = LossRegions {
            masked_logprobs: vec![-2.0],
            masked_padding: vec![true],
            clean_logprobs: vec![-1.0],
            clean_padding: vec![false],
        };
        assert!(loss_split(&regions).is_err());
    }

    #[test]
    fn auto_balance_examples_and_identity() {
        let b = auto_balanced_loss(2.0, 0.5);
        assert_eq!(b.s_hat, Some(4.0));
        assert_eq!(b.total, 4.0);

        let b = auto_balanced_loss(1.0, 1.0);
        assert_eq!(b.s_hat, Some(1.0));
        assert_eq!(b.total, 2.0);

        let b = auto_balanced_loss(3.0, 0.0);
        assert_eq!(b.s_hat, None);
        assert_eq!(b.total, 3.0);
    }

    #[test]
    fn fixed_scale_examples() {
        assert_eq!(fixed_scale_loss(2.0, 1.0, 0.2), 2.2);
        assert_eq!(fixed_scale_loss(2.0, 1.0, 0.0), 2.0);
        assert_eq!(fixed_scale_loss(2.0, 1.0, 1.0), 3.0);
    }
}
