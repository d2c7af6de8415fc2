//! Desk-scale tabular language models.
//!
//! A [`TabularAnchorModel`] is an order-`k` conditional table: it maps every
//! length-`k` context (left-padded with a reserved begin-of-sequence id) to a
//! next-token [`Distribution`]. It plays the role of the causal anchor `p`,
//! the exact autoregressive next-token law the decoder verifies against.
//!
//! A [`ProposalSource`] supplies the proposal distributions `q` emitted at
//! mask positions, from faithful (`Mirror`) to degraded (`EpsilonMixture`) to
//! adversarial (`IndependentTable`), plus the [`GatedResidualModel`] variant
//! used for bit-for-bit lossless decoding: a per-context logit offset that is
//! only active at mask positions, so anchors always come from the unmodified
//! base table.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand_distr::{Dirichlet, Distribution as RandDistribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::prob::{Distribution, RngStream, TokenId};

/// Order-`k` conditional next-token table over a vocabulary of size `V`.
///
/// Contexts shorter than `k` are left-padded with the reserved bos id `V`,
/// so the table is total: it has one row per bos-prefixed context, which is
/// `1 + V + ... + V^k` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularAnchorModel {
    vocab: usize,
    order: usize,
    rows: Vec<Distribution>,
}

impl TabularAnchorModel {
    /// Builds a model from rows in canonical context order (see [`Self::contexts`]).
    pub fn from_rows(vocab: usize, order: usize, rows: Vec<Distribution>) -> Result<Self> {
        if vocab < 2 {
            return Err(invalid_input(format!("vocab must be >= 2, got {vocab}")));
        }
        let expected = context_count(vocab, order);
        if rows.len() != expected {
            return Err(invalid_input(format!(
                "order-{order} model over vocab {vocab} needs {expected} rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != vocab {
                return Err(invalid_input(format!(
                    "row {i} has {} entries, expected {vocab}",
                    row.len()
                )));
            }
        }
        Ok(Self { vocab, order, rows })
    }

    /// Order-0 model: one context-free row.
    pub fn context_free(row: Distribution) -> Self {
        let vocab = row.len();
        Self { vocab, order: 0, rows: vec![row] }
    }

    /// Random dense model with rows drawn from a symmetric Dirichlet.
    ///
    /// Deterministic given the stream: the same `(vocab, order,
    /// concentration, stream)` always produces the same table.
    pub fn random(vocab: usize, order: usize, concentration: f64, stream: &RngStream) -> Result<Self> {
        if vocab < 2 {
            return Err(invalid_input(format!("vocab must be >= 2, got {vocab}")));
        }
        if concentration.is_nan() || concentration <= 0.0 {
            return Err(invalid_input(format!("concentration must be > 0, got {concentration}")));
        }
        let mut rng = stream.rng();
        let dirichlet = Dirichlet::new_with_size(concentration, vocab)
            .map_err(|e| invalid_input(format!("dirichlet: {e}")))?;
        let count = context_count(vocab, order);
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let mut w = dirichlet.sample(&mut rng);
            let sum: f64 = w.iter().sum();
            for x in &mut w {
                *x /= sum;
            }
            rows.push(Distribution::new(w)?);
        }
        Ok(Self { vocab, order, rows })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The reserved begin-of-sequence padding id (`= vocab size`).
    pub fn bos(&self) -> TokenId {
        self.vocab as TokenId
    }

    /// Number of stored context rows.
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// The conditional next-token distribution for the last `order` tokens of
    /// the (bos-padded) context. Deterministic table lookup.
    pub fn anchor_distribution(&self, context: &[TokenId]) -> Result<&Distribution> {
        let idx = self.row_index(context)?;
        Ok(&self.rows[idx])
    }

    /// Canonical context enumeration: the empty (fully padded) context
    /// first, then ever-longer real-token suffixes in lexicographic order.
    /// Yielded contexts carry only real tokens; the bos padding is implicit.
    pub fn contexts(&self) -> impl Iterator<Item = Vec<TokenId>> + '_ {
        let vocab = self.vocab;
        (0..self.rows.len()).map(move |mut idx| {
            // Walk group sizes 1, V, V^2, ... until idx lands in a group.
            let mut real_len = 0usize;
            let mut group = 1usize;
            while idx >= group {
                idx -= group;
                real_len += 1;
                group *= vocab;
            }
            let mut digits = vec![0 as TokenId; real_len];
            for d in (0..real_len).rev() {
                digits[d] = (idx % vocab) as TokenId;
                idx /= vocab;
            }
            digits
        })
    }

    fn row_index(&self, context: &[TokenId]) -> Result<usize> {
        // Only the last `order` tokens condition the row; shorter contexts
        // are the conceptually bos-padded rows of their own length group.
        let real = if context.len() > self.order {
            &context[context.len() - self.order..]
        } else {
            context
        };
        for &t in real {
            if (t as usize) >= self.vocab {
                return Err(invalid_input(format!(
                    "context token {t} out of range for vocab {}",
                    self.vocab
                )));
            }
        }
        let mut offset = 0usize;
        let mut group = 1usize;
        for _ in 0..real.len() {
            offset += group;
            group *= self.vocab;
        }
        let mut within = 0usize;
        for &t in real {
            within = within * self.vocab + t as usize;
        }
        Ok(offset + within)
    }

    /// Serializes as `{vocab_size, order, rows}` with comma-joined context
    /// keys (real-token suffixes; the empty key is the fully padded
    /// context). Round-trips losslessly at full double precision.
    pub fn to_json(&self) -> Result<String> {
        let mut rows = BTreeMap::new();
        for (ctx, row) in self.contexts().zip(&self.rows) {
            let key = ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
            rows.insert(key, row.probs().to_vec());
        }
        let doc = ModelDoc { vocab_size: self.vocab, order: self.order, rows };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        let s = self.to_json()?;
        w.write_all(s.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.vocab_size < 2 {
            return Err(invalid_input(format!(
                "field vocab_size must be >= 2, got {}",
                doc.vocab_size
            )));
        }
        let expected = context_count(doc.vocab_size, doc.order);
        if doc.rows.len() != expected {
            return Err(invalid_input(format!(
                "field rows has {} contexts, expected {expected} for order {} over vocab {}",
                doc.rows.len(),
                doc.order,
                doc.vocab_size
            )));
        }
        let mut model_rows = vec![None; expected];
        let probe = Self {
            vocab: doc.vocab_size,
            order: doc.order,
            rows: Vec::new(), // only used for row_index arithmetic below
        };
        for (key, probs) in &doc.rows {
            let ctx = parse_context(key, doc.vocab_size, doc.order)?;
            if probs.len() != doc.vocab_size {
                return Err(invalid_input(format!(
                    "row '{key}' has {} entries, expected {}",
                    probs.len(),
                    doc.vocab_size
                )));
            }
            let idx = probe.row_index(&ctx)?;
            let dist = Distribution::new(probs.clone())
                .map_err(|e| invalid_input(format!("row '{key}': {e}")))?;
            model_rows[idx] = Some(dist);
        }
        let rows: Vec<Distribution> = model_rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| invalid_input(format!("field rows is missing context index {i}"))))
            .collect::<Result<_>>()?;
        Self::from_rows(doc.vocab_size, doc.order, rows)
    }

    pub fn read_json<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

fn context_count(vocab: usize, order: usize) -> usize {
    let mut count = 0usize;
    let mut group = 1usize;
    for _ in 0..=order {
        count += group;
        group *= vocab;
    }
    count
}

// Keys are comma-joined real-token suffixes; the empty key is the fully
// padded context.
fn parse_context(key: &str, vocab: usize, order: usize) -> Result<Vec<TokenId>> {
    if key.is_empty() {
        return Ok(Vec::new());
    }
    let ctx: Vec<TokenId> = key
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<TokenId>()
                .map_err(|_| invalid_input(format!("row '{key}': '{part}' is not a token id")))
        })
        .collect::<Result<_>>()?;
    if ctx.len() > order {
        return Err(invalid_input(format!(
            "row '{key}' has context length {}, expected at most {order}",
            ctx.len()
        )));
    }
    for &t in &ctx {
        if (t as usize) >= vocab {
            return Err(invalid_input(format!(
                "row '{key}': token {t} out of range for vocab {vocab}"
            )));
        }
    }
    Ok(ctx)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    vocab_size: usize,
    order: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

/// Base table plus a gated per-context logit offset.
///
/// With the gate off the emitted distribution is the stored base row itself
/// (bitwise identical), so introspection anchors are exactly the base model's
/// law. With the gate on (mask positions) the row is re-softmaxed with the
/// offset added in log space, modeling a residual adapter that only fires
/// where tokens are being proposed.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedResidualModel {
    base: TabularAnchorModel,
    offsets: Vec<Vec<f64>>,
}

impl GatedResidualModel {
    pub fn new(base: TabularAnchorModel, offsets: Vec<Vec<f64>>) -> Result<Self> {
        if offsets.len() != base.row_count() {
            return Err(invalid_input(format!(
                "offsets cover {} contexts, model has {}",
                offsets.len(),
                base.row_count()
            )));
        }
        for (i, o) in offsets.iter().enumerate() {
            if o.len() != base.vocab_size() {
                return Err(invalid_input(format!(
                    "offset row {i} has {} entries, expected {}",
                    o.len(),
                    base.vocab_size()
                )));
            }
            if o.iter().any(|x| !x.is_finite()) {
                return Err(invalid_input(format!("offset row {i} contains a non-finite value")));
            }
        }
        Ok(Self { base, offsets })
    }

    /// Zero offsets: gate-on output equals the base distribution.
    pub fn zero(base: TabularAnchorModel) -> Self {
        let offsets = vec![vec![0.0; base.vocab_size()]; base.row_count()];
        Self { base, offsets }
    }

    /// Offsets drawn uniformly from `[-scale, scale]`, deterministic per stream.
    pub fn random(base: TabularAnchorModel, scale: f64, stream: &RngStream) -> Self {
        use rand::Rng;
        let mut rng = stream.rng();
        let offsets = (0..base.row_count())
            .map(|_| (0..base.vocab_size()).map(|_| rng.gen_range(-scale..=scale)).collect())
            .collect();
        Self { base, offsets }
    }

    /// Adversarial offsets: push `strength` logits onto each base row's least
    /// likely token, concentrating proposals exactly where the anchor puts
    /// the least mass.
    pub fn adversarial(base: TabularAnchorModel, strength: f64) -> Self {
        let offsets = base
            .rows
            .iter()
            .map(|row| {
                let mut worst = 0usize;
                for (i, &p) in row.probs().iter().enumerate() {
                    if p < row.probs()[worst] {
                        worst = i;
                    }
                }
                let mut o = vec![0.0; row.len()];
                o[worst] = strength;
                o
            })
            .collect();
        Self { base, offsets }
    }

    pub fn base(&self) -> &TabularAnchorModel {
        &self.base
    }

    /// The raw per-context offset rows, in canonical context order.
    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    /// Gate off: the stored base row, untouched.
    pub fn base_distribution(&self, context: &[TokenId]) -> Result<&Distribution> {
        self.base.anchor_distribution(context)
    }

    /// Gate on: softmax of the base row's log-probabilities plus the offset.
    pub fn masked_distribution(&self, context: &[TokenId]) -> Result<Distribution> {
        let idx = self.base.row_index(context)?;
        let row = &self.base.rows[idx];
        let offset = &self.offsets[idx];
        let logits: Vec<f64> = row
            .probs()
            .iter()
            .zip(offset)
            .map(|(&p, &o)| if p > 0.0 { p.ln() + o } else { f64::NEG_INFINITY })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        Distribution::from_weights(weights)
    }
}

/// Where proposal distributions `q` come from.
#[derive(Debug, Clone)]
pub enum ProposalSource {
    /// `q` equals the anchor distribution for the same context.
    Mirror,
    /// `q = (1 - epsilon) * p + epsilon * uniform`.
    EpsilonMixture { epsilon: f64 },
    /// `q` looked up in a separate table (same vocab, any order).
    IndependentTable(TabularAnchorModel),
    /// `q` from a gated residual model with the gate on.
    GatedResidual(GatedResidualModel),
}

impl ProposalSource {
    /// The proposal distribution for one mask slot given its chain context.
    pub fn proposal(&self, anchor: &TabularAnchorModel, context: &[TokenId]) -> Result<Distribution> {
        match self {
            ProposalSource::Mirror => Ok(anchor.anchor_distribution(context)?.clone()),
            ProposalSource::EpsilonMixture { epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(invalid_input(format!("epsilon must be in [0, 1], got {epsilon}")));
                }
                let p = anchor.anchor_distribution(context)?;
                let u = 1.0 / anchor.vocab_size() as f64;
                Distribution::new(
                    p.probs().iter().map(|&pp| (1.0 - epsilon) * pp + epsilon * u).collect(),
                )
            }
            ProposalSource::IndependentTable(table) => {
                if table.vocab_size() != anchor.vocab_size() {
                    return Err(invalid_input(format!(
                        "independent table vocab {} differs from anchor vocab {}",
                        table.vocab_size(),
                        anchor.vocab_size()
                    )));
                }
                Ok(table.anchor_distribution(context)?.clone())
            }
            ProposalSource::GatedResidual(gated) => gated.masked_distribution(context),
        }
    }

    /// One proposal distribution per mask position.
    ///
    /// Position `j` conditions on the committed context extended by the
    /// argmax chain of the earlier proposals, modeling how lookahead depth
    /// degrades proposals that cannot see their own predecessors' samples.
    pub fn proposal_distributions(
        &self,
        anchor: &TabularAnchorModel,
        committed_context: &[TokenId],
        n_masks: usize,
    ) -> Result<Vec<Distribution>> {
        if n_masks == 0 {
            return Err(invalid_input("n_masks must be >= 1"));
        }
        let mut chain = committed_context.to_vec();
        let mut out = Vec::with_capacity(n_masks);
        for _ in 0..n_masks {
            let q = self.proposal(anchor, &chain)?;
            chain.push(q.argmax());
            out.push(q);
        }
        Ok(out)
    }
}
