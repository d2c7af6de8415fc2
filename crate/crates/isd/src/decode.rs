//! Introspective strided decoding.
//!
//! The decoder commits multiple tokens per forward pass while provably
//! preserving the anchor model's autoregressive output distribution. Each
//! step fuses two jobs into one pass:
//!
//! * **introspection** — the previous step's proposals, now filled in as
//!   clean tokens, yield causal anchor distributions `p_k`, and each proposal
//!   is verified with the accept-or-resample rule;
//! * **generation** — fresh mask slots emit the next round of proposals `q`.
//!
//! Step shapes and accounting follow a renewal structure:
//!
//! * a **bootstrap** step opens the run: the last prompt position yields a
//!   quality-guaranteed free token (a plain AR sample) and `N - 1` mask slots
//!   yield proposals; `N` query tokens, nothing committed yet;
//! * a **fused** step processes `2N - 1` query tokens (the carried token plus
//!   the `N - 1` filled proposals, plus fresh mask slots). It always commits
//!   at least one token. On all-accept a bonus token is sampled from the
//!   final anchor and committed immediately; on a rejection the surviving
//!   prefix plus the residual resample is committed and pending proposals are
//!   discarded;
//! * a **propose-only** step follows a rejection: the resampled token must be
//!   forwarded before anything can anchor on it, so the pass carries it plus
//!   `N - 1` fresh masks (`N` query tokens) and commits nothing.
//!
//! The free token produced by a bootstrap or propose-only step is committed
//! by the next fused record; the bonus token is committed by the record that
//! samples it. Tokens-per-forward is always measured from the trace, so the
//! ledger cannot drift from the closed-form analysis silently.

use std::collections::BTreeSet;
use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid_config, invalid_input, Result};
use crate::prob::{accept_or_resample, Distribution, RngStream, TokenId};
use crate::toy::{GatedResidualModel, ProposalSource, TabularAnchorModel};

/// How proposal tokens are picked from their distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalMode {
    /// Sample from `q`; verification uses the full `q` in the ratio.
    Sample,
    /// Take `argmax(q)`; verification treats `q` as a point mass on that
    /// token, so the accept probability is `p(x)` and the anchor
    /// distribution is still preserved exactly.
    Argmax,
}

/// Decoding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideConfig {
    /// Stride `N >= 2`; use [`decode_ar`] for the plain AR baseline.
    pub stride: usize,
    /// Loose threshold: acceptance ratio is multiplied by `1 + tau`.
    /// `tau > 0` trades exactness for acceptance; must be 0 in lossless mode.
    pub tau: f64,
    pub proposal_mode: ProposalMode,
    /// Marks a run whose proposals come from a gated residual model and whose
    /// anchors come from the base model only; see [`decode_lossless`].
    pub lossless: bool,
    /// Stop once this many new tokens are committed. A multi-token commit may
    /// overshoot by up to `stride`; the trace keeps the full count.
    pub max_new_tokens: usize,
    /// Decoding ends once any of these is committed.
    pub stop_tokens: BTreeSet<TokenId>,
    pub seed: u64,
}

impl StrideConfig {
    pub fn new(stride: usize, max_new_tokens: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            stride,
            tau: 0.0,
            proposal_mode: ProposalMode::Sample,
            lossless: false,
            max_new_tokens,
            stop_tokens: BTreeSet::new(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 2 {
            return Err(invalid_config(format!(
                "stride must be >= 2 (got {}); stride 1 is the AR baseline",
                self.stride
            )));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(invalid_config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.lossless && self.tau != 0.0 {
            return Err(invalid_config(format!(
                "lossless mode requires tau = 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// What kind of forward pass a record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Bootstrap,
    Fused,
    ProposeOnly,
}

/// Per-forward accounting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardRecord {
    pub kind: StepKind,
    /// Query tokens processed by this pass under variable accounting.
    pub query_tokens: usize,
    /// Tokens appended to the output by this pass.
    pub committed_tokens: usize,
    /// 1-based proposal index at which verification failed, if it did.
    pub rejection_position: Option<usize>,
    /// Whether all proposals were accepted and a bonus token was committed.
    pub bonus_emitted: bool,
}

/// Everything observable about one decode run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    /// Stride the run was configured with (1 for the AR baseline).
    pub stride: usize,
    pub records: Vec<ForwardRecord>,
    /// All committed tokens, in order, not truncated at stop tokens.
    pub output: Vec<TokenId>,
    /// Clamped coin ratio `min(1, (1 + tau) p/q)` of every verification
    /// event, in order.
    pub acceptance_ratios: Vec<f64>,
    /// The same events scored without the loose threshold,
    /// `min(1, p/q)` — the introspective acceptance rate terms.
    pub raw_ratios: Vec<f64>,
    /// Index into `output` of the first committed stop token, if any.
    pub stop_index: Option<usize>,
}

impl DecodeTrace {
    /// Sum of committed tokens across records; equals `output.len()`.
    pub fn committed_total(&self) -> usize {
        self.records.iter().map(|r| r.committed_tokens).sum()
    }

    /// Output truncated at (and including) the first stop token.
    pub fn output_until_stop(&self) -> &[TokenId] {
        match self.stop_index {
            Some(i) => &self.output[..=i],
            None => &self.output,
        }
    }

    /// Mean coin ratio over all verification events, if any happened. With
    /// `tau > 0` this is the relaxed quantity the loose threshold inflates.
    pub fn mean_acceptance_ratio(&self) -> Option<f64> {
        if self.acceptance_ratios.is_empty() {
            None
        } else {
            Some(self.acceptance_ratios.iter().sum::<f64>() / self.acceptance_ratios.len() as f64)
        }
    }

    /// Introspective acceptance rate: mean of `min(1, p/q)` over the
    /// verification events, independent of the loose threshold.
    pub fn alpha(&self) -> Option<f64> {
        if self.raw_ratios.is_empty() {
            None
        } else {
            Some(self.raw_ratios.iter().sum::<f64>() / self.raw_ratios.len() as f64)
        }
    }

    /// Writes the trace as JSON lines: one object per record, then a trailer
    /// object with the output tokens and summary metrics.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        let (tpf, oh_variable) = match measure_tpf_oh(self, QueryAccounting::Variable) {
            Ok(v) => (Some(v.0), Some(v.1)),
            Err(_) => (None, None),
        };
        let oh_fixed = measure_tpf_oh(self, QueryAccounting::Fixed).ok().map(|v| v.1);
        let trailer = TraceTrailer {
            output: &self.output,
            stride: self.stride,
            committed_total: self.committed_total(),
            stop_index: self.stop_index,
            tpf,
            oh_variable,
            oh_fixed,
            mean_acceptance_ratio: self.mean_acceptance_ratio(),
            alpha: self.alpha(),
        };
        serde_json::to_writer(&mut w, &trailer)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceTrailer<'a> {
    output: &'a [TokenId],
    stride: usize,
    committed_total: usize,
    stop_index: Option<usize>,
    tpf: Option<f64>,
    oh_variable: Option<f64>,
    oh_fixed: Option<f64>,
    mean_acceptance_ratio: Option<f64>,
    alpha: Option<f64>,
}

/// How propose-only and bootstrap passes are charged for query tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryAccounting {
    /// Passes are charged what they actually process: `N` for bootstrap and
    /// propose-only steps, `2N - 1` for fused steps.
    Variable,
    /// Every pass is padded to the fused shape `2N - 1`, the fixed-graph
    /// serving convention.
    Fixed,
}

/// Tokens-per-forward and compute overhead measured from a trace.
///
/// `tpf = committed / forwards`; `oh = query tokens / committed` under the
/// chosen accounting. An AR trace measures `(1, 1)` by definition.
pub fn measure_tpf_oh(trace: &DecodeTrace, accounting: QueryAccounting) -> Result<(f64, f64)> {
    if trace.records.is_empty() {
        return Err(invalid_input("trace has no records"));
    }
    let committed = trace.committed_total();
    if committed == 0 {
        return Err(invalid_input("trace committed no tokens"));
    }
    let fixed_per_record = 2 * trace.stride - 1;
    let queries: usize = trace
        .records
        .iter()
        .map(|r| match accounting {
            QueryAccounting::Variable => r.query_tokens,
            QueryAccounting::Fixed => fixed_per_record,
        })
        .sum();
    let tpf = committed as f64 / trace.records.len() as f64;
    let oh = queries as f64 / committed as f64;
    Ok((tpf, oh))
}

// Proposal tokens paired with the distributions they were drawn from.
type Pending = Vec<(TokenId, Distribution)>;

// Only the last `order` committed tokens (plus the carried one) can condition
// anything, so the chain starts from that window instead of the full history.
fn chain_window(
    committed: &[TokenId],
    order: usize,
    carried: Option<TokenId>,
) -> Vec<TokenId> {
    let start = committed.len().saturating_sub(order);
    let mut window = committed[start..].to_vec();
    if let Some(t) = carried {
        window.push(t);
    }
    window
}

fn gen_proposals(
    source: &ProposalSource,
    anchor: &TabularAnchorModel,
    chain_start: Vec<TokenId>,
    count: usize,
    mode: ProposalMode,
    rng: &mut ChaCha8Rng,
) -> Result<Pending> {
    // Proposals are generated sequentially: each conditions on the chain of
    // earlier proposal tokens, which on the all-accept path is exactly the
    // context the verifier will use.
    let mut chain = chain_start;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let q = source.proposal(anchor, &chain)?;
        let token = match mode {
            ProposalMode::Sample => q.sample(rng),
            ProposalMode::Argmax => q.argmax(),
        };
        chain.push(token);
        out.push((token, q));
    }
    Ok(out)
}

/// Runs introspective strided decoding until `max_new_tokens` or a stop token
/// is committed.
pub fn decode(
    anchor: &TabularAnchorModel,
    proposals: &ProposalSource,
    prompt: &[TokenId],
    cfg: &StrideConfig,
) -> Result<DecodeTrace> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(invalid_input("prompt must be non-empty"));
    }
    for &t in prompt {
        if (t as usize) >= anchor.vocab_size() {
            return Err(invalid_input(format!(
                "prompt token {t} out of range for vocab {}",
                anchor.vocab_size()
            )));
        }
    }

    let mut trace = DecodeTrace {
        stride: cfg.stride,
        records: Vec::new(),
        output: Vec::new(),
        acceptance_ratios: Vec::new(),
        raw_ratios: Vec::new(),
        stop_index: None,
    };
    if cfg.max_new_tokens == 0 {
        return Ok(trace);
    }

    let n = cfg.stride;
    let mut rng = RngStream::new(cfg.seed).rng();
    let mut committed: Vec<TokenId> = prompt.to_vec();
    let prompt_len = prompt.len();

    // Bootstrap: free token from the last prompt position plus N - 1
    // proposals from the mask slots.
    let free = anchor.anchor_distribution(&committed)?.sample(&mut rng);
    let mut pending = gen_proposals(
        proposals,
        anchor,
        chain_window(&committed, anchor.order(), Some(free)),
        n - 1,
        cfg.proposal_mode,
        &mut rng,
    )?;
    let mut pending_free = Some(free);
    trace.records.push(ForwardRecord {
        kind: StepKind::Bootstrap,
        query_tokens: n,
        committed_tokens: 0,
        rejection_position: None,
        bonus_emitted: false,
    });

    let commit =
        |committed: &mut Vec<TokenId>, trace: &mut DecodeTrace, token: TokenId| -> usize {
            committed.push(token);
            trace.output.push(token);
            if trace.stop_index.is_none() && cfg.stop_tokens.contains(&token) {
                trace.stop_index = Some(trace.output.len() - 1);
            }
            1
        };

    loop {
        // Fused step: commit the carried free token if it is still pending,
        // verify the proposals in order, then either bonus or resample.
        let mut step_committed = 0usize;
        if let Some(f) = pending_free.take() {
            step_committed += commit(&mut committed, &mut trace, f);
        }
        let mut rejection_position = None;
        for (j, (token, q)) in pending.iter().enumerate() {
            let p = anchor.anchor_distribution(&committed)?;
            let raw = match cfg.proposal_mode {
                ProposalMode::Sample => (p.prob(*token) / q.prob(*token)).min(1.0),
                ProposalMode::Argmax => p.prob(*token).min(1.0),
            };
            let decision = match cfg.proposal_mode {
                ProposalMode::Sample => accept_or_resample(p, q, *token, cfg.tau, &mut rng)?,
                ProposalMode::Argmax => {
                    let point = Distribution::point_mass(anchor.vocab_size(), *token);
                    accept_or_resample(p, &point, *token, cfg.tau, &mut rng)?
                }
            };
            trace.acceptance_ratios.push(decision.acceptance_probability);
            trace.raw_ratios.push(raw);
            step_committed += commit(&mut committed, &mut trace, decision.token);
            if !decision.accepted {
                rejection_position = Some(j + 1);
                break;
            }
        }

        let bonus_emitted = rejection_position.is_none();
        if bonus_emitted {
            // All proposals accepted: sample the bonus from the final anchor
            // and commit it immediately; it carries into the next fused pass
            // as the already-committed free token.
            let bonus = anchor.anchor_distribution(&committed)?.sample(&mut rng);
            step_committed += commit(&mut committed, &mut trace, bonus);
            pending = gen_proposals(
                proposals,
                anchor,
                chain_window(&committed, anchor.order(), None),
                n - 1,
                cfg.proposal_mode,
                &mut rng,
            )?;
        }
        trace.records.push(ForwardRecord {
            kind: StepKind::Fused,
            query_tokens: 2 * n - 1,
            committed_tokens: step_committed,
            rejection_position,
            bonus_emitted,
        });

        let done = trace.output.len() >= cfg.max_new_tokens || trace.stop_index.is_some();
        if done {
            break;
        }

        if !bonus_emitted {
            // Propose-only recovery: forward the resampled token, draw a new
            // free token from its anchor, and refill the mask slots.
            let free = anchor.anchor_distribution(&committed)?.sample(&mut rng);
            pending = gen_proposals(
                proposals,
                anchor,
                chain_window(&committed, anchor.order(), Some(free)),
                n - 1,
                cfg.proposal_mode,
                &mut rng,
            )?;
            pending_free = Some(free);
            trace.records.push(ForwardRecord {
                kind: StepKind::ProposeOnly,
                query_tokens: n,
                committed_tokens: 0,
                rejection_position: None,
                bonus_emitted: false,
            });
        }
    }

    debug_assert_eq!(trace.committed_total(), trace.output.len());
    debug_assert_eq!(committed.len(), prompt_len + trace.output.len());
    Ok(trace)
}

/// Plain autoregressive sampling: one committed token per forward.
pub fn decode_ar(
    anchor: &TabularAnchorModel,
    prompt: &[TokenId],
    max_new_tokens: usize,
    seed: u64,
) -> Result<Vec<TokenId>> {
    Ok(decode_ar_trace(anchor, prompt, max_new_tokens, seed)?.output)
}

/// AR baseline with full trace accounting (`stride = 1`, one query and one
/// committed token per record).
pub fn decode_ar_trace(
    anchor: &TabularAnchorModel,
    prompt: &[TokenId],
    max_new_tokens: usize,
    seed: u64,
) -> Result<DecodeTrace> {
    if prompt.is_empty() {
        return Err(invalid_input("prompt must be non-empty"));
    }
    let mut rng = RngStream::new(seed).rng();
    let mut committed = prompt.to_vec();
    let mut trace = DecodeTrace {
        stride: 1,
        records: Vec::new(),
        output: Vec::new(),
        acceptance_ratios: Vec::new(),
        raw_ratios: Vec::new(),
        stop_index: None,
    };
    for _ in 0..max_new_tokens {
        let token = anchor.anchor_distribution(&committed)?.sample(&mut rng);
        committed.push(token);
        trace.output.push(token);
        trace.records.push(ForwardRecord {
            kind: StepKind::Fused,
            query_tokens: 1,
            committed_tokens: 1,
            rejection_position: None,
            bonus_emitted: false,
        });
    }
    Ok(trace)
}

/// Bit-for-bit lossless decoding with a gated residual proposer.
///
/// Proposals come from the gated model with the gate on; every introspection
/// anchor comes from the base model only (gate off). The committed sequence
/// therefore follows exactly the base model's AR distribution, whatever the
/// residual does.
pub fn decode_lossless(
    base: &TabularAnchorModel,
    gated: &GatedResidualModel,
    prompt: &[TokenId],
    cfg: &StrideConfig,
) -> Result<DecodeTrace> {
    if !cfg.lossless {
        return Err(invalid_config("decode_lossless requires cfg.lossless = true"));
    }
    cfg.validate()?; // enforces tau = 0 with lossless
    if gated.base() != base {
        return Err(invalid_input(
            "gated residual model is built on a different base model than the anchor",
        ));
    }
    let source = ProposalSource::GatedResidual(gated.clone());
    decode(base, &source, prompt, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Distribution;

    fn dist(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn mirror_cfg(stride: usize, max_new: usize, seed: u64) -> StrideConfig {
        StrideConfig::new(stride, max_new, seed).unwrap()
    }

    #[test]
    fn stride_config_validation() {
        assert!(StrideConfig::new(1, 10, 0).is_err());
        let mut cfg = StrideConfig::new(2, 10, 0).unwrap();
        cfg.lossless = true;
        cfg.tau = 0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_max_new_tokens_is_empty_trace() {
        let m = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(1)).unwrap();
        let trace = decode(&m, &ProposalSource::Mirror, &[0], &mirror_cfg(3, 0, 7)).unwrap();
        assert!(trace.records.is_empty());
        assert!(trace.output.is_empty());
    }

    #[test]
    fn mirror_proposals_always_accept() {
        // With sequential chain conditioning, mirror proposals equal the
        // verification anchor exactly, so every ratio is 1 and every fused
        // step all-accepts.
        let m = TabularAnchorModel::random(4, 2, 0.8, &RngStream::new(2)).unwrap();
        let trace = decode(&m, &ProposalSource::Mirror, &[0, 1], &mirror_cfg(3, 200, 7)).unwrap();
        assert!(trace.acceptance_ratios.iter().all(|&r| r == 1.0));
        assert!(trace.records.iter().all(|r| r.kind != StepKind::ProposeOnly));
        let (tpf, _) = measure_tpf_oh(&trace, QueryAccounting::Variable).unwrap();
        // Bootstrap dilutes TPF below the all-accept limit N on finite runs.
        assert!(tpf > 2.8 && tpf <= 3.0, "tpf = {tpf}");
    }

    #[test]
    fn first_iteration_all_accept_commits_stride_plus_one() {
        let m = TabularAnchorModel::random(4, 1, 0.8, &RngStream::new(3)).unwrap();
        let trace = decode(&m, &ProposalSource::Mirror, &[0], &mirror_cfg(3, 1, 7)).unwrap();
        // Bootstrap plus one fused record: free + 2 accepted + bonus = 4.
        assert_eq!(trace.records.len(), 2);
        assert_eq!(trace.records[1].committed_tokens, 4);
        assert!(trace.records[1].bonus_emitted);
        assert_eq!(trace.output.len(), 4);
    }

    #[test]
    fn steady_state_all_accept_commits_stride_per_fused_record() {
        let m = TabularAnchorModel::random(4, 1, 0.8, &RngStream::new(4)).unwrap();
        let trace = decode(&m, &ProposalSource::Mirror, &[0], &mirror_cfg(3, 50, 7)).unwrap();
        for pair in trace.records.windows(2) {
            if pair[1].kind == StepKind::Fused && pair[1].bonus_emitted {
                let expected = match pair[0].kind {
                    // Carried token was still uncommitted after bootstrap.
                    StepKind::Bootstrap | StepKind::ProposeOnly => 4,
                    // Previous bonus was already committed.
                    StepKind::Fused => 3,
                };
                assert_eq!(pair[1].committed_tokens, expected);
            }
        }
    }

    #[test]
    fn noisy_proposals_trigger_propose_only_recovery() {
        let m = TabularAnchorModel::random(4, 1, 0.3, &RngStream::new(5)).unwrap();
        let src = ProposalSource::EpsilonMixture { epsilon: 0.9 };
        let trace = decode(&m, &src, &[0], &mirror_cfg(3, 300, 11)).unwrap();
        let mut saw_rejection = false;
        for (i, r) in trace.records.iter().enumerate() {
            match r.kind {
                StepKind::Fused => {
                    assert!(r.committed_tokens >= 1);
                    if let Some(j) = r.rejection_position {
                        saw_rejection = true;
                        assert!(!r.bonus_emitted);
                        // Rejection at 1-based proposal j commits at most
                        // j + 1 tokens (1 carried + j - 1 accepted + 1 resampled).
                        assert!(r.committed_tokens == j + 1 || r.committed_tokens == j);
                        if i + 1 < trace.records.len() {
                            assert_eq!(trace.records[i + 1].kind, StepKind::ProposeOnly);
                        }
                    }
                }
                StepKind::ProposeOnly => {
                    assert_eq!(r.committed_tokens, 0);
                    assert_eq!(r.query_tokens, 3);
                    if i + 1 < trace.records.len() {
                        assert_eq!(trace.records[i + 1].kind, StepKind::Fused);
                    }
                }
                StepKind::Bootstrap => assert_eq!(i, 0),
            }
        }
        assert!(saw_rejection, "epsilon 0.9 should reject somewhere in 300 tokens");
        assert_eq!(trace.committed_total(), trace.output.len());
    }

    #[test]
    fn near_deterministic_anchor_with_uniform_proposals_degenerates_to_ar_rate() {
        // Near-one-hot rows over a wide vocabulary with epsilon = 1
        // proposals: the overlap between anchor and uniform is tiny, almost
        // every proposal rejects, and TPF approaches 1.
        let v = 32usize;
        let rows: Vec<Distribution> = (0..v + 1)
            .map(|i| {
                let mut w = vec![0.0002; v];
                w[i % v] = 1.0 - 0.0002 * (v - 1) as f64;
                dist(&w)
            })
            .collect();
        let m = TabularAnchorModel::from_rows(v, 1, rows).unwrap();
        let src = ProposalSource::EpsilonMixture { epsilon: 1.0 };
        let trace = decode(&m, &src, &[0], &mirror_cfg(4, 2000, 13)).unwrap();
        let (tpf, _) = measure_tpf_oh(&trace, QueryAccounting::Variable).unwrap();
        assert!(tpf < 1.1, "tpf = {tpf}");
    }

    #[test]
    fn determinism() {
        let m = TabularAnchorModel::random(5, 1, 0.7, &RngStream::new(6)).unwrap();
        let src = ProposalSource::EpsilonMixture { epsilon: 0.3 };
        let cfg = mirror_cfg(3, 64, 99);
        let a = decode(&m, &src, &[1, 2], &cfg).unwrap();
        let b = decode(&m, &src, &[1, 2], &cfg).unwrap();
        assert_eq!(a, b);
        let c = decode(&m, &src, &[1, 2], &mirror_cfg(3, 64, 100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stop_token_truncates_output_but_not_the_ledger() {
        let m = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(8)).unwrap();
        let mut cfg = mirror_cfg(3, 500, 21);
        cfg.stop_tokens.insert(2);
        let trace = decode(&m, &ProposalSource::Mirror, &[0], &cfg).unwrap();
        let stop = trace.stop_index.expect("token 2 appears quickly in a dirichlet(1) model");
        assert_eq!(trace.output[stop], 2);
        assert_eq!(trace.output_until_stop().len(), stop + 1);
        assert!(!trace.output_until_stop()[..stop].contains(&2));
        // Ledger still counts every committed token, including past the stop.
        assert_eq!(trace.committed_total(), trace.output.len());
    }

    #[test]
    fn stop_token_inside_prompt_is_permitted() {
        let m = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(16)).unwrap();
        let mut cfg = mirror_cfg(3, 40, 4);
        cfg.stop_tokens.insert(1);
        let trace = decode(&m, &ProposalSource::Mirror, &[1, 1], &cfg).unwrap();
        // The prompt's stop tokens do not end the run; only committed ones do.
        assert!(!trace.output.is_empty());
    }

    #[test]
    fn deterministic_anchor_gives_a_unique_ar_continuation() {
        // One-hot rows: 0 -> 1 -> 2 -> 3 -> 0 -> ...
        let rows: Vec<Distribution> = (0..5)
            .map(|i| {
                if i == 0 {
                    Distribution::point_mass(4, 0)
                } else {
                    Distribution::point_mass(4, (i as u32) % 4)
                }
            })
            .collect();
        let m = TabularAnchorModel::from_rows(4, 1, rows).unwrap();
        let a = decode_ar(&m, &[0], 6, 1).unwrap();
        let b = decode_ar(&m, &[0], 6, 999).unwrap();
        assert_eq!(a, vec![1, 2, 3, 0, 1, 2]);
        assert_eq!(a, b); // seed-independent under a deterministic model
    }

    #[test]
    fn ar_trace_measures_unit_tpf_and_oh() {
        let m = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(9)).unwrap();
        let trace = decode_ar_trace(&m, &[0], 100, 3).unwrap();
        let (tpf, ohv) = measure_tpf_oh(&trace, QueryAccounting::Variable).unwrap();
        let (_, ohf) = measure_tpf_oh(&trace, QueryAccounting::Fixed).unwrap();
        assert_eq!(tpf, 1.0);
        assert_eq!(ohv, 1.0);
        assert_eq!(ohf, 1.0);
        assert_eq!(decode_ar(&m, &[0], 100, 3).unwrap(), trace.output);
    }

    #[test]
    fn measure_on_a_synthetic_fused_record() {
        let trace = DecodeTrace {
            stride: 3,
            records: vec![ForwardRecord {
                kind: StepKind::Fused,
                query_tokens: 5,
                committed_tokens: 2,
                rejection_position: Some(1),
                bonus_emitted: false,
            }],
            output: vec![0, 1],
            acceptance_ratios: vec![0.4],
            raw_ratios: vec![0.4],
            stop_index: None,
        };
        let (tpf, ohv) = measure_tpf_oh(&trace, QueryAccounting::Variable).unwrap();
        let (_, ohf) = measure_tpf_oh(&trace, QueryAccounting::Fixed).unwrap();
        assert_eq!(tpf, 2.0);
        assert_eq!(ohv, 2.5);
        assert_eq!(ohf, 2.5);
    }

    #[test]
    fn measure_rejects_empty_and_tokenless_traces() {
        let empty = DecodeTrace {
            stride: 3,
            records: vec![],
            output: vec![],
            acceptance_ratios: vec![],
            raw_ratios: vec![],
            stop_index: None,
        };
        assert!(measure_tpf_oh(&empty, QueryAccounting::Variable).is_err());
        let no_tokens = DecodeTrace {
            stride: 3,
            records: vec![ForwardRecord {
                kind: StepKind::Bootstrap,
                query_tokens: 3,
                committed_tokens: 0,
                rejection_position: None,
                bonus_emitted: false,
            }],
            output: vec![],
            acceptance_ratios: vec![],
            raw_ratios: vec![],
            stop_index: None,
        };
        assert!(measure_tpf_oh(&no_tokens, QueryAccounting::Variable).is_err());
    }

    #[test]
    fn tau_raises_mean_acceptance_on_fixed_seeds() {
        let m = TabularAnchorModel::random(4, 1, 0.5, &RngStream::new(10)).unwrap();
        let src = ProposalSource::EpsilonMixture { epsilon: 0.5 };
        let mut last = 0.0;
        for &tau in &[0.0, 0.1, 0.2, 0.5, 1.0] {
            let mut cfg = mirror_cfg(3, 5_000, 77);
            cfg.tau = tau;
            let trace = decode(&m, &src, &[0], &cfg).unwrap();
            let mean = trace.mean_acceptance_ratio().unwrap();
            assert!(mean >= last, "tau {tau}: {mean} < {last}");
            last = mean;
        }
    }

    #[test]
    fn lossless_requires_matching_base_and_flag() {
        let base = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(12)).unwrap();
        let other = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(13)).unwrap();
        let gated = GatedResidualModel::zero(base.clone());
        let mut cfg = mirror_cfg(3, 10, 1);
        assert!(decode_lossless(&base, &gated, &[0], &cfg).is_err()); // flag off
        cfg.lossless = true;
        assert!(decode_lossless(&base, &gated, &[0], &cfg).is_ok());
        assert!(decode_lossless(&other, &gated, &[0], &cfg).is_err()); // wrong base
    }

    #[test]
    fn lossless_zero_residual_accepts_everything() {
        let base = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(14)).unwrap();
        let gated = GatedResidualModel::zero(base.clone());
        let mut cfg = mirror_cfg(3, 100, 5);
        cfg.lossless = true;
        let trace = decode_lossless(&base, &gated, &[0], &cfg).unwrap();
        assert!(trace.acceptance_ratios.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn jsonl_export_shape() {
        let m = TabularAnchorModel::random(4, 1, 1.0, &RngStream::new(15)).unwrap();
        let trace = decode(&m, &ProposalSource::Mirror, &[0], &mirror_cfg(3, 10, 2)).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), trace.records.len() + 1);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["kind"], "bootstrap");
        assert_eq!(first["query_tokens"], 3);
        let trailer: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert!(trailer["output"].is_array());
        assert!(trailer["tpf"].is_number());
    }
}
