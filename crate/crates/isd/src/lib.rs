//! Introspective strided decoding at desk scale.
//!
//! This crate implements, over small tabular language models, a decoding
//! algorithm that commits multiple tokens per forward pass while provably
//! preserving the base model's autoregressive output distribution, together
//! with the analysis apparatus around it:
//!
//! * [`prob`] — distributions, reproducible RNG streams, the speculative
//!   accept/resample calculus, and the introspective acceptance rate;
//! * [`toy`] — tabular anchor models, proposal sources, and the gated
//!   residual model behind bit-for-bit lossless decoding;
//! * [`mod@decode`] — the strided decoder itself: fused stride-plus-introspection
//!   stepping, adaptive stride via acceptance, bonus tokens, the loose
//!   threshold `tau`, argmax proposals, and trace-level TPF/OH measurement;
//! * [`sim`] — Bernoulli/Binomial process simulators for strided decoding,
//!   block diffusion, and branched drafting;
//! * [`analytics`] — the matching closed forms: tokens-per-forward, compute
//!   overhead under variable and fixed query accounting, efficiency curves,
//!   and break-even points;
//! * [`train`] — training-side attention masks over `[noisy | clean]`
//!   sequences and the split/auto-balanced losses;
//! * [`serving`] — a discrete-event batching simulator contrasting
//!   continuous batching with block-synchronized batching;
//! * [`export`] — the shared CSV sweep schema.
//!
//! Start with `examples/` for runnable tours of each capability.

pub mod analytics;
pub mod decode;
pub mod error;
pub mod export;
pub mod prob;
pub mod serving;
pub mod sim;
pub mod toy;
pub mod train;

pub use decode::{
    decode, decode_ar, decode_ar_trace, decode_lossless, measure_tpf_oh, DecodeTrace,
    ForwardRecord, ProposalMode, QueryAccounting, StepKind, StrideConfig,
};
pub use error::{Error, Result};
pub use prob::{
    accept_or_resample, introspective_acceptance_rate, one_step_output_distribution,
    residual_distribution, AcceptanceDecision, Distribution, RngStream, TokenId,
};
pub use toy::{GatedResidualModel, ProposalSource, TabularAnchorModel};
