//! Probability primitives: finite distributions, reproducible RNG streams,
//! and the speculative accept/resample calculus.
//!
//! The central identity lives in [`one_step_output_distribution`]: composing
//! "accept a proposed token with probability `min(1, p(x)/q(x))`, otherwise
//! resample from `normalize(max(0, p - q))`" yields exactly the target
//! distribution `p` when the loose threshold is zero. Every decoder guarantee
//! in this crate reduces to that identity.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_input, Error, Result};

/// Token identifier, an index into a vocabulary of size `V`.
pub type TokenId = u32;

/// Normalization tolerance for [`Distribution`]: entries must sum to 1
/// within this absolute error.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Residual-mass floor: below this unnormalized mass, `p` and `q` are treated
/// as identical and the residual falls back to `p` (rejection cannot occur
/// under exact arithmetic when `p == q`; this guards float noise).
pub const RESIDUAL_MASS_FLOOR: f64 = 1e-12;

/// A normalized probability vector over a finite vocabulary.
///
/// Invariants (checked at construction): every entry is finite and `>= 0`,
/// entries sum to 1 within [`NORMALIZATION_TOL`], and the vocabulary has at
/// least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(invalid_input(format!(
                "distribution needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(invalid_input(format!("probability [{i}] = {p} is not in [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(invalid_input(format!(
                "probabilities sum to {sum}, outside 1 +/- {NORMALIZATION_TOL}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes arbitrary non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(invalid_input(format!("weights sum to {sum}, cannot normalize")));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// The uniform distribution over `vocab` tokens.
    pub fn uniform(vocab: usize) -> Self {
        assert!(vocab >= 2, "vocab must be >= 2");
        Self { probs: vec![1.0 / vocab as f64; vocab] }
    }

    /// A distribution with all mass on one token.
    pub fn point_mass(vocab: usize, token: TokenId) -> Self {
        assert!(vocab >= 2, "vocab must be >= 2");
        assert!((token as usize) < vocab, "token {token} out of range");
        let mut probs = vec![0.0; vocab];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    /// Vocabulary size.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least two entries by construction
    }

    /// Probability mass of `token`.
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token as usize]
    }

    /// The raw probability vector.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Samples a token by CDF inversion.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> TokenId {
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i as TokenId;
            }
        }
        // Float accumulation left u just past the total; return the last
        // token that actually carries mass.
        last_positive as TokenId
    }

    /// The highest-probability token, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Total variation distance `0.5 * sum |p - q|`.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        check_same_vocab(self, other)?;
        let tv = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        Ok(tv)
    }
}

fn check_same_vocab(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: q.len() });
    }
    Ok(())
}

/// A named, reproducible random stream.
///
/// Backed by ChaCha8 keyed by `seed` with the ChaCha 64-bit stream field set
/// to `stream`, so identical `(seed, stream)` pairs produce identical draw
/// sequences on every platform, and distinct streams are independent. This is
/// what makes parallel simulations mergeable without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// A sibling stream with the same seed and a different stream id.
    pub fn substream(&self, stream: u64) -> Self {
        Self { seed: self.seed, stream }
    }

    /// Instantiates the generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Outcome of one accept-or-resample verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceDecision {
    /// Whether the proposed token was kept.
    pub accepted: bool,
    /// The surviving token: the proposal if accepted, a residual draw otherwise.
    pub token: TokenId,
    /// The clamped ratio `min(1, (1 + tau) * p(x) / q(x))` used for the coin.
    pub acceptance_probability: f64,
}

/// The corrected distribution `normalize(max(0, p - q))`.
///
/// Falls back to `p` itself when the unnormalized residual mass is below
/// [`RESIDUAL_MASS_FLOOR`], which can only happen (up to float noise) when
/// `p == q` and rejection is impossible anyway.
pub fn residual_distribution(p: &Distribution, q: &Distribution) -> Result<Distribution> {
    check_same_vocab(p, q)?;
    let raw: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    let mass: f64 = raw.iter().sum();
    if mass < RESIDUAL_MASS_FLOOR {
        return Ok(p.clone());
    }
    Distribution::new(raw.into_iter().map(|w| w / mass).collect())
}

/// Verifies a proposed token against its anchor distribution.
///
/// Accepts with probability `min(1, (1 + tau) * p(token) / q(token))`; on
/// rejection the returned token is resampled from
/// [`residual_distribution`]`(p, q)`. With `tau = 0` the marginal law of the
/// returned token is exactly `p` (see [`one_step_output_distribution`]).
pub fn accept_or_resample<R: Rng>(
    p: &Distribution,
    q: &Distribution,
    token: TokenId,
    tau: f64,
    rng: &mut R,
) -> Result<AcceptanceDecision> {
    check_same_vocab(p, q)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(invalid_input(format!("tau must be >= 0, got {tau}")));
    }
    if (token as usize) >= q.len() {
        return Err(invalid_input(format!("token {token} out of range for vocab {}", q.len())));
    }
    let q_t = q.prob(token);
    if q_t <= 0.0 {
        return Err(invalid_input(format!(
            "token {token} has zero proposal probability; it cannot have been sampled from q"
        )));
    }
    let ratio = ((1.0 + tau) * p.prob(token) / q_t).min(1.0);
    if rng.gen::<f64>() < ratio {
        Ok(AcceptanceDecision { accepted: true, token, acceptance_probability: ratio })
    } else {
        let residual = residual_distribution(p, q)?;
        Ok(AcceptanceDecision {
            accepted: false,
            token: residual.sample(rng),
            acceptance_probability: ratio,
        })
    }
}

/// Exact marginal distribution of the token produced by
/// [`accept_or_resample`] when the input token is drawn from `q`.
///
/// For each token `x` the output mass is
/// `min(q(x), (1 + tau) * p(x))` plus the total rejection mass routed through
/// the residual distribution. At `tau = 0` this equals `p` identically, which
/// is the distribution-preservation guarantee of speculative verification.
pub fn one_step_output_distribution(
    p: &Distribution,
    q: &Distribution,
    tau: f64,
) -> Result<Distribution> {
    check_same_vocab(p, q)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(invalid_input(format!("tau must be >= 0, got {tau}")));
    }
    let accepted: Vec<f64> = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pp, &qq)| qq.min((1.0 + tau) * pp))
        .collect();
    let accepted_mass: f64 = accepted.iter().sum();
    let rejection_mass = (1.0 - accepted_mass).max(0.0);
    let residual = residual_distribution(p, q)?;
    let out: Vec<f64> = accepted
        .iter()
        .zip(residual.probs())
        .map(|(&a, &r)| a + rejection_mass * r)
        .collect();
    Distribution::new(out)
}

/// Mean over positions of `min(1, p_k(x_k) / q_k(x_k))`.
///
/// This is the introspective acceptance rate: how strongly a model endorses
/// its own generated tokens when it re-examines them under the causal anchor
/// distribution. Autoregressive generation has `p = q` by construction and
/// scores exactly 1.
pub fn introspective_acceptance_rate<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Distribution, &'a Distribution, TokenId)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, q, token) in pairs {
        check_same_vocab(p, q)?;
        let q_t = q.prob(token);
        if q_t <= 0.0 {
            return Err(invalid_input(format!(
                "token {token} has zero proposal probability at position {count}"
            )));
        }
        total += (p.prob(token) / q_t).min(1.0);
        count += 1;
    }
    if count == 0 {
        return Err(invalid_input("acceptance rate of an empty sequence is undefined"));
    }
    Ok(total / count as f64)
}
