//! Distribution-free Monte Carlo models of the three decoding paradigms.
//!
//! Everything here counts only tokens, forward passes, and query tokens;
//! acceptance is reduced to Bernoulli/Binomial draws. The closed forms in
//! [`crate::analytics`] and these simulators are mutual oracles: the
//! acceptance suite checks them against each other to sub-percent tolerance.
//!
//! The strided decoder is simulated as a renewal process: a cycle is one
//! propose-only step (`N` queries, no tokens) followed by a chain of fused
//! steps (`2N - 1` queries each) that ends at the first rejection. A fused
//! step with all `N - 1` proposals accepted finalizes `N` tokens and keeps
//! the chain alive; a rejection at 1-based proposal `j` finalizes `j + 1`
//! tokens (one free, `j - 1` accepted, one resampled) and closes the cycle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as RandDistribution};

use crate::error::{invalid_input, Result};
use crate::prob::RngStream;

/// Fused chains longer than this end the cycle early. Only reachable when
/// every per-position acceptance probability is at or next to 1.
const MAX_CHAIN_STEPS: u64 = 1 << 20;

/// Per-position acceptance probabilities `p_1 .. p_{N-1}` for one stride.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceSchedule {
    probs: Vec<f64>,
}

impl AcceptanceSchedule {
    /// A possibly non-uniform schedule; one entry per proposal position.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid_input("schedule needs at least one position"));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid_input(format!("schedule[{i}] = {p} is not in [0, 1]")));
            }
        }
        Ok(Self { probs })
    }

    /// Uniform acceptance `p` at stride `n` (so `n - 1` positions).
    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid_input(format!("stride must be >= 2, got {n}")));
        }
        Self::new(vec![p; n - 1])
    }

    pub fn position_count(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Raw, mergeable counters plus the per-cycle moments needed for ratio
/// standard errors. All integer sums, so merging is exactly
/// order-independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounters {
    pub cycles: u64,
    pub tokens: u64,
    pub forwards: u64,
    pub queries_variable: u64,
    pub queries_fixed: u64,
    tok_sq: u128,
    fwd_sq: u128,
    tok_fwd: u128,
    qvar_sq: u128,
    qvar_tok: u128,
    qfix_sq: u128,
    qfix_tok: u128,
}

impl SimCounters {
    fn record_cycle(&mut self, tokens: u64, forwards: u64, q_var: u64, q_fix: u64) {
        self.cycles += 1;
        self.tokens += tokens;
        self.forwards += forwards;
        self.queries_variable += q_var;
        self.queries_fixed += q_fix;
        let (t, f, qv, qf) = (tokens as u128, forwards as u128, q_var as u128, q_fix as u128);
        self.tok_sq += t * t;
        self.fwd_sq += f * f;
        self.tok_fwd += t * f;
        self.qvar_sq += qv * qv;
        self.qvar_tok += qv * t;
        self.qfix_sq += qf * qf;
        self.qfix_tok += qf * t;
    }

    /// Sums counters from an independent run; the result is identical for
    /// any merge order.
    pub fn merge(&mut self, other: &SimCounters) {
        self.cycles += other.cycles;
        self.tokens += other.tokens;
        self.forwards += other.forwards;
        self.queries_variable += other.queries_variable;
        self.queries_fixed += other.queries_fixed;
        self.tok_sq += other.tok_sq;
        self.fwd_sq += other.fwd_sq;
        self.tok_fwd += other.tok_fwd;
        self.qvar_sq += other.qvar_sq;
        self.qvar_tok += other.qvar_tok;
        self.qfix_sq += other.qfix_sq;
        self.qfix_tok += other.qfix_tok;
    }

    // Delta-method standard error of the ratio estimator sum(num)/sum(den)
    // from per-cycle pairs.
    fn ratio_se(&self, num: u64, den: u64, num_sq: u128, den_sq: u128, num_den: u128) -> f64 {
        let n = self.cycles as f64;
        if self.cycles < 2 || den == 0 {
            return 0.0;
        }
        let r = num as f64 / den as f64;
        let s2 = (num_sq as f64 - 2.0 * r * num_den as f64 + r * r * den_sq as f64) / (n - 1.0);
        let den_mean = den as f64 / n;
        (s2.max(0.0) / n).sqrt() / den_mean
    }

    /// Finalizes the counters into reported statistics.
    pub fn finish(&self) -> SimResult {
        let tokens = self.tokens as f64;
        let forwards = self.forwards as f64;
        SimResult {
            cycles: self.cycles,
            tokens: self.tokens,
            forwards: self.forwards,
            queries_variable: self.queries_variable,
            queries_fixed: self.queries_fixed,
            tpf: tokens / forwards,
            tpf_se: self.ratio_se(self.tokens, self.forwards, self.tok_sq, self.fwd_sq, self.tok_fwd),
            oh_variable: self.queries_variable as f64 / tokens,
            oh_variable_se: self.ratio_se(
                self.queries_variable,
                self.tokens,
                self.qvar_sq,
                self.tok_sq,
                self.qvar_tok,
            ),
            oh_fixed: self.queries_fixed as f64 / tokens,
            oh_fixed_se: self.ratio_se(
                self.queries_fixed,
                self.tokens,
                self.qfix_sq,
                self.tok_sq,
                self.qfix_tok,
            ),
        }
    }
}

/// Aggregated simulation statistics.
///
/// `tpf` is always exactly `tokens / forwards` and the overheads exactly
/// `queries / tokens`, so every headline number is reproducible from the raw
/// counters. Standard errors are delta-method estimates over cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimResult {
    pub cycles: u64,
    pub tokens: u64,
    pub forwards: u64,
    pub queries_variable: u64,
    pub queries_fixed: u64,
    pub tpf: f64,
    pub tpf_se: f64,
    pub oh_variable: f64,
    pub oh_variable_se: f64,
    pub oh_fixed: f64,
    pub oh_fixed_se: f64,
}

impl SimResult {
    /// Compute efficiency `tpf / oh` under the chosen overhead.
    pub fn efficiency_variable(&self) -> f64 {
        self.tpf / self.oh_variable
    }

    pub fn efficiency_fixed(&self) -> f64 {
        self.tpf / self.oh_fixed
    }
}

/// Simulates renewal cycles of the strided decoder.
pub fn simulate_isd(
    n: usize,
    schedule: &AcceptanceSchedule,
    cycles: u64,
    stream: &RngStream,
) -> Result<SimResult> {
    Ok(simulate_isd_counters(n, schedule, cycles, stream)?.finish())
}

/// Counter-level variant of [`simulate_isd`] for mergeable parallel runs.
pub fn simulate_isd_counters(
    n: usize,
    schedule: &AcceptanceSchedule,
    cycles: u64,
    stream: &RngStream,
) -> Result<SimCounters> {
    if n < 2 {
        return Err(invalid_input(format!("stride must be >= 2, got {n}")));
    }
    if cycles == 0 {
        return Err(invalid_input("cycles must be >= 1"));
    }
    if schedule.position_count() != n - 1 {
        return Err(invalid_input(format!(
            "schedule has {} positions, stride {n} needs {}",
            schedule.position_count(),
            n - 1
        )));
    }
    let n_u64 = n as u64;
    let fused_q = 2 * n_u64 - 1;
    let mut rng = stream.rng();
    let mut counters = SimCounters::default();
    for _ in 0..cycles {
        // Cycle opener: one propose-only step.
        let mut tokens = 0u64;
        let mut forwards = 1u64;
        let mut q_var = n_u64;
        let mut q_fix = fused_q;
        // Fused chain until first rejection.
        for _ in 0..MAX_CHAIN_STEPS {
            forwards += 1;
            q_var += fused_q;
            q_fix += fused_q;
            let mut rejected_at = None;
            for (j, &p) in schedule.probs().iter().enumerate() {
                if rng.gen::<f64>() >= p {
                    rejected_at = Some(j as u64 + 1);
                    break;
                }
            }
            match rejected_at {
                None => tokens += n_u64,
                Some(j) => {
                    tokens += j + 1;
                    break;
                }
            }
        }
        counters.record_cycle(tokens, forwards, q_var, q_fix);
    }
    Ok(counters)
}

/// Simulates block-diffusion decoding: per block, Binomial-with-floor
/// denoising steps until all `n` positions resolve, plus one KV-commit
/// forward that produces no tokens. Every forward processes `n` queries.
pub fn simulate_sdar(n: usize, p: f64, blocks: u64, stream: &RngStream) -> Result<SimResult> {
    Ok(simulate_sdar_counters(n, p, blocks, stream)?.finish())
}

pub fn simulate_sdar_counters(
    n: usize,
    p: f64,
    blocks: u64,
    stream: &RngStream,
) -> Result<SimCounters> {
    if n < 1 {
        return Err(invalid_input(format!("block size must be >= 1, got {n}")));
    }
    if blocks == 0 {
        return Err(invalid_input("blocks must be >= 1"));
    }
    check_probability(p)?;
    let mut rng = stream.rng();
    let mut counters = SimCounters::default();
    for _ in 0..blocks {
        let steps = sdar_block_steps(n, p, &mut rng);
        let forwards = steps + 1; // denoising + mandatory KV commit
        let queries = forwards * n as u64;
        counters.record_cycle(n as u64, forwards, queries, queries);
    }
    Ok(counters)
}

fn sdar_block_steps(n: usize, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    let mut remaining = n as u64;
    let mut steps = 0u64;
    while remaining > 0 {
        steps += 1;
        let h = draw_binomial(remaining, p, rng);
        remaining -= h.max(1).min(remaining);
    }
    steps
}

fn draw_binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p checked in [0, 1]").sample(rng)
}

/// Simulates branched single-pass drafting: every cycle is exactly one
/// forward over `n` verify tokens plus `n^2` branch masks (`n * (n + 1)`
/// queries), committing one free token plus a run of accepts capped at
/// `n - 1`.
pub fn simulate_tidar(n: usize, p: f64, cycles: u64, stream: &RngStream) -> Result<SimResult> {
    Ok(simulate_tidar_counters(n, p, cycles, stream)?.finish())
}

pub fn simulate_tidar_counters(
    n: usize,
    p: f64,
    cycles: u64,
    stream: &RngStream,
) -> Result<SimCounters> {
    if n < 1 {
        return Err(invalid_input(format!("stride must be >= 1, got {n}")));
    }
    if cycles == 0 {
        return Err(invalid_input("cycles must be >= 1"));
    }
    check_probability(p)?;
    let queries = (n * (n + 1)) as u64;
    let mut rng = stream.rng();
    let mut counters = SimCounters::default();
    for _ in 0..cycles {
        let mut tokens = 1u64;
        for _ in 0..n - 1 {
            if rng.gen::<f64>() < p {
                tokens += 1;
            } else {
                break;
            }
        }
        counters.record_cycle(tokens, 1, queries, queries);
    }
    Ok(counters)
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid_input(format!("acceptance probability {p} is not in [0, 1]")));
    }
    Ok(())
}

/// Token-commit process families shared with the serving simulator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CommitProcess {
    /// One token, one query per forward.
    Ar,
    /// Strided decoding with uniform acceptance `p` at stride `n`.
    Isd { n: usize, p: f64 },
    /// Block diffusion with Binomial-floor convergence at block size `n`.
    Sdar { n: usize, p: f64 },
}

impl CommitProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CommitProcess::Ar => Ok(()),
            CommitProcess::Isd { n, p } => {
                if n < 2 {
                    return Err(invalid_input(format!("isd stride must be >= 2, got {n}")));
                }
                check_probability(p)
            }
            CommitProcess::Sdar { n, p } => {
                if n < 1 {
                    return Err(invalid_input(format!("sdar block must be >= 1, got {n}")));
                }
                check_probability(p)
            }
        }
    }
}

/// What one forward pass of a request yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepYield {
    pub tokens: u64,
    pub queries: u64,
    /// True when the process sits at a block boundary after this step
    /// (always true for AR and strided steps; true after a block-diffusion
    /// KV commit).
    pub block_end: bool,
}

/// Per-request state machine over a [`CommitProcess`]. The serving simulator
/// drives one of these per request, so batch statistics inherit exactly the
/// validated single-stream processes above.
#[derive(Debug, Clone)]
pub struct ProcessState {
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Ar,
    Isd { n: usize, p: f64, np_pending: bool },
    Sdar { n: usize, p: f64, remaining: u64, commit_pending: bool },
}

impl ProcessState {
    pub fn new(process: &CommitProcess) -> Self {
        let inner = match *process {
            CommitProcess::Ar => Inner::Ar,
            // The run opens with a bootstrap, which counts as the first
            // propose-only step of the renewal chain.
            CommitProcess::Isd { n, p } => Inner::Isd { n, p, np_pending: true },
            CommitProcess::Sdar { n, p } => {
                Inner::Sdar { n, p, remaining: n as u64, commit_pending: false }
            }
        };
        Self { inner }
    }

    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> StepYield {
        match &mut self.inner {
            Inner::Ar => StepYield { tokens: 1, queries: 1, block_end: true },
            Inner::Isd { n, p, np_pending } => {
                let n_u64 = *n as u64;
                if *np_pending {
                    *np_pending = false;
                    return StepYield { tokens: 0, queries: n_u64, block_end: true };
                }
                let mut rejected_at = None;
                for j in 1..*n as u64 {
                    if rng.gen::<f64>() >= *p {
                        rejected_at = Some(j);
                        break;
                    }
                }
                let tokens = match rejected_at {
                    None => n_u64,
                    Some(j) => {
                        *np_pending = true;
                        j + 1
                    }
                };
                StepYield { tokens, queries: 2 * n_u64 - 1, block_end: true }
            }
            Inner::Sdar { n, p, remaining, commit_pending } => {
                let n_u64 = *n as u64;
                if *commit_pending {
                    *commit_pending = false;
                    *remaining = n_u64;
                    return StepYield { tokens: 0, queries: n_u64, block_end: true };
                }
                let h = draw_binomial(*remaining, *p, rng);
                let c = h.max(1).min(*remaining);
                *remaining -= c;
                if *remaining == 0 {
                    *commit_pending = true;
                }
                StepYield { tokens: c, queries: n_u64, block_end: false }
            }
        }
    }
}
