//! Closed-form tokens-per-forward and compute-overhead models.
//!
//! With uniform per-position acceptance `p` and cumulative acceptance
//! `P_k = p^k`, stride-`N` introspective decoding has
//!
//! ```text
//! TPF    = (2 + P_1 + ... + P_{N-2}) / (2 - P_{N-1})
//! OH_var = (3N - 1 - N p^{N-1})      / (2 + p + ... + p^{N-2})
//! OH_fix = (2N - 1)(2 - p^{N-1})     / (2 + p + ... + p^{N-2})
//! ```
//!
//! Block diffusion commits `N` tokens over `E[S|N] + 1` forwards, where the
//! expected denoising step count `E[S|N]` satisfies a Binomial-with-floor
//! recursion, so `TPF * OH = N` identically. Branched drafting commits
//! `(1 - p^N)/(1 - p)` tokens per single `N(N+1)`-query forward, so
//! `TPF * OH = N(N+1)` and its efficiency is capped at `N/(N+1)` even at
//! perfect acceptance.
//!
//! Compute efficiency is `TPF / OH`; values above 1 mean the parallelism
//! outpaces the extra query tokens.

use std::fmt;
use std::str::FromStr;

use crate::decode::QueryAccounting;
use crate::error::{invalid_input, Error};

/// Expected tokens per forward for strided decoding at uniform acceptance.
pub fn tpf_isd(n: usize, p: f64) -> f64 {
    assert!(n >= 2, "stride must be >= 2");
    check_p(p);
    let probs = vec![p; n - 1];
    tpf_isd_schedule(&probs)
}

/// General cumulative-product form over a per-position schedule
/// `p_1 .. p_{N-1}`.
pub fn tpf_isd_schedule(probs: &[f64]) -> f64 {
    assert!(!probs.is_empty(), "schedule needs at least one position");
    let n = probs.len() + 1;
    let mut cumulative = 1.0;
    let mut numerator = 2.0;
    for &p in &probs[..n - 2] {
        check_p(p);
        cumulative *= p;
        numerator += cumulative;
    }
    check_p(probs[n - 2]);
    let p_last = cumulative * probs[n - 2];
    numerator / (2.0 - p_last)
}

/// Compute overhead for strided decoding under either query accounting.
pub fn oh_isd(n: usize, p: f64, accounting: QueryAccounting) -> f64 {
    assert!(n >= 2, "stride must be >= 2");
    check_p(p);
    let nf = n as f64;
    let tail = p.powi(n as i32 - 1);
    let denominator: f64 = 2.0 + (1..=n - 2).map(|k| p.powi(k as i32)).sum::<f64>();
    match accounting {
        QueryAccounting::Variable => (3.0 * nf - 1.0 - nf * tail) / denominator,
        QueryAccounting::Fixed => (2.0 * nf - 1.0) * (2.0 - tail) / denominator,
    }
}

/// Expected denoising steps `E[S | n]` for one block: each step resolves
/// `max(H, 1)` of the `R` remaining positions with `H ~ Binomial(R, p)`.
pub fn sdar_expected_steps(n: usize, p: f64) -> f64 {
    check_p(p);
    let mut memo = vec![0.0f64; n + 1];
    for r in 1..=n {
        let mut expect = 1.0;
        for (h, pmf) in binomial_pmf(r, p).into_iter().enumerate() {
            let resolved = h.max(1).min(r);
            expect += pmf * memo[r - resolved];
        }
        memo[r] = expect;
    }
    memo[n]
}

/// `(tpf, oh)` for block diffusion; the product is `n` identically.
pub fn tpf_oh_sdar(n: usize, p: f64) -> (f64, f64) {
    assert!(n >= 1, "block size must be >= 1");
    let oh = sdar_expected_steps(n, p) + 1.0;
    (n as f64 / oh, oh)
}

/// `(tpf, oh)` for branched drafting; the product is `n * (n + 1)`
/// identically. The `p = 1` geometric-sum singularity is handled by its
/// explicit limit `(n, n + 1)`.
pub fn tpf_oh_tidar(n: usize, p: f64) -> (f64, f64) {
    assert!(n >= 1, "stride must be >= 1");
    check_p(p);
    let nf = n as f64;
    if p == 1.0 {
        return (nf, nf + 1.0);
    }
    let tpf = (1.0 - p.powi(n as i32)) / (1.0 - p);
    (tpf, nf * (nf + 1.0) / tpf)
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n + 1];
    if p <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if p >= 1.0 {
        pmf[n] = 1.0;
        return pmf;
    }
    // Multiplicative recurrence from pmf(0) = (1 - p)^n.
    pmf[0] = (1.0 - p).powi(n as i32);
    for h in 0..n {
        pmf[h + 1] = pmf[h] * ((n - h) as f64 / (h + 1) as f64) * (p / (1.0 - p));
    }
    pmf
}

fn check_p(p: f64) {
    assert!((0.0..=1.0).contains(&p), "acceptance probability {p} is not in [0, 1]");
}

/// The four analytic curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParadigmMethod {
    IsdVariable,
    IsdFixed,
    Sdar,
    Tidar,
}

impl ParadigmMethod {
    pub const ALL: [ParadigmMethod; 4] = [
        ParadigmMethod::IsdVariable,
        ParadigmMethod::IsdFixed,
        ParadigmMethod::Sdar,
        ParadigmMethod::Tidar,
    ];

    /// `(tpf, oh)` at a single operating point.
    pub fn tpf_oh(&self, n: usize, p: f64) -> (f64, f64) {
        match self {
            ParadigmMethod::IsdVariable => {
                (tpf_isd(n, p), oh_isd(n, p, QueryAccounting::Variable))
            }
            ParadigmMethod::IsdFixed => (tpf_isd(n, p), oh_isd(n, p, QueryAccounting::Fixed)),
            ParadigmMethod::Sdar => tpf_oh_sdar(n, p),
            ParadigmMethod::Tidar => tpf_oh_tidar(n, p),
        }
    }

    /// Compute efficiency `tpf / oh`.
    pub fn efficiency(&self, n: usize, p: f64) -> f64 {
        let (tpf, oh) = self.tpf_oh(n, p);
        tpf / oh
    }
}

impl fmt::Display for ParadigmMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParadigmMethod::IsdVariable => "isd-variable",
            ParadigmMethod::IsdFixed => "isd-fixed",
            ParadigmMethod::Sdar => "sdar",
            ParadigmMethod::Tidar => "tidar",
        };
        f.write_str(s)
    }
}

impl FromStr for ParadigmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "isd-variable" => Ok(ParadigmMethod::IsdVariable),
            "isd-fixed" => Ok(ParadigmMethod::IsdFixed),
            "sdar" => Ok(ParadigmMethod::Sdar),
            "tidar" => Ok(ParadigmMethod::Tidar),
            other => Err(invalid_input(format!(
                "unknown method '{other}' (expected isd-variable, isd-fixed, sdar, or tidar)"
            ))),
        }
    }
}

/// Result of a break-even search on the efficiency curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BreakEven {
    /// Acceptance probability at which efficiency crosses 1.
    Crossing(f64),
    /// Efficiency never strictly crosses 1 on (0, 1).
    NoCrossing,
}

/// Finds the acceptance probability where `tpf / oh` crosses 1, by scanning
/// for a sign change and bisecting it to `1e-6` absolute tolerance in `p`.
/// Methods whose efficiency never strictly exceeds 1 report
/// [`BreakEven::NoCrossing`].
pub fn break_even_acceptance(method: ParadigmMethod, n: usize) -> BreakEven {
    let f = |p: f64| method.efficiency(n, p) - 1.0;
    let grid = 4096usize;
    let mut prev_p = 0.0;
    let mut prev_v = f(0.0);
    for i in 1..=grid {
        let p = i as f64 / grid as f64;
        let v = f(p);
        if prev_v < 0.0 && v > 0.0 {
            let (mut lo, mut hi) = (prev_p, p);
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return BreakEven::Crossing(0.5 * (lo + hi));
        }
        prev_p = p;
        prev_v = v;
    }
    BreakEven::NoCrossing
}

/// One evaluated point on a paradigm curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub p: f64,
    pub tpf: f64,
    pub oh: f64,
    pub efficiency: f64,
}

/// A method's `(tpf, oh, efficiency)` curve over an acceptance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParadigmCurve {
    pub method: ParadigmMethod,
    pub n: usize,
    pub samples: Vec<CurveSample>,
}

/// Evaluates a method over an acceptance-probability grid.
pub fn curve_sweep(method: ParadigmMethod, n: usize, grid: &[f64]) -> ParadigmCurve {
    let samples = grid
        .iter()
        .map(|&p| {
            let (tpf, oh) = method.tpf_oh(n, p);
            CurveSample { p, tpf, oh, efficiency: tpf / oh }
        })
        .collect();
    ParadigmCurve { method, n, samples }
}
