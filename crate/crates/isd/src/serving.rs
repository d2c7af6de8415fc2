//! Discrete-event serving simulation: uniform-advancement continuous
//! batching versus block-synchronized batching, under a configurable
//! step-cost model.
//!
//! Continuous batching steps every active request once per global step;
//! requests join and leave freely. Block-synchronized batching holds the
//! whole batch until every request's current block resolves, so the round
//! length is the maximum of the per-request step counts, and queued requests
//! join only at round boundaries. Synchronization can only add waiting, which
//! is the qualitative scaling contrast this module exists to reproduce.
//!
//! All latencies are milliseconds and throughputs tokens per second. Only
//! orderings and slopes are meaningful; the coefficients are config inputs,
//! not hardware truth.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::prob::RngStream;
use crate::sim::{CommitProcess, ProcessState, StepYield};

/// Affine step-latency model with a memory-bound plateau.
///
/// A forward pass costs `base` below the knee; past `knee_query_tokens`
/// total query tokens per step it grows linearly (the compute-bound regime).
/// Scheduler overhead is additive per step, with a reduced value when the
/// stationary-batch loop reuses the batch object across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub forward_base_ms: f64,
    pub per_query_token_ms: f64,
    pub knee_query_tokens: u64,
    pub scheduler_overhead_ms: f64,
    pub stationary_overhead_ms: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("forward_base_ms", self.forward_base_ms),
            ("per_query_token_ms", self.per_query_token_ms),
            ("scheduler_overhead_ms", self.scheduler_overhead_ms),
            ("stationary_overhead_ms", self.stationary_overhead_ms),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid_input(format!("cost model field {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Latency of one batched forward processing `query_tokens` in total.
    pub fn forward_latency_ms(&self, query_tokens: u64) -> f64 {
        let excess = query_tokens.saturating_sub(self.knee_query_tokens);
        self.forward_base_ms + self.per_query_token_ms * excess as f64
    }

    pub fn step_overhead_ms(&self, stationary: bool) -> f64 {
        if stationary {
            self.stationary_overhead_ms
        } else {
            self.scheduler_overhead_ms
        }
    }

    /// Desk defaults: a 2 ms memory-bound forward with a 4096-token knee,
    /// and a scheduler rebuild that the stationary loop mostly eliminates.
    pub fn default_desk() -> Self {
        Self {
            forward_base_ms: 2.0,
            per_query_token_ms: 0.004,
            knee_query_tokens: 4096,
            scheduler_overhead_ms: 1.0,
            stationary_overhead_ms: 0.1,
        }
    }
}

/// When requests show up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArrivalPattern {
    /// Everything submitted at time zero.
    Burst,
    /// Exponential inter-arrival gaps at `rate_per_ms` requests per ms.
    Poisson { rate_per_ms: f64 },
}

/// A batch of requests with one shared commit process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// One target output length per request.
    pub target_lengths: Vec<u64>,
    pub arrival: ArrivalPattern,
    pub commit: CommitProcess,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if self.target_lengths.is_empty() {
            return Err(invalid_input("workload needs at least one request"));
        }
        if self.target_lengths.contains(&0) {
            return Err(invalid_input("target lengths must be >= 1"));
        }
        if let ArrivalPattern::Poisson { rate_per_ms } = self.arrival {
            if rate_per_ms.is_nan() || rate_per_ms <= 0.0 {
                return Err(invalid_input(format!(
                    "poisson rate must be > 0, got {rate_per_ms}"
                )));
            }
        }
        self.commit.validate()
    }

    /// The bundled heterogeneous burst workload used by the serving
    /// contrast: 16 requests with lengths varying 4x around 320 tokens.
    pub fn bundled_heterogeneous(commit: CommitProcess) -> Self {
        let target_lengths =
            vec![160, 480, 240, 400, 320, 200, 440, 280, 360, 160, 480, 320, 240, 400, 200, 440];
        Self { target_lengths, arrival: ArrivalPattern::Burst, commit }
    }
}

/// Batching discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Continuous,
    BlockSync,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Continuous => "continuous",
            Policy::BlockSync => "block-sync",
        })
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Policy::Continuous),
            "block-sync" => Ok(Policy::BlockSync),
            other => Err(invalid_input(format!(
                "unknown policy '{other}' (expected continuous or block-sync)"
            ))),
        }
    }
}

/// What a serving run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingReport {
    pub policy: Policy,
    pub batch: usize,
    pub stationary: bool,
    /// Total committed tokens divided by makespan.
    pub aggregate_tps: f64,
    /// Admission-to-finish tokens per second, one entry per request.
    pub per_request_tps: Vec<f64>,
    pub mean_request_tps: f64,
    pub step_count: u64,
    /// Total committed tokens per request-forward (process-level TPF).
    pub mean_tpf: f64,
    /// Total committed tokens per batched step (serving-level TPF).
    pub tokens_per_step: f64,
    pub makespan_ms: f64,
    pub total_tokens: u64,
    /// `(time_ms, active requests)` after every step.
    pub occupancy: Vec<(f64, usize)>,
}

struct Request {
    target: u64,
    committed: u64,
    state: ProcessState,
    rng: rand_chacha::ChaCha8Rng,
    forwards: u64,
    admitted_at: f64,
    finished_at: Option<f64>,
    arrival: f64,
}

impl Request {
    fn done(&self) -> bool {
        self.committed >= self.target
    }

    // Commit clamped at the target so conservation holds exactly.
    fn apply(&mut self, tokens: u64, now: f64) -> u64 {
        let take = tokens.min(self.target - self.committed);
        self.committed += take;
        if self.done() && self.finished_at.is_none() {
            self.finished_at = Some(now);
        }
        take
    }
}

fn arrival_times(workload: &Workload, stream: &RngStream) -> Vec<f64> {
    match workload.arrival {
        ArrivalPattern::Burst => vec![0.0; workload.target_lengths.len()],
        ArrivalPattern::Poisson { rate_per_ms } => {
            use rand::Rng;
            let mut rng = stream.substream(u64::MAX).rng();
            let mut t = 0.0;
            workload
                .target_lengths
                .iter()
                .map(|_| {
                    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    t += -u.ln() / rate_per_ms;
                    t
                })
                .collect()
        }
    }
}

/// Runs one serving simulation.
///
/// `max_batch` caps concurrent occupancy; arrivals beyond it queue and join
/// per the policy (every step for continuous, round boundaries for
/// block-sync). Deterministic given the stream: request `i` draws from
/// substream `i`, so the same workload replays identically across policies.
pub fn run_serving_sim(
    workload: &Workload,
    policy: Policy,
    cost: &CostModel,
    stationary: bool,
    max_batch: usize,
    stream: &RngStream,
) -> Result<ServingReport> {
    workload.validate()?;
    cost.validate()?;
    if max_batch == 0 {
        return Err(invalid_input("max_batch must be >= 1"));
    }

    let arrivals = arrival_times(workload, stream);
    let mut queue: Vec<Request> = workload
        .target_lengths
        .iter()
        .zip(&arrivals)
        .enumerate()
        .map(|(i, (&target, &arrival))| Request {
            target,
            committed: 0,
            state: ProcessState::new(&workload.commit),
            rng: stream.substream(i as u64).rng(),
            forwards: 0,
            admitted_at: 0.0,
            finished_at: None,
            arrival,
        })
        .collect();
    queue.reverse(); // pop from the back in arrival order

    let mut active: Vec<Request> = Vec::new();
    let mut finished: Vec<Request> = Vec::new();
    let mut now = 0.0f64;
    let mut steps = 0u64;
    let mut total_tokens = 0u64;
    let mut occupancy = Vec::new();
    let overhead = cost.step_overhead_ms(stationary);

    let admit = |queue: &mut Vec<Request>, active: &mut Vec<Request>, now: f64| {
        while active.len() < max_batch
            && queue.last().map(|r| r.arrival <= now).unwrap_or(false)
        {
            let mut r = queue.pop().unwrap();
            r.admitted_at = now;
            active.push(r);
        }
    };

    while !queue.is_empty() || !active.is_empty() {
        admit(&mut queue, &mut active, now);
        if active.is_empty() {
            // Idle until the next arrival.
            now = queue.last().map(|r| r.arrival).unwrap_or(now).max(now);
            admit(&mut queue, &mut active, now);
        }

        match policy {
            Policy::Continuous => {
                // One global step: every active request forwards once.
                let yields: Vec<StepYield> =
                    active.iter_mut().map(|r| r.state.step(&mut r.rng)).collect();
                let query_total: u64 = yields.iter().map(|y| y.queries).sum();
                now += cost.forward_latency_ms(query_total) + overhead;
                steps += 1;
                for (r, y) in active.iter_mut().zip(&yields) {
                    r.forwards += 1;
                    total_tokens += r.apply(y.tokens, now);
                }
                occupancy.push((now, active.len()));
            }
            Policy::BlockSync => {
                // Pre-roll one block per request; the round runs for the
                // slowest request's step count while early finishers idle.
                // Requests that reach their target stop forwarding, and the
                // round ends early once nobody needs more steps.
                let blocks: Vec<Vec<StepYield>> = active
                    .iter_mut()
                    .map(|r| {
                        let mut steps = Vec::new();
                        loop {
                            let y = r.state.step(&mut r.rng);
                            let end = y.block_end;
                            steps.push(y);
                            if end {
                                break;
                            }
                        }
                        steps
                    })
                    .collect();
                let round_len = blocks.iter().map(|b| b.len()).max().unwrap_or(0);
                for s in 0..round_len {
                    if active.iter().all(|r| r.done()) {
                        break;
                    }
                    let query_total: u64 = active
                        .iter()
                        .zip(&blocks)
                        .filter(|(r, _)| !r.done())
                        .filter_map(|(_, b)| b.get(s))
                        .map(|y| y.queries)
                        .sum();
                    now += cost.forward_latency_ms(query_total) + overhead;
                    steps += 1;
                    for (r, b) in active.iter_mut().zip(&blocks) {
                        if r.done() {
                            continue;
                        }
                        if let Some(y) = b.get(s) {
                            r.forwards += 1;
                            total_tokens += r.apply(y.tokens, now);
                        }
                    }
                    occupancy.push((now, active.len()));
                }
            }
        }

        // Finished requests leave; for block-sync this point is a block
        // boundary by construction.
        let mut i = 0;
        while i < active.len() {
            if active[i].done() {
                finished.push(active.swap_remove(i));
            } else {
                i += 1;
            }
        }
    }

    let makespan_ms = now;
    let per_request_tps: Vec<f64> = finished
        .iter()
        .map(|r| {
            let dt = r.finished_at.unwrap_or(makespan_ms) - r.admitted_at;
            if dt > 0.0 {
                r.committed as f64 / dt * 1000.0
            } else {
                0.0
            }
        })
        .collect();
    let total_forwards: u64 = finished.iter().map(|r| r.forwards).sum();
    let mean_request_tps = per_request_tps.iter().sum::<f64>() / per_request_tps.len() as f64;
    Ok(ServingReport {
        policy,
        batch: max_batch,
        stationary,
        aggregate_tps: total_tokens as f64 / makespan_ms * 1000.0,
        per_request_tps,
        mean_request_tps,
        step_count: steps,
        mean_tpf: total_tokens as f64 / total_forwards as f64,
        tokens_per_step: total_tokens as f64 / steps as f64,
        makespan_ms,
        total_tokens,
        occupancy,
    })
}

/// One point of a batch-size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputPoint {
    pub batch: usize,
    pub aggregate_tps: f64,
    /// Serving-level TPF: committed tokens per batched step.
    pub tokens_per_step: f64,
    pub mean_tpf: f64,
}

/// A sweep over batch sizes plus the least-squares slope of throughput
/// against serving-level TPF across the collected points.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSweep {
    pub points: Vec<ThroughputPoint>,
    pub slope_tps_per_tpf: f64,
}

/// Runs one simulation per batch size with fixed seeds and fits the
/// throughput-versus-TPF slope.
pub fn throughput_vs_batch(
    workload: &Workload,
    batch_sizes: &[usize],
    policy: Policy,
    cost: &CostModel,
    stationary: bool,
    stream: &RngStream,
) -> Result<ThroughputSweep> {
    if batch_sizes.is_empty() {
        return Err(invalid_input("batch size sweep needs at least one size"));
    }
    if batch_sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid_input("batch sizes must be sorted ascending"));
    }
    let mut points = Vec::with_capacity(batch_sizes.len());
    for &batch in batch_sizes {
        let report = run_serving_sim(workload, policy, cost, stationary, batch, stream)?;
        points.push(ThroughputPoint {
            batch,
            aggregate_tps: report.aggregate_tps,
            tokens_per_step: report.tokens_per_step,
            mean_tpf: report.mean_tpf,
        });
    }
    Ok(ThroughputSweep { slope_tps_per_tpf: lsq_slope(&points), points })
}

fn lsq_slope(points: &[ThroughputPoint]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.tokens_per_step).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.aggregate_tps).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for p in points {
        num += (p.tokens_per_step - mean_x) * (p.aggregate_tps - mean_y);
        den += (p.tokens_per_step - mean_x) * (p.tokens_per_step - mean_x);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// CSV export, one row per report:
/// `policy,batch,stationary,aggregate_tps,mean_request_tps,mean_tpf,makespan_ms`.
pub fn write_serving_csv<W: Write>(mut w: W, reports: &[ServingReport]) -> Result<()> {
    writeln!(w, "policy,batch,stationary,aggregate_tps,mean_request_tps,mean_tpf,makespan_ms")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.policy, r.batch, r.stationary, r.aggregate_tps, r.mean_request_tps, r.mean_tpf, r.makespan_ms
        )?;
    }
    Ok(())
}

/// Serving run description as ingested from JSON by the CLI; mirrors
/// [`Workload`] and [`CostModel`] exactly, with the seed supplied separately
/// as a flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub workload: Workload,
    pub cost: CostModel,
    pub policy: Policy,
    pub stationary: bool,
    pub max_batch: usize,
}

impl ServeConfig {
    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.cost.validate()?;
        if self.max_batch == 0 {
            return Err(invalid_input("max_batch must be >= 1"));
        }
        Ok(())
    }
}
