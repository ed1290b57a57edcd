//! Step-level simulation of offline batching and online serving.
//!
//! Every request follows the greedy KV-cache loop: one prefill pass over the
//! prompt produces the first token and fills the cache, then each decode step
//! appends one token until `output_len` tokens exist. Step durations come from
//! the fitted runtime model; the clock only advances by step durations and by
//! idling until the next arrival.

mod engine;
mod metrics;

use std::fmt;

use serde::Serialize;

use crate::arch::{ModelConfig, Phase};
use crate::error::{Error, Result};
use crate::estimator::{predict_at, Library, RegressionCoefficients};
use crate::kvsim::{CacheStats, KvCapacity};
use crate::workload::{assign_arrivals, ArrivalProcess, Request};

pub use metrics::{aggregate, percentile, trim_warmup, ServingMetrics, Trimmed, WARMUP_TRIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SchedulingPolicy {
    /// Fixed batches: wait for `batch_size` requests, prefill them together,
    /// decode until the whole batch is done.
    Static { batch_size: usize },
    /// Per-step admission with exclusive prefill steps.
    Continuous {
        max_seqs: usize,
        max_batch_tokens: u64,
    },
    /// Every step carries at most `token_budget` tokens: one decode token per
    /// running sequence plus chunks of pending prompts.
    SplitFuse { token_budget: u64 },
}

impl SchedulingPolicy {
    pub fn validate(self) -> Result<Self> {
        match self {
            SchedulingPolicy::Static { batch_size: 0 } => {
                Err(Error::NonPositiveField("batch_size"))
            }
            SchedulingPolicy::Continuous { max_seqs: 0, .. } => {
                Err(Error::NonPositiveField("max_seqs"))
            }
            SchedulingPolicy::Continuous {
                max_batch_tokens: 0,
                ..
            } => Err(Error::NonPositiveField("max_batch_tokens")),
            SchedulingPolicy::SplitFuse { token_budget: 0 } => {
                Err(Error::NonPositiveField("token_budget"))
            }
            ok => Ok(ok),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulingPolicy::Static { .. } => "static",
            SchedulingPolicy::Continuous { .. } => "continuous",
            SchedulingPolicy::SplitFuse { .. } => "splitfuse",
        }
    }
}

impl fmt::Display for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulingPolicy::Static { batch_size } => write!(f, "static(batch={batch_size})"),
            SchedulingPolicy::Continuous {
                max_seqs,
                max_batch_tokens,
            } => write!(f, "continuous(seqs={max_seqs},tokens={max_batch_tokens})"),
            SchedulingPolicy::SplitFuse { token_budget } => {
                write!(f, "splitfuse(budget={token_budget})")
            }
        }
    }
}

pub const DEFAULT_MIN_STEP_MS: f64 = 1.0;

/// Prefill and decode runtime models for one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct StepModel {
    pub cfg: ModelConfig,
    prefill: RegressionCoefficients,
    decode: RegressionCoefficients,
    /// Floor applied to every predicted step, in milliseconds.
    pub min_step_ms: f64,
}

impl StepModel {
    pub fn new(
        cfg: ModelConfig,
        prefill: Option<RegressionCoefficients>,
        decode: Option<RegressionCoefficients>,
    ) -> Result<Self> {
        let prefill = prefill
            .filter(|c| c.phase() == Phase::Prefill)
            .ok_or(Error::MissingCoefficients(Phase::Prefill))?;
        let decode = decode
            .filter(|c| c.phase() == Phase::Decode)
            .ok_or(Error::MissingCoefficients(Phase::Decode))?;
        Ok(StepModel {
            cfg: cfg.validate()?,
            prefill,
            decode,
            min_step_ms: DEFAULT_MIN_STEP_MS,
        })
    }

    pub fn published(cfg: ModelConfig, library: Library) -> Self {
        StepModel::new(
            cfg,
            Some(RegressionCoefficients::published(library, Phase::Prefill)),
            Some(RegressionCoefficients::published(library, Phase::Decode)),
        )
        .expect("published coefficients carry both phases")
    }

    pub fn with_min_step_ms(mut self, min_step_ms: f64) -> Self {
        self.min_step_ms = min_step_ms.max(0.0);
        self
    }

    /// Seconds for a prefill pass over `b` prompts padded to `s` tokens.
    pub fn prefill_s(&self, b: u64, s: u64) -> Result<f64> {
        Ok(predict_at(&self.prefill, &self.cfg, b, s)?.max(self.min_step_ms) / 1000.0)
    }

    /// Seconds for one decode step of `b` sequences with `s_past` cached tokens.
    pub fn decode_s(&self, b: u64, s_past: u64) -> Result<f64> {
        Ok(predict_at(&self.decode, &self.cfg, b, s_past)?.max(self.min_step_ms) / 1000.0)
    }
}

/// What one request experienced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RequestRecord {
    pub id: u64,
    pub input_len: u64,
    pub output_len: u64,
    pub arrival_s: f64,
    /// Start of the first step that worked on this request.
    pub start_s: f64,
    pub first_token_s: f64,
    pub completion_s: f64,
}

impl RequestRecord {
    pub fn latency_s(&self) -> f64 {
        self.completion_s - self.arrival_s
    }

    /// Request latency spread over its generated tokens.
    pub fn token_latency_s(&self) -> f64 {
        self.latency_s() / self.output_len as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StepKind {
    Prefill,
    Decode,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub kind: StepKind,
    pub start_s: f64,
    pub duration_s: f64,
    /// Sequences in the step (including padded, already-finished slots).
    pub batch: u64,
    /// Prompt plus decode tokens processed.
    pub tokens: u64,
    /// New output tokens produced.
    pub generated: u64,
    /// KV bytes reserved while the step runs.
    pub kv_allocated_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub policy: SchedulingPolicy,
    /// Per-request records ordered by completion time.
    pub records: Vec<RequestRecord>,
    pub steps: Vec<StepRecord>,
    pub kv: CacheStats,
    pub capacity_bytes: u64,
    pub metrics: ServingMetrics,
}

impl SimOutcome {
    pub fn generated_tokens(&self) -> u64 {
        self.steps.iter().map(|s| s.generated).sum()
    }

    pub fn makespan_s(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.completion_s)
            .fold(0.0, f64::max)
    }
}

/// Runs `trace` (sorted by arrival) to completion under `policy`.
pub fn run(
    policy: SchedulingPolicy,
    trace: &[Request],
    model: &StepModel,
    capacity: KvCapacity,
) -> Result<SimOutcome> {
    let policy = policy.validate()?;
    capacity.layout.validate()?;
    if trace
        .windows(2)
        .any(|w| w[1].arrival_time_s < w[0].arrival_time_s)
    {
        return Err(Error::invalid("trace", "not sorted by arrival time"));
    }
    let mut reserve = Vec::with_capacity(trace.len());
    for r in trace {
        let total = r
            .input_len
            .checked_add(r.output_len)
            .ok_or(Error::Overflow("sequence length"))?;
        let needed = capacity.sequence_bytes(&model.cfg, total)?;
        if needed > capacity.capacity_bytes {
            return Err(Error::CapacityInfeasible {
                id: r.id,
                needed,
                capacity: capacity.capacity_bytes,
            });
        }
        if let SchedulingPolicy::Continuous {
            max_batch_tokens, ..
        } = policy
        {
            if r.input_len > max_batch_tokens {
                return Err(Error::invalid(
                    "trace",
                    format!(
                        "request {} prompt ({} tokens) exceeds max_batch_tokens {max_batch_tokens}",
                        r.id, r.input_len
                    ),
                ));
            }
        }
        reserve.push(needed);
    }

    let mut engine = engine::Engine::new(trace, &reserve, model, capacity);
    match policy {
        SchedulingPolicy::Static { batch_size } => engine.run_static(batch_size)?,
        SchedulingPolicy::Continuous {
            max_seqs,
            max_batch_tokens,
        } => engine.run_continuous(max_seqs, max_batch_tokens)?,
        SchedulingPolicy::SplitFuse { token_budget } => engine.run_splitfuse(token_budget)?,
    }
    let (mut records, steps, kv) = engine.finish();
    records.sort_by(|a, b| {
        a.completion_s
            .total_cmp(&b.completion_s)
            .then(a.id.cmp(&b.id))
    });
    let metrics = aggregate(&records, trace.len());
    Ok(SimOutcome {
        policy,
        records,
        steps,
        kv,
        capacity_bytes: capacity.capacity_bytes,
        metrics,
    })
}

/// Metrics for one arrival rate, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub rate: f64,
    pub metrics: ServingMetrics,
    /// Set when a seed's run had too few requests to trim.
    pub trim_warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalKind {
    Poisson,
    Uniform,
}

/// Re-times `base` at each rate, runs it once per seed, drops warm-up and
/// cool-down requests and averages the metrics over seeds. Rates run on
/// separate threads; output order follows `rates`.
pub fn sweep_rates(
    policy: SchedulingPolicy,
    base: &[Request],
    rates: &[f64],
    seeds: &[u64],
    arrivals: ArrivalKind,
    model: &StepModel,
    capacity: KvCapacity,
) -> Result<Vec<RatePoint>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "empty"));
    }
    if let Some(bad) = rates.iter().find(|r| r.is_nan() || **r <= 0.0) {
        return Err(Error::invalid("rate", format!("{bad} (must be positive)")));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = rates
            .iter()
            .map(|&rate| {
                scope.spawn(move || sweep_one(policy, base, rate, seeds, arrivals, model, capacity))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

fn sweep_one(
    policy: SchedulingPolicy,
    base: &[Request],
    rate: f64,
    seeds: &[u64],
    arrivals: ArrivalKind,
    model: &StepModel,
    capacity: KvCapacity,
) -> Result<RatePoint> {
    let process = if rate.is_infinite() {
        ArrivalProcess::Offline
    } else {
        match arrivals {
            ArrivalKind::Poisson => ArrivalProcess::Poisson { rate },
            ArrivalKind::Uniform => ArrivalProcess::Uniform { rate },
        }
    };
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut trim_warning = false;
    for &seed in seeds {
        let mut trace = base.to_vec();
        assign_arrivals(&mut trace, process, seed)?;
        let outcome = run(policy, &trace, model, capacity)?;
        let trimmed = trim_warmup(&outcome.records);
        trim_warning |= trimmed.warning;
        per_seed.push(aggregate(&trimmed.records, trimmed.records.len()));
    }
    Ok(RatePoint {
        rate,
        metrics: ServingMetrics::mean(&per_seed),
        trim_warning,
    })
}
