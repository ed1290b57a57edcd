use serde::Serialize;

use super::RequestRecord;

/// Requests dropped from each end of a serving run before aggregation.
pub const WARMUP_TRIM: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ServingMetrics {
    /// Generated tokens per second over the observed window.
    pub token_throughput: f64,
    pub seq_throughput: f64,
    pub mean_token_latency_s: f64,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p95_latency_s: f64,
    pub completed: usize,
    pub total: usize,
}

impl ServingMetrics {
    pub const CSV_COLUMNS: [&'static str; 8] = [
        "token_throughput",
        "seq_throughput",
        "mean_token_latency_s",
        "mean_latency_s",
        "p50_latency_s",
        "p95_latency_s",
        "completed",
        "total",
    ];

    pub fn csv_values(&self) -> [String; 8] {
        [
            self.token_throughput.to_string(),
            self.seq_throughput.to_string(),
            self.mean_token_latency_s.to_string(),
            self.mean_latency_s.to_string(),
            self.p50_latency_s.to_string(),
            self.p95_latency_s.to_string(),
            self.completed.to_string(),
            self.total.to_string(),
        ]
    }

    /// Field-wise mean; counts are rounded down.
    pub fn mean(items: &[ServingMetrics]) -> ServingMetrics {
        if items.is_empty() {
            return ServingMetrics::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&ServingMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        ServingMetrics {
            token_throughput: avg(|m| m.token_throughput),
            seq_throughput: avg(|m| m.seq_throughput),
            mean_token_latency_s: avg(|m| m.mean_token_latency_s),
            mean_latency_s: avg(|m| m.mean_latency_s),
            p50_latency_s: avg(|m| m.p50_latency_s),
            p95_latency_s: avg(|m| m.p95_latency_s),
            completed: items.iter().map(|m| m.completed).sum::<usize>() / items.len(),
            total: items.iter().map(|m| m.total).sum::<usize>() / items.len(),
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Aggregates completed requests. Throughput is measured over the window
/// from the earliest arrival to the last completion among `records`.
pub fn aggregate(records: &[RequestRecord], total: usize) -> ServingMetrics {
    if records.is_empty() {
        return ServingMetrics {
            total,
            ..ServingMetrics::default()
        };
    }
    let first_arrival = records
        .iter()
        .map(|r| r.arrival_s)
        .fold(f64::INFINITY, f64::min);
    let last_completion = records.iter().map(|r| r.completion_s).fold(0.0, f64::max);
    let span = last_completion - first_arrival;
    let tokens: u64 = records.iter().map(|r| r.output_len).sum();
    let n = records.len() as f64;

    let mut latencies: Vec<f64> = records.iter().map(RequestRecord::latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    let (token_throughput, seq_throughput) = if span > 0.0 {
        (tokens as f64 / span, n / span)
    } else {
        (0.0, 0.0)
    };

    ServingMetrics {
        token_throughput,
        seq_throughput,
        mean_token_latency_s: records
            .iter()
            .map(RequestRecord::token_latency_s)
            .sum::<f64>()
            / n,
        mean_latency_s: latencies.iter().sum::<f64>() / n,
        p50_latency_s: percentile(&latencies, 50.0),
        p95_latency_s: percentile(&latencies, 95.0),
        completed: records.len(),
        total,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub records: Vec<RequestRecord>,
    /// Set when there were not enough records to trim both ends.
    pub warning: bool,
}

/// Drops the first and last [`WARMUP_TRIM`] records (ordered by completion).
pub fn trim_warmup(records: &[RequestRecord]) -> Trimmed {
    if records.len() <= 2 * WARMUP_TRIM {
        return Trimmed {
            records: Vec::new(),
            warning: true,
        };
    }
    Trimmed {
        records: records[WARMUP_TRIM..records.len() - WARMUP_TRIM].to_vec(),
        warning: false,
    }
}
