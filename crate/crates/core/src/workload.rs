//! Synthetic request traces and JSON-lines trace IO.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Request {
    pub id: u64,
    pub input_len: u64,
    pub output_len: u64,
    pub arrival_time_s: f64,
}

impl Request {
    pub fn new(id: u64, input_len: u64, output_len: u64, arrival_time_s: f64) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::NonPositiveField("input_tokens"));
        }
        if output_len == 0 {
            return Err(Error::NonPositiveField("output_tokens"));
        }
        if !(arrival_time_s >= 0.0 && arrival_time_s.is_finite()) {
            return Err(Error::invalid("arrival_s", format!("{arrival_time_s}")));
        }
        Ok(Request {
            id,
            input_len,
            output_len,
            arrival_time_s,
        })
    }
}

/// Length distributions of the four dataset scenarios. Lengths are drawn
/// uniformly over each scenario's stated range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Inputs and outputs of at most 50 tokens.
    ShortToShort,
    /// Short inputs, outputs of 51..=1000 tokens.
    ShortToLong,
    /// Short inputs, outputs of exactly 16,000 tokens.
    ShortTo16k,
    /// Inputs of 1100..=1500 tokens, outputs of at most 120.
    LongToShort,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::ShortToShort,
        Scenario::ShortToLong,
        Scenario::ShortTo16k,
        Scenario::LongToShort,
    ];

    pub fn input_range(self) -> (u64, u64) {
        match self {
            Scenario::ShortToShort | Scenario::ShortToLong | Scenario::ShortTo16k => (1, 50),
            Scenario::LongToShort => (1100, 1500),
        }
    }

    pub fn output_range(self) -> (u64, u64) {
        match self {
            Scenario::ShortToShort => (1, 50),
            Scenario::ShortToLong => (51, 1000),
            Scenario::ShortTo16k => (16_000, 16_000),
            Scenario::LongToShort => (1, 120),
        }
    }

    pub fn default_count(self) -> usize {
        match self {
            Scenario::ShortTo16k => 80,
            _ => 1000,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Scenario::ShortToShort => "s2s",
            Scenario::ShortToLong => "s2l",
            Scenario::ShortTo16k => "s16k",
            Scenario::LongToShort => "l2s",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "s2s" | "shorttoshort" => Ok(Scenario::ShortToShort),
            "s2l" | "shorttolong" => Ok(Scenario::ShortToLong),
            "s16k" | "shortto16k" => Ok(Scenario::ShortTo16k),
            "l2s" | "longtoshort" => Ok(Scenario::LongToShort),
            _ => Err(Error::invalid(
                "scenario",
                format!("`{s}` (expected s2s, s2l, s16k or l2s)"),
            )),
        }
    }
}

/// `n` requests with zero arrival times. Pure in `(scenario, n, seed)`.
pub fn generate(scenario: Scenario, n: usize, seed: u64) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (in_lo, in_hi) = scenario.input_range();
    let (out_lo, out_hi) = scenario.output_range();
    (0..n as u64)
        .map(|id| Request {
            id,
            input_len: rng.random_range(in_lo..=in_hi),
            output_len: rng.random_range(out_lo..=out_hi),
            arrival_time_s: 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalProcess {
    /// All requests present at t = 0.
    Offline,
    /// Exponential inter-arrival gaps at `rate` requests/s.
    Poisson { rate: f64 },
    /// Constant gaps of `1 / rate` seconds.
    Uniform { rate: f64 },
}

/// Overwrites arrival times in trace order. The first request arrives at 0.
pub fn assign_arrivals(trace: &mut [Request], process: ArrivalProcess, seed: u64) -> Result<()> {
    match process {
        ArrivalProcess::Offline => trace.iter_mut().for_each(|r| r.arrival_time_s = 0.0),
        ArrivalProcess::Uniform { rate } => {
            check_rate(rate)?;
            for (i, r) in trace.iter_mut().enumerate() {
                r.arrival_time_s = i as f64 / rate;
            }
        }
        ArrivalProcess::Poisson { rate } => {
            check_rate(rate)?;
            let gaps = Exp::new(rate).map_err(|e| Error::invalid("rate", e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = 0.0;
            for (i, r) in trace.iter_mut().enumerate() {
                if i > 0 {
                    t += gaps.sample(&mut rng);
                }
                r.arrival_time_s = t;
            }
        }
    }
    Ok(())
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("rate", format!("{rate} (must be positive)")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    input_tokens: u64,
    output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arrival_s: Option<f64>,
}

/// Parses a JSON-lines trace. Blank lines are skipped; ids follow line order.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<Request>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let req = Request::new(
            out.len() as u64,
            rec.input_tokens,
            rec.output_tokens,
            rec.arrival_s.unwrap_or(0.0),
        )
        .map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        out.push(req);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file))
}

pub fn write_trace<W: Write>(mut writer: W, trace: &[Request]) -> Result<()> {
    for r in trace {
        let line = TraceLine {
            input_tokens: r.input_len,
            output_tokens: r.output_len,
            arrival_s: Some(r.arrival_time_s),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
