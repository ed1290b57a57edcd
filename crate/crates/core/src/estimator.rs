//! Linear runtime model for whole-stack prefill and decode steps.
//!
//! Prefill time is modeled over the feature vector
//! `(b·s·h²·l, b·s·h·h'·l, b·s²·n·l, b·s·h·l, b·s·h'·l, 1)` with coefficients
//! `(alpha, beta, gamma, eta, lambda, mu)`; decode time over
//! `(b·s·h·l, b·s·n·l, b·h·l, 1)` with `(phi, psi, omega, nu)`. All times are
//! in milliseconds.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arch::{ModelConfig, Phase};
use crate::error::{Error, Result};

pub const PREFILL_NAMES: [&str; 6] = ["alpha", "beta", "gamma", "eta", "lambda", "mu"];
pub const DECODE_NAMES: [&str; 4] = ["phi", "psi", "omega", "nu"];

/// Default relative singular-value cutoff for the rank test.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub fn coefficient_names(phase: Phase) -> &'static [&'static str] {
    match phase {
        Phase::Prefill => &PREFILL_NAMES,
        Phase::Decode => &DECODE_NAMES,
    }
}

fn checked(what: &'static str, factors: &[u64]) -> Result<f64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .map(|v| v as f64)
        .ok_or(Error::Overflow(what))
}

pub fn prefill_features(cfg: &ModelConfig, b: u64, s: u64) -> Result<Vec<f64>> {
    let (h, hf, n, l) = (
        cfg.hidden_size,
        cfg.intermediate_size,
        cfg.num_heads,
        cfg.num_layers,
    );
    Ok(vec![
        checked("b*s*h^2*l", &[b, s, h, h, l])?,
        checked("b*s*h*h'*l", &[b, s, h, hf, l])?,
        checked("b*s^2*n*l", &[b, s, s, n, l])?,
        checked("b*s*h*l", &[b, s, h, l])?,
        checked("b*s*h'*l", &[b, s, hf, l])?,
        1.0,
    ])
}

/// `s` is the number of cached tokens per sequence.
pub fn decode_features(cfg: &ModelConfig, b: u64, s: u64) -> Result<Vec<f64>> {
    let (h, n, l) = (cfg.hidden_size, cfg.num_heads, cfg.num_layers);
    Ok(vec![
        checked("b*s*h*l", &[b, s, h, l])?,
        checked("b*s*n*l", &[b, s, n, l])?,
        checked("b*h*l", &[b, h, l])?,
        1.0,
    ])
}

pub fn features(cfg: &ModelConfig, phase: Phase, b: u64, s: u64) -> Result<Vec<f64>> {
    match phase {
        Phase::Prefill => prefill_features(cfg, b, s),
        Phase::Decode => decode_features(cfg, b, s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub phase: Phase,
    pub b: u64,
    pub s: u64,
    #[serde(rename = "time_ms")]
    pub measured_ms: f64,
}

impl TimingSample {
    pub fn new(phase: Phase, b: u64, s: u64, measured_ms: f64) -> Result<Self> {
        if b == 0 {
            return Err(Error::NonPositiveField("b"));
        }
        if s == 0 {
            return Err(Error::NonPositiveField("s"));
        }
        if !(measured_ms > 0.0 && measured_ms.is_finite()) {
            return Err(Error::NonPositiveField("time_ms"));
        }
        Ok(TimingSample {
            phase,
            b,
            s,
            measured_ms,
        })
    }
}

/// Reads a `phase,b,s,time_ms` CSV.
pub fn read_samples<R: Read>(reader: R) -> Result<Vec<TimingSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["phase", "b", "s", "time_ms"] {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "expected header `phase,b,s,time_ms`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TimingSample>().enumerate() {
        let line = i + 2;
        let raw = row.map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        let sample = TimingSample::new(raw.phase, raw.b, raw.s, raw.measured_ms).map_err(|e| {
            Error::Parse {
                line,
                reason: e.to_string(),
            }
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_samples(path: &Path) -> Result<Vec<TimingSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(file)
}

pub fn write_samples<W: Write>(writer: W, samples: &[TimingSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCoefficients {
    phase: Phase,
    values: Vec<f64>,
}

impl RegressionCoefficients {
    pub fn new(phase: Phase, values: Vec<f64>) -> Result<Self> {
        let expected = coefficient_names(phase).len();
        if values.len() != expected {
            return Err(Error::FeatureDimension {
                expected,
                got: values.len(),
            });
        }
        Ok(RegressionCoefficients { phase, values })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn intercept(&self) -> f64 {
        *self.values.last().expect("non-empty by construction")
    }

    /// Table of published coefficients for LLaMA-2 7B on an A800.
    pub fn published(library: Library, phase: Phase) -> Self {
        let values = match (library, phase) {
            (Library::Transformers, Phase::Prefill) => {
                vec![3.75e-11, 3.69e-11, 4.20e-8, 1.70e-7, 6.35e-9, 3.28e1]
            }
            (Library::Vllm, Phase::Prefill) => {
                vec![4.51e-11, 3.35e-11, 2.29e-9, 5.88e-8, 6.26e-9, -1.64]
            }
            (Library::Transformers, Phase::Decode) => vec![2.31e-8, 2.65e-11, 3.32e-12, 1.85e1],
            (Library::Vllm, Phase::Decode) => vec![2.23e-9, 1.75e-11, 1.63e-8, 1.12e1],
        };
        RegressionCoefficients { phase, values }
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert(
            "phase".into(),
            serde_json::Value::String(self.phase.to_string()),
        );
        for (name, v) in coefficient_names(self.phase).iter().zip(&self.values) {
            map.insert((*name).into(), serde_json::json!(v));
        }
        serde_json::to_string_pretty(&map).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(text)?;
        let phase: Phase = raw
            .get("phase")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::invalid("coefficients", "missing `phase`"))?
            .parse()?;
        let names = coefficient_names(phase);
        if let Some(extra) = raw
            .keys()
            .find(|k| *k != "phase" && !names.contains(&k.as_str()))
        {
            return Err(Error::invalid(
                "coefficients",
                format!("unexpected key `{extra}` for {phase} coefficients"),
            ));
        }
        let values = names
            .iter()
            .map(|name| {
                raw.get(*name)
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| Error::invalid("coefficients", format!("missing `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        RegressionCoefficients::new(phase, values)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Library {
    Transformers,
    Vllm,
}

impl std::str::FromStr for Library {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transformers" | "trf" => Ok(Library::Transformers),
            "vllm" => Ok(Library::Vllm),
            other => Err(Error::invalid("library", format!("`{other}`"))),
        }
    }
}

/// Dot product of coefficients and features, in milliseconds.
pub fn predict(coeffs: &RegressionCoefficients, features: &[f64]) -> Result<f64> {
    if features.len() != coeffs.values.len() {
        return Err(Error::FeatureDimension {
            expected: coeffs.values.len(),
            got: features.len(),
        });
    }
    Ok(coeffs.values.iter().zip(features).map(|(c, f)| c * f).sum())
}

pub fn predict_at(
    coeffs: &RegressionCoefficients,
    cfg: &ModelConfig,
    b: u64,
    s: u64,
) -> Result<f64> {
    predict(coeffs, &features(cfg, coeffs.phase, b, s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Fail when the design matrix is numerically rank deficient.
    #[default]
    Reject,
    /// Return the minimum-norm least-squares solution (truncated SVD).
    MinimumNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub rank_policy: RankPolicy,
    pub rank_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            rank_policy: RankPolicy::Reject,
            rank_tolerance: RANK_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub coefficients: RegressionCoefficients,
    pub rms_relative_error: f64,
    /// Set when the equilibrated design is ill-conditioned or was truncated.
    pub condition_warning: bool,
    pub rank: usize,
    pub condition_number: f64,
}

pub fn fit(samples: &[TimingSample], cfg: &ModelConfig, phase: Phase) -> Result<FitReport> {
    fit_with(samples, cfg, phase, FitOptions::default())
}

pub fn fit_with(
    samples: &[TimingSample],
    cfg: &ModelConfig,
    phase: Phase,
    opts: FitOptions,
) -> Result<FitReport> {
    let rows = samples
        .iter()
        .map(|s| {
            if s.phase != phase {
                return Err(Error::MixedPhase {
                    expected: phase,
                    found: s.phase,
                });
            }
            Ok((features(cfg, phase, s.b, s.s)?, s.measured_ms))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_rows(phase, &rows, opts)
}

/// Ordinary least squares over precomputed `(features, measured_ms)` rows.
///
/// Columns are scaled to unit max-norm before the SVD so that features
/// spanning twelve orders of magnitude do not swamp the intercept.
pub fn fit_rows(phase: Phase, rows: &[(Vec<f64>, f64)], opts: FitOptions) -> Result<FitReport> {
    let k = coefficient_names(phase).len();
    if rows.len() < k {
        return Err(Error::Underdetermined {
            samples: rows.len(),
            coefficients: k,
        });
    }
    if let Some((f, _)) = rows.iter().find(|(f, _)| f.len() != k) {
        return Err(Error::FeatureDimension {
            expected: k,
            got: f.len(),
        });
    }

    let m = rows.len();
    let mut design = DMatrix::from_fn(m, k, |i, j| rows[i].0[j]);
    let target = DVector::from_iterator(m, rows.iter().map(|(_, y)| *y));

    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let max = design.column(j).amax();
            if max > 0.0 {
                max
            } else {
                1.0
            }
        })
        .collect();
    for (j, scale) in scales.iter().enumerate() {
        design.column_mut(j).unscale_mut(*scale);
    }

    let svd = design.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let s_min = sigma.min();
    let cutoff = opts.rank_tolerance * s_max;
    let rank = sigma.iter().filter(|&&v| v > cutoff).count();
    let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };

    if rank < k && opts.rank_policy == RankPolicy::Reject {
        return Err(Error::RankDeficient {
            rank,
            columns: k,
            ratio,
        });
    }

    let solved = svd
        .solve(&target, cutoff)
        .map_err(|e| Error::invalid("least squares", e))?;
    let values: Vec<f64> = solved.iter().zip(&scales).map(|(c, s)| c / s).collect();
    let coefficients = RegressionCoefficients::new(phase, values)?;

    let mut sq = 0.0;
    for (f, y) in rows {
        let rel = (predict(&coefficients, f)? - y) / y;
        sq += rel * rel;
    }
    let condition_number = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };

    Ok(FitReport {
        coefficients,
        rms_relative_error: (sq / m as f64).sqrt(),
        condition_warning: rank < k || condition_number > 1e8,
        rank,
        condition_number,
    })
}
