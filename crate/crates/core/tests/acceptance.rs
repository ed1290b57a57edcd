//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use infercost::costmodel::{decode_op_costs, prefill_op_costs, OpKind, UpdateLayout};
use infercost::data::{data_dir, load_op_timings, total_ms, OpTiming};
use infercost::estimator::{
    features, fit_rows, fit_with, load_samples, predict, predict_at, FitOptions, Library,
    RankPolicy, RegressionCoefficients, TimingSample,
};
use infercost::hardware::{classify, ridge_point, BoundKind, HardwareSpec};
use infercost::kvsim::{cache_step_bytes, CacheLayout, KvCapacity};
use infercost::servesim::{run, sweep_rates, ArrivalKind, RatePoint, SchedulingPolicy, StepModel};
use infercost::workload::{generate, Scenario};
use infercost::{ModelConfig, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn(&Fixtures) -> Check);

/// Reference data, loaded before any criterion is timed.
struct Fixtures {
    prefill_seq: Vec<OpTiming>,
    decode_seq: Vec<OpTiming>,
    /// (library, phase) -> summed measured time at b=8, s=512 from the
    /// per-layer analysis tables.
    analysis: Vec<(String, Phase, f64)>,
    coefficients: Vec<(Library, RegressionCoefficients)>,
    samples: Vec<TimingSample>,
}

impl Fixtures {
    fn load() -> Result<Self, String> {
        let dir = data_dir();
        let err = |e: infercost::Error| e.to_string();
        let mut analysis = Vec::new();
        for (phase, file) in [
            (Phase::Prefill, "prefill_analysis_b8_s512.csv"),
            (Phase::Decode, "decode_analysis_b8_s512.csv"),
        ] {
            let path = dir.join(file);
            let mut rdr =
                csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| e.to_string())?;
                let t: f64 = rec[2]
                    .parse()
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                match analysis
                    .iter_mut()
                    .find(|(l, p, _)| l == &rec[0] && *p == phase)
                {
                    Some((_, _, sum)) => *sum += t,
                    None => analysis.push((rec[0].to_string(), phase, t)),
                }
            }
        }
        let mut coefficients = Vec::new();
        for (name, lib) in [
            ("transformers", Library::Transformers),
            ("vllm", Library::Vllm),
        ] {
            for phase in [Phase::Prefill, Phase::Decode] {
                let path = dir
                    .join("coefficients")
                    .join(format!("{name}-{phase}.json"));
                coefficients.push((lib, RegressionCoefficients::from_path(&path).map_err(err)?));
            }
        }
        Ok(Fixtures {
            prefill_seq: load_op_timings(&dir.join("prefill_ops_vs_seq.csv")).map_err(err)?,
            decode_seq: load_op_timings(&dir.join("decode_ops_vs_seq.csv")).map_err(err)?,
            analysis,
            coefficients,
            samples: load_samples(&dir.join("transformers_samples.csv")).map_err(err)?,
        })
    }

    fn analysis_sum(&self, library: &str, phase: Phase) -> Result<f64, String> {
        self.analysis
            .iter()
            .find(|(l, p, _)| l == library && *p == phase)
            .map(|(_, _, t)| *t)
            .ok_or_else(|| format!("no {library} {phase} analysis rows"))
    }

    fn coefficients(&self, lib: Library, phase: Phase) -> Result<&RegressionCoefficients, String> {
        self.coefficients
            .iter()
            .find(|(l, c)| *l == lib && c.phase() == phase)
            .map(|(_, c)| c)
            .ok_or_else(|| format!("no {lib:?} {phase} coefficients"))
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

fn c1_decode_ai(_: &Fixtures) -> Check {
    let costs = decode_op_costs(&ModelConfig::llama2_7b(), 8, 512, UpdateLayout::Paged)
        .map_err(|e| e.to_string())?;
    let qkv = costs.iter().find(|c| c.kind == OpKind::QkvProj).unwrap();
    let ai = qkv.arithmetic_intensity;
    ensure((ai - 7.98).abs() <= 0.02, format!("qkv AI {ai:.4}"))?;
    Ok(format!("qkv AI {ai:.4}"))
}

fn c2_bounds(_: &Fixtures) -> Check {
    let cfg = ModelConfig::llama2_7b();
    let hw = HardwareSpec::a800();
    let ridge = ridge_point(&hw);
    ensure((ridge - 153.0).abs() < 0.05, format!("ridge {ridge}"))?;
    for c in decode_op_costs(&cfg, 8, 512, UpdateLayout::Paged).map_err(|e| e.to_string())? {
        let bound = classify(&c, &hw).map_err(|e| e.to_string())?;
        ensure(
            bound == BoundKind::MemoryBound,
            format!("decode {} is {bound}", c.kind),
        )?;
    }
    let mut projections = 0;
    for c in prefill_op_costs(&cfg, 8, 512).map_err(|e| e.to_string())? {
        if c.kind.is_projection() {
            projections += 1;
            let bound = classify(&c, &hw).map_err(|e| e.to_string())?;
            ensure(
                bound == BoundKind::ComputeBound,
                format!("prefill {} is {bound}", c.kind),
            )?;
        }
    }
    ensure(projections == 4, "expected four projections")?;
    Ok(format!(
        "ridge {ridge:.2}; 10 decode ops memory-bound, 4 prefill projections compute-bound"
    ))
}

fn c3_published(fx: &Fixtures) -> Check {
    let cfg = ModelConfig::llama2_7b();
    use Library::{Transformers, Vllm};
    // (library, phase, expected prediction, tolerance, measured sum, max relative error)
    let cases = [
        (
            Transformers,
            Phase::Decode,
            30.9,
            0.5,
            fx.analysis_sum("transformers", Phase::Decode)?,
            0.05,
        ),
        (
            Transformers,
            Phase::Prefill,
            524.0,
            3.0,
            total_ms(&fx.prefill_seq, "transformers", 8, 512),
            0.05,
        ),
        (
            Vllm,
            Phase::Prefill,
            341.0,
            3.0,
            fx.analysis_sum("vllm", Phase::Prefill)?,
            0.05,
        ),
        (
            Vllm,
            Phase::Decode,
            12.4,
            0.5,
            fx.analysis_sum("vllm", Phase::Decode)?,
            0.10,
        ),
    ];
    let mut parts = Vec::new();
    for (lib, phase, expect, tol, measured, max_err) in cases {
        let c = fx.coefficients(lib, phase)?;
        ensure(
            *c == RegressionCoefficients::published(lib, phase),
            format!("{lib:?} {phase} file differs"),
        )?;
        let p = predict_at(c, &cfg, 8, 512).map_err(|e| e.to_string())?;
        let err = rel(p, measured);
        let line = format!(
            "{lib:?} {phase} {p:.2} ms vs {measured:.2} ({:.1}%)",
            100.0 * err
        );
        ensure((p - expect).abs() <= tol && err <= max_err, line.clone())?;
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn synthetic_design(phase: Phase, rng: &mut ChaCha8Rng, rows: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let n = rng.random_range(8u64..=64);
            let d = [64u64, 128][rng.random_range(0..2)];
            let cfg = ModelConfig {
                hidden_size: n * d,
                intermediate_size: rng.random_range(2u64..=4) * n * d,
                num_heads: n,
                head_dim: d,
                num_layers: rng.random_range(16u64..=80),
                bytes_per_scalar: 2,
            };
            features(
                &cfg,
                phase,
                rng.random_range(1..=32),
                rng.random_range(32..=4096),
            )
            .unwrap()
        })
        .collect()
}

fn c4_refit(fx: &Fixtures) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for lib in [Library::Transformers, Library::Vllm] {
        for phase in [Phase::Prefill, Phase::Decode] {
            let truth = RegressionCoefficients::published(lib, phase);
            let rows: Vec<(Vec<f64>, f64)> = synthetic_design(phase, &mut rng, 48)
                .into_iter()
                .map(|f| {
                    let y = predict(&truth, &f).unwrap();
                    (f, y)
                })
                .collect();
            let report =
                fit_rows(phase, &rows, FitOptions::default()).map_err(|e| e.to_string())?;
            for (g, w) in report.coefficients.values().iter().zip(truth.values()) {
                worst = worst.max(rel(*g, *w));
            }
        }
    }
    ensure(worst < 1e-6, format!("synthetic recovery error {worst:e}"))?;

    let cfg = ModelConfig::llama2_7b();
    let samples: Vec<_> = fx
        .samples
        .iter()
        .filter(|s| s.phase == Phase::Prefill)
        .cloned()
        .collect();
    ensure(
        samples.len() == 9,
        format!("{} prefill sums", samples.len()),
    )?;
    let opts = FitOptions {
        rank_policy: RankPolicy::MinimumNorm,
        ..FitOptions::default()
    };
    let report = fit_with(&samples, &cfg, Phase::Prefill, opts).map_err(|e| e.to_string())?;
    let rms = report.rms_relative_error;
    ensure(rms <= 0.10, format!("rms on shipped sums {rms:.4}"))?;
    Ok(format!(
        "synthetic max rel error {worst:.1e}; shipped sums rms {:.2}% (rank {}/6)",
        100.0 * rms,
        report.rank
    ))
}

fn c5_cache_scaling(fx: &Fixtures) -> Check {
    let cfg = ModelConfig::llama2_7b();
    for s_past in [1u64, 511, 2047] {
        let v = cache_step_bytes(CacheLayout::Vanilla { reserved_len: 4096 }, &cfg, 8, s_past)
            .map_err(|e| e.to_string())?;
        let p = cache_step_bytes(CacheLayout::Paged { block_size: 16 }, &cfg, 8, s_past)
            .map_err(|e| e.to_string())?;
        ensure(v == (s_past + 1) * p, format!("ratio at {s_past}: {v}/{p}"))?;
    }
    let cache = |lib: &str| -> Vec<f64> {
        fx.decode_seq
            .iter()
            .filter(|r| r.library == lib && r.op == "cache_update")
            .map(|r| r.time_ms)
            .collect()
    };
    let trf = cache("transformers");
    let vllm = cache("vllm");
    ensure(
        trf.windows(2).all(|w| w[1] > w[0]),
        "transformers cache time not increasing",
    )?;
    let spread = vllm.iter().cloned().fold(0.0, f64::max)
        / vllm.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(spread < 1.1, "vllm cache time not flat")?;
    Ok(format!(
        "ratio = s_past+1 at 1/511/2047; measured copy-growth {:.2}->{:.2} ms vs flat {:.2} ms",
        trf[0],
        trf[trf.len() - 1],
        vllm[0]
    ))
}

fn c6_conservation(_: &Fixtures) -> Check {
    let cfg = ModelConfig::llama2_7b();
    let model = StepModel::published(cfg, Library::Vllm);
    let cap = KvCapacity::for_device(CacheLayout::default(), &cfg, &HardwareSpec::a800())
        .map_err(|e| e.to_string())?;
    let trace = generate(Scenario::ShortToShort, 1000, 7);
    let expected: u64 = trace.iter().map(|r| r.output_len).sum();
    for policy in [
        SchedulingPolicy::Static { batch_size: 32 },
        SchedulingPolicy::Continuous {
            max_seqs: 256,
            max_batch_tokens: 4096,
        },
        SchedulingPolicy::SplitFuse { token_budget: 512 },
    ] {
        let a = run(policy, &trace, &model, cap).map_err(|e| e.to_string())?;
        let b = run(policy, &trace, &model, cap).map_err(|e| e.to_string())?;
        ensure(
            a.generated_tokens() == expected,
            format!("{policy}: {} != {expected} tokens", a.generated_tokens()),
        )?;
        ensure(
            a.metrics.completed == 1000,
            format!("{policy}: {} completed", a.metrics.completed),
        )?;
        ensure(
            a.kv.peak_allocated_bytes <= cap.capacity_bytes
                && a.steps
                    .iter()
                    .all(|s| s.kv_allocated_bytes <= cap.capacity_bytes),
            format!("{policy}: capacity exceeded"),
        )?;
        let bits = |o: &infercost::servesim::SimOutcome| -> Vec<u64> {
            o.records
                .iter()
                .flat_map(|r| [r.id, r.first_token_s.to_bits(), r.completion_s.to_bits()])
                .collect()
        };
        ensure(
            bits(&a) == bits(&b) && a.metrics.csv_values() == b.metrics.csv_values(),
            format!("{policy}: runs differ"),
        )?;
    }
    Ok(format!(
        "{expected} tokens conserved under 3 policies; capacity respected; runs bit-identical"
    ))
}

/// Offered load counts as saturated once completed requests per second fall
/// below this fraction of the arrival rate.
const SATURATION_FRACTION: f64 = 0.9;

fn saturated(p: &RatePoint) -> bool {
    p.metrics.seq_throughput < SATURATION_FRACTION * p.rate
}

fn c7_serving_shape(_: &Fixtures) -> Check {
    let cfg = ModelConfig::llama2_7b();
    let model = StepModel::published(cfg, Library::Vllm);
    let cap = KvCapacity::for_device(CacheLayout::default(), &cfg, &HardwareSpec::a800())
        .map_err(|e| e.to_string())?;
    let base = generate(Scenario::LongToShort, 1000, 42);
    let rates = RATES;
    let seeds: Vec<u64> = (0..5).collect();
    let mut parts = Vec::new();
    for policy in [
        SchedulingPolicy::Continuous {
            max_seqs: 256,
            max_batch_tokens: 4096,
        },
        SchedulingPolicy::SplitFuse { token_budget: 2048 },
    ] {
        let pts = sweep_rates(
            policy,
            &base,
            &rates,
            &seeds,
            ArrivalKind::Poisson,
            &model,
            cap,
        )
        .map_err(|e| e.to_string())?;
        if std::env::var_os("ACCEPTANCE_VERBOSE").is_some() {
            for p in &pts {
                eprintln!(
                    "  {policy} rate {:>6}: tok/s {:>9.2} seq/s {:>7.3} token latency {:.4} s{}",
                    p.rate,
                    p.metrics.token_throughput,
                    p.metrics.seq_throughput,
                    p.metrics.mean_token_latency_s,
                    if saturated(p) { " (saturated)" } else { "" }
                );
            }
        }
        ensure(pts.iter().all(|p| !p.trim_warning), "trim warning")?;
        for w in pts.windows(2) {
            ensure(
                w[1].metrics.mean_token_latency_s >= w[0].metrics.mean_token_latency_s,
                format!(
                    "{policy}: token latency drops from {:.4} to {:.4} s between rates {} and {}",
                    w[0].metrics.mean_token_latency_s,
                    w[1].metrics.mean_token_latency_s,
                    w[0].rate,
                    w[1].rate
                ),
            )?;
        }
        if let SchedulingPolicy::SplitFuse { .. } = policy {
            let knee = pts.iter().position(saturated).unwrap_or(pts.len() - 1);
            ensure(
                knee >= 2,
                format!("saturates at the {knee}th rate; sweep too coarse"),
            )?;
            for w in pts[..=knee].windows(2) {
                ensure(
                    w[1].metrics.token_throughput >= w[0].metrics.token_throughput,
                    format!(
                        "splitfuse throughput drops between rates {} and {}",
                        w[0].rate, w[1].rate
                    ),
                )?;
            }
            parts.push(format!("splitfuse saturates at {} req/s", pts[knee].rate));
        }
    }
    Ok(format!(
        "token latency monotone over {} rates x {} seeds; {}",
        rates.len(),
        seeds.len(),
        parts.join("")
    ))
}

const RATES: [f64; 8] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

fn c8_oracle(_: &Fixtures) -> Check {
    let cfg = ModelConfig {
        hidden_size: 4,
        intermediate_size: 8,
        num_heads: 2,
        head_dim: 2,
        num_layers: 1,
        bytes_per_scalar: 2,
    };
    let counted = common::count_layer(
        &common::Dims {
            h: 4,
            n: 2,
            d: 2,
            ff: 8,
        },
        2,
        false,
    );
    let modeled = prefill_op_costs(&cfg, 1, 2).map_err(|e| e.to_string())?;
    ensure(counted.len() == modeled.len(), "operation count differs")?;
    for ((kind, flops), cost) in counted.iter().zip(&modeled) {
        ensure(
            *kind == cost.kind && *flops == cost.flops,
            format!("{kind}: counted {flops}, modeled {}", cost.flops),
        )?;
    }
    let total: u64 = counted.iter().map(|(_, f)| f).sum();
    Ok(format!("9 operations match enumeration ({total} FLOPs)"))
}

fn c9_workload(_: &Fixtures) -> Check {
    for sc in Scenario::ALL {
        let (ilo, ihi) = sc.input_range();
        let (olo, ohi) = sc.output_range();
        let trace = generate(sc, 10_000, 123);
        ensure(trace.len() == 10_000, "count")?;
        for r in &trace {
            ensure(
                (ilo..=ihi).contains(&r.input_len) && (olo..=ohi).contains(&r.output_len),
                format!("{sc}: {r:?} out of bounds"),
            )?;
            if sc == Scenario::ShortTo16k {
                ensure(
                    r.output_len == 16_000,
                    format!("s16k output {}", r.output_len),
                )?;
            }
        }
    }
    Ok("40000 requests within bounds; s16k outputs all 16000".into())
}

fn main() -> ExitCode {
    let fx = match Fixtures::load() {
        Ok(fx) => fx,
        Err(e) => {
            println!(
                "FAIL loading reference data from {}: {e}",
                data_dir().display()
            );
            return ExitCode::FAILURE;
        }
    };
    let criteria: [Criterion; 9] = [
        (
            "1 decode QKV arithmetic intensity",
            Duration::from_millis(1),
            c1_decode_ai,
        ),
        (
            "2 bound classification on A800",
            Duration::from_millis(1),
            c2_bounds,
        ),
        (
            "3 published-coefficient predictions",
            Duration::from_secs(1),
            c3_published,
        ),
        ("4 refit round trip", Duration::from_secs(1), c4_refit),
        (
            "5 cache-traffic scaling",
            Duration::from_millis(1),
            c5_cache_scaling,
        ),
        (
            "6 simulator conservation and determinism",
            Duration::from_secs(10),
            c6_conservation,
        ),
        (
            "7 serving-shape properties",
            Duration::from_secs(300),
            c7_serving_shape,
        ),
        (
            "8 tiny-instance FLOP oracle",
            Duration::from_millis(1),
            c8_oracle,
        ),
        ("9 workload bounds", Duration::from_secs(1), c9_workload),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check(&fx);
        let elapsed = start.elapsed();
        let (status, detail) = match result {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:?}, budget {budget:?}")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {name} [{elapsed:.2?}]: {detail}");
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
