//! Per-operation FLOPs, memory traffic and arithmetic intensity of one
//! decoder layer.
//!
//! FLOPs follow the usual LLaMA accounting (fused QKV projection, RoPE at 6
//! FLOPs per element, a lump `4 b s² n` for scaling and softmax, 5 FLOPs per
//! element for residual add plus RMSNorm). Memory traffic ("MOPs") is an ideal
//! single-pass byte model: every input operand and weight read once, every
//! output written once. Real kernels re-read tiles, so modeled traffic is a
//! lower bound and modeled intensity an upper bound.

use std::fmt;

use serde::Serialize;

use crate::arch::{ModelConfig, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    QkvProj,
    Rope,
    CacheUpdate,
    Attention,
    OutProj,
    AddNormAttn,
    GateUpProj,
    SwishMul,
    DownProj,
    AddNormFfn,
}

impl OpKind {
    pub const PREFILL: [OpKind; 9] = [
        OpKind::QkvProj,
        OpKind::Rope,
        OpKind::Attention,
        OpKind::OutProj,
        OpKind::AddNormAttn,
        OpKind::GateUpProj,
        OpKind::SwishMul,
        OpKind::DownProj,
        OpKind::AddNormFfn,
    ];

    pub const DECODE: [OpKind; 10] = [
        OpKind::QkvProj,
        OpKind::Rope,
        OpKind::CacheUpdate,
        OpKind::Attention,
        OpKind::OutProj,
        OpKind::AddNormAttn,
        OpKind::GateUpProj,
        OpKind::SwishMul,
        OpKind::DownProj,
        OpKind::AddNormFfn,
    ];

    pub fn for_phase(phase: Phase) -> &'static [OpKind] {
        match phase {
            Phase::Prefill => &Self::PREFILL,
            Phase::Decode => &Self::DECODE,
        }
    }

    /// Weight-matrix projections.
    pub fn is_projection(self) -> bool {
        matches!(
            self,
            OpKind::QkvProj | OpKind::OutProj | OpKind::GateUpProj | OpKind::DownProj
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::QkvProj => "qkv_proj",
            OpKind::Rope => "rope",
            OpKind::CacheUpdate => "cache_update",
            OpKind::Attention => "attention",
            OpKind::OutProj => "out_proj",
            OpKind::AddNormAttn => "add_norm_attn",
            OpKind::GateUpProj => "gate_up_proj",
            OpKind::SwishMul => "swish_mul",
            OpKind::DownProj => "down_proj",
            OpKind::AddNormFfn => "add_norm_ffn",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the decode step appends new keys and values to the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub enum UpdateLayout {
    /// Contiguous buffer reallocated and copied on every append.
    Vanilla,
    /// Fixed-size blocks, append only.
    #[default]
    Paged,
    /// Per-token slots, append only.
    TokenGranular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpCost {
    pub kind: OpKind,
    pub flops: u64,
    /// Bytes read plus written.
    pub mops: u64,
    pub arithmetic_intensity: f64,
}

impl OpCost {
    fn new(kind: OpKind, flops: u64, mops: u64) -> Self {
        let arithmetic_intensity = if flops == 0 || mops == 0 {
            0.0
        } else {
            flops as f64 / mops as f64
        };
        OpCost {
            kind,
            flops,
            mops,
            arithmetic_intensity,
        }
    }
}

/// Checked product of integer factors.
fn prod(what: &'static str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow(what))
}

/// Checked sum of integer terms.
fn sum(what: &'static str, terms: &[u64]) -> Result<u64> {
    terms
        .iter()
        .try_fold(0u64, |acc, &t| acc.checked_add(t))
        .ok_or(Error::Overflow(what))
}

fn positive(name: &'static str, v: u64) -> Result<()> {
    if v == 0 {
        Err(Error::NonPositiveField(name))
    } else {
        Ok(())
    }
}

/// Validated dimensions the formulas read from.
struct Dims {
    h: u64,
    hf: u64,
    n: u64,
    bytes: u64,
}

impl Dims {
    fn of(cfg: &ModelConfig) -> Result<Self> {
        let cfg = cfg.validate()?;
        Ok(Dims {
            h: cfg.hidden_size,
            hf: cfg.intermediate_size,
            n: cfg.num_heads,
            bytes: cfg.bytes_per_scalar,
        })
    }

    fn bytes(&self, what: &'static str, scalars: u64) -> Result<u64> {
        scalars.checked_mul(self.bytes).ok_or(Error::Overflow(what))
    }

    /// Costs shared by both phases for `t` token rows (`t = b*s` in prefill,
    /// `t = b` in decode). Attention and the cache update are phase specific.
    fn pointwise_and_projections(&self, t: u64) -> Result<Vec<OpCost>> {
        let (h, hf) = (self.h, self.hf);
        let th = prod("t*h", &[t, h])?;
        let thf = prod("t*h'", &[t, hf])?;
        let hh = prod("h*h", &[h, h])?;
        let hhf = prod("h*h'", &[h, hf])?;

        let qkv = OpCost::new(
            OpKind::QkvProj,
            prod("qkv flops", &[6, th, h])?,
            self.bytes(
                "qkv mops",
                sum(
                    "qkv mops",
                    &[th, prod("hh", &[3, hh])?, prod("th", &[3, th])?],
                )?,
            )?,
        );
        // reads q,k and writes them back rotated
        let rope = OpCost::new(
            OpKind::Rope,
            prod("rope flops", &[6, th])?,
            self.bytes("rope mops", prod("rope mops", &[4, th])?)?,
        );
        let out = OpCost::new(
            OpKind::OutProj,
            prod("out flops", &[2, th, h])?,
            self.bytes("out mops", sum("out mops", &[th, hh, th])?)?,
        );
        // residual read, input read, output write, norm weight read
        let add_norm = |kind| -> Result<OpCost> {
            Ok(OpCost::new(
                kind,
                prod("add&norm flops", &[5, th])?,
                self.bytes(
                    "add&norm mops",
                    sum("add&norm mops", &[prod("th", &[3, th])?, h])?,
                )?,
            ))
        };
        let gate_up = OpCost::new(
            OpKind::GateUpProj,
            prod("gate/up flops", &[4, th, hf])?,
            self.bytes(
                "gate/up mops",
                sum(
                    "gate/up mops",
                    &[th, prod("gate/up", &[2, hhf])?, prod("thf", &[2, thf])?],
                )?,
            )?,
        );
        let swish = OpCost::new(
            OpKind::SwishMul,
            prod("swish flops", &[2, thf])?,
            self.bytes("swish mops", prod("swish mops", &[3, thf])?)?,
        );
        let down = OpCost::new(
            OpKind::DownProj,
            prod("down flops", &[2, th, hf])?,
            self.bytes("down mops", sum("down mops", &[thf, hhf, th])?)?,
        );

        Ok(vec![
            qkv,
            rope,
            out,
            add_norm(OpKind::AddNormAttn)?,
            gate_up,
            swish,
            down,
            add_norm(OpKind::AddNormFfn)?,
        ])
    }
}

fn ordered(phase: Phase, mut costs: Vec<OpCost>) -> Vec<OpCost> {
    let order = OpKind::for_phase(phase);
    costs.sort_by_key(|c| order.iter().position(|k| *k == c.kind));
    costs
}

/// One decoder layer of the prefill pass over `b` prompts of `s` tokens,
/// in the order of [`OpKind::PREFILL`].
pub fn prefill_op_costs(cfg: &ModelConfig, b: u64, s: u64) -> Result<Vec<OpCost>> {
    positive("b", b)?;
    positive("s", s)?;
    let dims = Dims::of(cfg)?;
    let t = prod("b*s", &[b, s])?;
    let mut costs = dims.pointwise_and_projections(t)?;

    let th = prod("b*s*h", &[t, dims.h])?;
    let bssn = prod("b*s*s*n", &[t, s, dims.n])?;
    // QK^T and PV: 4bs²h; scale + softmax: 4bs²n
    let flops = sum(
        "attention flops",
        &[
            prod("attention", &[4, t, s, dims.h])?,
            prod("attention", &[4, bssn])?,
        ],
    )?;
    // read Q, K, V; write then read the score matrix; write O
    let mops = dims.bytes(
        "attention mops",
        sum(
            "attention mops",
            &[prod("th", &[3, th])?, prod("scores", &[2, bssn])?, th],
        )?,
    )?;
    costs.push(OpCost::new(OpKind::Attention, flops, mops));
    Ok(ordered(Phase::Prefill, costs))
}

/// One decoder layer of a single decode step for `b` sequences with
/// `s_past` cached tokens each, in the order of [`OpKind::DECODE`].
pub fn decode_op_costs(
    cfg: &ModelConfig,
    b: u64,
    s_past: u64,
    layout: UpdateLayout,
) -> Result<Vec<OpCost>> {
    positive("b", b)?;
    positive("s_past", s_past)?;
    let dims = Dims::of(cfg)?;
    let mut costs = dims.pointwise_and_projections(b)?;

    let bh = prod("b*h", &[b, dims.h])?;
    let bsh = prod("b*s*h", &[b, s_past, dims.h])?;
    let bsn = prod("b*s*n", &[b, s_past, dims.n])?;
    let flops = sum(
        "attention flops",
        &[prod("attention", &[4, bsh])?, prod("attention", &[4, bsn])?],
    )?;
    // read q, read cached K and V, write then read scores, write o
    let mops = dims.bytes(
        "attention mops",
        sum(
            "attention mops",
            &[bh, prod("kv", &[2, bsh])?, prod("scores", &[2, bsn])?, bh],
        )?,
    )?;
    costs.push(OpCost::new(OpKind::Attention, flops, mops));

    let cache_scalars = match layout {
        // read + write of the new k and v
        UpdateLayout::Paged | UpdateLayout::TokenGranular => prod("cache", &[2, 2, bh])?,
        // copy the whole cache (read + write) plus the append
        UpdateLayout::Vanilla => prod(
            "cache",
            &[
                2,
                sum(
                    "cache",
                    &[prod("cache", &[2, bsh])?, prod("cache", &[2, bh])?],
                )?,
            ],
        )?,
    };
    costs.push(OpCost::new(
        OpKind::CacheUpdate,
        0,
        dims.bytes("cache mops", cache_scalars)?,
    ));
    Ok(ordered(Phase::Decode, costs))
}

/// Per-layer costs for either phase. For decode, `s` is the past length.
pub fn op_costs(
    cfg: &ModelConfig,
    phase: Phase,
    b: u64,
    s: u64,
    layout: UpdateLayout,
) -> Result<Vec<OpCost>> {
    match phase {
        Phase::Prefill => prefill_op_costs(cfg, b, s),
        Phase::Decode => decode_op_costs(cfg, b, s, layout),
    }
}

/// Whole-stack totals: every per-layer figure scaled by the layer count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCost {
    pub total_flops: u64,
    pub total_mops: u64,
    pub per_kind: Vec<(OpKind, u64, u64)>,
}

impl ModelCost {
    pub fn arithmetic_intensity(&self) -> f64 {
        if self.total_flops == 0 || self.total_mops == 0 {
            0.0
        } else {
            self.total_flops as f64 / self.total_mops as f64
        }
    }
}

pub fn aggregate(layer_costs: &[OpCost], cfg: &ModelConfig) -> Result<ModelCost> {
    let l = cfg.num_layers;
    let mut per_kind: Vec<(OpKind, u64, u64)> = Vec::new();
    for c in layer_costs {
        match per_kind.iter_mut().find(|(k, _, _)| *k == c.kind) {
            Some(entry) => {
                entry.1 = entry
                    .1
                    .checked_add(c.flops)
                    .ok_or(Error::Overflow("aggregate"))?;
                entry.2 = entry
                    .2
                    .checked_add(c.mops)
                    .ok_or(Error::Overflow("aggregate"))?;
            }
            None => per_kind.push((c.kind, c.flops, c.mops)),
        }
    }
    for entry in &mut per_kind {
        entry.1 = entry.1.checked_mul(l).ok_or(Error::Overflow("aggregate"))?;
        entry.2 = entry.2.checked_mul(l).ok_or(Error::Overflow("aggregate"))?;
    }
    let total_flops = sum(
        "aggregate flops",
        &per_kind.iter().map(|e| e.1).collect::<Vec<_>>(),
    )?;
    let total_mops = sum(
        "aggregate mops",
        &per_kind.iter().map(|e| e.2).collect::<Vec<_>>(),
    )?;
    Ok(ModelCost {
        total_flops,
        total_mops,
        per_kind,
    })
}

/// Bytes of K and V cached for `b` sequences of `s` tokens across all layers.
pub fn kv_cache_bytes(cfg: &ModelConfig, b: u64, s: u64) -> Result<u64> {
    prod(
        "kv cache bytes",
        &[
            2,
            cfg.num_layers,
            cfg.hidden_size,
            cfg.bytes_per_scalar,
            b,
            s,
        ],
    )
}
