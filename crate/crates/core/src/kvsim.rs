//! KV-cache memory under contiguous, blocked and token-granular layouts.

use std::fmt;

use serde::Serialize;

use crate::arch::ModelConfig;
use crate::costmodel::{kv_cache_bytes, UpdateLayout};
use crate::error::{Error, Result};
use crate::hardware::HardwareSpec;

pub const DEFAULT_BLOCK_SIZE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CacheLayout {
    /// One contiguous buffer of `reserved_len` tokens per sequence, copied on
    /// every append.
    Vanilla {
        reserved_len: u64,
    },
    /// Fixed-size blocks of `block_size` tokens.
    Paged {
        block_size: u64,
    },
    TokenGranular,
}

impl Default for CacheLayout {
    fn default() -> Self {
        CacheLayout::Paged {
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl fmt::Display for CacheLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheLayout::Vanilla { reserved_len } => write!(f, "vanilla({reserved_len})"),
            CacheLayout::Paged { block_size } => write!(f, "paged({block_size})"),
            CacheLayout::TokenGranular => f.write_str("token"),
        }
    }
}

impl CacheLayout {
    pub fn validate(self) -> Result<Self> {
        match self {
            CacheLayout::Vanilla { reserved_len: 0 } => {
                Err(Error::NonPositiveField("reserved_len"))
            }
            CacheLayout::Paged { block_size: 0 } => Err(Error::NonPositiveField("block_size")),
            other => Ok(other),
        }
    }

    pub fn update_layout(self) -> UpdateLayout {
        match self {
            CacheLayout::Vanilla { .. } => UpdateLayout::Vanilla,
            CacheLayout::Paged { .. } => UpdateLayout::Paged,
            CacheLayout::TokenGranular => UpdateLayout::TokenGranular,
        }
    }

    /// Tokens of cache space held by one sequence of `len` live tokens.
    pub fn allocated_tokens(self, len: u64) -> Result<u64> {
        match self.validate()? {
            CacheLayout::Vanilla { reserved_len } => {
                if len > reserved_len {
                    Err(Error::ReservedOverflow {
                        len,
                        reserved: reserved_len,
                    })
                } else {
                    Ok(reserved_len)
                }
            }
            CacheLayout::Paged { block_size } => len
                .div_ceil(block_size)
                .checked_mul(block_size)
                .ok_or(Error::Overflow("paged allocation")),
            CacheLayout::TokenGranular => Ok(len),
        }
    }
}

/// Bytes moved by the cache update of one decode step across all layers.
pub fn cache_step_bytes(
    layout: CacheLayout,
    cfg: &ModelConfig,
    b: u64,
    s_past: u64,
) -> Result<u64> {
    layout.validate()?;
    let tokens = match layout {
        CacheLayout::Vanilla { .. } => s_past.checked_add(1).ok_or(Error::Overflow("s_past"))?,
        CacheLayout::Paged { .. } | CacheLayout::TokenGranular => 1,
    };
    // K and V, each read and written
    [
        2,
        cfg.bytes_per_scalar,
        2,
        cfg.hidden_size,
        cfg.num_layers,
        b,
        tokens,
    ]
    .iter()
    .try_fold(1u64, |acc, &f| acc.checked_mul(f))
    .ok_or(Error::Overflow("cache step bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub allocated_bytes: u64,
    pub live_bytes: u64,
    pub wasted_bytes: u64,
    pub peak_allocated_bytes: u64,
}

pub fn footprint(layout: CacheLayout, cfg: &ModelConfig, seq_lens: &[u64]) -> Result<CacheStats> {
    if seq_lens.is_empty() {
        return Err(Error::invalid("seq_lens", "empty"));
    }
    let mut live_tokens = 0u64;
    let mut alloc_tokens = 0u64;
    for &len in seq_lens {
        live_tokens = live_tokens
            .checked_add(len)
            .ok_or(Error::Overflow("footprint"))?;
        alloc_tokens = alloc_tokens
            .checked_add(layout.allocated_tokens(len)?)
            .ok_or(Error::Overflow("footprint"))?;
    }
    let live_bytes = kv_cache_bytes(cfg, 1, live_tokens)?;
    let allocated_bytes = kv_cache_bytes(cfg, 1, alloc_tokens)?;
    Ok(CacheStats {
        allocated_bytes,
        live_bytes,
        wasted_bytes: allocated_bytes - live_bytes,
        peak_allocated_bytes: allocated_bytes,
    })
}

/// Largest number of `per_seq_len`-token sequences whose cache fits next to
/// the weights. Zero is a valid answer.
pub fn max_concurrency(
    layout: CacheLayout,
    cfg: &ModelConfig,
    hw: &HardwareSpec,
    model_weight_bytes: u64,
    per_seq_len: u64,
) -> Result<u64> {
    if model_weight_bytes >= hw.memory_bytes {
        return Err(Error::invalid(
            "model_weight_bytes",
            format!(
                "{model_weight_bytes} B does not fit in {} B",
                hw.memory_bytes
            ),
        ));
    }
    if per_seq_len == 0 {
        return Err(Error::NonPositiveField("per_seq_len"));
    }
    let per_seq = kv_cache_bytes(cfg, 1, layout.allocated_tokens(per_seq_len)?)?;
    Ok((hw.memory_bytes - model_weight_bytes) / per_seq)
}

/// KV budget the serving simulator admits requests against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KvCapacity {
    pub layout: CacheLayout,
    pub capacity_bytes: u64,
}

impl KvCapacity {
    /// Device memory left after the decoder weights.
    pub fn for_device(layout: CacheLayout, cfg: &ModelConfig, hw: &HardwareSpec) -> Result<Self> {
        let weights = cfg.decoder_weight_bytes();
        if weights >= hw.memory_bytes {
            return Err(Error::invalid(
                "capacity",
                format!(
                    "weights ({weights} B) exceed device memory ({} B)",
                    hw.memory_bytes
                ),
            ));
        }
        Ok(KvCapacity {
            layout: layout.validate()?,
            capacity_bytes: hw.memory_bytes - weights,
        })
    }

    pub fn unlimited(layout: CacheLayout) -> Self {
        KvCapacity {
            layout,
            capacity_bytes: u64::MAX,
        }
    }

    /// Bytes one sequence of `len` tokens occupies under this layout.
    pub fn sequence_bytes(&self, cfg: &ModelConfig, len: u64) -> Result<u64> {
        kv_cache_bytes(cfg, 1, self.layout.allocated_tokens(len)?)
    }
}

/// Running allocation with a high-water mark.
#[derive(Debug, Clone, Default)]
pub struct CacheTracker {
    stats: CacheStats,
}

impl CacheTracker {
    pub fn allocate(&mut self, allocated: u64, live: u64) {
        self.stats.allocated_bytes += allocated;
        self.stats.live_bytes += live;
        self.refresh();
    }

    pub fn release(&mut self, allocated: u64, live: u64) {
        self.stats.allocated_bytes -= allocated;
        self.stats.live_bytes -= live;
        self.refresh();
    }

    pub fn grow_live(&mut self, live: u64) {
        self.stats.live_bytes += live;
        self.refresh();
    }

    fn refresh(&mut self) {
        debug_assert!(self.stats.live_bytes <= self.stats.allocated_bytes);
        self.stats.wasted_bytes = self.stats.allocated_bytes - self.stats.live_bytes;
        self.stats.peak_allocated_bytes = self
            .stats
            .peak_allocated_bytes
            .max(self.stats.allocated_bytes);
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }
}
