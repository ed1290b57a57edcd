//! Decoder architecture description and workload points.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_bytes_per_scalar() -> u64 {
    2
}

/// Dimensions of a LLaMA-style decoder stack.
///
/// The presets and the JSON loader always return validated values
/// (`hidden_size == num_heads * head_dim`, all fields positive). Configs built
/// by hand should go through [`ModelConfig::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: u64,
    pub intermediate_size: u64,
    pub num_heads: u64,
    pub head_dim: u64,
    pub num_layers: u64,
    #[serde(default = "default_bytes_per_scalar")]
    pub bytes_per_scalar: u64,
}

impl ModelConfig {
    pub const PRESET_NAMES: [&'static str; 2] = ["llama2-7b", "llama2-13b"];

    pub fn llama2_7b() -> Self {
        ModelConfig {
            hidden_size: 4096,
            intermediate_size: 11008,
            num_heads: 32,
            head_dim: 128,
            num_layers: 32,
            bytes_per_scalar: 2,
        }
    }

    pub fn llama2_13b() -> Self {
        ModelConfig {
            hidden_size: 5120,
            intermediate_size: 13824,
            num_heads: 40,
            head_dim: 128,
            num_layers: 40,
            bytes_per_scalar: 2,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "llama2-7b" => Ok(Self::llama2_7b()),
            "llama2-13b" => Ok(Self::llama2_13b()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// Checks the field invariants, returning the config unchanged.
    pub fn validate(self) -> Result<Self> {
        let fields = [
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("num_layers", self.num_layers),
            ("bytes_per_scalar", self.bytes_per_scalar),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::NonPositiveField(name));
        }
        if self.num_heads.checked_mul(self.head_dim) != Some(self.hidden_size) {
            return Err(Error::DimensionMismatch {
                hidden_size: self.hidden_size,
                num_heads: self.num_heads,
                head_dim: self.head_dim,
            });
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelConfig = serde_json::from_str(text)?;
        raw.validate()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Resolves either a preset name or a path to a JSON config file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::preset(spec) {
            Ok(cfg) => Ok(cfg),
            Err(_) if Path::new(spec).exists() => Self::from_path(Path::new(spec)),
            Err(e) => Err(e),
        }
    }

    /// Weight bytes of the decoder stack (attention and FFN projections only).
    pub fn decoder_weight_bytes(&self) -> u64 {
        let h = self.hidden_size;
        let per_layer = 4 * h * h + 3 * h * self.intermediate_size;
        per_layer * self.num_layers * self.bytes_per_scalar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Prefill => f.write_str("prefill"),
            Phase::Decode => f.write_str("decode"),
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prefill" => Ok(Phase::Prefill),
            "decode" | "decoding" => Ok(Phase::Decode),
            other => Err(Error::invalid("phase", format!("`{other}`"))),
        }
    }
}

/// A (batch, sequence length, phase) point. In the decode phase `seq_len`
/// is the number of cached past tokens per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkloadPoint {
    pub batch_size: u64,
    pub seq_len: u64,
    pub phase: Phase,
}

impl WorkloadPoint {
    pub fn new(batch_size: u64, seq_len: u64, phase: Phase) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::NonPositiveField("batch_size"));
        }
        if seq_len == 0 {
            return Err(Error::NonPositiveField("seq_len"));
        }
        Ok(WorkloadPoint {
            batch_size,
            seq_len,
            phase,
        })
    }
}
