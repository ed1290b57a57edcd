//! Hardware capability and roofline classification.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::OpCost;
use crate::error::{Error, Result};

const GB: f64 = 1e9;
const TFLOPS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardwareSpec {
    pub name: String,
    pub memory_bytes: u64,
    pub bandwidth_bytes_per_s: u64,
    pub peak_flops_per_s: u64,
}

/// On-disk form, in decimal GB, GB/s and BF16 TFLOP/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareFile {
    pub name: String,
    pub memory_gb: f64,
    pub bandwidth_gb_per_s: f64,
    pub bf16_tflops: f64,
}

fn to_base_units(what: &'static str, value: f64, scale: f64) -> Result<u64> {
    let v = (value * scale).round();
    if !v.is_finite() || v < 1.0 || v > u64::MAX as f64 {
        return Err(Error::NonPositiveField(what));
    }
    Ok(v as u64)
}

impl TryFrom<HardwareFile> for HardwareSpec {
    type Error = Error;

    fn try_from(f: HardwareFile) -> Result<Self> {
        HardwareSpec {
            memory_bytes: to_base_units("memory_gb", f.memory_gb, GB)?,
            bandwidth_bytes_per_s: to_base_units("bandwidth_gb_per_s", f.bandwidth_gb_per_s, GB)?,
            peak_flops_per_s: to_base_units("bf16_tflops", f.bf16_tflops, TFLOPS)?,
            name: f.name,
        }
        .validate()
    }
}

impl From<&HardwareSpec> for HardwareFile {
    fn from(hw: &HardwareSpec) -> Self {
        HardwareFile {
            name: hw.name.clone(),
            memory_gb: hw.memory_bytes as f64 / GB,
            bandwidth_gb_per_s: hw.bandwidth_bytes_per_s as f64 / GB,
            bf16_tflops: hw.peak_flops_per_s as f64 / TFLOPS,
        }
    }
}

impl HardwareSpec {
    pub const PRESET_NAMES: [&'static str; 3] = ["rtx-3090", "rtx-4090", "a800"];

    pub fn new(
        name: &str,
        memory_gb: f64,
        bandwidth_gb_per_s: f64,
        bf16_tflops: f64,
    ) -> Result<Self> {
        HardwareFile {
            name: name.to_string(),
            memory_gb,
            bandwidth_gb_per_s,
            bf16_tflops,
        }
        .try_into()
    }

    pub fn rtx_3090() -> Self {
        Self::new("rtx-3090", 24.0, 936.0, 71.0).expect("valid preset")
    }

    pub fn rtx_4090() -> Self {
        Self::new("rtx-4090", 24.0, 1008.0, 165.2).expect("valid preset")
    }

    pub fn a800() -> Self {
        Self::new("a800", 80.0, 2039.0, 312.0).expect("valid preset")
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::rtx_3090(), Self::rtx_4090(), Self::a800()]
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rtx-3090" | "3090" => Ok(Self::rtx_3090()),
            "rtx-4090" | "4090" => Ok(Self::rtx_4090()),
            "a800" => Ok(Self::a800()),
            _ => Err(Error::UnknownPreset(name.to_string())),
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.memory_bytes == 0 {
            return Err(Error::NonPositiveField("memory_bytes"));
        }
        if self.bandwidth_bytes_per_s == 0 {
            return Err(Error::NonPositiveField("bandwidth_bytes_per_s"));
        }
        if self.peak_flops_per_s == 0 {
            return Err(Error::NonPositiveField("peak_flops_per_s"));
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HardwareFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HardwareFile::from(self)).expect("plain struct serializes")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Resolves a preset name or a path to a JSON hardware file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::preset(spec) {
            Ok(hw) => Ok(hw),
            Err(_) if Path::new(spec).exists() => Self::from_path(Path::new(spec)),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundKind {
    ComputeBound,
    MemoryBound,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundKind::ComputeBound => f.write_str("compute-bound"),
            BoundKind::MemoryBound => f.write_str("memory-bound"),
        }
    }
}

/// Arithmetic intensity (FLOPs per byte) at the roofline knee.
pub fn ridge_point(hw: &HardwareSpec) -> f64 {
    hw.peak_flops_per_s as f64 / hw.bandwidth_bytes_per_s as f64
}

/// Ties with the ridge point count as memory-bound.
pub fn classify(cost: &OpCost, hw: &HardwareSpec) -> Result<BoundKind> {
    if cost.mops == 0 && cost.flops > 0 {
        return Err(Error::DegenerateCost { flops: cost.flops });
    }
    if cost.arithmetic_intensity > ridge_point(hw) {
        Ok(BoundKind::ComputeBound)
    } else {
        Ok(BoundKind::MemoryBound)
    }
}

pub fn attainable_flops(ai: f64, hw: &HardwareSpec) -> f64 {
    let peak = hw.peak_flops_per_s as f64;
    if ai > ridge_point(hw) {
        peak
    } else {
        (ai * hw.bandwidth_bytes_per_s as f64).min(peak)
    }
}

/// Roofline time floor in seconds.
pub fn lower_bound_time(cost: &OpCost, hw: &HardwareSpec) -> f64 {
    let compute = cost.flops as f64 / hw.peak_flops_per_s as f64;
    let memory = cost.mops as f64 / hw.bandwidth_bytes_per_s as f64;
    compute.max(memory)
}
