//! JSON configuration for the pipeline. Every subcommand reads its
//! defaults from here; command-line flags override individual fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use offres_core::autofocus::AutofocusConfig;
use offres_core::network::NetConfig;
use offres_core::recon::GridParams;

use crate::{CliError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub trajectory: TrajectorySection,
    pub grid: GridSection,
    pub phantom: PhantomSection,
    pub fieldmap: FieldmapSection,
    pub sim: SimSection,
    pub autofocus: AutofocusSection,
    pub net: NetSection,
    pub corpus: CorpusSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub n_cones: usize,
    pub interleaves_per_cone: usize,
    pub samples_per_interleaf: usize,
    pub t_read_s: f64,
    pub twist: f64,
    pub grid_size: usize,
    pub fov_cm: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        // Short-readout defaults; enough twist for shell coverage at this
        // grid size.
        TrajectorySection {
            n_cones: 48,
            interleaves_per_cone: 2,
            samples_per_interleaf: 1024,
            t_read_s: 1.18e-3,
            twist: 10.0,
            grid_size: 32,
            fov_cm: 30.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub oversamp: f64,
    pub kernel_width: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { oversamp: 2.0, kernel_width: 4.0 }
    }
}

impl GridSection {
    pub fn params(&self) -> GridParams {
        GridParams { oversamp: self.oversamp, kernel_width: self.kernel_width }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub shape: [usize; 3],
    pub n_vessels: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection { shape: [32, 32, 32], n_vessels: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldmapSection {
    pub f_max_hz: f64,
    pub n_blobs: usize,
    pub ramp: bool,
}

impl Default for FieldmapSection {
    fn default() -> Self {
        FieldmapSection { f_max_hz: 300.0, n_blobs: 6, ramp: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_bins: usize,
    pub noise_sigma: f64,
    /// Work guard for the exact direct-sum model (nonzero voxels x samples).
    pub exact_cost_limit: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { n_bins: 8, noise_sigma: 0.0, exact_cost_limit: 1 << 28 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutofocusSection {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_freqs: usize,
    pub metric_window: usize,
    pub lowpass_sigma: f64,
    pub fieldmap_smooth_sigma: f64,
    pub mask_rel_threshold: f64,
}

impl Default for AutofocusSection {
    fn default() -> Self {
        AutofocusSection {
            f_min_hz: -1000.0,
            f_max_hz: 1000.0,
            n_freqs: 41,
            metric_window: 1,
            lowpass_sigma: 4.0,
            fieldmap_smooth_sigma: 2.0,
            mask_rel_threshold: 0.05,
        }
    }
}

impl AutofocusSection {
    pub fn to_config(&self, grid: GridParams) -> AutofocusConfig {
        AutofocusConfig {
            f_min_hz: self.f_min_hz,
            f_max_hz: self.f_max_hz,
            n_freqs: self.n_freqs,
            metric_window: self.metric_window,
            lowpass_sigma: self.lowpass_sigma,
            fieldmap_smooth_sigma: self.fieldmap_smooth_sigma,
            mask_rel_threshold: self.mask_rel_threshold,
            grid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub n_res_blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub global_skip: bool,
    pub learning_rate: f64,
    pub patch: usize,
    pub patch_stride: usize,
    pub batch: usize,
    pub epochs: usize,
    pub tile: usize,
    pub overlap: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        // Desk-scale defaults; the reference configuration (128 channels,
        // 64-voxel patches) is reachable by overriding these fields.
        NetSection {
            n_res_blocks: 3,
            channels: 32,
            kernel: 5,
            global_skip: true,
            learning_rate: 1e-4,
            patch: 32,
            patch_stride: 16,
            batch: 2,
            epochs: 8,
            tile: 64,
            overlap: 16,
        }
    }
}

impl NetSection {
    pub fn to_config(&self, seed: u64) -> NetConfig {
        NetConfig {
            n_res_blocks: self.n_res_blocks,
            channels: self.channels,
            kernel: self.kernel,
            global_skip: self.global_skip,
            learning_rate: self.learning_rate,
            patch: self.patch,
            patch_stride: self.patch_stride,
            batch: self.batch,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_phantoms: usize,
    pub scale_factors: Vec<f64>,
    pub n_freqs: usize,
    pub f_span_hz: f64,
    pub train_fraction: f64,
    /// Simulate with per-phantom smooth field maps instead of zero maps.
    pub use_field_maps: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        // Desk-scale corpus; the reference augmentation protocol uses 101
        // frequencies over the same +-500 Hz span.
        CorpusSection {
            n_phantoms: 6,
            scale_factors: vec![1.5, 2.0, 2.5, 3.0],
            n_freqs: 11,
            f_span_hz: 500.0,
            train_fraction: 8.0 / 30.0,
            use_field_maps: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub sweep_n_freqs: usize,
    pub sweep_span_hz: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { sweep_n_freqs: 41, sweep_span_hz: 1000.0 }
    }
}

/// Load a config file, reporting schema violations with JSON pointer paths.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        pointer: format!("/{}", e.path().to_string().replace('.', "/")),
        msg: e.inner().to_string(),
    })
}

/// JSON schema of the config file, printed by `--config-schema`.
pub const CONFIG_SCHEMA: &str = r##"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "offres pipeline configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "seed": { "type": "integer", "minimum": 0 },
    "trajectory": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "n_cones": { "type": "integer", "minimum": 1 },
        "interleaves_per_cone": { "type": "integer", "minimum": 1 },
        "samples_per_interleaf": { "type": "integer", "minimum": 1 },
        "t_read_s": { "type": "number", "exclusiveMinimum": 0 },
        "twist": { "type": "number" },
        "grid_size": { "type": "integer", "minimum": 8, "multipleOf": 2 },
        "fov_cm": { "type": "number", "exclusiveMinimum": 0 }
      }
    },
    "grid": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "oversamp": { "type": "number", "minimum": 1.25 },
        "kernel_width": { "type": "number", "minimum": 2.0 }
      }
    },
    "phantom": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "shape": { "type": "array", "items": { "type": "integer", "minimum": 12 }, "minItems": 3, "maxItems": 3 },
        "n_vessels": { "type": "integer", "minimum": 1 }
      }
    },
    "fieldmap": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "f_max_hz": { "type": "number", "exclusiveMinimum": 0 },
        "n_blobs": { "type": "integer", "minimum": 0 },
        "ramp": { "type": "boolean" }
      }
    },
    "sim": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "n_bins": { "type": "integer", "minimum": 1 },
        "noise_sigma": { "type": "number", "minimum": 0 },
        "exact_cost_limit": { "type": "integer", "minimum": 1 }
      }
    },
    "autofocus": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "f_min_hz": { "type": "number" },
        "f_max_hz": { "type": "number" },
        "n_freqs": { "type": "integer", "minimum": 2 },
        "metric_window": { "type": "integer", "minimum": 0 },
        "lowpass_sigma": { "type": "number", "minimum": 0 },
        "fieldmap_smooth_sigma": { "type": "number", "minimum": 0 },
        "mask_rel_threshold": { "type": "number", "minimum": 0, "maximum": 1 }
      }
    },
    "net": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "n_res_blocks": { "type": "integer", "minimum": 1 },
        "channels": { "type": "integer", "minimum": 1 },
        "kernel": { "type": "integer", "minimum": 1 },
        "global_skip": { "type": "boolean" },
        "learning_rate": { "type": "number", "exclusiveMinimum": 0 },
        "patch": { "type": "integer", "minimum": 8 },
        "patch_stride": { "type": "integer", "minimum": 1 },
        "batch": { "type": "integer", "minimum": 1 },
        "epochs": { "type": "integer", "minimum": 1 },
        "tile": { "type": "integer", "minimum": 8 },
        "overlap": { "type": "integer", "minimum": 0 }
      }
    },
    "corpus": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "n_phantoms": { "type": "integer", "minimum": 1 },
        "scale_factors": { "type": "array", "items": { "type": "number", "exclusiveMinimum": 0 }, "minItems": 1 },
        "n_freqs": { "type": "integer", "minimum": 1 },
        "f_span_hz": { "type": "number", "exclusiveMinimum": 0 },
        "train_fraction": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1 },
        "use_field_maps": { "type": "boolean" }
      }
    },
    "eval": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "sweep_n_freqs": { "type": "integer", "minimum": 2 },
        "sweep_span_hz": { "type": "number", "exclusiveMinimum": 0 }
      }
    }
  }
}
"##;
