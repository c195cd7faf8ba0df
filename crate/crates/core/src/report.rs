//! Per-layer diagnostics collected by the constructions.

use serde::{Deserialize, Serialize};

use crate::tensor::solve::Classification;

/// Diagnostics of one structured solve (a wide layer pair or a deep block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub classification: Classification,
    /// `‖c·diag(x)·b − w‖_F` of the realized product.
    pub residual: f64,
    pub condition_estimate: f64,
    /// The system was rank deficient or rectangular and the pseudo-inverse
    /// solution was used.
    pub pinv_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// Zero-based target layer.
    pub layer: usize,
    /// Zero-based block for deep constructions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block: Option<usize>,
    /// Sub-step inside a target layer (the low-rank construction solves two pairs).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<usize>,
    pub solve: SolveDiagnostics,
    /// Certified lower bound on every linearized pre-activation.
    pub min_margin: f64,
    /// Bound on the input norm used for linearization.
    pub input_radius: f64,
    /// Smallest `|γ|` among solved scales.
    pub min_abs_gamma: f64,
}

/// Sparse-mask statistics for one target layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub layer: usize,
    pub odd_density: f64,
    pub even_density: f64,
    /// Some mask has an all-zero row or column.
    pub zero_line: bool,
    pub invertible: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub algorithm: String,
    pub seed: u64,
    pub layers: Vec<LayerReport>,
    /// Resampled frozen draws after a zero scale entry.
    #[serde(default)]
    pub resamples: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub masks: Vec<MaskReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sparsity: Option<f64>,
    pub trainable_parameters: usize,
    pub frozen_parameters: usize,
}

impl ReconstructionReport {
    pub fn new(algorithm: &str, seed: u64) -> Self {
        ReconstructionReport {
            algorithm: algorithm.to_owned(),
            seed,
            ..Default::default()
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.layers.iter().map(|l| l.solve.residual).fold(0.0, f64::max)
    }

    pub fn max_condition(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.solve.condition_estimate)
            .fold(0.0, f64::max)
    }

    pub fn min_abs_gamma(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.min_abs_gamma)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn used_pinv(&self) -> bool {
        self.layers.iter().any(|l| l.solve.pinv_fallback)
    }
}
