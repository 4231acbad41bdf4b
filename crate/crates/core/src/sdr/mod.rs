//! Sufficient dimension reduction: estimates of the central mean subspace
//! and its structural dimension.

pub mod dee;
pub mod mave;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use dee::{DeeConfig, DeeFlavor};
pub use mave::{MaveConfig, MaveInit, MaveKernel, RssKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SdrMethod {
    #[serde(rename = "DEE-SIR")]
    DeeSir,
    #[serde(rename = "DEE-SAVE")]
    DeeSave,
    #[serde(rename = "MAVE")]
    Mave,
}

impl SdrMethod {
    pub fn tag(self) -> &'static str {
        match self {
            SdrMethod::DeeSir => "DEE-SIR",
            SdrMethod::DeeSave => "DEE-SAVE",
            SdrMethod::Mave => "MAVE",
        }
    }
}

impl std::fmt::Display for SdrMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Estimated basis `B̂(q̂)` of the central mean subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrEstimate {
    /// p × q̂, orthonormal columns, largest-magnitude entry of each column
    /// positive.
    pub directions: DMatrix<f64>,
    /// Candidate-matrix spectrum, non-increasing (DEE only; empty for MAVE).
    pub eigenvalues: Vec<f64>,
    pub q_hat: usize,
    pub method: SdrMethod,
    /// Dimension criterion per candidate l = 1..p (DEE: G(l), MAVE: BIC_l).
    pub criterion_values: Vec<f64>,
    /// Set when the dimension criterion hit a degenerate input.
    pub degenerate: bool,
}
