//! Distillation objectives: projector reconstruction, latent similarity,
//! feature-wise similarity distillation, prediction-distance distillation,
//! cross-entropy, the weighted total, and a temperature-softened KD baseline.
//!
//! Every loss is built on an autograd [`Graph`](vesseldistill_autograd::Graph)
//! so gradients reach the student and the projectors. Teacher-side inputs
//! must be constant nodes.

mod losses;
mod objective;
mod projector;

use serde::{Deserialize, Serialize};

pub use losses::{
    ce_loss, euclidean_similarity, fsd_loss, asd_loss, latent_similarity, reconstruction_loss, softkd_loss,
    total_loss, total_loss_value, CE_EPS,
};
pub use objective::{BoundProjectors, LossTerms, Objective, ObjectiveRegistry, StepContext};
pub use projector::{Projection, Projector, ProjectorSet, LATENT_DIM};

use crate::{Error, Result};

/// How the latent similarity of one tap is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Cosine of the flattened outer products `L Lᵀ`.
    #[default]
    Outer,
    /// Plain cosine of the latent vectors.
    Direct,
}

impl Similarity {
    pub fn name(self) -> &'static str {
        match self {
            Similarity::Outer => "outer",
            Similarity::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "outer" => Ok(Similarity::Outer),
            "direct" => Ok(Similarity::Direct),
            _ => Err(Error::Config(format!("similarity must be outer|direct, got `{s}`"))),
        }
    }
}

/// Reduction used by the reconstruction, FSD and ASD penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Mean absolute / mean squared differences.
    #[default]
    Mean,
    /// Plain L1 sum and L2 norms.
    Raw,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::Mean => "mean",
            NormMode::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(NormMode::Mean),
            "raw" => Ok(NormMode::Raw),
            _ => Err(Error::Config(format!("norm must be mean|raw, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_fsd: f64,
    pub w_asd: f64,
    pub w_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ce: 1.0,
            w_fsd: 1.0,
            w_asd: 1.0,
            w_rec: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_ce", self.w_ce), ("w_fsd", self.w_fsd), ("w_asd", self.w_asd), ("w_rec", self.w_rec)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {w}")));
            }
        }
        Ok(())
    }
}
