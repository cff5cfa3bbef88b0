//! Encoder-decoder segmentation networks with symmetric feature taps.
//!
//! Every variant is an [`Architecture`] registered by name in an
//! [`ArchitectureRegistry`]. An architecture only describes its encoder;
//! the U-shaped decoder, the logit head and the tap wiring are shared.

pub mod arch;
mod blocks;
mod network;
mod registry;
mod topology;

use serde::{Deserialize, Serialize};

pub use blocks::DecoderStyle;
pub use network::{hex, NetOutput, ParamStore, SegmentationNetwork, TapBundle};
pub use registry::{Architecture, ArchitectureRegistry, EncoderOutput};
pub use topology::{Init, Layer, NodeId, ParamDecl, ParamId, Topology, TopologyBuilder};

use crate::{Error, Result};

/// Initial foreground probability of every output pixel.
pub const FOREGROUND_PRIOR: f64 = 0.05;

pub const TEACHER_SK_UNET: &str = "teacher_sk_unet";
pub const STUDENT_MOBILE: &str = "student_mobile";
pub const STUDENT_ENET: &str = "student_enet";
pub const STUDENT_ERFNET: &str = "student_erfnet";

/// What to build: variant name, depth, widths and which levels are tapped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: String,
    /// Number of stride-2 encoder levels.
    pub depth: usize,
    pub base_channels: usize,
    /// 1-based encoder levels whose features are exported.
    pub tap_levels: Vec<usize>,
    pub in_channels: usize,
    /// Upper bound on repeated blocks per stage; `None` keeps the full design.
    pub max_repeats: Option<usize>,
}

impl NetworkSpec {
    /// Full-size network with the architecture's default widths, all levels tapped.
    pub fn full(variant: &str) -> Result<Self> {
        let registry = ArchitectureRegistry::builtin();
        let arch = registry.get(variant)?;
        Ok(Self {
            variant: variant.to_string(),
            depth: 4,
            base_channels: arch.default_base_channels(),
            tap_levels: vec![1, 2, 3, 4],
            in_channels: 1,
            max_repeats: None,
        })
    }

    /// Desk-scale preset: base 8 channels, depth 3, one block per stage.
    pub fn tiny(variant: &str) -> Self {
        Self {
            variant: variant.to_string(),
            depth: 3,
            base_channels: 8,
            tap_levels: vec![1, 2, 3],
            in_channels: 1,
            max_repeats: Some(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("network depth must be >= 1".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.tap_levels.is_empty() {
            return Err(Error::Config("tap_levels must not be empty".into()));
        }
        for &t in &self.tap_levels {
            if t == 0 || t > self.depth {
                return Err(Error::Config(format!(
                    "tap level {t} outside 1..={} for depth {}",
                    self.depth, self.depth
                )));
            }
        }
        let mut sorted = self.tap_levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.tap_levels.len() {
            return Err(Error::Config(format!("duplicate tap levels in {:?}", self.tap_levels)));
        }
        if self.max_repeats == Some(0) {
            return Err(Error::Config("max_repeats must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn repeats(&self, full: usize) -> usize {
        match self.max_repeats {
            Some(cap) => full.min(cap),
            None => full,
        }
    }

    /// Scales a full-size width by `base_channels / default_base`.
    pub(crate) fn width(&self, full: usize, default_base: usize) -> usize {
        let w = (full * self.base_channels + default_base / 2) / default_base;
        w.max(4)
    }
}

/// Builds the full layer DAG for `spec` using `registry`.
pub fn build_topology(registry: &ArchitectureRegistry, spec: &NetworkSpec) -> Result<Topology> {
    spec.validate()?;
    let arch = registry.get(&spec.variant)?;
    let (mut b, input) = TopologyBuilder::new(spec.in_channels);
    let enc = b.scoped("encoder", |b| arch.encoder(spec, b, input))?;
    if enc.levels.len() != spec.depth {
        return Err(Error::Config(format!(
            "{} produced {} encoder levels for depth {}",
            spec.variant,
            enc.levels.len(),
            spec.depth
        )));
    }
    let (logits, dec_levels) = b.scoped("decoder", |b| blocks::decoder(b, arch.decoder_style(), &enc))?;
    let enc_taps = spec.tap_levels.iter().map(|&l| enc.levels[l - 1]).collect();
    let dec_taps = spec.tap_levels.iter().map(|&l| dec_levels[l - 1]).collect();
    Ok(b.finish(logits, enc_taps, dec_taps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_levels_must_fit_depth() {
        let mut s = NetworkSpec::tiny(STUDENT_MOBILE);
        s.tap_levels = vec![1, 4];
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        s.tap_levels = vec![2, 2];
        assert!(s.validate().is_err());
        s.tap_levels = vec![3, 1];
        assert!(s.validate().is_ok());
    }

    #[test]
    fn unknown_variant_is_config_error() {
        assert!(matches!(NetworkSpec::full("resnet_9000"), Err(Error::Config(_))));
        let mut s = NetworkSpec::tiny(STUDENT_ENET);
        s.variant = "nope".into();
        let reg = ArchitectureRegistry::builtin();
        assert!(matches!(build_topology(&reg, &s), Err(Error::Config(_))));
    }

    #[test]
    fn width_scaling_rounds() {
        let s = NetworkSpec::tiny(STUDENT_ENET);
        assert_eq!(s.width(64, 16), 32);
        assert_eq!(s.width(16, 16), 8);
        assert_eq!(s.width(2, 16), 4);
    }
}
