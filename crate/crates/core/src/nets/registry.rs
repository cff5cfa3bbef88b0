use std::collections::BTreeMap;

use super::arch::{EnetEncoder, ErfnetEncoder, MobileEncoder, SkUnetEncoder};
use super::blocks::DecoderStyle;
use super::{NetworkSpec, NodeId, TopologyBuilder};
use crate::{Error, Result};

/// Encoder features handed to the shared decoder.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Optional full-resolution feature map used by the head.
    pub stem: Option<NodeId>,
    /// `levels[i]` sits at `1 / 2^(i+1)` of the input resolution.
    pub levels: Vec<NodeId>,
}

/// An encoder family. Implementations describe layers only; parameters are
/// declared through the builder and materialized later.
pub trait Architecture: Send + Sync {
    fn name(&self) -> &'static str;

    /// Width used by [`NetworkSpec::full`].
    fn default_base_channels(&self) -> usize;

    fn max_depth(&self) -> usize {
        usize::MAX
    }

    fn decoder_style(&self) -> DecoderStyle {
        DecoderStyle::Light
    }

    fn encoder(&self, spec: &NetworkSpec, b: &mut TopologyBuilder, input: NodeId) -> Result<EncoderOutput>;
}

/// Name-indexed set of architectures.
pub struct ArchitectureRegistry {
    entries: BTreeMap<String, Box<dyn Architecture>>,
}

impl ArchitectureRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The teacher and the three student families.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SkUnetEncoder));
        r.register(Box::new(MobileEncoder));
        r.register(Box::new(EnetEncoder));
        r.register(Box::new(ErfnetEncoder));
        r
    }

    /// Adds or replaces an architecture under its own name.
    pub fn register(&mut self, arch: Box<dyn Architecture>) {
        self.entries.insert(arch.name().to_string(), arch);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Architecture> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown network variant `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for ArchitectureRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
