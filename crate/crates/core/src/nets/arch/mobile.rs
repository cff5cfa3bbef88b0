use super::check_depth;
use crate::nets::blocks::inverted_residual;
use crate::nets::{Architecture, EncoderOutput, NetworkSpec, NodeId, TopologyBuilder, STUDENT_MOBILE};
use crate::Result;

/// Encoder built from inverted-bottleneck blocks.
///
/// Each level is a list of `(expansion, width, repeats)` groups; the first
/// block of a level has stride 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct MobileEncoder;

const DEFAULT_BASE: usize = 24;
const STEM: usize = 24;

const LEVELS: [&[(usize, usize, usize)]; 4] = [
    &[(1, 24, 1), (6, 36, 1)],
    &[(6, 48, 3)],
    &[(6, 96, 4), (6, 144, 3)],
    &[(6, 240, 3), (6, 480, 1)],
];

impl Architecture for MobileEncoder {
    fn name(&self) -> &'static str {
        STUDENT_MOBILE
    }

    fn default_base_channels(&self) -> usize {
        DEFAULT_BASE
    }

    fn max_depth(&self) -> usize {
        LEVELS.len()
    }

    fn encoder(&self, spec: &NetworkSpec, b: &mut TopologyBuilder, input: NodeId) -> Result<EncoderOutput> {
        check_depth(spec, LEVELS.len())?;
        let stem_w = spec.width(STEM, DEFAULT_BASE);
        let stem = b.scoped("stem", |b| b.conv_relu("conv", input, stem_w, 3))?;
        let mut x = stem;
        let mut levels = Vec::with_capacity(spec.depth);
        for (lvl, groups) in LEVELS.iter().take(spec.depth).enumerate() {
            let mut block = 0;
            for &(expand, width, n) in groups.iter() {
                let width = spec.width(width, DEFAULT_BASE);
                for _ in 0..spec.repeats(n) {
                    let stride = if block == 0 { 2 } else { 1 };
                    x = b.scoped(format!("level{}.ir{block}", lvl + 1), |b| {
                        inverted_residual(b, x, width, stride, expand)
                    })?;
                    block += 1;
                }
            }
            levels.push(x);
        }
        Ok(EncoderOutput {
            stem: Some(stem),
            levels,
        })
    }
}
