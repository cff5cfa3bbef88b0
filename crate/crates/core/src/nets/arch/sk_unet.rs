use crate::nets::blocks::{sk_block, DecoderStyle};
use crate::nets::{Architecture, EncoderOutput, NetworkSpec, NodeId, TopologyBuilder, TEACHER_SK_UNET};
use crate::Result;

/// U-Net encoder whose stages stack selective-kernel units.
///
/// Level `i` max-pools, widens to `base * 2^(i-1)` with a 3×3 convolution,
/// then applies its SK units. A full-resolution stem feeds the head.
#[derive(Debug, Clone, Copy, Default)]
pub struct SkUnetEncoder;

/// SK units per level at full size; levels past the table use one.
const SK_REPEATS: [usize; 4] = [2, 2, 2, 1];

impl Architecture for SkUnetEncoder {
    fn name(&self) -> &'static str {
        TEACHER_SK_UNET
    }

    fn default_base_channels(&self) -> usize {
        64
    }

    fn decoder_style(&self) -> DecoderStyle {
        DecoderStyle::DoubleConv
    }

    fn encoder(&self, spec: &NetworkSpec, b: &mut TopologyBuilder, input: NodeId) -> Result<EncoderOutput> {
        let base = spec.base_channels;
        let stem = b.scoped("stem", |b| {
            let s = b.conv_relu("conv1", input, base, 3)?;
            b.conv_relu("conv2", s, base, 3)
        })?;
        let mut levels = Vec::with_capacity(spec.depth);
        let mut x = stem;
        for lvl in 1..=spec.depth {
            let width = base << (lvl - 1);
            let reps = spec.repeats(SK_REPEATS.get(lvl - 1).copied().unwrap_or(1));
            x = b.scoped(format!("level{lvl}"), |b| {
                let p = b.max_pool2(x);
                let mut y = b.conv_relu("widen", p, width, 3)?;
                for r in 0..reps {
                    y = b.scoped(format!("sk{r}"), |b| sk_block(b, y))?;
                }
                Ok(y)
            })?;
            levels.push(x);
        }
        Ok(EncoderOutput {
            stem: Some(stem),
            levels,
        })
    }
}
