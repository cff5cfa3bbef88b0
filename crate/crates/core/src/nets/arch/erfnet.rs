use vesseldistill_autograd::Conv2dCfg;

use super::check_depth;
use crate::nets::blocks::{non_bottleneck_1d, pool_concat_downsample};
use crate::nets::{Architecture, EncoderOutput, NetworkSpec, NodeId, TopologyBuilder, STUDENT_ERFNET};
use crate::Result;

/// Encoder of factorized (3×1 / 1×3) residual blocks with growing dilation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErfnetEncoder;

const DEFAULT_BASE: usize = 16;
const WIDTHS: [usize; 4] = [16, 64, 128, 128];
const DILATIONS: [&[usize]; 4] = [&[], &[1, 1, 1, 1, 1], &[2, 4, 8, 16, 2, 4, 8, 16], &[2]];

impl Architecture for ErfnetEncoder {
    fn name(&self) -> &'static str {
        STUDENT_ERFNET
    }

    fn default_base_channels(&self) -> usize {
        DEFAULT_BASE
    }

    fn max_depth(&self) -> usize {
        WIDTHS.len()
    }

    fn encoder(&self, spec: &NetworkSpec, b: &mut TopologyBuilder, input: NodeId) -> Result<EncoderOutput> {
        check_depth(spec, WIDTHS.len())?;
        let mut x = input;
        let mut levels = Vec::with_capacity(spec.depth);
        for lvl in 0..spec.depth {
            let width = spec.width(WIDTHS[lvl], DEFAULT_BASE);
            x = b.scoped(format!("level{}", lvl + 1), |b| {
                let mut y = if width > b.channels(x) {
                    b.scoped("down", |b| pool_concat_downsample(b, x, width))?
                } else {
                    let c = b.conv("down.conv", x, width, (3, 3), Conv2dCfg::same(3, 3).with_stride(2))?;
                    b.relu(c)
                };
                let dil = DILATIONS[lvl];
                for (i, &d) in dil.iter().take(spec.repeats(dil.len())).enumerate() {
                    y = b.scoped(format!("nb{i}"), |b| non_bottleneck_1d(b, y, d))?;
                }
                Ok(y)
            })?;
            levels.push(x);
        }
        Ok(EncoderOutput { stem: None, levels })
    }
}
