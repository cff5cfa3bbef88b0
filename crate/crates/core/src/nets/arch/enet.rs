use super::check_depth;
use crate::nets::blocks::{enet_bottleneck, enet_downsample, pool_concat_downsample, BottleneckKind};
use crate::nets::{Architecture, EncoderOutput, NetworkSpec, NodeId, TopologyBuilder, STUDENT_ENET};
use crate::Result;

use BottleneckKind::{Asymmetric as Asym, Dilated as Dil, Regular as Reg};

/// Early-downsampling encoder: an initial pool/conv block, then residual
/// bottleneck stages mixing regular, dilated and asymmetric convolutions.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnetEncoder;

const DEFAULT_BASE: usize = 16;
const WIDTHS: [usize; 4] = [16, 64, 128, 128];

const STAGES: [&[BottleneckKind]; 4] = [
    &[],
    &[Reg, Reg, Reg],
    &[Reg, Dil(2), Asym(5), Dil(4), Reg, Dil(8), Asym(5), Dil(16)],
    &[Reg, Dil(2), Asym(5), Dil(4)],
];

impl Architecture for EnetEncoder {
    fn name(&self) -> &'static str {
        STUDENT_ENET
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
                let mut y = if lvl == 0 {
                    b.scoped("initial", |b| pool_concat_downsample(b, x, width))?
                } else {
                    b.scoped("down", |b| enet_downsample(b, x, width))?
                };
                let stage = STAGES[lvl];
                for (i, &kind) in stage.iter().take(spec.repeats(stage.len())).enumerate() {
                    y = b.scoped(format!("bottleneck{i}"), |b| enet_bottleneck(b, y, kind))?;
                }
                Ok(y)
            })?;
            levels.push(x);
        }
        Ok(EncoderOutput { stem: None, levels })
    }
}
