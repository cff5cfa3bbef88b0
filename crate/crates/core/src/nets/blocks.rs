//! Reusable building blocks and the shared decoder.

use vesseldistill_autograd::Conv2dCfg;

use super::registry::EncoderOutput;
use super::{NodeId, TopologyBuilder};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderStyle {
    /// Two 3×3 convolutions per stage (classic U-Net).
    DoubleConv,
    /// 1×1 projection at the coarser scale, upsampling, skip addition and a
    /// 3×3 depthwise convolution.
    Light,
}

/// Selective-kernel unit: 3×3 and 5×5 branches fused by per-channel
/// softmax attention over a squeezed descriptor, with identity shortcut.
pub fn sk_block(b: &mut TopologyBuilder, x: NodeId) -> Result<NodeId> {
    let c = b.channels(x);
    let d = (c / 16).max(8);
    let b3 = b.conv("branch3", x, c, (3, 3), Conv2dCfg::same(3, 3))?;
    let b3 = b.relu(b3);
    let b5 = b.conv("branch5", x, c, (5, 5), Conv2dCfg::same(5, 5))?;
    let b5 = b.relu(b5);
    let u = b.add(b3, b5)?;
    let s = b.global_avg_pool(u);
    let z = b.linear("squeeze", s, d)?;
    let z = b.relu(z);
    let a3 = b.linear("attend3", z, c)?;
    let a5 = b.linear("attend5", z, c)?;
    // softmax over two logits == sigmoid of their difference
    let logit = b.sub(a3, a5)?;
    let w3 = b.sigmoid(logit);
    let diff = b.sub(b3, b5)?;
    let sel = b.channel_scale(diff, w3)?;
    let v = b.add(b5, sel)?;
    let out = b.add(v, x)?;
    Ok(b.relu(out))
}

/// Expand (1×1) → depthwise 3×3 → linear projection (1×1), residual when
/// the shapes allow it.
pub fn inverted_residual(
    b: &mut TopologyBuilder,
    x: NodeId,
    out: usize,
    stride: usize,
    expand: usize,
) -> Result<NodeId> {
    let cin = b.channels(x);
    let hidden = cin * expand;
    let mut h = x;
    if expand != 1 {
        h = b.conv("expand", h, hidden, (1, 1), Conv2dCfg::default())?;
        h = b.relu(h);
    }
    h = b.conv(
        "depthwise",
        h,
        hidden,
        (3, 3),
        Conv2dCfg::same(3, 3).with_stride(stride).with_groups(hidden),
    )?;
    h = b.relu(h);
    let y = b.conv("project", h, out, (1, 1), Conv2dCfg::default())?;
    if stride == 1 && cin == out {
        b.add(x, y)
    } else {
        Ok(y)
    }
}

/// Strided 3×3 convolution concatenated with a max-pooled copy of the input.
pub fn pool_concat_downsample(b: &mut TopologyBuilder, x: NodeId, out: usize) -> Result<NodeId> {
    let cin = b.channels(x);
    let conv_out = out.saturating_sub(cin).max(1);
    let c = b.conv("conv", x, conv_out, (3, 3), Conv2dCfg::same(3, 3).with_stride(2))?;
    let p = b.max_pool2(x);
    let cat = b.concat(&[c, p]);
    Ok(b.relu(cat))
}

#[derive(Debug, Clone, Copy)]
pub enum BottleneckKind {
    Regular,
    Dilated(usize),
    Asymmetric(usize),
}

/// Residual bottleneck: 1×1 reduce → spatial conv → 1×1 expand.
pub fn enet_bottleneck(b: &mut TopologyBuilder, x: NodeId, kind: BottleneckKind) -> Result<NodeId> {
    let c = b.channels(x);
    let inner = (c / 4).max(1);
    let r = b.conv("reduce", x, inner, (1, 1), Conv2dCfg::default())?;
    let r = b.relu(r);
    let m = match kind {
        BottleneckKind::Regular => b.conv("conv", r, inner, (3, 3), Conv2dCfg::same(3, 3))?,
        BottleneckKind::Dilated(d) => b.conv("conv", r, inner, (3, 3), Conv2dCfg::same_dilated(3, 3, d))?,
        BottleneckKind::Asymmetric(k) => {
            let a = b.conv("conv_v", r, inner, (k, 1), Conv2dCfg::same(k, 1))?;
            b.conv("conv_h", a, inner, (1, k), Conv2dCfg::same(1, k))?
        }
    };
    let m = b.relu(m);
    let e = b.conv("expand", m, c, (1, 1), Conv2dCfg::default())?;
    let s = b.add(x, e)?;
    Ok(b.relu(s))
}

/// Downsampling bottleneck: 2×2/2 reduce branch plus a max-pooled,
/// zero-padded main branch.
pub fn enet_downsample(b: &mut TopologyBuilder, x: NodeId, out: usize) -> Result<NodeId> {
    let inner = (out / 4).max(1);
    let r = b.conv("reduce", x, inner, (2, 2), Conv2dCfg::default().with_stride(2))?;
    let r = b.relu(r);
    let m = b.conv("conv", r, inner, (3, 3), Conv2dCfg::same(3, 3))?;
    let m = b.relu(m);
    let e = b.conv("expand", m, out, (1, 1), Conv2dCfg::default())?;
    let main = b.max_pool2(x);
    let main = b.pad_channels(main, out)?;
    let s = b.add(main, e)?;
    Ok(b.relu(s))
}

/// Residual block of factorized 3×1 / 1×3 convolutions, the second pair dilated.
pub fn non_bottleneck_1d(b: &mut TopologyBuilder, x: NodeId, dilation: usize) -> Result<NodeId> {
    let c = b.channels(x);
    let a = b.conv("conv3x1_1", x, c, (3, 1), Conv2dCfg::same(3, 1))?;
    let a = b.relu(a);
    let a = b.conv("conv1x3_1", a, c, (1, 3), Conv2dCfg::same(1, 3))?;
    let a = b.relu(a);
    let a = b.conv("conv3x1_2", a, c, (3, 1), Conv2dCfg::same_dilated(3, 1, dilation))?;
    let a = b.relu(a);
    let a = b.conv("conv1x3_2", a, c, (1, 3), Conv2dCfg::same_dilated(1, 3, dilation))?;
    let s = b.add(x, a)?;
    Ok(b.relu(s))
}

fn stage(b: &mut TopologyBuilder, style: DecoderStyle, x: NodeId, width: usize) -> Result<NodeId> {
    match style {
        DecoderStyle::DoubleConv => {
            let a = b.conv_relu("conv1", x, width, 3)?;
            b.conv_relu("conv2", a, width, 3)
        }
        DecoderStyle::Light => {
            let a = b.conv("fuse", x, width, (1, 1), Conv2dCfg::default())?;
            let a = b.relu(a);
            spatial(b, a)
        }
    }
}

fn spatial(b: &mut TopologyBuilder, x: NodeId) -> Result<NodeId> {
    let w = b.channels(x);
    let a = b.conv("spatial", x, w, (3, 3), Conv2dCfg::same(3, 3).with_groups(w))?;
    Ok(b.relu(a))
}

/// Merges a deeper decoder output into a skip feature of width `width`.
fn merge(
    b: &mut TopologyBuilder,
    style: DecoderStyle,
    deeper: NodeId,
    skip: Option<NodeId>,
    width: usize,
) -> Result<NodeId> {
    match style {
        DecoderStyle::DoubleConv => {
            let up = b.upsample2(deeper);
            let x = match skip {
                Some(s) => b.concat(&[up, s]),
                None => up,
            };
            stage(b, style, x, width)
        }
        DecoderStyle::Light => {
            // project before upsampling, then add the skip
            let p = b.conv("project", deeper, width, (1, 1), Conv2dCfg::default())?;
            let up = b.upsample2(p);
            let x = match skip {
                Some(s) => b.add(up, s)?,
                None => up,
            };
            let x = b.relu(x);
            spatial(b, x)
        }
    }
}

/// U-shaped decoder. Stage `i` runs at the resolution of encoder level `i`
/// and has the same width, which makes taps at one level directly
/// comparable. Returns the logits node and the per-level decoder outputs.
pub fn decoder(b: &mut TopologyBuilder, style: DecoderStyle, enc: &EncoderOutput) -> Result<(NodeId, Vec<NodeId>)> {
    let depth = enc.levels.len();
    let mut out = vec![enc.levels[0]; depth];
    let deepest = enc.levels[depth - 1];
    let w = b.channels(deepest);
    out[depth - 1] = b.scoped(format!("level{depth}"), |b| stage(b, style, deepest, w))?;
    for lvl in (0..depth - 1).rev() {
        let skip = enc.levels[lvl];
        let w = b.channels(skip);
        let deeper = out[lvl + 1];
        out[lvl] = b.scoped(format!("level{}", lvl + 1), |b| merge(b, style, deeper, Some(skip), w))?;
    }
    let head_w = match enc.stem {
        Some(stem) => b.channels(stem),
        None => b.channels(out[0]),
    };
    let h = b.scoped("head", |b| merge(b, style, out[0], enc.stem, head_w))?;
    let logits = b.prior_head("logits", h, super::FOREGROUND_PRIOR)?;
    Ok((logits, out))
}
