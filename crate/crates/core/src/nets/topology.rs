//! Layer DAG shared by every architecture, plus its interpreter.

use vesseldistill_autograd::{Conv2dCfg, Float, Graph, Var};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Input,
    Conv {
        x: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        cfg: Conv2dCfg,
    },
    Linear {
        x: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    MaxPool2(NodeId),
    Upsample2(NodeId),
    GlobalAvgPool(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ChannelScale { x: NodeId, scale: NodeId },
    Concat(Vec<NodeId>),
    /// Appends `extra` all-zero channels.
    PadChannels { x: NodeId, extra: usize },
}

/// A fully specified network: layers in evaluation order, declared
/// parameters, and the nodes exported as logits and feature taps.
#[derive(Debug, Clone)]
pub struct Topology {
    pub(crate) layers: Vec<Layer>,
    pub(crate) channels: Vec<usize>,
    pub(crate) params: Vec<ParamDecl>,
    pub(crate) logits: NodeId,
    pub(crate) encoder_taps: Vec<NodeId>,
    pub(crate) decoder_taps: Vec<NodeId>,
}

impl Topology {
    pub fn params(&self) -> &[ParamDecl] {
        &self.params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Channel widths of the encoder taps (equal to the decoder ones).
    pub fn tap_channels(&self) -> Vec<usize> {
        self.encoder_taps.iter().map(|n| self.channels[n.0]).collect()
    }

    /// Forward operation count at `input_shape`, from a symbolic pass.
    /// Fails on any layer the symbolic graph cannot account for.
    pub fn count_flops(&self, input_shape: &[usize]) -> Result<u64> {
        let mut g = Graph::<f32>::symbolic();
        let params: Vec<Var> = self.params.iter().map(|d| g.placeholder(&d.shape, false)).collect();
        let x = g.placeholder(input_shape, false);
        self.run(&mut g, &params, x)?;
        Ok(g.flops())
    }

    /// Evaluates the DAG. `params[i]` must hold the tensor of `ParamId(i)`.
    pub fn run<F: Float>(&self, g: &mut Graph<F>, params: &[Var], input: Var) -> Result<Vec<Var>> {
        let mut vals: Vec<Var> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let v = match layer {
                Layer::Input => input,
                Layer::Conv { x, weight, bias, cfg } => {
                    g.conv2d(vals[x.0], params[weight.0], bias.map(|b| params[b.0]), *cfg)?
                }
                Layer::Linear { x, weight, bias } => {
                    g.linear(vals[x.0], params[weight.0], bias.map(|b| params[b.0]))?
                }
                Layer::Relu(x) => g.relu(vals[x.0])?,
                Layer::Sigmoid(x) => g.sigmoid(vals[x.0])?,
                Layer::MaxPool2(x) => g.max_pool2(vals[x.0])?,
                Layer::Upsample2(x) => g.upsample2(vals[x.0])?,
                Layer::GlobalAvgPool(x) => g.global_avg_pool(vals[x.0])?,
                Layer::Add(a, b) => g.add(vals[a.0], vals[b.0])?,
                Layer::Sub(a, b) => g.sub(vals[a.0], vals[b.0])?,
                Layer::ChannelScale { x, scale } => g.channel_scale(vals[x.0], vals[scale.0])?,
                Layer::Concat(parts) => {
                    let parts: Vec<Var> = parts.iter().map(|p| vals[p.0]).collect();
                    g.concat(&parts, 1)?
                }
                Layer::PadChannels { x, extra } => {
                    let mut shape = g.shape(vals[x.0]).to_vec();
                    shape[1] = *extra;
                    let zeros = g.placeholder(&shape, false);
                    g.concat(&[vals[x.0], zeros], 1)?
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }
}

/// Incrementally assembles a [`Topology`], tracking channel widths so
/// parameter shapes can be declared as layers are added.
#[derive(Debug)]
pub struct TopologyBuilder {
    layers: Vec<Layer>,
    channels: Vec<usize>,
    params: Vec<ParamDecl>,
    scope: Vec<String>,
}

impl TopologyBuilder {
    pub fn new(in_channels: usize) -> (Self, NodeId) {
        let b = Self {
            layers: vec![Layer::Input],
            channels: vec![in_channels],
            params: Vec::new(),
            scope: Vec::new(),
        };
        (b, NodeId(0))
    }

    pub fn channels(&self, n: NodeId) -> usize {
        self.channels[n.0]
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    /// Runs `f` inside a named scope.
    pub fn scoped<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.push_scope(name);
        let out = f(self);
        self.pop_scope();
        out
    }

    fn param(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        let mut full = self.scope.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.params.push(ParamDecl {
            name: full,
            shape,
            init,
        });
        ParamId(self.params.len() - 1)
    }

    fn push(&mut self, layer: Layer, channels: usize) -> NodeId {
        self.layers.push(layer);
        self.channels.push(channels);
        NodeId(self.layers.len() - 1)
    }

    pub fn conv(&mut self, name: &str, x: NodeId, out: usize, kernel: (usize, usize), cfg: Conv2dCfg) -> Result<NodeId> {
        let cin = self.channels(x);
        if out == 0 || cin % cfg.groups != 0 || out % cfg.groups != 0 {
            return Err(Error::Config(format!(
                "conv `{name}`: {cin}->{out} channels not divisible into {} groups",
                cfg.groups
            )));
        }
        let fan_in = cin / cfg.groups * kernel.0 * kernel.1;
        let weight = self.param(
            &format!("{name}.weight"),
            vec![out, cin / cfg.groups, kernel.0, kernel.1],
            Init::HeNormal { fan_in },
        );
        let bias = Some(self.param(&format!("{name}.bias"), vec![out], Init::Zeros));
        Ok(self.push(Layer::Conv { x, weight, bias, cfg }, out))
    }

    /// 1×1 output convolution with zero weights and its bias at `logit(prior)`,
    /// so every pixel starts at probability `prior`.
    pub fn prior_head(&mut self, name: &str, x: NodeId, prior: f64) -> Result<NodeId> {
        let cin = self.channels(x);
        let weight = self.param(&format!("{name}.weight"), vec![1, cin, 1, 1], Init::Zeros);
        let bias = Some(self.param(&format!("{name}.bias"), vec![1], Init::Constant((prior / (1.0 - prior)).ln())));
        Ok(self.push(Layer::Conv { x, weight, bias, cfg: Conv2dCfg::default() }, 1))
    }

    /// Stride-1 "same" convolution followed by ReLU.
    pub fn conv_relu(&mut self, name: &str, x: NodeId, out: usize, k: usize) -> Result<NodeId> {
        let c = self.conv(name, x, out, (k, k), Conv2dCfg::same(k, k))?;
        Ok(self.relu(c))
    }

    pub fn linear(&mut self, name: &str, x: NodeId, out: usize) -> Result<NodeId> {
        let cin = self.channels(x);
        let weight = self.param(&format!("{name}.weight"), vec![out, cin], Init::HeNormal { fan_in: cin });
        let bias = Some(self.param(&format!("{name}.bias"), vec![out], Init::Zeros));
        Ok(self.push(Layer::Linear { x, weight, bias }, out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(Layer::Relu(x), c)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(Layer::Sigmoid(x), c)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(Layer::MaxPool2(x), c)
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(Layer::Upsample2(x), c)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.push(Layer::GlobalAvgPool(x), c)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("add", a, b)?;
        let c = self.channels(a);
        Ok(self.push(Layer::Add(a, b), c))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_width("sub", a, b)?;
        let c = self.channels(a);
        Ok(self.push(Layer::Sub(a, b), c))
    }

    pub fn channel_scale(&mut self, x: NodeId, scale: NodeId) -> Result<NodeId> {
        self.same_width("channel_scale", x, scale)?;
        let c = self.channels(x);
        Ok(self.push(Layer::ChannelScale { x, scale }, c))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let c = parts.iter().map(|&p| self.channels(p)).sum();
        self.push(Layer::Concat(parts.to_vec()), c)
    }

    pub fn pad_channels(&mut self, x: NodeId, to: usize) -> Result<NodeId> {
        let c = self.channels(x);
        match to.cmp(&c) {
            std::cmp::Ordering::Less => Err(Error::Config(format!("cannot pad {c} channels down to {to}"))),
            std::cmp::Ordering::Equal => Ok(x),
            std::cmp::Ordering::Greater => Ok(self.push(Layer::PadChannels { x, extra: to - c }, to)),
        }
    }

    fn same_width(&self, what: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.channels(a) != self.channels(b) {
            return Err(Error::Config(format!(
                "{what}: channel widths differ ({} vs {})",
                self.channels(a),
                self.channels(b)
            )));
        }
        Ok(())
    }

    pub fn finish(self, logits: NodeId, encoder_taps: Vec<NodeId>, decoder_taps: Vec<NodeId>) -> Topology {
        Topology {
            layers: self.layers,
            channels: self.channels,
            params: self.params,
            logits,
            encoder_taps,
            decoder_taps,
        }
    }
}
