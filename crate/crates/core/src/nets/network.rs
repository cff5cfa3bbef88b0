use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use vesseldistill_autograd::{Float, Graph, Tensor, Var};

use super::{build_topology, ArchitectureRegistry, Init, NetworkSpec, ParamDecl, Topology};
use crate::{Error, Result};

/// Named trainable arrays in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    /// Draws every declared parameter from one seeded stream. Values are
    /// sampled in `f64` and then converted, so `f32` and `f64` stores built
    /// from the same seed agree up to rounding.
    pub fn init(decls: &[ParamDecl], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(decls.len());
        let mut tensors = Vec::with_capacity(decls.len());
        for d in decls {
            let n: usize = d.shape.iter().product();
            let data: Vec<F> = match d.init {
                Init::Zeros => vec![F::zero(); n],
                Init::Constant(v) => vec![F::of(v); n],
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in.max(1) as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| F::of(dist.sample(&mut rng))).collect()
                }
            };
            names.push(d.name.clone());
            tensors.push(Tensor::new(d.shape.clone(), data).expect("declared shape"));
        }
        Self { names, tensors }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<F>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.input(t.clone(), trainable)).collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex(&h.finalize())
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checks that names and shapes agree with `decls`.
    pub fn check_against(&self, decls: &[ParamDecl]) -> Result<()> {
        if decls.len() != self.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameter arrays, found {}",
                decls.len(),
                self.len()
            )));
        }
        for (d, (n, t)) in decls.iter().zip(self.names.iter().zip(&self.tensors)) {
            if &d.name != n || d.shape != t.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    n,
                    t.shape(),
                    d.name,
                    d.shape
                )));
            }
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Encoder and decoder features at the configured tap levels, aligned by index.
#[derive(Debug, Clone)]
pub struct TapBundle {
    pub levels: Vec<usize>,
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    pub logits: Var,
    /// Sigmoid of the logits, `[N,1,H,W]`.
    pub prob: Var,
    pub taps: TapBundle,
    /// Graph leaves holding the parameters, in store order.
    pub params: Vec<Var>,
}

/// A built network: its spec, layer DAG and parameter values.
#[derive(Debug, Clone)]
pub struct SegmentationNetwork<F> {
    spec: NetworkSpec,
    topology: Arc<Topology>,
    params: ParamStore<F>,
}

impl<F: Float> SegmentationNetwork<F> {
    /// Builds `spec` from the built-in registry with freshly initialized weights.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::build_with(&ArchitectureRegistry::builtin(), spec, seed)
    }

    pub fn build_with(registry: &ArchitectureRegistry, spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let topology = build_topology(registry, spec)?;
        let params = ParamStore::init(topology.params(), seed);
        Ok(Self {
            spec: spec.clone(),
            topology: Arc::new(topology),
            params,
        })
    }

    /// Reassembles a network from stored parameters.
    pub fn from_params(spec: &NetworkSpec, params: ParamStore<F>) -> Result<Self> {
        let topology = build_topology(&ArchitectureRegistry::builtin(), spec)?;
        params.check_against(topology.params())?;
        Ok(Self {
            spec: spec.clone(),
            topology: Arc::new(topology),
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Channel width of each tap (encoder and decoder agree per level).
    pub fn tap_channels(&self) -> Vec<usize> {
        self.topology.tap_channels()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "expected input [N,{},H,W], got {shape:?}",
                self.spec.in_channels
            )));
        }
        let m = 1usize << self.spec.depth;
        for (name, d) in [("height", shape[2]), ("width", shape[3])] {
            if d == 0 || d % m != 0 {
                return Err(Error::Shape(format!(
                    "input {name} {d} is not divisible by 2^depth = {m}"
                )));
            }
        }
        Ok(())
    }

    /// Forward pass. With `trainable` the parameter leaves require gradients.
    pub fn forward(&self, g: &mut Graph<F>, x: Var, trainable: bool) -> Result<NetOutput> {
        self.check_input(g.shape(x))?;
        let params = self.params.bind(g, trainable);
        let vals = self.topology.run(g, &params, x)?;
        let logits = vals[self.topology.logits.0];
        let prob = g.sigmoid(logits)?;
        let taps = TapBundle {
            levels: self.spec.tap_levels.clone(),
            encoder: self.topology.encoder_taps.iter().map(|n| vals[n.0]).collect(),
            decoder: self.topology.decoder_taps.iter().map(|n| vals[n.0]).collect(),
        };
        Ok(NetOutput {
            logits,
            prob,
            taps,
            params,
        })
    }

    /// Inference on a concrete batch, returning probabilities.
    pub fn predict(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, x, false)?;
        Ok(g.value(out.prob).clone())
    }

    /// Operation count of one forward pass at `input_shape`.
    pub fn count_flops(&self, input_shape: &[usize]) -> Result<u64> {
        self.check_input(input_shape)?;
        self.topology.count_flops(input_shape)
    }
}
