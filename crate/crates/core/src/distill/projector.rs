use vesseldistill_autograd::{Float, Graph, Var};

use crate::nets::{Init, ParamDecl, ParamStore};
use crate::{Error, Result};

/// Width of the shared latent space.
pub const LATENT_DIM: usize = 512;

/// MLP autoencoder for one tap: `C → hidden → 512 → hidden → C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projector {
    pub level: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Index of the first of its eight arrays in the owning store.
    offset: usize,
}

impl Projector {
    fn layers(&self) -> [(&'static str, usize, usize); 4] {
        [
            ("enc1", self.channels, self.hidden),
            ("enc2", self.hidden, LATENT_DIM),
            ("dec1", LATENT_DIM, self.hidden),
            ("dec2", self.hidden, self.channels),
        ]
    }
}

/// Output of [`ProjectorSet::project`].
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// `[N, C]` spatial mean of the feature map.
    pub pooled: Var,
    /// `[N, 512]`
    pub latent: Var,
    /// `[N, C]`
    pub reconstruction: Var,
}

/// The projectors of one network, one per tap level, with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSet<F> {
    projectors: Vec<Projector>,
    params: ParamStore<F>,
}

impl<F: Float> ProjectorSet<F> {
    /// Parameter declarations for taps `levels` of widths `channels`.
    pub fn decls(levels: &[usize], channels: &[usize], hidden: usize) -> Vec<ParamDecl> {
        let mut decls = Vec::new();
        for (&level, &c) in levels.iter().zip(channels) {
            let p = Projector {
                level,
                channels: c,
                hidden,
                offset: 0,
            };
            for (name, i, o) in p.layers() {
                decls.push(ParamDecl {
                    name: format!("tap{level}.{name}.weight"),
                    shape: vec![o, i],
                    init: Init::HeNormal { fan_in: i },
                });
                decls.push(ParamDecl {
                    name: format!("tap{level}.{name}.bias"),
                    shape: vec![o],
                    init: Init::Zeros,
                });
            }
        }
        decls
    }

    fn layout(levels: &[usize], channels: &[usize], hidden: usize) -> Result<Vec<Projector>> {
        if levels.len() != channels.len() {
            return Err(Error::Shape(format!(
                "{} tap levels but {} channel widths",
                levels.len(),
                channels.len()
            )));
        }
        if hidden == 0 {
            return Err(Error::Config("projector hidden width must be >= 1".into()));
        }
        Ok(levels
            .iter()
            .zip(channels)
            .enumerate()
            .map(|(k, (&level, &channels))| Projector {
                level,
                channels,
                hidden,
                offset: 8 * k,
            })
            .collect())
    }

    pub fn new(levels: &[usize], channels: &[usize], hidden: usize, seed: u64) -> Result<Self> {
        let projectors = Self::layout(levels, channels, hidden)?;
        let params = ParamStore::init(&Self::decls(levels, channels, hidden), seed);
        Ok(Self { projectors, params })
    }

    /// Rebuilds a set from stored parameters, checking names and shapes.
    pub fn from_params(levels: &[usize], channels: &[usize], hidden: usize, params: ParamStore<F>) -> Result<Self> {
        let projectors = Self::layout(levels, channels, hidden)?;
        params.check_against(&Self::decls(levels, channels, hidden))?;
        Ok(Self { projectors, params })
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn projector(&self, k: usize) -> &Projector {
        &self.projectors[k]
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    fn dense(g: &mut Graph<F>, vars: &[Var], slot: usize, x: Var, relu: bool) -> Result<Var> {
        let y = g.linear(x, vars[slot], Some(vars[slot + 1]))?;
        Ok(if relu { g.relu(y)? } else { y })
    }

    fn check_width(&self, g: &Graph<F>, k: usize, x: Var, width: usize, what: &str) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != width {
            return Err(Error::Shape(format!(
                "projector for tap {} expects {what} [N, {width}], got {s:?}",
                self.projectors[k].level
            )));
        }
        Ok(())
    }

    /// `[N, C] → [N, 512]`
    pub fn encode(&self, g: &mut Graph<F>, vars: &[Var], k: usize, pooled: Var) -> Result<Var> {
        let p = self.projectors[k];
        self.check_width(g, k, pooled, p.channels, "pooled features")?;
        let h = Self::dense(g, vars, p.offset, pooled, true)?;
        Self::dense(g, vars, p.offset + 2, h, false)
    }

    /// `[N, 512] → [N, C]`
    pub fn decode(&self, g: &mut Graph<F>, vars: &[Var], k: usize, latent: Var) -> Result<Var> {
        let p = self.projectors[k];
        self.check_width(g, k, latent, LATENT_DIM, "latent")?;
        let h = Self::dense(g, vars, p.offset + 4, latent, true)?;
        Self::dense(g, vars, p.offset + 6, h, false)
    }

    /// Pools `feature: [N, C, h, w]` and runs it through projector `k`.
    pub fn project(&self, g: &mut Graph<F>, vars: &[Var], k: usize, feature: Var) -> Result<Projection> {
        let p = self.projectors[k];
        let s = g.shape(feature);
        if s.len() != 4 || s[1] != p.channels {
            return Err(Error::Shape(format!(
                "projector for tap {} expects [N, {}, h, w], got {s:?}",
                p.level, p.channels
            )));
        }
        let pooled = g.global_avg_pool(feature)?;
        let latent = self.encode(g, vars, k, pooled)?;
        let reconstruction = self.decode(g, vars, k, latent)?;
        Ok(Projection {
            pooled,
            latent,
            reconstruction,
        })
    }
}
