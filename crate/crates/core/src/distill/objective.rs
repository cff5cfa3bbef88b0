use std::collections::BTreeMap;

use vesseldistill_autograd::{Float, Graph, Var};

use super::losses::{asd_loss, ce_loss, euclidean_similarity, fsd_loss, latent_similarity, reconstruction_loss, softkd_loss};
use super::{NormMode, ProjectorSet, Similarity};
use crate::nets::NetOutput;
use crate::{Error, Result};

/// Scalar loss nodes produced by an objective; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub ce: Option<Var>,
    /// Feature-level distillation term (the SoftKD divergence for `softkd`).
    pub fsd: Option<Var>,
    pub asd: Option<Var>,
    pub rec: Option<Var>,
}

/// Projector parameters bound into the step graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundProjectors<'a, F> {
    pub set: &'a ProjectorSet<F>,
    pub vars: &'a [Var],
}

/// Everything an objective may read while building one step's losses.
/// Teacher outputs, when present, are constant nodes of `g`.
pub struct StepContext<'a, F: Float> {
    pub g: &'a mut Graph<F>,
    pub labels: Var,
    pub student: &'a NetOutput,
    pub teacher: Option<&'a NetOutput>,
    pub student_proj: Option<BoundProjectors<'a, F>>,
    pub teacher_proj: Option<BoundProjectors<'a, F>>,
    pub similarity: Similarity,
    pub norm: NormMode,
    pub temperature: f64,
    cache: Cache,
}

#[derive(Default)]
struct Cache {
    /// Per tap: (encoder pooled, decoder pooled)
    student_pooled: Option<Vec<(Var, Var)>>,
    /// Per tap: (encoder pooled, encoder latent, decoder pooled, decoder latent)
    teacher_latents: Option<Vec<[Var; 4]>>,
}

impl<'a, F: Float> StepContext<'a, F> {
    pub fn new(g: &'a mut Graph<F>, labels: Var, student: &'a NetOutput) -> Self {
        Self {
            g,
            labels,
            student,
            teacher: None,
            student_proj: None,
            teacher_proj: None,
            similarity: Similarity::Outer,
            norm: NormMode::Mean,
            temperature: 4.0,
            cache: Cache::default(),
        }
    }

    fn teacher(&self) -> Result<&'a NetOutput> {
        self.teacher
            .ok_or_else(|| Error::Config("objective needs a teacher but none was supplied".into()))
    }

    fn projectors(&self) -> Result<(BoundProjectors<'a, F>, BoundProjectors<'a, F>)> {
        match (self.student_proj, self.teacher_proj) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(Error::Config("objective needs student and teacher projectors".into())),
        }
    }

    pub fn ce(&mut self) -> Result<Var> {
        ce_loss(self.g, self.student.prob, self.labels)
    }

    /// Squared gap between per-sample prediction distances to the labels.
    pub fn asd(&mut self) -> Result<Var> {
        let t = self.teacher()?;
        let et = euclidean_similarity(self.g, t.prob, self.labels)?;
        let es = euclidean_similarity(self.g, self.student.prob, self.labels)?;
        asd_loss(self.g, et, es, self.norm)
    }

    pub fn softkd(&mut self) -> Result<Var> {
        let t = self.teacher()?;
        softkd_loss(self.g, self.student.logits, t.logits, self.temperature)
    }

    fn student_pooled(&mut self) -> Result<Vec<(Var, Var)>> {
        if let Some(p) = &self.cache.student_pooled {
            return Ok(p.clone());
        }
        let taps = &self.student.taps;
        let mut out = Vec::with_capacity(taps.encoder.len());
        for (&e, &d) in taps.encoder.iter().zip(&taps.decoder) {
            let pe = self.g.global_avg_pool(e)?;
            let pd = self.g.global_avg_pool(d)?;
            out.push((pe, pd));
        }
        self.cache.student_pooled = Some(out.clone());
        Ok(out)
    }

    fn teacher_latents(&mut self) -> Result<Vec<[Var; 4]>> {
        if let Some(l) = &self.cache.teacher_latents {
            return Ok(l.clone());
        }
        let t = self.teacher()?;
        let (_, tp) = self.projectors()?;
        let mut out = Vec::with_capacity(t.taps.encoder.len());
        for (k, (&e, &d)) in t.taps.encoder.iter().zip(&t.taps.decoder).enumerate() {
            let pe = self.g.global_avg_pool(e)?;
            let le = tp.set.encode(self.g, tp.vars, k, pe)?;
            let pd = self.g.global_avg_pool(d)?;
            let ld = tp.set.encode(self.g, tp.vars, k, pd)?;
            out.push([pe, le, pd, ld]);
        }
        self.cache.teacher_latents = Some(out.clone());
        Ok(out)
    }

    /// Gap between teacher and student encoder/decoder latent similarities,
    /// one entry per (tap, sample). The teacher side is detached.
    pub fn fsd(&mut self) -> Result<Var> {
        let (sp, _) = self.projectors()?;
        let pooled = self.student_pooled()?;
        let teacher = self.teacher_latents()?;
        if pooled.len() != teacher.len() {
            return Err(Error::Incompatible(format!(
                "student has {} taps, teacher {}",
                pooled.len(),
                teacher.len()
            )));
        }
        let mut cs = Vec::with_capacity(pooled.len());
        let mut ct = Vec::with_capacity(pooled.len());
        for (k, (&(pe, pd), t)) in pooled.iter().zip(&teacher).enumerate() {
            let level = sp.set.projector(k).level;
            let le = sp.set.encode(self.g, sp.vars, k, pe)?;
            let ld = sp.set.encode(self.g, sp.vars, k, pd)?;
            cs.push(latent_similarity(self.g, le, ld, self.similarity, level)?);
            let c = latent_similarity(self.g, t[1], t[3], self.similarity, level)?;
            ct.push(self.g.detach(c));
        }
        let cs = self.g.concat(&cs, 0)?;
        let ct = self.g.concat(&ct, 0)?;
        fsd_loss(self.g, ct, cs, self.norm)
    }

    /// Mean reconstruction error of every projector on its tap features.
    /// Inputs are detached, so only projector parameters receive gradients.
    pub fn rec(&mut self) -> Result<Var> {
        let (sp, tp) = self.projectors()?;
        let pooled = self.student_pooled()?;
        let teacher = self.teacher_latents()?;
        let mut terms = Vec::with_capacity(4 * pooled.len());
        for (k, &(pe, pd)) in pooled.iter().enumerate() {
            for p in [pe, pd] {
                let p = self.g.detach(p);
                let l = sp.set.encode(self.g, sp.vars, k, p)?;
                let r = sp.set.decode(self.g, sp.vars, k, l)?;
                terms.push(reconstruction_loss(self.g, p, r, self.norm)?);
            }
        }
        for (k, t) in teacher.iter().enumerate() {
            for (p, l) in [(t[0], t[1]), (t[2], t[3])] {
                let r = tp.set.decode(self.g, tp.vars, k, l)?;
                terms.push(reconstruction_loss(self.g, p, r, self.norm)?);
            }
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.g.add(acc, t)?;
        }
        let n = F::of(terms.len() as f64);
        Ok(self.g.affine(acc, F::one() / n, F::zero())?)
    }
}

/// A training objective selected by name.
pub trait Objective<F: Float>: Send + Sync {
    fn name(&self) -> &'static str;

    fn uses_teacher(&self) -> bool;

    fn uses_projectors(&self) -> bool {
        false
    }

    fn terms(&self, ctx: &mut StepContext<'_, F>) -> Result<LossTerms>;
}

/// Cross-entropy against the labels only.
struct Supervised(&'static str);

impl<F: Float> Objective<F> for Supervised {
    fn name(&self) -> &'static str {
        self.0
    }

    fn uses_teacher(&self) -> bool {
        false
    }

    fn terms(&self, ctx: &mut StepContext<'_, F>) -> Result<LossTerms> {
        Ok(LossTerms {
            ce: Some(ctx.ce()?),
            ..LossTerms::default()
        })
    }
}

/// Feature similarity distillation, optionally with the prediction-distance term.
struct SimilarityDistill {
    name: &'static str,
    with_asd: bool,
}

impl<F: Float> Objective<F> for SimilarityDistill {
    fn name(&self) -> &'static str {
        self.name
    }

    fn uses_teacher(&self) -> bool {
        true
    }

    fn uses_projectors(&self) -> bool {
        true
    }

    fn terms(&self, ctx: &mut StepContext<'_, F>) -> Result<LossTerms> {
        let ce = ctx.ce()?;
        let fsd = ctx.fsd()?;
        let asd = if self.with_asd { Some(ctx.asd()?) } else { None };
        let rec = ctx.rec()?;
        Ok(LossTerms {
            ce: Some(ce),
            fsd: Some(fsd),
            asd,
            rec: Some(rec),
        })
    }
}

struct SoftKd;

impl<F: Float> Objective<F> for SoftKd {
    fn name(&self) -> &'static str {
        "softkd"
    }

    fn uses_teacher(&self) -> bool {
        true
    }

    fn terms(&self, ctx: &mut StepContext<'_, F>) -> Result<LossTerms> {
        Ok(LossTerms {
            ce: Some(ctx.ce()?),
            fsd: Some(ctx.softkd()?),
            ..LossTerms::default()
        })
    }
}

/// Name-indexed training objectives.
pub struct ObjectiveRegistry<F: Float> {
    entries: BTreeMap<&'static str, Box<dyn Objective<F>>>,
}

impl<F: Float> ObjectiveRegistry<F> {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// `teacher`, `scratch`, `fsd_only`, `distill` and `softkd`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Supervised("teacher")));
        r.register(Box::new(Supervised("scratch")));
        r.register(Box::new(SimilarityDistill {
            name: "fsd_only",
            with_asd: false,
        }));
        r.register(Box::new(SimilarityDistill {
            name: "distill",
            with_asd: true,
        }));
        r.register(Box::new(SoftKd));
        r
    }

    pub fn register(&mut self, objective: Box<dyn Objective<F>>) {
        self.entries.insert(objective.name(), objective);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Objective<F>> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown mode `{name}` (known: {})",
                self.entries.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl<F: Float> Default for ObjectiveRegistry<F> {
    fn default() -> Self {
        Self::builtin()
    }
}
