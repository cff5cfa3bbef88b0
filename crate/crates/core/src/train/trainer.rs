use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vesseldistill_autograd::optim::{Adam, Optimizer, Sgd};
use vesseldistill_autograd::{Float, Graph, Tensor, Var};

use super::checkpoint::{Checkpoint, CheckpointInfo};
use super::config::{OptimizerKind, Schedule, TrainConfig};
use crate::distill::{total_loss, total_loss_value, BoundProjectors, ObjectiveRegistry, ProjectorSet, StepContext};
use crate::eval::{batch_tensors, evaluate, DatasetMetrics};
use crate::nets::{NetOutput, SegmentationNetwork, TapBundle};
use crate::synthdata::{augment, AngiogramSample, DatasetSplit};
use crate::{Error, Result};

pub const LOG_HEADER: &str = "epoch,ce,fsd,asd,rec,total,val_acc,val_se,val_auc,val_miou,val_f1,wall_time_s";
pub const LOG_FILE: &str = "train_log.csv";
pub const CKPT_DIR: &str = "ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

const STREAM_NETWORK: u64 = 1;
const STREAM_STUDENT_PROJ: u64 = 2;
const STREAM_TEACHER_PROJ: u64 = 3;
const STREAM_ORDER: u64 = 4;
const STREAM_AUGMENT: u64 = 5;

/// SplitMix64 finalizer over `seed` and a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Training sample order for `epoch`; it depends only on the seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ORDER));
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn augment_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(derive_seed(seed, STREAM_AUGMENT) ^ epoch as u64, index as u64)
}

/// Learning rate of (0-based) `epoch`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Cosine => 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos()),
    }
}

/// Unweighted loss components of one batch and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub ce: f64,
    pub fsd: f64,
    pub asd: f64,
    pub rec: f64,
    pub total: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: StepLosses,
    pub val: DatasetMetrics,
    pub wall_time_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            l.ce,
            l.fsd,
            l.asd,
            l.rec,
            l.total,
            opt(self.val.acc),
            opt(self.val.se),
            opt(self.val.auc),
            opt(self.val.miou),
            opt(self.val.f1),
            self.wall_time_s
        )
    }
}

/// Result of [`Session::fit`].
#[derive(Debug, Clone)]
pub struct RunOutput<F> {
    pub network: SegmentationNetwork<F>,
    /// Network with the best validation mIOU and its 1-based epoch.
    pub best: Option<(usize, f64, SegmentationNetwork<F>)>,
    pub log: Vec<EpochRecord>,
    pub student_projectors: Option<ProjectorSet<F>>,
    pub teacher_projectors: Option<ProjectorSet<F>>,
    pub teacher_checksum: Option<String>,
}

impl<F: Float> RunOutput<F> {
    /// Best network if any epoch had a defined mIOU, else the final one.
    pub fn best_or_last(&self) -> &SegmentationNetwork<F> {
        self.best.as_ref().map_or(&self.network, |b| &b.2)
    }
}

/// Copies the teacher's outputs into `g` as constants. The teacher runs in
/// its own graph, so no gradient can reach its parameters.
fn import_teacher<F: Float>(g: &mut Graph<F>, teacher: &SegmentationNetwork<F>, images: &Tensor<F>) -> Result<NetOutput> {
    let mut tg = Graph::new();
    let x = tg.constant(images.clone());
    let out = teacher.forward(&mut tg, x, false)?;
    let mut c = |v: Var| g.constant(tg.value(v).clone());
    Ok(NetOutput {
        logits: c(out.logits),
        prob: c(out.prob),
        taps: TapBundle {
            levels: out.taps.levels.clone(),
            encoder: out.taps.encoder.iter().map(|&v| c(v)).collect(),
            decoder: out.taps.decoder.iter().map(|&v| c(v)).collect(),
        },
        params: Vec::new(),
    })
}

fn check_taps<F: Float>(teacher: &SegmentationNetwork<F>, student: &SegmentationNetwork<F>) -> Result<()> {
    if teacher.spec().tap_levels != student.spec().tap_levels {
        return Err(Error::Incompatible(format!(
            "teacher taps levels {:?} but student taps {:?}",
            teacher.spec().tap_levels,
            student.spec().tap_levels
        )));
    }
    Ok(())
}

fn make_optimizer<F: Float>(cfg: &TrainConfig) -> Box<dyn Optimizer<F>> {
    match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.lr)),
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.lr, cfg.momentum)),
    }
}

struct Built {
    losses: StepLosses,
    total: Var,
    student: Vec<Var>,
    student_proj: Vec<Var>,
    teacher_proj: Vec<Var>,
}

/// A student (or teacher) being trained, with its optional frozen teacher,
/// projectors and optimizer state.
pub struct Session<F: Float> {
    cfg: TrainConfig,
    objectives: ObjectiveRegistry<F>,
    student: SegmentationNetwork<F>,
    teacher: Option<SegmentationNetwork<F>>,
    teacher_checksum: Option<String>,
    student_proj: Option<ProjectorSet<F>>,
    teacher_proj: Option<ProjectorSet<F>>,
    optimizer: Box<dyn Optimizer<F>>,
    step: u64,
}

impl<F: Float> Session<F> {
    /// Fresh network, and fresh projectors if the mode needs them.
    pub fn new(cfg: &TrainConfig, teacher: Option<SegmentationNetwork<F>>) -> Result<Self> {
        cfg.validate()?;
        let student = SegmentationNetwork::build(&cfg.network_spec()?, derive_seed(cfg.seed, STREAM_NETWORK))?;
        let needs_proj = ObjectiveRegistry::<F>::builtin().get(&cfg.mode)?.uses_projectors();
        if let Some(t) = &teacher {
            check_taps(t, &student)?;
        }
        let (sp, tp) = match (&teacher, needs_proj) {
            (Some(t), true) => {
                let levels = &student.spec().tap_levels;
                let sp = ProjectorSet::new(
                    levels,
                    &student.tap_channels(),
                    cfg.projector_hidden,
                    derive_seed(cfg.seed, STREAM_STUDENT_PROJ),
                )?;
                let tp = ProjectorSet::new(
                    levels,
                    &t.tap_channels(),
                    cfg.projector_hidden,
                    derive_seed(cfg.seed, STREAM_TEACHER_PROJ),
                )?;
                (Some(sp), Some(tp))
            }
            _ => (None, None),
        };
        Self::from_parts(cfg, student, teacher, sp, tp)
    }

    /// Assembles a session from existing parts, checking that they fit the mode.
    pub fn from_parts(
        cfg: &TrainConfig,
        student: SegmentationNetwork<F>,
        teacher: Option<SegmentationNetwork<F>>,
        student_proj: Option<ProjectorSet<F>>,
        teacher_proj: Option<ProjectorSet<F>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let objectives = ObjectiveRegistry::builtin();
        let objective = objectives.get(&cfg.mode)?;
        let teacher = if objective.uses_teacher() {
            let t = teacher.ok_or_else(|| Error::Config(format!("mode `{}` needs a teacher network", cfg.mode)))?;
            check_taps(&t, &student)?;
            Some(t)
        } else {
            None
        };
        if objective.uses_projectors() && (student_proj.is_none() || teacher_proj.is_none()) {
            return Err(Error::Config(format!("mode `{}` needs projectors", cfg.mode)));
        }
        let (student_proj, teacher_proj) = if objective.uses_projectors() {
            (student_proj, teacher_proj)
        } else {
            (None, None)
        };
        let teacher_checksum = teacher.as_ref().map(|t| t.params().checksum());
        Ok(Self {
            cfg: cfg.clone(),
            objectives,
            student,
            teacher,
            teacher_checksum,
            student_proj,
            teacher_proj,
            optimizer: make_optimizer(cfg),
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn student(&self) -> &SegmentationNetwork<F> {
        &self.student
    }

    pub fn teacher(&self) -> Option<&SegmentationNetwork<F>> {
        self.teacher.as_ref()
    }

    pub fn student_projectors(&self) -> Option<&ProjectorSet<F>> {
        self.student_proj.as_ref()
    }

    pub fn teacher_projectors(&self) -> Option<&ProjectorSet<F>> {
        self.teacher_proj.as_ref()
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Checksum of the teacher taken when the session was created.
    pub fn teacher_checksum(&self) -> Option<&str> {
        self.teacher_checksum.as_deref()
    }

    /// Fails if the teacher parameters differ from the recorded checksum.
    pub fn verify_teacher(&self) -> Result<()> {
        if let (Some(t), Some(sum)) = (&self.teacher, &self.teacher_checksum) {
            let now = t.params().checksum();
            if &now != sum {
                return Err(Error::Numeric(format!("teacher parameters changed: {sum} -> {now}")));
            }
        }
        Ok(())
    }

    fn build(&self, g: &mut Graph<F>, images: &Tensor<F>, masks: &Tensor<F>, trainable: bool) -> Result<Built> {
        let objective = self.objectives.get(&self.cfg.mode)?;
        let teacher_out = match (&self.teacher, objective.uses_teacher()) {
            (Some(t), true) => Some(import_teacher(g, t, images)?),
            _ => None,
        };
        let x = g.constant(images.clone());
        let y = g.constant(masks.clone());
        let out = self.student.forward(g, x, trainable)?;
        let sp_vars = self.student_proj.as_ref().map(|p| p.bind(g, trainable)).unwrap_or_default();
        let tp_vars = self.teacher_proj.as_ref().map(|p| p.bind(g, trainable)).unwrap_or_default();
        let terms = {
            let mut ctx = StepContext::new(g, y, &out);
            ctx.teacher = teacher_out.as_ref();
            ctx.student_proj = self.student_proj.as_ref().map(|set| BoundProjectors { set, vars: &sp_vars });
            ctx.teacher_proj = self.teacher_proj.as_ref().map(|set| BoundProjectors { set, vars: &tp_vars });
            ctx.similarity = self.cfg.similarity;
            ctx.norm = self.cfg.norm;
            ctx.temperature = self.cfg.temperature;
            objective.terms(&mut ctx)?
        };
        let mut zero = || g.constant(Tensor::scalar(F::zero()));
        let ce = terms.ce.unwrap_or_else(&mut zero);
        let fsd = terms.fsd.unwrap_or_else(&mut zero);
        let asd = terms.asd.unwrap_or_else(&mut zero);
        let rec = terms.rec.unwrap_or_else(&mut zero);
        let w = &self.cfg.weights;
        let mut total = total_loss(g, ce, fsd, asd, w)?;
        let val = |v: Var| g.value(v).item().as_f64();
        let (ce_v, fsd_v, asd_v, rec_v) = (val(ce), val(fsd), val(asd), val(rec));
        if !rec_v.is_finite() {
            return Err(Error::Numeric(format!("rec loss is {rec_v}")));
        }
        if terms.rec.is_some() {
            let r = g.affine(rec, F::of(w.w_rec), F::zero())?;
            total = g.add(total, r)?;
        }
        Ok(Built {
            losses: StepLosses {
                ce: ce_v,
                fsd: fsd_v,
                asd: asd_v,
                rec: rec_v,
                total: weighted_total(ce_v, fsd_v, asd_v, rec_v, w)?,
            },
            total,
            student: out.params,
            student_proj: sp_vars,
            teacher_proj: tp_vars,
        })
    }

    /// Loss values on a batch without updating anything.
    pub fn losses(&self, images: &Tensor<F>, masks: &Tensor<F>) -> Result<StepLosses> {
        let mut g = Graph::new();
        Ok(self.build(&mut g, images, masks, false)?.losses)
    }

    /// One forward/backward pass and a single optimizer step over the
    /// student and both projector sets.
    pub fn train_step(&mut self, images: &Tensor<F>, masks: &Tensor<F>) -> Result<StepLosses> {
        let mut g = Graph::new();
        let built = self.build(&mut g, images, masks, true)?;
        let grads = g.backward(built.total)?;
        drop(g);
        self.optimizer.begin_step();
        let mut slot = 0;
        let groups = [
            (Some(self.student.params_mut()), &built.student),
            (self.student_proj.as_mut().map(|p| p.params_mut()), &built.student_proj),
            (self.teacher_proj.as_mut().map(|p| p.params_mut()), &built.teacher_proj),
        ];
        for (store, vars) in groups {
            let Some(store) = store else { continue };
            for (t, &v) in store.tensors_mut().iter_mut().zip(vars.iter()) {
                if let Some(gr) = grads.get(v) {
                    self.optimizer.update(slot, t.data_mut(), gr.data());
                }
                slot += 1;
            }
        }
        self.step += 1;
        Ok(built.losses)
    }

    /// Training batches of (0-based) `epoch`, in the seeded order.
    pub fn epoch_batches(&self, train: &[AngiogramSample], epoch: usize) -> Vec<Vec<AngiogramSample>> {
        let order = epoch_order(train.len(), self.cfg.seed, epoch);
        order
            .chunks(self.cfg.batch_size)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        if self.cfg.augment {
                            augment(&train[i], augment_seed(self.cfg.seed, epoch, i))
                        } else {
                            train[i].clone()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Runs one epoch and returns the sample-weighted mean of each component.
    pub fn train_epoch(&mut self, train: &[AngiogramSample], epoch: usize) -> Result<StepLosses> {
        self.optimizer.set_lr(lr_at(&self.cfg, epoch));
        let mut sum = StepLosses::default();
        let mut n = 0usize;
        for batch in self.epoch_batches(train, epoch) {
            let (x, y) = batch_tensors::<F>(&batch)?;
            let l = self.train_step(&x, &y)?;
            let b = batch.len() as f64;
            sum.ce += l.ce * b;
            sum.fsd += l.fsd * b;
            sum.asd += l.asd * b;
            sum.rec += l.rec * b;
            n += batch.len();
        }
        let n = n as f64;
        let (ce, fsd, asd, rec) = (sum.ce / n, sum.fsd / n, sum.asd / n, sum.rec / n);
        Ok(StepLosses {
            ce,
            fsd,
            asd,
            rec,
            total: weighted_total(ce, fsd, asd, rec, &self.cfg.weights)?,
        })
    }

    fn checkpoint(&self, epoch: usize, val_miou: Option<f64>) -> Checkpoint<F> {
        let info = CheckpointInfo {
            spec: self.student.spec().clone(),
            mode: self.cfg.mode.clone(),
            config: self.cfg.to_kv(),
            epoch,
            step: self.step,
            val_miou,
            teacher_checksum: self.teacher_checksum.clone(),
            student_projectors: None,
            teacher_projectors: None,
        };
        Checkpoint::new(info, &self.student, self.student_proj.as_ref(), self.teacher_proj.as_ref())
    }

    /// Trains for the configured epochs, validating on the test split after
    /// each one. With `run_dir`, appends to `train_log.csv` and writes
    /// `ckpt/last.ckpt` every epoch and `ckpt/best.ckpt` on improvement.
    /// A non-finite loss aborts the run; the last checkpoint is left as is.
    pub fn fit(mut self, data: &DatasetSplit, run_dir: Option<&Path>) -> Result<RunOutput<F>> {
        if data.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if data.test.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        let mut log_file = match run_dir {
            Some(dir) => Some(RunFiles::create(dir)?),
            None => None,
        };
        let started = Instant::now();
        let mut log = Vec::with_capacity(self.cfg.epochs);
        let mut best: Option<(usize, f64, SegmentationNetwork<F>)> = None;
        for epoch in 0..self.cfg.epochs {
            let losses = self.train_epoch(&data.train, epoch)?;
            let val = evaluate(&self.student, &data.test, self.cfg.eval_batch, self.cfg.threshold)?;
            let rec = EpochRecord {
                epoch: epoch + 1,
                losses,
                val,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            let improved = match (rec.val.miou, &best) {
                (Some(m), None) => Some(m),
                (Some(m), Some((_, b, _))) if m > *b => Some(m),
                _ => None,
            };
            if let Some(m) = improved {
                best = Some((epoch + 1, m, self.student.clone()));
            }
            if let Some(files) = &mut log_file {
                files.append(&rec)?;
                let ck = self.checkpoint(epoch + 1, rec.val.miou);
                ck.save(&files.ckpt.join(LAST_CKPT))?;
                if improved.is_some() {
                    ck.save(&files.ckpt.join(BEST_CKPT))?;
                }
            }
            log.push(rec);
        }
        self.verify_teacher()?;
        Ok(RunOutput {
            network: self.student,
            best,
            log,
            student_projectors: self.student_proj,
            teacher_projectors: self.teacher_proj,
            teacher_checksum: self.teacher_checksum,
        })
    }
}

/// `w_ce·ce + w_fsd·fsd + w_asd·asd + w_rec·rec` in `f64`.
pub fn weighted_total(ce: f64, fsd: f64, asd: f64, rec: f64, w: &crate::distill::LossWeights) -> Result<f64> {
    Ok(total_loss_value(ce, fsd, asd, w)? + w.w_rec * rec)
}

struct RunFiles {
    log: File,
    ckpt: PathBuf,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let ckpt = dir.join(CKPT_DIR);
        std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self { log, ckpt })
    }

    fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        writeln!(self.log, "{}", rec.csv_row())
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io(LOG_FILE, e))
    }
}

fn require_mode(cfg: &TrainConfig, allowed: &[&str]) -> Result<()> {
    if allowed.contains(&cfg.mode.as_str()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "mode `{}` is not valid here (expected {})",
            cfg.mode,
            allowed.join("|")
        )))
    }
}

/// Supervised training of the teacher variant.
pub fn train_teacher<F: Float>(cfg: &TrainConfig, data: &DatasetSplit, run_dir: Option<&Path>) -> Result<RunOutput<F>> {
    require_mode(cfg, &["teacher"])?;
    Session::new(cfg, None)?.fit(data, run_dir)
}

/// Supervised training of a student without a teacher.
pub fn train_scratch<F: Float>(cfg: &TrainConfig, data: &DatasetSplit, run_dir: Option<&Path>) -> Result<RunOutput<F>> {
    require_mode(cfg, &["scratch"])?;
    Session::new(cfg, None)?.fit(data, run_dir)
}

/// Distills `teacher` into a fresh student (`distill`, `fsd_only` or `softkd`).
pub fn distill<F: Float>(
    cfg: &TrainConfig,
    teacher: SegmentationNetwork<F>,
    data: &DatasetSplit,
    run_dir: Option<&Path>,
) -> Result<RunOutput<F>> {
    require_mode(cfg, &["distill", "fsd_only", "softkd"])?;
    Session::new(cfg, Some(teacher))?.fit(data, run_dir)
}
