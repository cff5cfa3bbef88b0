use vesseldistill_autograd::{Float, Graph, Var};

use super::{LossWeights, NormMode, Similarity};
use crate::{Error, Result};

/// Probability clamp used by [`ce_loss`].
pub const CE_EPS: f64 = 1e-7;

fn same_shape<F: Float>(g: &Graph<F>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// `‖a − b‖₁`, averaged over entries unless `norm` is [`NormMode::Raw`].
pub fn reconstruction_loss<F: Float>(g: &mut Graph<F>, fea_in: Var, fea_out: Var, norm: NormMode) -> Result<Var> {
    same_shape(g, fea_in, fea_out, "reconstruction_loss")?;
    let d = g.sub(fea_in, fea_out)?;
    let d = g.abs(d)?;
    Ok(match norm {
        NormMode::Mean => g.mean_all(d)?,
        NormMode::Raw => g.sum_all(d)?,
    })
}

fn check_nonzero<F: Float>(g: &Graph<F>, v: Var, tap: usize, side: &str) -> Result<()> {
    if g.is_symbolic() {
        return Ok(());
    }
    let d = *g.shape(v).last().unwrap_or(&1);
    for (r, row) in g.value(v).data().chunks(d.max(1)).enumerate() {
        if row.iter().all(|&x| x == F::zero()) {
            return Err(Error::Degenerate {
                tap,
                what: format!("{side} latent of sample {r} has zero norm"),
            });
        }
    }
    Ok(())
}

/// Row-wise similarity of latents `le, ld: [N, D]`, giving `[N]`.
///
/// [`Similarity::Outer`] forms `le leᵀ` and `ld ldᵀ`, flattens both and takes
/// their cosine, which equals `cos(le, ld)²`. `tap` labels the error raised
/// for an all-zero latent.
pub fn latent_similarity<F: Float>(
    g: &mut Graph<F>,
    le: Var,
    ld: Var,
    similarity: Similarity,
    tap: usize,
) -> Result<Var> {
    same_shape(g, le, ld, "latent_similarity")?;
    if g.shape(le).len() != 2 {
        return Err(Error::Shape(format!("latents must be [N, D], got {:?}", g.shape(le))));
    }
    check_nonzero(g, le, tap, "encoder")?;
    check_nonzero(g, ld, tap, "decoder")?;
    match similarity {
        Similarity::Outer => Ok(g.outer_cosine(le, ld)?),
        Similarity::Direct => {
            let p = g.mul(le, ld)?;
            let dot = g.sum_rows(p)?;
            let norm = |g: &mut Graph<F>, v: Var| -> Result<Var> {
                let s = g.square(v)?;
                let s = g.sum_rows(s)?;
                Ok(g.sqrt(s)?)
            };
            let na = norm(g, le)?;
            let nb = norm(g, ld)?;
            let den = g.mul(na, nb)?;
            Ok(g.div(dot, den)?)
        }
    }
}

fn squared_gap<F: Float>(g: &mut Graph<F>, a: Var, b: Var, norm: NormMode, what: &str) -> Result<Var> {
    same_shape(g, a, b, what)?;
    let d = g.sub(a, b)?;
    let d = g.square(d)?;
    Ok(match norm {
        NormMode::Mean => g.mean_all(d)?,
        NormMode::Raw => {
            let s = g.sum_all(d)?;
            g.sqrt(s)?
        }
    })
}

/// Mean squared difference between teacher and student similarities.
pub fn fsd_loss<F: Float>(g: &mut Graph<F>, cos_tea: Var, cos_stu: Var, norm: NormMode) -> Result<Var> {
    squared_gap(g, cos_tea, cos_stu, norm, "fsd_loss")
}

/// Per-sample distance `sqrt(Σ (pred − gt)²)` over all pixels: `[N, ...] -> [N]`.
pub fn euclidean_similarity<F: Float>(g: &mut Graph<F>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, pred, gt, "euclidean_similarity")?;
    let d = g.sub(pred, gt)?;
    let d = g.square(d)?;
    let s = g.sum_rows(d)?;
    Ok(g.sqrt(s)?)
}

/// Mean over the batch of squared per-sample distance differences.
pub fn asd_loss<F: Float>(g: &mut Graph<F>, euc_tea: Var, euc_stu: Var, norm: NormMode) -> Result<Var> {
    squared_gap(g, euc_tea, euc_stu, norm, "asd_loss")
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1 − ε]`.
pub fn ce_loss<F: Float>(g: &mut Graph<F>, pred: Var, gt: Var) -> Result<Var> {
    same_shape(g, pred, gt, "ce_loss")?;
    let eps = F::of(CE_EPS);
    let p = g.clamp(pred, eps, F::one() - eps)?;
    let q = g.affine(p, -F::one(), F::one())?;
    let lp = g.ln(p)?;
    let lq = g.ln(q)?;
    let ny = g.affine(gt, -F::one(), F::one())?;
    let a = g.mul(gt, lp)?;
    let b = g.mul(ny, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean_all(s)?;
    Ok(g.affine(m, -F::one(), F::zero())?)
}

fn check_finite(parts: [(&str, f64); 3]) -> Result<()> {
    for (name, v) in parts {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} loss is {v}")));
        }
    }
    Ok(())
}

/// `w_ce·ce + w_fsd·fsd + w_asd·asd` on scalar nodes.
pub fn total_loss<F: Float>(g: &mut Graph<F>, ce: Var, fsd: Var, asd: Var, w: &LossWeights) -> Result<Var> {
    let val = |g: &Graph<F>, v: Var| if g.is_symbolic() { 0.0 } else { g.value(v).item().as_f64() };
    check_finite([("ce", val(g, ce)), ("fsd", val(g, fsd)), ("asd", val(g, asd))])?;
    let a = g.affine(ce, F::of(w.w_ce), F::zero())?;
    let b = g.affine(fsd, F::of(w.w_fsd), F::zero())?;
    let c = g.affine(asd, F::of(w.w_asd), F::zero())?;
    let s = g.add(a, b)?;
    Ok(g.add(s, c)?)
}

/// Scalar form of [`total_loss`].
pub fn total_loss_value(ce: f64, fsd: f64, asd: f64, w: &LossWeights) -> Result<f64> {
    check_finite([("ce", ce), ("fsd", fsd), ("asd", asd)])?;
    Ok(w.w_ce * ce + w.w_fsd * fsd + w.w_asd * asd)
}

/// Temperature-softened binary KL divergence `KL(σ(t/T) ‖ σ(s/T))`,
/// averaged over pixels and scaled by `T²`. `teacher_logits` must be constant.
pub fn softkd_loss<F: Float>(
    g: &mut Graph<F>,
    student_logits: Var,
    teacher_logits: Var,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    same_shape(g, student_logits, teacher_logits, "softkd_loss")?;
    let inv = F::of(1.0 / temperature);
    let zt = g.affine(teacher_logits, inv, F::zero())?;
    let zs = g.affine(student_logits, inv, F::zero())?;
    let pt = g.sigmoid(zt)?;
    let qt = g.affine(pt, -F::one(), F::one())?;
    // p·(−ln σ(z)) + (1−p)·(−ln(1−σ(z))), evaluated identically for both sides
    let cross = |g: &mut Graph<F>, z: Var| -> Result<Var> {
        let nz = g.affine(z, -F::one(), F::zero())?;
        let a = g.softplus(nz)?;
        let b = g.softplus(z)?;
        let a = g.mul(pt, a)?;
        let b = g.mul(qt, b)?;
        Ok(g.add(a, b)?)
    };
    let hs = cross(g, zs)?;
    let ht = cross(g, zt)?;
    let kl = g.sub(hs, ht)?;
    let kl = g.relu(kl)?;
    let m = g.mean_all(kl)?;
    Ok(g.affine(m, F::of(temperature * temperature), F::zero())?)
}
