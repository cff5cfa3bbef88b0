use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{generate_image, AngiogramSample, DatasetSplit, SynthConfig};
use crate::{Error, Result};

/// Top-left offsets of `n` windows of length `patch` spanning `extent`,
/// first at 0 and last flush with the border.
pub(crate) fn offsets(extent: usize, patch: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![0];
    }
    (0..n).map(|i| i * (extent - patch) / (n - 1)).collect()
}

/// Cuts `sample` into a `grid = (rows, cols)` of `patch`×`patch` tiles whose
/// union covers the image. Tiles overlap when the grid over-covers.
pub fn crop_patches(sample: &AngiogramSample, patch: usize, grid: (usize, usize)) -> Result<Vec<AngiogramSample>> {
    let (rows, cols) = grid;
    if patch == 0 || rows == 0 || cols == 0 {
        return Err(Error::Argument("patch size and grid must be >= 1".into()));
    }
    if patch > sample.height || patch > sample.width {
        return Err(Error::Argument(format!(
            "patch {patch} larger than image {}x{}",
            sample.height, sample.width
        )));
    }
    if rows * patch < sample.height || cols * patch < sample.width {
        return Err(Error::Argument(format!(
            "{rows}x{cols} grid of {patch} px patches cannot cover {}x{}",
            sample.height, sample.width
        )));
    }
    let ys = offsets(sample.height, patch, rows);
    let xs = offsets(sample.width, patch, cols);
    let mut out = Vec::with_capacity(rows * cols);
    for (r, &y0) in ys.iter().enumerate() {
        for (c, &x0) in xs.iter().enumerate() {
            let mut image = Vec::with_capacity(patch * patch);
            let mut mask = Vec::with_capacity(patch * patch);
            for y in y0..y0 + patch {
                let row = y * sample.width;
                image.extend_from_slice(&sample.image[row + x0..row + x0 + patch]);
                mask.extend_from_slice(&sample.mask[row + x0..row + x0 + patch]);
            }
            let mut provenance = sample.provenance.clone();
            provenance.grid_pos = Some((r, c));
            out.push(AngiogramSample {
                id: format!("{}_r{r}c{c}", sample.parent_id),
                parent_id: sample.parent_id.clone(),
                height: patch,
                width: patch,
                image,
                mask,
                provenance,
            });
        }
    }
    Ok(out)
}

/// The dihedral transforms of the square that keep masks exactly binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::FlipH,
        Transform::FlipV,
        Transform::Rot90,
        Transform::Rot180,
        Transform::Rot270,
    ];

    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }

    /// Source index for output pixel `(y, x)` of a transformed `h`×`w` grid.
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> usize {
        let (sy, sx) = match self {
            Transform::Identity => (y, x),
            Transform::FlipH => (y, w - 1 - x),
            Transform::FlipV => (h - 1 - y, x),
            // output is w×h for quarter turns
            Transform::Rot90 => (x, w - 1 - y),
            Transform::Rot180 => (h - 1 - y, w - 1 - x),
            Transform::Rot270 => (h - 1 - x, y),
        };
        sy * w + sx
    }

    fn swaps_axes(self) -> bool {
        matches!(self, Transform::Rot90 | Transform::Rot270)
    }

    pub fn apply_grid<T: Copy>(self, src: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(src.len());
        for y in 0..oh {
            for x in 0..ow {
                out.push(src[self.source(y, x, h, w)]);
            }
        }
        out
    }

    pub fn apply(self, sample: &AngiogramSample) -> AngiogramSample {
        let (h, w) = (sample.height, sample.width);
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        AngiogramSample {
            image: self.apply_grid(&sample.image, h, w),
            mask: self.apply_grid(&sample.mask, h, w),
            height: oh,
            width: ow,
            ..sample.clone()
        }
    }
}

/// Applies the transform selected by `seed` to image and mask alike.
pub fn augment(sample: &AngiogramSample, seed: u64) -> AngiogramSample {
    Transform::from_seed(seed).apply(sample)
}

/// Shuffles parent indices `0..n` by `seed` and splits them.
pub fn split_parents(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!("train_fraction {train_fraction} must lie in (0,1)")));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "{n} parent images cannot be split at fraction {train_fraction} with both sides non-empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let test = order.split_off(n_train);
    let mut train = order;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    Ok((train, test))
}

/// Generates every parent, tiles it, and assigns whole parents to one side.
pub fn build_split(cfg: &SynthConfig, train_fraction: f64) -> Result<DatasetSplit> {
    cfg.validate()?;
    let (train_idx, test_idx) = split_parents(cfg.n_images, train_fraction, cfg.seed)?;
    let tiles = |idx: &[usize]| -> Result<Vec<AngiogramSample>> {
        let per: Vec<Vec<AngiogramSample>> = idx
            .par_iter()
            .map(|&i| crop_patches(&generate_image(cfg, i)?, cfg.patch_size, cfg.grid))
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    };
    Ok(DatasetSplit {
        train: tiles(&train_idx)?,
        test: tiles(&test_idx)?,
    })
}
