//! Seeded synthetic angiogram corpus and the patch-based ingestion protocol.
//!
//! Every sample is a pure function of `(SynthConfig, index)`; generation can
//! run in parallel without changing a single byte of output.

mod corpus;
mod generate;
mod patches;

use serde::{Deserialize, Serialize};

pub use corpus::{load_corpus, write_atomic, write_corpus, Corpus, Manifest, ManifestEntry, SplitTag};
pub use generate::{gaussian_blur, generate_image, generate_tree, rasterize, VesselTree};
pub use patches::{augment, build_split, crop_patches, split_parents, Transform};

use crate::{Error, Result};

/// Parameters drawn for one generated image, kept with every sample cut from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub index: usize,
    pub generations: usize,
    pub contrast: f64,
    pub blur_sigma: f64,
    pub clutter_level: f64,
    /// `(row, col)` inside the parent's patch grid, if this is a patch.
    pub grid_pos: Option<(usize, usize)>,
}

/// A grayscale image in `[0,1]` and its binary vessel mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AngiogramSample {
    pub id: String,
    pub parent_id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub provenance: Provenance,
}

impl AngiogramSample {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn foreground(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Checks the value-range, binarity and shape invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.image.len() != n || self.mask.len() != n {
            return Err(Error::Data(format!(
                "{}: image/mask lengths {}/{} do not match {}x{}",
                self.id,
                self.image.len(),
                self.mask.len(),
                self.height,
                self.width
            )));
        }
        if let Some(v) = self.image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("{}: intensity {v} outside [0,1]", self.id)));
        }
        if let Some(m) = self.mask.iter().find(|&&m| m > 1) {
            return Err(Error::Data(format!("{}: mask value {m} is not binary", self.id)));
        }
        Ok(())
    }

    /// Rounds intensities to the 8-bit levels used on disk.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.image {
            *v = quantize(*v) as f32 / 255.0;
        }
        self
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<AngiogramSample>,
    pub test: Vec<AngiogramSample>,
}

/// Generator and tiling parameters. Ranges are inclusive `(lo, hi)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub canvas_size: usize,
    pub n_images: usize,
    /// Branching generations per tree.
    pub branch_count_range: (usize, usize),
    /// Vessel diameters in pixels.
    pub vessel_width_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub clutter_level: f64,
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma_range: (f64, f64),
    pub patch_size: usize,
    /// Patch grid `(rows, cols)` per image.
    pub grid: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            canvas_size: 992,
            n_images: 240,
            branch_count_range: (2, 5),
            vessel_width_range: (3.0, 12.0),
            contrast_range: (0.25, 0.6),
            clutter_level: 1.0,
            blur_sigma_range: (1.0, 2.0),
            patch_size: 256,
            grid: (4, 4),
        }
    }
}

/// 3200 / 3840 of the parents go to training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 5.0 / 6.0;

impl SynthConfig {
    /// Small corpus for CPU experiments: 128 px canvases cut into 2×2 grids of 64 px.
    pub fn desk(seed: u64, n_images: usize) -> Self {
        Self {
            seed,
            canvas_size: 128,
            n_images,
            vessel_width_range: (1.5, 4.0),
            patch_size: 64,
            grid: (2, 2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn range<T: PartialOrd + std::fmt::Debug>(name: &str, r: (T, T)) -> Result<()> {
            if r.0 > r.1 {
                return Err(Error::Config(format!("{name} {r:?} is empty")));
            }
            Ok(())
        }
        range("branch_count_range", self.branch_count_range)?;
        range("vessel_width_range", self.vessel_width_range)?;
        range("contrast_range", self.contrast_range)?;
        range("blur_sigma_range", self.blur_sigma_range)?;
        if self.branch_count_range.0 < 1 {
            return Err(Error::Config("branch_count_range must start at >= 1".into()));
        }
        if !(self.vessel_width_range.0 >= 1.0) || !self.vessel_width_range.1.is_finite() {
            return Err(Error::Config(format!(
                "vessel widths must be >= 1 pixel, got {:?}",
                self.vessel_width_range
            )));
        }
        let (c0, c1) = self.contrast_range;
        if !(c0 > 0.0 && c1 <= 1.0) {
            return Err(Error::Config(format!("contrast_range {:?} must lie in (0,1]", self.contrast_range)));
        }
        if !(self.clutter_level >= 0.0) || !self.clutter_level.is_finite() {
            return Err(Error::Config(format!("clutter_level {} must be >= 0", self.clutter_level)));
        }
        if !(self.blur_sigma_range.0 >= 0.0) || !self.blur_sigma_range.1.is_finite() {
            return Err(Error::Config(format!("blur_sigma_range {:?} must be >= 0", self.blur_sigma_range)));
        }
        if self.canvas_size == 0 || self.n_images == 0 {
            return Err(Error::Config("canvas_size and n_images must be >= 1".into()));
        }
        if self.patch_size == 0 || self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::Config("patch_size and grid must be >= 1".into()));
        }
        Ok(())
    }

    pub fn patches_per_image(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

pub(crate) fn parent_id(index: usize) -> String {
    format!("img{index:05}")
}
