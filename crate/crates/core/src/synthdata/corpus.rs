use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{crop_patches, generate_image, quantize, split_parents, AngiogramSample, DatasetSplit, Provenance, SynthConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub parent_id: String,
    pub split: SplitTag,
    pub provenance: Provenance,
}

/// Sidecar index written next to the PNG files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub train_fraction: f64,
    pub generator: SynthConfig,
    pub n_parents: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, split: SplitTag) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub split: DatasetSplit,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_gray(path: &Path, w: usize, h: usize, data: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

/// Generates the corpus described by `cfg` under `root`:
/// `images/<id>.png`, `masks/<id>.png` and `manifest.json`.
pub fn write_corpus(root: &Path, cfg: &SynthConfig, train_fraction: f64) -> Result<Manifest> {
    cfg.validate()?;
    let (train, _) = split_parents(cfg.n_images, train_fraction, cfg.seed)?;
    let images = root.join("images");
    let masks = root.join("masks");
    mkdir(&images)?;
    mkdir(&masks)?;
    let per_parent: Vec<Vec<ManifestEntry>> = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let tag = if train.binary_search(&i).is_ok() {
                SplitTag::Train
            } else {
                SplitTag::Test
            };
            let parent = generate_image(cfg, i)?;
            let mut entries = Vec::new();
            for p in crop_patches(&parent, cfg.patch_size, cfg.grid)? {
                let img: Vec<u8> = p.image.iter().map(|&v| quantize(v)).collect();
                let msk: Vec<u8> = p.mask.iter().map(|&m| m * 255).collect();
                save_gray(&images.join(format!("{}.png", p.id)), p.width, p.height, img)?;
                save_gray(&masks.join(format!("{}.png", p.id)), p.width, p.height, msk)?;
                entries.push(ManifestEntry {
                    id: p.id,
                    parent_id: p.parent_id,
                    split: tag,
                    provenance: p.provenance,
                });
            }
            Ok(entries)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        seed: cfg.seed,
        train_fraction,
        generator: cfg.clone(),
        n_parents: cfg.n_images,
        samples: per_parent.into_iter().flatten().collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&root.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// Reads a corpus written by [`write_corpus`], normalizing intensities to `[0,1]`.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let mpath = root.join("manifest.json");
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).map_err(|e| Error::Data(format!("{}: {e}", mpath.display())))?;
    let samples: Vec<(SplitTag, AngiogramSample)> = manifest
        .samples
        .par_iter()
        .map(|e| {
            let img = load_gray(&root.join("images").join(format!("{}.png", e.id)))?;
            let msk = load_gray(&root.join("masks").join(format!("{}.png", e.id)))?;
            if img.dimensions() != msk.dimensions() {
                return Err(Error::Data(format!("{}: image and mask sizes differ", e.id)));
            }
            let (w, h) = img.dimensions();
            let sample = AngiogramSample {
                id: e.id.clone(),
                parent_id: e.parent_id.clone(),
                height: h as usize,
                width: w as usize,
                image: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
                mask: msk.as_raw().iter().map(|&v| u8::from(v > 127)).collect(),
                provenance: e.provenance.clone(),
            };
            Ok((e.split, sample))
        })
        .collect::<Result<_>>()?;
    let mut split = DatasetSplit::default();
    for (tag, s) in samples {
        match tag {
            SplitTag::Train => split.train.push(s),
            SplitTag::Test => split.test.push(s),
        }
    }
    Ok(Corpus { manifest, split })
}
