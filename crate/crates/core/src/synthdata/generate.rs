use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{parent_id, AngiogramSample, Provenance, SynthConfig};
use crate::{Error, Result};

/// Centerline polylines with per-point radius.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VesselTree {
    pub branches: Vec<Vec<(f64, f64, f64)>>,
    pub generations: usize,
}

pub(crate) fn image_rng(cfg: &SynthConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..=r.1)
    }
}

struct Grower<'a> {
    rng: &'a mut ChaCha8Rng,
    size: f64,
    min_radius: f64,
    max_gen: usize,
    out: Vec<Vec<(f64, f64, f64)>>,
}

impl Grower<'_> {
    fn grow(&mut self, start: (f64, f64), heading: f64, radius: f64, length: f64, gen: usize) {
        let step = 1.5;
        let n = (length / step).ceil().max(2.0) as usize;
        let mut pts = Vec::with_capacity(n);
        let (mut x, mut y) = start;
        let mut h = heading;
        let mut drift = 0.0;
        let turn = Normal::new(0.0, 0.012).expect("valid");
        for i in 0..n {
            let t = i as f64 / n as f64;
            let r = (radius * (1.0 - 0.4 * t)).max(self.min_radius);
            pts.push((x, y, r));
            drift = 0.85 * drift + turn.sample(self.rng);
            h += drift;
            x += step * h.cos();
            y += step * h.sin();
            let margin = 2.0 * radius + 2.0;
            if x < -margin || y < -margin || x > self.size + margin || y > self.size + margin {
                break;
            }
        }
        let m = pts.len();
        let branch_points: Vec<usize> = if gen + 1 < self.max_gen && m > 8 {
            let k = self.rng.random_range(1..=2usize);
            (0..k).map(|_| self.rng.random_range(m / 5..=(4 * m) / 5)).collect()
        } else {
            Vec::new()
        };
        let mut headings = Vec::with_capacity(m);
        for i in 0..m {
            let j = (i + 1).min(m - 1);
            let k = i.saturating_sub(1);
            headings.push((pts[j].1 - pts[k].1).atan2(pts[j].0 - pts[k].0));
        }
        self.out.push(pts.clone());
        for bp in branch_points {
            let (bx, by, br) = pts[bp];
            let side = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let angle = headings[bp] + side * self.rng.random_range(0.45..1.05);
            let child_r = (br * self.rng.random_range(0.6..0.8)).max(self.min_radius);
            let child_len = length * self.rng.random_range(0.45..0.7);
            self.grow((bx, by), angle, child_r, child_len, gen + 1);
        }
    }
}

/// Draws a forest of two or three branching trees from `rng`.
pub fn generate_tree(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> VesselTree {
    let size = cfg.canvas_size as f64;
    let generations = rng.random_range(cfg.branch_count_range.0..=cfg.branch_count_range.1);
    let roots = rng.random_range(2..=3usize);
    let (w_lo, w_hi) = cfg.vessel_width_range;
    let mut g = Grower {
        rng,
        size,
        min_radius: w_lo / 2.0,
        max_gen: generations,
        out: Vec::new(),
    };
    for _ in 0..roots {
        let side = g.rng.random_range(0..4u8);
        let u = g.rng.random_range(0.15..0.85) * size;
        let start = match side {
            0 => (u, 0.0),
            1 => (size, u),
            2 => (u, size),
            _ => (0.0, u),
        };
        let to_center = (size / 2.0 - start.1).atan2(size / 2.0 - start.0);
        let heading = to_center + g.rng.random_range(-0.5..0.5);
        let radius = uniform(g.rng, ((w_lo + w_hi) / 2.0, w_hi)) / 2.0;
        let length = size * g.rng.random_range(0.6..1.0);
        g.grow(start, heading, radius, length, 0);
    }
    VesselTree {
        branches: g.out,
        generations,
    }
}

/// Anti-aliased coverage in `[0,1]` of the union of all tapered strokes.
/// A pixel is inside a stroke when its center lies within the local radius.
pub fn rasterize(tree: &VesselTree, size: usize) -> Vec<f64> {
    let mut cov = vec![0.0f64; size * size];
    for branch in &tree.branches {
        for w in branch.windows(2) {
            stroke(&mut cov, size, w[0], w[1]);
        }
        if let [only] = branch.as_slice() {
            stroke(&mut cov, size, *only, *only);
        }
    }
    cov
}

fn stroke(cov: &mut [f64], size: usize, a: (f64, f64, f64), b: (f64, f64, f64)) {
    let reach = a.2.max(b.2) + 1.0;
    let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + reach).ceil().min(size as f64) as usize;
    let y1 = (a.1.max(b.1) + reach).ceil().min(size as f64) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for py in y0..y1 {
        for px in x0..x1 {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
            let d = ((cx - qx).powi(2) + (cy - qy).powi(2)).sqrt();
            let r = a.2 + t * (b.2 - a.2);
            let c = (r - d + 0.5).clamp(0.0, 1.0);
            let slot = &mut cov[py * size + px];
            if c > *slot {
                *slot = c;
            }
        }
    }
}

/// Separable Gaussian blur with clamped borders; `sigma == 0` is the identity.
pub fn gaussian_blur(src: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let last = size as isize - 1;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..size {
        let row = &src[y * size..(y + 1) * size];
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - radius).clamp(0, last) as usize;
                acc += w * row[xx];
            }
            tmp[y * size + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - radius).clamp(0, last) as usize;
                acc += w * tmp[yy * size + x];
            }
            out[y * size + x] = acc;
        }
    }
    out
}

/// Smooth background field in `[-1,1]`: a few low-frequency plane waves
/// plus broad faint bands standing in for overlapping anatomy.
fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.5..3.0) * 2.0 * PI / s;
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..1.0);
            (theta.cos() * freq, theta.sin() * freq, phase, amp)
        })
        .collect();
    let bands: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let offset = rng.random_range(0.0..s);
            let width = rng.random_range(0.02..0.06) * s;
            let amp = rng.random_range(0.5..1.0);
            (theta, offset, width, amp)
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum::<f64>() + bands.iter().map(|b| b.3).sum::<f64>();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = 0.0;
            for &(kx, ky, phase, amp) in &waves {
                v += amp * (kx * fx + ky * fy + phase).cos();
            }
            for &(theta, offset, width, amp) in &bands {
                let d = fx * theta.cos() + fy * theta.sin() - offset;
                v -= amp * (-(d * d) / (2.0 * width * width)).exp();
            }
            out[y * size + x] = v / norm;
        }
    }
    out
}

/// Generates parent image `index`: dark tapered vessels on a bright
/// background, blurred, then (if `clutter_level > 0`) shaded by a smooth
/// background field and pixel noise.
pub fn generate_image(cfg: &SynthConfig, index: usize) -> Result<AngiogramSample> {
    cfg.validate()?;
    if index >= cfg.n_images {
        return Err(Error::Argument(format!("image index {index} >= n_images {}", cfg.n_images)));
    }
    let size = cfg.canvas_size;
    let mut rng = image_rng(cfg, index);
    let tree = generate_tree(cfg, &mut rng);
    let contrast = uniform(&mut rng, cfg.contrast_range);
    let sigma = uniform(&mut rng, cfg.blur_sigma_range);
    let cov = rasterize(&tree, size);
    let mask: Vec<u8> = cov.iter().map(|&c| u8::from(c >= 0.5)).collect();
    let rendered: Vec<f64> = cov.iter().map(|&c| 1.0 - contrast * c).collect();
    let mut image = gaussian_blur(&rendered, size, sigma);
    let c = cfg.clutter_level;
    if c > 0.0 {
        let field = background(&mut rng, size);
        let noise = Normal::new(0.0, 0.03 * c).expect("valid std");
        let gain = 1.0 - 0.3 * c.min(1.0);
        for (v, f) in image.iter_mut().zip(&field) {
            *v = *v * gain + 0.15 * c * f + noise.sample(&mut rng);
        }
    }
    Ok(AngiogramSample {
        id: parent_id(index),
        parent_id: parent_id(index),
        height: size,
        width: size,
        image: image.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        mask,
        provenance: Provenance {
            seed: cfg.seed,
            index,
            generations: tree.generations,
            contrast,
            blur_sigma: sigma,
            clutter_level: c,
            grid_pos: None,
        },
    })
}
