use vesseldistill::synthdata::{SynthConfig, DEFAULT_TRAIN_FRACTION};
use vesseldistill::{Error, Result};

/// Settings of `gen-data`, in the same `key = value` form as run configs.
#[derive(Debug, Clone, PartialEq)]
pub struct DataOptions {
    /// `full` or `desk`.
    pub preset: String,
    pub seed: u64,
    pub n_images: usize,
    pub train_fraction: f64,
    pub canvas_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub grid: Option<(usize, usize)>,
    pub clutter_level: Option<f64>,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self {
            preset: "full".into(),
            seed: 0,
            n_images: 240,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            canvas_size: None,
            patch_size: None,
            grid: None,
            clutter_level: None,
        }
    }
}

fn bad(key: &str, expected: &str, v: &str) -> Error {
    Error::Config(format!("field `{key}`: expected {expected}, got `{v}`"))
}

fn num<T: std::str::FromStr>(key: &str, expected: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, expected, v))
}

fn auto<T: std::str::FromStr>(key: &str, expected: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, expected, v).map(Some)
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), T::to_string)
}

impl DataOptions {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => match v {
                "full" | "desk" => self.preset = v.into(),
                _ => return Err(bad(key, "full|desk", v)),
            },
            "seed" => self.seed = num(key, "an unsigned integer", v)?,
            "n_images" => self.n_images = num(key, "an integer", v)?,
            "train_fraction" => self.train_fraction = num(key, "a number", v)?,
            "canvas_size" => self.canvas_size = auto(key, "an integer or `auto`", v)?,
            "patch_size" => self.patch_size = auto(key, "an integer or `auto`", v)?,
            "grid" => {
                self.grid = if v == "auto" {
                    None
                } else {
                    let (r, c) = v.split_once('x').ok_or_else(|| bad(key, "ROWSxCOLS or `auto`", v))?;
                    Some((num(key, "ROWSxCOLS", r)?, num(key, "ROWSxCOLS", c)?))
                }
            }
            "clutter_level" => self.clutter_level = auto(key, "a number or `auto`", v)?,
            _ => return Err(Error::Config(format!("unknown data key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let grid = self.grid.map(|(r, c)| format!("{r}x{c}"));
        [
            ("preset", self.preset.clone()),
            ("seed", self.seed.to_string()),
            ("n_images", self.n_images.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("canvas_size", show(&self.canvas_size)),
            ("patch_size", show(&self.patch_size)),
            ("grid", show(&grid)),
            ("clutter_level", show(&self.clutter_level)),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut cfg = if self.preset == "desk" {
            SynthConfig::desk(self.seed, self.n_images)
        } else {
            SynthConfig {
                seed: self.seed,
                n_images: self.n_images,
                ..SynthConfig::default()
            }
        };
        if let Some(v) = self.canvas_size {
            cfg.canvas_size = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.grid {
            cfg.grid = v;
        }
        if let Some(v) = self.clutter_level {
            cfg.clutter_level = v;
        }
        cfg
    }
}
