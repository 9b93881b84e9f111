//! Run configuration as flat `key=value` text.
//!
//! Recognized keys (defaults in parentheses):
//!
//! | key | meaning |
//! |-----|---------|
//! | `grid.lo`, `grid.hi` | scene cube bounds (-1, 1) |
//! | `grid.resolution` | quantization grid resolution R (256) |
//! | `encoding.pos_freqs` | position frequency count (6) |
//! | `encoding.dir_freqs` | direction frequency count (4) |
//! | `encoding.mode` / `render.mode` | `continuous`, `discrete`, `mixed_pe_continuous`, `mixed_coord_continuous` (discrete) |
//! | `render.samples_per_ray` | stratified samples per ray (64) |
//! | `render.background` | background color `r,g,b` (1,1,1) |
//! | `render.compositing` | `occupancy` or `density` (occupancy) |
//! | `train.iterations` | optimizer steps (5000) |
//! | `train.batch_rays` | rays per step (512) |
//! | `train.learning_rate` | Adam step size (1e-3) |
//! | `train.adam_beta1`, `train.adam_beta2`, `train.adam_eps` | (0.9, 0.999, 1e-8) |
//! | `train.seed` | master seed (1) |
//! | `train.log_every` | log interval in steps (500) |
//! | `train.checkpoint_every` | checkpoint interval in steps, 0 = only at the end (0) |
//! | `train.holdout_view` | view excluded from training and used for PSNR, or `none` (last view) |
//! | `net.geometry_layers`, `net.geometry_width` | geometry MLP hidden layers (4, 64) |
//! | `net.feature_dim` | geometry feature size (32) |
//! | `net.color_layers`, `net.color_width` | color MLP hidden layers (2, 64) |
//! | `net.init_prior` | initial occupancy (0.12) |
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::encoding::{CoordMode, InputEncoder};
use crate::error::{Error, Result};
use crate::field::{Architecture, GeometryKind};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holdout {
    None,
    /// The last view of the dataset.
    Last,
    View(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grid: GridSpec,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub mode: CoordMode,
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    pub compositing: GeometryKind,
    pub iterations: usize,
    pub batch_rays: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub holdout: Holdout,
    pub geometry_layers: usize,
    pub geometry_width: usize,
    pub feature_dim: usize,
    pub color_layers: usize,
    pub color_width: usize,
    pub init_prior: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                lo: -1.0,
                hi: 1.0,
                resolution: 256,
            },
            pos_freqs: 6,
            dir_freqs: 4,
            mode: CoordMode::Discrete,
            samples_per_ray: 64,
            background: [1.0, 1.0, 1.0],
            compositing: GeometryKind::Occupancy,
            iterations: 5000,
            batch_rays: 512,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            log_every: 500,
            checkpoint_every: 0,
            holdout: Holdout::Last,
            geometry_layers: 4,
            geometry_width: 64,
            feature_dim: 32,
            color_layers: 2,
            color_width: 64,
            init_prior: 0.12,
        }
    }
}

pub const KEYS: &[&str] = &[
    "grid.lo",
    "grid.hi",
    "grid.resolution",
    "encoding.pos_freqs",
    "encoding.dir_freqs",
    "encoding.mode",
    "render.mode",
    "render.samples_per_ray",
    "render.background",
    "render.compositing",
    "train.iterations",
    "train.batch_rays",
    "train.learning_rate",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.seed",
    "train.log_every",
    "train.checkpoint_every",
    "train.holdout_view",
    "net.geometry_layers",
    "net.geometry_width",
    "net.feature_dim",
    "net.color_layers",
    "net.color_width",
    "net.init_prior",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_color(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|v| parse(key, v))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [r, g, b] => Ok([*r, *g, *b]),
        _ => Err(Error::Config(format!("key '{key}': expected r,g,b, got '{value}'"))),
    }
}

impl TrainConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "grid.lo" => self.grid.lo = parse(key, v)?,
            "grid.hi" => self.grid.hi = parse(key, v)?,
            "grid.resolution" => self.grid.resolution = parse(key, v)?,
            "encoding.pos_freqs" => self.pos_freqs = parse(key, v)?,
            "encoding.dir_freqs" => self.dir_freqs = parse(key, v)?,
            "encoding.mode" | "render.mode" => {
                self.mode = v
                    .parse()
                    .map_err(|e| Error::Config(format!("key '{key}': {e}")))?
            }
            "render.samples_per_ray" => self.samples_per_ray = parse(key, v)?,
            "render.background" => self.background = parse_color(key, v)?,
            "render.compositing" => {
                self.compositing = v
                    .parse()
                    .map_err(|e| Error::Config(format!("key '{key}': {e}")))?
            }
            "train.iterations" => self.iterations = parse(key, v)?,
            "train.batch_rays" => self.batch_rays = parse(key, v)?,
            "train.learning_rate" => self.learning_rate = parse(key, v)?,
            "train.adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "train.adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "train.adam_eps" => self.adam_eps = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.log_every" => self.log_every = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.holdout_view" => {
                self.holdout = match v {
                    "none" => Holdout::None,
                    "last" => Holdout::Last,
                    n => Holdout::View(parse(key, n)?),
                }
            }
            "net.geometry_layers" => self.geometry_layers = parse(key, v)?,
            "net.geometry_width" => self.geometry_width = parse(key, v)?,
            "net.feature_dim" => self.feature_dim = parse(key, v)?,
            "net.color_layers" => self.color_layers = parse(key, v)?,
            "net.color_width" => self.color_width = parse(key, v)?,
            "net.init_prior" => self.init_prior = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every setting of a config file. `encoding.mode` and
    /// `render.mode` may both appear only if they agree.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut mode_seen: Option<(String, String)> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "encoding.mode" || key == "render.mode" {
                if let Some((k, prev)) = &mode_seen {
                    if prev != value {
                        return Err(Error::Config(format!(
                            "key '{key}': '{value}' conflicts with {k}={prev}"
                        )));
                    }
                }
                mode_seen = Some((key.to_string(), value.to_string()));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let positive = [
            ("encoding.pos_freqs", self.pos_freqs),
            ("encoding.dir_freqs", self.dir_freqs),
            ("train.batch_rays", self.batch_rays),
            ("train.log_every", self.log_every),
            ("net.geometry_layers", self.geometry_layers),
            ("net.geometry_width", self.geometry_width),
            ("net.color_layers", self.color_layers),
            ("net.color_width", self.color_width),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("key '{key}' must be positive")));
            }
        }
        if self.samples_per_ray < 2 {
            return Err(Error::Config("key 'render.samples_per_ray' must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("key 'train.learning_rate' must be positive".into()));
        }
        for (key, b) in [("train.adam_beta1", self.adam_beta1), ("train.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("key '{key}' must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("key 'train.adam_eps' must be positive".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("key 'render.background' must lie in [0, 1]".into()));
        }
        let prior_ok = match self.compositing {
            GeometryKind::Occupancy => self.init_prior > 0.0 && self.init_prior < 1.0,
            GeometryKind::Density => self.init_prior > 0.0 && self.init_prior.is_finite(),
        };
        if !prior_ok {
            return Err(Error::Config("key 'net.init_prior' out of range".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Result<InputEncoder> {
        InputEncoder::new(self.pos_freqs, self.dir_freqs, self.grid, self.mode)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let enc = self.encoder()?;
        let arch = Architecture {
            position_inputs: enc.position_len(),
            direction_inputs: enc.direction_len(),
            geometry_layers: self.geometry_layers,
            geometry_width: self.geometry_width,
            feature_dim: self.feature_dim,
            color_layers: self.color_layers,
            color_width: self.color_width,
            geometry: self.compositing,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Every key with its effective value, one per line, in [`KEYS`] order
    /// (`render.mode` is omitted in favor of `encoding.mode`).
    pub fn to_text(&self) -> String {
        let holdout = match self.holdout {
            Holdout::None => "none".to_string(),
            Holdout::Last => "last".to_string(),
            Holdout::View(v) => v.to_string(),
        };
        let bg = self.background;
        let mut s = String::new();
        let lines: [(&str, String); 25] = [
            ("grid.lo", self.grid.lo.to_string()),
            ("grid.hi", self.grid.hi.to_string()),
            ("grid.resolution", self.grid.resolution.to_string()),
            ("encoding.pos_freqs", self.pos_freqs.to_string()),
            ("encoding.dir_freqs", self.dir_freqs.to_string()),
            ("encoding.mode", self.mode.to_string()),
            ("render.samples_per_ray", self.samples_per_ray.to_string()),
            ("render.background", format!("{},{},{}", bg[0], bg[1], bg[2])),
            ("render.compositing", self.compositing.to_string()),
            ("train.iterations", self.iterations.to_string()),
            ("train.batch_rays", self.batch_rays.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.adam_beta1", self.adam_beta1.to_string()),
            ("train.adam_beta2", self.adam_beta2.to_string()),
            ("train.adam_eps", self.adam_eps.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.log_every", self.log_every.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.holdout_view", holdout),
            ("net.geometry_layers", self.geometry_layers.to_string()),
            ("net.geometry_width", self.geometry_width.to_string()),
            ("net.feature_dim", self.feature_dim.to_string()),
            ("net.color_layers", self.color_layers.to_string()),
            ("net.color_width", self.color_width.to_string()),
            ("net.init_prior", self.init_prior.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.mode = CoordMode::MixedCoordContinuous;
        cfg.grid.resolution = 1024;
        cfg.background = [0.25, 0.5, 0.0];
        cfg.holdout = Holdout::View(3);
        cfg.learning_rate = 5e-4;
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_documented_key_is_settable() {
        let cfg = TrainConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(KEYS.contains(&k));
            TrainConfig::default().set(k, v).unwrap();
        }
        TrainConfig::default().set("render.mode", "continuous").unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let err = TrainConfig::from_text("train.iterations=10\ntrain.warmup=3\n").unwrap_err();
        assert!(err.to_string().contains("train.warmup"));
        let err = TrainConfig::from_text("train.batch_rays=lots").unwrap_err();
        assert!(err.to_string().contains("train.batch_rays"));
        let err = TrainConfig::from_text("encoding.mode=discrete\nrender.mode=continuous").unwrap_err();
        assert!(err.to_string().contains("render.mode"));
        assert!(TrainConfig::from_text("no equals sign").is_err());
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = TrainConfig::from_text("# comment\n\ngrid.resolution = 16\n").unwrap();
        assert_eq!(cfg.grid.resolution, 16);
    }
}
