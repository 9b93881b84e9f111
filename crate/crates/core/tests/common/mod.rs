#![allow(dead_code)]

use cqfield::config::TrainConfig;
use cqfield::grid::GridSpec;
use cqfield::scene::{Dataset, RigSpec, SceneDef};

/// Default sphere scene: 16 views of 64x64 pixels.
pub fn sphere_dataset(resolution: u64) -> Dataset {
    let grid = GridSpec::new(-1.0, 1.0, resolution).unwrap();
    Dataset::synthesize(SceneDef::default(), RigSpec::default().build().unwrap(), grid).unwrap()
}

/// Training setup sized for a single CPU core: 256 rays of 32 samples per
/// step and 32-wide hidden layers. Everything else keeps the defaults.
pub fn desk_config(resolution: u64, seed: u64, iterations: usize) -> TrainConfig {
    TrainConfig {
        grid: GridSpec::new(-1.0, 1.0, resolution).unwrap(),
        batch_rays: 256,
        samples_per_ray: 32,
        geometry_width: 32,
        color_width: 32,
        iterations,
        log_every: iterations.max(1),
        seed,
        ..TrainConfig::default()
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
