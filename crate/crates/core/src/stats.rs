//! Counting experiments over a fixed set of monitored rays: how many distinct
//! coordinates the network sees, and how often two views constrain the same
//! location.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VoxelIndex};
use crate::render::{sample_ray, Ray, SamplingStrategy};
use crate::scene::{CameraModel, Dataset, SceneDef};
use crate::train::{pixel_ray, slot_rng};
use crate::Vec3;

/// Stream ids at and above this value are reserved for instrumentation so
/// they never collide with training iterations.
const STATS_STREAM: u64 = 1 << 62;
const MONITOR_STREAM: u64 = u64::MAX;
const CHUNK: usize = 64;

/// Fixed list of `(view, x, y)` pixel rays chosen once per experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorSet {
    pub rays: Vec<(usize, u32, u32)>,
}

impl MonitorSet {
    pub fn new(dataset: &Dataset, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("monitor set size must be positive".into()));
        }
        let rays = (0..size)
            .map(|slot| {
                let mut rng = slot_rng(seed, MONITOR_STREAM, slot as u64);
                let view = rng.gen_range(0..dataset.cameras.len());
                let cam = &dataset.cameras[view];
                (view, rng.gen_range(0..cam.width), rng.gen_range(0..cam.height))
            })
            .collect();
        Ok(Self { rays })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsRow {
    pub iteration: usize,
    pub unique_continuous: u64,
    pub unique_discrete: u64,
    pub consistency_continuous: u64,
    pub consistency_discrete: u64,
}

/// Growing sets of observed coordinates and trigger totals.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    continuous: HashSet<[u64; 3]>,
    discrete: HashSet<VoxelIndex>,
    pub consistency_continuous: u64,
    pub consistency_discrete: u64,
}

fn bits(p: &Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

impl StatsAccumulator {
    /// Adds sampled points from surface-hitting rays to both coordinate sets.
    pub fn count_unique<'a>(&mut self, grid: &GridSpec, points: impl IntoIterator<Item = &'a Vec3>) {
        for p in points {
            self.continuous.insert(bits(p));
            self.discrete.insert(grid.voxel_of(p));
        }
    }

    pub fn unique_continuous(&self) -> u64 {
        self.continuous.len() as u64
    }

    pub fn unique_discrete(&self) -> u64 {
        self.discrete.len() as u64
    }

    pub fn row(&self, iteration: usize) -> StatsRow {
        StatsRow {
            iteration,
            unique_continuous: self.unique_continuous(),
            unique_discrete: self.unique_discrete(),
            consistency_continuous: self.consistency_continuous,
            consistency_discrete: self.consistency_discrete,
        }
    }
}

/// Camera with the smallest wrapped azimuth difference to `view`; ties
/// (within 1e-9 rad) go to the lower index.
pub fn neighbor_view(cameras: &[CameraModel], view: usize) -> Option<usize> {
    let az = cameras[view].azimuth();
    let diff = |k: usize| {
        let d = (cameras[k].azimuth() - az).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d)
    };
    let best = (0..cameras.len())
        .filter(|&k| k != view)
        .map(diff)
        .min_by(f64::total_cmp)?;
    (0..cameras.len()).find(|&k| k != view && diff(k) <= best + 1e-9)
}

/// Ray from `camera` through `point`, or `None` when the point projects outside
/// the image or is occluded.
pub fn probe_ray(scene: &SceneDef, camera: &CameraModel, grid: &GridSpec, point: &Vec3) -> Option<Ray> {
    let (u, v) = camera.project(point)?;
    if !camera.in_image(u, v) {
        return None;
    }
    let to = point - camera.position;
    let dist = to.norm();
    let dir = to / dist;
    let (t_hit, _) = scene.trace(&camera.position, &dir)?;
    if t_hit < dist - 1e-4 {
        return None;
    }
    Ray::through_cube(camera.position, dir, grid.lo, grid.hi)
}

/// Whether two sample sets trigger a shared constraint, as
/// `(continuous, discrete)`. Only samples with `|sdf| < interval / 2` count.
pub fn pair_triggers(
    scene: &SceneDef,
    grid: &GridSpec,
    a: &[Vec3],
    b: &[Vec3],
    threshold_frac: f64,
) -> (bool, bool) {
    let h = grid.interval();
    let on = |pts: &[Vec3]| -> Vec<Vec3> {
        pts.iter().filter(|p| scene.sdf(p).abs() < h / 2.0).copied().collect()
    };
    let (a, b) = (on(a), on(b));
    let limit = h * threshold_frac;
    let cont = a.iter().any(|p| b.iter().any(|q| (p - q).norm() < limit));
    let disc = a.iter().any(|p| {
        let v = grid.voxel_of(p);
        b.iter().any(|q| grid.voxel_of(q) == v)
    });
    (cont, disc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsConfig {
    pub iterations: usize,
    pub monitor_size: usize,
    pub samples_per_ray: usize,
    pub threshold_frac: f64,
    pub row_every: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            monitor_size: 1024,
            samples_per_ray: 64,
            threshold_frac: 1.0 / 16.0,
            row_every: 10,
            seed: 1,
        }
    }
}

/// Per-ray data that stays fixed over the experiment.
struct Monitored {
    ray: Ray,
    probe: Option<Ray>,
}

/// Counting experiment over one monitor set.
pub struct StatsRun<'a> {
    dataset: &'a Dataset,
    grid: GridSpec,
    config: StatsConfig,
    monitored: Vec<Monitored>,
    pub accumulator: StatsAccumulator,
}

impl<'a> StatsRun<'a> {
    pub fn new(dataset: &'a Dataset, grid: GridSpec, config: StatsConfig) -> Result<Self> {
        grid.validate()?;
        if config.samples_per_ray < 2 {
            return Err(Error::Config("stats need at least 2 samples per ray".into()));
        }
        if config.row_every == 0 {
            return Err(Error::Config("stats row interval must be positive".into()));
        }
        let monitor = MonitorSet::new(dataset, config.monitor_size, config.seed)?;
        let scene = &dataset.scene;
        let monitored = monitor
            .rays
            .iter()
            .filter_map(|&(view, x, y)| {
                let cam = &dataset.cameras[view];
                let (_, hit) = scene.trace(&cam.position, &cam.pixel_direction(x, y))?;
                let ray = pixel_ray(cam, &grid, x, y)?;
                let probe = neighbor_view(&dataset.cameras, view)
                    .and_then(|n| probe_ray(scene, &dataset.cameras[n], &grid, &hit));
                Some(Monitored { ray, probe })
            })
            .collect();
        Ok(Self {
            dataset,
            grid,
            config,
            monitored,
            accumulator: StatsAccumulator::default(),
        })
    }

    /// Number of monitored rays that hit the surface.
    pub fn hitting_rays(&self) -> usize {
        self.monitored.len()
    }

    /// Samples all monitored rays for one iteration and folds the results in.
    pub fn step(&mut self, iteration: usize) -> Result<()> {
        let n = self.monitored.len() as u64;
        let stream = STATS_STREAM + iteration as u64;
        let (spr, frac) = (self.config.samples_per_ray, self.config.threshold_frac);
        let (scene, grid, seed) = (&self.dataset.scene, &self.grid, self.config.seed);
        let parts: Vec<Vec<(Vec<Vec3>, bool, bool)>> = self
            .monitored
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        let slot = (c * CHUNK + k) as u64;
                        let mut rng = slot_rng(seed, stream, slot);
                        let a = sample_ray(&m.ray, spr, &mut rng, SamplingStrategy::Stratified)?.points;
                        let (cont, disc) = match &m.probe {
                            Some(probe) => {
                                let mut rng = slot_rng(seed, stream, n + slot);
                                let b = sample_ray(probe, spr, &mut rng, SamplingStrategy::Stratified)?.points;
                                pair_triggers(scene, grid, &a, &b, frac)
                            }
                            None => (false, false),
                        };
                        Ok((a, cont, disc))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (points, cont, disc) in parts.into_iter().flatten() {
            self.accumulator.count_unique(grid, &points);
            self.accumulator.consistency_continuous += cont as u64;
            self.accumulator.consistency_discrete += disc as u64;
        }
        Ok(())
    }

    /// Returns accumulated rows every `row_every` iterations and at the last
    /// one. `on_iteration` runs after each iteration, e.g. to advance a
    /// training loop in lockstep.
    pub fn run(&mut self, mut on_iteration: impl FnMut(usize) -> Result<()>) -> Result<Vec<StatsRow>> {
        let mut rows = Vec::new();
        for it in 1..=self.config.iterations {
            self.step(it)?;
            on_iteration(it)?;
            if it % self.config.row_every == 0 || it == self.config.iterations {
                rows.push(self.accumulator.row(it));
            }
        }
        Ok(rows)
    }
}

pub const STATS_HEADER: &str =
    "iter,uniq_cont,uniq_disc,log_uniq_cont,log_uniq_disc,cons_cont,cons_disc,log_cons_cont,log_cons_disc";

fn ln_count(c: u64) -> f64 {
    (c.max(1) as f64).ln()
}

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut s = Vec::new();
    writeln!(s, "{STATS_HEADER}").expect("write to Vec");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.unique_continuous,
            r.unique_discrete,
            ln_count(r.unique_continuous),
            ln_count(r.unique_discrete),
            r.consistency_continuous,
            r.consistency_discrete,
            ln_count(r.consistency_continuous),
            ln_count(r.consistency_discrete)
        )
        .expect("write to Vec");
    }
    String::from_utf8(s).expect("ASCII")
}

pub fn export_stats(rows: &[StatsRow], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, stats_csv(rows).as_bytes())
}

/// Parses a stats CSV, checking the header and the log columns.
pub fn parse_stats(text: &str) -> Result<Vec<StatsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(STATS_HEADER) {
        return Err(Error::Config("stats CSV: unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = || Error::Config(format!("stats CSV line {}: '{line}'", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad());
            }
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
            let row = StatsRow {
                iteration: f[0].parse().map_err(|_| bad())?,
                unique_continuous: int(1)?,
                unique_discrete: int(2)?,
                consistency_continuous: int(5)?,
                consistency_discrete: int(6)?,
            };
            Ok(row)
        })
        .collect()
}

/// Paired-run ratios: continuous over discrete unique coordinates, and
/// continuous over discrete consistency triggers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsRatios {
    pub unique_ratio: f64,
    pub consistency_ratio: f64,
}

pub fn ratios(row: &StatsRow) -> StatsRatios {
    StatsRatios {
        unique_ratio: row.unique_continuous as f64 / row.unique_discrete.max(1) as f64,
        consistency_ratio: row.consistency_continuous as f64 / row.consistency_discrete.max(1) as f64,
    }
}
