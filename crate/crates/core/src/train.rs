//! Photometric training of a field with Adam.
//!
//! Randomness is counter-based: the generator for ray slot `s` of iteration
//! `t` depends only on `(seed, t, s)`. Runs that differ only in coordinate mode
//! therefore see identical pixels and identical sample depths, and results do
//! not depend on the number of worker threads.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Holdout, TrainConfig};
use crate::encoding::InputEncoder;
use crate::error::{Error, Result};
use crate::field::{FieldParams, GradientTape};
use crate::render::{
    batch_loss_grad, render_plans, sample_ray, Ray, RayPlan, RaySamples, SamplingStrategy,
};
use crate::scene::{CameraModel, Dataset};
use crate::grid::GridSpec;

/// Rays per gradient work unit. Fixed so the reduction order never changes.
const CHUNK_RAYS: usize = 32;
/// Pixels per forward batch when rendering whole images.
const RENDER_CHUNK: usize = 64;
/// 32-bit words reserved per slot inside a ChaCha stream.
const WORDS_PER_SLOT: u128 = 1 << 16;

/// Generator for one `(iteration, slot)` cell of a seeded run.
pub fn slot_rng(seed: u64, stream: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
    rng
}

/// Primary ray through the center of pixel `(x, y)`, clipped to the grid cube.
pub fn pixel_ray(camera: &CameraModel, grid: &GridSpec, x: u32, y: u32) -> Option<Ray> {
    Ray::through_cube(camera.position, camera.pixel_direction(x, y), grid.lo, grid.hi)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// First and second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], hp: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} values, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - hp.beta1.powi(self.step as i32);
        let c2 = 1.0 - hp.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            *p -= hp.learning_rate * (*m / c1) / ((*v / c2).sqrt() + hp.eps);
        }
        Ok(())
    }
}

/// One supervised pixel ray with its stratified samples.
#[derive(Debug, Clone)]
pub struct TrainRay {
    pub view: usize,
    pub x: u32,
    pub y: u32,
    pub gt: [f64; 3],
    /// `None` when the pixel ray misses the grid cube.
    pub ray: Option<(Ray, RaySamples)>,
}

/// Views used for training and the view used for held-out evaluation.
pub fn split_views(n_views: usize, holdout: Holdout) -> Result<(Vec<usize>, Option<usize>)> {
    let held = match holdout {
        Holdout::None => None,
        Holdout::Last => (n_views > 1).then(|| n_views - 1),
        Holdout::View(v) if v < n_views => Some(v),
        Holdout::View(v) => {
            return Err(Error::Config(format!(
                "key 'train.holdout_view': view {v} does not exist ({n_views} views)"
            )))
        }
    };
    let train: Vec<usize> = (0..n_views).filter(|&v| Some(v) != held).collect();
    if train.is_empty() {
        return Err(Error::Config("no training views left after holdout".into()));
    }
    Ok((train, held))
}

/// Draws a batch of pixel rays from the training views.
pub fn sample_ray_batch(
    dataset: &Dataset,
    views: &[usize],
    grid: &GridSpec,
    batch_rays: usize,
    samples_per_ray: usize,
    seed: u64,
    iteration: u64,
) -> Result<Vec<TrainRay>> {
    (0..batch_rays)
        .map(|slot| {
            let mut rng = slot_rng(seed, iteration, slot as u64);
            let view = views[rng.gen_range(0..views.len())];
            let cam = &dataset.cameras[view];
            let x = rng.gen_range(0..cam.width);
            let y = rng.gen_range(0..cam.height);
            let ray = match pixel_ray(cam, grid, x, y) {
                Some(r) => {
                    let s = sample_ray(&r, samples_per_ray, &mut rng, SamplingStrategy::Stratified)?;
                    Some((r, s))
                }
                None => None,
            };
            Ok(TrainRay {
                view,
                x,
                y,
                gt: dataset.pixel(view, x, y),
                ray,
            })
        })
        .collect()
}

fn background_loss(background: [f64; 3], gt: [f64; 3]) -> f64 {
    (0..3).map(|c| (background[c] - gt[c]).powi(2)).sum()
}

/// Mean loss and gradient of one chunk of rays, scaled by `scale`.
fn chunk_gradient(
    params: &FieldParams,
    encoder: &InputEncoder,
    rays: &[TrainRay],
    background: [f64; 3],
    scale: f64,
) -> Result<(Vec<f64>, Option<GradientTape>)> {
    let mut plans = Vec::new();
    let mut targets = Vec::new();
    let mut hit_index = Vec::new();
    for (k, r) in rays.iter().enumerate() {
        if let Some((ray, samples)) = &r.ray {
            plans.push(RayPlan::build(encoder, ray, samples)?);
            targets.push(r.gt);
            hit_index.push(k);
        }
    }
    let mut losses: Vec<f64> = rays.iter().map(|r| background_loss(background, r.gt)).collect();
    let Some(bg) = batch_loss_grad(params, encoder, &plans, &targets, background, scale)? else {
        return Ok((losses, None));
    };
    for (k, l) in hit_index.into_iter().zip(bg.losses) {
        losses[k] = l;
    }
    let mut tape = params.new_tape();
    params.backward(&bg.record, &bg.upstream, &mut tape)?;
    Ok((losses, Some(tape)))
}

/// Mean loss and averaged gradient over a batch. Chunks are evaluated in
/// parallel and summed in chunk order.
pub fn batch_gradient(
    params: &FieldParams,
    encoder: &InputEncoder,
    rays: &[TrainRay],
    background: [f64; 3],
) -> Result<(f64, Vec<f64>, GradientTape)> {
    if rays.is_empty() {
        return Err(Error::Config("empty ray batch".into()));
    }
    let scale = 1.0 / rays.len() as f64;
    let parts: Vec<_> = rays
        .par_chunks(CHUNK_RAYS)
        .map(|chunk| chunk_gradient(params, encoder, chunk, background, scale))
        .collect::<Result<_>>()?;
    let mut total = params.new_tape();
    let mut losses = Vec::with_capacity(rays.len());
    for (l, tape) in parts {
        losses.extend(l);
        if let Some(t) = tape {
            total.merge(&t);
        }
    }
    let mean = losses.iter().sum::<f64>() * scale;
    Ok((mean, losses, total))
}

/// One optimizer step. A non-finite loss or gradient aborts with the offending ray.
pub fn train_step(
    params: &mut FieldParams,
    adam: &mut AdamState,
    hp: &AdamConfig,
    encoder: &InputEncoder,
    rays: &[TrainRay],
    background: [f64; 3],
    iteration: usize,
) -> Result<f64> {
    let (mean, losses, tape) =
        batch_gradient(params, encoder, rays, background).map_err(|e| match e {
            Error::Compositing(m) | Error::NonFinite(m) => {
                Error::Numerical(format!("iteration {iteration}: {m}"))
            }
            other => other,
        })?;
    if let Some(k) = losses.iter().position(|l| !l.is_finite()) {
        let r = &rays[k];
        return Err(Error::Numerical(format!(
            "non-finite loss at iteration {iteration}, ray {k} (view {}, pixel {},{})",
            r.view, r.x, r.y
        )));
    }
    if let Some(p) = tape.grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at iteration {iteration}, parameter {p}"
        )));
    }
    adam.apply(&mut params.values, &tape.grad, hp)?;
    Ok(mean)
}

/// Renders every pixel of a camera with midpoint sampling. Row-major `[0, 1]` colors.
pub fn render_view(
    params: &FieldParams,
    encoder: &InputEncoder,
    camera: &CameraModel,
    samples_per_ray: usize,
    background: [f64; 3],
) -> Result<Vec<[f64; 3]>> {
    let pixels: Vec<(u32, u32)> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .collect();
    let parts: Vec<Vec<[f64; 3]>> = pixels
        .par_chunks(RENDER_CHUNK)
        .map(|chunk| {
            let mut plans = Vec::with_capacity(chunk.len());
            for &(x, y) in chunk {
                let plan = match pixel_ray(camera, &encoder.grid, x, y) {
                    Some(ray) => {
                        // Midpoint sampling ignores the generator.
                        let mut rng = slot_rng(0, 0, 0);
                        let s = sample_ray(&ray, samples_per_ray, &mut rng, SamplingStrategy::Midpoint)?;
                        RayPlan::build(encoder, &ray, &s)?
                    }
                    None => RayPlan {
                        direction: camera.pixel_direction(x, y),
                        points: Vec::new(),
                        deltas: Vec::new(),
                    },
                };
                plans.push(plan);
            }
            Ok(render_plans(params, encoder, &plans, background)?
                .into_iter()
                .map(|r| r.color)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Peak signal-to-noise ratio in dB for colors in `[0, 1]`.
pub fn psnr(pred: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let n = (pred.len() * 3) as f64;
    let mse: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| (0..3).map(move |c| (p[c] - t[c]).powi(2)))
        .sum::<f64>()
        / n;
    -10.0 * mse.log10()
}

/// PSNR of a rendered view against the dataset image.
pub fn view_psnr(
    params: &FieldParams,
    encoder: &InputEncoder,
    dataset: &Dataset,
    view: usize,
    samples_per_ray: usize,
    background: [f64; 3],
) -> Result<f64> {
    let cam = &dataset.cameras[view];
    let pred = render_view(params, encoder, cam, samples_per_ray, background)?;
    let target: Vec<[f64; 3]> = (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
        .map(|(x, y)| dataset.pixel(view, x, y))
        .collect();
    Ok(psnr(&pred, &target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FieldParams,
    pub log: Vec<LogRow>,
    /// View the logged PSNR refers to: the held-out view, or view 0 without one.
    pub psnr_view: usize,
    pub held_out: bool,
}

impl TrainOutcome {
    pub fn final_psnr(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.psnr)
    }
}

/// Stateful training loop, advanced one optimizer step at a time.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    encoder: InputEncoder,
    pub params: FieldParams,
    adam: AdamState,
    hp: AdamConfig,
    views: Vec<usize>,
    held: Option<usize>,
    iteration: usize,
    start: Instant,
    pub log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let encoder = config.encoder()?;
        let params = FieldParams::init(config.seed, config.architecture()?, config.init_prior)?;
        let (views, held) = split_views(dataset.cameras.len(), config.holdout)?;
        Ok(Self {
            dataset,
            config: config.clone(),
            encoder,
            adam: AdamState::new(params.len()),
            params,
            hp: AdamConfig::from(config),
            views,
            held,
            iteration: 0,
            start: Instant::now(),
            log: Vec::new(),
        })
    }

    /// Completed optimizer steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// View the logged PSNR refers to: the held-out view, or view 0 without one.
    pub fn psnr_view(&self) -> usize {
        self.held.unwrap_or(0)
    }

    /// Runs one step and appends a log row when the step is due for logging.
    pub fn step(&mut self) -> Result<f64> {
        let it = self.iteration + 1;
        let cfg = &self.config;
        let rays = sample_ray_batch(
            self.dataset,
            &self.views,
            &cfg.grid,
            cfg.batch_rays,
            cfg.samples_per_ray,
            cfg.seed,
            it as u64,
        )?;
        let loss = train_step(
            &mut self.params,
            &mut self.adam,
            &self.hp,
            &self.encoder,
            &rays,
            cfg.background,
            it,
        )?;
        self.iteration = it;
        if it.is_multiple_of(cfg.log_every) || it == cfg.iterations {
            let psnr = view_psnr(
                &self.params,
                &self.encoder,
                self.dataset,
                self.psnr_view(),
                cfg.samples_per_ray,
                cfg.background,
            )?;
            let row = LogRow {
                iteration: it,
                loss,
                psnr,
                elapsed_s: self.start.elapsed().as_secs_f64(),
            };
            log::info!("iter {it:>6}  loss {loss:.5}  psnr {psnr:.2} dB  {:.1}s", row.elapsed_s);
            self.log.push(row);
        }
        Ok(loss)
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            psnr_view: self.psnr_view(),
            held_out: self.held.is_some(),
            params: self.params,
            log: self.log,
        }
    }
}

/// Trains a freshly initialized field for `config.iterations` steps.
/// `on_step` runs after every optimizer step with the 1-based iteration number.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, &FieldParams) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config)?;
    for _ in 0..config.iterations {
        trainer.step()?;
        on_step(trainer.iteration(), &trainer.params)?;
    }
    Ok(trainer.finish())
}

pub fn write_train_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut s = Vec::new();
    writeln!(s, "iter,loss,psnr_holdout")?;
    for r in log {
        writeln!(s, "{},{},{}", r.iteration, r.loss, r.psnr)?;
    }
    crate::io::write_atomic(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::CoordMode;
    use crate::scene::{make_rig, SceneDef};
    use crate::Vec3;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            grid: GridSpec::new(-1.0, 1.0, 64).unwrap(),
            pos_freqs: 3,
            dir_freqs: 2,
            samples_per_ray: 8,
            iterations: 3,
            batch_rays: 40,
            log_every: 3,
            geometry_layers: 2,
            geometry_width: 16,
            feature_dim: 8,
            color_layers: 1,
            color_width: 16,
            ..TrainConfig::default()
        }
    }

    fn tiny_dataset() -> Dataset {
        let cams = make_rig(4, 2.5, 20.0, Vec3::zeros(), 0.8, 12, 12).unwrap();
        Dataset::synthesize(SceneDef::default(), cams, GridSpec::new(-1.0, 1.0, 64).unwrap()).unwrap()
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let hp = AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut adam = AdamState::new(3);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.apply(&mut p, &[2.0, -0.5, 0.0], &hp).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_matches_hand_stepped_quadratic() {
        // f(x) = (x - 3)^2, x0 = 0, lr 0.5, betas 0.5 / 0.75, eps 0.
        let hp = AdamConfig {
            learning_rate: 0.5,
            beta1: 0.5,
            beta2: 0.75,
            eps: 0.0,
        };
        let mut adam = AdamState::new(1);
        let mut x = vec![0.0];
        let (mut m, mut v, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * (oracle - 3.0);
            m = 0.5 * m + 0.5 * g;
            v = 0.75 * v + 0.25 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.75f64.powi(t));
            oracle -= 0.5 * mh / vh.sqrt();
            let grad = [2.0 * (x[0] - 3.0)];
            adam.apply(&mut x, &grad, &hp).unwrap();
            assert!((x[0] - oracle).abs() < 1e-14, "step {t}: {} vs {oracle}", x[0]);
        }
    }

    #[test]
    fn views_are_drawn_uniformly() {
        let ds = tiny_dataset();
        let views = [0, 1, 2];
        let n = 100_000;
        let mut counts = [0usize; 4];
        for it in 0..(n / 1000) {
            for r in sample_ray_batch(&ds, &views, &ds.grid, 1000, 2, 5, it as u64).unwrap() {
                counts[r.view] += 1;
                assert_eq!(r.gt, ds.pixel(r.view, r.x, r.y));
            }
        }
        let p = 1.0 / 3.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[..3] {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
        assert_eq!(counts[3], 0);
    }

    #[test]
    fn zero_iterations_return_initial_params() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            iterations: 0,
            ..tiny_config()
        };
        let out = train(&ds, &cfg, |_, _| Ok(())).unwrap();
        let init = FieldParams::init(cfg.seed, cfg.architecture().unwrap(), cfg.init_prior).unwrap();
        assert_eq!(out.params.values, init.values);
        assert!(out.log.is_empty());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let hp = AdamConfig::from(&TrainConfig::default());
        let mut adam = AdamState::new(4);
        let mut p = vec![0.3, -2.0, 5.0, 0.0];
        let before = p.clone();
        adam.apply(&mut p, &[0.0; 4], &hp).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn slot_streams_are_independent_of_order() {
        let a: f64 = slot_rng(7, 3, 5).gen();
        let _ = slot_rng(7, 3, 4).gen::<f64>();
        let b: f64 = slot_rng(7, 3, 5).gen();
        let c: f64 = slot_rng(7, 4, 5).gen();
        let d: f64 = slot_rng(7, 3, 6).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn holdout_split() {
        assert_eq!(split_views(4, Holdout::Last).unwrap(), (vec![0, 1, 2], Some(3)));
        assert_eq!(split_views(3, Holdout::View(0)).unwrap(), (vec![1, 2], Some(0)));
        assert_eq!(split_views(2, Holdout::None).unwrap(), (vec![0, 1], None));
        assert!(split_views(1, Holdout::View(0)).is_err());
        assert!(split_views(3, Holdout::View(5)).is_err());
    }

    #[test]
    fn batch_is_mode_independent() {
        let ds = tiny_dataset();
        let grid = ds.grid;
        let a = sample_ray_batch(&ds, &[0, 1, 2], &grid, 20, 8, 11, 4).unwrap();
        let b = sample_ray_batch(&ds, &[0, 1, 2], &grid, 20, 8, 11, 4).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.view, x.x, x.y), (y.view, y.x, y.y));
            assert_eq!(x.ray.as_ref().map(|r| r.1.t.clone()), y.ray.as_ref().map(|r| r.1.t.clone()));
            assert_ne!(x.view, 3);
        }
    }

    #[test]
    fn gradient_independent_of_thread_count() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let enc = cfg.encoder().unwrap();
        let params = FieldParams::init(1, cfg.architecture().unwrap(), 0.1).unwrap();
        let rays = sample_ray_batch(&ds, &[0, 1, 2], &cfg.grid, 100, 8, 1, 1).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| batch_gradient(&params, &enc, &rays, cfg.background).unwrap())
        };
        let (l1, _, g1) = run(1);
        let (l3, _, g3) = run(3);
        assert_eq!(l1.to_bits(), l3.to_bits());
        assert_eq!(g1.grad, g3.grad);
    }

    #[test]
    fn batch_gradient_matches_finite_difference() {
        let ds = tiny_dataset();
        let mut cfg = tiny_config();
        cfg.mode = CoordMode::Continuous;
        let enc = cfg.encoder().unwrap();
        let params = FieldParams::init(2, cfg.architecture().unwrap(), 0.3).unwrap();
        let rays = sample_ray_batch(&ds, &[0, 1, 2], &cfg.grid, 12, 8, 2, 1).unwrap();
        let (_, _, tape) = batch_gradient(&params, &enc, &rays, cfg.background).unwrap();
        let h = 1e-5;
        for idx in [0, 17, params.len() / 2, params.len() - 1] {
            let mut p = params.clone();
            p.values[idx] += h;
            let up = batch_gradient(&p, &enc, &rays, cfg.background).unwrap().0;
            p.values[idx] -= 2.0 * h;
            let down = batch_gradient(&p, &enc, &rays, cfg.background).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - tape.grad[idx]).abs() / fd.abs().max(tape.grad[idx].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {idx}: fd {fd} analytic {}", tape.grad[idx]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let a = train(&ds, &cfg, |_, _| Ok(())).unwrap();
        let b = train(&ds, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.log.len(), 1);
        assert!(a.held_out);
        assert_eq!(a.psnr_view, 3);
        assert!(a.final_psnr().is_finite());
    }

    #[test]
    fn non_finite_parameters_abort() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let enc = cfg.encoder().unwrap();
        let mut params = FieldParams::init(1, cfg.architecture().unwrap(), 0.1).unwrap();
        params.values.iter_mut().for_each(|v| *v = f64::NAN);
        let mut adam = AdamState::new(params.len());
        let rays = sample_ray_batch(&ds, &[0, 1, 2], &cfg.grid, 8, 8, 1, 1).unwrap();
        let err = train_step(&mut params, &mut adam, &AdamConfig::from(&cfg), &enc, &rays, cfg.background, 9);
        match err {
            Err(Error::Numerical(m)) => assert!(m.contains("iteration 9")),
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("NaN parameters trained without error"),
        }
    }

    #[test]
    fn psnr_values() {
        let a = vec![[0.5; 3]; 4];
        let mut b = a.clone();
        b[0][0] = 0.6;
        // mse = 0.01 / 12
        assert!((psnr(&a, &b) - 10.0 * (1200.0f64).log10()).abs() < 1e-9);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
    }
}
