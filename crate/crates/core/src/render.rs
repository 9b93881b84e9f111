//! Ray sampling, volume compositing and the photometric loss.
//!
//! In discrete mode samples are quantized and merged into per-voxel runs
//! before the network is queried, so each run costs one evaluation and
//! carries the summed segment length of its samples. Segment lengths are
//! always measured between continuous coordinates.

use ndarray::Array2;
use rand::Rng;

use crate::encoding::InputEncoder;
use crate::error::{Error, Result};
use crate::field::{sigmoid, softplus, FieldBatch, FieldParams, FieldUpstream, ForwardRecord, GeometryKind};
use crate::grid::{dedup_ray_samples, sample_deltas, TerminalGap};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if !((direction.norm() - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidRay(format!(
                "direction must be unit length, |d| = {}",
                direction.norm()
            )));
        }
        if !(0.0 <= t_near && t_near < t_far && t_far.is_finite()) {
            return Err(Error::InvalidRay(format!(
                "need 0 <= t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        if !(origin.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("ray origin".into()));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Clips the half-line `origin + t direction, t >= 0` against the cube
    /// `[lo, hi]^3`. Returns `None` when the ray misses the cube.
    pub fn through_cube(origin: Vec3, direction: Vec3, lo: f64, hi: f64) -> Option<Ray> {
        let direction = direction.normalize();
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let inv = 1.0 / direction[a];
            let (mut ta, mut tb) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // a zero direction component inside the slab gives (-inf, inf)
            if ta.is_nan() || tb.is_nan() {
                return None;
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        if t1 - t0 > 1e-12 {
            Ray::new(origin, direction, t0, t1).ok()
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// One uniform draw inside each of the equal bins.
    Stratified,
    /// Bin midpoints; deterministic.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub points: Vec<Vec3>,
    pub bin_width: f64,
}

pub fn sample_ray<R: Rng + ?Sized>(
    ray: &Ray,
    count: usize,
    rng: &mut R,
    strategy: SamplingStrategy,
) -> Result<RaySamples> {
    if count < 2 {
        return Err(Error::InvalidRay(format!("need at least 2 samples per ray, got {count}")));
    }
    let width = (ray.t_far - ray.t_near) / count as f64;
    let t: Vec<f64> = (0..count)
        .map(|i| {
            let u: f64 = match strategy {
                SamplingStrategy::Stratified => rng.gen(),
                SamplingStrategy::Midpoint => 0.5,
            };
            ray.t_near + (i as f64 + u) * width
        })
        .collect();
    let points = t.iter().map(|&t| ray.at(t)).collect();
    Ok(RaySamples {
        t,
        points,
        bin_width: width,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub weights: Vec<f64>,
    pub transmittances: Vec<f64>,
    pub accumulated_opacity: f64,
}

impl RenderResult {
    fn empty() -> Self {
        Self {
            color: [0.0; 3],
            weights: Vec::new(),
            transmittances: Vec::new(),
            accumulated_opacity: 0.0,
        }
    }

    /// Fills the remaining transmittance with a constant background color.
    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        let rest = 1.0 - self.accumulated_opacity;
        for (c, b) in self.color.iter_mut().zip(background) {
            *c += rest * b;
        }
        self
    }
}

fn accumulate(alphas: &[f64], transmittances: Vec<f64>, colors: &[[f64; 3]]) -> RenderResult {
    let weights: Vec<f64> = transmittances
        .iter()
        .zip(alphas)
        .map(|(t, a)| t * a)
        .collect();
    let mut color = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
    }
    let accumulated_opacity = weights.iter().sum();
    RenderResult {
        color,
        weights,
        transmittances,
        accumulated_opacity,
    }
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a == b && b == c {
        Ok(())
    } else {
        Err(Error::Shape(format!("compositing inputs have lengths {a}, {b}, {c}")))
    }
}

/// Density compositing: `alpha_i = 1 - exp(-sigma_i delta_i)`,
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`, `C = sum T_i alpha_i c_i`.
pub fn composite_density(deltas: &[f64], sigmas: &[f64], colors: &[[f64; 3]]) -> Result<RenderResult> {
    check_lengths(deltas.len(), sigmas.len(), colors.len())?;
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Compositing(format!("density must be non-negative, got {s}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::Compositing(format!("segment length must be non-negative, got {d}")));
    }
    let mut optical_depth = 0.0f64;
    let mut transmittances = Vec::with_capacity(sigmas.len());
    let mut alphas = Vec::with_capacity(sigmas.len());
    for (s, d) in sigmas.iter().zip(deltas) {
        transmittances.push((-optical_depth).exp());
        let tau = s * d;
        alphas.push(-(-tau).exp_m1());
        optical_depth += tau;
    }
    Ok(accumulate(&alphas, transmittances, colors))
}

/// Occupancy compositing: `w_i = o_i prod_{j<i} (1 - o_j)`, `C = sum w_i c_i`.
pub fn composite_occupancy(occupancies: &[f64], colors: &[[f64; 3]]) -> Result<RenderResult> {
    check_lengths(occupancies.len(), colors.len(), colors.len())?;
    if let Some(o) = occupancies.iter().find(|o| !(0.0..=1.0).contains(*o)) {
        return Err(Error::Compositing(format!("occupancy must lie in [0, 1], got {o}")));
    }
    let mut t = 1.0;
    let transmittances = occupancies
        .iter()
        .map(|o| {
            let current = t;
            t *= 1.0 - o;
            current
        })
        .collect();
    Ok(accumulate(occupancies, transmittances, colors))
}

/// Squared L2 error over RGB.
pub fn rendering_loss(rendered: &RenderResult, gt: [f64; 3]) -> f64 {
    rendered
        .color
        .iter()
        .zip(gt)
        .map(|(c, g)| (c - g) * (c - g))
        .sum()
}

/// Network query points and segment lengths for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPlan {
    pub direction: Vec3,
    pub points: Vec<Vec3>,
    pub deltas: Vec<f64>,
}

impl RayPlan {
    /// Quantizes and merges samples in discrete mode; otherwise keeps every
    /// sample with its own segment length.
    pub fn build(encoder: &InputEncoder, ray: &Ray, samples: &RaySamples) -> Result<Self> {
        let terminal = TerminalGap::Fixed(samples.bin_width);
        if encoder.mode.deduplicates() {
            let runs = dedup_ray_samples(&encoder.grid, &samples.points, terminal)?;
            Ok(Self {
                direction: ray.direction,
                points: runs.iter().map(|r| r.rep_point).collect(),
                deltas: runs.iter().map(|r| r.delta).collect(),
            })
        } else {
            Ok(Self {
                direction: ray.direction,
                points: samples.points.clone(),
                deltas: sample_deltas(&samples.points, terminal)?,
            })
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds the network input matrices for a set of ray plans, rows in plan order.
pub fn plan_inputs(encoder: &InputEncoder, plans: &[RayPlan]) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows: usize = plans.iter().map(RayPlan::len).sum();
    let mut pos = Array2::zeros((rows, encoder.position_len()));
    let mut dir = Array2::zeros((rows, encoder.direction_len()));
    let mut dir_row = vec![0.0; encoder.direction_len()];
    let mut r = 0;
    for plan in plans {
        encoder.direction_into(&plan.direction, &mut dir_row)?;
        for p in &plan.points {
            encoder.position_into(p, pos.row_mut(r).as_slice_mut().expect("standard layout"))?;
            dir.row_mut(r)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&dir_row);
            r += 1;
        }
    }
    Ok((pos, dir))
}

/// Per-sample alphas from raw network geometry.
fn alphas(kind: GeometryKind, geometry: &[f64], deltas: &[f64]) -> Vec<f64> {
    match kind {
        GeometryKind::Occupancy => geometry.iter().map(|&g| sigmoid(g)).collect(),
        GeometryKind::Density => geometry
            .iter()
            .zip(deltas)
            .map(|(&g, d)| -(-softplus(g) * d).exp_m1())
            .collect(),
    }
}

/// Composites one ray from raw network outputs and applies the background.
pub fn composite_raw(
    kind: GeometryKind,
    geometry: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    background: [f64; 3],
) -> Result<RenderResult> {
    let result = match kind {
        GeometryKind::Occupancy => {
            let occ: Vec<f64> = geometry.iter().map(|&g| sigmoid(g)).collect();
            composite_occupancy(&occ, colors)?
        }
        GeometryKind::Density => {
            let sig: Vec<f64> = geometry.iter().map(|&g| softplus(g)).collect();
            composite_density(deltas, &sig, colors)?
        }
    };
    Ok(result.with_background(background))
}

/// Loss of one ray and its derivatives with respect to the raw geometry
/// outputs and the colors. Sample positions and segment lengths are constants.
pub fn loss_and_grad(
    kind: GeometryKind,
    geometry: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    background: [f64; 3],
    gt: [f64; 3],
) -> Result<(f64, RenderResult, Vec<f64>, Vec<[f64; 3]>)> {
    let n = geometry.len();
    let result = composite_raw(kind, geometry, colors, deltas, background)?;
    let loss = rendering_loss(&result, gt);
    let e: Vec<f64> = (0..3).map(|c| 2.0 * (result.color[c] - gt[c])).collect();
    let a = alphas(kind, geometry, deltas);

    // g_i = dL/dw_i
    let g: Vec<f64> = colors
        .iter()
        .map(|c| (0..3).map(|ch| e[ch] * (c[ch] - background[ch])).sum())
        .collect();
    let d_color: Vec<[f64; 3]> = result
        .weights
        .iter()
        .map(|w| [w * e[0], w * e[1], w * e[2]])
        .collect();

    // dL/da_i = T_i (g_i - A_i), A_i = g_{i+1} a_{i+1} + (1 - a_{i+1}) A_{i+1}
    let mut d_geometry = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let d_alpha = result.transmittances[i] * (g[i] - acc);
        d_geometry[i] = d_alpha
            * match kind {
                GeometryKind::Occupancy => a[i] * (1.0 - a[i]),
                GeometryKind::Density => deltas[i] * (1.0 - a[i]) * sigmoid(geometry[i]),
            };
        acc = g[i] * a[i] + (1.0 - a[i]) * acc;
    }
    Ok((loss, result, d_geometry, d_color))
}

/// Row ranges of each plan inside a batched evaluation.
pub fn plan_offsets(plans: &[RayPlan]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    plans
        .iter()
        .map(|p| {
            let r = start..start + p.len();
            start += p.len();
            r
        })
        .collect()
}

fn batch_colors(batch: &FieldBatch, range: std::ops::Range<usize>) -> Vec<[f64; 3]> {
    range
        .map(|r| [batch.color[[r, 0]], batch.color[[r, 1]], batch.color[[r, 2]]])
        .collect()
}

/// Evaluates a set of rays in one network batch. Rays with an empty plan
/// render the background.
pub fn render_plans(
    params: &FieldParams,
    encoder: &InputEncoder,
    plans: &[RayPlan],
    background: [f64; 3],
) -> Result<Vec<RenderResult>> {
    let (pos, dir) = plan_inputs(encoder, plans)?;
    if pos.nrows() == 0 {
        return Ok(plans
            .iter()
            .map(|_| RenderResult::empty().with_background(background))
            .collect());
    }
    let (batch, _) = params.forward_batch(&pos, &dir)?;
    let kind = params.architecture().geometry;
    plans
        .iter()
        .zip(plan_offsets(plans))
        .map(|(plan, range)| {
            composite_raw(
                kind,
                &batch.geometry[range.clone()],
                &batch_colors(&batch, range),
                &plan.deltas,
                background,
            )
        })
        .collect()
}

/// Loss summary and field upstream for a batch of rays with targets.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub losses: Vec<f64>,
    pub record: ForwardRecord,
    pub upstream: FieldUpstream,
}

/// Forward pass, per-ray loss and upstream derivatives for a batch of rays.
/// `loss_scale` multiplies every upstream derivative (e.g. 1 / batch size).
pub fn batch_loss_grad(
    params: &FieldParams,
    encoder: &InputEncoder,
    plans: &[RayPlan],
    targets: &[[f64; 3]],
    background: [f64; 3],
    loss_scale: f64,
) -> Result<Option<BatchGradient>> {
    let (pos, dir) = plan_inputs(encoder, plans)?;
    let kind = params.architecture().geometry;
    if pos.nrows() == 0 {
        return Ok(None);
    }
    let (batch, record) = params.forward_batch(&pos, &dir)?;
    let mut upstream = FieldUpstream::zeros(pos.nrows());
    let mut losses = Vec::with_capacity(plans.len());
    for ((plan, range), gt) in plans.iter().zip(plan_offsets(plans)).zip(targets) {
        let (loss, _, d_geo, d_col) = loss_and_grad(
            kind,
            &batch.geometry[range.clone()],
            &batch_colors(&batch, range.clone()),
            &plan.deltas,
            background,
            *gt,
        )?;
        losses.push(loss);
        for (k, r) in range.enumerate() {
            upstream.geometry[r] = d_geo[k] * loss_scale;
            for ch in 0..3 {
                upstream.color[[r, ch]] = d_col[k][ch] * loss_scale;
            }
        }
    }
    Ok(Some(BatchGradient {
        losses,
        record,
        upstream,
    }))
}

/// Renders one pixel ray: sample, quantize and merge in discrete mode,
/// encode, evaluate, composite over the background.
pub fn render_pixel<R: Rng + ?Sized>(
    params: &FieldParams,
    encoder: &InputEncoder,
    ray: &Ray,
    samples_per_ray: usize,
    strategy: SamplingStrategy,
    background: [f64; 3],
    rng: &mut R,
) -> Result<RenderResult> {
    let samples = sample_ray(ray, samples_per_ray, rng, strategy)?;
    let plan = RayPlan::build(encoder, ray, &samples)?;
    Ok(render_plans(params, encoder, std::slice::from_ref(&plan), background)?
        .pop()
        .expect("one plan in, one result out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::CoordMode;
    use crate::field::Architecture;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoint_samples() {
        let ray = Ray::new(Vec3::zeros(), Vec3::x(), 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_ray(&ray, 4, &mut rng, SamplingStrategy::Midpoint).unwrap();
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(sample_ray(&ray, 1, &mut rng, SamplingStrategy::Midpoint).is_err());
    }

    #[test]
    fn stratified_samples_stay_in_bins() {
        let ray = Ray::new(Vec3::zeros(), Vec3::y(), 0.5, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = sample_ray(&ray, 8, &mut rng, SamplingStrategy::Stratified).unwrap();
            for (i, t) in s.t.iter().enumerate() {
                let lo = 0.5 + i as f64 * 0.25;
                assert!(*t >= lo && *t < lo + 0.25);
            }
            assert!(s.t.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn ray_validation() {
        assert!(Ray::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), 0.0, 1.0).is_err());
        assert!(Ray::new(Vec3::zeros(), Vec3::x(), 1.0, 1.0).is_err());
        assert!(Ray::new(Vec3::zeros(), Vec3::x(), -0.1, 1.0).is_err());
    }

    #[test]
    fn cube_clipping() {
        let r = Ray::through_cube(Vec3::new(-3.0, 0.0, 0.0), Vec3::x(), -1.0, 1.0).unwrap();
        assert_relative_eq!(r.t_near, 2.0);
        assert_relative_eq!(r.t_far, 4.0);
        assert!(Ray::through_cube(Vec3::new(-3.0, 2.0, 0.0), Vec3::x(), -1.0, 1.0).is_none());
        assert!(Ray::through_cube(Vec3::new(-3.0, 0.0, 0.0), -Vec3::x(), -1.0, 1.0).is_none());
    }

    #[test]
    fn transparent_density() {
        let r = composite_density(&[0.1; 4], &[0.0; 4], &[[0.3, 0.6, 0.9]; 4]).unwrap();
        assert_eq!(r.color, [0.0; 3]);
        assert_eq!(r.accumulated_opacity, 0.0);
        assert!(r.transmittances.iter().all(|&t| t == 1.0));
        let bg = r.with_background([0.2, 0.4, 0.6]);
        assert_eq!(bg.color, [0.2, 0.4, 0.6]);
    }

    #[test]
    fn opaque_first_density_sample() {
        let c = [[0.2, 0.7, 0.1], [1.0, 0.0, 0.0]];
        let r = composite_density(&[1.0, 1.0], &[1e6, 3.0], &c).unwrap();
        for ch in 0..3 {
            assert!((r.color[ch] - c[0][ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn two_sample_density_against_term_by_term() {
        let r = composite_density(&[0.5, 0.5], &[1.0, 2.0], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        // T1 = 1, a1 = 1 - e^-0.5; T2 = e^-0.5, a2 = 1 - e^-1
        let a1 = 1.0 - (-0.5f64).exp();
        let t2 = (-0.5f64).exp();
        let a2 = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(r.color[0], a1, epsilon = 1e-15);
        assert_relative_eq!(r.color[1], t2 * a2, epsilon = 1e-15);
        assert_eq!(r.color[2], 0.0);
    }

    #[test]
    fn density_rejects_negative() {
        assert!(matches!(
            composite_density(&[1.0], &[-0.1], &[[0.0; 3]]),
            Err(Error::Compositing(_))
        ));
    }

    #[test]
    fn occupancy_closed_forms() {
        let c = [[0.1, 0.2, 0.3], [0.9, 0.9, 0.9], [0.5, 0.5, 0.5]];
        let r = composite_occupancy(&[1.0, 0.7, 0.4], &c).unwrap();
        assert_eq!(r.color, c[0]);
        assert_eq!(&r.weights[1..], &[0.0, 0.0]);

        let r = composite_occupancy(&[0.0; 3], &c).unwrap();
        assert_eq!(r.color, [0.0; 3]);

        let r = composite_occupancy(&[0.5, 0.5, 1.0], &c).unwrap();
        assert_eq!(r.weights, vec![0.5, 0.25, 0.25]);

        assert!(composite_occupancy(&[1.2], &c[..1]).is_err());
        assert!(composite_occupancy(&[-0.01], &c[..1]).is_err());
    }

    #[test]
    fn loss_values() {
        let r = RenderResult {
            color: [1.0, 0.0, 0.0],
            ..RenderResult::empty()
        };
        assert_eq!(rendering_loss(&r, [0.0; 3]), 1.0);
        assert_eq!(rendering_loss(&r, [1.0, 0.0, 0.0]), 0.0);
    }

    fn tiny_encoder(mode: CoordMode, r: u64) -> InputEncoder {
        InputEncoder::new(2, 1, GridSpec::new(-1.0, 1.0, r).unwrap(), mode).unwrap()
    }

    #[test]
    fn zero_network_closed_form() {
        let enc = tiny_encoder(CoordMode::Discrete, 16);
        let arch = Architecture::with_inputs(enc.position_len(), enc.direction_len());
        let params = FieldParams::zeros(arch).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 0.05, 0.05), Vec3::x(), 0.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = render_pixel(&params, &enc, &ray, 64, SamplingStrategy::Stratified, [0.0; 3], &mut rng).unwrap();
        let runs = r.weights.len();
        assert_eq!(runs, 16);
        let expected = 0.5 * (1.0 - 0.5f64.powi(runs as i32));
        for ch in 0..3 {
            assert_relative_eq!(r.color[ch], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_voxel_ray_is_one_evaluation() {
        let enc = tiny_encoder(CoordMode::Discrete, 2);
        let ray = Ray::new(Vec3::new(0.1, 0.1, 0.1), Vec3::x(), 0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_ray(&ray, 32, &mut rng, SamplingStrategy::Stratified).unwrap();
        let plan = RayPlan::build(&enc, &ray, &s).unwrap();
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [GeometryKind::Occupancy, GeometryKind::Density] {
            for _ in 0..20 {
                let n = rng.gen_range(1..9);
                let geo: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let col: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
                let del: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.5)).collect();
                let bg = [rng.gen(), rng.gen(), rng.gen()];
                let gt = [rng.gen(), rng.gen(), rng.gen()];
                let (_, _, dg, dc) = loss_and_grad(kind, &geo, &col, &del, bg, gt).unwrap();
                let h = 1e-6;
                let loss = |g: &[f64], c: &[[f64; 3]]| {
                    rendering_loss(&composite_raw(kind, g, c, &del, bg).unwrap(), gt)
                };
                for i in 0..n {
                    let mut gp = geo.clone();
                    gp[i] += h;
                    let mut gm = geo.clone();
                    gm[i] -= h;
                    let fd = (loss(&gp, &col) - loss(&gm, &col)) / (2.0 * h);
                    assert!((fd - dg[i]).abs() < 1e-7, "{kind:?} geo {i}: {fd} vs {}", dg[i]);
                    for ch in 0..3 {
                        let mut cp = col.clone();
                        cp[i][ch] += h;
                        let mut cm = col.clone();
                        cm[i][ch] -= h;
                        let fd = (loss(&geo, &cp) - loss(&geo, &cm)) / (2.0 * h);
                        assert!((fd - dc[i][ch]).abs() < 1e-7);
                    }
                }
            }
        }
    }
}
