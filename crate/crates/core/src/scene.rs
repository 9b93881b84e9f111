//! Synthetic ground truth: analytic SDF scenes, pinhole camera rigs,
//! sphere-traced reference images and the on-disk dataset layout.
//!
//! Dataset directory layout:
//!
//! ```text
//! cameras.json          array of camera records
//! scene.json            scene definition
//! grid.json             quantization grid hint
//! images/view_000.ppm   binary P6, maxval 255, one per camera
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::io::{read_json, write_json};
use crate::Vec3;

const MAX_TRACE_STEPS: usize = 256;
const HIT_EPSILON: f64 = 1e-5;
const AMBIENT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Ring in the xz-plane around the y axis.
    Torus { major: f64, minor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Albedo {
    Constant { color: [f64; 3] },
    /// Linear blend from `low` at coordinate -1 to `high` at +1 along `axis`.
    AxisGradient { axis: usize, low: [f64; 3], high: [f64; 3] },
    Checker { scale: f64, even: [f64; 3], odd: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDef {
    pub shape: Shape,
    pub albedo: Albedo,
    pub light_dir: Vec3,
    pub background: [f64; 3],
}

impl Default for SceneDef {
    fn default() -> Self {
        Self::sphere(0.5)
    }
}

impl SceneDef {
    pub fn sphere(radius: f64) -> Self {
        Self {
            shape: Shape::Sphere { radius },
            albedo: Albedo::Constant {
                color: [0.9, 0.5, 0.2],
            },
            light_dir: Vec3::new(0.6, 0.7, 0.4).normalize(),
            background: [1.0, 1.0, 1.0],
        }
    }

    pub fn with_shape(shape: Shape) -> Self {
        Self {
            shape,
            ..Self::default()
        }
    }

    /// Half-extent of the axis-aligned bounding box of the shape.
    fn extent(&self) -> [f64; 3] {
        match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Box { half_extents } => half_extents,
            Shape::Torus { major, minor } => [major + minor, minor, major + minor],
        }
    }

    /// Checks the shape parameters and that the shape sits inside the cube
    /// `[lo, hi]^3` with a margin of at least 10% of the half-width.
    pub fn validate(&self, lo: f64, hi: f64) -> Result<()> {
        let ok = match self.shape {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            Shape::Torus { major, minor } => minor > 0.0 && major > minor,
        };
        if !ok {
            return Err(Error::Config(format!("invalid shape parameters {:?}", self.shape)));
        }
        if !(self.light_dir.norm() - 1.0).abs().lt(&1e-9) {
            return Err(Error::Config("light direction must be unit length".into()));
        }
        let margin = 0.1 * (hi - lo) / 2.0;
        if self.extent().iter().any(|e| -e < lo + margin || *e > hi - margin) {
            return Err(Error::Config(format!(
                "shape {:?} does not fit inside [{lo}, {hi}]^3 with a 10% margin",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - Vec3::from(half_extents);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::Torus { major, minor } => {
                let ring = (p.x * p.x + p.z * p.z).sqrt() - major;
                (ring * ring + p.y * p.y).sqrt() - minor
            }
        }
    }

    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let h = 1e-5;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            g[a] = self.sdf(&(p + e)) - self.sdf(&(p - e));
        }
        g.normalize()
    }

    pub fn albedo_at(&self, p: &Vec3) -> [f64; 3] {
        match self.albedo {
            Albedo::Constant { color } => color,
            Albedo::AxisGradient { axis, low, high } => {
                let t = ((p[axis.min(2)] + 1.0) / 2.0).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| low[c] + t * (high[c] - low[c]))
            }
            Albedo::Checker { scale, even, odd } => {
                let s: i64 = p.iter().map(|v| (v * scale).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    even
                } else {
                    odd
                }
            }
        }
    }

    /// Lambertian shading plus a constant ambient term, clamped to `[0, 1]`.
    pub fn shade(&self, p: &Vec3) -> [f64; 3] {
        let n = self.normal(p);
        let diffuse = n.dot(&self.light_dir).max(0.0);
        self.albedo_at(p).map(|a| (a * diffuse + AMBIENT).clamp(0.0, 1.0))
    }

    /// Sphere-traces the ray `origin + t dir`. Returns the hit distance and point.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        let dir = dir.normalize();
        let bound = origin.norm() + self.extent().iter().fold(0.0f64, |a, b| a.max(*b)) * 2.0;
        let mut t = 0.0;
        for _ in 0..MAX_TRACE_STEPS {
            let p = origin + dir * t;
            let d = self.sdf(&p);
            if d < HIT_EPSILON {
                return Some((t, p));
            }
            t += d;
            if t > bound {
                return None;
            }
        }
        None
    }

    /// Uniform samples on the analytic surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        (0..n).map(|_| self.surface_point(rng)).collect()
    }

    fn surface_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self.shape {
            Shape::Sphere { radius } => loop {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-6 && n <= 1.0 {
                    return v * (radius / n);
                }
            },
            Shape::Box { half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2;
                for (a, area) in areas.iter().enumerate() {
                    if pick < *area {
                        axis = a;
                        break;
                    }
                    pick -= area;
                }
                let mut p = Vec3::new(
                    rng.gen_range(-h[0]..h[0]),
                    rng.gen_range(-h[1]..h[1]),
                    rng.gen_range(-h[2]..h[2]),
                );
                p[axis] = if rng.gen::<bool>() { h[axis] } else { -h[axis] };
                p
            }
            Shape::Torus { major, minor } => loop {
                let u = rng.gen_range(0.0..std::f64::consts::TAU);
                let v = rng.gen_range(0.0..std::f64::consts::TAU);
                let ring = major + minor * v.cos();
                if rng.gen_range(0.0..major + minor) < ring {
                    return Vec3::new(ring * u.cos(), minor * v.sin(), ring * u.sin());
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_rad: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if (self.position - self.look_at).norm() <= 0.0 {
            return Err(Error::Config("camera position equals look_at".into()));
        }
        if !(self.fov_y_rad > 0.0 && self.fov_y_rad < std::f64::consts::PI) {
            return Err(Error::Config(format!("fov_y {} outside (0, pi)", self.fov_y_rad)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera image size must be positive".into()));
        }
        if self.basis().1.norm().is_nan() {
            return Err(Error::Config("camera up vector is parallel to the view axis".into()));
        }
        Ok(())
    }

    /// Forward, right and up unit vectors.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (forward, right, up)
    }

    fn tan_half(&self) -> f64 {
        (self.fov_y_rad / 2.0).tan()
    }

    fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Unit direction through continuous pixel coordinates (`x` right, `y`
    /// down, pixel centers at `+0.5`).
    pub fn direction(&self, x: f64, y: f64) -> Vec3 {
        let (f, r, u) = self.basis();
        let th = self.tan_half();
        let sx = (2.0 * x / self.width as f64 - 1.0) * th * self.aspect();
        let sy = (1.0 - 2.0 * y / self.height as f64) * th;
        (f + r * sx + u * sy).normalize()
    }

    pub fn pixel_direction(&self, px: u32, py: u32) -> Vec3 {
        self.direction(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Continuous pixel coordinates of `p`, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let (f, r, u) = self.basis();
        let v = p - self.position;
        let z = v.dot(&f);
        if z <= 1e-12 {
            return None;
        }
        let th = self.tan_half();
        let sx = v.dot(&r) / z / (th * self.aspect());
        let sy = v.dot(&u) / z / th;
        Some((
            (sx + 1.0) * self.width as f64 / 2.0,
            (1.0 - sy) * self.height as f64 / 2.0,
        ))
    }

    pub fn in_image(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    /// Azimuth around the vertical axis through `look_at`.
    pub fn azimuth(&self) -> f64 {
        let v = self.position - self.look_at;
        v.z.atan2(v.x)
    }
}

/// Camera rig parameters for [`make_rig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSpec {
    pub views: usize,
    pub resolution: u32,
    pub radius: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            views: 16,
            resolution: 64,
            radius: 2.5,
            elevation_deg: 25.0,
            fov_deg: 40.0,
        }
    }
}

impl RigSpec {
    pub fn build(&self) -> Result<Vec<CameraModel>> {
        make_rig(
            self.views,
            self.radius,
            self.elevation_deg,
            Vec3::zeros(),
            self.fov_deg.to_radians(),
            self.resolution,
            self.resolution,
        )
    }
}

/// Cameras evenly spaced in azimuth on a circle at the given elevation,
/// all aimed at `look_at` with +y up.
#[allow(clippy::too_many_arguments)]
pub fn make_rig(
    n_views: usize,
    radius: f64,
    elevation_deg: f64,
    look_at: Vec3,
    fov_y_rad: f64,
    width: u32,
    height: u32,
) -> Result<Vec<CameraModel>> {
    if n_views < 2 {
        return Err(Error::Config(format!("a rig needs at least 2 views, got {n_views}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("rig radius must be positive, got {radius}")));
    }
    let elev = elevation_deg.to_radians();
    (0..n_views)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / n_views as f64;
            let offset = Vec3::new(
                radius * elev.cos() * az.cos(),
                radius * elev.sin(),
                radius * elev.cos() * az.sin(),
            );
            let cam = CameraModel {
                position: look_at + offset,
                look_at,
                up: Vec3::y(),
                fov_y_rad,
                width,
                height,
            };
            cam.validate()?;
            Ok(cam)
        })
        .collect()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Sphere-traced reference image with Lambertian shading.
pub fn render_gt_image(scene: &SceneDef, camera: &CameraModel) -> RgbImage {
    let bg = scene.background.map(to_byte);
    RgbImage::from_fn(camera.width, camera.height, |x, y| {
        let dir = camera.pixel_direction(x, y);
        match scene.trace(&camera.position, &dir) {
            Some((_, p)) => image::Rgb(scene.shade(&p).map(to_byte)),
            None => image::Rgb(bg),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<CameraModel>,
    pub images: Vec<RgbImage>,
    pub scene: SceneDef,
    pub grid: GridSpec,
}

pub fn image_file_name(view: usize) -> String {
    format!("view_{view:03}.ppm")
}

impl Dataset {
    pub fn synthesize(scene: SceneDef, cameras: Vec<CameraModel>, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        scene.validate(grid.lo, grid.hi)?;
        let images = cameras.iter().map(|c| render_gt_image(&scene, c)).collect();
        let ds = Self {
            cameras,
            images,
            scene,
            grid,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Config("dataset has no cameras".into()));
        }
        if self.images.len() != self.cameras.len() {
            return Err(Error::Config(format!(
                "{} images for {} cameras",
                self.images.len(),
                self.cameras.len()
            )));
        }
        let (w, h) = self.images[0].dimensions();
        for (n, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
            cam.validate()?;
            if img.dimensions() != (w, h) || (cam.width, cam.height) != (w, h) {
                return Err(Error::Config(format!(
                    "view {n}: image is {:?}, camera is {}x{}, first image is {w}x{h}",
                    img.dimensions(),
                    cam.width,
                    cam.height
                )));
            }
        }
        Ok(())
    }

    /// Ground-truth color of a pixel in `[0, 1]`.
    pub fn pixel(&self, view: usize, x: u32, y: u32) -> [f64; 3] {
        self.images[view].get_pixel(x, y).0.map(|v| v as f64 / 255.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let images_dir = dir.join("images");
        fs::create_dir_all(&images_dir).map_err(|e| Error::file(&images_dir, e))?;
        write_json(&dir.join("cameras.json"), &self.cameras)?;
        write_json(&dir.join("scene.json"), &self.scene)?;
        write_json(&dir.join("grid.json"), &self.grid)?;
        for (n, img) in self.images.iter().enumerate() {
            let path = images_dir.join(image_file_name(n));
            let file = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            PnmEncoder::new(BufWriter::new(file))
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
                .map_err(|e| Error::file(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cameras: Vec<CameraModel> = read_json(&dir.join("cameras.json"))?;
        let scene: SceneDef = read_json(&dir.join("scene.json"))?;
        let grid: GridSpec = read_json(&dir.join("grid.json"))?;
        grid.validate().map_err(|e| Error::file(dir.join("grid.json"), e))?;
        let images = (0..cameras.len())
            .map(|n| {
                let path = dir.join("images").join(image_file_name(n));
                if !path.exists() {
                    return Err(Error::file(&path, "image file is missing"));
                }
                let img = image::open(&path).map_err(|e| Error::file(&path, e))?;
                Ok(img.to_rgb8())
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            cameras,
            images,
            scene,
            grid,
        };
        ds.validate().map_err(|e| Error::file(dir, e))?;
        Ok(ds)
    }
}
