//! Level-set extraction by marching cubes, surface sampling and Chamfer distance.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{CoordMode, InputEncoder};
use crate::error::{Error, Result};
use crate::field::{sigmoid, softplus, FieldParams, GeometryKind};
use crate::mc_tables::{CORNERS, EDGES, TRIANGLES};
use crate::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (n, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::Shape(format!("triangle {n} indexes past {} vertices", self.vertices.len())));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Number of undirected edges not shared by exactly two triangles.
    pub fn non_manifold_edges(&self) -> usize {
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    /// ASCII OBJ with `v` and `f` records only.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn from_obj(text: &str) -> Result<Self> {
        let mut mesh = TriMesh::default();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::Config(format!("OBJ line {}: '{line}'", n + 1));
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let c: Vec<f64> = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad());
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|p| {
                            let head = p.split('/').next().unwrap_or(p);
                            match head.parse::<usize>() {
                                Ok(i) if i >= 1 => Ok(i - 1),
                                _ => Err(bad()),
                            }
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(bad());
                    }
                    mesh.triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_obj().as_bytes())
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_obj(&text).map_err(|e| Error::file(path, e))
    }
}

/// Cubic lattice of `cells + 1` points per axis spanning `[lo, hi]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Lattice {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if cells < 8 {
            return Err(Error::Config(format!("marching-cubes resolution must be at least 8, got {cells}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("invalid lattice bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn points_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.spacing();
        Vec3::new(
            self.lo + i as f64 * h,
            self.lo + j as f64 * h,
            self.lo + k as f64 * h,
        )
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.points_per_axis();
        (k * n + j) * n + i
    }

    /// Evaluates `f` at every lattice point, one z-slab per task. Values are
    /// stored x-fastest.
    pub fn sample(&self, f: impl Fn(&[Vec3]) -> Result<Vec<f64>> + Sync) -> Result<Vec<f64>> {
        let n = self.points_per_axis();
        let slabs: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let pts: Vec<Vec3> = (0..n)
                    .flat_map(|j| (0..n).map(move |i| (i, j)))
                    .map(|(i, j)| self.point(i, j, k))
                    .collect();
                f(&pts)
            })
            .collect::<Result<_>>()?;
        Ok(slabs.concat())
    }
}

/// Marching cubes over sampled lattice values. A corner counts as below the
/// level when `value < level`. Vertices are welded per lattice edge and
/// numbered in order of first use while cells are visited x-fastest.
pub fn march(lattice: &Lattice, values: &[f64], level: f64) -> Result<TriMesh> {
    let n = lattice.points_per_axis();
    if values.len() != n * n * n {
        return Err(Error::Shape(format!("{} lattice values, need {}", values.len(), n * n * n)));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("lattice value {v}")));
    }
    let c = lattice.cells;
    let mut mesh = TriMesh::default();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..c {
        for j in 0..c {
            for i in 0..c {
                let corner = |ci: usize| {
                    let o = CORNERS[ci];
                    lattice.index(i + o[0], j + o[1], k + o[2])
                };
                let mut mask = 0usize;
                for ci in 0..8 {
                    if values[corner(ci)] < level {
                        mask |= 1 << ci;
                    }
                }
                let row = &TRIANGLES[mask];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [ca, cb] = EDGES[e as usize];
                        let (a, b) = (corner(ca), corner(cb));
                        let key = (a.min(b), a.max(b));
                        *slot = *welded.entry(key).or_insert_with(|| {
                            let (va, vb) = (values[a], values[b]);
                            let pa = lattice.point(a % n, (a / n) % n, a / (n * n));
                            let pb = lattice.point(b % n, (b / n) % n, b / (n * n));
                            let t = if va == vb { 0.5 } else { (level - va) / (vb - va) };
                            mesh.vertices.push(pa + (pb - pa) * t);
                            mesh.vertices.len() - 1
                        });
                    }
                    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                        continue;
                    }
                    if mesh.triangle_area(&ids) > 0.0 {
                        mesh.triangles.push(ids);
                    }
                }
            }
        }
    }
    if mesh.is_empty() {
        log::warn!("no level crossing at {level}; mesh is empty");
    }
    Ok(mesh)
}

/// Geometry value that the level refers to: occupancy in `[0, 1]` or density.
pub fn geometry_values(params: &FieldParams, encoder: &InputEncoder, points: &[Vec3]) -> Result<Vec<f64>> {
    let mut pos = Array2::zeros((points.len(), encoder.position_len()));
    for (row, p) in pos.rows_mut().into_iter().zip(points) {
        let mut row = row;
        encoder.position_into(p, row.as_slice_mut().expect("standard layout"))?;
    }
    let raw = params.geometry_batch(&pos)?;
    Ok(match params.architecture().geometry {
        GeometryKind::Occupancy => raw.into_iter().map(sigmoid).collect(),
        GeometryKind::Density => raw.into_iter().map(softplus).collect(),
    })
}

/// Default extraction level for a geometry kind.
pub fn default_level(kind: GeometryKind) -> f64 {
    match kind {
        GeometryKind::Occupancy => 0.5,
        GeometryKind::Density => 10.0,
    }
}

/// Extracts the level set of a trained field on a lattice over the grid cube.
/// `coord_mode` selects how lattice points are fed to the network.
pub fn extract_mesh(
    params: &FieldParams,
    encoder: &InputEncoder,
    mc_resolution: usize,
    level: f64,
    coord_mode: CoordMode,
) -> Result<TriMesh> {
    if params.architecture().geometry == GeometryKind::Occupancy && !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("occupancy level must lie in (0, 1), got {level}")));
    }
    let enc = InputEncoder {
        mode: coord_mode,
        ..encoder.clone()
    };
    let lattice = Lattice::new(enc.grid.lo, enc.grid.hi, mc_resolution)?;
    let values = lattice.sample(|pts| geometry_values(params, &enc, pts))?;
    march(&lattice, &values, level)
}

/// Area-weighted uniform points on a mesh.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n == 0 {
        return Err(Error::Config("surface sample count must be positive".into()));
    }
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    Ok((0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangles[idx].map(|i| mesh.vertices[i]);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Exact nearest-neighbor index over a fixed point set.
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree: node `lo..hi` splits at its median on `axis(depth)`.
    order: Vec<usize>,
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build(&points, &mut order, 0);
        Self { points, order }
    }

    fn build(points: &[Vec3], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let (left, right) = idx.split_at_mut(mid);
        Self::build(points, left, depth + 1);
        Self::build(points, &mut right[1..], depth + 1);
    }

    /// Squared distance to the nearest point.
    pub fn nearest_dist2(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, depth: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[self.order[mid]];
        let d = dist2(p, q);
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= *best {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Mean distance from predicted points to the ground truth.
    pub accuracy: f64,
    /// Mean distance from ground-truth points to the prediction.
    pub completeness: f64,
    pub chamfer: f64,
    pub pred_samples: usize,
    pub gt_samples: usize,
}

fn mean_nearest(from: &[Vec3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|p| to.nearest_dist2(p).sqrt()).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

pub fn chamfer(pred: &[Vec3], gt: &[Vec3]) -> Result<ChamferReport> {
    if pred.is_empty() {
        return Err(Error::EmptyPointSet("predicted"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyPointSet("ground-truth"));
    }
    let accuracy = mean_nearest(pred, &KdTree::new(gt.to_vec()));
    let completeness = mean_nearest(gt, &KdTree::new(pred.to_vec()));
    Ok(ChamferReport {
        accuracy,
        completeness,
        chamfer: (accuracy + completeness) / 2.0,
        pred_samples: pred.len(),
        gt_samples: gt.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Architecture;
    use crate::grid::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> (f64, f64) {
        let one = |x: &[Vec3], y: &[Vec3]| {
            let d: Vec<f64> = x
                .iter()
                .map(|p| y.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min).sqrt())
                .collect();
            d.iter().sum::<f64>() / d.len() as f64
        };
        (one(a, b), one(b, a))
    }

    fn sphere_values(lattice: &Lattice, r: f64) -> Vec<f64> {
        lattice
            .sample(|pts| Ok(pts.iter().map(|p| if p.norm() < r { 1.0 } else { 0.0 }).collect()))
            .unwrap()
    }

    #[test]
    fn binary_sphere_vertices_and_manifold() {
        let lattice = Lattice::new(-1.0, 1.0, 64).unwrap();
        let mesh = march(&lattice, &sphere_values(&lattice, 0.5), 0.5).unwrap();
        assert!(mesh.triangles.len() > 1000);
        let diag = lattice.spacing() * 3f64.sqrt();
        for v in &mesh.vertices {
            assert!((v.norm() - 0.5).abs() <= diag);
        }
        assert_eq!(mesh.non_manifold_edges(), 0);
    }

    #[test]
    fn linear_field_vertices_on_plane() {
        let lattice = Lattice::new(-1.0, 1.0, 10).unwrap();
        let f = |p: &Vec3| 0.3 * p.x - 0.7 * p.y + 0.2 * p.z;
        let values = lattice.sample(|pts| Ok(pts.iter().map(f).collect())).unwrap();
        let mesh = march(&lattice, &values, 0.05).unwrap();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((f(v) - 0.05).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_field_is_empty() {
        let lattice = Lattice::new(-1.0, 1.0, 8).unwrap();
        let values = vec![0.2; 9 * 9 * 9];
        assert!(march(&lattice, &values, 0.5).unwrap().is_empty());
        assert!(Lattice::new(-1.0, 1.0, 7).is_err());
    }

    #[test]
    fn extraction_modes_agree_on_voxel_constant_field() {
        // A network whose inputs are the quantized coordinate and encoding is
        // constant per voxel; when lattice points are voxel centers both coord
        // modes see identical inputs.
        let grid = GridSpec::new(-1.0, 1.0, 16).unwrap();
        let enc = InputEncoder::new(2, 1, grid, CoordMode::Discrete).unwrap();
        let mut arch = Architecture::with_inputs(enc.position_len(), enc.direction_len());
        arch.geometry_width = 8;
        arch.color_width = 8;
        arch.feature_dim = 2;
        let params = FieldParams::init(4, arch, 0.5).unwrap();
        // Every lattice point is a voxel center, so quantization is the identity.
        let lattice = Lattice::new(-1.0 + 1.0 / 16.0, 1.0 - 1.0 / 16.0, 15).unwrap();
        let mesh = |mode| {
            let e = InputEncoder { mode, ..enc.clone() };
            let values = lattice.sample(|pts| geometry_values(&params, &e, pts)).unwrap();
            march(&lattice, &values, 0.5).unwrap()
        };
        assert_eq!(mesh(CoordMode::Discrete), mesh(CoordMode::Continuous));
    }

    #[test]
    fn obj_round_trip() {
        let lattice = Lattice::new(-1.0, 1.0, 16).unwrap();
        let mesh = march(&lattice, &sphere_values(&lattice, 0.6), 0.5).unwrap();
        let back = TriMesh::from_obj(&mesh.to_obj()).unwrap();
        assert_eq!(back, mesh);
        assert!(TriMesh::from_obj("f 1 2 3\n").is_err());
        assert!(TriMesh::from_obj("v 1 2\n").is_err());
    }

    #[test]
    fn samples_inside_single_triangle() {
        let mesh = TriMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_surface(&mesh, 1000, &mut rng).unwrap();
        for p in &pts {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        let again = sample_surface(&mesh, 1000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pts, again);
        assert!(matches!(
            sample_surface(&TriMesh::default(), 5, &mut rng),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn area_weighting_three_to_one() {
        // Triangle A has area 1.5, triangle B has area 0.5.
        let mesh = TriMesh {
            vertices: vec![
                Vec3::zeros(),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::y(),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(11.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        };
        let n = 10_000;
        let pts = sample_surface(&mesh, n, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let in_a = pts.iter().filter(|p| p.x < 5.0).count() as f64;
        let p = 0.75;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((in_a - n as f64 * p).abs() < 3.0 * sd, "{in_a}");
    }

    #[test]
    fn chamfer_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let r = chamfer(&a, &a).unwrap();
        assert_eq!((r.accuracy, r.completeness, r.chamfer), (0.0, 0.0, 0.0));
        let t = Vec3::new(0.01, -0.02, 0.005);
        let shifted: Vec<Vec3> = a.iter().map(|p| p + t).collect();
        let r = chamfer(&shifted, &a).unwrap();
        assert!(r.accuracy <= t.norm() + 1e-15);
        assert!(chamfer(&[], &a).is_err());
        assert!(chamfer(&a, &[]).is_err());
    }

    proptest! {
        #[test]
        fn kd_tree_matches_brute_force(seed in 0u64..1000, na in 1usize..150, nb in 1usize..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts = |n: usize| -> Vec<Vec3> {
                (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
            };
            let (a, b) = (pts(na), pts(nb));
            let r = chamfer(&a, &b).unwrap();
            let (acc, comp) = brute_chamfer(&a, &b);
            prop_assert_eq!(r.accuracy, acc);
            prop_assert_eq!(r.completeness, comp);
            let s = chamfer(&b, &a).unwrap();
            prop_assert_eq!((s.accuracy, s.completeness, s.chamfer), (r.completeness, r.accuracy, r.chamfer));
        }
    }
}
