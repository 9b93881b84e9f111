//! Virtual quantization grid.
//!
//! A [`GridSpec`] describes an axis-aligned cube `[lo, hi]^3` split into
//! `resolution^3` voxels. The set of voxel centers is never stored; every
//! center is computed from its index, so memory use does not depend on the
//! resolution. Continuous coordinates are discretized to the nearest center
//! with one division per axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub resolution: u64,
}

/// Integer address of one voxel. Components lie in `[0, resolution - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub i: u64,
    pub j: u64,
    pub k: u64,
}

impl VoxelIndex {
    pub const fn new(i: u64, j: u64, k: u64) -> Self {
        Self { i, j, k }
    }
}

/// A run of consecutive ray samples that fall into the same voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySampleRun {
    /// First continuous sample that landed in this voxel.
    pub rep_point: Vec3,
    pub voxel: VoxelIndex,
    /// Center of `voxel`.
    pub discrete_point: Vec3,
    /// Sum of the inter-sample distances owned by this run.
    pub delta: f64,
}

/// How the segment length of the last sample on a ray is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalGap {
    /// Mean of the preceding inter-sample gaps (zero for a single sample).
    MeanGap,
    /// A fixed length, e.g. the stratified bin width.
    Fixed(f64),
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, resolution: u64) -> Result<Self> {
        let grid = Self { lo, hi, resolution };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "bounds must be finite, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.hi <= self.lo {
            return Err(Error::InvalidGrid(format!(
                "hi ({}) must exceed lo ({})",
                self.hi, self.lo
            )));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidGrid("resolution must be at least 1".into()));
        }
        if self.interval() <= 0.0 {
            return Err(Error::InvalidGrid("voxel interval underflows to zero".into()));
        }
        Ok(())
    }

    /// Edge length of one voxel.
    #[inline]
    pub fn interval(&self) -> f64 {
        (self.hi - self.lo) / self.resolution as f64
    }

    /// Number of quantized coordinates, `resolution^3`. Saturates at `u128::MAX`.
    pub fn cell_count(&self) -> u128 {
        let r = self.resolution as u128;
        r.saturating_mul(r).saturating_mul(r)
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.i < self.resolution && v.j < self.resolution && v.k < self.resolution
    }

    pub fn check_index(&self, v: VoxelIndex) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::VoxelOutOfRange {
                i: v.i,
                j: v.j,
                k: v.k,
                resolution: self.resolution,
            })
        }
    }

    /// Center of voxel `v`. Out-of-range indices are rejected, never clamped.
    pub fn voxel_center(&self, v: VoxelIndex) -> Result<Vec3> {
        self.check_index(v)?;
        Ok(self.center_unchecked(v))
    }

    #[inline]
    fn center_unchecked(&self, v: VoxelIndex) -> Vec3 {
        let h = self.interval();
        Vec3::new(
            self.lo + (v.i as f64 + 0.5) * h,
            self.lo + (v.j as f64 + 0.5) * h,
            self.lo + (v.k as f64 + 0.5) * h,
        )
    }

    #[inline]
    fn axis_index(&self, x: f64, h: f64) -> u64 {
        let cell = ((x - self.lo) / h).floor();
        // NaN and negative values saturate to 0 in the cast.
        let cell = if cell >= self.resolution as f64 {
            self.resolution - 1
        } else {
            cell as u64
        };
        cell.min(self.resolution - 1)
    }

    /// Voxel containing `q`, clamped into the grid for points outside the cube.
    #[inline]
    pub fn voxel_of(&self, q: &Vec3) -> VoxelIndex {
        let h = self.interval();
        VoxelIndex {
            i: self.axis_index(q.x, h),
            j: self.axis_index(q.y, h),
            k: self.axis_index(q.z, h),
        }
    }

    /// Nearest-center discretization of `q`: the containing voxel and its center.
    #[inline]
    pub fn quantize(&self, q: &Vec3) -> (VoxelIndex, Vec3) {
        let v = self.voxel_of(q);
        (v, self.center_unchecked(v))
    }

    pub fn flat_index(&self, v: VoxelIndex) -> Result<u128> {
        self.check_index(v)?;
        let r = self.resolution as u128;
        Ok((v.i as u128 * r + v.j as u128) * r + v.k as u128)
    }

    pub fn from_flat_index(&self, flat: u128) -> Result<VoxelIndex> {
        let r = self.resolution as u128;
        if flat >= self.cell_count() {
            return Err(Error::InvalidGrid(format!(
                "flat index {flat} out of range for resolution {}",
                self.resolution
            )));
        }
        Ok(VoxelIndex {
            i: (flat / (r * r)) as u64,
            j: ((flat / r) % r) as u64,
            k: (flat % r) as u64,
        })
    }
}

/// Per-sample segment lengths along an ordered polyline. Entry `n` is the
/// distance to sample `n + 1`; the last entry is the terminal gap.
pub fn sample_deltas(points: &[Vec3], terminal: TerminalGap) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidRay("ray has no samples".into()));
    }
    let mut deltas: Vec<f64> = points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let last = match terminal {
        TerminalGap::Fixed(d) => d,
        TerminalGap::MeanGap if deltas.is_empty() => 0.0,
        TerminalGap::MeanGap => deltas.iter().sum::<f64>() / deltas.len() as f64,
    };
    deltas.push(last);
    Ok(deltas)
}

/// Merges consecutive samples that share a voxel into runs.
///
/// The gap between samples `n` and `n + 1` belongs to the run containing
/// sample `n`, so the run deltas partition the polyline length plus the
/// terminal gap.
pub fn dedup_ray_samples(
    grid: &GridSpec,
    points: &[Vec3],
    terminal: TerminalGap,
) -> Result<Vec<RaySampleRun>> {
    let deltas = sample_deltas(points, terminal)?;
    let mut runs: Vec<RaySampleRun> = Vec::with_capacity(points.len());
    for (p, d) in points.iter().zip(deltas) {
        let (voxel, center) = grid.quantize(p);
        match runs.last_mut() {
            Some(run) if run.voxel == voxel => run.delta += d,
            _ => runs.push(RaySampleRun {
                rep_point: *p,
                voxel,
                discrete_point: center,
                delta: d,
            }),
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_grid(r: u64) -> GridSpec {
        GridSpec::new(-1.0, 1.0, r).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(1.0, 1.0, 4).is_err());
        assert!(GridSpec::new(1.0, -1.0, 4).is_err());
        assert!(GridSpec::new(-1.0, 1.0, 0).is_err());
        assert!(GridSpec::new(f64::NAN, 1.0, 4).is_err());
    }

    #[test]
    fn centers() {
        let g = unit_grid(2);
        let c = g.voxel_center(VoxelIndex::new(0, 0, 0)).unwrap();
        assert_eq!(c, Vec3::new(-0.5, -0.5, -0.5));

        let g = GridSpec::new(0.0, 4.0, 4).unwrap();
        let c = g.voxel_center(VoxelIndex::new(3, 0, 1)).unwrap();
        assert_eq!(c, Vec3::new(3.5, 0.5, 1.5));

        let g = GridSpec::new(-2.5, 2.5, 51200).unwrap();
        let c = g.voxel_center(VoxelIndex::new(0, 0, 0)).unwrap();
        let expected = -2.5 + 0.5 * (5.0 / 51200.0);
        for a in 0..3 {
            assert_relative_eq!(c[a], expected, max_relative = 1e-15);
        }
    }

    #[test]
    fn center_rejects_out_of_range() {
        let g = unit_grid(4);
        assert!(matches!(
            g.voxel_center(VoxelIndex::new(4, 0, 0)),
            Err(Error::VoxelOutOfRange { .. })
        ));
    }

    #[test]
    fn quantize_hand_checked() {
        let g = unit_grid(2);
        let (_, c) = g.quantize(&Vec3::new(0.3, -0.2, 0.99));
        assert_eq!(c, Vec3::new(0.5, -0.5, 0.5));
    }

    #[test]
    fn quantize_faces_and_borders() {
        let g = unit_grid(2);
        // face between voxel 0 and 1 goes to the higher index
        assert_eq!(g.voxel_of(&Vec3::new(0.0, 0.0, 0.0)), VoxelIndex::new(1, 1, 1));
        // upper boundary clamps into the last voxel
        assert_eq!(g.voxel_of(&Vec3::new(1.0, 1.0, 1.0)), VoxelIndex::new(1, 1, 1));
        // far outside clamps to the border
        assert_eq!(g.voxel_of(&Vec3::new(-7.0, 9.0, 0.2)), VoxelIndex::new(0, 1, 1));
        assert_eq!(g.voxel_of(&Vec3::new(f64::NAN, 0.2, 0.2)).i, 0);
    }

    #[test]
    fn flat_index_round_trip() {
        let g = unit_grid(7);
        for flat in 0..g.cell_count() {
            let v = g.from_flat_index(flat).unwrap();
            assert_eq!(g.flat_index(v).unwrap(), flat);
        }
        assert!(g.from_flat_index(343).is_err());
    }

    #[test]
    fn dedup_no_merge() {
        let g = unit_grid(4);
        let pts = [
            Vec3::new(-0.9, 0.1, 0.1),
            Vec3::new(-0.4, 0.1, 0.1),
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.6, 0.1, 0.1),
        ];
        let runs = dedup_ray_samples(&g, &pts, TerminalGap::Fixed(0.25)).unwrap();
        assert_eq!(runs.len(), 4);
        for r in &runs[..3] {
            assert_relative_eq!(r.delta, 0.5, epsilon = 1e-15);
        }
        assert_eq!(runs[3].delta, 0.25);
    }

    #[test]
    fn dedup_full_merge() {
        let g = unit_grid(2);
        let pts = [
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.2, 0.1, 0.1),
            Vec3::new(0.4, 0.1, 0.1),
        ];
        let runs = dedup_ray_samples(&g, &pts, TerminalGap::MeanGap).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].rep_point, pts[0]);
        // polyline 0.3 + mean gap 0.15
        assert_relative_eq!(runs[0].delta, 0.45, epsilon = 1e-15);
    }

    #[test]
    fn dedup_rejects_empty() {
        assert!(matches!(
            dedup_ray_samples(&unit_grid(2), &[], TerminalGap::MeanGap),
            Err(Error::InvalidRay(_))
        ));
    }

    #[test]
    fn huge_resolution_needs_no_storage() {
        let g = GridSpec::new(-1.0, 1.0, 1 << 30).unwrap();
        assert_eq!(g.cell_count(), 1u128 << 90);
        let (v, c) = g.quantize(&Vec3::new(0.123, -0.456, 0.999_999));
        assert!(g.contains(v));
        assert!((c - Vec3::new(0.123, -0.456, 0.999_999)).amax() <= g.interval() / 2.0);
        let last = VoxelIndex::new((1 << 30) - 1, 0, 7);
        assert_eq!(g.from_flat_index(g.flat_index(last).unwrap()).unwrap(), last);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -1.0f64..1.0
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(x in coord(), y in coord(), z in coord(), r in 1u64..2000) {
            let g = unit_grid(r);
            let (v, c) = g.quantize(&Vec3::new(x, y, z));
            let (v2, c2) = g.quantize(&c);
            prop_assert_eq!(v, v2);
            prop_assert_eq!(c, c2);
        }

        #[test]
        fn quantize_error_is_half_interval(x in coord(), y in coord(), z in coord(), r in 1u64..5000) {
            let g = unit_grid(r);
            let q = Vec3::new(x, y, z);
            let (_, c) = g.quantize(&q);
            prop_assert!((q - c).amax() <= g.interval() / 2.0 * (1.0 + 1e-12));
        }

        #[test]
        fn dedup_conserves_length(
            pts in prop::collection::vec((coord(), coord(), coord()), 1..40),
            r in 1u64..32,
        ) {
            let g = unit_grid(r);
            let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let runs = dedup_ray_samples(&g, &pts, TerminalGap::Fixed(0.1)).unwrap();
            prop_assert!(runs.len() <= pts.len());
            let polyline: f64 = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
            let total: f64 = runs.iter().map(|r| r.delta).sum();
            prop_assert!((total - (polyline + 0.1)).abs() <= 1e-9 * (1.0 + polyline));
            for w in runs.windows(2) {
                prop_assert_ne!(w[0].voxel, w[1].voxel);
            }
            for run in &runs {
                prop_assert_eq!(run.discrete_point, g.voxel_center(run.voxel).unwrap());
            }
        }
    }
}
