//! Sinusoidal positional encoding of coordinates and view directions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::Vec3;

/// Geometric frequency band `pi, 2 pi, 4 pi, ..., 2^(L-1) pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBand {
    frequencies: Vec<f64>,
}

impl FrequencyBand {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("frequency band needs at least one frequency".into()));
        }
        if count > 60 {
            return Err(Error::Config(format!("frequency count {count} is too large")));
        }
        let frequencies = (0..count).map(|l| (1u64 << l) as f64 * PI).collect();
        Ok(Self { frequencies })
    }

    pub fn count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Encoded length for a `dim`-dimensional input.
    pub fn output_len(&self, dim: usize) -> usize {
        2 * self.count() * dim
    }

    /// Writes the encoding of `x` into `out`, which must hold `output_len(x.len())` values.
    /// Per element the layout is `sin w1 x, cos w1 x, ..., sin wL x, cos wL x`.
    pub fn encode_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.output_len(x.len()) {
            return Err(Error::Shape(format!(
                "encoding buffer holds {} values, need {}",
                out.len(),
                self.output_len(x.len())
            )));
        }
        let per = 2 * self.count();
        for (chunk, &v) in out.chunks_exact_mut(per).zip(x) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("cannot encode coordinate {v}")));
            }
            for (pair, &w) in chunk.chunks_exact_mut(2).zip(&self.frequencies) {
                let (s, c) = (w * v).sin_cos();
                pair[0] = s;
                pair[1] = c;
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncodedVector> {
        let mut values = vec![0.0; self.output_len(x.len())];
        self.encode_into(x, &mut values)?;
        Ok(EncodedVector(values))
    }

    /// Encoding of the nearest quantized coordinate of `q`.
    pub fn encode_discrete(&self, grid: &GridSpec, q: &Vec3) -> Result<EncodedVector> {
        let (_, center) = grid.quantize(q);
        self.encode(center.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector(pub Vec<f64>);

impl EncodedVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which coordinate (continuous or quantized) feeds the raw-coordinate and the
/// encoded part of the position input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    Continuous,
    Discrete,
    /// Quantized coordinate, encoding of the continuous coordinate.
    MixedPeContinuous,
    /// Continuous coordinate, encoding of the quantized coordinate.
    MixedCoordContinuous,
}

impl CoordMode {
    pub const ALL: [CoordMode; 4] = [
        CoordMode::Continuous,
        CoordMode::Discrete,
        CoordMode::MixedPeContinuous,
        CoordMode::MixedCoordContinuous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoordMode::Continuous => "continuous",
            CoordMode::Discrete => "discrete",
            CoordMode::MixedPeContinuous => "mixed_pe_continuous",
            CoordMode::MixedCoordContinuous => "mixed_coord_continuous",
        }
    }

    pub fn coordinate_is_discrete(self) -> bool {
        matches!(self, CoordMode::Discrete | CoordMode::MixedPeContinuous)
    }

    pub fn encoding_is_discrete(self) -> bool {
        matches!(self, CoordMode::Discrete | CoordMode::MixedCoordContinuous)
    }

    /// Only the pure discrete mode produces inputs that are constant per voxel,
    /// so only it may merge samples into runs.
    pub fn deduplicates(self) -> bool {
        self == CoordMode::Discrete
    }
}

impl fmt::Display for CoordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoordMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown coordinate mode '{s}'")))
    }
}

/// Position and direction encoders used to build network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEncoder {
    pub position: FrequencyBand,
    pub direction: FrequencyBand,
    pub grid: GridSpec,
    pub mode: CoordMode,
}

impl InputEncoder {
    pub fn new(pos_freqs: usize, dir_freqs: usize, grid: GridSpec, mode: CoordMode) -> Result<Self> {
        grid.validate()?;
        Ok(Self {
            position: FrequencyBand::new(pos_freqs)?,
            direction: FrequencyBand::new(dir_freqs)?,
            grid,
            mode,
        })
    }

    pub fn position_len(&self) -> usize {
        3 + self.position.output_len(3)
    }

    pub fn direction_len(&self) -> usize {
        3 + self.direction.output_len(3)
    }

    /// Writes `(coordinate, encoding)` for the sample `q` according to the mode.
    pub fn position_into(&self, q: &Vec3, out: &mut [f64]) -> Result<()> {
        if out.len() != self.position_len() {
            return Err(Error::Shape(format!(
                "position buffer holds {} values, need {}",
                out.len(),
                self.position_len()
            )));
        }
        let center = self.grid.quantize(q).1;
        let coord = if self.mode.coordinate_is_discrete() { center } else { *q };
        let enc = if self.mode.encoding_is_discrete() { center } else { *q };
        out[..3].copy_from_slice(coord.as_slice());
        self.position.encode_into(enc.as_slice(), &mut out[3..])
    }

    /// Directions are never quantized.
    pub fn direction_into(&self, d: &Vec3, out: &mut [f64]) -> Result<()> {
        if out.len() != self.direction_len() {
            return Err(Error::Shape(format!(
                "direction buffer holds {} values, need {}",
                out.len(),
                self.direction_len()
            )));
        }
        out[..3].copy_from_slice(d.as_slice());
        self.direction.encode_into(d.as_slice(), &mut out[3..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_input() {
        let band = FrequencyBand::new(2).unwrap();
        let e = band.encode(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.0, [0.0, 1.0, 0.0, 1.0].repeat(3));
    }

    #[test]
    fn quarter_input() {
        let band = FrequencyBand::new(1).unwrap();
        let e = band.encode(&[0.25]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(e.0[0], s, epsilon = 1e-15);
        assert_relative_eq!(e.0[1], s, epsilon = 1e-15);
    }

    #[test]
    fn top_frequency() {
        let band = FrequencyBand::new(4).unwrap();
        assert_eq!(band.frequencies()[3], 8.0 * PI);
        assert!(FrequencyBand::new(0).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let band = FrequencyBand::new(3).unwrap();
        assert!(matches!(band.encode(&[0.0, f64::INFINITY]), Err(Error::NonFinite(_))));
        assert!(band.encode(&[f64::NAN]).is_err());
    }

    #[test]
    fn discrete_at_center_matches_continuous() {
        let grid = GridSpec::new(-1.0, 1.0, 8).unwrap();
        let band = FrequencyBand::new(6).unwrap();
        let c = grid.voxel_center(crate::grid::VoxelIndex::new(2, 5, 7)).unwrap();
        assert_eq!(
            band.encode_discrete(&grid, &c).unwrap(),
            band.encode(c.as_slice()).unwrap()
        );
    }

    #[test]
    fn mode_parsing() {
        for m in CoordMode::ALL {
            assert_eq!(m.as_str().parse::<CoordMode>().unwrap(), m);
        }
        assert!("nearest".parse::<CoordMode>().is_err());
    }

    #[test]
    fn position_input_sources() {
        let grid = GridSpec::new(-1.0, 1.0, 4).unwrap();
        let q = Vec3::new(0.1, 0.2, -0.3);
        let center = grid.quantize(&q).1;
        let band = FrequencyBand::new(2).unwrap();
        for mode in CoordMode::ALL {
            let enc = InputEncoder::new(2, 1, grid, mode).unwrap();
            let mut out = vec![0.0; enc.position_len()];
            enc.position_into(&q, &mut out).unwrap();
            let coord = if mode.coordinate_is_discrete() { center } else { q };
            let pe = if mode.encoding_is_discrete() { center } else { q };
            assert_eq!(&out[..3], coord.as_slice());
            assert_eq!(&out[3..], band.encode(pe.as_slice()).unwrap().as_slice());
        }
    }

    proptest! {
        #[test]
        fn band_doubles_exactly(l in 1usize..=12) {
            let band = FrequencyBand::new(l).unwrap();
            let f = band.frequencies();
            prop_assert_eq!(f[0], PI);
            for w in f.windows(2) {
                prop_assert_eq!(w[1] / w[0], 2.0);
            }
        }

        #[test]
        fn outputs_in_unit_range(x in prop::collection::vec(-100.0f64..100.0, 1..6), l in 1usize..10) {
            let band = FrequencyBand::new(l).unwrap();
            let e = band.encode(&x).unwrap();
            prop_assert_eq!(e.len(), 2 * l * x.len());
            prop_assert!(e.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
