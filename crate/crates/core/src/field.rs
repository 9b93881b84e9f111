//! Coordinate network: a geometry MLP producing an occupancy logit (or raw
//! density) plus a feature vector, and a color MLP conditioned on that feature
//! and the encoded view direction.
//!
//! All parameters live in one flat vector. Batched forward passes return a
//! [`ForwardRecord`] which [`FieldParams::backward`] consumes to accumulate
//! exact reverse-mode gradients into a [`GradientTape`].

use std::fmt;
use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the raw geometry output is turned into something the renderer composites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    /// Logistic of the logit, composited as occupancy in `[0, 1]`.
    Occupancy,
    /// Softplus of the output, composited as volume density.
    Density,
}

impl GeometryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeometryKind::Occupancy => "occupancy",
            GeometryKind::Density => "density",
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy" => Ok(GeometryKind::Occupancy),
            "density" => Ok(GeometryKind::Density),
            other => Err(Error::Config(format!("unknown compositing '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub position_inputs: usize,
    pub direction_inputs: usize,
    pub geometry_layers: usize,
    pub geometry_width: usize,
    pub feature_dim: usize,
    pub color_layers: usize,
    pub color_width: usize,
    pub geometry: GeometryKind,
}

impl Architecture {
    /// Default network for the given input sizes: 4x64 geometry, 32-d feature, 2x64 color.
    pub fn with_inputs(position_inputs: usize, direction_inputs: usize) -> Self {
        Self {
            position_inputs,
            direction_inputs,
            geometry_layers: 4,
            geometry_width: 64,
            feature_dim: 32,
            color_layers: 2,
            color_width: 64,
            geometry: GeometryKind::Occupancy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("position_inputs", self.position_inputs),
            ("direction_inputs", self.direction_inputs),
            ("geometry_layers", self.geometry_layers),
            ("geometry_width", self.geometry_width),
            ("color_layers", self.color_layers),
            ("color_width", self.color_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("architecture {name} must be positive")));
            }
        }
        Ok(())
    }

    fn geometry_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.position_inputs];
        dims.extend(std::iter::repeat_n(self.geometry_width, self.geometry_layers));
        dims.push(1 + self.feature_dim);
        dims
    }

    fn color_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.feature_dim + self.direction_inputs];
        dims.extend(std::iter::repeat_n(self.color_width, self.color_layers));
        dims.push(3);
        dims
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "position_inputs={}\ndirection_inputs={}\ngeometry_layers={}\ngeometry_width={}\n\
             feature_dim={}\ncolor_layers={}\ncolor_width={}\ngeometry={}\n",
            self.position_inputs,
            self.direction_inputs,
            self.geometry_layers,
            self.geometry_width,
            self.feature_dim,
            self.color_layers,
            self.color_width,
            self.geometry
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut arch = Architecture::with_inputs(0, 0);
        let mut seen = 0usize;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed architecture line '{line}'")))?;
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("architecture key {key}: bad value '{value}'")))
            };
            match key {
                "position_inputs" => arch.position_inputs = num()?,
                "direction_inputs" => arch.direction_inputs = num()?,
                "geometry_layers" => arch.geometry_layers = num()?,
                "geometry_width" => arch.geometry_width = num()?,
                "feature_dim" => arch.feature_dim = num()?,
                "color_layers" => arch.color_layers = num()?,
                "color_width" => arch.color_width = num()?,
                "geometry" => arch.geometry = value.parse()?,
                other => return Err(Error::Config(format!("unknown architecture key '{other}'"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(Error::Config(format!("architecture text has {seen} keys, expected 8")));
        }
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl Dense {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.weights..self.weights + self.inputs * self.outputs
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias..self.bias + self.outputs
    }
}

/// Maps each dense layer to its slice of the flat parameter vector.
/// Weights are stored input-major, `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    geometry: Vec<Dense>,
    color: Vec<Dense>,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut build = |dims: &[usize]| {
            dims.windows(2)
                .map(|w| {
                    let layer = Dense {
                        inputs: w[0],
                        outputs: w[1],
                        weights: offset,
                        bias: offset + w[0] * w[1],
                    };
                    offset += w[0] * w[1] + w[1];
                    layer
                })
                .collect::<Vec<_>>()
        };
        let geometry = build(&arch.geometry_dims());
        let color = build(&arch.color_dims());
        Self {
            geometry,
            color,
            total: offset,
        }
    }
}

/// Network output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    /// Occupancy logit or pre-activation density.
    pub geometry: f64,
    /// Color after the output sigmoid.
    pub color: [f64; 3],
    pub feature: Vec<f64>,
}

/// Outputs for a batch of samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBatch {
    pub geometry: Vec<f64>,
    pub color: Array2<f64>,
    pub feature: Array2<f64>,
}

/// Upstream derivatives for a batch: d(loss)/d(geometry) and d(loss)/d(color).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldUpstream {
    pub geometry: Vec<f64>,
    pub color: Array2<f64>,
}

impl FieldUpstream {
    pub fn zeros(rows: usize) -> Self {
        Self {
            geometry: vec![0.0; rows],
            color: Array2::zeros((rows, 3)),
        }
    }
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    parameter_count: usize,
    rows: usize,
    /// Input to each geometry layer, then the pre-activation of each hidden layer.
    geometry_inputs: Vec<Array2<f64>>,
    geometry_pre: Vec<Array2<f64>>,
    color_inputs: Vec<Array2<f64>>,
    color_pre: Vec<Array2<f64>>,
    color_out: Array2<f64>,
}

impl ForwardRecord {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Gradient accumulator shaped like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub grad: Vec<f64>,
}

impl GradientTape {
    pub fn new(parameter_count: usize) -> Self {
        Self {
            grad: vec![0.0; parameter_count],
        }
    }

    pub fn zero(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds another tape entrywise.
    pub fn merge(&mut self, other: &GradientTape) {
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.grad.iter_mut().for_each(|g| *g *= factor);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    arch: Architecture,
    layout: Layout,
    pub values: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dense_forward(values: &[f64], layer: &Dense, input: &Array2<f64>) -> Array2<f64> {
    let w = ArrayView2::from_shape((layer.inputs, layer.outputs), &values[layer.weight_range()])
        .expect("layout matches parameter vector");
    let b = &values[layer.bias_range()];
    let mut out = Array2::zeros((input.nrows(), layer.outputs));
    for mut row in out.rows_mut() {
        row.as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(b);
    }
    general_mat_mul(1.0, input, &w, 1.0, &mut out);
    out
}

/// Accumulates weight and bias gradients of one layer and returns the gradient
/// with respect to its input.
fn dense_backward(
    values: &[f64],
    grad: &mut [f64],
    layer: &Dense,
    input: &Array2<f64>,
    upstream: &Array2<f64>,
) -> Array2<f64> {
    {
        let mut gw = ArrayViewMut2::from_shape(
            (layer.inputs, layer.outputs),
            &mut grad[layer.weight_range()],
        )
        .expect("layout matches gradient vector");
        general_mat_mul(1.0, &input.t(), upstream, 1.0, &mut gw);
    }
    let gb = &mut grad[layer.bias_range()];
    for row in upstream.rows() {
        for (g, u) in gb.iter_mut().zip(row) {
            *g += u;
        }
    }
    let w = ArrayView2::from_shape((layer.inputs, layer.outputs), &values[layer.weight_range()])
        .expect("layout matches parameter vector");
    upstream.dot(&w.t())
}

fn softplus_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &z| *g *= sigmoid(z));
}

impl FieldParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let values = vec![0.0; layout.total];
        Ok(Self {
            arch,
            layout,
            values,
        })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        if values.len() != params.values.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, architecture needs {}",
                values.len(),
                params.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        params.values = values;
        Ok(params)
    }

    /// Uniform Glorot initialization with zero biases, except the geometry
    /// output bias which is set so the initial field sits near `prior`
    /// (occupancy probability, or density for density fields).
    pub fn init(seed: u64, arch: Architecture, prior: f64) -> Result<Self> {
        if !(prior > 0.0 && prior.is_finite()) || (arch.geometry == GeometryKind::Occupancy && prior >= 1.0) {
            return Err(Error::Config(format!("initial prior {prior} out of range")));
        }
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = params
            .layout
            .geometry
            .iter()
            .chain(&params.layout.color)
            .copied()
            .collect();
        for layer in &layers {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut params.values[layer.weight_range()] {
                *w = rng.gen_range(-a..a);
            }
        }
        let out = params.layout.geometry.last().expect("geometry head").bias;
        params.values[out] = match params.arch.geometry {
            GeometryKind::Occupancy => (prior / (1.0 - prior)).ln(),
            GeometryKind::Density => prior.exp_m1().ln(),
        };
        Ok(params)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn new_tape(&self) -> GradientTape {
        GradientTape::new(self.values.len())
    }

    fn check_inputs(&self, positions: &Array2<f64>, directions: Option<&Array2<f64>>) -> Result<()> {
        if positions.ncols() != self.arch.position_inputs {
            return Err(Error::Shape(format!(
                "position input has {} columns, network expects {}",
                positions.ncols(),
                self.arch.position_inputs
            )));
        }
        if let Some(d) = directions {
            if d.ncols() != self.arch.direction_inputs {
                return Err(Error::Shape(format!(
                    "direction input has {} columns, network expects {}",
                    d.ncols(),
                    self.arch.direction_inputs
                )));
            }
            if d.nrows() != positions.nrows() {
                return Err(Error::Shape(format!(
                    "{} position rows but {} direction rows",
                    positions.nrows(),
                    d.nrows()
                )));
            }
        }
        Ok(())
    }

    fn mlp_forward(
        &self,
        layers: &[Dense],
        input: Array2<f64>,
        inputs: &mut Vec<Array2<f64>>,
        pres: &mut Vec<Array2<f64>>,
    ) -> Array2<f64> {
        let mut act = input;
        for (n, layer) in layers.iter().enumerate() {
            let z = dense_forward(&self.values, layer, &act);
            inputs.push(act);
            if n + 1 == layers.len() {
                return z;
            }
            act = z.mapv(softplus);
            pres.push(z);
        }
        unreachable!("MLP has at least one layer")
    }

    /// Geometry head only; the color network is skipped.
    pub fn geometry_batch(&self, positions: &Array2<f64>) -> Result<Vec<f64>> {
        self.check_inputs(positions, None)?;
        let mut act = positions.clone();
        let layers = &self.layout.geometry;
        for (n, layer) in layers.iter().enumerate() {
            let z = dense_forward(&self.values, layer, &act);
            if n + 1 == layers.len() {
                return Ok(z.column(0).to_vec());
            }
            act = z.mapv(softplus);
        }
        unreachable!("MLP has at least one layer")
    }

    /// Evaluates a batch. Row `n` of `positions` and `directions` describe sample `n`.
    pub fn forward_batch(
        &self,
        positions: &Array2<f64>,
        directions: &Array2<f64>,
    ) -> Result<(FieldBatch, ForwardRecord)> {
        self.check_inputs(positions, Some(directions))?;
        let rows = positions.nrows();
        let mut geometry_inputs = Vec::with_capacity(self.layout.geometry.len());
        let mut geometry_pre = Vec::with_capacity(self.layout.geometry.len());
        let head = self.mlp_forward(
            &self.layout.geometry,
            positions.clone(),
            &mut geometry_inputs,
            &mut geometry_pre,
        );
        let geometry = head.column(0).to_vec();
        let feature = head.slice(s![.., 1..]).to_owned();

        let f = self.arch.feature_dim;
        let mut color_in = Array2::zeros((rows, f + self.arch.direction_inputs));
        color_in.slice_mut(s![.., ..f]).assign(&feature);
        color_in.slice_mut(s![.., f..]).assign(directions);
        let mut color_inputs = Vec::with_capacity(self.layout.color.len());
        let mut color_pre = Vec::with_capacity(self.layout.color.len());
        let logits = self.mlp_forward(&self.layout.color, color_in, &mut color_inputs, &mut color_pre);
        let color = logits.mapv(sigmoid);

        let record = ForwardRecord {
            parameter_count: self.values.len(),
            rows,
            geometry_inputs,
            geometry_pre,
            color_inputs,
            color_pre,
            color_out: color.clone(),
        };
        Ok((
            FieldBatch {
                geometry,
                color,
                feature,
            },
            record,
        ))
    }

    /// Single-sample evaluation. `position` is `(coordinate, encoding)`,
    /// `direction` is `(direction, encoding)`.
    pub fn forward(&self, position: &[f64], direction: &[f64]) -> Result<FieldOutput> {
        let p = Array2::from_shape_vec((1, position.len()), position.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let d = Array2::from_shape_vec((1, direction.len()), direction.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (batch, _) = self.forward_batch(&p, &d)?;
        Ok(FieldOutput {
            geometry: batch.geometry[0],
            color: [batch.color[[0, 0]], batch.color[[0, 1]], batch.color[[0, 2]]],
            feature: batch.feature.row(0).to_vec(),
        })
    }

    fn mlp_backward(
        &self,
        grad: &mut [f64],
        layers: &[Dense],
        inputs: &[Array2<f64>],
        pres: &[Array2<f64>],
        upstream: Array2<f64>,
    ) -> Array2<f64> {
        let mut g = upstream;
        for n in (0..layers.len()).rev() {
            g = dense_backward(&self.values, grad, &layers[n], &inputs[n], &g);
            if n > 0 {
                softplus_backward(&mut g, &pres[n - 1]);
            }
        }
        g
    }

    /// Accumulates d(loss)/d(params) into `tape` given upstream derivatives for
    /// the batch recorded in `record`.
    pub fn backward(
        &self,
        record: &ForwardRecord,
        upstream: &FieldUpstream,
        tape: &mut GradientTape,
    ) -> Result<()> {
        if record.parameter_count != self.values.len() || tape.grad.len() != self.values.len() {
            return Err(Error::Shape(
                "forward record or tape does not belong to this network".into(),
            ));
        }
        if upstream.geometry.len() != record.rows || upstream.color.dim() != (record.rows, 3) {
            return Err(Error::Shape(format!(
                "upstream covers {} rows, forward pass recorded {}",
                upstream.geometry.len(),
                record.rows
            )));
        }
        let mut g_color = upstream.color.clone();
        g_color.zip_mut_with(&record.color_out, |g, &c| *g *= c * (1.0 - c));
        let g_color_in = self.mlp_backward(
            &mut tape.grad,
            &self.layout.color,
            &record.color_inputs,
            &record.color_pre,
            g_color,
        );

        let f = self.arch.feature_dim;
        let mut g_head = Array2::zeros((record.rows, 1 + f));
        g_head
            .column_mut(0)
            .assign(&ndarray::ArrayView1::from(&upstream.geometry[..]));
        g_head
            .slice_mut(s![.., 1..])
            .assign(&g_color_in.slice(s![.., ..f]));
        self.mlp_backward(
            &mut tape.grad,
            &self.layout.geometry,
            &record.geometry_inputs,
            &record.geometry_pre,
            g_head,
        );
        Ok(())
    }
}
