//! The coordinate network: a small MLP from `(i, j[, α])` to RGB whose
//! parameters arrive as one flat vector.

use std::ops::Range;
use std::path::Path;

use ndautograd::{Activation, Graph, Scalar, Tensor, Var, DEFAULT_NORM_EPS};

use crate::checkpoint::{self, Kind, Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::imageio::write_atomic;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetNetConfig {
    /// `[in, hidden.., out]`; `in` is 2, or 3 with `scale_input`.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Standardize every hidden layer over the evaluation grid before its
    /// activation, with a per-feature gain and shift taken from θ.
    pub normalize_hidden: bool,
    /// Append the scale code α as a third input coordinate.
    pub scale_input: bool,
}

impl Default for TargetNetConfig {
    fn default() -> Self {
        TargetNetConfig {
            layer_widths: vec![2, 32, 64, 256, 64, 3],
            hidden_activation: Activation::Cosine,
            output_activation: Activation::Sigmoid,
            normalize_hidden: true,
            scale_input: false,
        }
    }
}

/// Offsets of one layer's parameters inside θ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in x fan_out`.
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub gain: Option<Range<usize>>,
    pub shift: Option<Range<usize>>,
}

impl LayerLayout {
    pub fn range(&self) -> Range<usize> {
        let end = self.shift.as_ref().map_or(self.bias.end, |s| s.end);
        self.weights.start..end
    }

    pub fn len(&self) -> usize {
        self.range().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TargetNetConfig {
    /// Default widths with α appended to the input.
    pub fn with_scale_input() -> Self {
        let mut c = TargetNetConfig {
            scale_input: true,
            ..Self::default()
        };
        c.layer_widths[0] = 3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        let expected_in = 2 + self.scale_input as usize;
        if w.len() < 2 || w.iter().any(|&v| v == 0) {
            return Err(Error::Config(format!("layer widths {w:?} need at least two positive entries")));
        }
        if w[0] != expected_in {
            return Err(Error::Config(format!(
                "input width {} does not match {expected_in} coordinates (scale_input = {})",
                w[0], self.scale_input
            )));
        }
        if *w.last().unwrap() != 3 {
            return Err(Error::Config(format!("output width must be 3 (RGB), got {}", w.last().unwrap())));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Canonical θ layout: layers in order, and within a layer weights,
    /// bias, then (hidden layers only) gain and shift.
    pub fn layers(&self) -> Vec<LayerLayout> {
        let n = self.num_layers();
        let mut offset = 0;
        let mut take = |len: usize| {
            let r = offset..offset + len;
            offset += len;
            r
        };
        self.layer_widths
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let weights = take(fan_in * fan_out);
                let bias = take(fan_out);
                let normalized = self.normalize_hidden && k + 1 < n;
                let gain = normalized.then(|| take(fan_out));
                let shift = normalized.then(|| take(fan_out));
                LayerLayout {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                    gain,
                    shift,
                }
            })
            .collect()
    }

    pub fn theta_length(&self) -> usize {
        self.layers().last().map_or(0, |l| l.range().end)
    }
}

pub fn theta_length(config: &TargetNetConfig) -> usize {
    config.theta_length()
}

/// Borrowed parameters of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerView<'a> {
    pub weights: &'a [f32],
    pub bias: &'a [f32],
    pub gain: Option<&'a [f32]>,
    pub shift: Option<&'a [f32]>,
}

impl LayerView<'_> {
    pub fn concat(views: &[LayerView<'_>]) -> Vec<f32> {
        let mut out = Vec::new();
        for v in views {
            out.extend_from_slice(v.weights);
            out.extend_from_slice(v.bias);
            out.extend_from_slice(v.gain.unwrap_or(&[]));
            out.extend_from_slice(v.shift.unwrap_or(&[]));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector {
    config: TargetNetConfig,
    values: Vec<f32>,
}

impl ThetaVector {
    pub fn new(config: TargetNetConfig, values: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let expected = config.theta_length();
        if values.len() != expected {
            return Err(Error::Partition {
                expected,
                actual: values.len(),
            });
        }
        Ok(ThetaVector { config, values })
    }

    pub fn config(&self) -> &TargetNetConfig {
        &self.config
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn partition(&self) -> Vec<LayerView<'_>> {
        let v = &self.values;
        self.config
            .layers()
            .into_iter()
            .map(|l| LayerView {
                weights: &v[l.weights],
                bias: &v[l.bias],
                gain: l.gain.map(|r| &v[r]),
                shift: l.shift.map(|r| &v[r]),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(Kind::Theta);
        write_target_config(&mut w, &self.config);
        w.u64(self.values.len() as u64);
        w.f32s(&self.values);
        write_atomic(path, &w.finish())
    }

    pub fn load(path: &Path) -> Result<ThetaVector> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ThetaVector> {
        let mut r = Reader::open(bytes, Kind::Theta)?;
        let config = read_target_config(&mut r)?;
        let n = r.u64()? as usize;
        let values = r.f32s(n)?;
        r.finish()?;
        ThetaVector::new(config, values).map_err(|e| Error::Checkpoint(format!("inconsistent θ record: {e}")))
    }
}

/// Equivalent to [`ThetaVector::new`]; errors with the expected and actual
/// lengths when they disagree.
pub fn partition(config: &TargetNetConfig, values: &[f32]) -> Result<Vec<Range<usize>>> {
    let expected = config.theta_length();
    if values.len() != expected {
        return Err(Error::Partition {
            expected,
            actual: values.len(),
        });
    }
    Ok(config.layers().iter().map(LayerLayout::range).collect())
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Cosine => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
    }
}

fn activation_from_code(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Cosine),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Sigmoid),
        _ => Err(Error::Checkpoint(format!("unknown activation code {code}"))),
    }
}

pub(crate) fn write_target_config(w: &mut Writer, c: &TargetNetConfig) {
    w.u32(c.layer_widths.len() as u32);
    for &v in &c.layer_widths {
        w.u32(v as u32);
    }
    w.u8(activation_code(c.hidden_activation));
    w.u8(activation_code(c.output_activation));
    w.u8(c.normalize_hidden as u8 | (c.scale_input as u8) << 1);
}

pub(crate) fn read_target_config(r: &mut Reader<'_>) -> Result<TargetNetConfig> {
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let layer_widths = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let hidden_activation = activation_from_code(r.u8()?)?;
    let output_activation = activation_from_code(r.u8()?)?;
    let flags = r.u8()?;
    let config = TargetNetConfig {
        layer_widths,
        hidden_activation,
        output_activation,
        normalize_hidden: flags & 1 != 0,
        scale_input: flags & 2 != 0,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid target config: {e}")))?;
    Ok(config)
}

/// Sample coordinates in `[0, 1]^2`, `i` along rows and `j` along columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<[f32; 2]>,
}

impl CoordGrid {
    /// Pixel centers `((r + 0.5) / rows, (c + 0.5) / cols)`, row-major.
    pub fn pixel_centers(rows: usize, cols: usize) -> Self {
        let ys: Vec<f64> = (0..rows).map(|r| (r as f64 + 0.5) / rows as f64).collect();
        let xs: Vec<f64> = (0..cols).map(|c| (c as f64 + 0.5) / cols as f64).collect();
        Self::from_axes(&ys, &xs)
    }

    /// Cartesian product of row and column coordinates, row-major.
    pub fn from_axes(ys: &[f64], xs: &[f64]) -> Self {
        let points = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| [y as f32, x as f32]))
            .collect();
        CoordGrid {
            rows: ys.len(),
            cols: xs.len(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[len, in]` network input; α is appended as a third column when the
    /// config takes it.
    pub fn to_input<T: Scalar>(&self, config: &TargetNetConfig, alpha: Option<f32>) -> Result<Tensor<T>> {
        match (config.scale_input, alpha) {
            (true, None) => return Err(Error::Config("this target network needs a scale input α".into())),
            (false, Some(_)) => return Err(Error::Config("this target network takes no scale input α".into())),
            _ => {}
        }
        if self.points.is_empty() {
            return Err(Error::Dimension("empty coordinate grid".into()));
        }
        let width = config.input_width();
        let mut data = Vec::with_capacity(self.points.len() * width);
        for p in &self.points {
            data.push(T::from_f64(p[0] as f64));
            data.push(T::from_f64(p[1] as f64));
            if let Some(a) = alpha {
                data.push(T::from_f64(a as f64));
            }
        }
        Ok(Tensor::new(vec![self.points.len(), width], data)?)
    }
}

/// Appends the target network to `g`. `theta` is a `[L]` vector and
/// `coords` a `[N, in]` input; returns `[N, 3]`.
pub fn forward_graph<T: Scalar>(g: &mut Graph<T>, config: &TargetNetConfig, theta: Var, coords: Var) -> Result<Var> {
    let expected = config.theta_length();
    if g.shape(theta) != [expected] {
        return Err(Error::Partition {
            expected,
            actual: g.value(theta).numel(),
        });
    }
    let n = g.shape(coords)[0];
    if config.normalize_hidden && n < 2 {
        return Err(Error::Precondition(format!(
            "normalized target network needs at least 2 grid points, got {n}"
        )));
    }
    let layers = config.layers();
    let last = layers.len() - 1;
    let slice = |g: &mut Graph<T>, r: &Range<usize>| g.narrow(theta, 0, r.start, r.len());
    let mut h = coords;
    for (k, layer) in layers.iter().enumerate() {
        let w = slice(g, &layer.weights)?;
        let w = g.reshape(w, &[layer.fan_in, layer.fan_out])?;
        let b = slice(g, &layer.bias)?;
        h = g.matmul(h, w)?;
        h = g.add_row_bias(h, b)?;
        if let (Some(gain), Some(shift)) = (&layer.gain, &layer.shift) {
            let gain = slice(g, gain)?;
            let shift = slice(g, shift)?;
            h = g.batch_normalize(h, gain, shift, T::from_f64(DEFAULT_NORM_EPS))?;
        }
        let act = if k == last {
            config.output_activation
        } else {
            config.hidden_activation
        };
        h = g.activation(h, act);
    }
    Ok(h)
}

/// `[len(grid), 3]` network output at every grid point. Normalization
/// statistics are taken over the whole grid.
pub fn forward(theta: &ThetaVector, grid: &CoordGrid, alpha: Option<f32>) -> Result<Tensor<f32>> {
    let config = theta.config();
    let mut g = Graph::<f32>::new();
    let input = g.constant(grid.to_input(config, alpha)?);
    let t = g.constant(Tensor::new(vec![theta.len()], theta.values().to_vec())?);
    let out = forward_graph(&mut g, config, t, input)?;
    Ok(g.value(out).clone())
}

/// Renders the pixel-center grid of a `rows x cols` RGB image.
pub fn render(theta: &ThetaVector, rows: usize, cols: usize, alpha: Option<f32>) -> Result<Image> {
    render_grid(theta, &CoordGrid::pixel_centers(rows, cols), alpha)
}

pub fn render_grid(theta: &ThetaVector, grid: &CoordGrid, alpha: Option<f32>) -> Result<Image> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(Error::Dimension(format!("cannot render a {}x{} grid", grid.rows, grid.cols)));
    }
    let out = forward(theta, grid, alpha)?;
    Image::new(grid.rows, grid.cols, 3, out.into_vec())
}
