//! The convolutional hypernetwork: an image patch in, one θ out.
//!
//! Shared trunk: inception block, four factorized conv stages with a skip
//! from the first stage's input to the last stage's output, then max pool.
//! One branch per target layer turns the pooled features into that layer's
//! slice of θ.

use ndautograd::{Conv2dSpec, Graph, PoolKind, Scalar, Tensor, Var, DEFAULT_NORM_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::targetnet::{TargetNetConfig, ThetaVector};

/// Output widths of the four inception paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InceptionChannels {
    pub conv1: usize,
    pub conv3: usize,
    pub conv5: usize,
    /// 3x3 average-pool path. When equal to the input channel count the
    /// pooled input passes through unchanged; otherwise a 1x1 projection
    /// follows the pool.
    pub pool: usize,
}

impl InceptionChannels {
    pub fn total(&self) -> usize {
        self.conv1 + self.conv3 + self.conv5 + self.pool
    }
}

/// How a branch turns its feature map into a flat parameter slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchHead {
    /// Flatten, then a dense projection to exactly `n_k` values.
    FullyConnected,
    /// A 1x1 convolution to `channels` maps, flattened and cut to `n_k`.
    Reshape { channels: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub head: BranchHead,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HyperNetConfig {
    pub patch_size: usize,
    pub in_channels: usize,
    pub inception: InceptionChannels,
    pub backbone_channels: Vec<usize>,
    pub backbone_kernel: usize,
    /// Max-pool window and stride at the end of the trunk.
    pub pool: usize,
    pub residual: bool,
    pub branches: Vec<BranchSpec>,
}

/// Layers at least this large get a reshape head instead of a dense one.
const RESHAPE_THRESHOLD: usize = 4096;

impl HyperNetConfig {
    /// The default channel plan sized for `target`.
    pub fn default_for(target: &TargetNetConfig) -> Self {
        Self::for_patch(target, 32)
    }

    /// The default channel plan for square input patches of side `patch`.
    pub fn for_patch(target: &TargetNetConfig, patch: usize) -> Self {
        let inception = InceptionChannels {
            conv1: 16,
            conv3: 16,
            conv5: 16,
            pool: 16,
        };
        let width = inception.total();
        let mut config = HyperNetConfig {
            patch_size: patch,
            in_channels: 3,
            inception,
            backbone_channels: vec![width; 4],
            backbone_kernel: 3,
            pool: 2,
            residual: true,
            branches: Vec::new(),
        };
        config.branches = config.plan_branches(target, &[32, 32], 3);
        config
    }

    /// Branch specs for `target` using dense heads for small layers and
    /// reshape heads for large ones.
    pub fn plan_branches(&self, target: &TargetNetConfig, conv_channels: &[usize], kernel: usize) -> Vec<BranchSpec> {
        let cells = self.feature_side().pow(2);
        target
            .layers()
            .iter()
            .map(|l| {
                let n = l.len();
                let head = if n >= RESHAPE_THRESHOLD {
                    BranchHead::Reshape {
                        channels: n.div_ceil(cells.max(1)),
                    }
                } else {
                    BranchHead::FullyConnected
                };
                BranchSpec {
                    conv_channels: conv_channels.to_vec(),
                    kernel,
                    head,
                }
            })
            .collect()
    }

    pub fn feature_side(&self) -> usize {
        self.patch_size / self.pool.max(1)
    }

    pub fn trunk_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&self.inception.total())
    }

    fn validate(&self, target: &TargetNetConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let i = &self.inception;
        if self.patch_size < 5 {
            return bad(format!("patch size {} is below the 5x5 inception minimum", self.patch_size));
        }
        if self.in_channels == 0 || [i.conv1, i.conv3, i.conv5, i.pool].contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone needs at least one stage of positive width".into());
        }
        if self.backbone_kernel % 2 == 0 {
            return bad(format!("backbone kernel {} must be odd", self.backbone_kernel));
        }
        if self.pool == 0 || self.patch_size % self.pool != 0 {
            return bad(format!("pool {} must divide patch size {}", self.pool, self.patch_size));
        }
        if self.residual && self.trunk_channels() != i.total() {
            return bad(format!(
                "residual skip needs the last backbone width ({}) to equal the inception width ({})",
                self.trunk_channels(),
                i.total()
            ));
        }
        let layers = target.layers();
        if self.branches.len() != layers.len() {
            return bad(format!(
                "{} branches for a {}-layer target network",
                self.branches.len(),
                layers.len()
            ));
        }
        let cells = self.feature_side().pow(2);
        let mut emitted = 0;
        for (k, (b, layer)) in self.branches.iter().zip(&layers).enumerate() {
            if b.kernel % 2 == 0 || b.conv_channels.contains(&0) {
                return bad(format!("branch {}: kernel must be odd and widths positive", k + 1));
            }
            let n = layer.len();
            if let BranchHead::Reshape { channels } = b.head {
                if channels == 0 || channels * cells < n || (channels - 1) * cells >= n {
                    return bad(format!(
                        "branch {}: reshape head of {channels} maps x {cells} cells cannot emit exactly {n} values \
                         (needs {} maps)",
                        k + 1,
                        n.div_ceil(cells)
                    ));
                }
            }
            emitted += n;
        }
        if emitted != target.theta_length() {
            return bad(format!(
                "branches emit {emitted} values but θ has {}",
                target.theta_length()
            ));
        }
        Ok(())
    }
}

/// How a freshly initialized tensor is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Uniform { fan_in: usize, gain: f64 },
    /// Head projection: `U(-HEAD_INIT_GAIN, HEAD_INIT_GAIN)`, applied with a
    /// runtime `1/sqrt(fan_in)` multiplier.
    Head,
    Ones,
    Zeros,
    /// Head bias: 1 at the target layer's gain positions, 0 elsewhere, so
    /// initial hidden activations are unit-variance rather than collapsed.
    HeadBias { layer: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    /// `1 x n` kernel, or the whole kernel when `n == 1`.
    first: usize,
    /// `n x 1` kernel of a factorized pair.
    second: Option<usize>,
    n: usize,
}

#[derive(Clone, Copy, Debug)]
struct Stage {
    conv: Conv,
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
struct InceptionIdx {
    conv1: Conv,
    conv3: Conv,
    conv5: Conv,
    pool_proj: Option<usize>,
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
struct BranchIdx {
    stages: Vec<Stage>,
    head: BranchHead,
    weight: usize,
    /// Constant `1/sqrt(fan_in)` applied to the projection output.
    multiplier: f64,
    bias: usize,
    len: usize,
}

/// Named trainable tensors of a hypernetwork, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiParameters<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> PhiParameters<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        PhiParameters { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> PhiParameters<U> {
        PhiParameters {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for parameters of this layout.
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::Partition {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let data = flat[offset..offset + t.numel()].to_vec();
                offset += t.numel();
                Ok((n.clone(), Tensor::new(t.shape().to_vec(), data)?))
            })
            .collect::<Result<_>>()?;
        Ok(PhiParameters { entries })
    }
}

/// A validated hypernetwork architecture for one target configuration.
#[derive(Clone, Debug)]
pub struct HyperNet {
    config: HyperNetConfig,
    target: TargetNetConfig,
    specs: Vec<ParamSpec>,
    inception: InceptionIdx,
    backbone: Vec<Stage>,
    branches: Vec<BranchIdx>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn kernel(&mut self, name: String, c_out: usize, c_in: usize, kh: usize, kw: usize) -> usize {
        let fan_in = c_in * kh * kw;
        self.add(name, vec![c_out, c_in, kh, kw], Init::Uniform { fan_in, gain: 1.0 })
    }

    /// An `n x n` convolution, factorized into `1 x n` then `n x 1` when
    /// `n > 1`.
    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, n: usize) -> Conv {
        if n == 1 {
            let first = self.kernel(format!("{prefix}.weight"), c_out, c_in, 1, 1);
            return Conv { first, second: None, n };
        }
        let first = self.kernel(format!("{prefix}.row"), c_out, c_in, 1, n);
        let second = self.kernel(format!("{prefix}.col"), c_out, c_out, n, 1);
        Conv {
            first,
            second: Some(second),
            n,
        }
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> (usize, usize) {
        let gamma = self.add(format!("{prefix}.gamma"), vec![channels], Init::Ones);
        let beta = self.add(format!("{prefix}.beta"), vec![channels], Init::Zeros);
        (gamma, beta)
    }

    fn stage(&mut self, prefix: &str, c_in: usize, c_out: usize, n: usize) -> Stage {
        let conv = self.conv(prefix, c_in, c_out, n);
        let (gamma, beta) = self.norm(&format!("{prefix}.norm"), c_out);
        Stage { conv, gamma, beta }
    }
}

/// Initial range of every branch's final projection, relative to the usual
/// `1/sqrt(fan_in)` bound.
///
/// Head weights are stored at unit scale and multiplied by `1/sqrt(fan_in)`
/// in the forward pass. Adam moves each stored weight by about the learning
/// rate per step; with the multiplier the resulting change of θ is of order
/// `lr * sqrt(fan_in)` instead of `lr * fan_in`, which for the 8192-wide
/// dense heads is the difference between a usable step and a divergent one.
pub const HEAD_INIT_GAIN: f64 = 0.01;

impl HyperNet {
    pub fn new(config: HyperNetConfig, target: TargetNetConfig) -> Result<Self> {
        target.validate()?;
        config.validate(&target)?;
        let mut b = Builder { specs: Vec::new() };
        let ic = &config.inception;
        let c_in = config.in_channels;
        let conv1 = b.conv("inception.conv1", c_in, ic.conv1, 1);
        let conv3 = b.conv("inception.conv3", c_in, ic.conv3, 3);
        let conv5 = b.conv("inception.conv5", c_in, ic.conv5, 5);
        let pool_proj = (ic.pool != c_in).then(|| b.kernel("inception.pool.weight".into(), ic.pool, c_in, 1, 1));
        let (gamma, beta) = b.norm("inception.norm", ic.total());
        let inception = InceptionIdx {
            conv1,
            conv3,
            conv5,
            pool_proj,
            gamma,
            beta,
        };
        let mut width = ic.total();
        let mut backbone = Vec::new();
        for (s, &c) in config.backbone_channels.iter().enumerate() {
            backbone.push(b.stage(&format!("backbone.{s}"), width, c, config.backbone_kernel));
            width = c;
        }
        let cells = config.feature_side().pow(2);
        let layers = target.layers();
        let mut branches = Vec::new();
        for (k, (spec, layer)) in config.branches.iter().zip(&layers).enumerate() {
            let prefix = format!("branch.{}", k + 1);
            let mut c = width;
            let stages = spec
                .conv_channels
                .iter()
                .enumerate()
                .map(|(s, &co)| {
                    let st = b.stage(&format!("{prefix}.{s}"), c, co, spec.kernel);
                    c = co;
                    st
                })
                .collect();
            let n = layer.len();
            let (shape, fan_in) = match spec.head {
                BranchHead::FullyConnected => (vec![c * cells, n], c * cells),
                BranchHead::Reshape { channels } => (vec![channels, c, 1, 1], c),
            };
            let weight = b.add(format!("{prefix}.head.weight"), shape, Init::Head);
            let bias = b.add(format!("{prefix}.head.bias"), vec![n], Init::HeadBias { layer: k });
            branches.push(BranchIdx {
                stages,
                head: spec.head,
                weight,
                multiplier: 1.0 / (fan_in as f64).sqrt(),
                bias,
                len: n,
            });
        }
        Ok(HyperNet {
            config,
            target,
            specs: b.specs,
            inception,
            backbone,
            branches,
        })
    }

    /// Default channel plan for the default target network.
    pub fn default_model() -> Self {
        let target = TargetNetConfig::default();
        HyperNet::new(HyperNetConfig::default_for(&target), target).expect("default configuration is valid")
    }

    pub fn config(&self) -> &HyperNetConfig {
        &self.config
    }

    pub fn target(&self) -> &TargetNetConfig {
        &self.target
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Emitted length of each branch, in target-layer order.
    pub fn branch_lengths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.len).collect()
    }

    /// Seeded initialization (see [`HEAD_INIT_GAIN`]).
    pub fn init<T: Scalar>(&self, seed: u64) -> PhiParameters<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self.target.layers();
        let entries = self
            .specs
            .iter()
            .map(|s| {
                let numel: usize = s.shape.iter().product();
                let data: Vec<T> = match s.init {
                    Init::Uniform { fan_in, gain } => {
                        let bound = gain / (fan_in as f64).sqrt();
                        (0..numel)
                            .map(|_| T::from_f64(rng.gen_range(-bound..bound) as f32 as f64))
                            .collect()
                    }
                    Init::Head => (0..numel)
                        .map(|_| T::from_f64(rng.gen_range(-HEAD_INIT_GAIN..HEAD_INIT_GAIN) as f32 as f64))
                        .collect(),
                    Init::Ones => vec![T::one(); numel],
                    Init::Zeros => vec![T::zero(); numel],
                    Init::HeadBias { layer } => {
                        let l = &layers[layer];
                        let mut v = vec![T::zero(); numel];
                        if let Some(g) = &l.gain {
                            let base = l.range().start;
                            for slot in &mut v[g.start - base..g.end - base] {
                                *slot = T::one();
                            }
                        }
                        v
                    }
                };
                let t = Tensor::new(s.shape.clone(), data).expect("spec shapes are positive");
                (s.name.clone(), t)
            })
            .collect();
        PhiParameters { entries }
    }

    /// Checks that `phi` has exactly this network's names and shapes.
    pub fn check_params<T: Scalar>(&self, phi: &PhiParameters<T>) -> Result<()> {
        if phi.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, network needs {}",
                phi.len(),
                self.specs.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(phi.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// `[N, C, P, P]` batch from patches of the configured size. Gray
    /// patches are replicated to RGB.
    pub fn patch_tensor<T: Scalar>(&self, patches: &[&Image]) -> Result<Tensor<T>> {
        let p = self.config.patch_size;
        let c = self.config.in_channels;
        if patches.is_empty() {
            return Err(Error::Dimension("empty patch batch".into()));
        }
        let mut data = Vec::with_capacity(patches.len() * c * p * p);
        for img in patches {
            if img.dims() != (p, p) {
                return Err(Error::Dimension(format!(
                    "patch is {}x{}, hypernetwork expects {p}x{p}",
                    img.height(),
                    img.width()
                )));
            }
            let img = if img.channels() == c { (*img).clone() } else { img.to_rgb() };
            if img.channels() != c {
                return Err(Error::Dimension(format!("patch has {} channels, expected {c}", img.channels())));
            }
            data.extend(img.to_planar().into_iter().map(|v| T::from_f64(v as f64)));
        }
        Ok(Tensor::new(vec![patches.len(), c, p, p], data)?)
    }

    /// Registers `phi` on `g` as trainable leaves, in parameter order.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, phi: &PhiParameters<T>, trainable: bool) -> Result<Vec<Var>> {
        self.check_params(phi)?;
        Ok(phi
            .tensors()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect())
    }

    fn apply_conv<T: Scalar>(g: &mut Graph<T>, phi: &[Var], conv: &Conv, x: Var) -> Result<Var> {
        let n = conv.n;
        let Some(second) = conv.second else {
            return Ok(g.conv2d_with(x, phi[conv.first], Conv2dSpec::new(1, 0))?);
        };
        let h = g.conv2d_with(x, phi[conv.first], Conv2dSpec::same(1, n))?;
        Ok(g.conv2d_with(h, phi[second], Conv2dSpec::same(n, 1))?)
    }

    fn norm_relu<T: Scalar>(g: &mut Graph<T>, phi: &[Var], gamma: usize, beta: usize, x: Var) -> Result<Var> {
        let h = g.instance_normalize(x, phi[gamma], phi[beta], T::from_f64(DEFAULT_NORM_EPS))?;
        Ok(g.relu(h))
    }

    fn apply_stage<T: Scalar>(g: &mut Graph<T>, phi: &[Var], stage: &Stage, x: Var) -> Result<Var> {
        let h = Self::apply_conv(g, phi, &stage.conv, x)?;
        Self::norm_relu(g, phi, stage.gamma, stage.beta, h)
    }

    fn check_input<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let p = self.config.patch_size;
        match *g.shape(x) {
            [_, c, h, w] if c == self.config.in_channels && h == p && w == p => Ok(()),
            ref s => Err(Error::Dimension(format!(
                "hypernetwork input {s:?} does not match [N, {}, {p}, {p}]",
                self.config.in_channels
            ))),
        }
    }

    /// Channel concatenation of the four inception paths, before
    /// normalization.
    pub fn inception_paths<T: Scalar>(&self, g: &mut Graph<T>, phi: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[2] < 5 || shape[3] < 5 {
            return Err(Error::Dimension(format!("inception block needs spatial dims >= 5, got {shape:?}")));
        }
        let ix = &self.inception;
        let a = Self::apply_conv(g, phi, &ix.conv1, x)?;
        let b = Self::apply_conv(g, phi, &ix.conv3, x)?;
        let c = Self::apply_conv(g, phi, &ix.conv5, x)?;
        let mut d = g.pool2d_padded(x, PoolKind::Average, 3, 1, 1)?;
        if let Some(proj) = ix.pool_proj {
            d = g.conv2d(d, phi[proj], 1, 0)?;
        }
        Ok(g.concat(&[a, b, c, d], 1)?)
    }

    pub fn inception_block<T: Scalar>(&self, g: &mut Graph<T>, phi: &[Var], x: Var) -> Result<Var> {
        let h = self.inception_paths(g, phi, x)?;
        Self::norm_relu(g, phi, self.inception.gamma, self.inception.beta, h)
    }

    /// Trunk features `[N, F, P / pool, P / pool]`.
    pub fn backbone<T: Scalar>(&self, g: &mut Graph<T>, phi: &[Var], x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let skip = self.inception_block(g, phi, x)?;
        let mut h = skip;
        for stage in &self.backbone {
            h = Self::apply_stage(g, phi, stage, h)?;
        }
        if self.config.residual {
            h = g.add(h, skip)?;
        }
        let pool = self.config.pool;
        Ok(g.pool2d(h, PoolKind::Max, pool, pool)?)
    }

    /// Flat `[N, n_k]` slice of θ for target layer `k` (zero-based).
    pub fn branch<T: Scalar>(&self, g: &mut Graph<T>, phi: &[Var], k: usize, features: Var) -> Result<Var> {
        let br = self
            .branches
            .get(k)
            .ok_or_else(|| Error::Config(format!("no branch for target layer {}", k + 1)))?;
        let mut h = features;
        for stage in &br.stages {
            h = Self::apply_stage(g, phi, stage, h)?;
        }
        let n_batch = g.shape(h)[0];
        let flat = match br.head {
            BranchHead::FullyConnected => {
                let numel = g.value(h).numel();
                let h = g.reshape(h, &[n_batch, numel / n_batch])?;
                let y = g.matmul(h, phi[br.weight])?;
                g.scale(y, T::from_f64(br.multiplier))
            }
            BranchHead::Reshape { .. } => {
                let maps = g.conv2d(h, phi[br.weight], 1, 0)?;
                let maps = g.scale(maps, T::from_f64(br.multiplier));
                let cells = g.value(maps).numel() / n_batch;
                let maps = g.reshape(maps, &[n_batch, cells])?;
                g.narrow(maps, 1, 0, br.len)?
            }
        };
        Ok(g.add_row_bias(flat, phi[br.bias])?)
    }

    /// `[N, theta_length]` for a `[N, C, P, P]` batch, branches concatenated
    /// in θ order.
    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<T>, phi: &[Var], patches: Var) -> Result<Var> {
        let features = self.backbone(g, phi, patches)?;
        let parts = (0..self.branches.len())
            .map(|k| self.branch(g, phi, k, features))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat(&parts, 1)?)
    }

    pub fn predict_theta(&self, patch: &Image, phi: &PhiParameters) -> Result<ThetaVector> {
        Ok(self.predict_thetas(&[patch], phi)?.pop().expect("one patch in, one θ out"))
    }

    pub fn predict_thetas(&self, patches: &[&Image], phi: &PhiParameters) -> Result<Vec<ThetaVector>> {
        let mut g = Graph::<f32>::new();
        let vars = self.bind(&mut g, phi, false)?;
        let x = g.constant(self.patch_tensor(patches)?);
        let out = self.forward_graph(&mut g, &vars, x)?;
        let len = self.target.theta_length();
        g.value(out)
            .data()
            .chunks_exact(len)
            .map(|c| ThetaVector::new(self.target.clone(), c.to_vec()))
            .collect()
    }
}

pub(crate) fn write_hyper_config(w: &mut Writer, c: &HyperNetConfig) {
    w.u32(c.patch_size as u32);
    w.u32(c.in_channels as u32);
    let i = &c.inception;
    for v in [i.conv1, i.conv3, i.conv5, i.pool] {
        w.u32(v as u32);
    }
    w.u32(c.backbone_channels.len() as u32);
    for &v in &c.backbone_channels {
        w.u32(v as u32);
    }
    w.u32(c.backbone_kernel as u32);
    w.u32(c.pool as u32);
    w.u8(c.residual as u8);
    w.u32(c.branches.len() as u32);
    for b in &c.branches {
        w.u32(b.conv_channels.len() as u32);
        for &v in &b.conv_channels {
            w.u32(v as u32);
        }
        w.u32(b.kernel as u32);
        match b.head {
            BranchHead::FullyConnected => {
                w.u8(0);
                w.u32(0);
            }
            BranchHead::Reshape { channels } => {
                w.u8(1);
                w.u32(channels as u32);
            }
        }
    }
}

pub(crate) fn read_hyper_config(r: &mut Reader<'_>) -> Result<HyperNetConfig> {
    fn list(r: &mut Reader<'_>) -> Result<Vec<usize>> {
        let n = r.u32()? as usize;
        if n > 1024 {
            return Err(Error::Checkpoint(format!("implausible list length {n}")));
        }
        (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
    }
    let patch_size = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let mut ic = [0usize; 4];
    for v in &mut ic {
        *v = r.u32()? as usize;
    }
    let backbone_channels = list(r)?;
    let backbone_kernel = r.u32()? as usize;
    let pool = r.u32()? as usize;
    let residual = r.u8()? != 0;
    let n = r.u32()? as usize;
    if n > 1024 {
        return Err(Error::Checkpoint(format!("implausible branch count {n}")));
    }
    let mut branches = Vec::with_capacity(n);
    for _ in 0..n {
        let conv_channels = list(r)?;
        let kernel = r.u32()? as usize;
        let code = r.u8()?;
        let channels = r.u32()? as usize;
        let head = match code {
            0 => BranchHead::FullyConnected,
            1 => BranchHead::Reshape { channels },
            _ => return Err(Error::Checkpoint(format!("unknown branch head code {code}"))),
        };
        branches.push(BranchSpec {
            conv_channels,
            kernel,
            head,
        });
    }
    Ok(HyperNetConfig {
        patch_size,
        in_channels,
        inception: InceptionChannels {
            conv1: ic[0],
            conv3: ic[1],
            conv5: ic[2],
            pool: ic[3],
        },
        backbone_channels,
        backbone_kernel,
        pool,
        residual,
        branches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_heads() {
        let net = HyperNet::default_model();
        let heads: Vec<_> = net.config().branches.iter().map(|b| b.head).collect();
        assert_eq!(
            heads,
            vec![
                BranchHead::FullyConnected,
                BranchHead::FullyConnected,
                BranchHead::Reshape { channels: 67 },
                BranchHead::Reshape { channels: 65 },
                BranchHead::FullyConnected,
            ]
        );
        assert_eq!(net.config().feature_side(), 16);
    }

    #[test]
    fn reshape_head_must_fit_exactly() {
        let target = TargetNetConfig::default();
        let mut config = HyperNetConfig::default_for(&target);
        config.branches[2].head = BranchHead::Reshape { channels: 66 };
        assert!(HyperNet::new(config.clone(), target.clone()).is_err());
        config.branches[2].head = BranchHead::Reshape { channels: 68 };
        assert!(HyperNet::new(config.clone(), target.clone()).is_err());
        config.branches.pop();
        assert!(HyperNet::new(config, target).is_err());
    }

    #[test]
    fn residual_needs_matching_widths() {
        let target = TargetNetConfig::default();
        let mut config = HyperNetConfig::default_for(&target);
        config.backbone_channels[3] = 32;
        assert!(HyperNet::new(config.clone(), target.clone()).is_err());
        config.residual = false;
        HyperNet::new(config, target).unwrap();
    }

    #[test]
    fn config_block_round_trip() {
        let net = HyperNet::default_model();
        let mut w = Writer::new(crate::checkpoint::Kind::Trainer);
        write_hyper_config(&mut w, net.config());
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, crate::checkpoint::Kind::Trainer).unwrap();
        assert_eq!(&read_hyper_config(&mut r).unwrap(), net.config());
        r.finish().unwrap();
    }
}
