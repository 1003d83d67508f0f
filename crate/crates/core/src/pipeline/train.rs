use std::path::Path;

use ndautograd::{BufferPool, Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::TrainSample;
use crate::checkpoint::{self, Kind, Reader, Writer};
use crate::error::{Error, Result};
use crate::hypernet::{read_hyper_config, write_hyper_config, HyperNet, PhiParameters};
use crate::imageio::write_atomic;
use crate::targetnet::{forward_graph, read_target_config, write_target_config, CoordGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub net: HyperNet,
    pub phi: PhiParameters,
    /// First and second moment estimates, one buffer per parameter tensor.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Gradient buffers reused across steps (not persisted).
    pool: BufferPool<f32>,
}

impl TrainerState {
    pub fn new(net: HyperNet, seed: u64, adam: AdamConfig) -> Self {
        let phi = net.init(seed);
        let zeros: Vec<Vec<f32>> = phi.tensors().map(|t| vec![0.0; t.numel()]).collect();
        TrainerState {
            net,
            phi,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            seed,
            adam,
            pool: BufferPool::new(),
        }
    }

    /// One Adam update with bias-corrected moments. Missing gradients count
    /// as zero.
    fn apply_adam(&mut self, grads: &[Option<&[f32]>]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.adam;
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        let step_size = (lr as f64 / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let (c1, c2) = (1.0 - beta1, 1.0 - beta2);
        for (((param, grad), m), v) in self.phi.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let p = param.data_mut();
            match grad {
                Some(g) => {
                    for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + c1 * g;
                        *v = beta2 * *v + c2 * g * g;
                        *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= beta1;
                        *v *= beta2;
                        *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Kind::Trainer);
        write_target_config(&mut w, self.net.target());
        write_hyper_config(&mut w, self.net.config());
        w.u64(self.step);
        w.u64(self.seed);
        let a = self.adam;
        w.f32s(&[a.lr, a.beta1, a.beta2, a.eps]);
        w.u32((self.phi.len() * 3) as u32);
        let mut record = |name: &str, shape: &[usize], data: &[f32]| {
            w.str(name);
            w.u32(shape.len() as u32);
            for &d in shape {
                w.u32(d as u32);
            }
            w.f32s(data);
        };
        for (name, t) in self.phi.iter() {
            record(name, t.shape(), t.data());
        }
        for (prefix, moments) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for ((name, t), buf) in self.phi.iter().zip(moments) {
                record(&format!("{prefix}{name}"), t.shape(), buf);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, Kind::Trainer)?;
        let target = read_target_config(&mut r)?;
        let hyper = read_hyper_config(&mut r)?;
        let net = HyperNet::new(hyper, target).map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let a = r.f32s(4)?;
        let adam = AdamConfig {
            lr: a[0],
            beta1: a[1],
            beta2: a[2],
            eps: a[3],
        };
        let count = r.u32()? as usize;
        let specs = net.param_specs();
        if count != specs.len() * 3 {
            return Err(Error::Checkpoint(format!(
                "{count} records, expected {} for this model",
                specs.len() * 3
            )));
        }
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let spec = &specs[i % specs.len()];
            let expected = match i / specs.len() {
                0 => spec.name.clone(),
                1 => format!("adam.m.{}", spec.name),
                _ => format!("adam.v.{}", spec.name),
            };
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            if name != expected || ndim != spec.shape.len() {
                return Err(Error::Checkpoint(format!("record {i}: found `{name}`, expected `{expected}`")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "record `{name}` has shape {shape:?}, expected {:?}",
                    spec.shape
                )));
            }
            records.push((name, Tensor::new(shape.clone(), r.f32s(shape.iter().product())?)?));
        }
        r.finish()?;
        let n = specs.len();
        let v: Vec<Vec<f32>> = records.split_off(2 * n).into_iter().map(|(_, t)| t.into_vec()).collect();
        let m: Vec<Vec<f32>> = records.split_off(n).into_iter().map(|(_, t)| t.into_vec()).collect();
        let phi = PhiParameters::from_entries(records);
        Ok(TrainerState {
            net,
            phi,
            m,
            v,
            step,
            seed,
            adam,
            pool: BufferPool::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<()> {
    state.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    TrainerState::load(path)
}

/// α fed to the target network for a given scale.
pub fn alpha_for(scale: f64) -> f32 {
    (scale / 4.0) as f32
}

/// Mean over `batch` of the per-sample MSE between the rendered HR grid and
/// the HR patch.
pub fn loss_graph<T: Scalar>(net: &HyperNet, g: &mut Graph<T>, phi: &[Var], batch: &[&TrainSample]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty training batch".into()));
    }
    let lr: Vec<_> = batch.iter().map(|s| &s.lr_patch).collect();
    let x = g.constant(net.patch_tensor(&lr)?);
    let thetas = net.forward_graph(g, phi, x)?;
    let target = net.target();
    let len = target.theta_length();
    let mut total: Option<Var> = None;
    for (b, sample) in batch.iter().enumerate() {
        let hr = &sample.hr_patch;
        let grid = CoordGrid::pixel_centers(hr.height(), hr.width());
        let alpha = target.scale_input.then(|| alpha_for(sample.scale as f64));
        let coords = g.constant(grid.to_input(target, alpha)?);
        let theta = g.narrow(thetas, 0, b, 1)?;
        let theta = g.reshape(theta, &[len])?;
        let pred = forward_graph(g, target, theta, coords)?;
        let truth = g.constant(Tensor::new(
            vec![grid.len(), 3],
            hr.to_rgb().data().iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?);
        let loss = g.mse_loss(pred, truth)?;
        total = Some(match total {
            Some(t) => g.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(g.scale(total, T::from_f64(1.0 / batch.len() as f64)))
}

/// `v - v` is zero for finite values and NaN otherwise; summing it in
/// independent lanes keeps the scan vectorized.
fn all_finite(values: &[f32]) -> bool {
    const LANES: usize = 16;
    let mut acc = [0.0f32; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for chunk in chunks {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += v - v;
        }
    }
    acc.iter().all(|a| *a == 0.0) && tail.iter().all(|v| v.is_finite())
}

/// One Adam step on `batch`; returns the loss before the update.
pub fn training_step(state: &mut TrainerState, batch: &[&TrainSample]) -> Result<f32> {
    let mut g = Graph::<f32>::new();
    let vars = state.net.bind(&mut g, &state.phi, true)?;
    let loss_var = loss_graph(&state.net, &mut g, &vars, batch)?;
    let loss = g.value(loss_var).item().expect("scalar loss");
    let abort = |what: &str| {
        let ids: Vec<String> = batch.iter().map(|s| s.label()).collect();
        Error::Training(format!(
            "non-finite {what} at step {} (lr {}, batch [{}])",
            state.step,
            state.adam.lr,
            ids.join(", ")
        ))
    };
    if !loss.is_finite() {
        return Err(abort("loss"));
    }
    let grads = g.backward_pooled(loss_var, &mut state.pool)?;
    // The graph shares the parameter buffers; release it so the update below
    // writes in place instead of copying every tensor.
    drop(g);
    let slices: Vec<Option<&[f32]>> = vars.iter().map(|&v| grads.slice(v)).collect();
    if !slices.iter().flatten().all(|s| all_finite(s)) {
        return Err(abort("gradient"));
    }
    state.apply_adam(&slices);
    drop(slices);
    grads.recycle(&mut state.pool);
    state.step += 1;
    Ok(loss)
}

/// Sample indices for optimizer step `step`: consecutive slices of a
/// per-epoch shuffle derived from `seed`, so any step's batch can be
/// recomputed without replaying earlier ones.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|i| {
            let global = step * batch as u64 + i;
            let epoch = global / n as u64;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                cached = Some((epoch, order));
            }
            cached.as_ref().unwrap().1[(global % n as u64) as usize]
        })
        .collect()
}

/// Runs `steps` optimizer steps over `samples`, calling `on_step(step,
/// loss)` after each.
pub fn train(
    state: &mut TrainerState,
    samples: &[TrainSample],
    batch: usize,
    steps: u64,
    mut on_step: impl FnMut(&TrainerState, f32) -> Result<()>,
) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let batch = batch.min(samples.len()).max(1);
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let idx = batch_indices(state.seed, state.step, batch, samples.len());
        let picked: Vec<&TrainSample> = idx.iter().map(|&i| &samples[i]).collect();
        let loss = training_step(state, &picked)?;
        losses.push(loss);
        on_step(state, loss)?;
    }
    Ok(losses)
}
