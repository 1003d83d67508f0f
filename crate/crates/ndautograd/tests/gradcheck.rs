//! Analytic gradients of every operation against central finite differences,
//! on random small tensors (at most 64 elements, values in [-2, 2]).

use ndautograd::check::{central_difference, compare, Tolerance};
use ndautograd::{Activation, Conv2dSpec, Graph, PoolKind, Tensor, Var};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

/// Values in [-2, 2] bounded away from zero (for kinks at the origin).
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..2.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values spaced far apart relative to the probe step (no max ties).
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let spacing = 4.0 / n as f64;
    Tensor::new(shape.to_vec(), ranks.into_iter().map(|r| -2.0 + r as f64 * spacing).collect()).unwrap()
}

/// Wraps `op` into `mse(op(inputs), target)` with a random target.
fn with_mse_head(
    seed: u64,
    op: impl Fn(&mut Graph<f64>, &[Var]) -> Var + 'static,
) -> Box<Build> {
    Box::new(move |g: &mut Graph<f64>, vars: &[Var]| {
        let out = op(g, vars);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let target = uniform(&mut rng, g.shape(out));
        let t = g.constant(target);
        g.mse_loss(out, t).unwrap()
    })
}

fn check(inputs: &[Tensor<f64>], build: &Build) {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]);
        let indices: Vec<usize> = (0..input.numel()).collect();
        let numeric = central_difference(
            |probe| {
                let mut g = Graph::<f64>::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            g.param(Tensor::new(t.shape().to_vec(), probe.to_vec()).unwrap())
                        } else {
                            g.param(t.clone())
                        }
                    })
                    .collect();
                let loss = build(&mut g, &vars);
                g.value(loss).item().unwrap()
            },
            input.data(),
            &indices,
            Tolerance::default().step,
        );
        let report = compare(&indices, analytic.data(), &numeric, Tolerance::default());
        assert!(
            report.passed(),
            "input {k}: {} mismatches, first {:?}",
            report.mismatches.len(),
            report.mismatches.first()
        );
    }
}

fn min_column_std(x: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    let (b, k, f) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    (0..f)
        .map(|j| {
            let col: Vec<f64> = (0..b)
                .map(|i| (0..k).map(|p| x.data()[i * k + p] * w.data()[p * f + j]).sum())
                .collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [uniform(&mut rng, &[m, k]), uniform(&mut rng, &[k, n])];
        check(&inputs, &*with_mse_head(seed, |g, v| g.matmul(v[0], v[1]).unwrap()));
    }

    #[test]
    fn add_and_scale(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[3, 4]), uniform(&mut rng, &[3, 4])];
        check(&inputs, &*with_mse_head(seed, |g, v| {
            let s = g.scale(v[1], -0.7);
            g.add(v[0], s).unwrap()
        }));
    }

    #[test]
    fn row_and_channel_bias(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            uniform(&mut rng, &[2, 3, 2, 2]),
            uniform(&mut rng, &[3]),
            uniform(&mut rng, &[2]),
        ];
        check(&inputs, &*with_mse_head(seed, |g, v| {
            let x = g.add_channel_bias(v[0], v[1]).unwrap();
            g.add_row_bias(x, v[2]).unwrap()
        }));
    }

    #[test]
    fn conv2d(seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[2, 2, 4, 5]), uniform(&mut rng, &[3, 2, 2, 3])];
        check(&inputs, &*with_mse_head(seed, move |g, v| {
            g.conv2d_with(v[0], v[1], Conv2dSpec { stride, pad_h: pad, pad_w: 1 - pad }).unwrap()
        }));
    }

    #[test]
    fn pointwise_conv2d(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[3, 3, 3]), uniform(&mut rng, &[2, 3, 1, 1])];
        check(&inputs, &*with_mse_head(seed, |g, v| g.conv2d(v[0], v[1], 1, 0).unwrap()));
    }

    #[test]
    fn cosine_and_sigmoid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[4, 4]), uniform(&mut rng, &[4, 4])];
        check(&inputs, &*with_mse_head(seed, |g, v| {
            let c = g.activation(v[0], Activation::Cosine);
            let s = g.activation(v[1], Activation::Sigmoid);
            g.add(c, s).unwrap()
        }));
    }

    #[test]
    fn relu(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [off_zero(&mut rng, &[8, 8])];
        check(&inputs, &*with_mse_head(seed, |g, v| g.relu(v[0])));
    }

    #[test]
    fn batch_normalize(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.gen_range(2..6);
        // Well-separated samples keep the batch variance away from zero, where the
        // probe step would dominate the curvature.
        let inputs = [distinct(&mut rng, &[b, 3]), uniform(&mut rng, &[3]), uniform(&mut rng, &[3])];
        check(&inputs, &*with_mse_head(seed, |g, v| g.batch_normalize(v[0], v[1], v[2], 1e-5).unwrap()));
    }

    #[test]
    fn instance_normalize(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [distinct(&mut rng, &[2, 2, 3, 3]), uniform(&mut rng, &[2]), uniform(&mut rng, &[2])];
        check(&inputs, &*with_mse_head(seed, |g, v| g.instance_normalize(v[0], v[1], v[2], 1e-5).unwrap()));
    }

    #[test]
    fn max_pool(seed in any::<u64>(), pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [distinct(&mut rng, &[2, 2, 4, 4])];
        check(&inputs, &*with_mse_head(seed, move |g, v| {
            g.pool2d_padded(v[0], PoolKind::Max, 2 + pad, 2, pad).unwrap()
        }));
    }

    #[test]
    fn average_pool(seed in any::<u64>(), pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[3, 5, 4])];
        check(&inputs, &*with_mse_head(seed, move |g, v| {
            g.pool2d_padded(v[0], PoolKind::Average, 3, 1, pad).unwrap()
        }));
    }

    #[test]
    fn concat_narrow_reshape(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[2, 3, 2]), uniform(&mut rng, &[2, 1, 2])];
        check(&inputs, &*with_mse_head(seed, |g, v| {
            let c = g.concat(&[v[0], v[1]], 1).unwrap();
            let n = g.narrow(c, 1, 1, 3).unwrap();
            g.reshape(n, &[3, 4]).unwrap()
        }));
    }

    #[test]
    fn mse_both_operands(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [uniform(&mut rng, &[5, 3]), uniform(&mut rng, &[5, 3])];
        check(&inputs, &|g: &mut Graph<f64>, v: &[Var]| g.mse_loss(v[0], v[1]).unwrap());
    }

    #[test]
    fn composed_network(seed in any::<u64>()) {
        // [B x 2] -> linear -> batch norm -> cosine -> linear -> sigmoid
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            distinct(&mut rng, &[6, 2]),
            uniform(&mut rng, &[2, 4]),
            uniform(&mut rng, &[4]),
            uniform(&mut rng, &[4]),
            uniform(&mut rng, &[4, 3]),
        ];
        // The probe step must stay small against the spread being normalized.
        prop_assume!(min_column_std(&inputs[0], &inputs[1]) > 0.5);
        check(&inputs, &*with_mse_head(seed, |g, v| {
            let h = g.matmul(v[0], v[1]).unwrap();
            let h = g.batch_normalize(h, v[2], v[3], 1e-5).unwrap();
            let h = g.cosine(h);
            let o = g.matmul(h, v[4]).unwrap();
            g.sigmoid(o)
        }));
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        // grad(a f + b g) == a grad(f) + b grad(g)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[3, 3]);
        let t1 = uniform(&mut rng, &[3, 3]);
        let t2 = uniform(&mut rng, &[3, 3]);
        let grad_of = |wf: f64, wg: f64| {
            let mut g = Graph::<f64>::new();
            let xv = g.param(x.clone());
            let c = g.cosine(xv);
            let (c1, c2) = (g.constant(t1.clone()), g.constant(t2.clone()));
            let f = g.mse_loss(c, c1).unwrap();
            let s = g.sigmoid(xv);
            let h = g.mse_loss(s, c2).unwrap();
            let f = g.scale(f, wf);
            let h = g.scale(h, wg);
            let loss = g.add(f, h).unwrap();
            g.backward(loss).unwrap().wrt(xv).into_vec()
        };
        let combined = grad_of(a, b);
        let (gf, gg) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
        for i in 0..combined.len() {
            let want = a * gf[i] + b * gg[i];
            prop_assert!((combined[i] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }
}
