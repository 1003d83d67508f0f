use std::path::Path;

use hyperpix::imageio::encode_image;
use hyperpix::pipeline::{
    ingest_dataset, load_checkpoint, overfit_single, save_checkpoint, train, AdamConfig, IngestOptions, TrainConfig,
    TrainSample, TrainerState,
};
use hyperpix::targetnet::render;
use hyperpix::{Error, HyperNet, HyperNetConfig, Image, TargetNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(seed: u64, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fy, fx): (f32, f32) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4));
    Image::from_fn(side, side, 3, |r, c, ch| {
        0.5 + 0.4 * ((r as f32 * fy + c as f32 * fx + ch as f32).sin())
    })
}

fn dataset_dir(images: &[(&str, Image)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, img) in images {
        encode_image(img, &dir.path().join(name)).unwrap();
    }
    dir
}

fn ingest(dir: &Path, patch: usize, scales: &[u32], stride: usize) -> hyperpix::Result<Vec<TrainSample>> {
    ingest_dataset(
        dir,
        &IngestOptions {
            patch,
            scales: scales.to_vec(),
            stride,
        },
    )
}

fn small_model(patch: usize) -> HyperNet {
    let target = TargetNetConfig::default();
    HyperNet::new(HyperNetConfig::for_patch(&target, patch), target).unwrap()
}

fn samples(patch: usize, n: u64) -> Vec<TrainSample> {
    (0..n)
        .map(|i| TrainSample::from_hr(textured(i, patch), 1, patch, format!("t{i}"), (0, 0)).unwrap())
        .collect()
}

#[test]
fn ingestion_lattices() {
    let dir = dataset_dir(&[("a.png", textured(0, 64))]);
    assert_eq!(ingest(dir.path(), 32, &[1], 32).unwrap().len(), 4);
    assert_eq!(ingest(dir.path(), 32, &[1], 16).unwrap().len(), 9);
    let two = ingest(dir.path(), 32, &[2], 32).unwrap();
    assert_eq!(two.len(), 1);
    assert_eq!(two[0].hr_patch.dims(), (64, 64));
    assert_eq!(two[0].lr_patch.dims(), (32, 32));
}

#[test]
fn every_sample_is_consistent_and_sources_are_sorted() {
    let dir = dataset_dir(&[("b.ppm", textured(1, 80)), ("a.png", textured(2, 70))]);
    std::fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
    let all = ingest(dir.path(), 16, &[1, 2, 3, 4], 16).unwrap();
    assert!(all.iter().all(TrainSample::is_consistent));
    assert_eq!(all[0].source, "a.png");
    let scales: Vec<u32> = all.iter().take(4).map(|s| s.scale).collect();
    assert_eq!(scales, [1, 2, 3, 4]);
    for s in &all {
        let k = s.scale as usize;
        assert_eq!(s.hr_patch.dims(), (16 * k, 16 * k));
    }
}

#[test]
fn empty_dataset_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest(dir.path(), 32, &[1], 32), Err(Error::Dataset(_))));
    let small = dataset_dir(&[("a.png", textured(0, 20))]);
    assert!(matches!(ingest(small.path(), 32, &[1], 32), Err(Error::Dataset(_))));
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let data = samples(16, 2);
    let mut state = TrainerState::new(small_model(16), 3, AdamConfig::with_lr(0.0));
    let before = state.phi.clone();
    let losses = train(&mut state, &data, 2, 3, |_, _| Ok(())).unwrap();
    assert_eq!(state.phi, before);
    assert_eq!(state.step, 3);
    assert!(losses.iter().all(|&l| l >= 0.0 && l.to_bits() == losses[0].to_bits()));
}

#[test]
fn single_sample_loss_drops_tenfold_within_2000_steps() {
    let data = samples(16, 1);
    let mut state = TrainerState::new(small_model(16), 0, AdamConfig::default());
    let mut losses = Vec::new();
    while state.step < 2000 {
        losses.extend(
            train(&mut state, &data, 1, 100, |s, loss| {
                assert!(loss.is_finite() && loss >= 0.0);
                assert!(s.phi.is_finite());
                Ok(())
            })
            .unwrap(),
        );
        if *losses.last().unwrap() * 10.0 < losses[0] {
            break;
        }
    }
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last * 10.0 < first, "loss {first} -> {last} after {} steps", losses.len());
}

#[test]
fn untrained_fit_renders_near_mid_gray() {
    let theta = overfit_single(&textured(4, 32), 0).unwrap();
    let img = render(&theta, 32, 32, None).unwrap();
    assert!(img.data().iter().all(|&v| (v - 0.5).abs() < 0.2));
    assert!(overfit_single(&textured(4, 65), 0).is_err());
}

#[test]
fn fixed_seed_runs_are_identical() {
    let data = samples(16, 4);
    let run = || {
        let mut state = TrainerState::new(small_model(16), 9, AdamConfig::default());
        train(&mut state, &data, 2, 20, |_, _| Ok(())).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn checkpoint_resumes_the_same_trajectory() {
    let data = samples(16, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let mut state = TrainerState::new(small_model(16), 5, AdamConfig::default());
    train(&mut state, &data, 2, 5, |_, _| Ok(())).unwrap();
    save_checkpoint(&state, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed.to_bytes(), state.to_bytes());
    assert_eq!((resumed.step, resumed.seed), (5, 5));
    let a = train(&mut state, &data, 2, 5, |_, _| Ok(())).unwrap();
    let b = train(&mut resumed, &data, 2, 5, |_, _| Ok(())).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let state = TrainerState::new(small_model(16), 0, AdamConfig::default());
    let bytes = state.to_bytes();
    let truncated = TrainerState::from_bytes(&bytes[..bytes.len() / 2]);
    assert!(matches!(truncated, Err(Error::Checkpoint(_))), "{truncated:?}");
    let mut bumped = bytes.clone();
    bumped[4] = bumped[4].wrapping_add(1);
    let msg = TrainerState::from_bytes(&bumped).err().unwrap().to_string();
    assert!(msg.contains("version"), "{msg}");
    let mut magic = bytes;
    magic[..4].copy_from_slice(b"NOPE");
    assert!(TrainerState::from_bytes(&magic).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn config_file_resolves_paths_beside_itself() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(
        &path,
        "# tiny run\nlr = 0.001\nbatch = 4\nsteps = 7   # short\npatch = 16\nscales = 1, 2\nseed = 3\n\
         dataset = data\ncheckpoint = out/model.ckpt\nscale_input = false\n",
    )
    .unwrap();
    let c = TrainConfig::load(&path).unwrap();
    assert_eq!((c.lr, c.batch, c.steps, c.patch, c.seed), (0.001, 4, 7, 16, 3));
    assert_eq!(c.scales, [1, 2]);
    assert!(!c.scale_input);
    assert_eq!(c.dataset.unwrap(), dir.path().join("data"));
    assert_eq!(c.checkpoint.unwrap(), dir.path().join("out/model.ckpt"));

    std::fs::write(&path, "scales = 5\n").unwrap();
    assert!(matches!(TrainConfig::load(&path), Err(Error::Config(_))));
}
