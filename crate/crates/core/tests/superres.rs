use hyperpix::superres::{blend, plan_patches, upscale, BlendWeights, Scale, UpscaleOptions};
use hyperpix::targetnet::render;
use hyperpix::{Error, HyperNet, HyperNetConfig, Image, PhiParameters, TargetNetConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0))
}

fn scale_aware(patch: usize) -> (HyperNet, PhiParameters) {
    let target = TargetNetConfig::with_scale_input();
    let net = HyperNet::new(HyperNetConfig::for_patch(&target, patch), target).unwrap();
    let phi = net.init(1);
    (net, phi)
}

#[test]
fn plan_examples() {
    assert_eq!(plan_patches(32, 32, 32, 16).unwrap().placements, [(0, 0)]);
    let p = plan_patches(48, 48, 32, 16).unwrap();
    assert_eq!(p.placements, [(0, 0), (0, 16), (16, 0), (16, 16)]);
    let p = plan_patches(33, 33, 32, 32).unwrap();
    assert_eq!(p.placements, [(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert!(matches!(plan_patches(20, 40, 32, 16), Err(Error::Planning(_))));
    assert!(matches!(plan_patches(40, 40, 32, 0), Err(Error::Planning(_))));
    assert!(matches!(plan_patches(40, 40, 32, 33), Err(Error::Planning(_))));
}

#[test]
fn upscale_by_two_doubles_the_grid() {
    let (net, phi) = scale_aware(16);
    let img = random_image(2, 32, 32);
    let out = upscale(&net, &phi, &img, Scale::uniform(2.0).unwrap(), UpscaleOptions::default()).unwrap();
    assert_eq!(out.dims(), (64, 64));
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let again = upscale(&net, &phi, &img, Scale::uniform(2.0).unwrap(), UpscaleOptions::default()).unwrap();
    assert_eq!(out, again);
}

#[test]
fn anisotropic_resize_stretches_one_axis() {
    let (net, phi) = scale_aware(16);
    let scale: Scale = "2.5x1".parse().unwrap();
    assert_eq!((scale.x, scale.y), (2.5, 1.0));
    let out = upscale(&net, &phi, &random_image(3, 32, 32), scale, UpscaleOptions::default()).unwrap();
    assert_eq!(out.dims(), (32, 80));
    assert_eq!(scale.alpha(), 0.625);
}

#[test]
fn fractional_scales_round_half_up() {
    let (net, phi) = scale_aware(16);
    let out = upscale(&net, &phi, &random_image(4, 17, 21), Scale::uniform(1.5).unwrap(), UpscaleOptions::default())
        .unwrap();
    assert_eq!(out.dims(), (26, 32));
}

#[test]
fn images_smaller_than_a_patch_are_padded() {
    let (net, phi) = scale_aware(16);
    let out = upscale(&net, &phi, &random_image(5, 10, 7), Scale::uniform(3.0).unwrap(), UpscaleOptions::default())
        .unwrap();
    assert_eq!(out.dims(), (30, 21));
}

#[test]
fn unit_scale_single_patch_is_the_plain_render() {
    let net = HyperNet::default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let init: PhiParameters = net.init(6);
    let spread: Vec<f32> = init.flatten().iter().map(|_| rng.gen_range(-0.2..0.2)).collect();
    let phi = init.with_flat(&spread).unwrap();
    let img = random_image(6, 32, 32);
    let out = upscale(&net, &phi, &img, Scale::uniform(1.0).unwrap(), UpscaleOptions::default()).unwrap();
    let direct = render(&net.predict_theta(&img, &phi).unwrap(), 32, 32, None).unwrap();
    assert_eq!(out, direct);
}

#[test]
fn downscaling_is_refused() {
    assert!(matches!(Scale::uniform(0.5), Err(Error::Precondition(_))));
    assert!(matches!(Scale::new(1.0, f64::NAN), Err(Error::Precondition(_))));
    assert!("0.9".parse::<Scale>().is_err());
    assert!("2x".parse::<Scale>().is_err());
}

#[test]
fn constant_renders_blend_to_the_constant() {
    let plan = plan_patches(20, 20, 8, 4).unwrap();
    let weights = BlendWeights::for_plan(&plan, (20, 20), (50, 50)).unwrap();
    let renders: Vec<Image> = weights
        .windows()
        .iter()
        .map(|w| Image::filled(w.rows(), w.cols(), 3, 0.375))
        .collect();
    let out = blend(&renders, &weights).unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.375).abs() < 1e-6));
}

#[test]
fn overlap_seam_is_a_monotone_mix() {
    let plan = plan_patches(8, 12, 8, 4).unwrap();
    assert_eq!(plan.placements, [(0, 0), (0, 4)]);
    let weights = BlendWeights::for_plan(&plan, (8, 12), (8, 12)).unwrap();
    let (a, b) = (0.2f32, 0.8f32);
    let renders = [Image::filled(8, 8, 3, a), Image::filled(8, 8, 3, b)];
    let out = blend(&renders, &weights).unwrap();
    for r in 0..8 {
        let row: Vec<f32> = (0..12).map(|c| out.get(r, c, 0)).collect();
        assert!(row[..4].iter().all(|&v| (v - a).abs() < 1e-6), "{row:?}");
        assert!(row[8..].iter().all(|&v| (v - b).abs() < 1e-6), "{row:?}");
        assert!(row.windows(2).all(|p| p[1] >= p[0] - 1e-7), "{row:?}");
        assert!(row[4] > a && row[7] < b, "{row:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_partition_unity(
        patch in 2usize..24, extra_h in 0usize..40, extra_w in 0usize..40,
        stride_frac in 0.05f64..1.0, sy in 1.0f64..4.0, sx in 1.0f64..4.0,
    ) {
        let (h, w) = (patch + extra_h, patch + extra_w);
        let stride = ((patch as f64 * stride_frac).ceil() as usize).clamp(1, patch);
        let plan = plan_patches(h, w, patch, stride).unwrap();
        let mut rows: Vec<usize> = plan.placements.iter().map(|p| p.0).collect();
        rows.dedup();
        prop_assert_eq!(*rows.last().unwrap(), h - patch);
        let out = Scale::new(sy, sx).unwrap().output_dims(h, w);
        let weights = BlendWeights::for_plan(&plan, (h, w), out).unwrap();
        for s in weights.coverage() {
            prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
        }
        for k in 0..weights.windows().len() {
            prop_assert!(weights.map(k).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn blends_stay_in_the_hull(seed in any::<u64>(), patch in 3usize..10, extra in 0usize..12) {
        let side = patch + extra;
        let plan = plan_patches(side, side, patch, (patch / 2).max(1)).unwrap();
        let weights = BlendWeights::for_plan(&plan, (side, side), (2 * side, 2 * side)).unwrap();
        let renders: Vec<Image> = weights
            .windows()
            .iter()
            .enumerate()
            .map(|(k, w)| random_image(seed ^ k as u64, w.rows(), w.cols()))
            .collect();
        let (lo, hi) = renders.iter().fold((f32::MAX, f32::MIN), |(lo, hi), r| {
            let (a, b) = r.min_max();
            (lo.min(a), hi.max(b))
        });
        let out = blend(&renders, &weights).unwrap();
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}
