use hyperpix::imageio::encode_image;
use hyperpix::metrics::{
    bicubic_resample, evaluate_dirs, psnr, score, ssim, BicubicKernel, Convention, EvalOptions, SsimParams, BICUBIC,
    HYPERNET,
};
use hyperpix::{Error, HyperNet, HyperNetConfig, Image, PhiParameters, TargetNetConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0))
}

#[test]
fn psnr_examples() {
    let x = random_image(1, 12, 12);
    assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    let shifted = Image::from_fn(12, 12, 3, |_, _, _| 0.5 + 16.0 / 255.0);
    let base = Image::filled(12, 12, 3, 0.5);
    let expect = 20.0 * (255.0f64 / 16.0).log10();
    assert!((psnr(&base, &shifted).unwrap() - expect).abs() < 1e-3);
    let y = random_image(2, 12, 12);
    assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    assert!(psnr(&x, &random_image(3, 12, 11)).is_err());
}

#[test]
fn ssim_examples() {
    let params = SsimParams::default();
    let board = Image::from_fn(16, 16, 3, |r, c, _| if (r + c) % 2 == 0 { 0.25 } else { 0.75 });
    let inverted = Image::from_fn(16, 16, 3, |r, c, ch| 1.0 - board.get(r, c, ch));
    assert!(ssim(&board, &inverted, &params).unwrap() < 0.5);
    assert_eq!(ssim(&board, &board, &params).unwrap(), 1.0);
    assert!(ssim(&random_image(4, 10, 20), &random_image(5, 10, 20), &params).is_err());
    assert!(params.c1() > 0.0 && params.c2() > 0.0);
    let sum: f64 = params.kernel_1d().iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn kernel_examples() {
    let k = BicubicKernel::default();
    assert_eq!(k.a, -0.5);
    assert_eq!(k.weight(0.0), 1.0);
    assert_eq!(k.weight(0.5), 0.5625);
    assert_eq!(k.weight(2.0), 0.0);
    assert_eq!(k.weight(-3.5), 0.0);
}

#[test]
fn border_convention_scores_luma_inside_the_border() {
    let x = random_image(6, 24, 24);
    let mut y = x.clone();
    // Damage only the outermost ring; the y-border score ignores it.
    for i in 0..24 {
        for ch in 0..3 {
            y.set(0, i, ch, 0.0);
            y.set(i, 0, ch, 0.0);
        }
    }
    let (p, s) = score(&x, &y, Convention::YBorder, 2).unwrap();
    assert_eq!(p, f64::INFINITY);
    assert!((s - 1.0).abs() < 1e-12);
    let (p, _) = score(&x, &y, Convention::Rgb, 0).unwrap();
    assert!(p.is_finite());
}

fn evaluation_model() -> (HyperNet, PhiParameters) {
    let target = TargetNetConfig::with_scale_input();
    let net = HyperNet::new(HyperNetConfig::for_patch(&target, 16), target).unwrap();
    let phi = net.init(0);
    (net, phi)
}

#[test]
fn evaluation_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("tiny");
    std::fs::create_dir(&set).unwrap();
    encode_image(&random_image(7, 36, 40), &set.join("b.png")).unwrap();
    encode_image(&random_image(8, 30, 33), &set.join("a.ppm")).unwrap();
    std::fs::write(set.join("junk.png"), b"??").unwrap();
    let (net, phi) = evaluation_model();
    let table = evaluate_dirs(&net, &phi, &[set.clone()], &[2, 3, 4], &EvalOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.rows[0].image, "a.ppm");
    assert_eq!((table.rows[0].method, table.rows[1].method), (BICUBIC, HYPERNET));
    let tsv = table.to_tsv();
    let mut lines = tsv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "dataset\timage\tscale\tmethod\tpsnr_db\tssim");
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 14);
    assert_eq!(body.iter().filter(|l| l.starts_with("tiny\tmean\tall\t")).count(), 2);
    assert!(tsv.starts_with("# convention: rgb"));
    assert_eq!(table.layout().lines().count(), 4);

    let ident = evaluate_dirs(&net, &phi, &[set], &[1], &EvalOptions::default()).unwrap();
    for row in ident.rows.iter().filter(|r| r.method == BICUBIC) {
        assert_eq!(row.psnr, f64::INFINITY);
    }
}

#[test]
fn evaluation_rejects_missing_directories() {
    let (net, phi) = evaluation_model();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert!(matches!(
        evaluate_dirs(&net, &phi, &[missing], &[2], &EvalOptions::default()),
        Err(Error::Io { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constants_survive_resampling(c in 0.0f32..=1.0, h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40) {
        let out = bicubic_resample(&Image::filled(h, w, 3, c), oh, ow).unwrap();
        prop_assert!(out.data().iter().all(|&v| v == c));
    }

    #[test]
    fn same_size_resample_is_identity(seed in any::<u64>(), h in 1usize..16, w in 1usize..16) {
        let x = random_image(seed, h, w);
        prop_assert_eq!(bicubic_resample(&x, h, w).unwrap(), x);
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in any::<u64>()) {
        let params = SsimParams::default();
        let (x, y) = (random_image(seed, 14, 15), random_image(seed ^ 1, 14, 15));
        let (a, b) = (ssim(&x, &y, &params).unwrap(), ssim(&y, &x, &params).unwrap());
        prop_assert!(a < 1.0 && a >= -1.0);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn keys_taps_sum_to_one(t in 0.0f64..1.0) {
        let k = BicubicKernel::default();
        let sum: f64 = (-2..=2).map(|i| k.weight(t - f64::from(i))).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}
