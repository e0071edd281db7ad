use darkir_core::model::{self, DarkIr, DarkIrConfig};
use darkir_core::tensor::{
    conv2d, flip_h, irfft2, pixel_shuffle, pixel_unshuffle, read_dkt1, rfft2, rot90, scale, write_dkt1,
};
use darkir_core::{metrics, ConvSpec, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_round_trips(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let x = rand(&[2, 3, h, w], seed);
        let back = irfft2(&rfft2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn shuffle_and_unshuffle_are_inverse(c in 1usize..4, r in 1usize..4, hw in 1usize..5, seed in any::<u64>()) {
        let x = rand(&[1, c * r * r, hw, hw + 1], seed);
        let up = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(up.shape(), &[1, c, hw * r, (hw + 1) * r][..]);
        prop_assert_eq!(pixel_unshuffle(&up, r).unwrap(), x);
    }

    #[test]
    fn quarter_turns_and_flips_compose_to_identity(h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let x = rand(&[1, 2, h, w], seed);
        let mut y = x.clone();
        for _ in 0..4 {
            y = rot90(&y, 1).unwrap();
        }
        prop_assert_eq!(&y, &x);
        prop_assert_eq!(flip_h(&flip_h(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn convolution_is_linear_in_its_input(k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..3, seed in any::<u64>()) {
        let spec = ConvSpec::same(k, d, 1);
        let x = rand(&[1, 2, 7, 6], seed);
        let wt = rand(&[3, 2, k, k], seed ^ 1);
        let a = conv2d(&scale(&x, 2.5), &wt, None, &spec).unwrap();
        let b = scale(&conv2d(&x, &wt, None, &spec).unwrap(), 2.5);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn tensor_files_round_trip(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let x: Tensor<f32> = rand(&dims, seed).cast();
        let mut buf = Vec::new();
        write_dkt1(&mut buf, &x).unwrap();
        let back: Tensor<f32> = read_dkt1(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn psnr_is_symmetric_and_ssim_is_one_on_equal_images(seed in any::<u64>()) {
        let a = rand(&[1, 3, 16, 16], seed).map(|v| 0.5 + 0.4 * v);
        let b = rand(&[1, 3, 16, 16], seed ^ 7).map(|v| 0.5 + 0.4 * v);
        let (ab, ba) = (metrics::psnr(&a, &b, 1.0).unwrap(), metrics::psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((metrics::ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn restore_keeps_any_extent() {
    let net = DarkIr::<f32>::build(&DarkIrConfig::with_width(4), 2).unwrap();
    for (h, w) in [(17, 9), (8, 8), (33, 20)] {
        let y: Tensor<f32> = rand(&[1, 3, h, w], 5).map(|v| 0.5 + 0.5 * v).cast();
        let (x, low) = net.restore(&y).unwrap();
        assert_eq!(x.shape(), &[1, 3, h, w]);
        assert!(x.is_finite() && low.is_finite());
    }
}

#[test]
fn saved_checkpoint_restores_the_same_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.dkc");
    let net = DarkIr::<f32>::build(&DarkIrConfig::tiny(), 11).unwrap();
    model::save(&net, &path).unwrap();
    let back = model::load(&path).unwrap();
    assert_eq!(back.config(), net.config());
    let y: Tensor<f32> = rand(&[1, 3, 16, 16], 3).map(|v| 0.5 + 0.5 * v).cast();
    assert_eq!(back.infer(&y).unwrap(), net.infer(&y).unwrap());

    let mut other = DarkIrConfig::tiny();
    other.width *= 2;
    assert!(model::load_as(&path, &other).is_err());
}
