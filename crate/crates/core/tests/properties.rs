//! Property tests over the numeric core and the data pipeline.

use dualstream::data::transforms::{enhance, EnhanceKind, TransformSpec};
use dualstream::data::{make_split, Label, Split};
use dualstream::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        values in prop::collection::vec(-30.0f64..30.0, 2..24),
        shift in -100.0f64..100.0,
    ) {
        let n = values.len();
        let x = Tensor::constant(&[n], values.clone()).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        let sum: f64 = y.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(y.iter().all(|&v| v >= 0.0));

        let shifted = Tensor::constant(&[n], values.iter().map(|v| v + shift).collect()).unwrap();
        let ys = shifted.softmax(0).unwrap().to_vec();
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn token_map_round_trip_is_bit_exact(
        n in 1usize..3,
        c in 1usize..8,
        r in 1usize..5,
        seed in 0u64..1000,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(&[n, c, r, r], -10.0, 10.0, &mut rng);
        let back = x.tokens_from_maps(c).unwrap().maps_from_tokens(c).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_then_narrow_recovers_each_input(
        a_ext in 1usize..4,
        b_ext in 1usize..4,
        inner in 1usize..5,
        seed in 0u64..1000,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<f64>::rand_uniform(&[2, a_ext, inner], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[2, b_ext, inner], -1.0, 1.0, &mut rng);
        let cat = Tensor::concat(&[&a, &b], 1).unwrap();
        prop_assert_eq!(cat.shape(), &[2, a_ext + b_ext, inner]);
        prop_assert_eq!(cat.narrow(1, 0, a_ext).unwrap().to_vec(), a.to_vec());
        prop_assert_eq!(cat.narrow(1, a_ext, b_ext).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn enhance_preserves_range_shape_and_identity(
        factor in 0.0f64..2.5,
        seed in 0u64..1000,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::<f64>::rand_uniform(&[3, 6, 6], 0.0, 1.0, &mut rng);
        for kind in [
            EnhanceKind::Chromaticity,
            EnhanceKind::Brightness,
            EnhanceKind::Contrast,
            EnhanceKind::Sharpness,
        ] {
            let out = enhance(&img, kind, factor).unwrap();
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for kind in [
            EnhanceKind::Chromaticity,
            EnhanceKind::Brightness,
            EnhanceKind::Contrast,
            EnhanceKind::Sharpness,
        ] {
            prop_assert_eq!(enhance(&img, kind, 1.0).unwrap().to_vec(), img.to_vec());
        }
    }

    #[test]
    fn transform_parameters_stay_in_their_ranges(
        master in 0u64..10_000,
        index in 0u64..10_000,
    ) {
        for spec in TransformSpec::default_suite() {
            let v = spec.parameter(master, index);
            use dualstream::data::transforms::TransformKind::*;
            match spec.kind {
                Chromaticity | Brightness | Contrast => prop_assert!((0.5..=2.5).contains(&v)),
                Sharpness => prop_assert!(v.fract() == 0.0 && (0.0..=4.0).contains(&v)),
                Rotation => prop_assert!((0.0..360.0).contains(&v)),
                GaussianBlur | MeanBlur => prop_assert_eq!(v, 0.0),
            }
        }
    }

    #[test]
    fn splits_partition_for_any_ratio(
        n in 1usize..200,
        rt in 0usize..5,
        rv in 0usize..5,
        rs in 0usize..5,
        seed in 0u64..1000,
    ) {
        prop_assume!(rt + rv + rs > 0);
        let records: Vec<_> = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Photo } else { Label::Generated };
                (std::path::PathBuf::from(format!("r{i}.ppm")), label)
            })
            .collect();
        let m = make_split(records, (rt, rv, rs), seed).unwrap();
        let total = m.split(Split::Train).len() + m.split(Split::Val).len() + m.split(Split::Test).len();
        prop_assert_eq!(total, n);
        // rounded-down shares for train and val
        let sum = rt + rv + rs;
        prop_assert_eq!(m.split(Split::Train).len(), n * rt / sum);
        prop_assert_eq!(m.split(Split::Val).len(), n * rv / sum);
    }
}
