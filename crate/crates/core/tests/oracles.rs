//! Oracle equivalence: the fast paths must agree with naive direct-summation
//! references on randomized instances, to near machine precision in f64.

mod common;

use common::{naive_conv2d, naive_matmul};
use dualstream::srm::{build_filter_bank, extract_residuals};
use dualstream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

#[test]
fn conv2d_matches_naive_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..25 {
        let n = rng.gen_range(1..=4);
        let cin = rng.gen_range(1..=8);
        let cout = rng.gen_range(1..=8);
        let k = *[1usize, 3, 5].iter().filter(|&&k| k <= 7).nth(rng.gen_range(0..3)).unwrap();
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=2);
        let h = rng.gen_range(k.max(3)..=16);
        let w = rng.gen_range(k.max(3)..=16);
        let with_bias = rng.gen_bool(0.5);

        let x: Vec<f64> = (0..n * cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (want, oh, ow) = naive_conv2d(
            &x,
            n,
            cin,
            h,
            w,
            &wt,
            cout,
            k,
            with_bias.then_some(b.as_slice()),
            stride,
            pad,
        );
        let xt = Tensor::constant(&[n, cin, h, w], x).unwrap();
        let wtt = Tensor::constant(&[cout, cin, k, k], wt).unwrap();
        let bt = Tensor::constant(&[cout], b).unwrap();
        let got = xt
            .conv2d(&wtt, with_bias.then_some(&bt), stride, pad)
            .unwrap();
        assert_eq!(got.shape(), &[n, cout, oh, ow], "case {case}");
        let gd = got.to_vec();
        let max_diff = gd
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < TOL, "case {case}: max diff {max_diff}");
    }
}

#[test]
fn linear_matches_naive_matmul_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..25 {
        let m = rng.gen_range(1..=12);
        let k = rng.gen_range(1..=12);
        let n = rng.gen_range(1..=12);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let want = naive_matmul(&a, &b, m, k, n);
        let at = Tensor::constant(&[m, k], a).unwrap();
        let bt = Tensor::constant(&[k, n], b).unwrap();
        let got = at.linear(&bt, None).unwrap().to_vec();
        let max_diff = got
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < TOL, "case {case}: max diff {max_diff}");
    }
}

#[test]
fn residual_extraction_matches_per_channel_naive_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let bank = build_filter_bank::<f64>();
    for case in 0..20 {
        let n = rng.gen_range(1..=2);
        let s = rng.gen_range(5..=12);
        let x: Vec<f64> = (0..n * 3 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xt = Tensor::constant(&[n, 3, s, s], x.clone()).unwrap();
        let got = extract_residuals(&xt, &bank).unwrap();
        assert_eq!(got.shape(), &[n, 90, s, s]);
        let gd = got.to_vec();
        let mut max_diff = 0.0f64;
        for ni in 0..n {
            for (ci, color_plane) in (0..3).map(|c| {
                (
                    c,
                    &x[(ni * 3 + c) * s * s..(ni * 3 + c + 1) * s * s],
                )
            }) {
                for (ki, kernel) in bank.kernels().iter().enumerate() {
                    let (want, _, _) = naive_conv2d(
                        color_plane,
                        1,
                        1,
                        s,
                        s,
                        &kernel.taps,
                        1,
                        5,
                        None,
                        1,
                        2,
                    );
                    let oc = ci * 30 + ki;
                    let got_plane = &gd[(ni * 90 + oc) * s * s..(ni * 90 + oc + 1) * s * s];
                    for (a, b) in got_plane.iter().zip(&want) {
                        max_diff = max_diff.max((a - b).abs());
                    }
                }
            }
        }
        assert!(max_diff < TOL, "case {case}: max diff {max_diff}");
    }
}
