//! Shared helpers for integration tests: naive reference implementations
//! and a tiny separable synthetic corpus written as real PPM files.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualstream::data::{make_split, DatasetManifest, Label};

/// Direct quadruple-loop convolution (cross-correlation orientation), the
/// independent oracle for conv2d.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Direct triple-loop matrix multiply, the independent oracle for linear.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Write one PPM with the given pixel generator (values in [0,1]).
pub fn write_ppm(path: &Path, side: usize, mut pixel: impl FnMut(usize, usize, usize) -> f64) {
    let mut bytes = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                let v = pixel(c, y, x).clamp(0.0, 1.0);
                bytes.push((v * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, bytes).unwrap();
}

/// Layer-by-layer parameter tally for the default architecture, written out
/// independently of the model code. Convolutions feeding batch norm carry
/// no bias; the strided branch of the fused block, the content head, the
/// MLPs, and the classifier do.
pub fn closed_form_census() -> usize {
    let conv = |cout: usize, cin: usize, k: usize, bias: bool| {
        cout * cin * k * k + if bias { cout } else { 0 }
    };
    let bn = |c: usize| 2 * c;
    let module_a =
        |cin: usize, c: usize| conv(c, cin, 3, false) + bn(c) + conv(c, c, 3, false) + bn(c);
    let module_b1 = |cin: usize, c: usize| conv(c, cin, 3, false) + bn(c) + conv(c, cin, 3, true);
    let module_b2 = |cin: usize, c: usize| conv(c, cin, 3, false) + bn(c);

    let residual = module_a(90, 64)
        + module_b1(64, 128)
        + module_b1(128, 256)
        + module_b1(256, 256)
        + module_b1(256, 256);
    let content_head = conv(3, 3, 1, true) + conv(6, 6, 3, true) + conv(6, 6, 3, true);
    let content = content_head
        + module_a(12, 64)
        + module_b2(64, 128)
        + module_b2(128, 256)
        + module_b2(256, 256)
        + module_b2(256, 256);

    let (width, heads, ratio) = (256usize, 8usize, 4usize);
    let dk = width / heads;
    let layer_norm = 2 * width;
    let projections = 4 * heads * dk * dk; // q/k per direction, per head
    let out_projections = 2 * width * width;
    let mlp = width * (width * ratio) + width * ratio + (width * ratio) * width + width;
    let encoder_block = 4 * layer_norm + projections + out_projections + 2 * mlp;
    let encoder = 2 * encoder_block;

    let classifier = 512 + 1;

    residual + content + encoder + classifier
}

/// A linearly separable toy corpus: "generated" images are high-frequency
/// noise, "photos" are smooth ramps with a trace of noise. `n_per_class`
/// files per class, all in the train split.
pub fn write_smoke_corpus(dir: &Path, side: usize, n_per_class: usize, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..n_per_class {
        let path = dir.join(format!("noise_{i}.ppm"));
        let mut local = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1));
        write_ppm(&path, side, |_, _, _| local.gen_range(0.0..1.0));
        records.push((path, Label::Generated));
    }
    for i in 0..n_per_class {
        let path = dir.join(format!("smooth_{i}.ppm"));
        let ax = rng.gen_range(-0.4..0.4);
        let ay = rng.gen_range(-0.4..0.4);
        let base = rng.gen_range(0.2..0.8);
        let mut local = ChaCha8Rng::seed_from_u64(seed ^ (0x1000 + i as u64));
        write_ppm(&path, side, |_, y, x| {
            base + ax * (x as f64 / side as f64) + ay * (y as f64 / side as f64)
                + local.gen_range(-0.01..0.01)
        });
        records.push((path, Label::Photo));
    }
    make_split(records, (1, 0, 0), seed).unwrap()
}
