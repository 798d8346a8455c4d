#![allow(dead_code)]

//! Independent reference implementations for oracle tests. Everything here
//! is written as plain nested loops over scalars, deliberately sharing no
//! code with the library's kernels.

use stickpose::tape::ConvSpec;
use stickpose::tensor::Tensor;

/// Direct quadruple-loop cross-correlation with zero padding.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, bias: &[f64], spec: ConvSpec) -> Tensor {
    let ish = input.shape();
    let ksh = kernel.shape();
    let (b, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (cout, kh, kw) = (ksh[0], ksh[2], ksh[3]);
    assert_eq!(ksh[1], cin);
    let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
    let ho = ((h as i64 + 2 * p - d * (kh as i64 - 1) - 1) / s + 1) as usize;
    let wo = ((w as i64 + 2 * p - d * (kw as i64 - 1) - 1) / s + 1) as usize;
    let mut out = vec![0.0; b * cout * ho * wo];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as i64 * s + ky as i64 * d - p;
                                let ix = ox as i64 * s + kx as i64 * d - p;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let iv = input.data()
                                    [((bi * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kernel.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, ho, wo], out).unwrap()
}

/// Scalar-by-scalar GRU step for 1x1 kernels: every map cell evolves
/// independently, so the reference treats each cell as a plain scalar GRU.
#[allow(clippy::too_many_arguments)]
pub fn scalar_gru_1x1(
    h: &[f64],
    x: &[f64],
    w_z: f64,
    u_z: f64,
    b_z: f64,
    w_r: f64,
    u_r: f64,
    b_r: f64,
    w_h: f64,
    u_h: f64,
    b_h: f64,
) -> Vec<f64> {
    let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
    h.iter()
        .zip(x)
        .map(|(&hv, &xv)| {
            let z = sigma(w_z * xv + u_z * hv + b_z);
            let r = sigma(w_r * xv + u_r * hv + b_r);
            let cand = (w_h * xv + u_h * (r * hv) + b_h).tanh();
            (1.0 - z) * hv + z * cand
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Deterministic pseudo-random tensor for oracle inputs.
pub fn seeded_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    use rand::Rng;
    let mut rng = stickpose::rng::stream(seed, "tests/oracle");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
