//! Structural equivalences between downsampling forms: a strided convolution
//! is a dense convolution subsampled on the stride grid, and pooling is a
//! special case of convolution in the p-norm sense.

use allconv::layers::{
    conv2d_forward, maxpool_forward, pnorm_pool_forward, pool_padding, Activation, ConvParams,
};
use allconv::rng::Rng;
use allconv::tensor::{Dims, Tensor};

fn random_tensor(dims: Dims, rng: &mut Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(dims);
    for v in t.data_mut().iter_mut() {
        *v = rng.next_gaussian();
    }
    t
}

fn random_nonneg_tensor(dims: Dims, rng: &mut Rng) -> Tensor<f64> {
    let mut t = random_tensor(dims, rng);
    for v in t.data_mut().iter_mut() {
        *v = v.abs();
    }
    t
}

/// A strided convolution must equal the dense (stride-1) convolution of the
/// same kernel, keeping only the outputs whose top-left window corner lands
/// on the stride grid: out_r[i][j] == out_1[r*i][r*j], bitwise.
#[test]
fn strided_convolution_equals_subsampled_dense_convolution() {
    let mut rng = Rng::new(0x5eed);
    let mut instances = 0usize;
    for &r in &[2usize, 3] {
        for &k in &[1usize, 2, 3, 5] {
            for &pad in &[0usize, 1, 2] {
                if pad >= k {
                    continue;
                }
                for &hw in &[7usize, 8, 11] {
                    let in_c = 1 + (instances % 3);
                    let out_c = 1 + ((instances / 3) % 4);
                    let input =
                        random_tensor(Dims::new(2, in_c, hw, hw), &mut rng);
                    let mut strided = ConvParams::<f64>::init_gaussian(
                        in_c,
                        out_c,
                        k,
                        r,
                        pad,
                        Activation::Relu,
                        &mut rng,
                    )
                    .unwrap();
                    for b in strided.bias.iter_mut() {
                        *b = rng.next_gaussian();
                    }
                    let mut dense = strided.clone();
                    dense.stride = 1;

                    let out_r = conv2d_forward(&input, &strided).unwrap();
                    let out_1 = conv2d_forward(&input, &dense).unwrap();
                    let dr = out_r.dims();
                    for b in 0..dr.batch {
                        for c in 0..dr.channels {
                            for i in 0..dr.height {
                                for j in 0..dr.width {
                                    let got = out_r.at(b, c, i, j);
                                    let want = out_1.at(b, c, r * i, r * j);
                                    assert_eq!(
                                        got, want,
                                        "k={k} r={r} pad={pad} hw={hw} at b={b} c={c} i={i} j={j}"
                                    );
                                }
                            }
                        }
                    }
                    instances += 1;
                }
            }
        }
    }
    assert!(instances >= 50, "expected a broad sweep, got {instances}");
}

/// With p = 1 on non-negative inputs, p-norm pooling is exactly a
/// convolution whose kernel connects each channel only to itself with
/// all-ones weights (w[o][u] = 1 if u == o, else 0) and zero bias.
#[test]
fn sum_pooling_is_a_feature_wise_all_ones_convolution() {
    let mut rng = Rng::new(42);
    for &(k, r) in &[(2usize, 2usize), (3, 2), (3, 1), (2, 1)] {
        let c = 3usize;
        let input = random_nonneg_tensor(Dims::new(2, c, 9, 9), &mut rng);
        let pooled = pnorm_pool_forward(&input, k, r, 1.0).unwrap();

        let pad = pool_padding(k);
        let mut conv =
            ConvParams::<f64>::zeros(c, c, k, r, pad, Activation::Identity).unwrap();
        for o in 0..c {
            for t in 0..k * k {
                let idx = conv.w_at(o, o, t / k, t % k);
                conv.weights[idx] = 1.0;
            }
        }
        let conved = conv2d_forward(&input, &conv).unwrap();

        assert_eq!(pooled.dims(), conved.dims(), "k={k} r={r}");
        let mut worst = 0f64;
        for (a, b) in pooled.data().iter().zip(conved.data().iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-5, "k={k} r={r}: max |pool - conv| = {worst:e}");
    }
}

/// The p = infinity path must agree exactly with an independent brute-force
/// maximum of |f| over each (zero-padded) window.
#[test]
fn infinite_order_pooling_equals_brute_force_window_max() {
    let mut rng = Rng::new(7);
    for &(k, r, hw) in &[(3usize, 2usize, 8usize), (2, 2, 8), (3, 1, 7), (4, 3, 11)] {
        let input = random_tensor(Dims::new(2, 3, hw, hw), &mut rng);
        let pooled = pnorm_pool_forward(&input, k, r, f64::INFINITY).unwrap();
        let d = input.dims();
        let od = pooled.dims();
        let pad = pool_padding(k);
        for b in 0..od.batch {
            for c in 0..od.channels {
                for i in 0..od.height {
                    for j in 0..od.width {
                        let mut best = 0f64; // zero padding contributes |0|
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (i * r + ky) as i64 - pad as i64;
                                let x = (j * r + kx) as i64 - pad as i64;
                                if y < 0 || x < 0 {
                                    continue;
                                }
                                let (y, x) = (y as usize, x as usize);
                                if y >= d.height || x >= d.width {
                                    continue;
                                }
                                best = best.max(input.at(b, c, y, x).abs());
                            }
                        }
                        assert_eq!(
                            pooled.at(b, c, i, j),
                            best,
                            "k={k} r={r} hw={hw} at b={b} c={c} i={i} j={j}"
                        );
                    }
                }
            }
        }
    }
}

/// On non-negative inputs (the post-rectifier regime), signed max pooling and
/// infinite-order p-norm pooling coincide exactly.
#[test]
fn max_pooling_matches_infinite_order_pooling_on_nonnegative_inputs() {
    let mut rng = Rng::new(99);
    for &(k, r) in &[(3usize, 2usize), (2, 2), (3, 1)] {
        let input = random_nonneg_tensor(Dims::new(3, 2, 10, 10), &mut rng);
        let (maxed, _switches) = maxpool_forward(&input, k, r).unwrap();
        let pnormed = pnorm_pool_forward(&input, k, r, f64::INFINITY).unwrap();
        assert_eq!(maxed.dims(), pnormed.dims());
        for (a, b) in maxed.data().iter().zip(pnormed.data().iter()) {
            assert_eq!(a, b, "k={k} r={r}");
        }
    }
}

/// Finite p approaches the max as p grows: deviation from the infinite-order
/// result should shrink monotonically along p = 2, 8, 64 on a fixed input.
#[test]
fn pnorm_deviation_from_max_shrinks_as_p_grows() {
    let mut rng = Rng::new(123);
    let input = random_nonneg_tensor(Dims::new(1, 2, 8, 8), &mut rng);
    let exact = pnorm_pool_forward(&input, 3, 2, f64::INFINITY).unwrap();
    let mut last = f64::INFINITY;
    for &p in &[2.0f64, 8.0, 64.0] {
        let approx = pnorm_pool_forward(&input, 3, 2, p).unwrap();
        let mut worst = 0f64;
        for (a, b) in approx.data().iter().zip(exact.data().iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(
            worst < last,
            "p={p}: deviation {worst:e} did not shrink from {last:e}"
        );
        last = worst;
    }
    // a k*k window inflates the max by at most (k*k)^(1/p): 9^(1/64) - 1 = 3.5%
    assert!(last < 5e-2, "p=64 should be close to the max, got {last:e}");
}
