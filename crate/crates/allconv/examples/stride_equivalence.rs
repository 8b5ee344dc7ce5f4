//! Two equivalences behind replacing pooling with convolution:
//!
//! 1. A stride-r convolution equals the stride-1 convolution of the same
//!    kernel, subsampled at every r-th output position — downsampling
//!    keeps only the top-left response of each window.
//! 2. p-norm pooling bridges summation and max: with p=1 on non-negative
//!    inputs it is an all-ones feature-wise convolution, and as p grows
//!    it approaches the window maximum (p = infinity is exact max).
//!
//! Run with: cargo run --example stride_equivalence

use allconv::layers::{conv2d_forward, pnorm_pool_forward, Activation, ConvParams};
use allconv::rng::Rng;
use allconv::tensor::{Dims, Tensor};

fn main() -> allconv::Result<()> {
    let mut rng = Rng::new(11);
    let input = Tensor::from_fn(Dims::new(2, 3, 16, 16), |_, _, _, _| rng.next_f64() - 0.5);

    // 1. Strided convolution = dense convolution + subsampling.
    let dense = ConvParams::<f64>::init_gaussian(3, 8, 3, 1, 1, Activation::Identity, &mut rng)?;
    let mut strided = dense.clone();
    strided.stride = 2;

    let full = conv2d_forward(&input, &dense)?;
    let sub = conv2d_forward(&input, &strided)?;
    let d = sub.dims();
    let mut max_diff: f64 = 0.0;
    for b in 0..d.batch {
        for c in 0..d.channels {
            for i in 0..d.height {
                for j in 0..d.width {
                    let diff = (sub.at(b, c, i, j) - full.at(b, c, 2 * i, 2 * j)).abs();
                    max_diff = max_diff.max(diff);
                }
            }
        }
    }
    println!("stride-2 output vs subsampled stride-1 output: max |diff| = {max_diff:e}");
    assert_eq!(max_diff, 0.0, "strided convolution must subsample exactly");

    // 2. p-norm pooling sweeps from summation to max.
    let nonneg = Tensor::from_fn(Dims::new(1, 2, 8, 8), |_, _, _, _| rng.next_f64());
    let maxed = pnorm_pool_forward(&nonneg, 2, 2, f64::INFINITY)?;
    for p in [1.0, 2.0, 4.0, 16.0, 64.0] {
        let pooled = pnorm_pool_forward(&nonneg, 2, 2, p)?;
        let gap: f64 = pooled
            .data()
            .iter()
            .zip(maxed.data())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("p = {p:>4}: max deviation from window max = {gap:.4}");
    }
    println!("p-norm pooling converges to max pooling as p grows");
    Ok(())
}
