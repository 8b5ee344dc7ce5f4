//! Central finite-difference check of the analytic gradients on a
//! width-scaled model, in 64-bit arithmetic.
//!
//! For random weight probes w, compares dL/dw from backpropagation with
//! (L(w+e) - L(w-e)) / 2e and reports the worst relative error.
//!
//! Run with: cargo run --example gradient_check

use allconv::layers::Mode;
use allconv::model::{build_architecture, Model};
use allconv::rng::Rng;
use allconv::tensor::{Dims, Tensor};

fn loss_of(model: &Model<f64>, images: &Tensor<f64>, labels: &[u16]) -> f64 {
    let rng = Rng::new(0);
    let trace = model.forward(images, Mode::Eval, &rng).expect("forward");
    let (loss, _) = model.loss_and_grads(&trace, labels).expect("loss");
    loss
}

fn main() -> allconv::Result<()> {
    let mut model = build_architecture::<f64>("allcnn-a", 10, 0.1, 42)?;
    let mut rng = Rng::new(7);
    let images = Tensor::from_fn(Dims::new(4, 3, 32, 32), |_, _, _, _| rng.next_f64() - 0.5);
    let labels: Vec<u16> = (0..4).map(|i| (i * 3 % 10) as u16).collect();

    let trace = model.forward(&images, Mode::Eval, &Rng::new(0))?;
    let (loss, grads) = model.loss_and_grads(&trace, &labels)?;
    println!("model {} | baseline loss {loss:.6}", model.name);

    let eps = 1e-5;
    let probes = 20;
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        // A deterministic spread of (parameter group, weight index) probes.
        let g = probe % model.params.len();
        let len = model.params[g].weights.len();
        let idx = (probe * 2654435761) % len;

        let analytic = grads.weights[g][idx];
        let orig = model.params[g].weights[idx];
        model.params[g].weights[idx] = orig + eps;
        let up = loss_of(&model, &images, &labels);
        model.params[g].weights[idx] = orig - eps;
        let down = loss_of(&model, &images, &labels);
        model.params[g].weights[idx] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        println!(
            "probe {probe:>2}: group {g} index {idx:>6}  analytic {analytic:+.8e}  numeric {numeric:+.8e}  rel {rel:.2e}"
        );
    }
    println!("worst relative error over {probes} probes: {worst:.2e}");
    assert!(worst < 1e-6, "gradient check failed");
    println!("gradients agree with finite differences");
    Ok(())
}
