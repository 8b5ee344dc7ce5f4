//! Converts a fully convolutional model into a max-pooling variant:
//! every stride-2 convolution becomes the same convolution at stride 1
//! followed by 2x2 max pooling. Output shapes are preserved, and the
//! pooling layers record argmax switches for visualization.
//!
//! Run with: cargo run --example pool_surgery

use allconv::cli::describe_model;
use allconv::model::build_architecture;

fn main() -> allconv::Result<()> {
    let model = build_architecture::<f32>("allcnn-a", 10, 0.25, 1)?;
    println!("before:\n{}\n", describe_model(&model)?);

    let pooled = model.pool_surgery()?;
    println!("after:\n{}\n", describe_model(&pooled)?);

    let before = model.shape_trace(32, 32)?;
    let after = pooled.shape_trace(32, 32)?;
    assert_eq!(
        before.last(),
        after.last(),
        "surgery must not change the output shape"
    );
    assert_eq!(
        model.count_parameters(),
        pooled.count_parameters(),
        "surgery must not change the parameter count"
    );
    println!(
        "shapes preserved: {} layers -> {} layers, {} parameters unchanged",
        model.layers.len(),
        pooled.layers.len(),
        model.count_parameters()
    );
    Ok(())
}
