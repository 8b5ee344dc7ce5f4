//! Builds every shipped architecture and prints its exact trainable
//! parameter count together with the spatial trace of the feature maps.
//!
//! Run with: cargo run --example count_params

use allconv::model::{build_architecture, ARCHITECTURE_IDS};

fn main() -> allconv::Result<()> {
    println!("{:<12} {:>12}  spatial trace (edge per layer)", "id", "parameters");
    for id in ARCHITECTURE_IDS {
        // The 224x224 model is defined over the 1000-class corpus; all
        // CIFAR-derived models run at 10 classes here.
        let classes = if id == "imagenet" { 1000 } else { 10 };
        let model = build_architecture::<f32>(id, classes, 1.0, 1)?;
        let trace = model.shape_trace(model.in_spatial, model.in_spatial)?;
        let mut edges: Vec<usize> = trace.iter().map(|&(_, h, _)| h).collect();
        edges.dedup();
        let edges: Vec<String> = edges.iter().map(|e| e.to_string()).collect();
        println!(
            "{:<12} {:>12}  {}",
            id,
            model.count_parameters(),
            edges.join(" -> ")
        );
    }

    println!("\nWidth scaling (allcnn-c):");
    for scale in [1.0, 0.5, 0.25, 0.1] {
        let model = build_architecture::<f32>("allcnn-c", 10, scale, 1)?;
        println!("  scale {:<5} -> {:>9} parameters", scale, model.count_parameters());
    }
    Ok(())
}
