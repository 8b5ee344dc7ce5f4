//! Feature visualization on the synthetic corpus: mines the images that
//! most excite a convolution channel, then projects that channel back to
//! pixel space under all three rectifier backward rules.
//!
//! Writes PPM grids into target/example-output/saliency/.
//!
//! Run with: cargo run --example visualize_saliency

use std::path::PathBuf;

use allconv::data::synthetic_dataset;
use allconv::model::build_architecture;
use allconv::saliency::{
    reconstruct, render_visualization, top_activating_patches, NeuronPosition, NeuronRef,
    SaliencyRule,
};
use allconv::tensor::FeatureMap;

fn main() -> allconv::Result<()> {
    let out_dir = PathBuf::from("target/example-output/saliency");
    std::fs::create_dir_all(&out_dir).expect("create output dir");

    let model = build_architecture::<f32>("allcnn-a", 10, 0.25, 21)?;
    let data = synthetic_dataset(256, 9, 0, allconv::data::Split::Test)?;

    // The second downsampling convolution sees a quarter-resolution view.
    let layer = 5;
    let channels = [0usize, 7, 19];

    let mut maps_per_rule: Vec<(SaliencyRule, &str, Vec<FeatureMap>)> = vec![
        (SaliencyRule::Backprop, "backprop", Vec::new()),
        (SaliencyRule::Deconvnet, "deconvnet", Vec::new()),
        (SaliencyRule::Guided, "guided", Vec::new()),
    ];
    let mut crops: Vec<Vec<FeatureMap>> = Vec::new();

    for &channel in &channels {
        let patches = top_activating_patches(&model, &data, layer, channel, 6)?;
        println!(
            "layer {layer} channel {channel:>2}: best image {} at {:?} with activation {:.4}",
            patches[0].image, patches[0].position, patches[0].activation
        );
        let image = data.images.batch_range(patches[0].image, 1);
        let neuron = NeuronRef {
            layer,
            channel,
            position: NeuronPosition::Max,
        };
        for (rule, _, maps) in &mut maps_per_rule {
            maps.push(reconstruct(&model, Some(&image), &neuron, *rule, false)?);
        }
        crops.push(patches.into_iter().map(|p| p.crop).collect());
    }

    for (_, name, maps) in &maps_per_rule {
        let path = out_dir.join(format!("{name}.ppm"));
        render_visualization(maps, &crops, 1, &path)?;
        println!("wrote {}", path.display());
    }

    // An unconditioned map needs no image at all: flow a seed back using
    // only the backward signs.
    let neuron = NeuronRef {
        layer: 1,
        channel: 2,
        position: NeuronPosition::At(16, 16),
    };
    let uncond = reconstruct(&model, None, &neuron, SaliencyRule::Deconvnet, false)?;
    let path = out_dir.join("unconditioned.ppm");
    render_visualization(&[uncond], &[], 1, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
