//! TEMPORARY diagnostic - delete before ship.
use allconv::layers::Mode;
use allconv::model::build_architecture;
use allconv::rng::Rng;
use allconv::saliency::{reconstruct, NeuronPosition, NeuronRef, SaliencyRule};
use allconv::tensor::{Dims, Tensor};

fn main() {
    for arch in ["allcnn-a", "a"] {
        let model = build_architecture::<f32>(arch, 10, 0.25, 7).unwrap();
        let mut rng = Rng::new(40);
        let image = Tensor::from_fn(Dims::new(1, 3, 32, 32), |_, _, _, _| rng.next_gaussian() as f32);
        let trace = model.forward(&image, Mode::Eval, &Rng::new(0)).unwrap();
        let out7 = &trace.outputs[7];
        let d = out7.dims();
        let mut mx = f32::MIN;
        let mut pos = (0, 0);
        for y in 0..d.height { for x in 0..d.width {
            let v = out7.at(0, 0, y, x);
            if v > mx { mx = v; pos = (y, x); }
        }}
        println!("{arch}: layer7 dims {:?} ch0 max {mx:.4} at {pos:?}", (d.channels, d.height, d.width));
        for sw in [false, true] {
            for rule in [SaliencyRule::Backprop, SaliencyRule::Deconvnet, SaliencyRule::Guided] {
                let neuron = NeuronRef { layer: 7, channel: 0, position: NeuronPosition::Max };
                match reconstruct(&model, Some(&image), &neuron, rule, sw) {
                    Ok(map) => {
                        let nz = map.data().iter().filter(|v| **v != 0.0).count();
                        let amax = map.data().iter().fold(0f32, |a, v| a.max(v.abs()));
                        println!("  sw={sw} {rule:?}: nonzero {nz}/{} absmax {amax:e}", map.data().len());
                    }
                    Err(e) => println!("  sw={sw} {rule:?}: ERR {e}"),
                }
            }
        }
    }
}
