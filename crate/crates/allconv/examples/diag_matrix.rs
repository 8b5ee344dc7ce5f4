//! TEMPORARY diagnostic: whiten x augment matrix at a gentle learning rate.

use allconv::data::{
    apply_preprocessing, fit_preprocessing, synthetic_dataset, Split, DEFAULT_GCN_EPS,
};
use allconv::model::{build_architecture, LayerSpec};
use allconv::train::{train, Schedule, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let train_set = synthetic_dataset(8000, 1, 0, Split::Train).unwrap();
    let test_set = synthetic_dataset(2000, 1, 8000, Split::Test).unwrap();
    let stats = fit_preprocessing(&train_set, DEFAULT_GCN_EPS, None).unwrap();
    let train_w = apply_preprocessing(&stats, &train_set).unwrap();
    let test_w = apply_preprocessing(&stats, &test_set).unwrap();

    for (whiten, augment) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut model = build_architecture::<f32>("allcnn-c", 10, 0.25, 1).unwrap();
        let mut first = true;
        for layer in model.layers.iter_mut() {
            if let LayerSpec::Dropout { rate } = layer {
                *rate = if first { 0.2 } else { 0.5 };
                first = false;
            }
        }
        let tc = TrainConfig {
            epochs: 2,
            batch: 64,
            schedule: Schedule::new(lr, vec![200], 0.1).unwrap(),
            momentum: 0.9,
            weight_decay: 0.001,
            augment,
            seed: 1,
        };
        let (tr, te) = if whiten {
            (&train_w, &test_w)
        } else {
            (&train_set, &test_set)
        };
        println!("--- lr {lr} whiten={whiten} augment={augment}");
        train(&mut model, tr, Some(te), &tc, |m| {
            println!(
                "  epoch {} loss {:.4} err {:?}",
                m.epoch, m.train_loss, m.test_error
            );
        })
        .unwrap();
    }
}
