//! TEMPORARY diagnostic: init-scale variants at lr 0.05 (delete before ship).

use allconv::data::{
    apply_preprocessing, fit_preprocessing, synthetic_dataset, Split, DEFAULT_GCN_EPS,
};
use allconv::model::{build_architecture, LayerSpec};
use allconv::train::{train, Schedule, TrainConfig};

fn main() {
    let train_set = synthetic_dataset(8000, 1, 0, Split::Train).unwrap();
    let test_set = synthetic_dataset(2000, 1, 8000, Split::Test).unwrap();
    let stats = fit_preprocessing(&train_set, DEFAULT_GCN_EPS, None).unwrap();
    let train_w = apply_preprocessing(&stats, &train_set).unwrap();
    let test_w = apply_preprocessing(&stats, &test_set).unwrap();

    for (tag, w_scale, zero_last) in [
        ("he (baseline)", 1.0_f32, false),
        ("xavier (he/sqrt2)", std::f32::consts::FRAC_1_SQRT_2, false),
        ("he + zero final", 1.0, true),
        ("xavier + zero final", std::f32::consts::FRAC_1_SQRT_2, true),
    ] {
        let mut model = build_architecture::<f32>("allcnn-c", 10, 0.25, 1).unwrap();
        for layer in model.layers.iter_mut() {
            if let LayerSpec::Dropout { rate } = layer {
                *rate = if *rate > 0.0 { *rate } else { *rate };
            }
        }
        // criterion-style dropout rates: first dropout 0.2, rest 0.5
        let mut first = true;
        for layer in model.layers.iter_mut() {
            if let LayerSpec::Dropout { rate } = layer {
                *rate = if first { 0.2 } else { 0.5 };
                first = false;
            }
        }
        let n_conv = model.params.len();
        for (i, p) in model.params.iter_mut().enumerate() {
            for w in p.weights.iter_mut() {
                *w *= w_scale;
            }
            if zero_last && i == n_conv - 1 {
                for w in p.weights.iter_mut() {
                    *w = 0.0;
                }
            }
        }
        let tc = TrainConfig {
            epochs: 2,
            batch: 64,
            schedule: Schedule::new(0.05, vec![200, 250, 300], 0.1).unwrap(),
            momentum: 0.9,
            weight_decay: 0.001,
            augment: true,
            seed: 1,
        };
        println!("--- {tag}");
        let metrics = train(&mut model, &train_w, Some(&test_w), &tc, |m| {
            println!(
                "  epoch {} loss {:.4} err {:?}",
                m.epoch, m.train_loss, m.test_error
            );
        })
        .unwrap();
        let _ = metrics;
    }
}
