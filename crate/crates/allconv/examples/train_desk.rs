//! A complete miniature training run on the built-in synthetic corpus:
//! config -> data -> model -> SGD with momentum -> metrics + checkpoint,
//! all in a few seconds and entirely offline.
//!
//! Run with: cargo run --example train_desk

use std::path::PathBuf;

use allconv::cli::{run_training, DatasetKind, RunConfig};

fn main() -> allconv::Result<()> {
    let out_dir = PathBuf::from("target/example-output/train-desk");
    // Dropout is disabled and augmentation left off so this miniature
    // model visibly learns the corpus within a few seconds.
    let cfg = RunConfig {
        arch: "allcnn-a".into(),
        scale: 0.25,
        classes: 10,
        dataset: DatasetKind::Synthetic,
        data_dir: None,
        train_samples: 768,
        test_samples: 192,
        out_dir: out_dir.clone(),
        seed: 3,
        epochs: 6,
        batch: 32,
        base_lr: 0.01,
        milestones: vec![5],
        lr_factor: 0.1,
        momentum: 0.9,
        weight_decay: 0.001,
        augment: false,
        whiten: false,
        input_dropout: 0.0,
        interior_dropout: 0.0,
    };

    let metrics = run_training(&cfg)?;
    println!("\nepoch  lr        train_loss  test_error");
    for m in &metrics {
        println!(
            "{:<6} {:<9.6} {:<11.6} {}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.test_error.map(|e| format!("{e:.4}")).unwrap_or_default()
        );
    }
    let first = metrics.first().expect("at least one epoch");
    let last = metrics.last().expect("at least one epoch");
    println!(
        "\nloss {:.4} -> {:.4}; artifacts in {}",
        first.train_loss,
        last.train_loss,
        out_dir.display()
    );
    assert!(
        last.train_loss < first.train_loss,
        "training should reduce the loss on this corpus"
    );
    Ok(())
}
