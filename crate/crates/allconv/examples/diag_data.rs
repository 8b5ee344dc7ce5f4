//! TEMPORARY diagnostic: is the whitened synthetic corpus still separable?

use allconv::data::{
    apply_preprocessing, fit_preprocessing, synthetic_dataset, Split, DEFAULT_GCN_EPS,
};

fn stats(tag: &str, ds: &allconv::data::Dataset) {
    let d = ds.images.dims();
    let data = ds.images.data();
    let n = data.len() as f64;
    let mean = data.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in data {
        lo = lo.min(*v as f64);
        hi = hi.max(*v as f64);
    }
    println!(
        "{tag}: dims {d:?} mean {mean:.4} std {:.4} min {lo:.3} max {hi:.3}",
        var.sqrt()
    );
}

fn nearest_centroid_error(train: &allconv::data::Dataset, test: &allconv::data::Dataset) -> f64 {
    let sample_len = train.images.dims().sample_len();
    let classes = train.classes;
    let mut centroids = vec![vec![0f64; sample_len]; classes];
    let mut counts = vec![0usize; classes];
    for b in 0..train.len() {
        let y = train.labels[b] as usize;
        counts[y] += 1;
        for (acc, v) in centroids[y].iter_mut().zip(train.images.sample(b)) {
            *acc += *v as f64;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        for v in c.iter_mut() {
            *v /= (*n).max(1) as f64;
        }
    }
    let mut wrong = 0usize;
    for b in 0..test.len() {
        let x = test.images.sample(b);
        let mut best = (f64::INFINITY, 0usize);
        for (k, c) in centroids.iter().enumerate() {
            let d2: f64 = c
                .iter()
                .zip(x)
                .map(|(ci, xi)| (ci - *xi as f64).powi(2))
                .sum();
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        if best.1 != test.labels[b] as usize {
            wrong += 1;
        }
    }
    wrong as f64 / test.len() as f64
}

fn main() {
    let train = synthetic_dataset(8000, 1, 0, Split::Train).unwrap();
    let test = synthetic_dataset(2000, 1, 8000, Split::Test).unwrap();
    stats("raw train", &train);
    println!(
        "raw nearest-centroid test error: {:.3}",
        nearest_centroid_error(&train, &test)
    );

    let stats_w = fit_preprocessing(&train, DEFAULT_GCN_EPS, None).unwrap();
    let train_w = apply_preprocessing(&stats_w, &train).unwrap();
    let test_w = apply_preprocessing(&stats_w, &test).unwrap();
    stats("whitened train", &train_w);
    stats("whitened test", &test_w);
    println!(
        "whitened nearest-centroid test error: {:.3}",
        nearest_centroid_error(&train_w, &test_w)
    );
}
