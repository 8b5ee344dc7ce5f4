//! Named architecture construction: the three 32x32 base networks, their
//! strided / extra-conv / fully-convolutional derivations, and the two large
//! variants, with optional uniform width scaling.

use crate::error::{Error, Result};
use crate::layers::{Activation, ConvParams, LEAKY_SLOPE};
use crate::model::{LayerSpec, Model};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Canonical ids accepted by [`build_architecture`].
pub const ARCHITECTURE_IDS: [&str; 14] = [
    "a",
    "b",
    "c",
    "strided-a",
    "strided-b",
    "strided-c",
    "convpool-a",
    "convpool-b",
    "convpool-c",
    "allcnn-a",
    "allcnn-b",
    "allcnn-c",
    "large",
    "imagenet",
];

/// Lowercases, trims, and maps the accepted aliases (`all-cnn-c`,
/// `conv_pool_a`, `large-allcnn`, ...) onto the canonical id spelling.
/// Unknown names are returned normalized so error messages stay readable.
pub fn normalize_architecture_id(id: &str) -> String {
    let lower = id.trim().to_ascii_lowercase().replace('_', "-");
    let canon = match lower.as_str() {
        "all-cnn-a" => "allcnn-a",
        "all-cnn-b" => "allcnn-b",
        "all-cnn-c" => "allcnn-c",
        "conv-pool-a" => "convpool-a",
        "conv-pool-b" => "convpool-b",
        "conv-pool-c" => "convpool-c",
        "large-allcnn" | "large-all-cnn" => "large",
        other => other,
    };
    canon.to_string()
}

/// How the pooling stages of a base network are realized.
#[derive(Clone, Copy, PartialEq)]
enum Variant {
    /// 3x3 stride-2 max-pooling, as in the base tables.
    Base,
    /// Pooling removed; the convolution just before it runs at stride 2.
    Strided,
    /// A dense 3x3 convolution inserted before each pooling stage.
    ConvPool,
    /// Pooling replaced by a 3x3 stride-2 convolution.
    AllConv,
}

/// One row of a base-network body: either a convolution or a pooling stage.
#[derive(Clone, Copy)]
enum Row {
    Conv {
        out: usize,
        kernel: usize,
        padding: usize,
    },
    Pool,
}

use Row::{Conv, Pool};

/// Bodies of the three 32x32 base networks (everything before the shared
/// 3x3-valid / 1x1 / 1x1-classifier top).
fn base_body(letter: char) -> Vec<Row> {
    match letter {
        'a' => vec![
            Conv { out: 96, kernel: 5, padding: 2 },
            Pool,
            Conv { out: 192, kernel: 5, padding: 2 },
            Pool,
        ],
        'b' => vec![
            Conv { out: 96, kernel: 5, padding: 2 },
            Conv { out: 96, kernel: 1, padding: 0 },
            Pool,
            Conv { out: 192, kernel: 5, padding: 2 },
            Conv { out: 192, kernel: 1, padding: 0 },
            Pool,
        ],
        'c' => vec![
            Conv { out: 96, kernel: 3, padding: 1 },
            Conv { out: 96, kernel: 3, padding: 1 },
            Pool,
            Conv { out: 192, kernel: 3, padding: 1 },
            Conv { out: 192, kernel: 3, padding: 1 },
            Pool,
        ],
        _ => unreachable!("caller maps ids onto 'a'/'b'/'c'"),
    }
}

/// Rounds a width-scaled channel count to a multiple of 4, never below 4.
fn scaled(channels: usize, scale: f64) -> usize {
    let raw = channels as f64 * scale;
    ((raw / 4.0).round() as usize * 4).max(4)
}

/// Builds one of the named architectures with freshly initialized weights.
///
/// `classes` must be 10, 100, or 1000; `scale` in `(0, 1]` multiplies every
/// interior channel count (rounded to a multiple of 4, minimum 4) and leaves
/// the classifier width at `classes`. Initialization is a pure function of
/// `seed`, so two calls with equal arguments yield identical models.
pub fn build_architecture<T: Scalar>(
    id: &str,
    classes: usize,
    scale: f64,
    seed: u64,
) -> Result<Model<T>> {
    if !(classes == 10 || classes == 100 || classes == 1000) {
        return Err(Error::BadClasses(classes));
    }
    if !(scale > 0.0 && scale <= 1.0) || !scale.is_finite() {
        return Err(Error::BadScale(scale));
    }
    let canon = normalize_architecture_id(id);
    let plan = match canon.as_str() {
        "large" => large_plan(classes, scale),
        "imagenet" => imagenet_plan(classes, scale),
        _ => {
            let (variant, letter) = match canon.as_str() {
                "a" => (Variant::Base, 'a'),
                "b" => (Variant::Base, 'b'),
                "c" => (Variant::Base, 'c'),
                "strided-a" => (Variant::Strided, 'a'),
                "strided-b" => (Variant::Strided, 'b'),
                "strided-c" => (Variant::Strided, 'c'),
                "convpool-a" => (Variant::ConvPool, 'a'),
                "convpool-b" => (Variant::ConvPool, 'b'),
                "convpool-c" => (Variant::ConvPool, 'c'),
                "allcnn-a" => (Variant::AllConv, 'a'),
                "allcnn-b" => (Variant::AllConv, 'b'),
                "allcnn-c" => (Variant::AllConv, 'c'),
                _ => return Err(Error::UnknownArchitecture(canon)),
            };
            cifar_plan(variant, letter, classes, scale)
        }
    };
    realize(canon, plan, classes, seed)
}

/// A fully resolved layer plan: the layer list plus the input geometry.
struct Plan {
    layers: Vec<LayerSpec>,
    in_channels: usize,
    in_spatial: usize,
}

/// Lays out a 32x32 network: 20% input dropout, the body rows with the
/// chosen pooling realization (each pooling stage followed by 50% dropout),
/// then the shared top: 3x3 valid, 1x1, 1x1 down to `classes`, global
/// averaging and the loss.
fn cifar_plan(variant: Variant, letter: char, classes: usize, scale: f64) -> Plan {
    let relu = Activation::Relu;
    let mut layers = vec![LayerSpec::Dropout { rate: 0.2 }];
    let mut prev_out = 0usize;
    for row in base_body(letter) {
        match row {
            Conv { out, kernel, padding } => {
                prev_out = scaled(out, scale);
                layers.push(LayerSpec::Conv {
                    out_channels: prev_out,
                    kernel,
                    stride: 1,
                    padding,
                    activation: relu,
                });
            }
            Pool => {
                match variant {
                    Variant::Base => {
                        layers.push(LayerSpec::MaxPool { kernel: 3, stride: 2 });
                    }
                    Variant::Strided => {
                        // Re-run the convolution just written at stride 2.
                        let Some(LayerSpec::Conv { stride, .. }) = layers.last_mut() else {
                            unreachable!("base bodies always place a conv before a pool");
                        };
                        *stride = 2;
                    }
                    Variant::ConvPool => {
                        layers.push(LayerSpec::Conv {
                            out_channels: prev_out,
                            kernel: 3,
                            stride: 1,
                            padding: 1,
                            activation: relu,
                        });
                        layers.push(LayerSpec::MaxPool { kernel: 3, stride: 2 });
                    }
                    Variant::AllConv => {
                        layers.push(LayerSpec::Conv {
                            out_channels: prev_out,
                            kernel: 3,
                            stride: 2,
                            padding: 1,
                            activation: relu,
                        });
                    }
                }
                layers.push(LayerSpec::Dropout { rate: 0.5 });
            }
        }
    }
    let top = scaled(192, scale);
    layers.push(LayerSpec::Conv {
        out_channels: top,
        kernel: 3,
        stride: 1,
        padding: 0,
        activation: relu,
    });
    layers.push(LayerSpec::Conv {
        out_channels: top,
        kernel: 1,
        stride: 1,
        padding: 0,
        activation: relu,
    });
    layers.push(LayerSpec::Conv {
        out_channels: classes,
        kernel: 1,
        stride: 1,
        padding: 0,
        activation: relu,
    });
    layers.push(LayerSpec::GlobalAvg);
    layers.push(LayerSpec::SoftmaxCE);
    Plan {
        layers,
        in_channels: 3,
        in_spatial: 32,
    }
}

/// The 126x126 network: seventeen unpadded leaky-ReLU convolutions (2x2
/// except a final 1x1), downsampling by stride-2 stages, with per-stage
/// dropout rates rising from 10% to 50%, topped by a linear 1x1 classifier
/// and global averaging.
fn large_plan(classes: usize, scale: f64) -> Plan {
    let leaky = Activation::LeakyRelu { slope: LEAKY_SLOPE };
    // (channels, kernel, stride, dropout-after)
    let rows: [(usize, usize, usize, f64); 17] = [
        (320, 2, 1, 0.0),
        (320, 2, 1, 0.0),
        (320, 2, 2, 0.0),
        (640, 2, 1, 0.1),
        (640, 2, 1, 0.1),
        (640, 2, 2, 0.0),
        (960, 2, 1, 0.2),
        (960, 2, 1, 0.2),
        (960, 2, 2, 0.0),
        (1280, 2, 1, 0.3),
        (1280, 2, 1, 0.3),
        (1280, 2, 2, 0.0),
        (1600, 2, 1, 0.4),
        (1600, 2, 1, 0.4),
        (1600, 2, 2, 0.0),
        (1920, 2, 1, 0.5),
        (1920, 1, 1, 0.5),
    ];
    let mut layers = Vec::new();
    for (out, kernel, stride, rate) in rows {
        layers.push(LayerSpec::Conv {
            out_channels: scaled(out, scale),
            kernel,
            stride,
            padding: 0,
            activation: leaky,
        });
        if rate > 0.0 {
            layers.push(LayerSpec::Dropout { rate });
        }
    }
    layers.push(LayerSpec::Conv {
        out_channels: classes,
        kernel: 1,
        stride: 1,
        padding: 0,
        activation: Activation::Identity,
    });
    layers.push(LayerSpec::GlobalAvg);
    layers.push(LayerSpec::SoftmaxCE);
    Plan {
        layers,
        in_channels: 3,
        in_spatial: 126,
    }
}

/// The 224x224 network: a strided 11x11 stem, then 5x5 and 3x3 stages each
/// refined by a 1x1 convolution and downsampled by an unpadded 3x3 stride-2
/// convolution, 50% dropout before the 1024-wide top, and a 1x1 classifier.
fn imagenet_plan(classes: usize, scale: f64) -> Plan {
    let relu = Activation::Relu;
    // (channels, kernel, stride, padding)
    let rows: [(usize, usize, usize, usize); 11] = [
        (96, 11, 4, 2),
        (96, 1, 1, 0),
        (96, 3, 2, 0),
        (256, 5, 1, 2),
        (256, 1, 1, 0),
        (256, 3, 2, 0),
        (384, 3, 1, 1),
        (384, 1, 1, 0),
        (384, 3, 2, 0),
        (1024, 3, 1, 1),
        (1024, 1, 1, 0),
    ];
    let mut layers = Vec::new();
    for (i, (out, kernel, stride, padding)) in rows.into_iter().enumerate() {
        layers.push(LayerSpec::Conv {
            out_channels: scaled(out, scale),
            kernel,
            stride,
            padding,
            activation: relu,
        });
        // Dropout between the last downsampling stage and the wide top.
        if i == 8 {
            layers.push(LayerSpec::Dropout { rate: 0.5 });
        }
    }
    layers.push(LayerSpec::Conv {
        out_channels: classes,
        kernel: 1,
        stride: 1,
        padding: 0,
        activation: relu,
    });
    layers.push(LayerSpec::GlobalAvg);
    layers.push(LayerSpec::SoftmaxCE);
    Plan {
        layers,
        in_channels: 3,
        in_spatial: 224,
    }
}

/// Instantiates parameters for a plan and validates the finished model.
fn realize<T: Scalar>(name: String, plan: Plan, classes: usize, seed: u64) -> Result<Model<T>> {
    let mut rng = Rng::new(seed);
    let mut params = Vec::new();
    let mut in_ch = plan.in_channels;
    for layer in &plan.layers {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            activation,
        } = layer
        {
            params.push(ConvParams::init_gaussian(
                in_ch,
                *out_channels,
                *kernel,
                *stride,
                *padding,
                *activation,
                &mut rng,
            )?);
            in_ch = *out_channels;
        }
    }
    let model = Model {
        name,
        layers: plan.layers,
        params,
        in_channels: plan.in_channels,
        in_spatial: plan.in_spatial,
        classes,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(id: &str) -> usize {
        build_architecture::<f32>(id, 10, 1.0, 1)
            .unwrap()
            .count_parameters()
    }

    #[test]
    fn parameter_counts_follow_the_layer_tables() {
        assert_eq!(count("a"), 839_242);
        assert_eq!(count("b"), 885_610);
        assert_eq!(count("c"), 954_730);
        assert_eq!(count("strided-a"), 839_242);
        assert_eq!(count("strided-b"), 885_610);
        assert_eq!(count("strided-c"), 954_730);
        assert_eq!(count("convpool-a"), 1_254_250);
        assert_eq!(count("convpool-b"), 1_300_618);
        assert_eq!(count("convpool-c"), 1_369_738);
        assert_eq!(count("allcnn-a"), 1_254_250);
        assert_eq!(count("allcnn-b"), 1_300_618);
        assert_eq!(count("allcnn-c"), 1_369_738);
        assert_eq!(count("large"), 77_455_690);
        let imagenet = build_architecture::<f32>("imagenet", 1000, 1.0, 1).unwrap();
        assert_eq!(imagenet.count_parameters(), 9_372_840);
    }

    #[test]
    fn every_id_validates_and_round_trips_through_normalization() {
        for id in ARCHITECTURE_IDS {
            let m = build_architecture::<f32>(id, 10, 1.0, 3).unwrap();
            assert_eq!(m.name, id);
            assert_eq!(normalize_architecture_id(&id.to_ascii_uppercase()), id);
        }
        assert_eq!(normalize_architecture_id("All_CNN_C"), "allcnn-c");
        assert_eq!(normalize_architecture_id(" conv-pool-b "), "convpool-b");
        assert_eq!(normalize_architecture_id("Large-All-CNN"), "large");
    }

    #[test]
    fn spatial_traces_match_hand_arithmetic() {
        let spatial = |id: &str| -> Vec<usize> {
            let m = build_architecture::<f32>(id, 10, 1.0, 1).unwrap();
            m.validate()
                .unwrap()
                .iter()
                .map(|&(_, h, _)| h)
                .collect()
        };
        // Input, dropout, convs/pools as listed, global average, loss.
        assert_eq!(
            spatial("allcnn-c"),
            vec![32, 32, 32, 32, 16, 16, 16, 16, 8, 8, 6, 6, 6, 1, 1]
        );
        assert_eq!(spatial("strided-a"), vec![32, 32, 16, 16, 8, 8, 6, 6, 6, 1, 1]);
        assert_eq!(
            spatial("a"),
            vec![32, 32, 32, 16, 16, 16, 8, 8, 6, 6, 6, 1, 1]
        );
        let large = spatial("large");
        assert_eq!(large[0], 126);
        assert_eq!(*large.last().unwrap(), 1);
        // Strided stages land on 62, 30, 14, 6, 2 before the final rows.
        for edge in [125, 124, 62, 30, 14, 6, 2, 1] {
            assert!(large.contains(&edge), "missing edge {edge} in {large:?}");
        }
        let imagenet = spatial("imagenet");
        for edge in [224, 55, 27, 13, 6, 1] {
            assert!(imagenet.contains(&edge), "missing edge {edge} in {imagenet:?}");
        }
    }

    #[test]
    fn class_conv_width_tracks_requested_classes() {
        let m = build_architecture::<f32>("allcnn-c", 100, 1.0, 1).unwrap();
        let class_conv = &m.params[m.params.len() - 1];
        assert_eq!(class_conv.out_channels, 100);
        assert_eq!(m.classes, 100);
    }

    #[test]
    fn scaling_rounds_to_multiples_of_four_with_a_floor() {
        assert_eq!(scaled(96, 1.0), 96);
        assert_eq!(scaled(96, 0.25), 24);
        assert_eq!(scaled(192, 0.25), 48);
        assert_eq!(scaled(96, 0.1), 8);
        assert_eq!(scaled(192, 0.1), 20);
        assert_eq!(scaled(96, 0.01), 4);
        let m = build_architecture::<f32>("allcnn-c", 10, 0.25, 1).unwrap();
        assert_eq!(m.params[0].out_channels, 24);
        assert!(m.count_parameters() < 100_000);
        // The classifier stays at full class width under scaling.
        assert_eq!(m.params.last().unwrap().out_channels, 10);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(matches!(
            build_architecture::<f32>("resnet", 10, 1.0, 1),
            Err(Error::UnknownArchitecture(_))
        ));
        assert!(matches!(
            build_architecture::<f32>("allcnn-c", 7, 1.0, 1),
            Err(Error::BadClasses(7))
        ));
        assert!(matches!(
            build_architecture::<f32>("allcnn-c", 10, 0.0, 1),
            Err(Error::BadScale(_))
        ));
        assert!(matches!(
            build_architecture::<f32>("allcnn-c", 10, 1.5, 1),
            Err(Error::BadScale(_))
        ));
    }

    #[test]
    fn same_seed_same_weights_different_seed_different_weights() {
        let a = build_architecture::<f32>("allcnn-a", 10, 0.1, 42).unwrap();
        let b = build_architecture::<f32>("allcnn-a", 10, 0.1, 42).unwrap();
        let c = build_architecture::<f32>("allcnn-a", 10, 0.1, 43).unwrap();
        assert_eq!(a.params[0].weights, b.params[0].weights);
        assert_ne!(a.params[0].weights, c.params[0].weights);
    }

    #[test]
    fn strided_variants_share_base_parameter_shapes() {
        let base = build_architecture::<f32>("b", 10, 1.0, 1).unwrap();
        let strided = build_architecture::<f32>("strided-b", 10, 1.0, 1).unwrap();
        assert_eq!(base.params.len(), strided.params.len());
        for (p, q) in base.params.iter().zip(&strided.params) {
            assert_eq!(p.weight_count(), q.weight_count());
        }
        // In the 1x1-refined network the stride moves onto the 1x1 convs.
        assert_eq!(strided.params[1].kernel, 1);
        assert_eq!(strided.params[1].stride, 2);
    }
}
