//! Sequential network container: declarative layer lists, forward/backward
//! orchestration with full activation traces, parameter counting,
//! checkpointing, and post-training pool surgery.

mod arch;
mod checkpoint;

pub use arch::{build_architecture, normalize_architecture_id, ARCHITECTURE_IDS};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_cached, conv2d_forward, dropout_backward, dropout_forward, global_avg_pool,
    global_avg_pool_backward, maxpool_backward, maxpool_forward, pnorm_pool_forward,
    softmax_cross_entropy, Activation, ConvParams, Mode, Switches,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// One layer of a sequential model. Convolution parameters live separately
/// in [`Model::params`], one entry per `Conv` layer in order.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    PNormPool {
        kernel: usize,
        stride: usize,
        p: f64,
    },
    Dropout {
        rate: f64,
    },
    GlobalAvg,
    SoftmaxCE,
}

/// A sequential network: an ordered layer list plus the parameters of its
/// convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// Parameters of the `Conv` layers, in layer order.
    pub params: Vec<ConvParams<T>>,
    /// Expected input channels (3 for RGB).
    pub in_channels: usize,
    /// Expected square input edge length (32, 126 or 224).
    pub in_spatial: usize,
    /// Number of output classes.
    pub classes: usize,
}

/// Per-layer bookkeeping captured by the forward pass.
#[derive(Clone, Debug)]
pub enum Aux<T> {
    None,
    /// Max-pool argmax record.
    Pool(Switches),
    /// Dropout mask (factor applied to each element).
    Mask(Vec<T>),
}

/// Everything the forward pass produced: the input batch, every layer
/// output, and the per-layer auxiliaries needed by backward and by the
/// feature-visualization rules.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub input: Tensor<T>,
    pub outputs: Vec<Tensor<T>>,
    pub aux: Vec<Aux<T>>,
}

impl<T: Scalar> Trace<T> {
    /// The final layer output: class logits of shape `(batch, classes, 1, 1)`
    /// for complete models.
    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

/// Gradients for every convolution layer, in [`Model::params`] order.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Model<T> {
    /// Checks parameter/layer consistency and channel chaining, and that
    /// the declared input reaches the end of the network. Returns the
    /// per-layer `(channels, height, width)` trace (input first).
    pub fn validate(&self) -> Result<Vec<(usize, usize, usize)>> {
        let convs = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        if convs != self.params.len() {
            return Err(Error::LengthMismatch {
                dims: "convolution parameter sets".into(),
                expected: convs,
                got: self.params.len(),
            });
        }
        let mut pi = 0usize;
        for layer in &self.layers {
            if let LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                activation,
            } = layer
            {
                let p = &self.params[pi];
                p.checked()?;
                if p.out_channels != *out_channels
                    || p.kernel != *kernel
                    || p.stride != *stride
                    || p.padding != *padding
                    || p.activation != *activation
                {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {pi}: parameters disagree with the layer list"
                    )));
                }
                pi += 1;
            }
        }
        self.shape_trace(self.in_spatial, self.in_spatial)
    }

    /// Pure shape arithmetic: `(channels, height, width)` after each layer
    /// for a `height x width` input; element 0 is the input itself.
    pub fn shape_trace(&self, height: usize, width: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        let (mut c, mut h, mut w) = (self.in_channels, height, width);
        trace.push((c, h, w));
        let mut pi = 0usize;
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { out_channels, .. } => {
                    let p = &self.params[pi];
                    if p.in_channels != c {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li}: expects {} channels, receives {c}",
                            p.in_channels
                        )));
                    }
                    let (oh, ow) = p.output_hw(h, w)?;
                    c = *out_channels;
                    h = oh;
                    w = ow;
                    pi += 1;
                }
                LayerSpec::MaxPool { kernel, stride }
                | LayerSpec::PNormPool { kernel, stride, .. } => {
                    let pad = crate::layers::pool_padding(*kernel);
                    let len = |n: usize| -> Result<usize> {
                        let padded = n + 2 * pad;
                        if padded < *kernel {
                            return Err(Error::EmptyOutput(format!(
                                "layer {li}: pooling kernel {kernel} exceeds {padded}"
                            )));
                        }
                        Ok((padded - kernel) / stride + 1)
                    };
                    h = len(h)?;
                    w = len(w)?;
                }
                LayerSpec::Dropout { .. } | LayerSpec::SoftmaxCE => {}
                LayerSpec::GlobalAvg => {
                    h = 1;
                    w = 1;
                }
            }
            trace.push((c, h, w));
        }
        Ok(trace)
    }

    /// Total number of trainable parameters: `M*N*k*k + M` per convolution.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.parameter_count()).sum()
    }

    /// Runs the network on `batch`. `Eval` mode disables dropout. Dropout
    /// draws come from per-layer streams of `rng`, so the result is a pure
    /// function of `(model, batch, mode, rng)`.
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode, rng: &Rng) -> Result<Trace<T>> {
        let d = batch.dims();
        if d.channels != self.in_channels || d.height != self.in_spatial || d.width != self.in_spatial {
            return Err(Error::ShapeMismatch(format!(
                "input {d} does not match expected {}x{}x{}",
                self.in_channels, self.in_spatial, self.in_spatial
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut pi = 0usize;
        for (li, layer) in self.layers.iter().enumerate() {
            let current = outputs.last().unwrap_or(batch);
            let (out, a) = match layer {
                LayerSpec::Conv { .. } => {
                    let out = conv2d_forward(current, &self.params[pi])?;
                    pi += 1;
                    (out, Aux::None)
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    let (out, sw) = maxpool_forward(current, *kernel, *stride)?;
                    (out, Aux::Pool(sw))
                }
                LayerSpec::PNormPool { kernel, stride, p } => {
                    (pnorm_pool_forward(current, *kernel, *stride, *p)?, Aux::None)
                }
                LayerSpec::Dropout { rate } => {
                    let mut layer_rng = rng.stream(li as u64);
                    let (out, mask) =
                        dropout_forward(current, *rate, &mut layer_rng, mode == Mode::Train)?;
                    (out, Aux::Mask(mask))
                }
                LayerSpec::GlobalAvg => (global_avg_pool(current), Aux::None),
                // The loss layer passes logits through; loss and gradient
                // are computed by `loss_and_grads` when labels are known.
                LayerSpec::SoftmaxCE => (current.clone(), Aux::None),
            };
            outputs.push(out);
            aux.push(a);
        }
        Ok(Trace {
            input: batch.clone(),
            outputs,
            aux,
        })
    }

    /// Mean cross-entropy of `labels` under the traced forward pass, plus
    /// exact gradients for every weight and bias.
    pub fn loss_and_grads(&self, trace: &Trace<T>, labels: &[u16]) -> Result<(f64, Grads<T>)> {
        if !matches!(self.layers.last(), Some(LayerSpec::SoftmaxCE)) {
            return Err(Error::Config(
                "model does not end with a softmax cross-entropy layer".into(),
            ));
        }
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "trace has {} layer outputs, model has {} layers",
                trace.outputs.len(),
                self.layers.len()
            )));
        }
        let mut grads = Grads {
            weights: self.params.iter().map(|p| vec![T::ZERO; p.weight_count()]).collect(),
            bias: self.params.iter().map(|p| vec![T::ZERO; p.out_channels]).collect(),
        };
        let mut pi = self.params.len();
        let mut grad: Option<Tensor<T>> = None;
        let mut loss = 0.0f64;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let layer_input = if li == 0 {
                &trace.input
            } else {
                &trace.outputs[li - 1]
            };
            match layer {
                LayerSpec::SoftmaxCE => {
                    let (l, g) = softmax_cross_entropy(layer_input, labels)?;
                    loss = l;
                    grad = Some(g);
                }
                LayerSpec::GlobalAvg => {
                    let g = grad.take().expect("gradient present below the loss layer");
                    grad = Some(global_avg_pool_backward(&g, layer_input.dims())?);
                }
                LayerSpec::Dropout { .. } => {
                    let g = grad.take().expect("gradient present below the loss layer");
                    let Aux::Mask(mask) = &trace.aux[li] else {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li}: trace is missing the dropout mask"
                        )));
                    };
                    grad = Some(dropout_backward(&g, mask)?);
                }
                LayerSpec::MaxPool { .. } => {
                    let g = grad.take().expect("gradient present below the loss layer");
                    let Aux::Pool(sw) = &trace.aux[li] else {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li}: trace is missing the pooling switches"
                        )));
                    };
                    grad = Some(maxpool_backward(&g, sw, layer_input.dims())?);
                }
                LayerSpec::PNormPool { .. } => {
                    return Err(Error::Config(
                        "p-norm pooling layers do not support backpropagation".into(),
                    ));
                }
                LayerSpec::Conv { .. } => {
                    pi -= 1;
                    let g = grad.take().expect("gradient present below the loss layer");
                    let cg = conv2d_backward_cached(
                        layer_input,
                        &trace.outputs[li],
                        &self.params[pi],
                        &g,
                    )?;
                    grads.weights[pi] = cg.weights;
                    grads.bias[pi] = cg.bias;
                    grad = Some(cg.input);
                }
            }
        }
        Ok((loss, grads))
    }

    /// Replaces every stride-2 convolution by the same convolution at
    /// stride 1 followed by 2x2 max-pooling at stride 2, with weights
    /// copied unchanged. Errors with [`Error::NoStridedLayers`] when there
    /// is nothing to convert, and with [`Error::ShapeMismatch`] when the
    /// conversion would change any downstream shape (it preserves shapes
    /// exactly when each strided convolution's padded extent minus kernel
    /// size is odd, which holds for all 32x32 architectures here).
    pub fn pool_surgery(&self) -> Result<Model<T>> {
        if !self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv { stride: 2, .. }))
        {
            return Err(Error::NoStridedLayers);
        }
        let mut layers = Vec::with_capacity(self.layers.len() + 2);
        let mut params = Vec::with_capacity(self.params.len());
        // Map from original layer index to its counterpart's index in the
        // rewritten list (the layer producing the same feature map).
        let mut counterpart = Vec::with_capacity(self.layers.len());
        let mut pi = 0usize;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride: 2,
                    padding,
                    activation,
                } => {
                    layers.push(LayerSpec::Conv {
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: 1,
                        padding: *padding,
                        activation: *activation,
                    });
                    let mut p = self.params[pi].clone();
                    p.stride = 1;
                    params.push(p);
                    pi += 1;
                    layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
                    counterpart.push(layers.len() - 1);
                }
                other => {
                    if matches!(other, LayerSpec::Conv { .. }) {
                        params.push(self.params[pi].clone());
                        pi += 1;
                    }
                    layers.push(other.clone());
                    counterpart.push(layers.len() - 1);
                }
            }
        }
        let rewritten = Model {
            name: format!("{}-pooled", self.name),
            layers,
            params,
            in_channels: self.in_channels,
            in_spatial: self.in_spatial,
            classes: self.classes,
        };
        let before = self.shape_trace(self.in_spatial, self.in_spatial)?;
        let after = rewritten.shape_trace(self.in_spatial, self.in_spatial)?;
        for (orig, &new_idx) in counterpart.iter().enumerate() {
            if before[orig + 1] != after[new_idx + 1] {
                let (c, h, w) = before[orig + 1];
                let (nc, nh, nw) = after[new_idx + 1];
                return Err(Error::ShapeMismatch(format!(
                    "pool conversion changes layer {orig} output from \
                     {c}x{h}x{w} to {nc}x{nh}x{nw}; stride-1 plus 2x2 pooling \
                     only reproduces a stride-2 convolution when its padded \
                     extent minus the kernel size is odd"
                )));
            }
        }
        Ok(rewritten)
    }
}

/// Free-function spelling of [`Model::forward`].
pub fn model_forward<T: Scalar>(
    model: &Model<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &Rng,
) -> Result<Trace<T>> {
    model.forward(batch, mode, rng)
}

/// Free-function spelling of [`Model::loss_and_grads`].
pub fn model_backward<T: Scalar>(
    model: &Model<T>,
    trace: &Trace<T>,
    labels: &[u16],
) -> Result<(f64, Grads<T>)> {
    model.loss_and_grads(trace, labels)
}

/// Free-function spelling of [`Model::count_parameters`].
pub fn count_parameters<T: Scalar>(model: &Model<T>) -> usize {
    model.count_parameters()
}

/// Free-function spelling of [`Model::pool_surgery`].
pub fn pool_surgery<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    model.pool_surgery()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn tiny_model(seed: u64) -> Model<f64> {
        // 3x8x8 input -> conv 3x3/4 s2 -> conv 3x3/4 (valid) -> 1x1/3 ->
        // global average -> softmax; mirrors the real nets in miniature.
        let mut rng = Rng::new(seed);
        let params = vec![
            ConvParams::init_gaussian(3, 4, 3, 2, 1, Activation::Relu, &mut rng).unwrap(),
            ConvParams::init_gaussian(4, 4, 3, 1, 0, Activation::Relu, &mut rng).unwrap(),
            ConvParams::init_gaussian(4, 3, 1, 1, 0, Activation::Relu, &mut rng).unwrap(),
        ];
        Model {
            name: "tiny".into(),
            layers: vec![
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::Conv {
                    out_channels: 4,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    out_channels: 3,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    activation: Activation::Relu,
                },
                LayerSpec::GlobalAvg,
                LayerSpec::SoftmaxCE,
            ],
            params,
            in_channels: 3,
            in_spatial: 8,
            classes: 3,
        }
    }

    fn batch(seed: u64, n: usize) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(Dims::new(n, 3, 8, 8), |_, _, _, _| rng.next_f64())
    }

    #[test]
    fn shape_trace_walks_every_layer() {
        let m = tiny_model(1);
        let trace = m.validate().unwrap();
        assert_eq!(
            trace,
            vec![
                (3, 8, 8),
                (3, 8, 8), // dropout
                (4, 4, 4), // stride-2 conv
                (4, 2, 2), // valid conv
                (3, 2, 2), // 1x1 conv
                (3, 1, 1), // global average
                (3, 1, 1), // softmax passthrough
            ]
        );
    }

    #[test]
    fn eval_forward_is_deterministic_and_dropout_free() {
        let m = tiny_model(2);
        let x = batch(10, 2);
        let rng = Rng::new(123);
        let a = m.forward(&x, Mode::Eval, &rng).unwrap();
        let b = m.forward(&x, Mode::Eval, &Rng::new(456)).unwrap();
        assert_eq!(a.logits().data(), b.logits().data());
    }

    #[test]
    fn train_forward_depends_only_on_rng_lineage() {
        let m = tiny_model(2);
        let x = batch(10, 2);
        let a = m.forward(&x, Mode::Train, &Rng::new(5)).unwrap();
        let b = m.forward(&x, Mode::Train, &Rng::new(5)).unwrap();
        let c = m.forward(&x, Mode::Train, &Rng::new(6)).unwrap();
        assert_eq!(a.logits().data(), b.logits().data());
        assert_ne!(a.logits().data(), c.logits().data());
    }

    #[test]
    fn batch_forward_equals_concatenated_single_forwards() {
        let m = tiny_model(3);
        let x = batch(11, 2);
        let rng = Rng::new(0);
        let both = m.forward(&x, Mode::Eval, &rng).unwrap();
        let first = m.forward(&x.batch_range(0, 1), Mode::Eval, &rng).unwrap();
        let second = m.forward(&x.batch_range(1, 1), Mode::Eval, &rng).unwrap();
        let combined: Vec<f64> = first
            .logits()
            .data()
            .iter()
            .chain(second.logits().data())
            .copied()
            .collect();
        for (a, b) in both.logits().data().iter().zip(&combined) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_sample_gives_same_gradient_as_single() {
        let m = tiny_model(4);
        let one = batch(12, 1);
        let mut dup_data = one.data().to_vec();
        dup_data.extend_from_slice(one.data());
        let two = Tensor::from_vec(Dims::new(2, 3, 8, 8), dup_data).unwrap();
        let rng = Rng::new(9);
        let t1 = m.forward(&one, Mode::Eval, &rng).unwrap();
        let t2 = m.forward(&two, Mode::Eval, &rng).unwrap();
        let (l1, g1) = m.loss_and_grads(&t1, &[2]).unwrap();
        let (l2, g2) = m.loss_and_grads(&t2, &[2, 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.weights.iter().flatten().zip(g2.weights.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_final_classifier_gives_log_classes_loss() {
        let mut m = tiny_model(5);
        // Zero the classifier conv so logits are uniform.
        let last = m.params.last_mut().unwrap();
        for w in last.weights.iter_mut() {
            *w = 0.0;
        }
        let x = batch(13, 4);
        let t = m.forward(&x, Mode::Eval, &Rng::new(0)).unwrap();
        let (loss, _) = m.loss_and_grads(&t, &[0, 1, 2, 0]).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let m = tiny_model(6);
        let x = batch(14, 2);
        let labels = [1u16, 0];
        let rng = Rng::new(0);
        let t = m.forward(&x, Mode::Eval, &rng).unwrap();
        let (_, g) = m.loss_and_grads(&t, &labels).unwrap();
        let eps = 1e-5;
        let mut checked = 0usize;
        for (layer, grad_w) in g.weights.iter().enumerate() {
            for idx in [0usize, grad_w.len() / 2, grad_w.len() - 1] {
                let mut lo = m.clone();
                let mut hi = m.clone();
                lo.params[layer].weights[idx] -= eps;
                hi.params[layer].weights[idx] += eps;
                let tl = lo.forward(&x, Mode::Eval, &rng).unwrap();
                let th = hi.forward(&x, Mode::Eval, &rng).unwrap();
                let (ll, _) = lo.loss_and_grads(&tl, &labels).unwrap();
                let (lh, _) = hi.loss_and_grads(&th, &labels).unwrap();
                let fd = (lh - ll) / (2.0 * eps);
                let an = grad_w[idx];
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(1e-3),
                    "layer {layer} w[{idx}]: {an} vs {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 9);
    }

    #[test]
    fn surgery_preserves_shapes_counts_and_fails_without_strides() {
        let m = tiny_model(7);
        let s = m.pool_surgery().unwrap();
        assert_eq!(s.layers.len(), m.layers.len() + 1);
        assert_eq!(s.count_parameters(), m.count_parameters());
        let before = m.validate().unwrap();
        let after = s.validate().unwrap();
        assert_eq!(before.last(), after.last());
        // A model with no stride-2 convolutions has nothing to convert.
        assert!(matches!(s.pool_surgery(), Err(Error::NoStridedLayers)));
    }

    #[test]
    fn surgery_rejects_even_extents() {
        // 9x9 input, 3x3 conv stride 2 pad 0: padded extent minus kernel is
        // 6 (even), so conv-then-pool shrinks differently than stride 2.
        let mut rng = Rng::new(8);
        let m = Model::<f64> {
            name: "even".into(),
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                    padding: 0,
                    activation: Activation::Relu,
                },
                LayerSpec::GlobalAvg,
                LayerSpec::SoftmaxCE,
            ],
            params: vec![ConvParams::init_gaussian(3, 2, 3, 2, 0, Activation::Relu, &mut rng).unwrap()],
            in_channels: 3,
            in_spatial: 9,
            classes: 2,
        };
        assert!(matches!(m.pool_surgery(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = tiny_model(9);
        let x = Tensor::<f64>::zeros(Dims::new(1, 3, 7, 7));
        assert!(matches!(
            m.forward(&x, Mode::Eval, &Rng::new(0)),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
