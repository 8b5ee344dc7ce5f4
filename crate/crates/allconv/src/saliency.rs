//! Feature visualization: three rectifier backward rules (plain gradient,
//! sign-of-signal, and their guided combination), neuron-seeded
//! reconstruction to image space with or without max-pool switches,
//! top-activating-patch mining, and grid rendering.

use std::path::Path;

use crate::data::{tile_grid, write_image, Dataset};
use crate::error::{Error, Result};
use crate::ioutil::atomic_write;
use crate::layers::{
    conv2d_backward_data, global_avg_pool_backward, maxpool_backward, pool_padding,
    uniform_unpool, Activation, Mode,
};
use crate::model::{Aux, LayerSpec, Model};
use crate::rng::Rng;
use crate::tensor::{Dims, FeatureMap, Scalar, Tensor};

/// How gradients pass backward through a rectifier.
///
/// With forward value `f` and incoming backward signal `R`:
///
/// * `Backprop` keeps `R` where the forward value was positive — the true
///   gradient, `R * [f > 0]`;
/// * `Deconvnet` keeps `R` where the *backward* signal is positive,
///   ignoring the forward state: `R * [R > 0]`;
/// * `Guided` applies both masks, `R * [f > 0] * [R > 0]`, blocking all
///   negative flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaliencyRule {
    Backprop,
    Deconvnet,
    Guided,
}

impl SaliencyRule {
    /// Parses the command-line spelling.
    pub fn parse(name: &str) -> Result<SaliencyRule> {
        match name.trim().to_ascii_lowercase().as_str() {
            "backprop" => Ok(SaliencyRule::Backprop),
            "deconvnet" => Ok(SaliencyRule::Deconvnet),
            "guided" | "guided-backprop" => Ok(SaliencyRule::Guided),
            other => Err(Error::Config(format!(
                "unknown rule '{other}' (expected backprop, deconvnet, or guided)"
            ))),
        }
    }
}

/// Which spatial unit of a channel seeds the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronPosition {
    /// A fixed `(row, column)` in the layer's activation plane.
    At(usize, usize),
    /// The position of the channel's largest activation on the given image.
    Max,
}

/// One unit of one convolution layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeuronRef {
    /// Index into the model's layer list; must name a convolution layer.
    pub layer: usize,
    pub channel: usize,
    pub position: NeuronPosition,
}

/// Applies `rule` at a rectifier with forward output `f` and backward
/// signal `r`. For leaky rectifiers the masks generalize to the activation
/// derivative (negative-side values scale by the slope instead of
/// vanishing); identity activations pass `r` through for every rule.
fn rule_factors<T: Scalar>(
    rule: SaliencyRule,
    activation: Activation,
    f: &Tensor<T>,
    r: &Tensor<T>,
) -> Result<Tensor<T>> {
    if f.dims() != r.dims() {
        return Err(Error::ShapeMismatch(format!(
            "rectifier rule: forward {} vs backward {}",
            f.dims(),
            r.dims()
        )));
    }
    let fd = f.data();
    let out: Vec<T> = r
        .data()
        .iter()
        .zip(fd)
        .map(|(&rv, &fv)| {
            let forward_gate = activation.grad_from_output(fv.to_f64());
            let backward_gate = activation.grad_from_output(rv.to_f64());
            let factor = match rule {
                SaliencyRule::Backprop => forward_gate,
                SaliencyRule::Deconvnet => backward_gate,
                SaliencyRule::Guided => forward_gate * backward_gate,
            };
            T::from_f64(rv.to_f64() * factor)
        })
        .collect();
    Tensor::from_vec(r.dims(), out)
}

/// The three rectifier backward rules, elementwise on equal-shaped maps.
/// `f_bottom` is the rectifier's forward value, `r_top` the incoming
/// backward signal.
pub fn relu_backward_rule<T: Scalar>(
    rule: SaliencyRule,
    f_bottom: &Tensor<T>,
    r_top: &Tensor<T>,
) -> Result<Tensor<T>> {
    rule_factors(rule, Activation::Relu, f_bottom, r_top)
}

/// Propagates a unit seed at `neuron` back to image space.
///
/// With an image, the forward pass runs in evaluation mode (dropout off)
/// and the chosen rule gates each rectifier; `use_switches` routes max-pool
/// gradients to the recorded argmax cells instead of spreading them
/// uniformly over the window. Without an image (unconditioned mode) all
/// forward activations are taken as zero, so only rules that ignore the
/// forward state produce nonzero maps and switches are unavailable.
pub fn reconstruct<T: Scalar>(
    model: &Model<T>,
    image: Option<&Tensor<T>>,
    neuron: &NeuronRef,
    rule: SaliencyRule,
    use_switches: bool,
) -> Result<Tensor<T>> {
    model.validate()?;
    let Some(&LayerSpec::Conv { activation: _, .. }) = model.layers.get(neuron.layer) else {
        return Err(Error::BadNeuron(format!(
            "layer {} is not a convolution layer",
            neuron.layer
        )));
    };
    let trace = match image {
        Some(img) => {
            if img.dims().batch != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "reconstruction takes a single image, got batch {}",
                    img.dims().batch
                )));
            }
            Some(model.forward(img, Mode::Eval, &Rng::new(0))?)
        }
        None => None,
    };
    let shapes = model.shape_trace(model.in_spatial, model.in_spatial)?;
    let layer_dims = |li: usize| {
        let (c, h, w) = shapes[li + 1];
        Dims::new(1, c, h, w)
    };
    let input_dims = |li: usize| {
        let (c, h, w) = shapes[li];
        Dims::new(1, c, h, w)
    };

    // Resolve the seed position.
    let out = layer_dims(neuron.layer);
    if neuron.channel >= out.channels {
        return Err(Error::BadNeuron(format!(
            "channel {} out of range for {} channels",
            neuron.channel, out.channels
        )));
    }
    let (row, col) = match neuron.position {
        NeuronPosition::At(i, j) => {
            if i >= out.height || j >= out.width {
                return Err(Error::BadNeuron(format!(
                    "position ({i}, {j}) outside {}x{} activations",
                    out.height, out.width
                )));
            }
            (i, j)
        }
        NeuronPosition::Max => {
            let Some(tr) = &trace else {
                return Err(Error::BadNeuron(
                    "max-position selection requires an input image".into(),
                ));
            };
            let act = &tr.outputs[neuron.layer];
            let mut best = (0usize, 0usize, f64::NEG_INFINITY);
            for i in 0..out.height {
                for j in 0..out.width {
                    let v = act.at(0, neuron.channel, i, j).to_f64();
                    if v > best.2 {
                        best = (i, j, v);
                    }
                }
            }
            (best.0, best.1)
        }
    };

    let mut r = Tensor::<T>::zeros(out);
    r.set(0, neuron.channel, row, col, T::ONE);

    // Parameter index of the convolution at `neuron.layer`.
    let mut pi = model.layers[..=neuron.layer]
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();

    for li in (0..=neuron.layer).rev() {
        match &model.layers[li] {
            LayerSpec::Conv { activation, .. } => {
                pi -= 1;
                let params = &model.params[pi];
                let zeros;
                let f = match &trace {
                    Some(tr) => &tr.outputs[li],
                    None => {
                        zeros = Tensor::<T>::zeros(layer_dims(li));
                        &zeros
                    }
                };
                let gated = rule_factors(rule, *activation, f, &r)?;
                let d = input_dims(li);
                r = conv2d_backward_data(params, &gated, (d.height, d.width))?;
            }
            LayerSpec::MaxPool { kernel, stride } => {
                if use_switches {
                    let Some(tr) = &trace else {
                        return Err(Error::SwitchesUnavailable(
                            "unconditioned reconstruction records no pooling argmaxes".into(),
                        ));
                    };
                    let Aux::Pool(sw) = &tr.aux[li] else {
                        return Err(Error::SwitchesUnavailable(format!(
                            "no pooling record at layer {li}"
                        )));
                    };
                    r = maxpool_backward(&r, sw, input_dims(li))?;
                } else {
                    r = uniform_unpool(&r, input_dims(li), *kernel, *stride)?;
                }
            }
            LayerSpec::PNormPool { .. } => {
                return Err(Error::Config(
                    "p-norm pooling layers do not support reconstruction".into(),
                ));
            }
            // Evaluation mode: dropout is the identity.
            LayerSpec::Dropout { .. } | LayerSpec::SoftmaxCE => {}
            LayerSpec::GlobalAvg => {
                r = global_avg_pool_backward(&r, input_dims(li))?;
            }
        }
    }
    Ok(r)
}

/// One mined activation: where it came from and the receptive-field crop.
#[derive(Clone, Debug)]
pub struct Patch {
    pub image: usize,
    pub position: (usize, usize),
    pub activation: f64,
    pub crop: FeatureMap,
}

/// Receptive-field geometry of a layer's output units with respect to the
/// input image: `(stride, offset, size)` such that output position `i`
/// covers input rows `i*stride + offset .. i*stride + offset + size`
/// (negative starts mean the field hangs over the zero-padded border).
pub fn layer_geometry<T: Scalar>(model: &Model<T>, layer: usize) -> Result<(usize, i64, usize)> {
    if layer >= model.layers.len() {
        return Err(Error::BadNeuron(format!(
            "layer {layer} out of range for {} layers",
            model.layers.len()
        )));
    }
    let (mut stride, mut offset, mut size) = (1usize, 0i64, 1usize);
    for li in 0..=layer {
        let (k, s, p) = match &model.layers[li] {
            LayerSpec::Conv { kernel, stride, padding, .. } => (*kernel, *stride, *padding),
            LayerSpec::MaxPool { kernel, stride }
            | LayerSpec::PNormPool { kernel, stride, .. } => {
                (*kernel, *stride, pool_padding(*kernel))
            }
            LayerSpec::Dropout { .. } | LayerSpec::SoftmaxCE => continue,
            LayerSpec::GlobalAvg => {
                return Err(Error::BadNeuron(
                    "receptive fields are undefined past global averaging".into(),
                ));
            }
        };
        size += (k - 1) * stride;
        offset -= (p * stride) as i64;
        stride *= s;
    }
    Ok((stride, offset, size))
}

/// Zero-padded square crop of `size` pixels starting at (possibly
/// negative) `(top, left)` of one dataset image.
fn crop_image(ds: &Dataset, image: usize, top: i64, left: i64, size: usize) -> FeatureMap {
    let d = ds.images.dims();
    let mut out = Tensor::<f32>::zeros(Dims::new(1, d.channels, size, size));
    for c in 0..d.channels {
        for y in 0..size {
            let sy = top + y as i64;
            if sy < 0 || sy >= d.height as i64 {
                continue;
            }
            for x in 0..size {
                let sx = left + x as i64;
                if sx < 0 || sx >= d.width as i64 {
                    continue;
                }
                out.set(0, c, y, x, ds.images.at(image, c, sy as usize, sx as usize));
            }
        }
    }
    out
}

/// Batch size for dataset scans.
const SCAN_BATCH: usize = 100;

/// Scans `ds` in evaluation mode and returns the `n` strongest activations
/// of `channel` in `layer`'s output, ranked descending, each with the
/// receptive-field crop of the image region that produced it. Ties break
/// deterministically toward the earlier image, then the upper-left
/// position. Asking for more patches than positions returns the full
/// ranked list.
pub fn top_activating_patches(
    model: &Model<f32>,
    ds: &Dataset,
    layer: usize,
    channel: usize,
    n: usize,
) -> Result<Vec<Patch>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n == 0 {
        return Err(Error::ZeroDim("patch count".into()));
    }
    let Some(LayerSpec::Conv { .. }) = model.layers.get(layer) else {
        return Err(Error::BadNeuron(format!(
            "layer {layer} is not a convolution layer"
        )));
    };
    let rng = Rng::new(0); // unused in eval mode
    // (activation, image, row, col), kept sorted best-first, length <= n.
    let mut best: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(n + 1);
    let total = ds.len();
    let mut start = 0usize;
    while start < total {
        let count = SCAN_BATCH.min(total - start);
        let batch = ds.images.batch_range(start, count);
        let trace = model.forward(&batch, Mode::Eval, &rng)?;
        let act = &trace.outputs[layer];
        let d = act.dims();
        if channel >= d.channels {
            return Err(Error::BadNeuron(format!(
                "channel {channel} out of range for {} channels",
                d.channels
            )));
        }
        for b in 0..count {
            for i in 0..d.height {
                for j in 0..d.width {
                    let key = (
                        f64::from(act.at(b, channel, i, j)),
                        start + b,
                        i,
                        j,
                    );
                    // Better = larger activation; ties prefer smaller index.
                    let better = |a: &(f64, usize, usize, usize),
                                  b: &(f64, usize, usize, usize)| {
                        (a.0, std::cmp::Reverse((a.1, a.2, a.3)))
                            > (b.0, std::cmp::Reverse((b.1, b.2, b.3)))
                    };
                    if best.len() == n {
                        if let Some(last) = best.last() {
                            if !better(&key, last) {
                                continue;
                            }
                        }
                    }
                    let pos = best
                        .iter()
                        .position(|cur| better(&key, cur))
                        .unwrap_or(best.len());
                    best.insert(pos, key);
                    if best.len() > n {
                        best.pop();
                    }
                }
            }
        }
        start += count;
    }
    let (stride, offset, size) = layer_geometry(model, layer)?;
    Ok(best
        .into_iter()
        .map(|(activation, image, i, j)| Patch {
            image,
            position: (i, j),
            activation,
            crop: crop_image(
                ds,
                image,
                (i * stride) as i64 + offset,
                (j * stride) as i64 + offset,
                size,
            ),
        })
        .collect())
}

/// Rescales a map's `[min, max]` onto `[0, 1]` (constant maps become 0.5).
pub fn normalize_unit(map: &FeatureMap) -> FeatureMap {
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let d = map.dims();
    if hi == lo {
        return Tensor::from_vec(d, vec![0.5; d.len()]).expect("shape preserved");
    }
    let out: Vec<f32> = map.data().iter().map(|&v| (v - lo) / (hi - lo)).collect();
    Tensor::from_vec(d, out).expect("shape preserved")
}

/// Renders maps as one PPM grid at `path`: each map is min-max normalized,
/// then tiled `row_width` per row with black separators. When `crops` is
/// nonempty it must align with `maps`; each filter then gets its own row,
/// its normalized map first and its crops (zero-padded to the map size if
/// smaller) after, matching the usual "filter row" layout.
pub fn render_visualization(
    maps: &[FeatureMap],
    crops: &[Vec<FeatureMap>],
    row_width: usize,
    path: &Path,
) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if crops.is_empty() {
        let tiles: Vec<FeatureMap> = maps.iter().map(normalize_unit).collect();
        return write_grid(&tiles, row_width, path);
    }
    if crops.len() != maps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps but {} crop rows",
            maps.len(),
            crops.len()
        )));
    }
    // Common tile size: the largest height/width over maps and crops, so
    // wide receptive-field crops and full-size maps share one grid.
    let mut d = maps[0].dims();
    for t in maps.iter().chain(crops.iter().flatten()) {
        d.height = d.height.max(t.dims().height);
        d.width = d.width.max(t.dims().width);
    }
    let per_row = 1 + crops.iter().map(Vec::len).max().unwrap_or(0);
    let mut tiles = Vec::new();
    for (map, row) in maps.iter().zip(crops) {
        tiles.push(embed(&normalize_unit(map), d)?);
        for crop in row {
            tiles.push(embed(crop, d)?);
        }
        for _ in row.len()..per_row - 1 {
            tiles.push(Tensor::zeros(d));
        }
    }
    write_grid(&tiles, per_row, path)
}

fn write_grid(tiles: &[FeatureMap], row_width: usize, path: &Path) -> Result<()> {
    let grid = tile_grid(tiles, row_width)?;
    write_image(&grid, path, false)
}

/// Centers a (possibly smaller) crop inside a zero tile of shape `d`.
fn embed(crop: &FeatureMap, d: Dims) -> Result<FeatureMap> {
    let cd = crop.dims();
    if cd.channels != d.channels || cd.height > d.height || cd.width > d.width {
        return Err(Error::ShapeMismatch(format!(
            "crop {cd} does not fit a {d} tile"
        )));
    }
    if cd == d {
        return Ok(crop.clone());
    }
    let mut out = Tensor::<f32>::zeros(d);
    let (oy, ox) = ((d.height - cd.height) / 2, (d.width - cd.width) / 2);
    for c in 0..cd.channels {
        for y in 0..cd.height {
            for x in 0..cd.width {
                out.set(0, c, oy + y, ox + x, crop.at(0, c, y, x));
            }
        }
    }
    Ok(out)
}

/// One line of the visualization manifest.
#[derive(Clone, Debug)]
pub struct ManifestRow {
    pub neuron: String,
    pub image: usize,
    pub activation: f64,
    pub file: String,
}

/// Writes the manifest CSV: `neuron,image,activation,file`.
pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut out = String::from("neuron,image,activation,file\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.neuron, r.image, r.activation, r.file
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::layers::ConvParams;
    use crate::model::build_architecture;

    #[test]
    fn rules_match_their_definitions_on_a_worked_example() {
        let dims = Dims::new(1, 1, 1, 3);
        let f = Tensor::from_vec(dims, vec![-1.0, 2.0, 3.0]).unwrap();
        let r = Tensor::from_vec(dims, vec![5.0, -4.0, 6.0]).unwrap();
        let bp = relu_backward_rule(SaliencyRule::Backprop, &f, &r).unwrap();
        let dc = relu_backward_rule(SaliencyRule::Deconvnet, &f, &r).unwrap();
        let gd = relu_backward_rule(SaliencyRule::Guided, &f, &r).unwrap();
        assert_eq!(bp.data(), &[0.0, -4.0, 6.0]);
        assert_eq!(dc.data(), &[5.0, 0.0, 6.0]);
        assert_eq!(gd.data(), &[0.0, 0.0, 6.0]);
    }

    #[test]
    fn positive_forward_makes_backprop_the_identity() {
        let dims = Dims::new(1, 2, 2, 2);
        let mut rng = Rng::new(4);
        let f = Tensor::from_fn(dims, |_, _, _, _| rng.next_f32() + 0.001);
        let r = Tensor::from_fn(dims, |_, _, _, _| rng.next_f32() - 0.5);
        let bp = relu_backward_rule(SaliencyRule::Backprop, &f, &r).unwrap();
        assert_eq!(bp.data(), r.data());
        // Positive backward signal makes guided equal backprop.
        let rp = Tensor::from_fn(dims, |_, _, _, _| rng.next_f32() + 0.001);
        let bp = relu_backward_rule(SaliencyRule::Backprop, &f, &rp).unwrap();
        let gd = relu_backward_rule(SaliencyRule::Guided, &f, &rp).unwrap();
        assert_eq!(bp.data(), gd.data());
    }

    /// A 1x1 identity convolution maps the seed straight back to its pixel.
    #[test]
    fn identity_kernel_reconstructs_a_point() {
        let mut p = ConvParams::<f32>::zeros(1, 1, 1, 1, 0, Activation::Identity).unwrap();
        p.weights[0] = 1.0;
        let model = Model {
            name: "point".into(),
            layers: vec![LayerSpec::Conv {
                out_channels: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                activation: Activation::Identity,
            }],
            params: vec![p],
            in_channels: 1,
            in_spatial: 5,
            classes: 10,
        };
        let img = Tensor::from_fn(Dims::new(1, 1, 5, 5), |_, _, y, x| (y * 5 + x) as f32);
        let neuron = NeuronRef {
            layer: 0,
            channel: 0,
            position: NeuronPosition::At(2, 3),
        };
        let map = reconstruct(&model, Some(&img), &neuron, SaliencyRule::Backprop, false).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expect = if (y, x) == (2, 3) { 1.0 } else { 0.0 };
                assert_eq!(map.at(0, 0, y, x), expect);
            }
        }
    }

    #[test]
    fn guided_support_is_contained_in_both_parents() {
        let model = build_architecture::<f32>("allcnn-a", 10, 0.1, 5).unwrap();
        let mut rng = Rng::new(9);
        let img = Tensor::from_fn(Dims::new(1, 3, 32, 32), |_, _, _, _| rng.next_f32());
        let neuron = NeuronRef {
            layer: 5,
            channel: 3,
            position: NeuronPosition::Max,
        };
        let bp = reconstruct(&model, Some(&img), &neuron, SaliencyRule::Backprop, false).unwrap();
        let dc = reconstruct(&model, Some(&img), &neuron, SaliencyRule::Deconvnet, false).unwrap();
        let gd = reconstruct(&model, Some(&img), &neuron, SaliencyRule::Guided, false).unwrap();
        let mut nonzero = 0;
        for ((g, b), d) in gd.data().iter().zip(bp.data()).zip(dc.data()) {
            if *g != 0.0 {
                nonzero += 1;
                assert!(*b != 0.0, "guided nonzero where backprop vanishes");
                assert!(*d != 0.0, "guided nonzero where sign-routing vanishes");
            }
        }
        assert!(nonzero > 0, "degenerate test: guided map is all zero");
    }

    #[test]
    fn unconditioned_mode_needs_no_image_but_refuses_switches() {
        let model = build_architecture::<f32>("a", 10, 0.1, 5).unwrap();
        let neuron = NeuronRef {
            layer: 1,
            channel: 2,
            position: NeuronPosition::At(4, 4),
        };
        // Sign-routing works without a forward pass.
        let map = reconstruct(&model, None, &neuron, SaliencyRule::Deconvnet, false).unwrap();
        assert!(map.data().iter().any(|&v| v != 0.0));
        // The true gradient through zero activations vanishes.
        let bp = reconstruct(&model, None, &neuron, SaliencyRule::Backprop, false).unwrap();
        assert!(bp.data().iter().all(|&v| v == 0.0));
        // Max-position and switches both need an image. The switch demand
        // only bites once the walk actually crosses a pooling layer, so
        // seed past the first one.
        let past_pool = NeuronRef {
            layer: 4,
            channel: 2,
            position: NeuronPosition::At(4, 4),
        };
        assert!(matches!(
            reconstruct(&model, None, &past_pool, SaliencyRule::Deconvnet, true),
            Err(Error::SwitchesUnavailable(_))
        ));
        let max_neuron = NeuronRef {
            layer: 1,
            channel: 0,
            position: NeuronPosition::Max,
        };
        assert!(matches!(
            reconstruct(&model, None, &max_neuron, SaliencyRule::Deconvnet, false),
            Err(Error::BadNeuron(_))
        ));
    }

    #[test]
    fn bad_neuron_references_are_rejected() {
        let model = build_architecture::<f32>("allcnn-a", 10, 0.1, 5).unwrap();
        let img = Tensor::zeros(Dims::new(1, 3, 32, 32));
        let bad_layer = NeuronRef {
            layer: 0, // input dropout, not a convolution
            channel: 0,
            position: NeuronPosition::At(0, 0),
        };
        assert!(matches!(
            reconstruct(&model, Some(&img), &bad_layer, SaliencyRule::Backprop, false),
            Err(Error::BadNeuron(_))
        ));
        let bad_channel = NeuronRef {
            layer: 1,
            channel: 1000,
            position: NeuronPosition::At(0, 0),
        };
        assert!(matches!(
            reconstruct(&model, Some(&img), &bad_channel, SaliencyRule::Backprop, false),
            Err(Error::BadNeuron(_))
        ));
    }

    #[test]
    fn geometry_composes_kernels_strides_and_padding() {
        let model = build_architecture::<f32>("allcnn-c", 10, 1.0, 1).unwrap();
        // Layer 1 is the first 3x3/s1/p1 convolution: 3x3 field, offset -1.
        assert_eq!(layer_geometry(&model, 1).unwrap(), (1, -1, 3));
        // Layer 2 stacks another 3x3: 5x5 field.
        assert_eq!(layer_geometry(&model, 2).unwrap(), (1, -2, 5));
        // Layer 3 adds the 3x3 stride-2 downsampler: stride 2, 7x7 field.
        assert_eq!(layer_geometry(&model, 3).unwrap(), (2, -3, 7));
        // The dropout right after leaves geometry untouched.
        assert_eq!(layer_geometry(&model, 4).unwrap(), (2, -3, 7));
    }

    #[test]
    fn spike_image_ranks_first() {
        let model = build_architecture::<f32>("allcnn-a", 10, 0.1, 6).unwrap();
        let n = 6;
        let mut images = Tensor::<f32>::zeros(Dims::new(n, 3, 32, 32));
        // Image 4 carries a strong spike; others are faint noise.
        let mut rng = Rng::new(2);
        for b in 0..n {
            for c in 0..3 {
                for y in 0..32 {
                    for x in 0..32 {
                        images.set(b, c, y, x, rng.next_f32() * 0.01);
                    }
                }
            }
        }
        for c in 0..3 {
            for y in 14..18 {
                for x in 14..18 {
                    images.set(4, c, y, x, 1.0);
                }
            }
        }
        let ds = Dataset {
            images,
            labels: vec![0; n],
            classes: 10,
            split: Split::Test,
        };
        let patches = top_activating_patches(&model, &ds, 1, 0, 3).unwrap();
        assert_eq!(patches.len(), 3);
        assert_eq!(patches[0].image, 4);
        assert!(patches[0].activation >= patches[1].activation);
        assert!(patches[1].activation >= patches[2].activation);
        // Requesting more than every position returns the full list only.
        let all = top_activating_patches(&model, &ds, 5, 0, 10_000_000).unwrap();
        // Layer 5 (the second stride-2 convolution) outputs 8x8 per image.
        assert_eq!(all.len(), n * 8 * 8);
    }

    #[test]
    fn crops_are_receptive_field_sized_and_grids_render() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_architecture::<f32>("allcnn-a", 10, 0.1, 6).unwrap();
        let mut rng = Rng::new(3);
        let images = Tensor::from_fn(Dims::new(4, 3, 32, 32), |_, _, _, _| rng.next_f32());
        let ds = Dataset {
            images,
            labels: vec![0; 4],
            classes: 10,
            split: Split::Test,
        };
        let patches = top_activating_patches(&model, &ds, 1, 1, 4).unwrap();
        let (_, _, size) = layer_geometry(&model, 1).unwrap();
        for p in &patches {
            assert_eq!(p.crop.dims().height, size);
            assert_eq!(p.crop.dims().width, size);
        }
        // Maps + crops render to a deterministic grid file.
        let neuron = NeuronRef {
            layer: 1,
            channel: 1,
            position: NeuronPosition::Max,
        };
        let img = ds.images.batch_range(0, 1);
        let map =
            reconstruct(&model, Some(&img), &neuron, SaliencyRule::Guided, false).unwrap();
        let crops: Vec<FeatureMap> = patches.iter().map(|p| p.crop.clone()).collect();
        let path = dir.path().join("row.ppm");
        render_visualization(&[map.clone()], &[crops.clone()], 5, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        render_visualization(&[map], &[crops], 5, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn plain_map_grids_follow_the_requested_row_width() {
        let dir = tempfile::tempdir().unwrap();
        let maps: Vec<FeatureMap> = (0..10)
            .map(|i| {
                Tensor::from_vec(Dims::new(1, 1, 4, 4), vec![i as f32; 16]).unwrap()
            })
            .collect();
        let path = dir.path().join("grid.pgm");
        render_visualization(&maps, &[], 5, &path).unwrap();
        let img = crate::data::read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (4 * 5 + 8, 4 * 2 + 2));
        // A single map renders as one tile.
        let single = dir.path().join("one.pgm");
        render_visualization(&maps[..1], &[], 5, &single).unwrap();
        let img = crate::data::read_ppm(&single).unwrap();
        assert_eq!((img.width, img.height), (4, 4));
    }

    #[test]
    fn manifest_lists_one_row_per_patch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(
            &[ManifestRow {
                neuron: "layer6-ch3".into(),
                image: 17,
                activation: 2.5,
                file: "vis.ppm".into(),
            }],
            &path,
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "neuron,image,activation,file\nlayer6-ch3,17,2.5,vis.ppm\n"
        );
    }
}
