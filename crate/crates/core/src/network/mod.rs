//! The three architectures: ROI subnetwork, classifier subnetwork and the fused ROI-aware network.

mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{flatten, shift, Tape, Var};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::Tensor;

pub use spec::{LayerKind, LayerSpec, NetworkSpec, SlotShape};

/// Training resolution of the benchmark images.
pub const INPUT_SIZE: usize = 96;
/// Mid-range of pixel intensities, removed by the leading `center` layer.
pub const INPUT_OFFSET: f64 = 0.5;
/// Channel widths of the four VGG-pattern blocks.
pub const BLOCK_WIDTHS: [usize; 4] = [16, 32, 64, 64];
/// Number of ROI labels: background, leaf, spot.
pub const ROI_CLASSES: usize = 3;
/// Hidden width of the classifier head.
pub const HIDDEN_UNITS: usize = 128;

/// Name of the classifier's block-3 output (after pooling), the default feature tap.
pub const BLOCK3_TAP: &str = "b3_pool";

const ROI_PREFIX: &str = "roi.";
const CLS_PREFIX: &str = "cls.";

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[usize]) -> usize {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind,
            inputs: inputs.to_vec(),
        });
        self.layers.len()
    }

    /// Four blocks of (conv3×3 → relu → conv3×3 → relu → maxpool2); returns each block's pooled slot.
    fn vgg_blocks(&mut self, input: usize, in_channels: usize) -> [usize; 4] {
        let mut slot = input;
        let mut channels = in_channels;
        let mut pooled = [0; 4];
        for (b, &width) in BLOCK_WIDTHS.iter().enumerate() {
            let b = b + 1;
            for (i, cin) in [(1, channels), (2, width)] {
                let conv = LayerKind::Conv {
                    in_ch: cin,
                    out_ch: width,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                };
                slot = self.push(format!("b{b}_conv{i}"), conv, &[slot]);
                slot = self.push(format!("b{b}_relu{i}"), LayerKind::Relu, &[slot]);
            }
            slot = self.push(format!("b{b}_pool"), LayerKind::MaxPool2, &[slot]);
            pooled[b - 1] = slot;
            channels = width;
        }
        pooled
    }
}

/// Desk-scale VGG-pattern classifier ending in a softmax over `classes`.
pub fn classifier_spec(in_channels: usize, classes: usize, input_size: usize) -> Result<NetworkSpec> {
    if in_channels != 3 && in_channels != 6 {
        return Err(Error::Config(format!(
            "classifier input must have 3 (image) or 6 (image + ROI) channels, got {in_channels}"
        )));
    }
    if classes < 2 {
        return Err(Error::Config(format!("classifier needs at least 2 classes, got {classes}")));
    }
    if input_size == 0 || !input_size.is_multiple_of(16) {
        return Err(Error::Config(format!("input extent {input_size} is not a multiple of 16")));
    }
    let mut b = Builder::new();
    let centred = b.push("center", LayerKind::Center, &[0]);
    let [.., last] = b.vgg_blocks(centred, in_channels);
    let flat = b.push("flatten", LayerKind::Flatten, &[last]);
    let cells = (input_size / 16).pow(2) * BLOCK_WIDTHS[3];
    let fc1 = b.push(
        "fc1",
        LayerKind::Dense {
            inputs: cells,
            outputs: HIDDEN_UNITS,
        },
        &[flat],
    );
    let act = b.push("fc1_relu", LayerKind::Relu, &[fc1]);
    let fc2 = b.push(
        "fc2",
        LayerKind::Dense {
            inputs: HIDDEN_UNITS,
            outputs: classes,
        },
        &[act],
    );
    let out = b.push("softmax", LayerKind::Softmax, &[fc2]);
    Ok(NetworkSpec {
        name: format!("classifier{in_channels}"),
        input_channels: in_channels,
        input_size: Some(input_size),
        classes,
        layers: b.layers,
        output: out,
    })
}

/// Encoder–decoder ROI subnetwork with score heads at strides 16, 8 and 4.
pub fn roi_spec() -> NetworkSpec {
    let mut b = Builder::new();
    let centred = b.push("center", LayerKind::Center, &[0]);
    let [_, pool2, pool3, pool4] = b.vgg_blocks(centred, 3);
    let head = |in_ch| LayerKind::Conv {
        in_ch,
        out_ch: ROI_CLASSES,
        kernel: 1,
        stride: 1,
        pad: 0,
    };
    let up = |kernel, stride| LayerKind::TConv {
        in_ch: ROI_CLASSES,
        out_ch: ROI_CLASSES,
        kernel,
        stride,
        bilinear: true,
    };
    let center = LayerKind::Crop { offset: None };
    let s16 = b.push("score16", head(BLOCK_WIDTHS[3]), &[pool4]);
    let s8 = b.push("score8", head(BLOCK_WIDTHS[2]), &[pool3]);
    let s4 = b.push("score4", head(BLOCK_WIDTHS[1]), &[pool2]);
    let u16 = b.push("up16", up(4, 2), &[s16]);
    let c16 = b.push("crop16", center.clone(), &[u16, s8]);
    let f8 = b.push("fuse8", LayerKind::Add, &[c16, s8]);
    let u8_ = b.push("up8", up(4, 2), &[f8]);
    let c8 = b.push("crop8", center.clone(), &[u8_, s4]);
    let f4 = b.push("fuse4", LayerKind::Add, &[c8, s4]);
    let u4 = b.push("up4", up(8, 4), &[f4]);
    let out = b.push("scores", center, &[u4, 0]);
    NetworkSpec {
        name: "roi".into(),
        input_channels: 3,
        input_size: None,
        classes: ROI_CLASSES,
        layers: b.layers,
        output: out,
    }
}

/// Layer names of the ROI score heads.
pub const SCORE_HEADS: [&str; 3] = ["score16", "score8", "score4"];

/// Recorded slots and parameter handles of one forward pass.
pub struct Forward {
    pub slots: Vec<Var>,
    pub params: Vec<Var>,
    output: usize,
}

impl Forward {
    pub fn output(&self) -> Var {
        self.slots[self.output]
    }
}

/// A [`NetworkSpec`] with instantiated parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Network {
    /// Initializes parameters: bilinear weights for upsampling kernels,
    /// `N(0, 2/fan_in)` for other kernels, zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let probe = spec.input_size.unwrap_or(INPUT_SIZE);
        spec.infer_shapes(probe, probe)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for layer in &spec.layers {
            for (suffix, shape) in layer.kind.param_shapes() {
                let value = match (&layer.kind, suffix) {
                    (_, "bias") => Tensor::zeros(&shape),
                    (
                        LayerKind::TConv {
                            in_ch,
                            out_ch,
                            kernel,
                            bilinear: true,
                            ..
                        },
                        _,
                    ) if in_ch == out_ch => nn::init::bilinear_kernel(*in_ch, *kernel),
                    (LayerKind::TConv { in_ch, kernel, .. }, _) => {
                        nn::init::he_normal(&shape, in_ch * kernel * kernel, &mut rng)
                    }
                    _ => {
                        let fan_in = shape[1..].iter().product::<usize>();
                        let fan_in = if matches!(layer.kind, LayerKind::Dense { .. }) {
                            shape[0]
                        } else {
                            fan_in
                        };
                        nn::init::he_normal(&shape, fan_in, &mut rng)
                    }
                };
                names.push(format!("{}.{suffix}", layer.name));
                params.push(value);
            }
        }
        Ok(Network { spec, names, params })
    }

    /// Assembles a network from named parameters, checking them against the network layout.
    pub fn from_parts(spec: NetworkSpec, named: Vec<(String, Tensor)>) -> Result<Self> {
        let probe = spec.input_size.unwrap_or(INPUT_SIZE);
        spec.infer_shapes(probe, probe)?;
        let expected = spec.param_shapes();
        if expected.len() != named.len() {
            return Err(Error::Data(format!(
                "network {} needs {} parameters, got {}",
                spec.name,
                expected.len(),
                named.len()
            )));
        }
        for ((ename, eshape), (name, t)) in expected.iter().zip(&named) {
            if ename != name {
                return Err(Error::Data(format!("expected parameter {ename}, found {name}")));
            }
            if eshape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, spec requires {eshape:?}",
                    t.shape()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Network { spec, names, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Records the full forward pass.
    pub fn forward(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<Forward> {
        self.forward_until(tape, input, trainable, self.spec.output)
    }

    /// Records the layers needed up to (and including) `last_slot`.
    pub fn forward_until(&self, tape: &mut Tape, input: Var, trainable: bool, last_slot: usize) -> Result<Forward> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        if c != self.spec.input_channels {
            return Err(Error::dim(
                "network input",
                tape.shape(input),
                &[0, self.spec.input_channels, h, w],
            ));
        }
        if last_slot >= self.spec.slot_count() {
            return Err(Error::Lookup(format!("slot {last_slot} out of range")));
        }
        // layers before the first dense layer accept any multiple of 16
        let fixed = self.spec.layers[..last_slot]
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Flatten | LayerKind::Dense { .. }));
        if fixed {
            self.spec.validate_input_extent(h, w)?;
        } else if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("input extent {h}×{w} is not a positive multiple of 16")));
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let mut slots = vec![input];
        let mut next_param = 0;
        for layer in &self.spec.layers[..last_slot] {
            let ins: Vec<Var> = layer.inputs.iter().map(|&s| slots[s]).collect();
            let out = match layer.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let (wv, bv) = (params[next_param], params[next_param + 1]);
                    next_param += 2;
                    nn::conv2d(tape, ins[0], wv, Some(bv), stride, pad)?
                }
                LayerKind::TConv { stride, .. } => {
                    let wv = params[next_param];
                    next_param += 1;
                    nn::tconv2d(tape, ins[0], wv, stride)?
                }
                LayerKind::Dense { .. } => {
                    let (wv, bv) = (params[next_param], params[next_param + 1]);
                    next_param += 2;
                    nn::fully_connected(tape, ins[0], wv, bv)?
                }
                LayerKind::Center => shift(tape, ins[0], -INPUT_OFFSET)?,
                LayerKind::Relu => nn::relu(tape, ins[0])?,
                LayerKind::MaxPool2 => nn::maxpool2(tape, ins[0])?,
                LayerKind::Flatten => flatten(tape, ins[0])?,
                LayerKind::Softmax => nn::softmax(tape, ins[0])?,
                LayerKind::ChannelSoftmax => nn::channel_softmax(tape, ins[0])?,
                LayerKind::Crop { offset } => {
                    let (_, _, xh, xw) = tape.value(ins[0]).dims4()?;
                    let (_, _, rh, rw) = tape.value(ins[1]).dims4()?;
                    let offset = offset.unwrap_or_else(|| nn::center_offset((xh, xw), (rh, rw)));
                    nn::crop(tape, ins[0], ins[1], offset)?
                }
                LayerKind::Add => nn::add_elementwise(tape, ins[0], ins[1])?,
                LayerKind::Concat => nn::concat_channels(tape, ins[0], ins[1])?,
            };
            slots.push(out);
        }
        Ok(Forward {
            slots,
            params,
            output: last_slot,
        })
    }

    /// Inference-only forward pass returning the output slot.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.infer_slot(input, self.spec.output)
    }

    /// Inference-only forward pass returning an arbitrary slot.
    pub fn infer_slot(&self, input: &Tensor, slot: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = self.forward_until(&mut tape, x, false, slot)?;
        Ok(tape.value(fwd.slots[slot]).clone())
    }

    /// Splits a fused network back into its ROI and classifier subnetworks.
    pub fn split_fused(&self) -> Result<(Network, Network)> {
        let strip = |prefix: &str| -> Result<Vec<(String, Tensor)>> {
            Ok(self
                .names
                .iter()
                .zip(&self.params)
                .filter_map(|(n, p)| n.strip_prefix(prefix).map(|s| (s.to_string(), p.clone())))
                .collect())
        };
        let roi_layers = self
            .spec
            .layers
            .iter()
            .take_while(|l| l.name.starts_with(ROI_PREFIX))
            .count();
        let cls_start = roi_layers + 2;
        if roi_layers == 0 || self.spec.layers.len() <= cls_start {
            return Err(Error::Config(format!("network {} is not a fused network", self.spec.name)));
        }
        let concat_slot = roi_layers + 2;
        let roi = NetworkSpec {
            name: "roi".into(),
            input_channels: self.spec.input_channels,
            input_size: None,
            classes: ROI_CLASSES,
            layers: self.spec.layers[..roi_layers]
                .iter()
                .map(|l| LayerSpec {
                    name: l.name[ROI_PREFIX.len()..].to_string(),
                    ..l.clone()
                })
                .collect(),
            output: roi_layers,
        };
        let remap = |s: usize| if s == concat_slot { 0 } else { s - concat_slot };
        let cls_layers: Vec<LayerSpec> = self.spec.layers[cls_start..]
            .iter()
            .map(|l| LayerSpec {
                name: l.name.strip_prefix(CLS_PREFIX).unwrap_or(&l.name).to_string(),
                kind: l.kind.clone(),
                inputs: l.inputs.iter().map(|&s| remap(s)).collect(),
            })
            .collect();
        let cls_in = self.spec.input_channels + ROI_CLASSES;
        let cls = NetworkSpec {
            name: format!("classifier{cls_in}"),
            input_channels: cls_in,
            input_size: self.spec.input_size,
            classes: self.spec.classes,
            output: remap(self.spec.output),
            layers: cls_layers,
        };
        Ok((
            Network::from_parts(roi, strip(ROI_PREFIX)?)?,
            Network::from_parts(cls, strip(CLS_PREFIX)?)?,
        ))
    }
}

/// Connects an ROI subnetwork to a 6-channel classifier: the per-pixel softmax
/// of the ROI scores is stacked after the image channels and fed to the classifier.
///
/// Both parameter sets are carried over unchanged and stay trainable.
pub fn fuse(roi: &Network, cls: &Network) -> Result<Network> {
    let rs = roi.spec();
    let cs = cls.spec();
    if rs.classes != ROI_CLASSES || rs.input_channels != 3 {
        return Err(Error::Config(format!("{} is not an ROI subnetwork", rs.name)));
    }
    if cs.input_channels != rs.input_channels + rs.classes {
        return Err(Error::Config(format!(
            "fusion needs a classifier with {} input channels, got {}",
            rs.input_channels + rs.classes,
            cs.input_channels
        )));
    }
    let mut layers: Vec<LayerSpec> = rs
        .layers
        .iter()
        .map(|l| LayerSpec {
            name: format!("{ROI_PREFIX}{}", l.name),
            ..l.clone()
        })
        .collect();
    let prob_slot = layers.len() + 1;
    layers.push(LayerSpec {
        name: "fuse.softmax".into(),
        kind: LayerKind::ChannelSoftmax,
        inputs: vec![rs.output],
    });
    let concat_slot = layers.len() + 1;
    layers.push(LayerSpec {
        name: "fuse.concat".into(),
        kind: LayerKind::Concat,
        inputs: vec![0, prob_slot],
    });
    let remap = |s: usize| if s == 0 { concat_slot } else { s + concat_slot };
    layers.extend(cs.layers.iter().map(|l| LayerSpec {
        name: format!("{CLS_PREFIX}{}", l.name),
        kind: l.kind.clone(),
        inputs: l.inputs.iter().map(|&s| remap(s)).collect(),
    }));
    let spec = NetworkSpec {
        name: "roi_aware".into(),
        input_channels: rs.input_channels,
        input_size: cs.input_size,
        classes: cs.classes,
        output: remap(cs.output),
        layers,
    };
    let named = roi
        .param_names()
        .iter()
        .zip(roi.params())
        .map(|(n, p)| (format!("{ROI_PREFIX}{n}"), p.clone()))
        .chain(
            cls.param_names()
                .iter()
                .zip(cls.params())
                .map(|(n, p)| (format!("{CLS_PREFIX}{n}"), p.clone())),
        )
        .collect();
    Network::from_parts(spec, named)
}

/// Per-pixel class probabilities of an ROI network, `N×3×H×W`.
pub fn roi_probabilities(roi: &Network, images: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let fwd = roi.forward(&mut tape, x, false)?;
    let p = nn::channel_softmax(&mut tape, fwd.output())?;
    Ok(tape.value(p).clone())
}
