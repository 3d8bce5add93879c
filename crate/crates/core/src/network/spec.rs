//! Declarative layer graphs.
//!
//! Slot 0 holds the network input; layer `i` writes slot `i + 1`. Every layer
//! names the slots it reads, and may only read earlier slots.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Subtracts [`INPUT_OFFSET`](super::INPUT_OFFSET) from every entry so inputs in [0, 1] become zero-centred.
    Center,
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Transposed convolution; `bilinear` selects interpolation-weight init.
    TConv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bilinear: bool,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
    ChannelSoftmax,
    /// Reads `[x, reference]`; `None` centers the window.
    Crop {
        offset: Option<(usize, usize)>,
    },
    Add,
    Concat,
}

impl LayerKind {
    fn arity(&self) -> usize {
        match self {
            LayerKind::Crop { .. } | LayerKind::Add | LayerKind::Concat => 2,
            _ => 1,
        }
    }

    /// Parameter names (as suffixes) and shapes owned by this layer.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerKind::Conv {
                in_ch, out_ch, kernel, ..
            } => vec![
                ("weight", vec![out_ch, in_ch, kernel, kernel]),
                ("bias", vec![out_ch]),
            ],
            LayerKind::TConv {
                in_ch, out_ch, kernel, ..
            } => vec![("weight", vec![in_ch, out_ch, kernel, kernel])],
            LayerKind::Dense { inputs, outputs } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// Per-sample shape of a slot: `[C, H, W]` for maps, `[F]` for vectors.
pub type SlotShape = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    /// Required square input extent, or `None` for fully convolutional nets
    /// (which accept any multiple of 16).
    pub input_size: Option<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    pub output: usize,
}

impl NetworkSpec {
    pub fn slot_count(&self) -> usize {
        self.layers.len() + 1
    }

    /// Slot written by the layer called `name`.
    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name).map(|i| i + 1)
    }

    pub fn validate_input_extent(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(16) || !w.is_multiple_of(16) || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input extent {h}×{w} is not a positive multiple of 16"
            )));
        }
        if let Some(s) = self.input_size {
            if (h, w) != (s, s) {
                return Err(Error::Config(format!(
                    "network {} expects {s}×{s} input, got {h}×{w}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Checks graph wiring and composes every layer's shape rule.
    ///
    /// Returns the per-slot shapes for a `channels×h×w` input.
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<Vec<SlotShape>> {
        self.validate_input_extent(h, w)?;
        if self.output == 0 || self.output >= self.slot_count() {
            return Err(Error::Config(format!("output slot {} out of range", self.output)));
        }
        let mut shapes: Vec<SlotShape> = vec![vec![self.input_channels, h, w]];
        for (i, layer) in self.layers.iter().enumerate() {
            let slot = i + 1;
            if layer.inputs.len() != layer.kind.arity() {
                return Err(Error::Config(format!(
                    "layer {} takes {} inputs, got {}",
                    layer.name,
                    layer.kind.arity(),
                    layer.inputs.len()
                )));
            }
            if let Some(&bad) = layer.inputs.iter().find(|&&s| s >= slot) {
                return Err(Error::Config(format!(
                    "layer {} reads slot {bad}, which is not earlier than its own slot {slot}",
                    layer.name
                )));
            }
            let ins: Vec<&SlotShape> = layer.inputs.iter().map(|&s| &shapes[s]).collect();
            let out = layer_shape(layer, &ins)?;
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.kind
                    .param_shapes()
                    .into_iter()
                    .map(move |(suffix, shape)| (format!("{}.{suffix}", l.name), shape))
            })
            .collect()
    }

    /// Line-oriented text form stored in checkpoints.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let size = self.input_size.map_or("any".to_string(), |v| v.to_string());
        let _ = writeln!(s, "network {}", self.name);
        let _ = writeln!(s, "input_channels {}", self.input_channels);
        let _ = writeln!(s, "input_size {size}");
        let _ = writeln!(s, "classes {}", self.classes);
        let _ = writeln!(s, "output {}", self.output);
        for l in &self.layers {
            let inputs: Vec<String> = l.inputs.iter().map(|i| i.to_string()).collect();
            let _ = write!(s, "layer {} in={}", l.name, inputs.join(","));
            let _ = match &l.kind {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => write!(s, " conv cin={in_ch} cout={out_ch} k={kernel} s={stride} p={pad}"),
                LayerKind::TConv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    bilinear,
                } => write!(
                    s,
                    " tconv cin={in_ch} cout={out_ch} k={kernel} s={stride} init={}",
                    if *bilinear { "bilinear" } else { "he" }
                ),
                LayerKind::Center => write!(s, " center"),
                LayerKind::Relu => write!(s, " relu"),
                LayerKind::MaxPool2 => write!(s, " maxpool2"),
                LayerKind::Flatten => write!(s, " flatten"),
                LayerKind::Dense { inputs, outputs } => write!(s, " dense in={inputs} out={outputs}"),
                LayerKind::Softmax => write!(s, " softmax"),
                LayerKind::ChannelSoftmax => write!(s, " channel_softmax"),
                LayerKind::Crop { offset: None } => write!(s, " crop offset=center"),
                LayerKind::Crop { offset: Some((r, c)) } => write!(s, " crop offset={r},{c}"),
                LayerKind::Add => write!(s, " add"),
                LayerKind::Concat => write!(s, " concat"),
            };
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<NetworkSpec> {
        let bad = |line: usize, msg: &str| Error::Config(format!("network spec line {}: {msg}", line + 1));
        let mut name = None;
        let mut input_channels = None;
        let mut input_size = None;
        let mut classes = None;
        let mut output = None;
        let mut layers = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            let num = |w: Option<&str>| -> Result<usize> {
                w.and_then(|v| v.parse().ok()).ok_or_else(|| bad(ln, "expected an integer"))
            };
            match head {
                "network" => name = Some(words.next().ok_or_else(|| bad(ln, "missing name"))?.to_string()),
                "input_channels" => input_channels = Some(num(words.next())?),
                "input_size" => {
                    input_size = Some(match words.next() {
                        Some("any") => None,
                        w => Some(num(w)?),
                    })
                }
                "classes" => classes = Some(num(words.next())?),
                "output" => output = Some(num(words.next())?),
                "layer" => layers.push(parse_layer(words.collect::<Vec<_>>()).map_err(|m| bad(ln, &m))?),
                other => return Err(bad(ln, &format!("unknown directive `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Config(format!("network spec missing `{what}`"));
        Ok(NetworkSpec {
            name: name.ok_or_else(|| missing("network"))?,
            input_channels: input_channels.ok_or_else(|| missing("input_channels"))?,
            input_size: input_size.ok_or_else(|| missing("input_size"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            layers,
            output: output.ok_or_else(|| missing("output"))?,
        })
    }
}

fn parse_layer(words: Vec<&str>) -> std::result::Result<LayerSpec, String> {
    let [name, inputs, kind, rest @ ..] = words.as_slice() else {
        return Err("layer needs a name, inputs and a kind".into());
    };
    let inputs = inputs
        .strip_prefix("in=")
        .ok_or("missing in=")?
        .split(',')
        .map(|v| v.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let field = |key: &str| -> std::result::Result<&str, String> {
        rest.iter()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| format!("missing {key}="))
    };
    let int = |key: &str| -> std::result::Result<usize, String> {
        field(key)?.parse().map_err(|_| format!("bad integer for {key}"))
    };
    let kind = match *kind {
        "conv" => LayerKind::Conv {
            in_ch: int("cin")?,
            out_ch: int("cout")?,
            kernel: int("k")?,
            stride: int("s")?,
            pad: int("p")?,
        },
        "tconv" => LayerKind::TConv {
            in_ch: int("cin")?,
            out_ch: int("cout")?,
            kernel: int("k")?,
            stride: int("s")?,
            bilinear: match field("init")? {
                "bilinear" => true,
                "he" => false,
                other => return Err(format!("unknown init `{other}`")),
            },
        },
        "center" => LayerKind::Center,
        "relu" => LayerKind::Relu,
        "maxpool2" => LayerKind::MaxPool2,
        "flatten" => LayerKind::Flatten,
        "dense" => LayerKind::Dense {
            inputs: int("in")?,
            outputs: int("out")?,
        },
        "softmax" => LayerKind::Softmax,
        "channel_softmax" => LayerKind::ChannelSoftmax,
        "crop" => LayerKind::Crop {
            offset: match field("offset")? {
                "center" => None,
                v => {
                    let (r, c) = v.split_once(',').ok_or("offset needs row,col")?;
                    Some((
                        r.parse().map_err(|_| "bad offset row")?,
                        c.parse().map_err(|_| "bad offset col")?,
                    ))
                }
            },
        },
        "add" => LayerKind::Add,
        "concat" => LayerKind::Concat,
        other => return Err(format!("unknown layer kind `{other}`")),
    };
    Ok(LayerSpec {
        name: name.to_string(),
        kind,
        inputs,
    })
}

fn layer_shape(layer: &LayerSpec, ins: &[&SlotShape]) -> Result<SlotShape> {
    let mismatch = |expect: &[usize]| Error::dim("shape inference", ins[0], expect);
    let map = |s: &SlotShape| -> Result<(usize, usize, usize)> {
        match s.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Config(format!("layer {} needs a feature map input", layer.name))),
        }
    };
    let conv_extent = |x: usize, k: usize, s: usize, p: usize| -> Result<usize> {
        let span = x + 2 * p;
        if s == 0 || span < k || !(span - k).is_multiple_of(s) {
            return Err(Error::Config(format!(
                "layer {}: extent {x} does not tile with kernel {k}, stride {s}, pad {p}",
                layer.name
            )));
        }
        Ok((span - k) / s + 1)
    };
    Ok(match layer.kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let (c, h, w) = map(ins[0])?;
            if c != in_ch {
                return Err(mismatch(&[in_ch, h, w]));
            }
            vec![
                out_ch,
                conv_extent(h, kernel, stride, pad)?,
                conv_extent(w, kernel, stride, pad)?,
            ]
        }
        LayerKind::TConv {
            in_ch,
            out_ch,
            kernel,
            stride,
            ..
        } => {
            let (c, h, w) = map(ins[0])?;
            if c != in_ch {
                return Err(mismatch(&[in_ch, h, w]));
            }
            vec![out_ch, (h - 1) * stride + kernel, (w - 1) * stride + kernel]
        }
        LayerKind::Center | LayerKind::Relu | LayerKind::Softmax => ins[0].clone(),
        LayerKind::ChannelSoftmax => {
            map(ins[0])?;
            ins[0].clone()
        }
        LayerKind::MaxPool2 => {
            let (c, h, w) = map(ins[0])?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Config(format!(
                    "layer {}: maxpool2 needs even extents, got {h}×{w}",
                    layer.name
                )));
            }
            vec![c, h / 2, w / 2]
        }
        LayerKind::Flatten => vec![ins[0].iter().product()],
        LayerKind::Dense { inputs, outputs } => {
            if ins[0].as_slice() != [inputs] {
                return Err(mismatch(&[inputs]));
            }
            vec![outputs]
        }
        LayerKind::Crop { offset } => {
            let (c, h, w) = map(ins[0])?;
            let (_, rh, rw) = map(ins[1])?;
            let (oy, ox) = offset.unwrap_or(((h.saturating_sub(rh)) / 2, (w.saturating_sub(rw)) / 2));
            if oy + rh > h || ox + rw > w {
                return Err(Error::dim("shape inference (crop)", ins[0], ins[1]));
            }
            vec![c, rh, rw]
        }
        LayerKind::Add => {
            if ins[0] != ins[1] {
                return Err(Error::dim("shape inference (add)", ins[0], ins[1]));
            }
            ins[0].clone()
        }
        LayerKind::Concat => {
            let (ca, h, w) = map(ins[0])?;
            let (cb, hb, wb) = map(ins[1])?;
            if (h, w) != (hb, wb) {
                return Err(Error::dim("shape inference (concat)", ins[0], ins[1]));
            }
            vec![ca + cb, h, w]
        }
    })
}
