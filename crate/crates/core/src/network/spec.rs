use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_out_len;

fn one() -> usize {
    1
}

/// One layer of a sequential network.
///
/// Convolutions act on `[C, H, W]` activations. `Dense` and `Classifier`
/// flatten whatever they receive. A `DecomposedPair` is a vertical 1D
/// convolution onto `shared` filters, a ReLU, a horizontal 1D convolution onto
/// `neurons` filters and a second ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        neurons: usize,
    },
    Conv1dVertical {
        neurons: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Conv1dHorizontal {
        neurons: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    DecomposedPair {
        shared: usize,
        neurons: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Classifier {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1dVertical { .. } => "conv1d_vertical",
            LayerSpec::Conv1dHorizontal { .. } => "conv1d_horizontal",
            LayerSpec::DecomposedPair { .. } => "decomposed_pair",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Relu => "relu",
            LayerSpec::Classifier { .. } => "classifier",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        !matches!(self, LayerSpec::MaxPool { .. } | LayerSpec::Relu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[D]` for vector inputs or `[C, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
}

/// What a block of neuron groups computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Dense,
    Vertical,
    Horizontal,
    /// First stage of a decomposed pair (the shared filters).
    SharedVertical,
    /// Second stage of a decomposed pair.
    PairHorizontal,
    Classifier,
}

impl BlockRole {
    pub fn name(self) -> &'static str {
        match self {
            BlockRole::Dense => "dense",
            BlockRole::Vertical => "vertical",
            BlockRole::Horizontal => "horizontal",
            BlockRole::SharedVertical => "shared vertical",
            BlockRole::PairHorizontal => "pair horizontal",
            BlockRole::Classifier => "classifier",
        }
    }
}

/// A set of neuron groups sharing one group size; the unit the regularizer
/// sees as a "layer". A decomposed pair owns two blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub layer: usize,
    pub role: BlockRole,
    pub neurons: usize,
    /// Channel count of the activation the block reads.
    pub in_channels: usize,
    /// Shape of each group's weight tensor: `[D]` for dense kinds, `[C, d]` for
    /// convolutions. The leading extent always splits evenly into
    /// `in_channels` slices.
    pub weight_shape: Vec<usize>,
    /// Shape of the block's output activation.
    pub out_shape: Vec<usize>,
    /// Multiply-accumulates for one sample.
    pub macs: usize,
}

impl BlockInfo {
    pub fn weights_per_group(&self) -> usize {
        self.weight_shape.iter().product()
    }

    /// `P_l`: weights plus bias.
    pub fn group_size(&self) -> usize {
        self.weights_per_group() + 1
    }

    /// Weights reading one input channel.
    pub fn slice_len(&self) -> usize {
        self.weights_per_group() / self.in_channels
    }

    pub fn is_classifier(&self) -> bool {
        self.role == BlockRole::Classifier
    }
}

/// Shapes and blocks derived from a validated spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `shapes[0]` is the input shape, `shapes[i + 1]` the output of layer `i`.
    pub shapes: Vec<Vec<usize>>,
    pub blocks: Vec<BlockInfo>,
    /// For each layer, the range of block indices it owns.
    pub layer_blocks: Vec<std::ops::Range<usize>>,
    /// Extent of the intermediate activation of each decomposed pair.
    pub mid_shapes: Vec<Option<Vec<usize>>>,
}

fn chw(shape: &[usize], layer: usize, kind: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Config(format!(
            "layer {layer} ({kind}) needs a [C, H, W] input, got {shape:?}"
        ))),
    }
}

fn positive(value: usize, what: &str, layer: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::Config(format!("layer {layer}: {what} must be >= 1")));
    }
    Ok(())
}

struct ConvGeom {
    out_shape: Vec<usize>,
    macs: usize,
}

fn conv_stage(
    input: &[usize],
    layer: usize,
    neurons: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    vertical: bool,
) -> Result<ConvGeom> {
    let (c, h, w) = chw(input, layer, if vertical { "vertical conv" } else { "horizontal conv" })?;
    let axis_len = if vertical { h } else { w };
    let out = conv_out_len(axis_len, kernel, stride, padding).ok_or_else(|| {
        Error::Config(format!(
            "layer {layer}: kernel {kernel} does not fit extent {axis_len} with padding {padding}"
        ))
    })?;
    let (oh, ow) = if vertical { (out, w) } else { (h, out) };
    Ok(ConvGeom {
        out_shape: vec![neurons, oh, ow],
        macs: neurons * oh * ow * c * kernel,
    })
}

impl NetworkSpec {
    pub fn layout(&self) -> Result<Layout> {
        if !(self.input_shape.len() == 1 || self.input_shape.len() == 3)
            || self.input_shape.contains(&0)
        {
            return Err(Error::Config(format!(
                "input_shape must be [D] or [C, H, W] with positive extents, got {:?}",
                self.input_shape
            )));
        }
        match self.layers.last() {
            Some(LayerSpec::Classifier { .. }) => {}
            _ => return Err(Error::Config("the last layer must be a classifier".into())),
        }

        let mut shapes = vec![self.input_shape.clone()];
        let mut blocks = Vec::new();
        let mut layer_blocks = Vec::new();
        let mut mid_shapes = Vec::new();

        for (l, layer) in self.layers.iter().enumerate() {
            let input = shapes.last().unwrap().clone();
            let first_block = blocks.len();
            let mut mid = None;
            let out = match *layer {
                LayerSpec::Dense { neurons } | LayerSpec::Classifier { classes: neurons } => {
                    positive(neurons, "neuron count", l)?;
                    let is_classifier = matches!(layer, LayerSpec::Classifier { .. });
                    if is_classifier && l + 1 != self.layers.len() {
                        return Err(Error::Config(format!("layer {l}: classifier must be last")));
                    }
                    let d: usize = input.iter().product();
                    blocks.push(BlockInfo {
                        layer: l,
                        role: if is_classifier { BlockRole::Classifier } else { BlockRole::Dense },
                        neurons,
                        in_channels: input[0],
                        weight_shape: vec![d],
                        out_shape: vec![neurons],
                        macs: neurons * d,
                    });
                    vec![neurons]
                }
                LayerSpec::Conv1dVertical { neurons, kernel, stride, padding }
                | LayerSpec::Conv1dHorizontal { neurons, kernel, stride, padding } => {
                    positive(neurons, "neuron count", l)?;
                    positive(kernel, "kernel", l)?;
                    positive(stride, "stride", l)?;
                    let vertical = matches!(layer, LayerSpec::Conv1dVertical { .. });
                    let g = conv_stage(&input, l, neurons, kernel, stride, padding, vertical)?;
                    blocks.push(BlockInfo {
                        layer: l,
                        role: if vertical { BlockRole::Vertical } else { BlockRole::Horizontal },
                        neurons,
                        in_channels: input[0],
                        weight_shape: vec![input[0], kernel],
                        out_shape: g.out_shape.clone(),
                        macs: g.macs,
                    });
                    g.out_shape
                }
                LayerSpec::DecomposedPair { shared, neurons, kernel, stride, padding } => {
                    positive(shared, "shared filter count", l)?;
                    positive(neurons, "neuron count", l)?;
                    positive(kernel, "kernel", l)?;
                    positive(stride, "stride", l)?;
                    let v = conv_stage(&input, l, shared, kernel, stride, padding, true)?;
                    let h = conv_stage(&v.out_shape, l, neurons, kernel, stride, padding, false)?;
                    blocks.push(BlockInfo {
                        layer: l,
                        role: BlockRole::SharedVertical,
                        neurons: shared,
                        in_channels: input[0],
                        weight_shape: vec![input[0], kernel],
                        out_shape: v.out_shape.clone(),
                        macs: v.macs,
                    });
                    blocks.push(BlockInfo {
                        layer: l,
                        role: BlockRole::PairHorizontal,
                        neurons,
                        in_channels: shared,
                        weight_shape: vec![shared, kernel],
                        out_shape: h.out_shape.clone(),
                        macs: h.macs,
                    });
                    mid = Some(v.out_shape);
                    h.out_shape
                }
                LayerSpec::MaxPool { size, stride } => {
                    positive(size, "pool size", l)?;
                    positive(stride, "pool stride", l)?;
                    let (c, h, w) = chw(&input, l, "max_pool")?;
                    match (conv_out_len(h, size, stride, 0), conv_out_len(w, size, stride, 0)) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => {
                            return Err(Error::Config(format!(
                                "layer {l}: pool window {size} larger than input {input:?}"
                            )))
                        }
                    }
                }
                LayerSpec::Relu => input.clone(),
            };
            layer_blocks.push(first_block..blocks.len());
            mid_shapes.push(mid);
            shapes.push(out);
        }

        Ok(Layout {
            shapes,
            blocks,
            layer_blocks,
            mid_shapes,
        })
    }

    /// Copy of the spec with every block's width replaced, in block order.
    pub fn with_block_widths(&self, widths: &[usize]) -> NetworkSpec {
        let mut spec = self.clone();
        let mut it = widths.iter().copied();
        for layer in spec.layers.iter_mut() {
            match layer {
                LayerSpec::Dense { neurons }
                | LayerSpec::Conv1dVertical { neurons, .. }
                | LayerSpec::Conv1dHorizontal { neurons, .. } => *neurons = it.next().unwrap(),
                LayerSpec::DecomposedPair { shared, neurons, .. } => {
                    *shared = it.next().unwrap();
                    *neurons = it.next().unwrap();
                }
                LayerSpec::Classifier { classes } => *classes = it.next().unwrap(),
                LayerSpec::MaxPool { .. } | LayerSpec::Relu => {}
            }
        }
        spec
    }

    /// Same layer kinds in the same order with the same geometry; widths may differ.
    pub fn same_family(&self, other: &NetworkSpec) -> bool {
        let strip = |s: &NetworkSpec| -> Vec<LayerSpec> {
            s.layers
                .iter()
                .map(|l| match l.clone() {
                    LayerSpec::Dense { .. } => LayerSpec::Dense { neurons: 0 },
                    LayerSpec::Conv1dVertical { kernel, stride, padding, .. } => {
                        LayerSpec::Conv1dVertical { neurons: 0, kernel, stride, padding }
                    }
                    LayerSpec::Conv1dHorizontal { kernel, stride, padding, .. } => {
                        LayerSpec::Conv1dHorizontal { neurons: 0, kernel, stride, padding }
                    }
                    LayerSpec::DecomposedPair { kernel, stride, padding, .. } => {
                        LayerSpec::DecomposedPair { shared: 0, neurons: 0, kernel, stride, padding }
                    }
                    other => other,
                })
                .collect()
        };
        self.input_shape == other.input_shape && self.loss == other.loss && strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_layout() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { neurons: 10 }, LayerSpec::Relu, LayerSpec::Classifier { classes: 3 }],
            loss: LossKind::CrossEntropy,
        };
        let layout = spec.layout().unwrap();
        assert_eq!(layout.shapes, vec![vec![4], vec![10], vec![10], vec![3]]);
        assert_eq!(layout.blocks.len(), 2);
        assert_eq!(layout.blocks[0].group_size(), 5);
        assert_eq!(layout.blocks[1].group_size(), 11);
        assert_eq!(layout.layer_blocks[1], 1..1);
    }

    #[test]
    fn decomposed_layout() {
        let spec = NetworkSpec {
            input_shape: vec![2, 6, 6],
            layers: vec![
                LayerSpec::DecomposedPair { shared: 3, neurons: 4, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Classifier { classes: 5 },
            ],
            loss: LossKind::CrossEntropy,
        };
        let layout = spec.layout().unwrap();
        assert_eq!(layout.shapes[1], vec![4, 6, 6]);
        assert_eq!(layout.mid_shapes[0], Some(vec![3, 6, 6]));
        assert_eq!(layout.blocks[0].weight_shape, vec![2, 3]);
        assert_eq!(layout.blocks[1].weight_shape, vec![3, 3]);
        assert_eq!(layout.blocks[2].weight_shape, vec![36]);
        assert_eq!(layout.blocks[2].slice_len(), 9);
    }

    #[test]
    fn rejects_bad_specs() {
        let no_classifier = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { neurons: 2 }],
            loss: LossKind::CrossEntropy,
        };
        assert!(matches!(no_classifier.layout(), Err(Error::Config(_))));

        let conv_on_vector = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Conv1dVertical { neurons: 2, kernel: 3, stride: 1, padding: 0 },
                LayerSpec::Classifier { classes: 2 },
            ],
            loss: LossKind::CrossEntropy,
        };
        assert!(conv_on_vector.layout().is_err());

        let zero_width = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { neurons: 0 }, LayerSpec::Classifier { classes: 2 }],
            loss: LossKind::CrossEntropy,
        };
        assert!(zero_width.layout().is_err());
    }

    #[test]
    fn json_shape() {
        let json = r#"{"input_shape":[1,8,8],"loss":"cross_entropy","layers":[
            {"kind":"conv1d_vertical","neurons":4,"kernel":3,"padding":1},
            {"kind":"relu"},{"kind":"classifier","classes":2}]}"#;
        let spec: NetworkSpec = serde_json::from_str(json).unwrap();
        assert_eq!(
            spec.layers[0],
            LayerSpec::Conv1dVertical { neurons: 4, kernel: 3, stride: 1, padding: 1 }
        );
        assert!(spec.layout().is_ok());
    }
}
