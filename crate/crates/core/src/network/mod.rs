//! Sequential networks whose parameters are stored as neuron groups.
//!
//! Every neuron owns one [`NeuronGroup`]: its weight tensor and its bias. The
//! groups of a layer form a block (decomposed pairs own two blocks, one per
//! stage), and blocks are the unit both the regularizer and the pruner work on.

mod checkpoint;
mod kernels;
mod loss;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use loss::{cross_entropy, squared_error};
pub use spec::{BlockInfo, BlockRole, LayerSpec, Layout, LossKind, NetworkSpec};

use crate::error::{Error, Result};
use crate::tensor::{max_pool2d_raw, Tensor};
use kernels::{conv_backward, conv_forward, dense_backward, dense_forward, relu_in_place, relu_mask, ConvAxis};

/// Parameters of one neuron: `[w, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGroup {
    weights: Tensor,
    pub bias: f64,
}

impl NeuronGroup {
    pub fn new(weights: Tensor, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::Domain(format!("non-finite bias {bias}")));
        }
        Ok(NeuronGroup { weights, bias })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        NeuronGroup {
            weights: Tensor::zeros(shape),
            bias: 0.0,
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.weights.data_mut()
    }

    /// Number of parameters, bias included.
    pub fn len(&self) -> usize {
        self.weights.numel() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Weights followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len());
        flat.extend_from_slice(self.weights.data());
        flat.push(self.bias);
        flat
    }

    /// Overwrites the group from a `[weights..., bias]` slice.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape("NeuronGroup::set_flat", &[self.len()], &[flat.len()]));
        }
        let n = self.weights.numel();
        self.weights.data_mut().copy_from_slice(&flat[..n]);
        self.bias = flat[n];
        Ok(())
    }

    /// True when every entry, bias included, is exactly `0.0`.
    pub fn is_zero(&self) -> bool {
        self.bias == 0.0 && self.weights.data().iter().all(|&w| w == 0.0)
    }

    pub fn set_zero(&mut self) {
        self.bias = 0.0;
        self.weights.data_mut().fill(0.0);
    }
}

/// Neuron groups of every block, in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub blocks: Vec<Vec<NeuronGroup>>,
}

impl ParamSet {
    pub fn zeros(layout: &Layout) -> Self {
        ParamSet {
            blocks: layout
                .blocks
                .iter()
                .map(|b| (0..b.neurons).map(|_| NeuronGroup::zeros(b.weight_shape.clone())).collect())
                .collect(),
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &NeuronGroup> {
        self.blocks.iter().flatten()
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut NeuronGroup> {
        self.blocks.iter_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups().map(NeuronGroup::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(Vec::is_empty)
    }

    /// All parameters in declaration order: block, group, weights, bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len());
        for g in self.groups() {
            flat.extend_from_slice(g.weights.data());
            flat.push(g.bias);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape("ParamSet::set_flat", &[self.len()], &[flat.len()]));
        }
        let mut offset = 0;
        for g in self.groups_mut() {
            let n = g.len();
            g.set_flat(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    /// `self += other`, group by group.
    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.groups_mut().zip(other.groups()) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += y;
            }
            a.bias += b.bias;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.groups_mut() {
            for x in g.weights.data_mut() {
                *x *= c;
            }
            g.bias *= c;
        }
    }

    fn matches(&self, layout: &Layout) -> bool {
        self.blocks.len() == layout.blocks.len()
            && self.blocks.iter().zip(&layout.blocks).all(|(groups, info)| {
                groups.len() == info.neurons && groups.iter().all(|g| g.weights.shape() == info.weight_shape.as_slice())
            })
    }
}

/// Per-block and total parameter counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub per_block: Vec<usize>,
    pub per_layer: Vec<usize>,
    pub classifier: usize,
    pub total: usize,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `layers[0]` is the input, `layers[i + 1]` the output of layer `i`.
    pub layers: Vec<Tensor>,
    /// Post-ReLU intermediate of each decomposed pair.
    pub mids: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
    params: ParamSet,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: ParamSet) -> Result<Self> {
        let layout = spec.layout()?;
        if !params.matches(&layout) {
            return Err(Error::Config("parameters do not match the network spec".into()));
        }
        Ok(Network { spec, layout, params })
    }

    /// Zero biases; weights drawn from `N(0, 2 / P)` where `P` is the group size.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(&layout);
        for (info, groups) in layout.blocks.iter().zip(params.blocks.iter_mut()) {
            let normal = Normal::new(0.0, (2.0 / info.group_size() as f64).sqrt())
                .map_err(|e| Error::Domain(e.to_string()))?;
            for g in groups.iter_mut() {
                for w in g.weights.data_mut() {
                    *w = normal.sample(&mut rng);
                }
            }
        }
        Ok(Network { spec, layout, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    // Callers must not change the block structure.
    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if !params.matches(&self.layout) {
            return Err(Error::Config("parameters do not match the network spec".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn group(&self, block: usize, neuron: usize) -> &NeuronGroup {
        &self.params.blocks[block][neuron]
    }

    pub fn group_mut(&mut self, block: usize, neuron: usize) -> &mut NeuronGroup {
        &mut self.params.blocks[block][neuron]
    }

    /// Index of the classifier block (always the last one).
    pub fn classifier_block(&self) -> usize {
        self.layout.blocks.len() - 1
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_len(&self) -> usize {
        self.layout.blocks.last().map_or(0, |b| b.neurons)
    }

    pub fn count_params(&self) -> ParamCounts {
        let per_block: Vec<usize> = self.layout.blocks.iter().map(|b| b.neurons * b.group_size()).collect();
        let per_layer = self
            .layout
            .layer_blocks
            .iter()
            .map(|r| per_block[r.clone()].iter().sum())
            .collect();
        ParamCounts {
            classifier: *per_block.last().unwrap_or(&0),
            total: per_block.iter().sum(),
            per_block,
            per_layer,
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Activations)> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(Error::shape("forward", x.shape(), &self.spec.input_shape));
        }
        let mut layers = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut mids = Vec::with_capacity(self.spec.layers.len());
        layers.push(x.clone());

        for (l, layer) in self.spec.layers.iter().enumerate() {
            let input = &layers[l];
            let in_shape = &self.layout.shapes[l];
            let out_shape = self.layout.shapes[l + 1].clone();
            let blocks = self.layout.layer_blocks[l].clone();
            let mut mid = None;
            let out = match *layer {
                LayerSpec::Dense { .. } | LayerSpec::Classifier { .. } => {
                    dense_forward(input.data(), &self.params.blocks[blocks.start])
                }
                LayerSpec::Conv1dVertical { kernel, stride, padding, .. }
                | LayerSpec::Conv1dHorizontal { kernel, stride, padding, .. } => {
                    let vertical = matches!(layer, LayerSpec::Conv1dVertical { .. });
                    let geom = ConvAxis::new(in_shape, &out_shape, kernel, stride, padding, vertical);
                    conv_forward(input.data(), &geom, &self.params.blocks[blocks.start])
                }
                LayerSpec::DecomposedPair { kernel, stride, padding, .. } => {
                    let mid_shape = self.layout.mid_shapes[l].clone().unwrap();
                    let (m, out) = decomposed_raw(
                        input.data(),
                        in_shape,
                        &mid_shape,
                        &out_shape,
                        &self.params.blocks[blocks.start],
                        &self.params.blocks[blocks.start + 1],
                        kernel,
                        stride,
                        padding,
                    );
                    mid = Some(Tensor::from_parts(mid_shape, m));
                    out
                }
                LayerSpec::MaxPool { size, stride } => {
                    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                    max_pool2d_raw(input.data(), c, h, w, size, stride, out_shape[1], out_shape[2]).0
                }
                LayerSpec::Relu => input.relu().into_data(),
            };
            layers.push(Tensor::from_parts(out_shape, out));
            mids.push(mid);
        }
        let prediction = layers.last().unwrap().clone();
        Ok((prediction, Activations { layers, mids }))
    }

    /// Gradient of a loss with respect to every neuron group, given the
    /// activations of the forward pass and `dloss/dprediction`.
    pub fn backward(&self, acts: &Activations, loss_grad: &Tensor) -> Result<ParamSet> {
        let n_layers = self.spec.layers.len();
        if acts.layers.len() != n_layers + 1
            || acts.mids.len() != n_layers
            || acts.layers.iter().zip(&self.layout.shapes).any(|(t, s)| t.shape() != s.as_slice())
            || acts.mids.iter().zip(&self.layout.mid_shapes).any(|(m, s)| m.as_ref().map(|t| t.shape().to_vec()) != *s)
        {
            return Err(Error::Contract("activations do not come from a forward pass of this network".into()));
        }
        let out_shape = &self.layout.shapes[n_layers];
        if loss_grad.shape() != out_shape.as_slice() {
            return Err(Error::Contract(format!(
                "loss gradient shape {:?} does not match prediction shape {out_shape:?}",
                loss_grad.shape()
            )));
        }

        let mut grads = ParamSet::zeros(&self.layout);
        let mut grad = loss_grad.data().to_vec();

        for l in (0..n_layers).rev() {
            let input = acts.layers[l].data();
            let in_shape = &self.layout.shapes[l];
            let out_shape = &self.layout.shapes[l + 1];
            let blocks = self.layout.layer_blocks[l].clone();
            let need_input_grad = l > 0;
            let mut grad_in = vec![0.0; if need_input_grad { input.len() } else { 0 }];
            let gi = need_input_grad.then_some(grad_in.as_mut_slice());

            match self.spec.layers[l] {
                LayerSpec::Dense { .. } | LayerSpec::Classifier { .. } => {
                    let b = blocks.start;
                    dense_backward(input, &self.params.blocks[b], &grad, &mut grads.blocks[b], gi);
                }
                LayerSpec::Conv1dVertical { kernel, stride, padding, .. }
                | LayerSpec::Conv1dHorizontal { kernel, stride, padding, .. } => {
                    let vertical = matches!(self.spec.layers[l], LayerSpec::Conv1dVertical { .. });
                    let geom = ConvAxis::new(in_shape, out_shape, kernel, stride, padding, vertical);
                    let b = blocks.start;
                    conv_backward(input, &geom, &self.params.blocks[b], &grad, &mut grads.blocks[b], gi);
                }
                LayerSpec::DecomposedPair { kernel, stride, padding, .. } => {
                    let mid = acts.mids[l].as_ref().unwrap();
                    let (vb, hb) = (blocks.start, blocks.start + 1);
                    relu_mask(&mut grad, acts.layers[l + 1].data());
                    let mut grad_mid = vec![0.0; mid.numel()];
                    let hgeom = ConvAxis::new(mid.shape(), out_shape, kernel, stride, padding, false);
                    conv_backward(mid.data(), &hgeom, &self.params.blocks[hb], &grad, &mut grads.blocks[hb], Some(&mut grad_mid));
                    relu_mask(&mut grad_mid, mid.data());
                    let vgeom = ConvAxis::new(in_shape, mid.shape(), kernel, stride, padding, true);
                    conv_backward(input, &vgeom, &self.params.blocks[vb], &grad_mid, &mut grads.blocks[vb], gi);
                }
                LayerSpec::MaxPool { size, stride } => {
                    if let Some(gi) = gi {
                        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                        let (_, arg) = max_pool2d_raw(input, c, h, w, size, stride, out_shape[1], out_shape[2]);
                        for (&src, g) in arg.iter().zip(&grad) {
                            gi[src] += g;
                        }
                    }
                }
                LayerSpec::Relu => {
                    if let Some(gi) = gi {
                        gi.copy_from_slice(&grad);
                        relu_mask(gi, acts.layers[l + 1].data());
                    }
                }
            }
            grad = grad_in;
        }
        Ok(grads)
    }

    /// Loss of one labelled sample and its parameter gradient.
    pub fn loss_and_grad(&self, x: &Tensor, label: usize) -> Result<(f64, ParamSet)> {
        let (prediction, acts) = self.forward(x)?;
        if label >= prediction.numel() {
            return Err(Error::Domain(format!("label {label} out of range for {} outputs", prediction.numel())));
        }
        let (loss, g) = self.spec.loss.evaluate(prediction.data(), label);
        let g = Tensor::from_parts(prediction.shape().to_vec(), g);
        Ok((loss, self.backward(&acts, &g)?))
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        let prediction = self.predict(x)?;
        if label >= prediction.numel() {
            return Err(Error::Domain(format!("label {label} out of range for {} outputs", prediction.numel())));
        }
        Ok(self.spec.loss.evaluate(prediction.data(), label).0)
    }
}

#[allow(clippy::too_many_arguments)]
fn decomposed_raw(
    input: &[f64],
    in_shape: &[usize],
    mid_shape: &[usize],
    out_shape: &[usize],
    vertical: &[NeuronGroup],
    horizontal: &[NeuronGroup],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<f64>) {
    let vgeom = ConvAxis::new(in_shape, mid_shape, kernel, stride, padding, true);
    let mut mid = conv_forward(input, &vgeom, vertical);
    relu_in_place(&mut mid);
    let hgeom = ConvAxis::new(mid_shape, out_shape, kernel, stride, padding, false);
    let mut out = conv_forward(&mid, &hgeom, horizontal);
    relu_in_place(&mut out);
    (mid, out)
}

/// One decomposed layer applied to a `[C, H, W]` input:
/// `out_i = relu(b_i + sum_l h_il * relu(b_l + sum_c v_lc * in_c))`, where the
/// `v` kernels run along the height axis and the `h` kernels along the width.
///
/// Vertical groups carry `[C, d]` weights and horizontal groups `[L, d]`
/// weights, `L` being the number of vertical groups.
pub fn decomposed_forward(
    vertical: &[NeuronGroup],
    horizontal: &[NeuronGroup],
    input: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::shape("decomposed_forward", input.shape(), &[0, 0, 0]));
    };
    let Some(v0) = vertical.first().filter(|_| !horizontal.is_empty()) else {
        return Err(Error::Domain("decomposed_forward needs at least one filter per stage".into()));
    };
    let kernel = v0.weights.shape().get(1).copied().unwrap_or(0);
    let shared = vertical.len();
    let v_shape = [c, kernel];
    let h_shape = [shared, kernel];
    if let Some(bad) = vertical.iter().find(|g| g.weights.shape() != v_shape) {
        return Err(Error::shape("decomposed_forward (vertical)", bad.weights.shape(), &v_shape));
    }
    if let Some(bad) = horizontal.iter().find(|g| g.weights.shape() != h_shape) {
        return Err(Error::shape("decomposed_forward (horizontal)", bad.weights.shape(), &h_shape));
    }
    let spec = NetworkSpec {
        input_shape: vec![c, h, w],
        layers: vec![
            LayerSpec::DecomposedPair { shared, neurons: horizontal.len(), kernel, stride, padding },
            LayerSpec::Classifier { classes: 1 },
        ],
        loss: LossKind::SquaredError,
    };
    let layout = spec.layout()?;
    let mid_shape = layout.mid_shapes[0].clone().unwrap();
    let out_shape = layout.shapes[1].clone();
    let (_, out) = decomposed_raw(input.data(), &[c, h, w], &mid_shape, &out_shape, vertical, horizontal, kernel, stride, padding);
    Ok(Tensor::from_parts(out_shape, out))
}
