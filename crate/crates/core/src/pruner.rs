//! Removal of zeroed neurons after training, and the sparsity report.
//!
//! A neuron whose group is exactly zero outputs zero for every input, so it can
//! be deleted together with every downstream weight that reads its channel
//! ("induced" removal). Removal cascades: a neuron that is zero apart from the
//! weights reading removed channels also outputs zero, and goes too. This is
//! what keeps [`compact`] idempotent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BlockInfo, BlockRole, LayerSpec, Network, NeuronGroup, ParamSet};
use crate::tensor::Tensor;

const BYTES_PER_VALUE: u64 = 8;

fn group_is_dead(g: &NeuronGroup, epsilon: f64) -> bool {
    g.bias.abs() <= epsilon && g.weights().data().iter().all(|w| w.abs() <= epsilon)
}

/// Dead neuron indices for every regularized block (the classifier is never
/// listed). A neuron is dead iff every weight and its bias are exactly 0.0.
pub fn detect_dead(net: &Network) -> Vec<Vec<usize>> {
    detect_dead_within(net, 0.0)
}

/// Like [`detect_dead`], treating entries with `|x| <= epsilon` as zero.
pub fn detect_dead_within(net: &Network, epsilon: f64) -> Vec<Vec<usize>> {
    let n = net.classifier_block();
    net.params().blocks[..n]
        .iter()
        .map(|groups| {
            groups
                .iter()
                .enumerate()
                .filter(|(_, g)| group_is_dead(g, epsilon))
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Whether weight `k` of a group in `info` reads an input channel flagged in `removed`.
fn reads_removed(info: &BlockInfo, removed: &[bool], k: usize) -> bool {
    !removed.is_empty() && removed[k / info.slice_len()]
}

/// Which neurons compaction deletes, per block (the classifier entry is all
/// `false`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalPlan {
    pub removed: Vec<Vec<bool>>,
}

impl RemovalPlan {
    pub fn new(net: &Network) -> Self {
        let layout = net.layout();
        let cls = net.classifier_block();
        let mut removed: Vec<Vec<bool>> = Vec::with_capacity(layout.blocks.len());
        for (b, info) in layout.blocks.iter().enumerate() {
            if b == cls {
                removed.push(vec![false; info.neurons]);
                continue;
            }
            let inputs: &[bool] = if b == 0 { &[] } else { &removed[b - 1] };
            let flags = net.params().blocks[b]
                .iter()
                .map(|g| {
                    g.bias == 0.0
                        && g.weights()
                            .data()
                            .iter()
                            .enumerate()
                            .all(|(k, &w)| w == 0.0 || reads_removed(info, inputs, k))
                })
                .collect();
            removed.push(flags);
        }
        RemovalPlan { removed }
    }

    pub fn removed_indices(&self, block: usize) -> Vec<usize> {
        self.removed[block].iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i).collect()
    }

    pub fn widths_after(&self) -> Vec<usize> {
        self.removed.iter().map(|r| r.iter().filter(|&&x| !x).count()).collect()
    }
}

/// Old-to-new neuron indices for each block; `None` marks a removed neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub blocks: Vec<Vec<Option<usize>>>,
}

/// Deletes dead neurons and every weight reading their channels.
///
/// Fails with [`Error::Severed`] if a block would lose all of its neurons.
pub fn compact(net: &Network) -> Result<(Network, IndexMaps)> {
    let plan = RemovalPlan::new(net);
    let layout = net.layout();
    let widths = plan.widths_after();

    for (info, &w) in layout.blocks.iter().zip(&widths) {
        if w == 0 {
            return Err(Error::Severed {
                layer: info.layer,
                stage: info.role.name(),
            });
        }
    }

    let mut blocks = Vec::with_capacity(layout.blocks.len());
    let mut maps = Vec::with_capacity(layout.blocks.len());
    for (b, info) in layout.blocks.iter().enumerate() {
        let inputs: &[bool] = if b == 0 { &[] } else { &plan.removed[b - 1] };
        let kept_channels = if inputs.is_empty() {
            info.in_channels
        } else {
            inputs.iter().filter(|&&r| !r).count()
        };
        let mut shape = info.weight_shape.clone();
        shape[0] = shape[0] / info.in_channels * kept_channels;

        let mut groups = Vec::with_capacity(widths[b]);
        let mut map = Vec::with_capacity(info.neurons);
        for (n, g) in net.params().blocks[b].iter().enumerate() {
            if plan.removed[b][n] {
                map.push(None);
                continue;
            }
            map.push(Some(groups.len()));
            let data: Vec<f64> = g
                .weights()
                .data()
                .iter()
                .enumerate()
                .filter(|&(k, _)| !reads_removed(info, inputs, k))
                .map(|(_, &w)| w)
                .collect();
            groups.push(NeuronGroup::new(Tensor::new(shape.clone(), data)?, g.bias)?);
        }
        blocks.push(groups);
        maps.push(map);
    }

    let spec = net.spec().with_block_widths(&widths);
    let out = Network::new(spec, ParamSet { blocks })?;
    Ok((out, IndexMaps { blocks: maps }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: usize,
    pub role: BlockRole,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub neurons_pct: f64,
    pub group_param_pct: f64,
    pub total_param_pct: f64,
    pub total_induced_pct: f64,
    pub per_layer_neuron_counts: Vec<LayerCount>,
    /// Regularized minus baseline accuracy, in percentage points.
    pub accuracy_gap: Option<f64>,
    pub flops_before: u64,
    pub flops_after: u64,
    pub feature_memory_before: u64,
    pub feature_memory_after: u64,
    pub param_memory_before: u64,
    pub param_memory_after: u64,
}

/// Test accuracies (fractions in `[0, 1]`) of the two models being compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracies {
    pub regularized: f64,
    pub baseline: f64,
}

/// Raw counts behind the percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ZeroCounts {
    pub neurons: usize,
    pub dead_neurons: usize,
    /// Parameters of regularized blocks.
    pub params: usize,
    pub dead_group_params: usize,
    /// Exact zeros in surviving groups of regularized blocks.
    pub within_group_zeros: usize,
    /// Weights that read a removed channel, in surviving groups and the classifier.
    pub induced: usize,
    /// Entries of surviving regularized groups that are zero or read a removed channel.
    pub zero_or_induced: usize,
    pub classifier_induced: usize,
    pub classifier_params: usize,
}

impl ZeroCounts {
    pub fn of(net: &Network) -> Self {
        let plan = RemovalPlan::new(net);
        let layout = net.layout();
        let cls = net.classifier_block();
        let mut c = ZeroCounts::default();
        for (b, info) in layout.blocks.iter().enumerate() {
            let inputs: &[bool] = if b == 0 { &[] } else { &plan.removed[b - 1] };
            let p = info.group_size();
            if b == cls {
                c.classifier_params = info.neurons * p;
            } else {
                c.neurons += info.neurons;
                c.params += info.neurons * p;
            }
            for (n, g) in net.params().blocks[b].iter().enumerate() {
                if plan.removed[b][n] {
                    c.dead_neurons += 1;
                    c.dead_group_params += p;
                    continue;
                }
                for (k, &w) in g.weights().data().iter().enumerate() {
                    let induced = reads_removed(info, inputs, k);
                    c.induced += induced as usize;
                    if b == cls {
                        c.classifier_induced += induced as usize;
                    } else {
                        c.within_group_zeros += (w == 0.0) as usize;
                        c.zero_or_induced += (w == 0.0 || induced) as usize;
                    }
                }
                if g.bias == 0.0 && b != cls {
                    c.within_group_zeros += 1;
                    c.zero_or_induced += 1;
                }
            }
        }
        c
    }

    /// Parameters compaction deletes.
    pub fn deleted(&self) -> usize {
        self.dead_group_params + self.induced
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn flops(net: &Network) -> u64 {
    net.layout().blocks.iter().map(|b| 2 * b.macs as u64).sum()
}

/// Extents of every post-activation tensor for one sample, in bytes.
fn feature_memory(net: &Network) -> u64 {
    let layout = net.layout();
    let numel = |s: &[usize]| s.iter().product::<usize>() as u64;
    let mut values = 0;
    for (l, layer) in net.spec().layers.iter().enumerate() {
        match layer {
            LayerSpec::Relu => values += numel(&layout.shapes[l + 1]),
            LayerSpec::DecomposedPair { .. } => {
                values += numel(&layout.shapes[l + 1]);
                values += layout.mid_shapes[l].as_deref().map_or(0, numel);
            }
            _ => {}
        }
    }
    values * BYTES_PER_VALUE
}

/// Compares a trained network with its compacted form.
///
/// The percentages are taken over the regularized blocks; "total induced"
/// also counts the classifier in its denominator, and the classifier weights
/// compaction deletes in its numerator.
pub fn report(before: &Network, after: &Network, accuracies: Option<Accuracies>) -> Result<SparsityReport> {
    if !before.spec().same_family(after.spec()) {
        return Err(Error::Contract("report: networks come from different spec families".into()));
    }
    let plan = RemovalPlan::new(before);
    let expected = plan.widths_after();
    let widths_before: Vec<usize> = before.layout().blocks.iter().map(|b| b.neurons).collect();
    let widths_after: Vec<usize> = after.layout().blocks.iter().map(|b| b.neurons).collect();
    if widths_after != expected {
        return Err(Error::Contract(format!(
            "report: widths {widths_after:?} are not the compaction of {widths_before:?} (expected {expected:?})"
        )));
    }

    let c = ZeroCounts::of(before);
    let cls = before.classifier_block();
    let per_layer_neuron_counts = before.layout().blocks[..cls]
        .iter()
        .zip(&widths_after)
        .map(|(info, &after)| LayerCount {
            layer: info.layer,
            role: info.role,
            before: info.neurons,
            after,
        })
        .collect();

    let induced_total = c.dead_group_params + c.zero_or_induced + c.classifier_induced;
    let pb = before.count_params().total as u64;
    let pa = after.count_params().total as u64;
    Ok(SparsityReport {
        neurons_pct: pct(c.dead_neurons, c.neurons),
        group_param_pct: pct(c.dead_group_params, c.params),
        total_param_pct: pct(c.dead_group_params + c.within_group_zeros, c.params),
        total_induced_pct: pct(induced_total, c.params + c.classifier_params),
        per_layer_neuron_counts,
        accuracy_gap: accuracies.map(|a| 100.0 * (a.regularized - a.baseline)),
        flops_before: flops(before),
        flops_after: flops(after),
        feature_memory_before: feature_memory(before),
        feature_memory_after: feature_memory(after),
        param_memory_before: pb * BYTES_PER_VALUE,
        param_memory_after: pa * BYTES_PER_VALUE,
    })
}

impl SparsityReport {
    /// `group_param <= total_param <= total_induced`.
    pub fn chain_holds(&self) -> bool {
        self.group_param_pct <= self.total_param_pct && self.total_param_pct <= self.total_induced_pct
    }
}

impl fmt::Display for SparsityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let gap = self.accuracy_gap.map_or_else(|| "n/a".to_string(), |g| format!("{g:.2}"));
        writeln!(f, "{:<16}{:>10}", "metric", "%")?;
        writeln!(f, "{:<16}{:>10.2}", "neurons", self.neurons_pct)?;
        writeln!(f, "{:<16}{:>10.2}", "group param", self.group_param_pct)?;
        writeln!(f, "{:<16}{:>10.2}", "total param", self.total_param_pct)?;
        writeln!(f, "{:<16}{:>10.2}", "total induced", self.total_induced_pct)?;
        writeln!(f, "{:<16}{:>10}", "accuracy gap", gap)?;
        writeln!(f)?;
        writeln!(f, "{:<8}{:<18}{:>8}{:>8}", "layer", "block", "before", "after")?;
        for c in &self.per_layer_neuron_counts {
            writeln!(f, "{:<8}{:<18}{:>8}{:>8}", c.layer, c.role.name(), c.before, c.after)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<24}{:>14}{:>14}", "cost", "before", "after")?;
        writeln!(f, "{:<24}{:>14}{:>14}", "flops", self.flops_before, self.flops_after)?;
        writeln!(
            f,
            "{:<24}{:>14}{:>14}",
            "feature memory (bytes)", self.feature_memory_before, self.feature_memory_after
        )?;
        write!(
            f,
            "{:<24}{:>14}{:>14}",
            "param memory (bytes)", self.param_memory_before, self.param_memory_after
        )
    }
}
