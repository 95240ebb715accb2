//! Labelled datasets: IDX and CSV loading plus a synthetic teacher-student task.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerSpec, LossKind, Network, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Config(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.shape() != first.shape()) {
                return Err(Error::shape("Dataset::new", first.shape(), bad.shape()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Config(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(Tensor::shape)
    }

    /// Moves the last `n` samples into a validation set.
    pub fn split_off(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Config(format!("cannot hold out {n} of {} samples", self.len())));
        }
        let at = self.len() - n;
        let val_inputs = self.inputs.split_off(at);
        let val_labels = self.labels.split_off(at);
        let validation = Dataset {
            inputs: val_inputs,
            labels: val_labels,
            class_count: self.class_count,
            split: Split::Validation,
        };
        self.split = Split::Train;
        Ok((self, validation))
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Contents of an IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let format = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 {
        return Err(format(bytes.len(), "truncated IDX header".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format(0, format!("bad IDX magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(format(2, format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(format(3, "IDX file with zero dimensions".into()));
    }
    let header_end = 4 + 4 * ndims;
    if bytes.len() < header_end {
        return Err(format(bytes.len(), format!("truncated IDX header: expected {header_end} bytes")));
    }
    let dims: Vec<usize> = bytes[4..header_end]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let available = bytes.len() - header_end;
    if available < count {
        return Err(format(
            bytes.len(),
            format!("truncated IDX payload: expected {count} bytes, found {available}"),
        ));
    }
    if available > count {
        return Err(format(header_end + count, "trailing bytes after IDX payload".into()));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header_end..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Builds a dataset from an image array `[N, H, W]` (or `[N, D]`) and a label
/// array `[N]`. Pixels are divided by 255; images become `[1, H, W]` tensors.
pub fn dataset_from_idx(images: &IdxArray, labels: &IdxArray, split: Split) -> Result<Dataset> {
    let n = images.dims[0];
    if labels.dims.len() != 1 || labels.dims[0] != n {
        return Err(Error::shape("dataset_from_idx", &images.dims, &labels.dims));
    }
    let shape = match images.dims[1..] {
        [h, w] => vec![1, h, w],
        [d] => vec![d],
        _ => return Err(Error::shape("dataset_from_idx", &images.dims, &[0, 0, 0])),
    };
    let per: usize = shape.iter().product();
    if per == 0 {
        return Err(Error::shape("dataset_from_idx", &images.dims, &shape));
    }
    let inputs = images
        .data
        .chunks_exact(per)
        .map(|px| Tensor::new(shape.clone(), px.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = labels.data.iter().map(|&y| y as usize).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, class_count, split)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let images = parse_idx(&fs::read(images)?)?;
    let labels = parse_idx(&fs::read(labels)?)?;
    dataset_from_idx(&images, &labels, split)
}

/// Reads `label,f0,f1,...` rows (with that header) into `[D]` tensors.
pub fn load_csv(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::Format {
            offset: 0,
            message: "CSV header must be label,f0,f1,...".into(),
        });
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        let parse_err = |what: &str| Error::Format {
            offset,
            message: format!("cannot parse {what}"),
        };
        let label: usize = record[0].trim().parse().map_err(|_| parse_err("label"))?;
        let features = record
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<Vec<_>>>()?;
        inputs.push(Tensor::vector(features)?);
        labels.push(label);
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, class_count, split)
}

/// A single-hidden-layer ReLU network of width `k`.
pub fn teacher_spec(input_dim: usize, k: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![input_dim],
        layers: vec![
            LayerSpec::Dense { neurons: k },
            LayerSpec::Relu,
            LayerSpec::Classifier { classes },
        ],
        loss: LossKind::CrossEntropy,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gaussian inputs labelled by the argmax of a random frozen teacher. If some
/// class never occurs the teacher is redrawn from the next sub-seed, up to 100
/// times.
pub fn synth_teacher_student(
    seed: u64,
    k: usize,
    input_dim: usize,
    classes: usize,
    n_samples: usize,
) -> Result<(Dataset, Network)> {
    if classes == 0 || input_dim == 0 {
        return Err(Error::Config("classes and input_dim must be >= 1".into()));
    }
    if k < classes {
        return Err(Error::Config(format!("teacher width {k} must be >= class count {classes}")));
    }
    if n_samples < 10 * k {
        return Err(Error::Config(format!("need at least {} samples for width {k}", 10 * k)));
    }
    for attempt in 0..100u64 {
        let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(attempt);
        let teacher = Network::init(teacher_spec(input_dim, k, classes), sub_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed ^ 0xDA7A);
        let mut inputs = Vec::with_capacity(n_samples);
        let mut labels = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let x = Tensor::vector((0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect())?;
            labels.push(argmax(teacher.predict(&x)?.data()));
            inputs.push(x);
        }
        let data = Dataset::new(inputs, labels, classes, Split::Train)?;
        if data.class_histogram().iter().all(|&c| c > 0) {
            return Ok((data, teacher));
        }
    }
    Err(Error::Domain(format!("no non-degenerate teacher found in 100 attempts for seed {seed}")))
}
