use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::rng_stream;
use crate::{Error, Result};

/// Widths of the head: `input → hidden → hidden` LSTM, then the two ANNs
/// `hidden → hidden → hidden → {outputs, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: usize,
    pub outputs: usize,
}

/// A named row-major block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

// Indices into the layout, in storage order.
pub(crate) const LSTM_WX: [usize; 2] = [0, 3];
pub(crate) const LSTM_WH: [usize; 2] = [1, 4];
pub(crate) const LSTM_B: [usize; 2] = [2, 5];
pub(crate) const PANN: usize = 6;
pub(crate) const AANN: usize = 12;

fn layout(shape: NetworkShape) -> Vec<TensorSpec> {
    let (k, h, m) = (shape.input, shape.hidden, shape.outputs);
    let dims: Vec<(String, usize, usize)> = vec![
        ("lstm0.w_x".into(), 4 * h, k),
        ("lstm0.w_h".into(), 4 * h, h),
        ("lstm0.b".into(), 4 * h, 1),
        ("lstm1.w_x".into(), 4 * h, h),
        ("lstm1.w_h".into(), 4 * h, h),
        ("lstm1.b".into(), 4 * h, 1),
        ("p_ann.w0".into(), h, h),
        ("p_ann.b0".into(), h, 1),
        ("p_ann.w1".into(), h, h),
        ("p_ann.b1".into(), h, 1),
        ("p_ann.w2".into(), m, h),
        ("p_ann.b2".into(), m, 1),
        ("a_ann.w0".into(), h, h),
        ("a_ann.b0".into(), h, 1),
        ("a_ann.w1".into(), h, h),
        ("a_ann.b1".into(), h, 1),
        ("a_ann.w2".into(), 1, h),
        ("a_ann.b2".into(), 1, 1),
    ];
    let mut offset = 0;
    dims.into_iter()
        .map(|(name, rows, cols)| {
            let spec = TensorSpec { name, rows, cols, offset };
            offset += rows * cols;
            spec
        })
        .collect()
}

/// All head parameters in one flat vector with a named layout.
///
/// LSTM gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    shape: NetworkShape,
    layout: Vec<TensorSpec>,
    params: Vec<f64>,
}

impl NetworkWeights {
    pub fn zeros(shape: NetworkShape) -> Self {
        let layout = layout(shape);
        let n = layout.last().map(|s| s.offset + s.len()).unwrap_or(0);
        Self {
            shape,
            layout,
            params: vec![0.0; n],
        }
    }

    /// Uniform in `±1/√fan_in`, forget-gate biases set to 1.
    pub fn init(shape: NetworkShape, seed: u64, stream: u64) -> Self {
        let mut w = Self::zeros(shape);
        let mut rng = rng_stream(seed, stream);
        let h = shape.hidden;
        for i in 0..w.layout.len() {
            let spec = w.layout[i].clone();
            let fan_in = if spec.name.starts_with("lstm") && spec.name.ends_with(".b") {
                spec.rows / 4 + if spec.name.starts_with("lstm0") { shape.input } else { h }
            } else if spec.cols == 1 {
                // Dense bias: fan-in of the weight matrix just before it.
                w.layout[i - 1].cols
            } else {
                spec.cols
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut w.params[spec.range()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        for layer in 0..2 {
            let spec = w.layout[LSTM_B[layer]].clone();
            for v in &mut w.params[spec.offset + h..spec.offset + 2 * h] {
                *v = 1.0;
            }
        }
        w
    }

    pub fn from_flat(shape: NetworkShape, params: Vec<f64>) -> Result<Self> {
        let mut w = Self::zeros(shape);
        if params.len() != w.params.len() {
            return Err(Error::dims("network parameter count", w.params.len(), params.len()));
        }
        w.params = params;
        Ok(w)
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub(crate) fn block(&self, idx: usize) -> &[f64] {
        &self.params[self.layout[idx].range()]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|s| s.name == name)?.range();
        Some(&mut self.params[range])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}
