//! Hand-written neural-network primitives: 3D convolution, batch
//! normalization, elementwise ops, and the Adam optimizer.
//!
//! Every layer exposes an explicit `forward` and `backward`; there is no
//! tape. Batched tensors are `Array5<f32>` with axes `(B, T, C, H, W)` and
//! standard (row-major) layout. Backward passes accumulate into each
//! parameter's `grad` buffer and return the gradient with respect to the
//! layer input, so gradients can be checked parameter-by-parameter against
//! finite differences.

mod adam;
mod batchnorm;
mod blocks;
mod conv3d;
mod ops;

pub use adam::Adam;
pub use blocks::{ConvBnRelu, ConvBnReluCache};
pub use batchnorm::{BatchNorm3d, BnCache};
pub use conv3d::Conv3d;
pub use ops::{concat_channels, relu, relu_backward, split_channels_at, upsample2x, upsample2x_backward};

use std::collections::HashMap;

use ndarray::{Array5, ArrayD, IxDyn};
use rand::Rng;

use crate::error::{FdinError, Result};

/// Batched feature volume: `(B, T, C, H, W)`.
pub type Vol5 = Array5<f32>;

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// L2 norm of the accumulated gradient.
    pub fn grad_norm(&self) -> f32 {
        self.grad.iter().map(|g| g * g).sum::<f32>().sqrt()
    }
}

/// Phase switch for layers whose behavior differs between training and
/// inference (batch normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// One serialized tensor of a checkpoint.
#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Staging map used when loading a checkpoint; entries are removed as they
/// are consumed so leftovers can be reported.
pub type TensorMap = HashMap<String, (Vec<usize>, Vec<f32>)>;

/// Walks a layer's tensors for optimization and serialization.
pub trait Tensors {
    /// Visit every learnable parameter, depth-first, in declaration order.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    /// Collect parameters plus non-learnable state (e.g. batch-norm running
    /// statistics) for checkpointing.
    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>);

    /// Restore tensors collected by [`Tensors::collect_tensors`].
    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn collect_array(out: &mut Vec<NamedTensor>, name: String, arr: &ArrayD<f32>) {
    out.push(NamedTensor {
        name,
        shape: arr.shape().to_vec(),
        data: arr.iter().copied().collect(),
    });
}

pub(crate) fn take_array(src: &mut TensorMap, name: &str, expect: &[usize]) -> Result<ArrayD<f32>> {
    let (shape, data) = src
        .remove(name)
        .ok_or_else(|| FdinError::Checkpoint(format!("missing tensor {name}")))?;
    if shape != expect {
        return Err(FdinError::Checkpoint(format!(
            "tensor {name} has shape {shape:?}, expected {expect:?}"
        )));
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| FdinError::Checkpoint(format!("tensor {name}: {e}")))
}

/// He-uniform initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub(crate) fn he_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f32> {
    let bound = (6.0f32 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product agree")
}

/// Spatial output extent for a same-padded convolution with odd kernel `k`.
pub(crate) fn conv_out_dim(n: usize, k: usize, stride: usize) -> usize {
    debug_assert!(k % 2 == 1);
    // padding (k-1)/2 on both sides: n + 2p - k = n - 1
    (n - 1) / stride + 1
}
