//! Composite conv3d -> batchnorm -> ReLU block, the workhorse of the
//! encoder stem, the local Fourier unit, and the decoder merge stages.

use rand::Rng;

use super::{
    join, relu, relu_backward, BatchNorm3d, BnCache, Conv3d, NamedTensor, Param, Phase, TensorMap,
    Tensors, Vol5,
};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
}

pub struct ConvBnReluCache {
    x: Vol5,
    bn: Option<BnCache>,
    y: Vol5,
}

impl ConvBnRelu {
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize, usize),
        stride_hw: usize,
        rng: &mut R,
    ) -> Self {
        ConvBnRelu {
            conv: Conv3d::new(c_in, c_out, kernel, stride_hw, rng),
            bn: BatchNorm3d::new(c_out),
        }
    }

    pub fn forward(&mut self, x: &Vol5, phase: Phase) -> (Vol5, ConvBnReluCache) {
        let pre = self.conv.forward(x);
        let (post_bn, bn_cache) = self.bn.forward(&pre, phase);
        let y = relu(&post_bn);
        (
            y.clone(),
            ConvBnReluCache {
                x: x.clone(),
                bn: bn_cache,
                y,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvBnReluCache, gout: &Vol5) -> Vol5 {
        let g = relu_backward(gout, &cache.y);
        let g = self
            .bn
            .backward(cache.bn.as_ref().expect("training-mode cache"), &g);
        self.conv.backward(&cache.x, &g)
    }
}

impl Tensors for ConvBnRelu {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.conv.collect_tensors(&join(prefix, "conv"), out);
        self.bn.collect_tensors(&join(prefix, "bn"), out);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        self.conv.load_tensors(&join(prefix, "conv"), src)?;
        self.bn.load_tensors(&join(prefix, "bn"), src)
    }
}
