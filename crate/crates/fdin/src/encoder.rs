//! 3D residual encoder: a stack of stages, each a spatially-downsampling
//! residual block followed by a stride-1 one, emitting a feature pyramid
//! for the decoder's skip connections. Temporal extent is preserved
//! throughout (temporal stride 1).

use rand::Rng;

use crate::error::{FdinError, Result};
use crate::nn::{
    join, relu, relu_backward, BatchNorm3d, BnCache, Conv3d, NamedTensor, Param, Phase, TensorMap,
    Tensors, Vol5,
};

/// Residual block: `y = ReLU(shortcut(x) + BN(conv(ReLU(BN(conv(x))))))`.
/// The shortcut is the identity when shapes match, otherwise a strided
/// 1x1x1 projection.
#[derive(Debug, Clone)]
pub struct ResBlock3d {
    pub conv1: Conv3d,
    pub bn1: BatchNorm3d,
    pub conv2: Conv3d,
    pub bn2: BatchNorm3d,
    pub proj: Option<Conv3d>,
}

pub struct ResBlockCache {
    x: Vol5,
    bn1: Option<BnCache>,
    h: Vol5,
    bn2: Option<BnCache>,
    y: Vol5,
}

impl ResBlock3d {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, stride_hw: usize, rng: &mut R) -> Self {
        let proj = if c_in != c_out || stride_hw != 1 {
            Some(Conv3d::new(c_in, c_out, (1, 1, 1), stride_hw, rng))
        } else {
            None
        };
        ResBlock3d {
            conv1: Conv3d::new(c_in, c_out, (3, 3, 3), stride_hw, rng),
            bn1: BatchNorm3d::new(c_out),
            conv2: Conv3d::new(c_out, c_out, (3, 3, 3), 1, rng),
            bn2: BatchNorm3d::new(c_out),
            proj,
        }
    }

    pub fn forward(&mut self, x: &Vol5, phase: Phase) -> (Vol5, ResBlockCache) {
        let (pre1, bn1) = {
            let c = self.conv1.forward(x);
            self.bn1.forward(&c, phase)
        };
        let h = relu(&pre1);
        let (f, bn2) = {
            let c = self.conv2.forward(&h);
            self.bn2.forward(&c, phase)
        };
        let shortcut = match &self.proj {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        let y = relu(&(shortcut + &f));
        (
            y.clone(),
            ResBlockCache {
                x: x.clone(),
                bn1,
                h,
                bn2,
                y,
            },
        )
    }

    pub fn backward(&mut self, cache: &ResBlockCache, gout: &Vol5) -> Vol5 {
        let g = relu_backward(gout, &cache.y);
        // residual branch
        let gf = self
            .bn2
            .backward(cache.bn2.as_ref().expect("training-mode cache"), &g);
        let gh = self.conv2.backward(&cache.h, &gf);
        let gh = relu_backward(&gh, &cache.h);
        let g1 = self
            .bn1
            .backward(cache.bn1.as_ref().expect("training-mode cache"), &gh);
        let dx_res = self.conv1.backward(&cache.x, &g1);
        // shortcut branch
        match &mut self.proj {
            Some(p) => dx_res + p.backward(&cache.x, &g),
            None => dx_res + g,
        }
    }
}

impl Tensors for ResBlock3d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_params(&join(prefix, "proj"), f);
        }
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.conv1.collect_tensors(&join(prefix, "conv1"), out);
        self.bn1.collect_tensors(&join(prefix, "bn1"), out);
        self.conv2.collect_tensors(&join(prefix, "conv2"), out);
        self.bn2.collect_tensors(&join(prefix, "bn2"), out);
        if let Some(p) = &self.proj {
            p.collect_tensors(&join(prefix, "proj"), out);
        }
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        self.conv1.load_tensors(&join(prefix, "conv1"), src)?;
        self.bn1.load_tensors(&join(prefix, "bn1"), src)?;
        self.conv2.load_tensors(&join(prefix, "conv2"), src)?;
        self.bn2.load_tensors(&join(prefix, "bn2"), src)?;
        if let Some(p) = &mut self.proj {
            p.load_tensors(&join(prefix, "proj"), src)?;
        }
        Ok(())
    }
}

struct EncoderStage {
    down: ResBlock3d,
    refine: ResBlock3d,
}

/// Multi-stage pyramid encoder. Stage `i` downsamples spatially by 2 and
/// moves to `channels[i]`, then refines at stride 1.
pub struct Encoder {
    stages: Vec<EncoderStage>,
    in_channels: usize,
}

pub struct EncoderCache {
    stage_caches: Vec<(ResBlockCache, ResBlockCache)>,
}

impl Encoder {
    pub fn new<R: Rng>(in_channels: usize, channels: &[usize], rng: &mut R) -> Self {
        assert!(!channels.is_empty(), "encoder needs at least one stage");
        let mut stages = Vec::with_capacity(channels.len());
        let mut c_prev = in_channels;
        for &c in channels {
            stages.push(EncoderStage {
                down: ResBlock3d::new(c_prev, c, 2, rng),
                refine: ResBlock3d::new(c, c, 1, rng),
            });
            c_prev = c;
        }
        Encoder {
            stages,
            in_channels,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Returns the feature pyramid, shallowest first.
    pub fn forward(&mut self, x: &Vol5, phase: Phase) -> Result<(Vec<Vol5>, EncoderCache)> {
        let (_, _, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(FdinError::ShapeMismatch(format!(
                "encoder expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let div = 1usize << self.stages.len();
        if h % div != 0 || w % div != 0 {
            return Err(FdinError::ShapeMismatch(format!(
                "spatial dims {h}x{w} not divisible by 2^{} for {} encoder stages",
                self.stages.len(),
                self.stages.len()
            )));
        }
        let mut pyramid = Vec::with_capacity(self.stages.len());
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &mut self.stages {
            let (d, dc) = stage.down.forward(&cur, phase);
            let (r, rc) = stage.refine.forward(&d, phase);
            pyramid.push(r.clone());
            caches.push((dc, rc));
            cur = r;
        }
        Ok((
            pyramid,
            EncoderCache {
                stage_caches: caches,
            },
        ))
    }

    /// Backward through the stack. `dpyramid` carries one gradient per
    /// pyramid level (zeros where a level received no external gradient);
    /// returns the gradient with respect to the encoder input.
    pub fn backward(&mut self, cache: &EncoderCache, dpyramid: Vec<Vol5>) -> Vol5 {
        assert_eq!(dpyramid.len(), self.stages.len());
        let mut dpyramid = dpyramid;
        let mut g = dpyramid.pop().expect("at least one stage");
        for i in (0..self.stages.len()).rev() {
            let (dc, rc) = &cache.stage_caches[i];
            let stage = &mut self.stages[i];
            let gd = stage.refine.backward(rc, &g);
            g = stage.down.backward(dc, &gd);
            if i > 0 {
                g += &dpyramid.pop().expect("level gradient");
            }
        }
        g
    }
}

impl Tensors for Encoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage
                .down
                .visit_params(&join(prefix, &format!("stage{i}.down")), f);
            stage
                .refine
                .visit_params(&join(prefix, &format!("stage{i}.refine")), f);
        }
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage
                .down
                .collect_tensors(&join(prefix, &format!("stage{i}.down")), out);
            stage
                .refine
                .collect_tensors(&join(prefix, &format!("stage{i}.refine")), out);
        }
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage
                .down
                .load_tensors(&join(prefix, &format!("stage{i}.down")), src)?;
            stage
                .refine
                .load_tensors(&join(prefix, &format!("stage{i}.refine")), src)?;
        }
        Ok(())
    }
}
