//! Batch normalization over the joint (batch, T, H, W) axes per channel.

use ndarray::{Array1, IxDyn};

use super::{
    collect_array, join, take_array, NamedTensor, Param, Phase, TensorMap, Tensors, Vol5,
};
use crate::error::{FdinError, Result};

/// Cached quantities from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vol5,
    inv_std: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            gamma: Param::new(ndarray::ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ndarray::ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Per-channel batch mean and biased variance, accumulated in f64.
    fn batch_stats(&self, x: &Vol5) -> (Array1<f32>, Array1<f32>) {
        let (b, t, c, h, w) = x.dim();
        let plane = h * w;
        let xs = x.as_slice().expect("standard layout");
        let mut sums = vec![0.0f64; c];
        let mut sqs = vec![0.0f64; c];
        for bt in 0..b * t {
            let block = &xs[bt * c * plane..(bt + 1) * c * plane];
            for ci in 0..c {
                let row = &block[ci * plane..(ci + 1) * plane];
                let mut s = 0.0f64;
                let mut q = 0.0f64;
                for &v in row {
                    s += v as f64;
                    q += (v as f64) * (v as f64);
                }
                sums[ci] += s;
                sqs[ci] += q;
            }
        }
        let n = (b * t * plane) as f64;
        let mean = Array1::from_iter(sums.iter().map(|s| (s / n) as f32));
        let var = Array1::from_iter(
            sums.iter()
                .zip(sqs.iter())
                .map(|(s, q)| ((q / n) - (s / n) * (s / n)).max(0.0) as f32),
        );
        (mean, var)
    }

    /// Normalize with the given per-channel statistics.
    fn apply(&self, x: &Vol5, mean: &Array1<f32>, inv_std: &Array1<f32>) -> (Vol5, Vol5) {
        let (b, t, c, h, w) = x.dim();
        let plane = h * w;
        let gamma = self.gamma.value.as_slice().unwrap();
        let beta = self.beta.value.as_slice().unwrap();
        let xs = x.as_slice().unwrap();
        let mut x_hat = Vol5::zeros(x.raw_dim());
        let mut y = Vol5::zeros(x.raw_dim());
        {
            let hs = x_hat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for bt in 0..b * t {
                for ci in 0..c {
                    let off = (bt * c + ci) * plane;
                    let (m, is, g, be) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                    for i in off..off + plane {
                        let xh = (xs[i] - m) * is;
                        hs[i] = xh;
                        ys[i] = g * xh + be;
                    }
                }
            }
        }
        (y, x_hat)
    }

    /// Training mode computes batch statistics, updates the running ones,
    /// and returns a cache for [`BatchNorm3d::backward`]; eval mode uses the
    /// running statistics and returns no cache.
    pub fn forward(&mut self, x: &Vol5, phase: Phase) -> (Vol5, Option<BnCache>) {
        match phase {
            Phase::Train => {
                let (mean, var) = self.batch_stats(x);
                let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                let (y, x_hat) = self.apply(x, &mean, &inv_std);
                let m = self.momentum;
                self.running_mean
                    .zip_mut_with(&mean, |r, &b| *r = (1.0 - m) * *r + m * b);
                self.running_var
                    .zip_mut_with(&var, |r, &b| *r = (1.0 - m) * *r + m * b);
                (y, Some(BnCache { x_hat, inv_std }))
            }
            Phase::Eval => {
                let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                let (y, _) = self.apply(x, &self.running_mean.clone(), &inv_std);
                (y, None)
            }
        }
    }

    /// Training-mode backward; accumulates gamma/beta gradients and returns
    /// the input gradient.
    pub fn backward(&mut self, cache: &BnCache, gout: &Vol5) -> Vol5 {
        let (b, t, c, h, w) = gout.dim();
        let plane = h * w;
        let n = (b * t * plane) as f64;
        let gs = gout.as_slice().unwrap();
        let hs = cache.x_hat.as_slice().unwrap();
        // per-channel reductions
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gh = vec![0.0f64; c];
        for bt in 0..b * t {
            for ci in 0..c {
                let off = (bt * c + ci) * plane;
                let mut sg = 0.0f64;
                let mut sgh = 0.0f64;
                for i in off..off + plane {
                    sg += gs[i] as f64;
                    sgh += gs[i] as f64 * hs[i] as f64;
                }
                sum_g[ci] += sg;
                sum_gh[ci] += sgh;
            }
        }
        {
            let dgamma = self.gamma.grad.as_slice_mut().unwrap();
            let dbeta = self.beta.grad.as_slice_mut().unwrap();
            for ci in 0..c {
                dgamma[ci] += sum_gh[ci] as f32;
                dbeta[ci] += sum_g[ci] as f32;
            }
        }
        let gamma = self.gamma.value.as_slice().unwrap();
        let mut dx = Vol5::zeros(gout.raw_dim());
        {
            let dxs = dx.as_slice_mut().unwrap();
            for bt in 0..b * t {
                for ci in 0..c {
                    let off = (bt * c + ci) * plane;
                    let scale = gamma[ci] * cache.inv_std[ci];
                    let mg = (sum_g[ci] / n) as f32;
                    let mgh = (sum_gh[ci] / n) as f32;
                    for i in off..off + plane {
                        dxs[i] = scale * (gs[i] - mg - hs[i] * mgh);
                    }
                }
            }
        }
        dx
    }
}

impl Tensors for BatchNorm3d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        collect_array(out, join(prefix, "gamma"), &self.gamma.value);
        collect_array(out, join(prefix, "beta"), &self.beta.value);
        out.push(NamedTensor {
            name: join(prefix, "running_mean"),
            shape: vec![self.running_mean.len()],
            data: self.running_mean.to_vec(),
        });
        out.push(NamedTensor {
            name: join(prefix, "running_var"),
            shape: vec![self.running_var.len()],
            data: self.running_var.to_vec(),
        });
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        let c = self.channels();
        self.gamma.value = take_array(src, &join(prefix, "gamma"), &[c])?;
        self.beta.value = take_array(src, &join(prefix, "beta"), &[c])?;
        let rm = take_array(src, &join(prefix, "running_mean"), &[c])?;
        let rv = take_array(src, &join(prefix, "running_var"), &[c])?;
        self.running_mean = Array1::from_iter(rm.iter().copied());
        self.running_var = Array1::from_iter(rv.iter().copied());
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(FdinError::Checkpoint(format!(
                "negative running variance in {prefix}"
            )));
        }
        Ok(())
    }
}
