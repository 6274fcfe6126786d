//! Same-padded 3D convolution over (T, H, W), temporal stride fixed to 1,
//! lowered to im2col + gemm.
//!
//! The patch matrix is built in cache-sized column chunks rather than one
//! monolithic buffer; the naive full-size im2col spills to DRAM on the
//! wide shallow layers and dominates the step time. 1x1x1 stride-1
//! convolutions skip the gather entirely and gemm directly on the
//! per-frame `(C, H*W)` views. Batch items run in parallel; per-sample
//! results are merged in index order so repeated runs are bitwise
//! identical.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;
use rayon::prelude::*;

use super::{
    collect_array, conv_out_dim, he_uniform, join, take_array, NamedTensor, Param, TensorMap,
    Tensors, Vol5,
};
use crate::error::Result;

/// Target bytes per im2col chunk; keeps the patch matrix resident in L2.
const CHUNK_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    b: usize,
    t: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.c_in * self.kt * self.kh * self.kw
    }
    fn sample_in(&self) -> usize {
        self.t * self.c_in * self.h * self.w
    }
    fn sample_out(&self) -> usize {
        self.t * self.c_out * self.ho * self.wo
    }
    /// Output rows (t, yo) per chunk, at least one, sized to CHUNK_BYTES.
    fn rows_per_chunk(&self) -> usize {
        let per_row = self.k() * self.wo * 4;
        (CHUNK_BYTES / per_row.max(1)).clamp(1, self.t * self.ho)
    }
    fn is_pointwise(&self) -> bool {
        self.kt == 1 && self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

/// 3D convolution layer with odd kernels and same padding.
#[derive(Debug, Clone)]
pub struct Conv3d {
    /// `(c_out, c_in, kt, kh, kw)`
    pub weight: Param,
    /// `(c_out,)`
    pub bias: Param,
    pub stride_hw: usize,
}

impl Conv3d {
    /// He-uniform initialized convolution. Kernel extents must be odd.
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize, usize),
        stride_hw: usize,
        rng: &mut R,
    ) -> Self {
        let (kt, kh, kw) = kernel;
        assert!(
            kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1,
            "kernels must be odd"
        );
        let fan_in = c_in * kt * kh * kw;
        let weight = Param::new(he_uniform(&[c_out, c_in, kt, kh, kw], fan_in, rng));
        let bias = Param::new(ndarray::ArrayD::zeros(IxDyn(&[c_out])));
        Conv3d {
            weight,
            bias,
            stride_hw,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn dims(&self, x: &Vol5) -> ConvDims {
        let (b, t, c_in, h, w) = x.dim();
        let shape = self.weight.value.shape();
        assert_eq!(
            c_in, shape[1],
            "conv3d input has {c_in} channels, layer expects {}",
            shape[1]
        );
        let (kt, kh, kw) = (shape[2], shape[3], shape[4]);
        ConvDims {
            b,
            t,
            c_in,
            h,
            w,
            c_out: shape[0],
            kt,
            kh,
            kw,
            stride: self.stride_hw,
            ho: conv_out_dim(h, kh, self.stride_hw),
            wo: conv_out_dim(w, kw, self.stride_hw),
        }
    }

    fn weight_mat(&self) -> ArrayView2<'_, f32> {
        let d = self.weight.value.shape();
        let (c_out, k) = (d[0], d[1] * d[2] * d[3] * d[4]);
        self.weight
            .value
            .view()
            .into_shape_with_order((c_out, k))
            .expect("contiguous weight")
    }

    pub fn forward(&self, x: &Vol5) -> Vol5 {
        let d = self.dims(x);
        let w_mat = self.weight_mat();
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        let xs = x.as_slice().expect("standard layout input");
        let mut out = Vol5::zeros((d.b, d.t, d.c_out, d.ho, d.wo));
        {
            let out_slice = out.as_slice_mut().expect("standard layout output");
            out_slice
                .par_chunks_mut(d.sample_out())
                .zip(xs.par_chunks(d.sample_in()))
                .for_each(|(ob, xb)| forward_sample(xb, ob, &w_mat, bias, &d));
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Vol5, gout: &Vol5) -> Vol5 {
        let d = self.dims(x);
        assert_eq!(gout.dim(), (d.b, d.t, d.c_out, d.ho, d.wo));
        let w_mat = self.weight_mat();
        let xs = x.as_slice().expect("standard layout input");
        let gs = gout.as_slice().expect("standard layout gradient");
        let mut dx = Vol5::zeros((d.b, d.t, d.c_in, d.h, d.w));
        let per_sample: Vec<(Array2<f32>, Array1<f32>)> = {
            let dx_slice = dx.as_slice_mut().expect("standard layout dx");
            dx_slice
                .par_chunks_mut(d.sample_in())
                .zip(xs.par_chunks(d.sample_in()))
                .zip(gs.par_chunks(d.sample_out()))
                .map(|((dxb, xb), gb)| backward_sample(xb, gb, dxb, &w_mat, &d))
                .collect()
        };
        let mut wgrad = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((d.c_out, d.k()))
            .expect("contiguous weight grad");
        let bgrad = self.bias.grad.as_slice_mut().expect("contiguous bias grad");
        for (dw, db) in per_sample {
            wgrad += &dw;
            for (acc, v) in bgrad.iter_mut().zip(db.iter()) {
                *acc += v;
            }
        }
        dx
    }
}

fn forward_sample(xb: &[f32], ob: &mut [f32], w_mat: &ArrayView2<f32>, bias: &[f32], d: &ConvDims) {
    if d.is_pointwise() {
        let plane = d.h * d.w;
        for to in 0..d.t {
            let x_t = mat_view(&xb[to * d.c_in * plane..], d.c_in, plane);
            let mut o_t = mat_view_mut(&mut ob[to * d.c_out * plane..], d.c_out, plane);
            general_mat_mul(1.0, w_mat, &x_t, 0.0, &mut o_t);
        }
        add_bias(ob, bias, d);
        return;
    }
    let rows = d.rows_per_chunk();
    let span = rows * d.wo;
    let mut cols = Array2::<f32>::zeros((d.k(), span));
    let mut out_mat = Array2::<f32>::zeros((d.c_out, span));
    let total_rows = d.t * d.ho;
    let mut row0 = 0;
    while row0 < total_rows {
        let nrows = rows.min(total_rows - row0);
        let width = nrows * d.wo;
        im2col_chunk(xb, d, row0, nrows, &mut cols.view_mut());
        {
            let c = cols.slice(ndarray::s![.., 0..width]);
            let mut o = out_mat.slice_mut(ndarray::s![.., 0..width]);
            general_mat_mul(1.0, w_mat, &c, 0.0, &mut o);
        }
        scatter_chunk(out_mat.as_slice().unwrap(), span, bias, ob, d, row0, nrows);
        row0 += nrows;
    }
}

fn backward_sample(
    xb: &[f32],
    gb: &[f32],
    dxb: &mut [f32],
    w_mat: &ArrayView2<f32>,
    d: &ConvDims,
) -> (Array2<f32>, Array1<f32>) {
    let mut dw = Array2::<f32>::zeros((d.c_out, d.k()));
    let mut db = Array1::<f32>::zeros(d.c_out);
    if d.is_pointwise() {
        let plane = d.h * d.w;
        for to in 0..d.t {
            let x_t = mat_view(&xb[to * d.c_in * plane..], d.c_in, plane);
            let g_t = mat_view(&gb[to * d.c_out * plane..], d.c_out, plane);
            let mut dx_t = mat_view_mut(&mut dxb[to * d.c_in * plane..], d.c_in, plane);
            general_mat_mul(1.0, &g_t, &x_t.t(), 1.0, &mut dw);
            general_mat_mul(1.0, &w_mat.t(), &g_t, 0.0, &mut dx_t);
            for (co, acc) in db.iter_mut().enumerate() {
                let row = &gb[(to * d.c_out + co) * plane..][..plane];
                *acc += row.iter().sum::<f32>();
            }
        }
        return (dw, db);
    }
    let rows = d.rows_per_chunk();
    let span = rows * d.wo;
    let mut cols = Array2::<f32>::zeros((d.k(), span));
    let mut gmat = Array2::<f32>::zeros((d.c_out, span));
    let mut dcols = Array2::<f32>::zeros((d.k(), span));
    let total_rows = d.t * d.ho;
    let mut row0 = 0;
    while row0 < total_rows {
        let nrows = rows.min(total_rows - row0);
        let width = nrows * d.wo;
        gather_chunk(gb, d, row0, nrows, &mut gmat.view_mut());
        im2col_chunk(xb, d, row0, nrows, &mut cols.view_mut());
        {
            let g = gmat.slice(ndarray::s![.., 0..width]);
            let c = cols.slice(ndarray::s![.., 0..width]);
            let mut dc = dcols.slice_mut(ndarray::s![.., 0..width]);
            general_mat_mul(1.0, &g, &c.t(), 1.0, &mut dw);
            general_mat_mul(1.0, &w_mat.t(), &g, 0.0, &mut dc);
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += g.row(co).sum();
            }
        }
        col2im_add_chunk(dcols.as_slice().unwrap(), span, dxb, d, row0, nrows);
        row0 += nrows;
    }
    (dw, db)
}

fn mat_view(data: &[f32], rows: usize, cols: usize) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((rows, cols), &data[..rows * cols]).expect("contiguous view")
}

fn mat_view_mut(data: &mut [f32], rows: usize, cols: usize) -> ArrayViewMut2<'_, f32> {
    ArrayViewMut2::from_shape((rows, cols), &mut data[..rows * cols]).expect("contiguous view")
}

fn add_bias(ob: &mut [f32], bias: &[f32], d: &ConvDims) {
    let plane = d.ho * d.wo;
    for to in 0..d.t {
        for co in 0..d.c_out {
            let b = bias[co];
            if b != 0.0 {
                for v in &mut ob[(to * d.c_out + co) * plane..][..plane] {
                    *v += b;
                }
            }
        }
    }
}

/// Fill `cols[.., 0..nrows*wo]` with the patches for output rows
/// `row0..row0+nrows` (a row is one (t, yo) pair). Writes every slot, so the
/// buffer needs no pre-zeroing.
fn im2col_chunk(xb: &[f32], d: &ConvDims, row0: usize, nrows: usize, cols: &mut ArrayViewMut2<f32>) {
    let span = cols.dim().1;
    let cs = cols.as_slice_mut().expect("contiguous cols");
    let (pt, ph, pw) = (d.kt / 2, d.kh / 2, d.kw / 2);
    for ci in 0..d.c_in {
        for dt in 0..d.kt {
            for dh in 0..d.kh {
                for dw in 0..d.kw {
                    let r = ((ci * d.kt + dt) * d.kh + dh) * d.kw + dw;
                    let row = &mut cs[r * span..r * span + nrows * d.wo];
                    for ri in 0..nrows {
                        let (to, yo) = ((row0 + ri) / d.ho, (row0 + ri) % d.ho);
                        let dst = &mut row[ri * d.wo..(ri + 1) * d.wo];
                        let ti = to + dt;
                        let yi = yo * d.stride + dh;
                        if ti < pt || ti >= d.t + pt || yi < ph || yi >= d.h + ph {
                            dst.fill(0.0);
                            continue;
                        }
                        let src =
                            &xb[(((ti - pt) * d.c_in + ci) * d.h + (yi - ph)) * d.w..][..d.w];
                        if d.stride == 1 {
                            let lo = pw.saturating_sub(dw);
                            let hi = (d.w + pw).saturating_sub(dw).min(d.wo);
                            dst[..lo.min(d.wo)].fill(0.0);
                            if lo < hi {
                                dst[lo..hi].copy_from_slice(&src[lo + dw - pw..hi + dw - pw]);
                            }
                            dst[hi.max(lo.min(d.wo))..].fill(0.0);
                        } else {
                            for (xo, slot) in dst.iter_mut().enumerate() {
                                let xi = xo * d.stride + dw;
                                *slot = if xi >= pw && xi < d.w + pw {
                                    src[xi - pw]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the chunk of `dcols` back into the input gradient.
fn col2im_add_chunk(
    dcols: &[f32],
    span: usize,
    dxb: &mut [f32],
    d: &ConvDims,
    row0: usize,
    nrows: usize,
) {
    let (pt, ph, pw) = (d.kt / 2, d.kh / 2, d.kw / 2);
    for ci in 0..d.c_in {
        for dt in 0..d.kt {
            for dh in 0..d.kh {
                for dw in 0..d.kw {
                    let r = ((ci * d.kt + dt) * d.kh + dh) * d.kw + dw;
                    let row = &dcols[r * span..r * span + nrows * d.wo];
                    for ri in 0..nrows {
                        let (to, yo) = ((row0 + ri) / d.ho, (row0 + ri) % d.ho);
                        let ti = to + dt;
                        let yi = yo * d.stride + dh;
                        if ti < pt || ti >= d.t + pt || yi < ph || yi >= d.h + ph {
                            continue;
                        }
                        let dst =
                            &mut dxb[(((ti - pt) * d.c_in + ci) * d.h + (yi - ph)) * d.w..][..d.w];
                        let src = &row[ri * d.wo..(ri + 1) * d.wo];
                        for (xo, g) in src.iter().enumerate() {
                            let xi = xo * d.stride + dw;
                            if xi >= pw && xi < d.w + pw {
                                dst[xi - pw] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Write the gemm chunk `(c_out, nrows*wo)` into the sample's
/// `(t, c_out, ho, wo)` layout, adding the bias.
fn scatter_chunk(
    out_mat: &[f32],
    span: usize,
    bias: &[f32],
    ob: &mut [f32],
    d: &ConvDims,
    row0: usize,
    nrows: usize,
) {
    for co in 0..d.c_out {
        let row = &out_mat[co * span..co * span + nrows * d.wo];
        let b = bias[co];
        for ri in 0..nrows {
            let (to, yo) = ((row0 + ri) / d.ho, (row0 + ri) % d.ho);
            let src = &row[ri * d.wo..(ri + 1) * d.wo];
            let dst = &mut ob[((to * d.c_out + co) * d.ho + yo) * d.wo..][..d.wo];
            for (o, v) in dst.iter_mut().zip(src.iter()) {
                *o = v + b;
            }
        }
    }
}

/// Inverse of [`scatter_chunk`] without bias: read the sample's output
/// gradient chunk into `(c_out, nrows*wo)` form.
fn gather_chunk(gb: &[f32], d: &ConvDims, row0: usize, nrows: usize, gmat: &mut ArrayViewMut2<f32>) {
    let span = gmat.dim().1;
    let gs = gmat.as_slice_mut().expect("contiguous gmat");
    for co in 0..d.c_out {
        let row = &mut gs[co * span..co * span + nrows * d.wo];
        for ri in 0..nrows {
            let (to, yo) = ((row0 + ri) / d.ho, (row0 + ri) % d.ho);
            let src = &gb[((to * d.c_out + co) * d.ho + yo) * d.wo..][..d.wo];
            row[ri * d.wo..(ri + 1) * d.wo].copy_from_slice(src);
        }
    }
}

impl Tensors for Conv3d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        collect_array(out, join(prefix, "weight"), &self.weight.value);
        collect_array(out, join(prefix, "bias"), &self.bias.value);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        self.weight.value = take_array(src, &join(prefix, "weight"), self.weight.value.shape())?;
        self.bias.value = take_array(src, &join(prefix, "bias"), self.bias.value.shape())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-nested-loop 3D convolution, the independent oracle.
    fn direct_conv3d(x: &Vol5, weight: &ndarray::ArrayD<f32>, bias: &[f32], stride: usize) -> Vol5 {
        let (b, t, c_in, h, w) = x.dim();
        let ws = weight.shape();
        let (c_out, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
        let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
        let ho = conv_out_dim(h, kh, stride);
        let wo = conv_out_dim(w, kw, stride);
        let mut out = Array5::<f32>::zeros((b, t, c_out, ho, wo));
        for bi in 0..b {
            for to in 0..t {
                for co in 0..c_out {
                    for yo in 0..ho {
                        for xo in 0..wo {
                            let mut acc = bias[co];
                            for ci in 0..c_in {
                                for dt in 0..kt {
                                    for dh in 0..kh {
                                        for dw in 0..kw {
                                            let ti = to as isize + dt as isize - pt as isize;
                                            let yi = (yo * stride + dh) as isize - ph as isize;
                                            let xi = (xo * stride + dw) as isize - pw as isize;
                                            if ti < 0
                                                || ti >= t as isize
                                                || yi < 0
                                                || yi >= h as isize
                                                || xi < 0
                                                || xi >= w as isize
                                            {
                                                continue;
                                            }
                                            acc += x
                                                [[bi, ti as usize, ci, yi as usize, xi as usize]]
                                                * weight[[co, ci, dt, dh, dw]];
                                        }
                                    }
                                }
                            }
                            out[[bi, to, co, yo, xo]] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random_vol(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize, usize)) -> Vol5 {
        Array5::from_shape_fn(dims, |_| rng.gen_range(-1.0f32..1.0))
    }

    #[test]
    fn matches_direct_oracle_stride1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv3d::new(4, 3, (3, 3, 3), 1, &mut rng);
        let x = random_vol(&mut rng, (2, 6, 4, 6, 6));
        let fast = conv.forward(&x);
        let slow = direct_conv3d(
            &x,
            &conv.weight.value,
            conv.bias.value.as_slice().unwrap(),
            1,
        );
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_direct_oracle_other_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (kernel, stride, hw) in [
            ((3, 3, 3), 2, (7, 9)),
            ((1, 1, 1), 1, (5, 5)),
            ((1, 1, 1), 2, (6, 7)),
            ((3, 3, 3), 1, (1, 5)),
            ((3, 1, 3), 1, (4, 4)),
        ] {
            let conv = Conv3d::new(3, 5, kernel, stride, &mut rng);
            let x = random_vol(&mut rng, (2, 4, 3, hw.0, hw.1));
            let fast = conv.forward(&x);
            let slow = direct_conv3d(
                &x,
                &conv.weight.value,
                conv.bias.value.as_slice().unwrap(),
                stride,
            );
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!(
                    (a - b).abs() < 1e-5,
                    "kernel {kernel:?} stride {stride}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn chunking_agrees_with_single_chunk() {
        // Shapes chosen so t*ho spans several chunks even at small K.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = Conv3d::new(1, 1, (3, 3, 3), 1, &mut rng);
        let x = random_vol(&mut rng, (1, 3, 1, 200, 64));
        let fast = conv.forward(&x);
        let slow = direct_conv3d(
            &x,
            &conv.weight.value,
            conv.bias.value.as_slice().unwrap(),
            1,
        );
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn same_padding_preserves_shape_at_stride1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::new(2, 2, (3, 3, 3), 1, &mut rng);
        let x = random_vol(&mut rng, (1, 5, 2, 8, 11));
        assert_eq!(conv.forward(&x).dim(), (1, 5, 2, 8, 11));
    }

    /// Index of the largest-magnitude entry; checking there keeps the
    /// finite-difference quotient well above f32 rounding noise.
    fn argmax_abs(arr: &ndarray::ArrayD<f32>) -> Vec<usize> {
        let ndim = arr.ndim();
        let mut best = (0.0f32, vec![0; ndim]);
        for (idx, v) in arr.indexed_iter() {
            if v.abs() > best.0 {
                best = (v.abs(), (0..ndim).map(|d| idx[d]).collect());
            }
        }
        best.1
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (kernel, stride) in [((3, 3, 3), 1), ((3, 3, 3), 2), ((1, 1, 1), 1)] {
            let mut conv = Conv3d::new(2, 3, kernel, stride, &mut rng);
            let x = random_vol(&mut rng, (2, 2, 2, 4, 4));
            let y = conv.forward(&x);
            let proj = random_vol(&mut rng, y.dim());
            let loss = |c: &Conv3d, x: &Vol5| -> f64 {
                c.forward(x)
                    .iter()
                    .zip(proj.iter())
                    .map(|(a, b)| (*a as f64) * (*b as f64))
                    .sum()
            };
            let gx = conv.backward(&x, &proj);
            let eps = 1e-3f32;
            let check = |analytic: f64, numeric: f64, what: &str| {
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-3,
                    "{what} kernel {kernel:?} stride {stride}: {analytic} vs {numeric}"
                );
            };
            // weight entry with the largest gradient
            let idx = argmax_abs(&conv.weight.grad);
            let analytic = conv.weight.grad[IxDyn(&idx)] as f64;
            let orig = conv.weight.value[IxDyn(&idx)];
            conv.weight.value[IxDyn(&idx)] = orig + eps;
            let lp = loss(&conv, &x);
            conv.weight.value[IxDyn(&idx)] = orig - eps;
            let lm = loss(&conv, &x);
            conv.weight.value[IxDyn(&idx)] = orig;
            check(analytic, (lp - lm) / (2.0 * eps as f64), "weight");
            // bias entry
            let bidx = argmax_abs(&conv.bias.grad);
            let analytic = conv.bias.grad[IxDyn(&bidx)] as f64;
            let orig = conv.bias.value[IxDyn(&bidx)];
            conv.bias.value[IxDyn(&bidx)] = orig + eps;
            let lp = loss(&conv, &x);
            conv.bias.value[IxDyn(&bidx)] = orig - eps;
            let lm = loss(&conv, &x);
            conv.bias.value[IxDyn(&bidx)] = orig;
            check(analytic, (lp - lm) / (2.0 * eps as f64), "bias");
            // input entry with the largest gradient
            let xi: Vec<usize> = {
                let mut best = (0.0f32, [0usize; 5]);
                for (idx, v) in gx.indexed_iter() {
                    if v.abs() > best.0 {
                        best = (v.abs(), [idx.0, idx.1, idx.2, idx.3, idx.4]);
                    }
                }
                best.1.to_vec()
            };
            let analytic = gx[[xi[0], xi[1], xi[2], xi[3], xi[4]]] as f64;
            let mut xp = x.clone();
            xp[[xi[0], xi[1], xi[2], xi[3], xi[4]]] += eps;
            let lp = loss(&conv, &xp);
            xp[[xi[0], xi[1], xi[2], xi[3], xi[4]]] -= 2.0 * eps;
            let lm = loss(&conv, &xp);
            check(analytic, (lp - lm) / (2.0 * eps as f64), "input");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv3d::new(3, 4, (3, 3, 3), 1, &mut rng);
        let x = random_vol(&mut rng, (3, 4, 3, 9, 9));
        let a = conv.forward(&x);
        let b = conv.forward(&x);
        assert_eq!(a, b);
    }
}
