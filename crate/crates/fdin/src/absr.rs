//! Adaptive band selective response: DCT of each input plane, elementwise
//! product with a learnable band-selection matrix, inverse DCT. The matrix
//! is shared across channels and time by default; a per-channel variant
//! sits behind a flag.

use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FdinError, Result};
use crate::nn::{collect_array, join, take_array, NamedTensor, Param, TensorMap, Tensors, Vol5};
use crate::spectral::DctPlan;

/// Learnable band-selection matrix, initialized i.i.d. uniform on [0, 1].
///
/// Deterministic per seed; the seed is independent of the rest of the
/// model so the matrix can be reproduced in isolation.
pub fn band_mask_init(h: usize, w: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..=1.0))
}

#[derive(Debug, Clone)]
pub struct Absr {
    /// `(H, W)`, or `(C, H, W)` in per-channel mode.
    pub mask: Param,
    plan: DctPlan<f32>,
    per_channel: Option<usize>,
}

pub struct AbsrCache {
    /// DCT spectra of every input plane, same shape as the input.
    spectra: Vol5,
}

impl Absr {
    pub fn new(h: usize, w: usize, per_channel: Option<usize>, seed: u64) -> Self {
        let flat = band_mask_init(h, w, seed);
        let mask = match per_channel {
            None => Param::new(flat.into_dyn()),
            Some(c) => {
                // independent draws per channel, continuing the same stream
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let arr = Array3::from_shape_fn((c, h, w), |_| rng.gen_range(0.0..=1.0));
                Param::new(arr.into_dyn())
            }
        };
        Absr {
            mask,
            plan: DctPlan::new(h, w),
            per_channel,
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.plan.shape()
    }

    fn mask_plane(&self, c: usize) -> ArrayView2<'_, f32> {
        match self.per_channel {
            None => self
                .mask
                .value
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2d mask"),
            Some(_) => self
                .mask
                .value
                .view()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("3d mask")
                .index_axis_move(Axis(0), c),
        }
    }

    fn check_resolution(&self, h: usize, w: usize, context: &str) -> Result<()> {
        let (mh, mw) = self.plan.shape();
        if (h, w) != (mh, mw) {
            return Err(FdinError::ResolutionMismatch {
                context: context.to_string(),
                expected_h: mh,
                expected_w: mw,
                got_h: h,
                got_w: w,
            });
        }
        Ok(())
    }

    /// Per plane: `idct2(dct2(plane) .* L)`. Caches the spectra for the
    /// backward pass.
    pub fn forward(&self, x: &Vol5) -> Result<(Vol5, AbsrCache)> {
        let (b, t, c, h, w) = x.dim();
        self.check_resolution(h, w, "absr input")?;
        if let Some(mc) = self.per_channel {
            if mc != c {
                return Err(FdinError::ShapeMismatch(format!(
                    "per-channel band mask has {mc} channels, input has {c}"
                )));
            }
        }
        let mut out = Vol5::zeros(x.raw_dim());
        let mut spectra = Vol5::zeros(x.raw_dim());
        let plane_jobs: Vec<(Vol5, Vol5)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut ob = Vol5::zeros((1, t, c, h, w));
                let mut sb = Vol5::zeros((1, t, c, h, w));
                for ti in 0..t {
                    for ci in 0..c {
                        let plane = x.slice(s![bi, ti, ci, .., ..]);
                        let spec = self.plan.forward(plane);
                        let filtered = &spec * &self.mask_plane(ci);
                        let back = self.plan.inverse(filtered.view());
                        sb.slice_mut(s![0, ti, ci, .., ..]).assign(&spec);
                        ob.slice_mut(s![0, ti, ci, .., ..]).assign(&back);
                    }
                }
                (ob, sb)
            })
            .collect();
        for (bi, (ob, sb)) in plane_jobs.into_iter().enumerate() {
            out.slice_mut(s![bi..bi + 1, .., .., .., ..]).assign(&ob);
            spectra
                .slice_mut(s![bi..bi + 1, .., .., .., ..])
                .assign(&sb);
        }
        Ok((out, AbsrCache { spectra }))
    }

    /// Accumulates the band-mask gradient and returns the input gradient.
    ///
    /// With `out = idct2(dct2(x) .* L)` and upstream gradient `g`:
    /// `dM = dct2(g)` (the adjoint of the orthonormal inverse transform),
    /// `dL += spectrum .* dM`, and `dx = idct2(dM .* L)`.
    pub fn backward(&mut self, cache: &AbsrCache, gout: &Vol5) -> Vol5 {
        let (b, t, c, h, w) = gout.dim();
        let mut dx = Vol5::zeros(gout.raw_dim());
        let partials: Vec<(Vol5, ArrayD<f32>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut dxb = Vol5::zeros((1, t, c, h, w));
                let mut dmask = ArrayD::<f32>::zeros(self.mask.value.raw_dim());
                for ti in 0..t {
                    for ci in 0..c {
                        let g = gout.slice(s![bi, ti, ci, .., ..]);
                        let dm = self.plan.forward(g);
                        let spec = cache.spectra.slice(s![bi, ti, ci, .., ..]);
                        let contrib = &dm * &spec;
                        match self.per_channel {
                            None => {
                                let mut dm2 = dmask
                                    .view_mut()
                                    .into_dimensionality::<ndarray::Ix2>()
                                    .expect("2d mask grad");
                                dm2 += &contrib;
                            }
                            Some(_) => {
                                let mut dm3 = dmask
                                    .view_mut()
                                    .into_dimensionality::<ndarray::Ix3>()
                                    .expect("3d mask grad");
                                let mut slot = dm3.index_axis_mut(Axis(0), ci);
                                slot += &contrib;
                            }
                        }
                        let ds = &dm * &self.mask_plane(ci);
                        let back = self.plan.inverse(ds.view());
                        dxb.slice_mut(s![0, ti, ci, .., ..]).assign(&back);
                    }
                }
                (dxb, dmask)
            })
            .collect();
        for (bi, (dxb, dmask)) in partials.into_iter().enumerate() {
            dx.slice_mut(s![bi..bi + 1, .., .., .., ..]).assign(&dxb);
            self.mask.grad += &dmask;
        }
        dx
    }
}

impl Tensors for Absr {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "band_mask"), &mut self.mask);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        collect_array(out, join(prefix, "band_mask"), &self.mask.value);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        self.mask.value = take_array(src, &join(prefix, "band_mask"), self.mask.value.shape())?;
        Ok(())
    }
}

/// Render the band mask as a min-max normalized grayscale image for
/// inspection. Per-channel masks are averaged first.
pub fn band_mask_to_gray(mask: &ArrayD<f32>) -> Array2<u8> {
    let plane: Array2<f32> = match mask.ndim() {
        2 => mask
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned(),
        3 => {
            let m3 = mask.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            m3.mean_axis(Axis(0)).expect("nonempty mask")
        }
        d => panic!("band mask with {d} dimensions"),
    };
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = if hi > lo { hi - lo } else { 1.0 };
    plane.mapv(|v| (((v - lo) / range) * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array5, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize, usize)) -> Vol5 {
        Array5::from_shape_fn(dims, |_| rng.gen_range(0.0f32..1.0))
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let a = band_mask_init(4, 4, 99);
        let b = band_mask_init(4, 4, 99);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let c = band_mask_init(4, 4, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn paper_scale_mask_shape() {
        let m = band_mask_init(240, 427, 1);
        assert_eq!(m.dim(), (240, 427));
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut absr = Absr::new(16, 24, None, 7);
        absr.mask.value.fill(1.0);
        let x = random_frames(&mut rng, (2, 3, 3, 16, 24));
        let (y, _) = absr.forward(&x).unwrap();
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn all_zeros_mask_gives_zero_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut absr = Absr::new(8, 8, None, 7);
        absr.mask.value.fill(0.0);
        let x = random_frames(&mut rng, (1, 2, 3, 8, 8));
        let (y, _) = absr.forward(&x).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dc_only_mask_gives_channel_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut absr = Absr::new(8, 10, None, 7);
        absr.mask.value.fill(0.0);
        absr.mask.value[IxDyn(&[0, 0])] = 1.0;
        let x = random_frames(&mut rng, (1, 1, 3, 8, 10));
        let (y, _) = absr.forward(&x).unwrap();
        for ci in 0..3 {
            let mean = x.slice(s![0, 0, ci, .., ..]).mean().unwrap();
            for v in y.slice(s![0, 0, ci, .., ..]).iter() {
                assert!((v - mean).abs() < 1e-5, "channel {ci}: {v} vs mean {mean}");
            }
        }
    }

    #[test]
    fn linear_in_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let absr = Absr::new(8, 8, None, 3);
        let x1 = random_frames(&mut rng, (1, 1, 3, 8, 8));
        let x2 = random_frames(&mut rng, (1, 1, 3, 8, 8));
        let (a, b) = (0.7f32, -1.3f32);
        let combo = absr.forward(&(a * &x1 + b * &x2)).unwrap().0;
        let parts = a * &absr.forward(&x1).unwrap().0 + b * &absr.forward(&x2).unwrap().0;
        for (p, q) in combo.iter().zip(parts.iter()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn channels_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let absr = Absr::new(8, 8, None, 3);
        let x = random_frames(&mut rng, (1, 2, 3, 8, 8));
        let (y, _) = absr.forward(&x).unwrap();
        let mut xp = x.clone();
        xp[[0, 0, 0, 3, 3]] += 0.5;
        let (yp, _) = absr.forward(&xp).unwrap();
        for ci in 1..3 {
            let before = y.slice(s![.., .., ci, .., ..]);
            let after = yp.slice(s![.., .., ci, .., ..]);
            assert_eq!(before, after, "channel {ci} changed");
        }
    }

    #[test]
    fn mask_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut absr = Absr::new(8, 8, None, 11);
        let x = random_frames(&mut rng, (1, 2, 3, 8, 8));
        let proj = Array5::from_shape_fn((1, 2, 3, 8, 8), |_| rng.gen_range(-1.0f32..1.0));
        let loss = |a: &Absr, x: &Vol5| -> f64 {
            a.forward(x)
                .unwrap()
                .0
                .iter()
                .zip(proj.iter())
                .map(|(p, q)| *p as f64 * *q as f64)
                .sum()
        };
        let (_, cache) = absr.forward(&x).unwrap();
        let dx = absr.backward(&cache, &proj);
        // strongest mask-gradient entry
        let mut best = (0.0f32, [0usize, 0]);
        let g2 = absr
            .mask
            .grad
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        for ((i, j), v) in g2.indexed_iter() {
            if v.abs() > best.0 {
                best = (v.abs(), [i, j]);
            }
        }
        let idx = IxDyn(&best.1);
        let analytic = absr.mask.grad[&idx] as f64;
        let eps = 1e-3f32;
        let orig = absr.mask.value[&idx];
        absr.mask.value[&idx] = orig + eps;
        let lp = loss(&absr, &x);
        absr.mask.value[&idx] = orig - eps;
        let lm = loss(&absr, &x);
        absr.mask.value[&idx] = orig;
        let numeric = (lp - lm) / (2.0 * eps as f64);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            ((analytic - numeric) / denom).abs() < 1e-3,
            "mask grad: {analytic} vs {numeric}"
        );
        // and an input entry
        let analytic = dx[[0, 1, 1, 4, 4]] as f64;
        let mut xp = x.clone();
        xp[[0, 1, 1, 4, 4]] += eps;
        let lp = loss(&absr, &xp);
        xp[[0, 1, 1, 4, 4]] -= 2.0 * eps;
        let lm = loss(&absr, &xp);
        let numeric = (lp - lm) / (2.0 * eps as f64);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(((analytic - numeric) / denom).abs() < 2e-3);
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let absr = Absr::new(8, 8, None, 3);
        let x = random_frames(&mut rng, (1, 1, 3, 8, 10));
        assert!(absr.forward(&x).is_err());
    }

    #[test]
    fn per_channel_variant_filters_channels_separately() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let mut absr = Absr::new(8, 8, Some(3), 3);
        // channel 0 passes everything, channels 1-2 block everything
        absr.mask.value.fill(0.0);
        for i in 0..8 {
            for j in 0..8 {
                absr.mask.value[IxDyn(&[0, i, j])] = 1.0;
            }
        }
        let x = random_frames(&mut rng, (1, 1, 3, 8, 8));
        let (y, _) = absr.forward(&x).unwrap();
        for (a, b) in x.slice(s![0, 0, 0, .., ..]).iter().zip(y.slice(s![0, 0, 0, .., ..]).iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(y.slice(s![0, 0, 1.., .., ..]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gray_export_is_normalized() {
        let mask = band_mask_init(6, 6, 5).into_dyn() * 0.5;
        let img = band_mask_to_gray(&mask);
        assert_eq!(*img.iter().min().unwrap(), 0);
        assert_eq!(*img.iter().max().unwrap(), 255);
    }
}
