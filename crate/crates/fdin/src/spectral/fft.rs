//! Real-input 2D FFT over the (H, W) axes with orthonormal scaling and a
//! half-spectrum layout along the last axis.
//!
//! Because the half-spectrum drops Hermitian-redundant columns, the inverse
//! transform is *not* the adjoint of the forward one: gradients need the
//! dedicated [`rfft2_adjoint`] / [`irfft2_adjoint`] maps, which differ from
//! the inverses by the column multiplicity weights (2 for columns stored
//! once but representing a conjugate pair, 1 for the self-conjugate
//! columns `k = 0` and, for even W, `k = W/2`).

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, NdFloat};
use num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{FdinError, Result};

/// Scalar types the FFT runs on; supplies a per-thread plan cache.
pub trait FftScalar: NdFloat + FftNum {
    fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>>;
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

impl FftScalar for f32 {
    fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
        PLANNER_F32.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(len)
            } else {
                p.plan_fft_forward(len)
            }
        })
    }
}

impl FftScalar for f64 {
    fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        PLANNER_F64.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(len)
            } else {
                p.plan_fft_forward(len)
            }
        })
    }
}

/// Number of stored columns of the half-spectrum for a plane of width `w`.
pub fn spectrum_width(w: usize) -> usize {
    w / 2 + 1
}

/// Unnormalized full 2D FFT, rows then columns, in place.
fn fft2_inplace<T: FftScalar>(data: &mut Array2<Complex<T>>, inverse: bool) {
    let (h, w) = data.dim();
    let row_plan = T::plan(w, inverse);
    for mut row in data.rows_mut() {
        row_plan.process(row.as_slice_mut().expect("standard layout row"));
    }
    let col_plan = T::plan(h, inverse);
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[[y, x]];
        }
        col_plan.process(&mut col);
        for y in 0..h {
            data[[y, x]] = col[y];
        }
    }
}

fn ortho_scale<T: FftScalar>(h: usize, w: usize) -> T {
    T::one() / T::from(h * w).unwrap().sqrt()
}

/// Orthonormal real-input 2D FFT of one plane, keeping columns `0..=W/2`.
pub fn rfft2<T: FftScalar>(plane: ArrayView2<T>) -> Array2<Complex<T>> {
    let (h, w) = plane.dim();
    let mut full = plane.mapv(|v| Complex::new(v, T::zero()));
    fft2_inplace(&mut full, false);
    let scale = ortho_scale::<T>(h, w);
    let wf = spectrum_width(w);
    Array2::from_shape_fn((h, wf), |(y, x)| full[[y, x]] * scale)
}

fn check_spectrum_shape<T>(
    spec: &ArrayView2<Complex<T>>,
    out_hw: (usize, usize),
) -> Result<()> {
    let (h, w) = out_hw;
    if spec.dim() != (h, spectrum_width(w)) {
        return Err(FdinError::ShapeMismatch(format!(
            "half-spectrum {:?} inconsistent with target plane {}x{}",
            spec.dim(),
            h,
            w
        )));
    }
    Ok(())
}

/// Extend a half-spectrum to the full grid. `hermitian` fills the dropped
/// columns by conjugate reflection (the inverse transform); `false` zero-fills
/// them (the adjoint of the forward transform).
fn extend<T: FftScalar>(
    spec: ArrayView2<Complex<T>>,
    out_hw: (usize, usize),
    hermitian: bool,
) -> Array2<Complex<T>> {
    let (h, w) = out_hw;
    let wf = spectrum_width(w);
    let mut full = Array2::from_elem((h, w), Complex::new(T::zero(), T::zero()));
    for y in 0..h {
        for x in 0..wf {
            full[[y, x]] = spec[[y, x]];
        }
    }
    if hermitian {
        for y in 0..h {
            for x in wf..w {
                full[[y, x]] = spec[[(h - y) % h, w - x]].conj();
            }
        }
    }
    full
}

/// Orthonormal inverse of [`rfft2`]; the target shape disambiguates even
/// and odd widths.
pub fn irfft2<T: FftScalar>(
    spec: ArrayView2<Complex<T>>,
    out_hw: (usize, usize),
) -> Result<Array2<T>> {
    check_spectrum_shape(&spec, out_hw)?;
    let mut full = extend(spec, out_hw, true);
    fft2_inplace(&mut full, true);
    let scale = ortho_scale::<T>(out_hw.0, out_hw.1);
    Ok(full.mapv(|v| v.re * scale))
}

/// Adjoint of [`rfft2`] as a real-linear map: the gradient of a scalar loss
/// through the forward transform.
pub fn rfft2_adjoint<T: FftScalar>(
    spec: ArrayView2<Complex<T>>,
    out_hw: (usize, usize),
) -> Result<Array2<T>> {
    check_spectrum_shape(&spec, out_hw)?;
    let mut full = extend(spec, out_hw, false);
    fft2_inplace(&mut full, true);
    let scale = ortho_scale::<T>(out_hw.0, out_hw.1);
    Ok(full.mapv(|v| v.re * scale))
}

/// Adjoint of [`irfft2`]: the forward transform with the duplicated columns
/// weighted by their multiplicity.
pub fn irfft2_adjoint<T: FftScalar>(plane: ArrayView2<T>) -> Array2<Complex<T>> {
    let (_, w) = plane.dim();
    let mut spec = rfft2(plane);
    let wf = spec.dim().1;
    let two = T::from(2.0).unwrap();
    for x in 1..wf {
        let self_conjugate = w % 2 == 0 && x == w / 2;
        if !self_conjugate {
            for v in spec.column_mut(x).iter_mut() {
                *v *= two;
            }
        }
    }
    spec
}

fn volume_finite<T: NdFloat>(volume: &ArrayView4<T>) -> bool {
    volume.iter().all(|v| v.is_finite())
}

/// Orthonormal real FFT over the (H, W) axes of each (t, c) slice of a
/// (T, C, H, W) volume.
pub fn rfft_spatial<T: FftScalar>(volume: ArrayView4<T>) -> Result<Array4<Complex<T>>> {
    if !volume_finite(&volume) {
        return Err(FdinError::NonFinite("rfft_spatial input".into()));
    }
    let (t, c, h, w) = volume.dim();
    let wf = spectrum_width(w);
    let mut out = Array4::from_elem((t, c, h, wf), Complex::new(T::zero(), T::zero()));
    for ti in 0..t {
        for ci in 0..c {
            let spec = rfft2(volume.index_axis(ndarray::Axis(0), ti).index_axis(
                ndarray::Axis(0),
                ci,
            ));
            out.index_axis_mut(ndarray::Axis(0), ti)
                .index_axis_mut(ndarray::Axis(0), ci)
                .assign(&spec);
        }
    }
    Ok(out)
}

/// Exact inverse of [`rfft_spatial`]; output is purely real.
pub fn irfft_spatial<T: FftScalar>(
    spec: ArrayView4<Complex<T>>,
    out_hw: (usize, usize),
) -> Result<Array4<T>> {
    let (t, c, h, wf) = spec.dim();
    if (h, wf) != (out_hw.0, spectrum_width(out_hw.1)) {
        return Err(FdinError::ShapeMismatch(format!(
            "half-spectrum slices {h}x{wf} inconsistent with target plane {}x{}",
            out_hw.0, out_hw.1
        )));
    }
    let mut out = Array4::zeros((t, c, out_hw.0, out_hw.1));
    for ti in 0..t {
        for ci in 0..c {
            let plane = irfft2(
                spec.index_axis(ndarray::Axis(0), ti)
                    .index_axis(ndarray::Axis(0), ci),
                out_hw,
            )?;
            out.index_axis_mut(ndarray::Axis(0), ti)
                .index_axis_mut(ndarray::Axis(0), ci)
                .assign(&plane);
        }
    }
    Ok(out)
}

/// Parseval weight of each stored column: 2 for columns standing in for a
/// conjugate pair, 1 for the self-conjugate ones.
pub fn column_weight(w: usize, k: usize) -> usize {
    if k == 0 || (w.is_multiple_of(2) && k == w / 2) {
        1
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_spec(rng: &mut ChaCha8Rng, h: usize, wf: usize) -> Array2<Complex<f64>> {
        Array2::from_shape_fn((h, wf), |_| {
            Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn real_dot(a: &Array2<Complex<f64>>, b: &Array2<Complex<f64>>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.re * y.re + x.im * y.im)
            .sum()
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let (h, w) = (6, 8);
        let mut plane = Array2::<f64>::zeros((h, w));
        plane[[0, 0]] = 1.0;
        let spec = rfft2(plane.view());
        let expected = 1.0 / ((h * w) as f64).sqrt();
        for v in spec.iter() {
            assert!((v.re - expected).abs() < 1e-12);
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_with_column_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(h, w) in &[(6usize, 8usize), (5, 7), (4, 6), (3, 4)] {
            let x = random_plane(&mut rng, h, w);
            let spec = rfft2(x.view());
            let energy_spatial: f64 = x.iter().map(|v| v * v).sum();
            let mut energy_spec = 0.0;
            for ((_, k), v) in spec.indexed_iter() {
                energy_spec += column_weight(w, k) as f64 * v.norm_sqr();
            }
            assert!(
                (energy_spatial - energy_spec).abs() < 1e-8,
                "parseval {h}x{w}: {energy_spatial} vs {energy_spec}"
            );
        }
    }

    #[test]
    fn roundtrip_f32_including_odd_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for &(h, w) in &[(8usize, 8usize), (8, 7), (5, 7), (1, 7), (7, 1)] {
            let x = Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0f32..1.0));
            let back = irfft2(rfft2(x.view()).view(), (h, w)).unwrap();
            for (a, b) in x.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-6, "roundtrip {h}x{w}");
            }
        }
    }

    #[test]
    fn roundtrip_f64_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_plane(&mut rng, 9, 11);
        let back = irfft2(rfft2(x.view()).view(), (9, 11)).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_constant_volumes() {
        let zero = Array4::<f64>::zeros((2, 3, 4, 5));
        let spec = rfft_spatial(zero.view()).unwrap();
        assert!(spec.iter().all(|v| v.norm() == 0.0));
        let back = irfft_spatial(spec.view(), (4, 5)).unwrap();
        assert!(back.iter().all(|v| *v == 0.0));

        let c = 0.42;
        let constant = Array4::from_elem((2, 2, 4, 6), c);
        let spec = rfft_spatial(constant.view()).unwrap();
        for ((_, _, y, x), v) in spec.indexed_iter() {
            if (y, x) == (0, 0) {
                assert!((v.re - c * 24f64.sqrt()).abs() < 1e-12);
                assert!(v.im.abs() < 1e-12);
            } else {
                assert!(v.norm() < 1e-12);
            }
        }
        let back = irfft_spatial(spec.view(), (4, 6)).unwrap();
        for v in back.iter() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_adjoint_identity() {
        // <rfft2(x), s>_R == <x, rfft2_adjoint(s)> for arbitrary stored s.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for &(h, w) in &[(4usize, 6usize), (5, 7), (3, 8)] {
            for _ in 0..10 {
                let x = random_plane(&mut rng, h, w);
                let s = random_spec(&mut rng, h, spectrum_width(w));
                let lhs = real_dot(&rfft2(x.view()), &s);
                let adj = rfft2_adjoint(s.view(), (h, w)).unwrap();
                let rhs: f64 = x.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-10, "{h}x{w}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn inverse_adjoint_identity() {
        // <irfft2(s), y> == <s, irfft2_adjoint(y)>_R for arbitrary stored s.
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for &(h, w) in &[(4usize, 6usize), (5, 7), (3, 8)] {
            for _ in 0..10 {
                let s = random_spec(&mut rng, h, spectrum_width(w));
                let y = random_plane(&mut rng, h, w);
                let inv = irfft2(s.view(), (h, w)).unwrap();
                let lhs: f64 = inv.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                let rhs = real_dot(&s, &irfft2_adjoint(y.view()));
                assert!((lhs - rhs).abs() < 1e-10, "{h}x{w}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let x = random_plane(&mut rng, 6, 7);
        let y = random_plane(&mut rng, 6, 7);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let combo = rfft2((a * &x + b * &y).view());
        let fx = rfft2(x.view());
        let fy = rfft2(y.view());
        for ((c, p), q) in combo.iter().zip(fx.iter()).zip(fy.iter()) {
            let expect = p * a + q * b;
            assert!((c - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn gradient_is_the_adjoint_by_finite_differences() {
        // loss = <rfft2(x), S>_R; dloss/dx must equal rfft2_adjoint(S)
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (h, w) = (5usize, 6usize);
        let x = random_plane(&mut rng, h, w);
        let s = random_spec(&mut rng, h, spectrum_width(w));
        let analytic = rfft2_adjoint(s.view(), (h, w)).unwrap();
        let eps = 1e-6;
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut max_err = 0.0f64;
        for y in 0..h {
            for xx in 0..w {
                let mut xp = x.clone();
                xp[[y, xx]] += eps;
                let lp = real_dot(&rfft2(xp.view()), &s);
                xp[[y, xx]] -= 2.0 * eps;
                let lm = real_dot(&rfft2(xp.view()), &s);
                let numeric = (lp - lm) / (2.0 * eps);
                max_err = max_err.max((analytic[[y, xx]] - numeric).abs());
            }
        }
        // norm-relative: worst entry error over the gradient's scale
        assert!(max_err / scale < 1e-6, "double-precision rel err {}", max_err / scale);
    }

    #[test]
    fn shape_errors() {
        let spec = Array2::from_elem((4, 4), Complex::new(0.0f64, 0.0));
        assert!(irfft2(spec.view(), (4, 9)).is_err());
        let mut bad = Array4::<f64>::zeros((1, 1, 2, 2));
        bad[[0, 0, 0, 0]] = f64::INFINITY;
        assert!(rfft_spatial(bad.view()).is_err());
    }
}
