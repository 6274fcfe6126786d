//! Full-frame orthonormal type-II DCT and its inverse, as separable
//! basis-matrix products. Plans cache the two basis matrices per resolution;
//! the transform itself is two gemms, which is plenty for the full-frame
//! sizes this crate works at.
//!
//! The basis and the gemm arithmetic stay in f64 even for f32 planes:
//! single-precision cosines of large angles lose enough digits that the
//! roundtrip contract (1e-6 in single precision) would not hold at
//! 64x64 and beyond. The extra cost is invisible next to the conv stack.

use std::marker::PhantomData;

use ndarray::{Array2, ArrayView2, NdFloat};

use crate::error::{FdinError, Result};

fn dct_basis_f64(n: usize) -> Array2<f64> {
    assert!(n >= 1, "dct_basis needs n >= 1");
    let nf = n as f64;
    let s0 = (1.0 / nf).sqrt();
    let sk = (2.0 / nf).sqrt();
    Array2::from_shape_fn((n, n), |(k, i)| {
        let scale = if k == 0 { s0 } else { sk };
        let arg = std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf);
        scale * arg.cos()
    })
}

/// Orthonormal DCT-II basis matrix of size `n x n`.
///
/// Row `k` holds `s_k * cos(pi * (2i + 1) * k / (2n))` with `s_0 = sqrt(1/n)`
/// and `s_k = sqrt(2/n)` otherwise, so the matrix is orthogonal:
/// `B * B^T = I`.
pub fn dct_basis<T: NdFloat>(n: usize) -> Array2<T> {
    dct_basis_f64(n).mapv(|v| T::from(v).unwrap())
}

/// Cached basis matrices for transforming (H, W) planes.
#[derive(Debug, Clone)]
pub struct DctPlan<T> {
    h: usize,
    w: usize,
    basis_h: Array2<f64>,
    basis_w: Array2<f64>,
    _scalar: PhantomData<T>,
}

impl<T: NdFloat> DctPlan<T> {
    pub fn new(h: usize, w: usize) -> Self {
        DctPlan {
            h,
            w,
            basis_h: dct_basis_f64(h),
            basis_w: dct_basis_f64(w),
            _scalar: PhantomData,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Forward transform: `B_h * X * B_w^T`.
    pub fn forward(&self, plane: ArrayView2<T>) -> Array2<T> {
        debug_assert_eq!(plane.dim(), (self.h, self.w));
        let x = plane.mapv(|v| v.to_f64().unwrap());
        self.basis_h
            .dot(&x)
            .dot(&self.basis_w.t())
            .mapv(|v| T::from(v).unwrap())
    }

    /// Inverse transform: `B_h^T * S * B_w`. Equal to the adjoint of
    /// [`DctPlan::forward`] because the bases are orthogonal.
    pub fn inverse(&self, spectrum: ArrayView2<T>) -> Array2<T> {
        debug_assert_eq!(spectrum.dim(), (self.h, self.w));
        let s = spectrum.mapv(|v| v.to_f64().unwrap());
        self.basis_h
            .t()
            .dot(&s)
            .dot(&self.basis_w)
            .mapv(|v| T::from(v).unwrap())
    }
}

fn ensure_finite<T: NdFloat>(plane: &ArrayView2<T>, what: &str) -> Result<()> {
    if plane.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FdinError::NonFinite(what.to_string()))
    }
}

/// Orthonormal 2D DCT-II of one plane, rows then columns.
pub fn dct2<T: NdFloat>(plane: ArrayView2<T>) -> Result<Array2<T>> {
    ensure_finite(&plane, "dct2 input")?;
    let (h, w) = plane.dim();
    Ok(DctPlan::new(h, w).forward(plane))
}

/// Exact inverse of [`dct2`] under the orthonormal convention.
pub fn idct2<T: NdFloat>(spectrum: ArrayView2<T>) -> Result<Array2<T>> {
    ensure_finite(&spectrum, "idct2 input")?;
    let (h, w) = spectrum.dim();
    Ok(DctPlan::new(h, w).inverse(spectrum))
}
