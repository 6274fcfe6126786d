//! Orthonormal 2D spectral transforms: a full-frame DCT-II/IDCT pair and a
//! real-input spatial FFT pair over the (H, W) axes of feature volumes.
//!
//! Both families use orthonormal scaling so that the inverse of each
//! transform equals its adjoint and Parseval's identity holds with no extra
//! factors. That makes every gradient through these transforms a transform
//! identity: backprop through `dct2` is `idct2` of the upstream gradient,
//! and backprop through `rfft2`/`irfft2` is the explicit adjoint exposed
//! here (the half-spectrum layout makes the FFT adjoints *not* coincide
//! with the inverses, hence the dedicated functions).

mod dct;
mod fft;

pub use dct::{dct2, dct_basis, idct2, DctPlan};
pub use fft::{
    column_weight, irfft2, irfft2_adjoint, irfft_spatial, rfft2, rfft2_adjoint, rfft_spatial,
    spectrum_width,
    FftScalar,
};

use ndarray::{Array2, Array4};
use num_complex::Complex;

/// Real spectrum of one (H, W) plane, same shape as the source plane.
pub type Spectrum<T> = Array2<T>;

/// Half-spectrum of a real (T, C, H, W) volume: complex bins over
/// `(T, C, H, floor(W/2)+1)` with the Hermitian-redundant columns removed.
pub type ComplexSpectrum<T> = Array4<Complex<T>>;
