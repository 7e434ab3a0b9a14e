//! Masked orthonormal Fourier encoding for MRI.
//!
//! Complex images travel as two real channels `[H, W, 2]`; the operator
//! converts at its boundary. Both FFT directions carry 1/sqrt(HW) so the
//! adjoint of the masked transform is its conjugate transpose exactly.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{LinearOperator, SamplingMask};

/// Plans for a 2D orthonormal FFT of fixed size.
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in buf.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); self.h];
        for c in 0..self.w {
            for r in 0..self.h {
                column[r] = buf[r * self.w + c];
            }
            col.process(&mut column);
            for r in 0..self.h {
                buf[r * self.w + c] = column[r];
            }
        }
        let scale = 1.0 / ((self.h * self.w) as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }
}

/// Orthonormal 2D DFT of a 2-channel image tensor.
pub fn fft2_forward(image: &Tensor) -> Result<Tensor> {
    let fft = Fft2::new(image.shape[0], image.shape[1]);
    let mut buf = tensor_to_complex(image)?;
    fft.forward(&mut buf);
    complex_to_tensor(&buf, image.shape[0], image.shape[1])
}

/// Orthonormal inverse 2D DFT of a 2-channel k-space tensor.
pub fn fft2_inverse(kspace: &Tensor) -> Result<Tensor> {
    let fft = Fft2::new(kspace.shape[0], kspace.shape[1]);
    let mut buf = tensor_to_complex(kspace)?;
    fft.inverse(&mut buf);
    complex_to_tensor(&buf, kspace.shape[0], kspace.shape[1])
}

pub fn tensor_to_complex(t: &Tensor) -> Result<Vec<Complex64>> {
    if t.shape.len() != 3 || t.shape[2] != 2 {
        return Err(Error::Shape(format!(
            "expected [H,W,2] complex tensor, got {:?}",
            t.shape
        )));
    }
    Ok(t.data
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}

pub fn complex_to_tensor(buf: &[Complex64], h: usize, w: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(buf.len() * 2);
    for v in buf {
        data.push(v.re);
        data.push(v.im);
    }
    Tensor::new(vec![h, w, 2], data)
}

/// Masked-Fourier MRI encoding: A m = mask .* FFT(m).
pub struct FourierMaskOperator {
    mask: SamplingMask,
    fft: Fft2,
    domain: Vec<usize>,
    range: Vec<usize>,
}

impl FourierMaskOperator {
    pub fn new(mask: SamplingMask) -> Self {
        let (h, w) = (mask.height, mask.width);
        FourierMaskOperator {
            mask,
            fft: Fft2::new(h, w),
            domain: vec![h, w, 2],
            range: vec![h, w, 2],
        }
    }

    pub fn full(h: usize, w: usize) -> Self {
        Self::new(SamplingMask::full(h, w))
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    fn apply_mask(&self, buf: &mut [Complex64]) {
        for (v, &keep) in buf.iter_mut().zip(self.mask.data.iter()) {
            if !keep {
                *v = Complex64::default();
            }
        }
    }
}

impl LinearOperator for FourierMaskOperator {
    fn domain_shape(&self) -> &[usize] {
        &self.domain
    }

    fn range_shape(&self) -> &[usize] {
        &self.range
    }

    fn apply(&self, image: &Tensor) -> Result<Tensor> {
        self.check_domain(image)?;
        let mut buf = tensor_to_complex(image)?;
        self.fft.forward(&mut buf);
        self.apply_mask(&mut buf);
        complex_to_tensor(&buf, self.domain[0], self.domain[1])
    }

    fn adjoint(&self, measurement: &Tensor) -> Result<Tensor> {
        self.check_range(measurement)?;
        let mut buf = tensor_to_complex(measurement)?;
        self.apply_mask(&mut buf);
        self.fft.inverse(&mut buf);
        complex_to_tensor(&buf, self.domain[0], self.domain[1])
    }

    /// Exact diagonal k-space solve of (A^H A + rho I) x = rhs:
    /// the normal operator is FFT-diagonal with entries mask + rho.
    fn normal_solve(&self, rhs: &Tensor, rho: f64) -> Result<Tensor> {
        if rho <= 0.0 {
            return Err(Error::Argument(format!(
                "fourier normal_solve requires rho > 0, got {rho}"
            )));
        }
        self.check_domain(rhs)?;
        let mut buf = tensor_to_complex(rhs)?;
        self.fft.forward(&mut buf);
        for (v, &keep) in buf.iter_mut().zip(self.mask.data.iter()) {
            let d = if keep { 1.0 + rho } else { rho };
            *v /= d;
        }
        self.fft.inverse(&mut buf);
        complex_to_tensor(&buf, self.domain[0], self.domain[1])
    }
}
