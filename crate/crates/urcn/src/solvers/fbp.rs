//! Fan-beam filtered backprojection.
//!
//! Per-view processing: cosine pre-weighting for the flat detector, ramp
//! filtering (band-limited Ram-Lak response multiplied by a Hamming window
//! in the frequency domain, applied with zero padding), then weighted
//! backprojection through the matched adjoint of the projector. Detector
//! samples are rescaled to the virtual detector through the isocenter, so
//! the filter spacing and the backprojection constant use that pitch.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::operators::{FanBeamOperator, LinearOperator};
use crate::tensor::Tensor;

pub fn fbp_reconstruct(op: &FanBeamOperator, sinogram: &Tensor) -> Result<Tensor> {
    op.check_range(sinogram)?;
    let g = op.geometry();
    let nd = g.n_detectors;
    let nv = g.n_views;
    let dso = g.source_center_dist;
    let dsd = g.source_detector_dist;
    // Detector sampling rescaled to the virtual detector at the isocenter.
    let ds = g.detector_pitch * dso / dsd;

    // Band-limited ramp kernel sampled at ds, laid out circularly.
    let len = (2 * nd).next_power_of_two();
    let mut kernel = vec![Complex64::default(); len];
    kernel[0] = Complex64::new(1.0 / (4.0 * ds * ds), 0.0);
    let mut n = 1usize;
    while n < len / 2 {
        if n % 2 == 1 {
            let v = -1.0 / (std::f64::consts::PI.powi(2) * (n * n) as f64 * ds * ds);
            kernel[n] = Complex64::new(v, 0.0);
            kernel[len - n] = Complex64::new(v, 0.0);
        }
        n += 1;
    }

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    fwd.process(&mut kernel);

    // Hamming window over frequency bins up to Nyquist.
    let half = len / 2;
    for (k, kv) in kernel.iter_mut().enumerate() {
        let bin = k.min(len - k) as f64;
        let w = 0.54 + 0.46 * (std::f64::consts::PI * bin / half as f64).cos();
        *kv *= w;
    }

    // Cosine pre-weights per detector cell.
    let cosw: Vec<f64> = (0..nd)
        .map(|j| {
            let s = (j as f64 - 0.5 * (nd as f64 - 1.0)) * g.detector_pitch;
            dsd / (dsd * dsd + s * s).sqrt()
        })
        .collect();

    // Filter every view with linear convolution via zero padding.
    let mut filtered = Tensor::zeros(&[nv, nd, 1]);
    let mut row = vec![Complex64::default(); len];
    for v in 0..nv {
        row.iter_mut().for_each(|c| *c = Complex64::default());
        for j in 0..nd {
            row[j] = Complex64::new(sinogram.data[v * nd + j] * cosw[j], 0.0);
        }
        fwd.process(&mut row);
        for (r, k) in row.iter_mut().zip(kernel.iter()) {
            *r *= k;
        }
        inv.process(&mut row);
        // rustfft's inverse is unnormalized; ds converts the discrete
        // convolution sum into the continuous filter integral.
        let scale = ds / len as f64;
        for j in 0..nd {
            filtered.data[v * nd + j] = row[j].re * scale;
        }
    }

    // Weighted backprojection through the matched adjoint, normalized per
    // pixel by the backprojected ray density (adjoint of an all-ones
    // sinogram). The normalization cancels the granularity of ray-driven
    // deposits; the remaining angular sum over the full orbit contributes
    // a factor of pi.
    let numerator = op.adjoint(&filtered)?;
    let density = op.adjoint(&Tensor::filled(&[nv, nd, 1], 1.0))?;
    let mut recon = Tensor::zeros(numerator.shape.as_slice());
    for i in 0..recon.data.len() {
        if density.data[i] > 0.0 {
            recon.data[i] = std::f64::consts::PI * numerator.data[i] / density.data[i];
        }
    }
    Ok(recon)
}
