//! Image quality metrics: MSE, PSNR, SSIM, and the Fourier-radial error
//! spectrum.
//!
//! Complex (2-channel) images are compared on their magnitude for MSE,
//! PSNR and SSIM; the error spectrum uses the complex difference directly.

use crate::error::{Error, Result};
use crate::operators::fft2_forward;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// (radius_bin, relative_error); infinite entries mark empty-reference
    /// bins and are excluded from aggregates.
    pub esp: Vec<(f64, f64)>,
}

/// Reduce an image to per-pixel channel magnitude.
pub fn magnitude(image: &Tensor) -> Result<Tensor> {
    if image.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected [H,W,C] image, got {:?}",
            image.shape
        )));
    }
    let (h, w, c) = (image.shape[0], image.shape[1], image.shape[2]);
    if c == 1 {
        return Ok(image.clone_value());
    }
    let data = (0..h * w)
        .map(|p| {
            (0..c)
                .map(|ch| image.data[p * c + ch].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Tensor::new(vec![h, w, 1], data)
}

/// Pixel-mean squared error between magnitudes.
pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(Error::Shape(format!(
            "mse shape mismatch: {:?} vs {:?}",
            x.shape, reference.shape
        )));
    }
    let xm = magnitude(x)?;
    let rm = magnitude(reference)?;
    let n = xm.data.len() as f64;
    Ok(xm
        .data
        .iter()
        .zip(rm.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// 10 log10(peak^2 / mse) with peak = max |reference|; +inf when mse = 0.
pub fn psnr(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let e = mse(x, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = magnitude(reference)?.max_abs();
    Ok(10.0 * (peak * peak / e).log10())
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), stabilizers
/// K1 = 0.01 and K2 = 0.03, and dynamic range max(ref) - min(ref).
pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape != reference.shape {
        return Err(Error::Shape(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            x.shape, reference.shape
        )));
    }
    let a = magnitude(x)?;
    let b = magnitude(reference)?;
    let (h, w) = (a.shape[0], a.shape[1]);
    const WIN: usize = 11;
    if h < WIN || w < WIN {
        return Err(Error::Argument(format!(
            "ssim needs images of at least {WIN}x{WIN}, got {h}x{w}"
        )));
    }
    let lo = b.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = b.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::Argument(
            "ssim undefined for a constant reference (zero dynamic range)".into(),
        ));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);

    // normalized separable gaussian window
    let sigma = 1.5;
    let half = (WIN / 2) as isize;
    let mut g = [0.0f64; WIN];
    for (i, gv) in g.iter_mut().enumerate() {
        let d = i as isize - half;
        *gv = (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    }
    let gsum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= gsum);

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..h - WIN + 1 {
        for x0 in 0..w - WIN + 1 {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..WIN {
                for dx in 0..WIN {
                    let wgt = g[dy] * g[dx];
                    let av = a.data[(y0 + dy) * w + x0 + dx];
                    let bv = b.data[(y0 + dy) * w + x0 + dx];
                    mu_a += wgt * av;
                    mu_b += wgt * bv;
                    aa += wgt * av * av;
                    bb += wgt * bv * bv;
                    ab += wgt * av * bv;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-annulus relative error in k-space: ||FFT(x - ref)|_r|| /
/// ||FFT(ref)|_r|| with bins of one k-space pixel. Bins at radii past
/// `n_bins - 1` fold into the last bin so the partition stays complete;
/// bins with zero reference energy report an infinite sentinel.
pub fn error_spectrum(x: &Tensor, reference: &Tensor, n_bins: usize) -> Result<Vec<(f64, f64)>> {
    if x.shape != reference.shape {
        return Err(Error::Shape(format!(
            "error_spectrum shape mismatch: {:?} vs {:?}",
            x.shape, reference.shape
        )));
    }
    if n_bins == 0 {
        return Err(Error::Argument("error_spectrum needs n_bins >= 1".into()));
    }
    let as_complex = |t: &Tensor| -> Result<Tensor> {
        if t.shape[2] == 2 {
            Ok(t.clone_value())
        } else {
            let (h, w) = (t.shape[0], t.shape[1]);
            let mut out = Tensor::zeros(&[h, w, 2]);
            for p in 0..h * w {
                out.data[2 * p] = t.data[p];
            }
            Ok(out)
        }
    };
    let xc = as_complex(x)?;
    let rc = as_complex(reference)?;
    let diff = xc.sub(&rc)?;
    let fd = fft2_forward(&diff)?;
    let fr = fft2_forward(&rc)?;

    let (h, w) = (x.shape[0], x.shape[1]);
    let mut err_energy = vec![0.0f64; n_bins];
    let mut ref_energy = vec![0.0f64; n_bins];
    for v in 0..h {
        for u in 0..w {
            let fv = (v.min(h - v)) as f64;
            let fu = (u.min(w - u)) as f64;
            let radius = (fv * fv + fu * fu).sqrt();
            let bin = (radius.floor() as usize).min(n_bins - 1);
            let p = v * w + u;
            err_energy[bin] += fd.data[2 * p].powi(2) + fd.data[2 * p + 1].powi(2);
            ref_energy[bin] += fr.data[2 * p].powi(2) + fr.data[2 * p + 1].powi(2);
        }
    }
    Ok((0..n_bins)
        .map(|b| {
            let rel = if ref_energy[b] > 0.0 {
                (err_energy[b] / ref_energy[b]).sqrt()
            } else {
                f64::INFINITY
            };
            (b as f64, rel)
        })
        .collect())
}

/// Number of bins covering radii out to the k-space Nyquist ring.
pub fn default_esp_bins(h: usize, w: usize) -> usize {
    h.min(w) / 2 + 1
}

pub fn report(x: &Tensor, reference: &Tensor) -> Result<MetricReport> {
    let bins = default_esp_bins(x.shape[0], x.shape[1]);
    Ok(MetricReport {
        mse: mse(x, reference)?,
        psnr_db: psnr(x, reference)?,
        ssim: ssim(x, reference)?,
        esp: error_spectrum(x, reference, bins)?,
    })
}
