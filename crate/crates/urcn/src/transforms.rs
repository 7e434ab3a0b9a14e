//! Sparsifying transforms for the regularization term.
//!
//! The Haar wavelet here is orthonormal (multi-level, per channel), so the
//! L1 proximal map has the closed form psi^T soft(psi x, t). Forward
//! finite differences are provided as a non-orthogonal alternative; the
//! same prox formula is then the standard one-step approximation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    HaarWavelet,
    FiniteDifferences,
    Identity,
}

impl TransformKind {
    pub fn is_orthogonal(&self) -> bool {
        matches!(self, TransformKind::HaarWavelet | TransformKind::Identity)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "haar_wavelet" => Ok(TransformKind::HaarWavelet),
            "fd" | "finite_differences" => Ok(TransformKind::FiniteDifferences),
            "identity" | "id" => Ok(TransformKind::Identity),
            other => Err(Error::Argument(format!("unknown transform {other:?}"))),
        }
    }
}

/// Regularization setup for the classical solvers: lambda * ||psi m||_p
/// with p fixed to 1 so every prox is closed-form.
#[derive(Debug, Clone)]
pub struct SparsityConfig {
    pub transform: TransformKind,
    pub lambda: f64,
    /// Norm order; only p = 1 is supported.
    pub p: f64,
    /// Number of transform branches; classical baselines use 1.
    pub l_transforms: usize,
}

impl SparsityConfig {
    pub fn new(transform: TransformKind, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::Argument(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(SparsityConfig {
            transform,
            lambda,
            p: 1.0,
            l_transforms: 1,
        })
    }

    pub fn haar(lambda: f64) -> Result<Self> {
        Self::new(TransformKind::HaarWavelet, lambda)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.transform {
            TransformKind::Identity => Ok(x.clone_value()),
            TransformKind::HaarWavelet => haar_forward(x),
            TransformKind::FiniteDifferences => fd_forward(x),
        }
    }

    pub fn adjoint(&self, c: &Tensor) -> Result<Tensor> {
        match self.transform {
            TransformKind::Identity => Ok(c.clone_value()),
            TransformKind::HaarWavelet => haar_inverse(c),
            TransformKind::FiniteDifferences => fd_adjoint(c),
        }
    }

    /// prox_t[lambda ||psi .||_1](x) = psi^T soft(psi x, t * lambda),
    /// exact for orthogonal psi.
    pub fn prox(&self, x: &Tensor, step: f64) -> Result<Tensor> {
        if self.lambda == 0.0 {
            return Ok(x.clone_value());
        }
        let coeffs = self.apply(x)?;
        let thresholded = crate::tensor::soft_threshold(&coeffs, step * self.lambda)?;
        self.adjoint(&thresholded)
    }

    /// lambda * ||psi x||_1
    pub fn penalty(&self, x: &Tensor) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(self.lambda * self.apply(x)?.abs_sum())
    }
}

fn check_image(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "transform expects [H,W,C], got {:?}",
            x.shape
        )));
    }
    Ok((x.shape[0], x.shape[1], x.shape[2]))
}

fn haar_levels(h: usize, w: usize) -> usize {
    let mut levels = 0;
    let (mut bh, mut bw) = (h, w);
    while levels < 3 && bh >= 2 && bw >= 2 && bh % 2 == 0 && bw % 2 == 0 {
        levels += 1;
        bh /= 2;
        bw /= 2;
    }
    levels
}

/// Multi-level orthonormal 2D Haar transform, applied per channel.
pub fn haar_forward(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_image(x)?;
    let mut out = x.clone_value();
    let levels = haar_levels(h, w);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut row = vec![0.0; w.max(h)];
    let (mut bh, mut bw) = (h, w);
    for _ in 0..levels {
        for ch in 0..c {
            // rows
            for y in 0..bh {
                for x_ in 0..bw {
                    row[x_] = out.data[(y * w + x_) * c + ch];
                }
                for k in 0..bw / 2 {
                    let a = row[2 * k];
                    let b = row[2 * k + 1];
                    out.data[(y * w + k) * c + ch] = s * (a + b);
                    out.data[(y * w + bw / 2 + k) * c + ch] = s * (a - b);
                }
            }
            // columns
            for x_ in 0..bw {
                for y in 0..bh {
                    row[y] = out.data[(y * w + x_) * c + ch];
                }
                for k in 0..bh / 2 {
                    let a = row[2 * k];
                    let b = row[2 * k + 1];
                    out.data[(k * w + x_) * c + ch] = s * (a + b);
                    out.data[((bh / 2 + k) * w + x_) * c + ch] = s * (a - b);
                }
            }
        }
        bh /= 2;
        bw /= 2;
    }
    Ok(out)
}

/// Inverse (= transpose) of [`haar_forward`].
pub fn haar_inverse(coeffs: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_image(coeffs)?;
    let mut out = coeffs.clone_value();
    let levels = haar_levels(h, w);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut row = vec![0.0; w.max(h)];
    // Undo levels from the coarsest block outward.
    let mut sizes = Vec::new();
    let (mut bh, mut bw) = (h, w);
    for _ in 0..levels {
        sizes.push((bh, bw));
        bh /= 2;
        bw /= 2;
    }
    for &(bh, bw) in sizes.iter().rev() {
        for ch in 0..c {
            // columns first (reverse of forward order)
            for x_ in 0..bw {
                for y in 0..bh {
                    row[y] = out.data[(y * w + x_) * c + ch];
                }
                for k in 0..bh / 2 {
                    let lo = row[k];
                    let hi = row[bh / 2 + k];
                    out.data[(2 * k * w + x_) * c + ch] = s * (lo + hi);
                    out.data[((2 * k + 1) * w + x_) * c + ch] = s * (lo - hi);
                }
            }
            // rows
            for y in 0..bh {
                for x_ in 0..bw {
                    row[x_] = out.data[(y * w + x_) * c + ch];
                }
                for k in 0..bw / 2 {
                    let lo = row[k];
                    let hi = row[bw / 2 + k];
                    out.data[(y * w + 2 * k) * c + ch] = s * (lo + hi);
                    out.data[(y * w + 2 * k + 1) * c + ch] = s * (lo - hi);
                }
            }
        }
    }
    Ok(out)
}

/// Forward differences with Neumann boundary: output channels are
/// [dx per channel, dy per channel], shape [H, W, 2C].
pub fn fd_forward(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_image(x)?;
    let mut out = Tensor::zeros(&[h, w, 2 * c]);
    for y in 0..h {
        for x_ in 0..w {
            for ch in 0..c {
                let v = x.data[(y * w + x_) * c + ch];
                if x_ + 1 < w {
                    out.data[(y * w + x_) * 2 * c + ch] = x.data[(y * w + x_ + 1) * c + ch] - v;
                }
                if y + 1 < h {
                    out.data[(y * w + x_) * 2 * c + c + ch] = x.data[((y + 1) * w + x_) * c + ch] - v;
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`fd_forward`] (negative divergence with the matching
/// boundary handling).
pub fn fd_adjoint(d: &Tensor) -> Result<Tensor> {
    let (h, w, c2) = check_image(d)?;
    if c2 % 2 != 0 {
        return Err(Error::Shape(format!(
            "finite-difference adjoint expects even channel count, got {c2}"
        )));
    }
    let c = c2 / 2;
    let mut out = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        for x_ in 0..w {
            for ch in 0..c {
                let dx = if x_ + 1 < w {
                    d.data[(y * w + x_) * c2 + ch]
                } else {
                    0.0
                };
                let dy = if y + 1 < h {
                    d.data[(y * w + x_) * c2 + c + ch]
                } else {
                    0.0
                };
                if x_ + 1 < w {
                    out.data[(y * w + x_ + 1) * c + ch] += dx;
                }
                out.data[(y * w + x_) * c + ch] -= dx;
                if y + 1 < h {
                    out.data[((y + 1) * w + x_) * c + ch] += dy;
                }
                out.data[(y * w + x_) * c + ch] -= dy;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn haar_is_orthonormal() {
        let x = rand_tensor(&[16, 16, 2], 1);
        let cfg = SparsityConfig::haar(1.0).unwrap();
        let back = cfg.adjoint(&cfg.apply(&x).unwrap()).unwrap();
        assert!(crate::tensor::rel_l2(&back, &x) < 1e-10);
        // Energy preservation (Parseval).
        let coeffs = cfg.apply(&x).unwrap();
        assert!((coeffs.norm_sq() - x.norm_sq()).abs() < 1e-10 * x.norm_sq());
    }

    #[test]
    fn haar_adjointness() {
        let x = rand_tensor(&[8, 12, 1], 2);
        let y = rand_tensor(&[8, 12, 1], 3);
        let fx = haar_forward(&x).unwrap();
        let aty = haar_inverse(&y).unwrap();
        let lhs = fx.dot(&y).unwrap();
        let rhs = x.dot(&aty).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn haar_constant_image_concentrates_in_dc() {
        let x = Tensor::filled(&[8, 8, 1], 1.0);
        let c = haar_forward(&x).unwrap();
        // 3 levels on 8x8: approximation coefficient at (0,0) carries all energy
        assert!((c.data[0] - 8.0).abs() < 1e-12);
        let tail: f64 = c.data[1..].iter().map(|v| v.abs()).sum();
        assert!(tail < 1e-10);
    }

    #[test]
    fn fd_adjointness() {
        let x = rand_tensor(&[7, 9, 2], 4);
        let y = rand_tensor(&[7, 9, 4], 5);
        let fx = fd_forward(&x).unwrap();
        let aty = fd_adjoint(&y).unwrap();
        let lhs = fx.dot(&y).unwrap();
        let rhs = x.dot(&aty).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn prox_with_zero_lambda_is_identity() {
        let x = rand_tensor(&[8, 8, 2], 6);
        let cfg = SparsityConfig::haar(0.0).unwrap();
        let p = cfg.prox(&x, 0.5).unwrap();
        assert_eq!(p.data, x.data);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(SparsityConfig::haar(-1.0).is_err());
    }
}
