//! Linear forward models and their matched adjoints.

mod fanbeam;
mod fourier;
mod mask;

pub use fanbeam::{small_test_geometry, FanBeamGeometry, FanBeamOperator};
pub use fourier::{fft2_forward, fft2_inverse, FourierMaskOperator};
pub use mask::{make_poisson_disk_mask, SamplingMask};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A linear map A with its exact adjoint A^T between image and
/// measurement domains. Implementations are immutable after construction
/// and safe to share across threads.
pub trait LinearOperator: Send + Sync {
    /// Image-domain shape `[H, W, C]`.
    fn domain_shape(&self) -> &[usize];
    /// Measurement-domain shape.
    fn range_shape(&self) -> &[usize];

    fn apply(&self, image: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, measurement: &Tensor) -> Result<Tensor>;

    /// Solve (A^T A + rho I) x = rhs. The default runs conjugate gradient
    /// with at most 20 iterations and relative tolerance 1e-8; operators
    /// with diagonalizable normal equations override this with an exact
    /// solve.
    fn normal_solve(&self, rhs: &Tensor, rho: f64) -> Result<Tensor> {
        cg_normal_solve(self, rhs, rho, 20, 1e-8)
    }

    /// Concrete fan-beam geometry access for reconstruction code that
    /// needs it (filtered backprojection); `None` for other encodings.
    fn as_fanbeam(&self) -> Option<&FanBeamOperator> {
        None
    }

    fn check_domain(&self, image: &Tensor) -> Result<()> {
        if image.shape != self.domain_shape() {
            return Err(Error::Shape(format!(
                "operator domain is {:?}, image has {:?}",
                self.domain_shape(),
                image.shape
            )));
        }
        Ok(())
    }

    fn check_range(&self, measurement: &Tensor) -> Result<()> {
        if measurement.shape != self.range_shape() {
            return Err(Error::Shape(format!(
                "operator range is {:?}, measurement has {:?}",
                self.range_shape(),
                measurement.shape
            )));
        }
        Ok(())
    }
}

/// The identity encoding (image domain == measurement domain).
#[derive(Debug, Clone)]
pub struct IdentityOperator {
    shape: Vec<usize>,
}

impl IdentityOperator {
    pub fn new(shape: &[usize]) -> Self {
        IdentityOperator {
            shape: shape.to_vec(),
        }
    }
}

impl LinearOperator for IdentityOperator {
    fn domain_shape(&self) -> &[usize] {
        &self.shape
    }

    fn range_shape(&self) -> &[usize] {
        &self.shape
    }

    fn apply(&self, image: &Tensor) -> Result<Tensor> {
        self.check_domain(image)?;
        Ok(image.clone_value())
    }

    fn adjoint(&self, measurement: &Tensor) -> Result<Tensor> {
        self.check_range(measurement)?;
        Ok(measurement.clone_value())
    }

    fn normal_solve(&self, rhs: &Tensor, rho: f64) -> Result<Tensor> {
        self.check_domain(rhs)?;
        Ok(rhs.scale(1.0 / (1.0 + rho)))
    }
}

/// A wrapped operator scaled by a constant: (sA) x = s (A x). Scaling by
/// 1 / ||A|| normalizes badly scaled encodings (fan-beam projections) so
/// solver step sizes and penalties live on a unit scale.
pub struct ScaledOperator<O> {
    inner: O,
    scale: f64,
}

impl<O: LinearOperator> ScaledOperator<O> {
    pub fn new(inner: O, scale: f64) -> Self {
        ScaledOperator { inner, scale }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<O: LinearOperator> LinearOperator for ScaledOperator<O> {
    fn domain_shape(&self) -> &[usize] {
        self.inner.domain_shape()
    }

    fn range_shape(&self) -> &[usize] {
        self.inner.range_shape()
    }

    fn apply(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.inner.apply(image)?.scale(self.scale))
    }

    fn adjoint(&self, measurement: &Tensor) -> Result<Tensor> {
        Ok(self.inner.adjoint(measurement)?.scale(self.scale))
    }

    /// (s^2 A^T A + rho I) x = rhs <=> (A^T A + rho/s^2 I) x = rhs/s^2.
    fn normal_solve(&self, rhs: &Tensor, rho: f64) -> Result<Tensor> {
        let s2 = self.scale * self.scale;
        self.inner.normal_solve(&rhs.scale(1.0 / s2), rho / s2)
    }
}

/// Conjugate gradient on (A^T A + rho I) x = rhs from x0 = 0.
pub fn cg_normal_solve(
    op: &(impl LinearOperator + ?Sized),
    rhs: &Tensor,
    rho: f64,
    max_iters: usize,
    rel_tol: f64,
) -> Result<Tensor> {
    op.check_domain(rhs)?;
    let b_norm = rhs.norm();
    let mut x = Tensor::zeros(&rhs.shape);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.clone_value();
    let mut p = r.clone_value();
    let mut rs_old = r.norm_sq();
    for _ in 0..max_iters {
        if rs_old.sqrt() <= rel_tol * b_norm {
            break;
        }
        let mut ap = op.adjoint(&op.apply(&p)?)?;
        ap.axpy(rho, &p)?;
        let alpha = rs_old / p.dot(&ap)?;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rs_new = r.norm_sq();
        let beta = rs_new / rs_old;
        let mut p_next = r.clone_value();
        p_next.axpy(beta, &p)?;
        p = p_next;
        rs_old = rs_new;
    }
    Ok(x)
}

/// Largest singular value of A, estimated by power iteration on A^T A.
pub fn operator_norm(op: &(impl LinearOperator + ?Sized), iters: usize, seed: u64) -> Result<f64> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = op.domain_shape().iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut v = Tensor::new(op.domain_shape().to_vec(), data)?;
    let mut lambda = 0.0f64;
    for _ in 0..iters {
        let w = op.adjoint(&op.apply(&v)?)?;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        lambda = norm / v.norm().max(1e-300);
        v = w.scale(1.0 / norm);
    }
    Ok(lambda.sqrt())
}

/// Materialize the dense matrix of `op` column by column (tests and small
/// oracles only).
pub fn dense_matrix(op: &(impl LinearOperator + ?Sized)) -> Result<Vec<Vec<f64>>> {
    let n: usize = op.domain_shape().iter().product();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = Tensor::zeros(op.domain_shape());
        e.data[j] = 1.0;
        cols.push(op.apply(&e)?.data);
    }
    Ok(cols)
}
