//! Non-learned reconstruction baselines: PDHG, ADMM, ISTA, and filtered
//! backprojection.
//!
//! All three iterative solvers minimize the same objective
//! (1/2)||Am - f||^2 + lambda ||psi m||_1 and can therefore be checked
//! against each other and against a long-run proximal-gradient oracle.

mod fbp;

pub use fbp::fbp_reconstruct;

use crate::error::{Error, Result};
use crate::operators::{operator_norm, LinearOperator};
use crate::tensor::Tensor;
use crate::transforms::SparsityConfig;

/// Iterates and diagnostics of one solver run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub m: Tensor,
    /// PDHG extrapolated iterate.
    pub m_bar: Option<Tensor>,
    /// PDHG dual variable (measurement domain).
    pub d: Option<Tensor>,
    /// ADMM auxiliary variable.
    pub z: Option<Tensor>,
    /// ADMM scaled multiplier.
    pub beta: Option<Tensor>,
    pub iteration: usize,
    pub objective_history: Vec<f64>,
    pub gap_history: Vec<f64>,
}

impl SolverState {
    fn new(m: Tensor) -> Self {
        SolverState {
            m,
            m_bar: None,
            d: None,
            z: None,
            beta: None,
            iteration: 0,
            objective_history: Vec::new(),
            gap_history: Vec::new(),
        }
    }
}

/// (1/2)||Am - f||^2 + lambda ||psi m||_1
pub fn objective(
    op: &dyn LinearOperator,
    f: &Tensor,
    cfg: &SparsityConfig,
    m: &Tensor,
) -> Result<f64> {
    let r = op.apply(m)?.sub(f)?;
    Ok(0.5 * r.norm_sq() + cfg.penalty(m)?)
}

fn check_common(op: &dyn LinearOperator, f: &Tensor, cfg: &SparsityConfig) -> Result<()> {
    op.check_range(f)?;
    if cfg.l_transforms != 1 {
        return Err(Error::Argument(
            "classical solvers support a single transform branch (L = 1)".into(),
        ));
    }
    if (cfg.p - 1.0).abs() > 0.0 {
        return Err(Error::Argument("classical solvers require p = 1".into()));
    }
    Ok(())
}

fn initial_m(op: &dyn LinearOperator, f: &Tensor, init: Option<&Tensor>) -> Result<Tensor> {
    match init {
        Some(m0) => {
            op.check_domain(m0)?;
            Ok(m0.clone_value())
        }
        None => op.adjoint(f),
    }
}

/// Default convergent PDHG step sizes: sigma = tau = 0.99 / ||A||, theta = 1.
pub fn pdhg_defaults(op: &dyn LinearOperator) -> Result<(f64, f64, f64)> {
    let norm = operator_norm(op, 60, 0x9d4e_5u64)?;
    let s = 0.99 / norm.max(1e-12);
    Ok((s, s, 1.0))
}

/// Primal-dual hybrid gradient on the L1-regularized least-squares model.
///
/// Dual update is the closed-form prox of the conjugate L2 data term,
/// d <- (d + sigma (A m_bar - f)) / (1 + sigma); the primal prox is
/// psi^T soft(psi ., tau lambda). The recorded gap feasibilizes the dual
/// point by scaling, so it is nonnegative at every iteration.
#[allow(clippy::too_many_arguments)]
pub fn pdhg_solve(
    op: &dyn LinearOperator,
    f: &Tensor,
    cfg: &SparsityConfig,
    sigma: f64,
    tau: f64,
    theta_pdhg: f64,
    n_iters: usize,
    init: Option<&Tensor>,
) -> Result<SolverState> {
    check_common(op, f, cfg)?;
    if sigma < 0.0 || tau < 0.0 {
        return Err(Error::Argument(format!(
            "step sizes must be nonnegative, got sigma={sigma}, tau={tau}"
        )));
    }
    if !(0.0..=1.0).contains(&theta_pdhg) {
        return Err(Error::Argument(format!(
            "theta must lie in [0,1], got {theta_pdhg}"
        )));
    }
    let norm = operator_norm(op, 60, 0x9d4e_5u64)?;
    if sigma * tau * norm * norm > 1.0 + 1e-9 {
        return Err(Error::Argument(format!(
            "step-size condition violated: sigma*tau*||A||^2 = {} > 1",
            sigma * tau * norm * norm
        )));
    }

    let m0 = initial_m(op, f, init)?;
    let mut st = SolverState::new(m0.clone_value());
    st.m_bar = Some(m0.clone_value());
    st.d = Some(Tensor::zeros(&f.shape));

    for _ in 0..n_iters {
        let m_prev = st.m.clone_value();
        let m_bar = st.m_bar.take().unwrap();
        let mut d = st.d.take().unwrap();

        // d <- (d + sigma (A m_bar - f)) / (1 + sigma)
        let residual = op.apply(&m_bar)?.sub(f)?;
        d.axpy(sigma, &residual)?;
        let d_new = d.scale(1.0 / (1.0 + sigma));

        // m <- prox_{tau R}(m - tau A^T d)
        let mut u = st.m.clone_value();
        u.axpy(-tau, &op.adjoint(&d_new)?)?;
        let m_new = cfg.prox(&u, tau)?;

        // m_bar <- m + theta (m - m_prev)
        let mut bar = m_new.clone_value();
        let diff = m_new.sub(&m_prev)?;
        bar.axpy(theta_pdhg, &diff)?;

        st.iteration += 1;
        st.objective_history
            .push(objective(op, f, cfg, &m_new)?);
        st.gap_history
            .push(pdhg_gap(op, f, cfg, &m_new, &d_new)?);
        st.m = m_new;
        st.m_bar = Some(bar);
        st.d = Some(d_new);
    }
    Ok(st)
}

/// Primal-dual gap with a feasibilized (scaled) dual point; nonnegative by
/// weak duality and shrinks to zero at the saddle point.
pub fn pdhg_gap(
    op: &dyn LinearOperator,
    f: &Tensor,
    cfg: &SparsityConfig,
    m: &Tensor,
    d: &Tensor,
) -> Result<f64> {
    let primal = objective(op, f, cfg, m)?;
    let scale = if cfg.lambda == 0.0 {
        0.0
    } else {
        let v = cfg.apply(&op.adjoint(d)?)?;
        let vmax = v.max_abs();
        if vmax <= cfg.lambda {
            1.0
        } else {
            cfg.lambda / vmax
        }
    };
    // D(d) = -1/2 ||d||^2 - <d, f> on the feasible set
    let dual = -0.5 * scale * scale * d.norm_sq() - scale * d.dot(f)?;
    Ok(primal - dual)
}

/// ADMM with an exact M-subproblem solve.
///
/// The m-update solves (A^T A + rho I) m = A^T f + rho (z - beta): a
/// diagonal k-space division for Fourier encodings, conjugate gradient
/// (20 steps, tol 1e-8) for fan-beam. The z-update is the exact prox
/// psi^T soft(psi(m + beta), lambda / rho); beta accumulates m - z.
pub fn admm_solve(
    op: &dyn LinearOperator,
    f: &Tensor,
    cfg: &SparsityConfig,
    rho: f64,
    n_iters: usize,
    init: Option<&Tensor>,
) -> Result<SolverState> {
    check_common(op, f, cfg)?;
    if rho <= 0.0 {
        return Err(Error::Argument(format!("rho must be positive, got {rho}")));
    }
    let m0 = initial_m(op, f, init)?;
    let atf = op.adjoint(f)?;
    let mut st = SolverState::new(m0.clone_value());
    st.z = Some(m0.clone_value());
    st.beta = Some(Tensor::zeros(&m0.shape));

    for _ in 0..n_iters {
        let z = st.z.take().unwrap();
        let beta = st.beta.take().unwrap();

        // m-update: exact solve of the quadratic subproblem
        let mut rhs = atf.clone_value();
        let zb = z.sub(&beta)?;
        rhs.axpy(rho, &zb)?;
        let m_new = op.normal_solve(&rhs, rho)?;

        // z-update: prox of the regularizer at m + beta
        let mb = m_new.add(&beta)?;
        let z_new = cfg.prox(&mb, 1.0 / rho)?;

        // multiplier update
        let mut beta_new = beta;
        beta_new.axpy(1.0, &m_new.sub(&z_new)?)?;

        st.iteration += 1;
        st.objective_history
            .push(objective(op, f, cfg, &m_new)?);
        st.m = m_new;
        st.z = Some(z_new);
        st.beta = Some(beta_new);
    }
    Ok(st)
}

/// Iterative shrinkage-thresholding: gradient step on the data term, then
/// the transform-domain soft threshold. Monotone for
/// rho_step <= 1 / ||A||^2.
pub fn ista_solve(
    op: &dyn LinearOperator,
    f: &Tensor,
    cfg: &SparsityConfig,
    rho_step: f64,
    n_iters: usize,
    init: Option<&Tensor>,
) -> Result<SolverState> {
    check_common(op, f, cfg)?;
    if rho_step <= 0.0 {
        return Err(Error::Argument(format!(
            "step size must be positive, got {rho_step}"
        )));
    }
    let norm = operator_norm(op, 60, 0x9d4e_5u64)?;
    if rho_step * norm * norm > 1.0 + 1e-9 {
        return Err(Error::Argument(format!(
            "step too large: rho * ||A||^2 = {} > 1",
            rho_step * norm * norm
        )));
    }
    let m0 = initial_m(op, f, init)?;
    let mut st = SolverState::new(m0);

    for _ in 0..n_iters {
        // r = m - rho A^T (A m - f)
        let residual = op.apply(&st.m)?.sub(f)?;
        let mut r = st.m.clone_value();
        r.axpy(-rho_step, &op.adjoint(&residual)?)?;
        // m = psi^T soft(psi r, rho lambda)
        let m_new = cfg.prox(&r, rho_step)?;

        st.iteration += 1;
        st.objective_history
            .push(objective(op, f, cfg, &m_new)?);
        st.m = m_new;
    }
    Ok(st)
}
