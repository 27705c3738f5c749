//! Statistical distances between box Gaussians and the regression losses
//! built on them.
//!
//! The primary loss is the Bhattacharyya-distance loss
//! `L = 1 - 1 / (1 + sqrt(D_B))`, where
//!
//! ```text
//! D_B = alpha/8 * (mu_p - mu_t)^T S^-1 (mu_p - mu_t)
//!     + 1/2 * ln( det S / sqrt(det S_p * det S_t) ),    S = (S_p + S_t) / 2
//! ```
//!
//! The `alpha` factor boosts the mean term so the loss tracks IoU-style
//! overlap; the covariance term is the log-ratio that is nonnegative by the
//! arithmetic-geometric determinant inequality. Unlike the KLD baseline the
//! distance is symmetric, and the same `1 - 1/(1 + sqrt(d))` map is applied
//! to the KLD and Wasserstein baselines so all three losses live on a common
//! `[0, 1)` scale.

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::gaussian::{
    aniso_cov_generic, cov_generic, is_square_like, Gaussian2, SquareLikePolicy,
};
use crate::geometry::ObbBox;

/// Determinant floor below which an average covariance is treated as
/// numerically singular. Far below anything reachable from boxes with sizes
/// of 1e-2 or more.
pub const DET_EPS: f64 = 1e-24;

/// Below this the distance is treated as an exact minimum and the gradient
/// is defined as zero (the loss has a square-root cusp there).
const GRAD_FLOOR: f64 = 1e-30;

/// Parameters of the Bhattacharyya loss and its verification harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceConfig {
    /// Multiplier on the Mahalanobis (mean-difference) term.
    pub alpha: f64,
    /// Relative step used by finite-difference gradient verification.
    pub grad_step: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            grad_step: 1e-5,
        }
    }
}

/// Partial derivatives of a scalar loss with respect to the predicted box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossGradient {
    pub d_cx: f64,
    pub d_cy: f64,
    pub d_w: f64,
    pub d_h: f64,
    pub d_theta: f64,
}

impl LossGradient {
    pub fn from_array(g: [f64; 5]) -> Self {
        Self {
            d_cx: g[0],
            d_cy: g[1],
            d_w: g[2],
            d_h: g[3],
            d_theta: g[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.d_cx, self.d_cy, self.d_w, self.d_h, self.d_theta]
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Maps a nonnegative distance onto `[0, 1)`: `1 - 1 / (1 + sqrt(d))`.
/// Strictly increasing, zero iff the distance is zero.
pub fn distance_to_loss(d: f64) -> f64 {
    1.0 - 1.0 / (1.0 + d.sqrt())
}

fn det2<T: Scalar>(m: [[T; 2]; 2]) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// The Bhattacharyya distance, generic so the same expression yields values
/// (`f64`) and gradients (`Dual`). The target side is always plain `f64`.
fn bd_core<T: Scalar>(
    mean_p: [T; 2],
    cov_p: [[T; 2]; 2],
    mean_t: [f64; 2],
    cov_t: [[f64; 2]; 2],
    alpha: f64,
) -> Result<T> {
    let half = T::from_f64(0.5);
    let avg = |i: usize, j: usize| (cov_p[i][j] + T::from_f64(cov_t[i][j])) * half;
    let a = avg(0, 0);
    let b = avg(0, 1);
    let c = avg(1, 1);
    let det_avg = a * c - b * b;
    if det_avg.primal() <= DET_EPS {
        return Err(Error::SingularCovariance {
            det: det_avg.primal(),
            floor: DET_EPS,
        });
    }

    let dx = mean_p[0] - T::from_f64(mean_t[0]);
    let dy = mean_p[1] - T::from_f64(mean_t[1]);
    // (dx, dy)^T S^-1 (dx, dy) via the adjugate of the 2x2 average.
    let quad = (c * dx * dx - T::from_f64(2.0) * b * dx * dy + a * dy * dy) / det_avg;
    let quad = if quad.primal() < 0.0 {
        T::from_f64(0.0)
    } else {
        quad
    };

    let det_p = det2(cov_p);
    let det_t = cov_t[0][0] * cov_t[1][1] - cov_t[0][1] * cov_t[1][0];
    let log_term = (det_avg / (det_p * T::from_f64(det_t)).sqrt()).ln();

    let d = T::from_f64(alpha * 0.125) * quad + half * log_term;
    // Mathematically nonnegative; clamp away rounding noise.
    Ok(if d.primal() < 0.0 { T::from_f64(0.0) } else { d })
}

/// Bhattacharyya distance between two box Gaussians, with the configured
/// `alpha` on the mean term. Symmetric and nonnegative.
pub fn bhattacharyya_distance(p: &Gaussian2, t: &Gaussian2, cfg: &DivergenceConfig) -> Result<f64> {
    bd_core(p.mean(), p.cov(), t.mean(), t.cov(), cfg.alpha)
}

/// Bhattacharyya-distance loss in `[0, 1)`.
pub fn bd_loss(p: &Gaussian2, t: &Gaussian2, cfg: &DivergenceConfig) -> Result<f64> {
    Ok(distance_to_loss(bhattacharyya_distance(p, t, cfg)?))
}

/// Kullback-Leibler divergence `D_KL(p || t)` between two bivariate
/// Gaussians. Asymmetric in its arguments.
pub fn kld(p: &Gaussian2, t: &Gaussian2) -> Result<f64> {
    let det_t = t.det();
    if det_t <= DET_EPS {
        return Err(Error::SingularCovariance {
            det: det_t,
            floor: DET_EPS,
        });
    }
    let ct = t.cov();
    let cp = p.cov();
    let inv_t = [
        [ct[1][1] / det_t, -ct[0][1] / det_t],
        [-ct[0][1] / det_t, ct[0][0] / det_t],
    ];
    let dx = p.mean()[0] - t.mean()[0];
    let dy = p.mean()[1] - t.mean()[1];
    let quad = inv_t[0][0] * dx * dx + 2.0 * inv_t[0][1] * dx * dy + inv_t[1][1] * dy * dy;
    let trace = inv_t[0][0] * cp[0][0]
        + inv_t[0][1] * cp[1][0]
        + inv_t[1][0] * cp[0][1]
        + inv_t[1][1] * cp[1][1];
    let d = 0.5 * quad + 0.5 * trace - 0.5 * (p.det() / det_t).ln() - 1.0;
    Ok(d.max(0.0))
}

/// Squared 2-Wasserstein distance between two bivariate Gaussians.
///
/// Uses the closed form for 2x2 SPD matrices: the coupling trace
/// `tr((S_p^1/2 S_t S_p^1/2)^1/2)` reduces to
/// `sqrt(tr(S_p S_t) + 2 sqrt(det S_p det S_t))`.
pub fn gwd(p: &Gaussian2, t: &Gaussian2) -> Result<f64> {
    let det_p = p.det();
    let det_t = t.det();
    if det_p <= DET_EPS || det_t <= DET_EPS {
        return Err(Error::SingularCovariance {
            det: det_p.min(det_t),
            floor: DET_EPS,
        });
    }
    let cp = p.cov();
    let ct = t.cov();
    let dx = p.mean()[0] - t.mean()[0];
    let dy = p.mean()[1] - t.mean()[1];
    // Grouped so every subexpression is symmetric under argument swap,
    // keeping the result bit-identical in both directions.
    let cross = cp[0][0] * ct[0][0] + cp[1][1] * ct[1][1] + cp[0][1] * ct[1][0] + cp[1][0] * ct[0][1];
    let coupling = (cross + 2.0 * (det_p * det_t).sqrt()).sqrt();
    let trace_sum = p.trace() + t.trace();
    let d = dx * dx + dy * dy + (trace_sum - 2.0 * coupling);
    Ok(d.max(0.0))
}

/// KLD baseline on the common `[0, 1)` loss scale.
pub fn kld_loss(p: &Gaussian2, t: &Gaussian2) -> Result<f64> {
    Ok(distance_to_loss(kld(p, t)?))
}

/// Wasserstein baseline on the common `[0, 1)` loss scale.
pub fn gwd_loss(p: &Gaussian2, t: &Gaussian2) -> Result<f64> {
    Ok(distance_to_loss(gwd(p, t)?))
}

fn check_pred_params(params: [f64; 5]) -> Result<()> {
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBox("non-finite predicted parameter".into()));
    }
    if params[2] <= 0.0 || params[3] <= 0.0 {
        return Err(Error::InvalidBox(format!(
            "predicted sizes must be positive (w={}, h={})",
            params[2], params[3]
        )));
    }
    Ok(())
}

/// Bhattacharyya loss as a smooth function of raw predicted parameters
/// `[cx, cy, w, h, theta]` against a fixed ground truth.
///
/// No long-edge normalization is applied to the prediction, so the value is
/// differentiable in the parameters wherever `w, h > 0`; the encoding branch
/// (plain vs anisotropic) is chosen by the ground truth alone. For a
/// prediction already in normalized form this equals
/// `bd_loss` composed with [`gaussian_for_pair`].
pub fn bd_loss_params(
    pred: [f64; 5],
    gt: &ObbBox,
    policy: &SquareLikePolicy,
    cfg: &DivergenceConfig,
) -> Result<f64> {
    check_pred_params(pred)?;
    let aniso = is_square_like(gt, policy);
    let (gt_gauss, cov_p) = if aniso {
        let g = crate::gaussian::obb_to_anisotropic_gaussian(gt, policy)?;
        (g, aniso_cov_generic(pred[2], pred[3], pred[4], policy.delta))
    } else {
        let g = crate::gaussian::obb_to_gaussian(gt);
        (g, cov_generic(pred[2], pred[3], pred[4]))
    };
    let d = bd_core(
        [pred[0], pred[1]],
        cov_p,
        gt_gauss.mean(),
        gt_gauss.cov(),
        cfg.alpha,
    )?;
    Ok(distance_to_loss(d))
}

/// Bhattacharyya loss and its gradient with respect to the predicted box
/// parameters, by forward-mode differentiation through the whole encoding
/// and distance pipeline.
///
/// At an exact minimum (`D_B = 0`) the loss has a square-root cusp; the
/// gradient is defined as zero there.
pub fn bd_loss_grad(
    pred: &ObbBox,
    gt: &ObbBox,
    policy: &SquareLikePolicy,
    cfg: &DivergenceConfig,
) -> Result<(f64, LossGradient)> {
    let params = pred.params();
    let p: [Dual<5>; 5] = std::array::from_fn(|i| Dual::variable(params[i], i));

    let aniso = is_square_like(gt, policy);
    let (gt_gauss, cov_p) = if aniso {
        let g = crate::gaussian::obb_to_anisotropic_gaussian(gt, policy)?;
        (g, aniso_cov_generic(p[2], p[3], p[4], policy.delta))
    } else {
        let g = crate::gaussian::obb_to_gaussian(gt);
        (g, cov_generic(p[2], p[3], p[4]))
    };
    let d = bd_core([p[0], p[1]], cov_p, gt_gauss.mean(), gt_gauss.cov(), cfg.alpha)?;

    if d.value <= GRAD_FLOOR {
        return Ok((distance_to_loss(d.value), LossGradient::default()));
    }
    let one = Dual::constant(1.0);
    let loss = one - one / (one + d.sqrt());
    Ok((loss.value, LossGradient::from_array(loss.grad)))
}
