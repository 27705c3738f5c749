//! Bivariate Gaussian representations of oriented boxes.
//!
//! A box `(cx, cy, w, h, theta)` maps to the Gaussian with mean `(cx, cy)`
//! and covariance `R(theta) diag(w^2/4, h^2/4) R(theta)^T`. This encoding is
//! periodic in the angle, so equivalent box parameterizations produce the
//! same distribution.
//!
//! The plain mapping is isotropic for squares: a square and its 45-degree
//! rotation share one Gaussian even though their overlap is visibly partial.
//! For square-like boxes the anisotropic variant breaks the tie by rotating
//! with `4 theta` and stretching the eigenvalues to `h' = h (1 + cos 4theta / delta)`
//! and `w' = w (1 - cos 4theta / delta)`, which keeps every angle-periodicity
//! property while separating rotations that are not multiples of pi/2.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::geometry::ObbBox;

/// Decides when a box counts as square-like and how strongly the anisotropic
/// scaling stretches its eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareLikePolicy {
    /// Aspect-ratio threshold (`>= 1`); boxes with `w/h <= tau` are square-like.
    pub tau: f64,
    /// Eigenvalue scaling divisor; must be `> 1` so both scaled sizes stay positive.
    pub delta: f64,
}

impl Default for SquareLikePolicy {
    fn default() -> Self {
        Self {
            tau: 1.1,
            delta: 5.0,
        }
    }
}

impl SquareLikePolicy {
    fn check(&self) -> Result<()> {
        if !(self.delta > 1.0) {
            return Err(Error::InvalidPolicy { delta: self.delta });
        }
        Ok(())
    }
}

/// Bivariate Gaussian with a symmetric positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    /// Validates symmetry (to 1e-12, relative to the matrix scale) and
    /// positive definiteness, then stores an exactly symmetric matrix.
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGaussian("non-finite entry".into()));
        }
        let scale = cov.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        if (cov[0][1] - cov[1][0]).abs() > 1e-12 * scale {
            return Err(Error::InvalidGaussian(format!(
                "covariance not symmetric: {} vs {}",
                cov[0][1], cov[1][0]
            )));
        }
        let off = 0.5 * (cov[0][1] + cov[1][0]);
        let cov = [[cov[0][0], off], [off, cov[1][1]]];
        let det = cov[0][0] * cov[1][1] - off * off;
        if cov[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::InvalidGaussian(format!(
                "covariance not positive definite (c00={}, det={det})",
                cov[0][0]
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Internal constructor for covariances that are symmetric and positive
    /// definite by construction.
    pub(crate) fn from_parts(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        debug_assert_eq!(cov[0][1], cov[1][0]);
        Self { mean, cov }
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.cov[0][0] + self.cov[1][1]
    }

    /// Eigenvalues of the covariance, smaller first.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.cov[0][0] - self.cov[1][1]);
        let radius = (half_diff * half_diff + self.cov[0][1] * self.cov[0][1]).sqrt();
        [half_tr - radius, half_tr + radius]
    }
}

/// Covariance of the plain Gaussian encoding, on raw box parameters.
///
/// Works for any `(w, h, theta)` without long-edge normalization; swapping
/// the sides while turning a quarter rotation leaves the result unchanged.
pub fn obb_cov(w: f64, h: f64, theta: f64) -> [[f64; 2]; 2] {
    cov_generic(w, h, theta)
}

/// Covariance of the anisotropic encoding, on raw box parameters.
pub fn anisotropic_cov(w: f64, h: f64, theta: f64, delta: f64) -> [[f64; 2]; 2] {
    aniso_cov_generic(w, h, theta, delta)
}

pub(crate) fn cov_generic<T: Scalar>(w: T, h: T, theta: T) -> [[T; 2]; 2] {
    let quarter = T::from_f64(0.25);
    let a = w * w * quarter;
    let b = h * h * quarter;
    let s = theta.sin();
    let c = theta.cos();
    let c2 = c * c;
    let s2 = s * s;
    let off = (a - b) * c * s;
    [[a * c2 + b * s2, off], [off, a * s2 + b * c2]]
}

pub(crate) fn aniso_cov_generic<T: Scalar>(w: T, h: T, theta: T, delta: f64) -> [[T; 2]; 2] {
    let four = T::from_f64(4.0);
    let half = T::from_f64(0.5);
    let one = T::from_f64(1.0);
    let inv_delta = T::from_f64(1.0 / delta);
    let c4 = (four * theta).cos();
    let s4 = (four * theta).sin();
    // Scaled eigenvalues; positive whenever delta > 1.
    let h_scaled = h * (one + c4 * inv_delta);
    let w_scaled = w * (one - c4 * inv_delta);
    // Square root factor R(4 theta) diag(h'/2, w'/2) R(4 theta)^T.
    let p = half * h_scaled;
    let q = half * w_scaled;
    let a = c4 * c4 * p + s4 * s4 * q;
    let b = c4 * s4 * (p - q);
    let c = s4 * s4 * p + c4 * c4 * q;
    // Square of the symmetric factor.
    let off = b * (a + c);
    [[a * a + b * b, off], [off, b * b + c * c]]
}

/// Plain Gaussian encoding of a box.
pub fn obb_to_gaussian(b: &ObbBox) -> Gaussian2 {
    Gaussian2::from_parts([b.cx(), b.cy()], cov_generic(b.w(), b.h(), b.theta()))
}

/// True iff the box aspect ratio is within the policy threshold.
pub fn is_square_like(b: &ObbBox, policy: &SquareLikePolicy) -> bool {
    b.aspect_ratio() <= policy.tau
}

/// Anisotropic Gaussian encoding of a box. Intended for square-like boxes,
/// where the plain encoding cannot distinguish rotations.
pub fn obb_to_anisotropic_gaussian(b: &ObbBox, policy: &SquareLikePolicy) -> Result<Gaussian2> {
    policy.check()?;
    Ok(Gaussian2::from_parts(
        [b.cx(), b.cy()],
        aniso_cov_generic(b.w(), b.h(), b.theta(), policy.delta),
    ))
}

/// Converts a prediction/ground-truth pair, switching both to the
/// anisotropic encoding when the ground truth is square-like.
pub fn gaussian_for_pair(
    pred: &ObbBox,
    gt: &ObbBox,
    policy: &SquareLikePolicy,
) -> Result<(Gaussian2, Gaussian2)> {
    if is_square_like(gt, policy) {
        Ok((
            obb_to_anisotropic_gaussian(pred, policy)?,
            obb_to_anisotropic_gaussian(gt, policy)?,
        ))
    } else {
        Ok((obb_to_gaussian(pred), obb_to_gaussian(gt)))
    }
}
