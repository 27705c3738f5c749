//! Forward-mode automatic differentiation on fixed-size dual numbers.
//!
//! A [`Dual<N>`] carries a value together with its gradient with respect to
//! `N` seed variables, so one pass through a computation yields all `N`
//! partial derivatives. The [`Scalar`] trait lets the same numeric code run
//! on plain `f64` (values only) and on duals (values plus derivatives),
//! which keeps the loss formulas written exactly once.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric scalar usable by the generic box/Gaussian/loss pipelines.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// The underlying value, gradient part discarded.
    fn primal(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn primal(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Dual number with an `N`-dimensional gradient part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// A constant: zero derivative with respect to every seed variable.
    #[inline]
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: [0.0; N],
        }
    }

    /// The `index`-th seed variable (derivative 1 in its own direction).
    #[inline]
    pub fn variable(value: f64, index: usize) -> Self {
        let mut grad = [0.0; N];
        grad[index] = 1.0;
        Self { value, grad }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g += r;
        }
        Self {
            value: self.value + rhs.value,
            grad,
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g -= r;
        }
        Self {
            value: self.value - rhs.value,
            grad,
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = self.grad[i] * rhs.value + self.value * rhs.grad[i];
        }
        Self {
            value: self.value * rhs.value,
            grad,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        // True division for the value part; it must match an f64 evaluation
        // of the same expression exactly.
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = (self.grad[i] - value * rhs.grad[i]) * inv;
        }
        Self { value, grad }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g = -*g;
        }
        Self {
            value: -self.value,
            grad,
        }
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }

    #[inline]
    fn primal(self) -> f64 {
        self.value
    }

    // sin/cos call the separate f64 functions rather than sin_cos so the
    // value part matches a plain f64 evaluation bit for bit.
    #[inline]
    fn sin(self) -> Self {
        let c = self.value.cos();
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= c;
        }
        Self {
            value: self.value.sin(),
            grad,
        }
    }

    #[inline]
    fn cos(self) -> Self {
        let s = self.value.sin();
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= -s;
        }
        Self {
            value: self.value.cos(),
            grad,
        }
    }

    #[inline]
    fn ln(self) -> Self {
        let inv = 1.0 / self.value;
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Self {
            value: self.value.ln(),
            grad,
        }
    }

    #[inline]
    fn sqrt(self) -> Self {
        let root = self.value.sqrt();
        let scale = 0.5 / root;
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        Self { value: root, grad }
    }
}
