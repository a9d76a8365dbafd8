//! Piecewise-linear radial functions built from triangular basis functions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputTransform {
    Identity,
    Sigmoid,
}

/// `d ↦ transform(Σ_k φ_k ρ_k(d))` with triangular knots every `Δ` and a
/// saturating last basis function that covers everything beyond `(N−1)Δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialFunction<T = f64> {
    coefficients: Vec<T>,
    knot_spacing: T,
    transform: OutputTransform,
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Value of the k-th basis function out of `n` at distance `d`.
pub fn basis<T: Scalar>(k: usize, n: usize, spacing: T, d: T) -> T {
    let u = d / spacing;
    let kf = T::of(k as f64);
    if k + 1 < n {
        (T::one() - (u - kf).abs()).max(T::zero())
    } else {
        (T::one() + (u - kf)).max(T::zero()).min(T::one())
    }
}

impl<T: Scalar> RadialFunction<T> {
    pub fn new(coefficients: Vec<T>, knot_spacing: T, transform: OutputTransform) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "radial function needs at least 2 knots, got {}",
                coefficients.len()
            )));
        }
        if !(knot_spacing > T::zero()) || !knot_spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "knot spacing must be positive, got {knot_spacing}"
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite RBF coefficient".into()));
        }
        Ok(RadialFunction {
            coefficients,
            knot_spacing,
            transform,
        })
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [T] {
        &mut self.coefficients
    }

    pub fn knot_spacing(&self) -> T {
        self.knot_spacing
    }

    pub fn transform(&self) -> OutputTransform {
        self.transform
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Support radius `(N−1)Δ`; beyond it the function is constant.
    pub fn radius(&self) -> T {
        T::of((self.len() - 1) as f64) * self.knot_spacing
    }

    /// Linear combination before the output transform. At most two basis
    /// functions overlap any `d`, so this is a two-term interpolation.
    pub fn raw(&self, d: T) -> T {
        let n = self.coefficients.len();
        let u = d / self.knot_spacing;
        let last = T::of((n - 1) as f64);
        if u >= last {
            return self.coefficients[n - 1];
        }
        let j = u.floor();
        let t = u - j;
        let j = j.to_usize().unwrap_or(0);
        self.coefficients[j] * (T::one() - t) + self.coefficients[j + 1] * t
    }

    pub fn eval(&self, d: T) -> Result<T> {
        if !(d >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "radial distance must be non-negative, got {d}"
            )));
        }
        Ok(self.eval_unchecked(d))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, d: T) -> T {
        let v = self.raw(d);
        match self.transform {
            OutputTransform::Identity => v,
            OutputTransform::Sigmoid => sigmoid(v),
        }
    }
}
