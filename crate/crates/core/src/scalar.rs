//! The scalar abstraction shared by plain floating point evaluation and the
//! reverse-mode tape.
//!
//! Every model computation is written once against [`Real`] and instantiated
//! with `f64` (verification), `f32` (fast inference) or
//! [`Var`](crate::autodiff::Var) (gradients). Branching decisions such as
//! ReLU gating, sorting and max pooling are taken on [`Real::to_f64`], so the
//! tape simply records whichever branch the forward pass selected.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lift a constant. On the tape this produces an untracked value.
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    #[inline]
    fn relu(self) -> Self {
        if self.to_f64() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }

    #[inline]
    fn sigmoid(self) -> Self {
        let x = self.to_f64();
        // Split on sign so exp never overflows.
        if x >= 0.0 {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    #[inline]
    fn square(self) -> Self {
        self * self
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

macro_rules! impl_real_float {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
        }
    };
}

impl_real_float!(f32);
impl_real_float!(f64);

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot(a, a)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

/// Sum of `values` taken in ascending order of value, so the result does not
/// depend on the order the values were supplied in.
pub fn ordered_sum<T: Real>(values: &[T]) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.to_f64().total_cmp(&b.to_f64()));
    sorted.into_iter().fold(T::zero(), |acc, v| acc + v)
}

pub fn lift<T: Real>(values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| T::from_f64(v)).collect()
}

pub fn values<T: Real>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(1000.0f64.sigmoid(), 1.0);
        assert_eq!((-1000.0f64).sigmoid(), 0.0);
        assert!((0.0f64.sigmoid() - 0.5).abs() < 1e-16);
    }

    #[test]
    fn ordered_sum_ignores_input_order() {
        let a = [1e16f64, 1.0, -1e16, 3.5, 1e-3];
        let mut b = a;
        b.reverse();
        assert_eq!(ordered_sum(&a).to_bits(), ordered_sum(&b).to_bits());
    }
}
