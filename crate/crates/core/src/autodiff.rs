//! Minimal tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation on tracked [`Var`]s as a node with at
//! most two parents and the local partial derivatives. Constants (data,
//! simplex geometry) carry no tape and cost nothing. One backward sweep over
//! the tape yields the adjoint of every recorded node.
//!
//! ```
//! use deh_core::autodiff::Tape;
//! use deh_core::scalar::Real;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.var(3.0);
//! let y = x * x + x.exp();
//! let grads = tape.gradient(y);
//! assert!((grads.wrt(x) - (6.0 + 3f64.exp())).abs() < 1e-12);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

use crate::scalar::Real;

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node<F> {
    parents: [u32; 2],
    partials: [F; 2],
}

pub struct Tape<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    /// A tracked leaf.
    pub fn var(&self, value: F) -> Var<'_, F> {
        let index = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [F::zero(); 2],
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn vars(&self, values: &[F]) -> Vec<Var<'_, F>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded nodes. Existing `Var`s must not be used afterwards.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    #[inline]
    fn push(&self, node: Node<F>) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        assert!(index < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        index as u32
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_, F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![F::zero(); nodes.len()];
        if output.index == NO_PARENT {
            return Gradients { adjoints };
        }
        adjoints[output.index as usize] = F::one();
        for i in (0..=output.index as usize).rev() {
            let adj = adjoints[i];
            if adj == F::zero() {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoints[p as usize] = adjoints[p as usize] + adj * node.partials[k];
                }
            }
        }
        Gradients { adjoints }
    }
}

pub struct Gradients<F> {
    adjoints: Vec<F>,
}

impl<F: Float> Gradients<F> {
    /// Derivative of the output with respect to `v`; zero for constants.
    pub fn wrt(&self, v: Var<'_, F>) -> F {
        if v.index == NO_PARENT {
            F::zero()
        } else {
            self.adjoints[v.index as usize]
        }
    }
}

/// A value that may be tracked on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, F> {
    tape: Option<&'t Tape<F>>,
    index: u32,
    value: F,
}

impl<'t, F: Float> Var<'t, F> {
    pub fn constant(value: F) -> Self {
        Var {
            tape: None,
            index: NO_PARENT,
            value,
        }
    }

    pub fn value(&self) -> F {
        self.value
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_some()
    }

    #[inline]
    fn unary(self, value: F, d: F) -> Self {
        match self.tape {
            None => Self::constant(value),
            Some(tape) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    parents: [self.index, NO_PARENT],
                    partials: [d, F::zero()],
                }),
                value,
            },
        }
    }

    #[inline]
    fn binary(self, rhs: Self, value: F, da: F, db: F) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::constant(value),
            (Some(_), None) => self.unary(value, da),
            (None, Some(_)) => rhs.unary(value, db),
            (Some(tape), Some(_)) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    parents: [self.index, rhs.index],
                    partials: [da, db],
                }),
                value,
            },
        }
    }
}

impl<F: Float> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value.to_f64().unwrap_or(f64::NAN);
        if self.tape.is_some() {
            write!(f, "Var({v}, #{})", self.index)
        } else {
            write!(f, "Const({v})")
        }
    }
}

impl<'t, F: Float> Add for Var<'t, F> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, F::one(), F::one())
    }
}

impl<'t, F: Float> Sub for Var<'t, F> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, F::one(), -F::one())
    }
}

impl<'t, F: Float> Mul for Var<'t, F> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t, F: Float> Div for Var<'t, F> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, F::one() / rhs.value, -q / rhs.value)
    }
}

impl<'t, F: Float> Neg for Var<'t, F> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.value, -F::one())
    }
}

impl<'t, F: Float + fmt::Debug> Real for Var<'t, F> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Var::constant(F::from(v).expect("representable constant"))
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self.value.to_f64().expect("finite conversion")
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        // The derivative at 0 is unbounded; report 0 rather than poison the
        // tape with infinities.
        let d = if s > F::zero() {
            F::from(0.5).unwrap() / s
        } else {
            F::zero()
        };
        self.unary(s, d)
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    #[inline]
    fn ln(self) -> Self {
        self.unary(self.value.ln(), F::one() / self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<Fn1: Fn(f64) -> f64>(f: Fn1, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let fs: Vec<(fn(Var<f64>) -> Var<f64>, fn(f64) -> f64)> = vec![
            (|x| x * x * x, |x| x * x * x),
            (|x| x.exp() / (x + Var::from_f64(2.0)), |x| x.exp() / (x + 2.0)),
            (|x| (x * x + Var::from_f64(1.0)).sqrt(), |x| (x * x + 1.0).sqrt()),
            (|x| x.sigmoid(), |x| 1.0 / (1.0 + (-x).exp())),
            (|x| -(x.ln()) - x, |x| -x.ln() - x),
            (|x| x.relu() * x, |x| x.max(0.0) * x),
        ];
        for (i, (fv, ff)) in fs.iter().enumerate() {
            for &x0 in &[0.3, 1.7, 2.9] {
                let tape = Tape::new();
                let x = tape.var(x0);
                let y = fv(x);
                assert!((y.value() - ff(x0)).abs() < 1e-12);
                let g = tape.gradient(y).wrt(x);
                let fd = central(ff, x0);
                assert!((g - fd).abs() < 1e-6, "case {i} at {x0}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn norm_gradient_is_unit_direction() {
        let tape = Tape::new();
        let y = tape.vars(&[3.0, -4.0, 12.0]);
        let len = crate::scalar::norm(&y);
        let grads = tape.gradient(len);
        let expected = [3.0 / 13.0, -4.0 / 13.0, 12.0 / 13.0];
        for (v, e) in y.iter().zip(expected) {
            assert!((grads.wrt(*v) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_stay_off_the_tape() {
        let tape = Tape::<f64>::new();
        let a = Var::from_f64(2.0);
        let b = Var::from_f64(5.0);
        let c = a * b + a;
        assert!(!c.is_tracked());
        assert!(tape.is_empty());
        let x = tape.var(1.0);
        let y = x * a;
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.gradient(y).wrt(x), 2.0);
        assert_eq!(tape.gradient(y).wrt(a), 0.0);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let s = x * x;
        let y = s * s + s; // x⁴ + x²
        let g = tape.gradient(y).wrt(x);
        assert!((g - (4.0 * 8.0 + 4.0)).abs() < 1e-12);
    }
}
