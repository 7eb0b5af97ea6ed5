//! Spherical neurons and the equivariant hypersphere.
//!
//! A point `x ∈ Rⁿ` is embedded as `X = (x, −1, −½‖x‖²)` and a (possibly
//! non-normalized) sphere is any `S ∈ R^{n+2}`; the scalar `XᵀS` is positive
//! inside the sphere, zero on it and negative outside.
//!
//! The equivariant hypersphere stacks `n + 1` rotated copies of `S`, one per
//! simplex vertex, into the `(n+1)×(n+2)` bank
//!
//! ```text
//! row_i = (R_Oᵀ · R_Ti · R_O · S)ᵀ
//! ```
//!
//! where `R_O` turns the sphere centre onto vertex 0 and `R_Ti` turns vertex 0
//! onto vertex `i` (rotations act on the first `n` coordinates only). For any
//! `R ∈ O(n)` the output then transforms by the orthogonal
//! `V = Mᵀ·R_O·R·R_Oᵀ·M`, which keeps the all-ones vector fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rotation::geodesic_rotation;
use crate::scalar::{lift, norm, norm_sq, Real};
use crate::simplex::SimplexBasis;

/// Below this magnitude a sphere coordinate or a feature norm counts as zero.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// How gradients treat the centre-alignment rotation `R_O`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// `R_O` is a differentiable function of the sphere parameters.
    #[default]
    Full,
    /// `R_O` is rebuilt from the current values but treated as a constant.
    StopRotation,
}

/// Conformal embedding `(x, −1, −½‖x‖²)`.
pub fn embed<T: Real>(x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() + 2);
    out.extend_from_slice(x);
    out.push(-T::one());
    out.push(norm_sq(x).scale(-0.5));
    out
}

/// Normalized sphere `(c, ½(‖c‖² − r²), 1)`.
pub fn sphere_from_center(center: &[f64], radius: f64) -> Vec<f64> {
    let mut s = center.to_vec();
    s.push(0.5 * (norm_sq(center) - radius * radius));
    s.push(1.0);
    s
}

/// `XᵀS`: positive inside, zero on, negative outside the sphere.
pub fn sphere_activation<T: Real>(embedded: &[T], sphere: &[T]) -> Result<T> {
    if embedded.len() != sphere.len() {
        return Err(Error::DimensionMismatch {
            expected: sphere.len(),
            got: embedded.len(),
        });
    }
    Ok(crate::scalar::dot(embedded, sphere))
}

/// Centre of a non-normalized sphere.
///
/// With a usable last coordinate this is `(s_1..s_n)/s_{n+2}`. Otherwise only
/// the direction `(s_1..s_n)` is returned, which is all the rotation `R_O`
/// needs.
pub fn sphere_center(sphere: &[f64]) -> Result<Vec<f64>> {
    if sphere.len() < 3 {
        return Err(Error::InvalidDimension {
            got: sphere.len(),
            reason: "a sphere in Rⁿ has n + 2 >= 3 parameters",
        });
    }
    let n = sphere.len() - 2;
    let head = &sphere[..n];
    let last = sphere[n + 1];
    if last.abs() > DEGENERACY_EPS {
        Ok(head.iter().map(|v| v / last).collect())
    } else if norm(head) > DEGENERACY_EPS {
        Ok(head.to_vec())
    } else {
        Err(Error::DegenerateSphere)
    }
}

/// One equivariant hypersphere: the bank `B`, the alignment rotation `R_O`,
/// and the optional per-neuron bias and normalization scalar.
#[derive(Clone, Debug)]
pub struct HypersphereNeuron<T> {
    dim: usize,
    sphere: Vec<T>,
    bank: Mat<T>,
    rotation: Mat<T>,
    bias: Option<T>,
    norm_scale: Option<T>,
}

impl<T: Real> HypersphereNeuron<T> {
    pub fn build(sphere: &[T], basis: &SimplexBasis) -> Result<Self> {
        Self::build_with(sphere, basis, GradientMode::Full)
    }

    pub fn build_with(sphere: &[T], basis: &SimplexBasis, mode: GradientMode) -> Result<Self> {
        let n = basis.dim();
        if sphere.len() != n + 2 {
            return Err(Error::DimensionMismatch {
                expected: n + 2,
                got: sphere.len(),
            });
        }
        let head = &sphere[..n];
        let head_len = norm(head).to_f64();
        if !head_len.is_finite() || sphere.iter().any(|v| !v.to_f64().is_finite()) {
            return Err(Error::DegenerateSphere);
        }

        // Orientation of the centre. A centre at the origin makes every row
        // identical, so any rotation will do.
        let rotation = if head_len <= DEGENERACY_EPS {
            if sphere[n + 1].to_f64().abs() <= DEGENERACY_EPS {
                return Err(Error::DegenerateSphere);
            }
            Mat::identity(n)
        } else {
            let first = lift::<T>(&basis.vertex(0));
            match mode {
                GradientMode::Full => geodesic_rotation(head, &first)?,
                GradientMode::StopRotation => {
                    let hv: Vec<f64> = head.iter().map(|v| v.to_f64()).collect();
                    geodesic_rotation(&hv, &basis.vertex(0))?.map(T::from_f64)
                }
            }
        };

        let aligned = rotation.matvec(head)?;
        let mut bank = Mat::zeros(n + 1, n + 2);
        for (i, rot) in basis.simplex_rotations().iter().enumerate() {
            let turned: Vec<T> = (0..n)
                .map(|r| {
                    let mut acc = T::zero();
                    for (c, &a) in aligned.iter().enumerate() {
                        acc = acc + a.scale(rot[(r, c)]);
                    }
                    acc
                })
                .collect();
            let row = rotation.tr_matvec(&turned)?;
            for (c, v) in row.into_iter().enumerate() {
                bank[(i, c)] = v;
            }
            bank[(i, n)] = sphere[n];
            bank[(i, n + 1)] = sphere[n + 1];
        }

        Ok(HypersphereNeuron {
            dim: n,
            sphere: sphere.to_vec(),
            bank,
            rotation,
            bias: None,
            norm_scale: None,
        })
    }

    pub fn with_bias(mut self, bias: T) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_norm_scale(mut self, a: T) -> Self {
        self.norm_scale = Some(a);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sphere(&self) -> &[T] {
        &self.sphere
    }

    /// `B`, `(n+1)×(n+2)`.
    pub fn bank(&self) -> &Mat<T> {
        &self.bank
    }

    /// `R_O`, `n×n`.
    pub fn rotation(&self) -> &Mat<T> {
        &self.rotation
    }

    pub fn bias(&self) -> Option<T> {
        self.bias
    }

    pub fn norm_scale(&self) -> Option<T> {
        self.norm_scale
    }

    /// `B·X`, plus `b·1` when the neuron carries a bias.
    pub fn forward(&self, embedded: &[T]) -> Result<Vec<T>> {
        let y = self.bank.matvec(embedded)?;
        Ok(match self.bias {
            Some(b) => add_bias(&y, b),
            None => y,
        })
    }

    /// Embed `x` and apply [`forward`](Self::forward).
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.forward(&embed(x))
    }
}

/// `Y + b·1`.
pub fn add_bias<T: Real>(y: &[T], b: T) -> Vec<T> {
    y.iter().map(|&v| v + b).collect()
}

/// `Y/‖Y‖`. A (numerically) zero input passes through unchanged and the
/// returned flag is set.
pub fn normalize<T: Real>(y: &[T]) -> (Vec<T>, bool) {
    let len = norm(y);
    if len.to_f64() <= DEGENERACY_EPS {
        return (y.to_vec(), true);
    }
    (y.iter().map(|&v| v / len).collect(), false)
}

/// `Y / (σ(a)(‖Y‖ − 1) + 1)`: blends between the identity (`a → −∞`) and
/// unit normalization (`a → +∞`).
pub fn nonlinear_normalize<T: Real>(y: &[T], a: T) -> Result<Vec<T>> {
    let len = norm(y);
    let denom = a.sigmoid() * (len - T::one()) + T::one();
    let dv = denom.to_f64();
    if dv <= DEGENERACY_EPS || !dv.is_finite() {
        return Err(Error::DegenerateNormalization { denominator: dv });
    }
    Ok(y.iter().map(|&v| v / denom).collect())
}

/// Residual allowed when checking that a supplied transform is orthogonal.
const ORTHOGONAL_INPUT_TOL: f64 = 1e-8;

/// The action of an input-space transform on a neuron's output space.
#[derive(Clone, Debug)]
pub struct OutputRepresentation {
    v: Mat<f64>,
}

impl OutputRepresentation {
    /// `V = Mᵀ·diag(R_O,1)·diag(R,1)·diag(R_O,1)ᵀ·M`.
    pub fn new(
        r: &Mat<f64>,
        neuron: &HypersphereNeuron<f64>,
        basis: &SimplexBasis,
    ) -> Result<Self> {
        let n = basis.dim();
        if r.rows() != n || r.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.rows(),
            });
        }
        let residual = r.orthogonality_residual();
        if residual > ORTHOGONAL_INPUT_TOL {
            return Err(Error::NotOrthogonal { residual });
        }
        let m = basis.change_of_basis();
        let ro = neuron.rotation().embed(1);
        let inner = ro.matmul(&r.embed(1))?.matmul(&ro.transpose())?;
        let v = m.transpose().matmul(&inner)?.matmul(m)?;
        Ok(OutputRepresentation { v })
    }

    /// Wrap an existing matrix, checking it is orthogonal and fixes `1`.
    pub fn from_matrix(v: Mat<f64>) -> Result<Self> {
        if !v.is_square() {
            return Err(Error::DimensionMismatch {
                expected: v.rows(),
                got: v.cols(),
            });
        }
        let residual = v.orthogonality_residual();
        let ones = vec![1.0; v.rows()];
        let fixed = crate::linalg::max_abs_diff(&v.matvec(&ones)?, &ones);
        let worst = residual.max(fixed);
        if worst > ORTHOGONAL_INPUT_TOL {
            return Err(Error::NotOrthogonal { residual: worst });
        }
        Ok(OutputRepresentation { v })
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.v
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.v.matvec(y)
    }

    /// Upper-left `n×n` block of `diag(R_O,1)ᵀ·M·V·Mᵀ·diag(R_O,1)`.
    pub fn recover_transform(
        &self,
        neuron: &HypersphereNeuron<f64>,
        basis: &SimplexBasis,
    ) -> Result<Mat<f64>> {
        let n = basis.dim();
        let m = basis.change_of_basis();
        let ro = neuron.rotation().embed(1);
        let full = ro
            .transpose()
            .matmul(m)?
            .matmul(&self.v)?
            .matmul(&m.transpose())?
            .matmul(&ro)?;
        Ok(full.block(n, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::rotation::random_orthogonal;

    #[test]
    fn embedding_examples() {
        assert_eq!(embed(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0, -1.0, 0.0]);
        assert_eq!(embed(&[1.0, 2.0, 2.0]), vec![1.0, 2.0, 2.0, -1.0, -4.5]);
    }

    #[test]
    fn activation_sign_and_value() {
        let s = sphere_from_center(&[0.0, 0.0, 0.0], 1.0);
        let on = sphere_activation(&embed(&[0.0, 1.0, 0.0]), &s).unwrap();
        assert!(on.abs() < 1e-15);
        let out = sphere_activation(&embed(&[2.0, 0.0, 0.0]), &s).unwrap();
        assert!((out + 1.5).abs() < 1e-15);
        let inside = sphere_activation(&embed(&[0.1, 0.2, 0.0]), &s).unwrap();
        assert!(inside > 0.0);
        assert!(sphere_activation(&embed(&[1.0, 0.0]), &s).is_err());
    }

    #[test]
    fn activation_is_homogeneous_in_the_sphere() {
        let s = sphere_from_center(&[0.5, -1.0, 0.25], 1.3);
        let x = embed(&[0.3, 0.1, -0.7]);
        let base = sphere_activation(&x, &s).unwrap();
        for lambda in [0.1, 2.0, 17.0] {
            let scaled: Vec<f64> = s.iter().map(|v| v * lambda).collect();
            let a = sphere_activation(&x, &scaled).unwrap();
            assert!((a - lambda * base).abs() < 1e-13);
            assert_eq!(a.signum(), base.signum());
        }
    }

    #[test]
    fn centre_extraction() {
        assert_eq!(sphere_center(&[1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(sphere_center(&[2.0, 0.0, 0.0, 0.0, 2.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(sphere_center(&[0.0, 3.0, 0.0, 0.7, 0.0]).unwrap(), vec![0.0, 3.0, 0.0]);
        assert!(matches!(
            sphere_center(&[0.0, 0.0, 0.0, 0.7, 0.0]),
            Err(Error::DegenerateSphere)
        ));
    }

    #[test]
    fn fallback_centre_direction_still_equivariant() {
        // s_{n+2} = 0: centre direction comes from the head alone.
        let basis = SimplexBasis::new(3).unwrap();
        let s = [0.0, 3.0, 0.0, 0.4, 0.0];
        let neuron = HypersphereNeuron::build(&s, &basis).unwrap();
        let r = random_orthogonal(3, 3, -1).unwrap();
        let v = OutputRepresentation::new(&r, &neuron, &basis).unwrap();
        let x = [0.2, -1.1, 0.5];
        let lhs = v.apply(&neuron.apply(&x).unwrap()).unwrap();
        let rhs = neuron.apply(&r.matvec(&x).unwrap()).unwrap();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn bank_structure() {
        let basis = SimplexBasis::new(4).unwrap();
        let s = [0.3, -0.2, 0.9, 0.1, -0.4, 1.7];
        let neuron = HypersphereNeuron::build(&s, &basis).unwrap();
        let b = neuron.bank();
        assert_eq!((b.rows(), b.cols()), (5, 6));
        assert!(max_abs_diff(b.row(0), &s) < 1e-15);
        let s_len = norm(&s);
        for i in 0..5 {
            assert_eq!(b[(i, 4)], s[4]);
            assert_eq!(b[(i, 5)], s[5]);
            assert!((norm(b.row(i)) - s_len).abs() < 1e-14);
        }
    }

    #[test]
    fn point_at_centre_gives_half_radius_squared() {
        let basis = SimplexBasis::new(3).unwrap();
        let c = basis.vertex(0);
        let r = 0.8;
        let s = sphere_from_center(&c, r);
        let neuron = HypersphereNeuron::build(&s, &basis).unwrap();
        let y = neuron.apply(&c).unwrap();
        assert!((y[0] - 0.5 * r * r).abs() < 1e-15);
    }

    #[test]
    fn centre_at_origin_and_degenerate_sphere() {
        let basis = SimplexBasis::new(2).unwrap();
        let neuron = HypersphereNeuron::build(&[0.0, 0.0, 0.3, 1.0], &basis).unwrap();
        assert_eq!(neuron.rotation(), &Mat::identity(2));
        assert!(matches!(
            HypersphereNeuron::build(&[0.0, 0.0, 0.3, 0.0], &basis),
            Err(Error::DegenerateSphere)
        ));
        assert!(matches!(
            HypersphereNeuron::build(&[0.0, 0.3, 1.0], &basis),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stop_rotation_mode_builds_the_same_bank() {
        let basis = SimplexBasis::new(5).unwrap();
        let s = [0.3, -0.2, 0.9, 0.1, -0.4, 1.7, 0.2];
        let a = HypersphereNeuron::build_with(&s, &basis, GradientMode::Full).unwrap();
        let b = HypersphereNeuron::build_with(&s, &basis, GradientMode::StopRotation).unwrap();
        assert_eq!(a.bank().as_slice(), b.bank().as_slice());
    }

    #[test]
    fn identity_representation_and_round_trip() {
        let basis = SimplexBasis::new(4).unwrap();
        let s = [0.3, -0.2, 0.9, 0.1, -0.4, 1.7];
        let neuron = HypersphereNeuron::build(&s, &basis).unwrap();
        let v = OutputRepresentation::new(&Mat::identity(4), &neuron, &basis).unwrap();
        assert!(v.matrix().max_abs_diff(&Mat::identity(5)) < 1e-14);
        let back = v.recover_transform(&neuron, &basis).unwrap();
        assert!(back.max_abs_diff(&Mat::identity(4)) < 1e-14);
    }

    #[test]
    fn non_orthogonal_transform_is_rejected() {
        let basis = SimplexBasis::new(2).unwrap();
        let neuron = HypersphereNeuron::build(&[0.3, 0.2, 0.1, 1.0], &basis).unwrap();
        let bad = Mat::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            OutputRepresentation::new(&bad, &neuron, &basis),
            Err(Error::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn bias_examples() {
        let y = [0.5, -1.0, 2.0];
        assert_eq!(add_bias(&y, 0.0), y.to_vec());
        let yb = add_bias(&y, 0.25);
        let s0: f64 = y.iter().sum();
        let s1: f64 = yb.iter().sum();
        assert!((s1 - s0 - 3.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let (u, flag) = normalize(&[3.0, 4.0]);
        assert!(!flag);
        assert!((norm(&u) - 1.0f64).abs() < 1e-15);
        let (z, flag) = normalize(&[0.0, 0.0, 0.0]);
        assert!(flag);
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn nonlinear_normalize_limits() {
        let unit = [0.6, 0.8];
        for a in [-5.0, 0.0, 3.0] {
            assert!(max_abs_diff(&nonlinear_normalize(&unit, a).unwrap(), &unit) < 1e-15);
        }
        let y = [3.0, -4.0, 12.0];
        let hi = nonlinear_normalize(&y, 60.0).unwrap();
        assert!(max_abs_diff(&hi, &normalize(&y).0) < 1e-12);
        let lo = nonlinear_normalize(&y, -60.0).unwrap();
        assert!(max_abs_diff(&lo, &y) < 1e-12);
        assert!(matches!(
            nonlinear_normalize(&[0.0, 0.0], 60.0),
            Err(Error::DegenerateNormalization { .. })
        ));
    }
}
