//! Householder reflections, geodesic rotations and random orthogonal
//! matrices.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::Sampler;
use crate::scalar::{norm, Real};

/// Below this norm of `û + v̂` the two directions are treated as antipodal.
const ANTIPODAL_EPS: f64 = 1e-12;

/// Reflection `I − 2aaᵀ/(aᵀa)` across the hyperplane orthogonal to `a`.
pub fn householder<T: Real>(a: &[T]) -> Result<Mat<T>> {
    let aa = crate::scalar::norm_sq(a);
    if aa.to_f64() == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let two_over = T::from_f64(2.0) / aa;
    let n = a.len();
    Ok(Mat::from_fn(n, n, |i, j| {
        let d = if i == j { T::one() } else { T::zero() };
        d - two_over * a[i] * a[j]
    }))
}

fn unit<T: Real>(u: &[T]) -> Result<Vec<T>> {
    let len = norm(u);
    let lv = len.to_f64();
    if lv == 0.0 || !lv.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(u.iter().map(|&x| x / len).collect())
}

/// Shortest rotation taking the direction of `u` onto the direction of `v`.
///
/// Built as the product of two reflections, `H_v̂ · H_{û+v̂}`: the first sends
/// `û` to `−v̂`, the second flips that onto `v̂`. The result acts as the
/// identity on the complement of `span(u, v)` and always has determinant +1.
/// When `u` and `v` point in opposite directions the plane is not unique; we
/// rotate by π in the plane spanned by `û` and the coordinate axis least
/// aligned with it.
pub fn geodesic_rotation<T: Real>(u: &[T], v: &[T]) -> Result<Mat<T>> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let n = u.len();
    let uh = unit(u)?;
    let vh = unit(v)?;

    if uh.iter().zip(&vh).all(|(a, b)| a.to_f64() == b.to_f64()) {
        return Ok(Mat::identity(n));
    }

    let w: Vec<T> = uh.iter().zip(&vh).map(|(&a, &b)| a + b).collect();
    let ww = crate::scalar::norm_sq(&w);
    if ww.to_f64().sqrt() < ANTIPODAL_EPS {
        let uf: Vec<f64> = uh.iter().map(|x| x.to_f64()).collect();
        let k = (0..n)
            .min_by(|&i, &j| uf[i].abs().total_cmp(&uf[j].abs()))
            .expect("n > 0");
        let mut axis: Vec<T> = uh.iter().map(|&x| -(uh[k] * x)).collect();
        axis[k] = axis[k] + T::one();
        return householder(&axis)?.matmul(&householder(&uh)?);
    }

    // (I − 2v̂v̂ᵀ)(I − 2wwᵀ/‖w‖²), expanded.
    let two = T::from_f64(2.0);
    let vw = crate::scalar::dot(&vh, &w);
    let c_ww = two / ww;
    let c_vw = T::from_f64(4.0) * vw / ww;
    Ok(Mat::from_fn(n, n, |i, j| {
        let d = if i == j { T::one() } else { T::zero() };
        d - two * vh[i] * vh[j] - c_ww * w[i] * w[j] + c_vw * vh[i] * w[j]
    }))
}

/// Random orthogonal matrix with determinant `det_sign`, deterministic in
/// `seed`.
///
/// A Gaussian matrix is orthogonalized column by column (modified
/// Gram–Schmidt, applied twice). Positive diagonal of the implied `R` gives
/// the Haar measure; the first column is negated when the determinant sign
/// must change.
pub fn random_orthogonal(n: usize, seed: u64, det_sign: i8) -> Result<Mat<f64>> {
    let mut sampler = Sampler::new(seed);
    random_orthogonal_from(&mut sampler, n, det_sign)
}

pub fn random_orthogonal_from(sampler: &mut Sampler, n: usize, det_sign: i8) -> Result<Mat<f64>> {
    if n == 0 {
        return Err(Error::InvalidDimension {
            got: n,
            reason: "orthogonal matrices need n >= 1",
        });
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut c = sampler.gaussian_vec(n);
        for _ in 0..2 {
            for q in &cols {
                let proj: f64 = q.iter().zip(&c).map(|(a, b)| a * b).sum();
                for (ci, qi) in c.iter_mut().zip(q) {
                    *ci -= proj * qi;
                }
            }
        }
        let len = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A rank-deficient draw has probability zero; redraw if it happens.
        if len < 1e-8 {
            continue;
        }
        c.iter_mut().for_each(|x| *x /= len);
        cols.push(c);
    }
    let mut q = Mat::from_cols(&cols)?;
    let want = if det_sign < 0 { -1.0 } else { 1.0 };
    if q.det() * want < 0.0 {
        for r in 0..n {
            q[(r, 0)] = -q[(r, 0)];
        }
    }
    Ok(q)
}

/// `diag(R, I_extra)`: the same transform acting on a space with `extra`
/// appended coordinates.
pub fn embed_transform(r: &Mat<f64>, extra: usize) -> Result<Mat<f64>> {
    if !r.is_square() {
        return Err(Error::DimensionMismatch {
            expected: r.rows(),
            got: r.cols(),
        });
    }
    Ok(r.embed(extra))
}
