//! O(n)-invariant read-outs of equivariant point features.
//!
//! Given per-point features `Y` (`N×m`, one matrix per channel), the Gram
//! matrix `Δ = Y·Yᵀ` holds pairwise inner products and is unchanged when every
//! row is hit by the same orthogonal map. `Δ_E` additionally weights each
//! entry by the squared distance between the corresponding input points.
//! Row sorting followed by pooling over rows removes the dependence on point
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::neuron::sphere_activation;
use crate::scalar::{dot, norm_sq, ordered_sum, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
    #[default]
    MaxAndMean,
}

impl Pooling {
    /// Output values per pooled column.
    pub fn factor(self) -> usize {
        match self {
            Pooling::MaxAndMean => 2,
            _ => 1,
        }
    }
}

/// Edge scalar `−½‖x₁ − x₂‖²`; never positive.
pub fn edge_scalar<T: Real>(x1: &[T], x2: &[T]) -> Result<T> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    let d: Vec<T> = x1.iter().zip(x2).map(|(&a, &b)| a - b).collect();
    Ok(norm_sq(&d).scale(-0.5))
}

/// Relation between two embedded points and a sphere:
/// `δ = e₁₂ · (X₁ᵀS) · (X₂ᵀS)`. The point coordinates are read from the first
/// `n` entries of each embedding.
pub fn point_sphere_delta<T: Real>(x1: &[T], x2: &[T], sphere: &[T]) -> Result<T> {
    let a1 = sphere_activation(x1, sphere)?;
    let a2 = sphere_activation(x2, sphere)?;
    let n = x1.len().saturating_sub(2);
    let e = edge_scalar(&x1[..n], &x2[..n])?;
    Ok(e * a1 * a2)
}

/// `Δ = Y·Yᵀ`. The matrix is filled from the upper triangle so that it is
/// exactly symmetric.
pub fn gram_invariant<T: Real>(y: &Mat<T>) -> Mat<T> {
    let n = y.rows();
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(y.row(i), y.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `E = ½(‖xᵢ − xⱼ‖² + I)`.
pub fn edge_matrix<T: Real>(points: &Mat<T>) -> Result<Mat<T>> {
    let n = points.rows();
    let mut e = Mat::zeros(n, n);
    for i in 0..n {
        e[(i, i)] = T::from_f64(0.5);
        for j in i + 1..n {
            let v = -edge_scalar(points.row(i), points.row(j))?;
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    Ok(e)
}

/// `Δ_E = E ⊙ (Y·Yᵀ)`.
pub fn gram_invariant_edged<T: Real>(y: &Mat<T>, points: &Mat<T>) -> Result<Mat<T>> {
    if y.rows() != points.rows() {
        return Err(Error::DimensionMismatch {
            expected: y.rows(),
            got: points.rows(),
        });
    }
    let g = gram_invariant(y);
    let e = edge_matrix(points)?;
    Ok(Mat::from_fn(g.rows(), g.cols(), |i, j| e[(i, j)] * g[(i, j)]))
}

/// Sort every row ascending, then pool each column over the rows.
///
/// For an `N×M` stack this yields `M` values per pooling kind (maxima first,
/// then means). Means are accumulated in ascending order of value, so the
/// result is bit-identical under any simultaneous permutation of the rows
/// (and, for square Gram stacks, the columns). Branch decisions (sort order
/// and argmax) are appended to `trace`.
pub fn sort_and_pool<T: Real>(g: &Mat<T>, mode: Pooling, trace: &mut Vec<u32>) -> Vec<T> {
    let rows = g.rows();
    let cols = g.cols();
    let mut sorted: Vec<Vec<T>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut idx: Vec<usize> = (0..cols).collect();
        let row = g.row(r);
        idx.sort_by(|&a, &b| row[a].to_f64().total_cmp(&row[b].to_f64()));
        trace.extend(idx.iter().map(|&i| i as u32));
        sorted.push(idx.into_iter().map(|i| row[i]).collect());
    }

    let mut out = Vec::with_capacity(cols * mode.factor());
    if matches!(mode, Pooling::Max | Pooling::MaxAndMean) {
        for c in 0..cols {
            let mut best = 0;
            for r in 1..rows {
                if sorted[r][c].to_f64() > sorted[best][c].to_f64() {
                    best = r;
                }
            }
            trace.push(best as u32);
            out.push(sorted[best][c]);
        }
    }
    if matches!(mode, Pooling::Mean | Pooling::MaxAndMean) {
        let inv = 1.0 / rows as f64;
        for c in 0..cols {
            let column: Vec<T> = sorted.iter().map(|row| row[c]).collect();
            out.push(ordered_sum(&column).scale(inv));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{embed, sphere_from_center};

    #[test]
    fn edge_examples() {
        assert_eq!(edge_scalar(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(edge_scalar(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert!(edge_scalar(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn point_sphere_delta_sign_rule() {
        let s = sphere_from_center(&[0.0, 0.0], 1.0);
        let inside1 = embed(&[0.1, 0.2]);
        let inside2 = embed(&[-0.3, 0.1]);
        let outside = embed(&[2.0, 1.0]);
        assert_eq!(point_sphere_delta(&inside1, &inside1, &s).unwrap(), 0.0);
        assert!(point_sphere_delta(&inside1, &inside2, &s).unwrap() <= 0.0);
        assert!(point_sphere_delta(&inside1, &outside, &s).unwrap() >= 0.0);
    }

    #[test]
    fn gram_single_point() {
        let y = Mat::from_rows(&[vec![1.0, -2.0, 2.0]]).unwrap();
        let g = gram_invariant(&y);
        assert_eq!(g.as_slice(), &[9.0]);
    }

    #[test]
    fn edge_matrix_diagonal_and_coincident_points() {
        let pts = Mat::from_rows(&[vec![0.5, 1.0], vec![0.5, 1.0]]).unwrap();
        let y = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        let e = edge_matrix(&pts).unwrap();
        assert_eq!(e[(0, 0)], 0.5);
        assert_eq!(e[(1, 1)], 0.5);
        let de = gram_invariant_edged(&y, &pts).unwrap();
        assert_eq!(de[(0, 1)], 0.0);
        assert_eq!(de[(1, 0)], 0.0);
        assert_eq!(de[(0, 0)], 0.5 * 14.0);
    }

    #[test]
    fn pooling_single_row_is_identity_after_sort() {
        let g = Mat::from_rows(&[vec![3.0, -1.0, 2.0]]).unwrap();
        let mut trace = Vec::new();
        let max = sort_and_pool(&g, Pooling::Max, &mut trace);
        assert_eq!(max, vec![-1.0, 2.0, 3.0]);
        let both = sort_and_pool(&g, Pooling::MaxAndMean, &mut trace);
        assert_eq!(both, vec![-1.0, 2.0, 3.0, -1.0, 2.0, 3.0]);
        let g1 = Mat::from_rows(&[vec![4.0]]).unwrap();
        assert_eq!(sort_and_pool(&g1, Pooling::Mean, &mut trace), vec![4.0]);
    }
}
