//! Regular n-simplex vertices and the orthogonal change of basis built from
//! them.
//!
//! For dimension `n` the simplex has `n + 1` unit vertices centred at the
//! origin with pairwise inner product `−1/n`. Appending the constant
//! `n^{-1/2}` to every vertex and normalizing gives the columns of an
//! orthogonal `(n+1)×(n+1)` matrix `M`, whose determinant is `+1` for odd `n`
//! and `−1` for even `n`.
//!
//! Vertex indices are 0-based throughout the API; vertex 0 is the one along
//! the all-ones direction.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rotation::geodesic_rotation;

#[derive(Clone, Debug)]
pub struct SimplexBasis {
    n: usize,
    vertices: Mat<f64>,
    change_of_basis: Mat<f64>,
    p: f64,
    kappa: f64,
    mu: f64,
    rotations: Vec<Mat<f64>>,
}

/// Simplex coefficients `(κ, μ)` for dimension `n`.
pub fn simplex_coefficients(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let kappa = -(1.0 + (nf + 1.0).sqrt()) / nf.powf(1.5);
    let mu = (1.0 + 1.0 / nf).sqrt();
    (kappa, mu)
}

/// `n×(n+1)` matrix whose columns are the regular simplex vertices: the
/// first is `n^{-1/2}·1`, the `i`-th (i ≥ 1) is `κ·1 + μ·e_{i-1}`.
pub fn simplex_vertices(n: usize) -> Result<Mat<f64>> {
    if n < 2 {
        return Err(Error::InvalidDimension {
            got: n,
            reason: "a regular simplex needs n >= 2",
        });
    }
    let (kappa, mu) = simplex_coefficients(n);
    let first = 1.0 / (n as f64).sqrt();
    Ok(Mat::from_fn(n, n + 1, |r, c| {
        if c == 0 {
            first
        } else if r == c - 1 {
            kappa + mu
        } else {
            kappa
        }
    }))
}

/// Change-of-basis matrix `M` and the common column norm `p`.
pub fn change_of_basis(vertices: &Mat<f64>) -> Result<(Mat<f64>, f64)> {
    let n = vertices.rows();
    if vertices.cols() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: vertices.cols(),
        });
    }
    let tail = 1.0 / (n as f64).sqrt();
    let mut m = Mat::zeros(n + 1, n + 1);
    let mut p = 0.0;
    for c in 0..=n {
        let mut col = vertices.col(c);
        col.push(tail);
        let len = crate::scalar::norm(&col);
        if c == 0 {
            p = len;
        }
        m.set_col(c, &col.iter().map(|v| v / len).collect::<Vec<_>>());
    }
    Ok((m, p))
}

impl SimplexBasis {
    pub fn new(n: usize) -> Result<Self> {
        let vertices = simplex_vertices(n)?;
        let (change_of_basis, p) = change_of_basis(&vertices)?;
        let (kappa, mu) = simplex_coefficients(n);
        let first = vertices.col(0);
        let rotations = (0..=n)
            .map(|i| {
                if i == 0 {
                    Ok(Mat::identity(n))
                } else {
                    geodesic_rotation(&first, &vertices.col(i))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimplexBasis {
            n,
            vertices,
            change_of_basis,
            p,
            kappa,
            mu,
            rotations,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `P`, vertices as columns.
    pub fn vertices(&self) -> &Mat<f64> {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vec<f64> {
        self.vertices.col(i)
    }

    /// `M`.
    pub fn change_of_basis(&self) -> &Mat<f64> {
        &self.change_of_basis
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Rotation taking vertex 0 to vertex `i`. Vertex 0 maps to the identity.
    pub fn simplex_rotation(&self, i: usize) -> Result<&Mat<f64>> {
        self.rotations.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.n + 1,
        })
    }

    pub fn simplex_rotations(&self) -> &[Mat<f64>] {
        &self.rotations
    }

    /// `M·Pᵀ`, which equals `p·[I_n; 0ᵀ]`.
    pub fn vertex_product(&self) -> Mat<f64> {
        self.change_of_basis
            .matmul(&self.vertices.transpose())
            .expect("shapes agree by construction")
    }

    /// Worst violation of the vertex invariants: unit norm, zero centroid and
    /// pairwise inner product `−1/n`.
    pub fn vertex_residual(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..=n {
            let pi = self.vertex(i);
            worst = worst.max((crate::scalar::norm(&pi) - 1.0).abs());
            for j in i + 1..=n {
                let d = crate::scalar::dot(&pi, &self.vertex(j));
                worst = worst.max((d + 1.0 / n as f64).abs());
            }
        }
        for r in 0..n {
            let s: f64 = self.vertices.row(r).iter().sum();
            worst = worst.max(s.abs());
        }
        worst
    }

    /// `max |M·Pᵀ − p[I; 0ᵀ]|`.
    pub fn vertex_product_residual(&self) -> f64 {
        let n = self.n;
        let expected = Mat::from_fn(n + 1, n, |r, c| if r == c { self.p } else { 0.0 });
        self.vertex_product().max_abs_diff(&expected)
    }

    /// Replace `M` with a perturbed copy. Only used to check that the
    /// verification suite notices a broken basis.
    pub fn perturb_change_of_basis(&mut self, row: usize, col: usize, delta: f64) {
        self.change_of_basis[(row, col)] += delta;
    }
}
