//! Numerical verification suite for the geometric and equivariance
//! identities.
//!
//! Every check runs over a range of dimensions and reports its worst residual
//! against a fixed threshold. Sampling is driven by one seed; each dimension
//! gets its own stream, so results do not depend on thread scheduling.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariant::gram_invariant;
use crate::linalg::{max_abs_diff, Mat};
use crate::network::{InvariantOp, LayerSpec, Model, ModelSpec, NormMode};
use crate::neuron::{embed, nonlinear_normalize, normalize, HypersphereNeuron, OutputRepresentation};
use crate::rng::Sampler;
use crate::rotation::{embed_transform, geodesic_rotation, random_orthogonal_from};
use crate::simplex::SimplexBasis;

/// Threshold for exact algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Threshold for 64-bit equivariance residuals.
pub const EQUIVARIANCE_TOL: f64 = 1e-9;
/// Threshold for the representation round trip, bias and normalization checks.
pub const COMMUTE_TOL: f64 = 1e-10;

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 12;

/// A deliberate defect, used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Add `delta` to entry `(0, 0)` of every change-of-basis matrix.
    ChangeOfBasis(f64),
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub n_min: usize,
    pub n_max: usize,
    /// Random spheres (and transforms per sphere) per dimension.
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub parallel: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_min: 2,
            n_max: 8,
            trials: 100,
            seed: 0,
            fault: None,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// The identity being tested, in words.
    pub anchor: &'static str,
    pub dims: String,
    pub max_residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub const CSV_HEADER: &'static str = "name,anchor,dims,max_residual,threshold,pass";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for c in &self.checks {
            out.push_str(&format!(
                "{},\"{}\",{},{:.3e},{:.0e},{}\n",
                c.name, c.anchor, c.dims, c.max_residual, c.threshold, c.pass
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(4);
        let mut out = format!(
            "{:<width$}  {:>6}  {:>10}  {:>9}  result\n",
            "check", "dims", "residual", "threshold"
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{:<width$}  {:>6}  {:>10.3e}  {:>9.0e}  {}\n",
                c.name,
                c.dims,
                c.max_residual,
                c.threshold,
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Per-dimension worst residuals, in [`CHECKS`] order.
type Residuals = [f64; CHECKS.len()];

/// `(name, anchor, threshold)` for every check.
pub const CHECKS: [(&str, &str, f64); 14] = [
    ("simplex_vertices", "unit vertices, zero centroid, pairwise products -1/n", ALGEBRAIC_TOL),
    ("basis_orthogonal", "change of basis satisfies M^T M = I", ALGEBRAIC_TOL),
    ("basis_determinant", "det M is +1 for odd n and -1 for even n", ALGEBRAIC_TOL),
    ("basis_vertex_product", "M P^T = p [I; 0^T]", ALGEBRAIC_TOL),
    ("geodesic_rotation", "rotation maps u onto v, orthogonal, det +1", ALGEBRAIC_TOL),
    ("representation_fixed_vector", "V 1 = 1", ALGEBRAIC_TOL),
    ("hypersphere_equivariance", "V B(S) X = B(S) R X", EQUIVARIANCE_TOL),
    ("dc_invariance", "sum of B(S) X unchanged under R", COMMUTE_TOL),
    ("representation_round_trip", "R recovered from V", COMMUTE_TOL),
    ("bias_equivariance", "V (Y + b1) = V Y + b1", COMMUTE_TOL),
    ("normalization_equivariance", "normalize(V Y) = V normalize(Y)", COMMUTE_TOL),
    ("nonlinear_normalization_equivariance", "sigmoid-blended normalization commutes with V", COMMUTE_TOL),
    ("cascade_equivariance", "second layer transforms by the representation of V", EQUIVARIANCE_TOL),
    ("invariant_read_out", "Gram features and model output unchanged under R", EQUIVARIANCE_TOL),
];

fn idx(name: &str) -> usize {
    CHECKS.iter().position(|c| c.0 == name).expect("known check")
}

pub fn run_verification(opts: &VerifyOptions) -> Result<VerificationReport> {
    if opts.trials == 0 {
        return Err(Error::InvalidConfig("empty suite: trials must be >= 1".into()));
    }
    if opts.n_min < MIN_DIM || opts.n_max > MAX_DIM || opts.n_min > opts.n_max {
        return Err(Error::InvalidConfig(format!(
            "dimension range {}..{} must lie within {MIN_DIM}..{MAX_DIM}",
            opts.n_min, opts.n_max
        )));
    }
    let dims: Vec<usize> = (opts.n_min..=opts.n_max).collect();
    let per_dim: Vec<Result<Residuals>> = if opts.parallel {
        dims.par_iter().map(|&n| check_dimension(n, opts)).collect()
    } else {
        dims.iter().map(|&n| check_dimension(n, opts)).collect()
    };
    let mut worst = [0.0f64; CHECKS.len()];
    for r in per_dim {
        let r = r?;
        for (w, v) in worst.iter_mut().zip(r) {
            // NaN counts as a failure.
            if v.is_nan() || v > *w {
                *w = v;
            }
        }
    }
    let dims_label = format!("{}..{}", opts.n_min, opts.n_max);
    let checks = CHECKS
        .iter()
        .zip(worst)
        .map(|(&(name, anchor, threshold), max_residual)| CheckResult {
            name,
            anchor,
            dims: dims_label.clone(),
            max_residual,
            threshold,
            pass: max_residual < threshold,
        })
        .collect();
    Ok(VerificationReport { checks })
}

fn bump(r: &mut Residuals, name: &str, v: f64) {
    let i = idx(name);
    if v.is_nan() || v > r[i] {
        r[i] = v;
    }
}

fn sign_for(i: usize) -> i8 {
    if i % 2 == 0 {
        1
    } else {
        -1
    }
}

fn check_dimension(n: usize, opts: &VerifyOptions) -> Result<Residuals> {
    let mut r = [0.0; CHECKS.len()];
    let mut basis = SimplexBasis::new(n)?;
    let mut next_basis = SimplexBasis::new(n + 1)?;
    if let Some(Fault::ChangeOfBasis(delta)) = opts.fault {
        basis.perturb_change_of_basis(0, 0, delta);
        next_basis.perturb_change_of_basis(0, 0, delta);
    }
    let mut rng = Sampler::with_stream(opts.seed, n as u64);

    bump(&mut r, "simplex_vertices", basis.vertex_residual());
    bump(
        &mut r,
        "basis_orthogonal",
        basis.change_of_basis().orthogonality_residual(),
    );
    let expected_det = if n % 2 == 1 { 1.0 } else { -1.0 };
    bump(
        &mut r,
        "basis_determinant",
        (basis.change_of_basis().det() - expected_det).abs(),
    );
    bump(&mut r, "basis_vertex_product", basis.vertex_product_residual());

    for _ in 0..opts.trials {
        let u = rng.gaussian_vec(n);
        let v = rng.gaussian_vec(n);
        let q = geodesic_rotation(&u, &v)?;
        let un = crate::scalar::norm(&u);
        let vn = crate::scalar::norm(&v);
        let qu: Vec<f64> = q.matvec(&u)?.iter().map(|x| x / un).collect();
        let vhat: Vec<f64> = v.iter().map(|x| x / vn).collect();
        let res = max_abs_diff(&qu, &vhat)
            .max(q.orthogonality_residual())
            .max((q.det() - 1.0).abs());
        bump(&mut r, "geodesic_rotation", res);
    }

    let ones = vec![1.0; n + 1];
    for _ in 0..opts.trials {
        let sphere = rng.gaussian_vec(n + 2);
        let neuron = HypersphereNeuron::build(&sphere, &basis)?;
        let bias = rng.gaussian();
        let a = 2.0 * rng.gaussian();
        for t in 0..opts.trials {
            let rot = random_orthogonal_from(&mut rng, n, sign_for(t))?;
            let x = rng.gaussian_vec(n);
            let rep = OutputRepresentation::new(&rot, &neuron, &basis)?;
            let vmat = rep.matrix();

            bump(
                &mut r,
                "representation_fixed_vector",
                max_abs_diff(&vmat.matvec(&ones)?, &ones),
            );

            let big_x = embed(&x);
            let y = neuron.forward(&big_x)?;
            let ry = neuron.forward(&embed_transform(&rot, 2)?.matvec(&big_x)?)?;
            let vy = vmat.matvec(&y)?;
            bump(&mut r, "hypersphere_equivariance", max_abs_diff(&vy, &ry));
            let s0: f64 = y.iter().sum();
            let s1: f64 = ry.iter().sum();
            bump(&mut r, "dc_invariance", (s0 - s1).abs());

            let yb: Vec<f64> = y.iter().map(|v| v + bias).collect();
            let lhs = vmat.matvec(&yb)?;
            let rhs: Vec<f64> = vy.iter().map(|v| v + bias).collect();
            bump(&mut r, "bias_equivariance", max_abs_diff(&lhs, &rhs));

            let (ny, _) = normalize(&y);
            let (nvy, _) = normalize(&vy);
            bump(
                &mut r,
                "normalization_equivariance",
                max_abs_diff(&vmat.matvec(&ny)?, &nvy),
            );
            let nl = nonlinear_normalize(&y, a)?;
            let nlv = nonlinear_normalize(&vy, a)?;
            bump(
                &mut r,
                "nonlinear_normalization_equivariance",
                max_abs_diff(&vmat.matvec(&nl)?, &nlv),
            );
        }
    }

    for t in 0..opts.trials * 10 {
        let sphere = rng.gaussian_vec(n + 2);
        let neuron = HypersphereNeuron::build(&sphere, &basis)?;
        let rot = random_orthogonal_from(&mut rng, n, sign_for(t))?;
        let rep = OutputRepresentation::new(&rot, &neuron, &basis)?;
        let back = rep.recover_transform(&neuron, &basis)?;
        bump(&mut r, "representation_round_trip", back.max_abs_diff(&rot));
    }

    for t in 0..opts.trials {
        let s1 = rng.gaussian_vec(n + 2);
        let s2 = rng.gaussian_vec(n + 3);
        let first = HypersphereNeuron::build(&s1, &basis)?;
        let second = HypersphereNeuron::build(&s2, &next_basis)?;
        let rot = random_orthogonal_from(&mut rng, n, sign_for(t))?;
        let x = rng.gaussian_vec(n);
        let rx = rot.matvec(&x)?;
        let v1 = OutputRepresentation::new(&rot, &first, &basis)?;
        // A broken basis makes V non-orthogonal; report that as the residual.
        let v2 = match OutputRepresentation::new(v1.matrix(), &second, &next_basis) {
            Ok(v2) => v2,
            Err(Error::NotOrthogonal { residual }) => {
                bump(&mut r, "cascade_equivariance", residual);
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = second.apply(&first.apply(&x)?)?;
        let rout = second.apply(&first.apply(&rx)?)?;
        bump(
            &mut r,
            "cascade_equivariance",
            max_abs_diff(&v2.matrix().matvec(&out)?, &rout),
        );
    }

    bump(&mut r, "invariant_read_out", read_out_residual(n, opts, &mut rng)?);
    Ok(r)
}

/// Worst change of the Gram features and of a small model's output under a
/// random transform of the input points.
fn read_out_residual(n: usize, opts: &VerifyOptions, rng: &mut Sampler) -> Result<f64> {
    let spec = ModelSpec {
        input_dim: n,
        points: 3,
        layers: vec![
            LayerSpec::new(2, true, NormMode::Nonlinear),
            LayerSpec::new(2, true, NormMode::Unit),
        ],
        invariant_op: InvariantOp::Delta,
        fc_hidden: 8,
        output_dim: 1,
        permutation_invariant: false,
        pooling: Default::default(),
        center_points: false,
    };
    let model = Model::new(spec.clone())?;
    let mut worst = 0.0f64;
    let trials = opts.trials.min(20);
    for t in 0..trials {
        let params = model.init_params(opts.seed.wrapping_add(t as u64));
        let built = model.build(params.values(), Default::default())?;
        let x = Mat::from_fn(spec.points, n, |_, _| rng.gaussian());
        let rot = random_orthogonal_from(rng, n, sign_for(t))?;
        let rx = x.matmul(&rot.transpose())?;
        let (a, b) = (built.cascade(&x)?, built.cascade(&rx)?);
        for (ya, yb) in a.iter().zip(&b) {
            worst = worst.max(gram_invariant(ya).max_abs_diff(&gram_invariant(yb)));
        }
        let pa = built.predict(&x)?;
        let pb = built.predict(&rx)?;
        worst = worst.max(max_abs_diff(&pa, &pb));
    }
    Ok(worst)
}
