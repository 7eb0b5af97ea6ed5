//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one `PASS`/`FAIL` line per criterion; exits non-zero if any fails.
//!
//! Run alone with `cargo test -p deh-core --test acceptance`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use deh_core::data::{generate_regression, Dataset, Sample, Split};
use deh_core::linalg::Mat;
use deh_core::network::{InvariantOp, Model, ModelSpec, NormMode};
use deh_core::neuron::GradientMode;
use deh_core::params::ParamSet;
use deh_core::rng::Sampler;
use deh_core::rotation::random_orthogonal_from;
use deh_core::scalar::lift;
use deh_core::simplex::SimplexBasis;
use deh_core::train::{
    evaluate, finite_difference_check, train, GradOptions, Loss, LrSchedule, TrainConfig,
};
use deh_core::verify::{run_verification, VerificationReport, VerifyOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("algebraic identities for n in 2..10", algebraic_identities),
        ("numeric instances for n = 2, 3, 4", numeric_instances),
        ("hypersphere equivariance for n in 2..8", hypersphere_equivariance),
        ("representation round trip", representation_round_trip),
        ("bias and normalization equivariance", bias_and_normalization),
        ("end-to-end invariance", end_to_end_invariance),
        ("gradient correctness", gradient_correctness),
        ("O(5) regression at desk scale", regression),
        ("ablation harness", ablations),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} {status}: {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn algebraic_identities() -> Outcome {
    let start = Instant::now();
    let mut orth: f64 = 0.0;
    let mut product: f64 = 0.0;
    let mut det_ok = true;
    for n in 2..=10 {
        let b = SimplexBasis::new(n).unwrap();
        let m = b.change_of_basis();
        let mtm = m.transpose().matmul(m).unwrap();
        orth = orth.max(mtm.max_abs_diff(&Mat::identity(n + 1)));
        product = product.max(b.vertex_product_residual());
        let d = m.det();
        det_ok &= if n % 2 == 1 { d > 0.0 } else { d < 0.0 };
    }
    let elapsed = start.elapsed();
    let pass = orth < 1e-12 && product < 1e-12 && det_ok && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "max |M^T M - I| = {orth:.2e}, max |M P^T - p[I;0]| = {product:.2e}, det signs {}, {:.3}s (< 1e-12, < 1e-12, parity, < 1s)",
            if det_ok { "ok" } else { "wrong" },
            elapsed.as_secs_f64()
        ),
    )
}

/// Reference matrices transcribed entry by entry.
fn reference_instances() -> Vec<(usize, Mat<f64>, Mat<f64>, f64)> {
    let s3 = 3f64.sqrt();
    let s5 = 5f64.sqrt();
    let scale = |rows: Vec<Vec<f64>>, c: f64| {
        Mat::from_rows(&rows).unwrap().map(|v: f64| v * c)
    };

    let a = (s3 - 1.0) / 2.0;
    let b = -(s3 + 1.0) / 2.0;
    let p2 = scale(vec![vec![1.0, a, b], vec![1.0, b, a]], 1.0 / 2f64.sqrt());
    let m2 = scale(vec![vec![1.0, a, b], vec![1.0, b, a], vec![1.0; 3]], 1.0 / s3);

    let p3 = scale(
        vec![
            vec![1.0, 1.0, -1.0, -1.0],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![1.0, -1.0, -1.0, 1.0],
        ],
        1.0 / s3,
    );
    let m3 = scale(
        vec![
            vec![1.0, 1.0, -1.0, -1.0],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![1.0, -1.0, -1.0, 1.0],
            vec![1.0; 4],
        ],
        0.5,
    );

    let d = (3.0 * s5 - 1.0) / 4.0;
    let o = -(s5 + 1.0) / 4.0;
    let rows4: Vec<Vec<f64>> = (0..4)
        .map(|r| {
            let mut row = vec![1.0];
            row.extend((0..4).map(|c| if c == r { d } else { o }));
            row
        })
        .collect();
    let p4 = scale(rows4.clone(), 0.5);
    let mut m4_rows = rows4;
    m4_rows.push(vec![1.0; 5]);
    let m4 = scale(m4_rows, 1.0 / s5);

    vec![
        (2, p2, m2, (1.5f64).sqrt()),
        (3, p3, m3, 2.0 / s3),
        (4, p4, m4, s5 / 2.0),
    ]
}

fn numeric_instances() -> Outcome {
    let mut worst: f64 = 0.0;
    for (n, p, m, scalar) in reference_instances() {
        let b = SimplexBasis::new(n).unwrap();
        worst = worst
            .max(b.vertices().max_abs_diff(&p))
            .max(b.change_of_basis().max_abs_diff(&m))
            .max((b.p() - scalar).abs());
    }
    outcome(worst < 1e-12, format!("max entry error {worst:.2e} (< 1e-12)"))
}

/// The verification suite over n in 2..8, run once and shared by the
/// criteria that read from it.
fn suite() -> &'static (VerificationReport, Duration) {
    static SUITE: OnceLock<(VerificationReport, Duration)> = OnceLock::new();
    SUITE.get_or_init(|| {
        let start = Instant::now();
        let report = run_verification(&VerifyOptions {
            n_min: 2,
            n_max: 8,
            trials: 100,
            seed: 2024,
            fault: None,
            parallel: false,
        })
        .unwrap();
        (report, start.elapsed())
    })
}

fn check_line(report: &VerificationReport, names: &[&str], tol: f64) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in names {
        let c = report.check(name).unwrap();
        pass &= c.max_residual < tol;
        parts.push(format!("{name} {:.2e}", c.max_residual));
    }
    (pass, format!("{} (< {tol:.0e})", parts.join(", ")))
}

fn hypersphere_equivariance() -> Outcome {
    let (report, elapsed) = suite();
    let (ok, line) = check_line(&report, &["hypersphere_equivariance"], 1e-9);
    outcome(
        ok && *elapsed < Duration::from_secs(30),
        format!(
            "100 spheres x 100 transforms per n, {line}, full suite {:.1}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn representation_round_trip() -> Outcome {
    let (report, _) = suite();
    let (ok, line) = check_line(&report, &["representation_round_trip"], 1e-10);
    outcome(ok, format!("1000 cases per n, {line}"))
}

fn bias_and_normalization() -> Outcome {
    let (report, _) = suite();
    let (ok, line) = check_line(
        &report,
        &[
            "bias_equivariance",
            "normalization_equivariance",
            "nonlinear_normalization_equivariance",
        ],
        1e-10,
    );
    outcome(ok, line)
}

fn random_params(model: &Model, seed: u64) -> ParamSet {
    let mut p = model.init_params(seed);
    let mut rng = Sampler::with_stream(seed, 99);
    for v in p.values_mut() {
        *v += 0.1 * rng.gaussian();
    }
    p
}

fn predict_f32(model: &Model, params: &ParamSet, x: &Mat<f64>) -> Vec<f32> {
    let p: Vec<f32> = lift(params.values());
    let built = model.build(&p, GradientMode::Full).unwrap();
    built.predict(&x.map(|v| v as f32)).unwrap()
}

fn max_diff<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.into() - y.into()).abs())
        .fold(0.0, f64::max)
}

fn end_to_end_invariance() -> Outcome {
    let mut worst64: f64 = 0.0;
    let mut worst32: f64 = 0.0;
    let mut bit_exact = true;
    let mut perm_models = 0;
    for name in ModelSpec::PRESETS {
        let spec = ModelSpec::preset(name).unwrap();
        let model = Model::new(spec.clone()).unwrap();
        let mut rng = Sampler::with_stream(17, spec.points as u64);
        for trial in 0..10 {
            let params = random_params(&model, trial);
            let x = Mat::from_fn(spec.points, spec.input_dim, |_, _| rng.gaussian());
            let sign = if trial % 2 == 0 { 1 } else { -1 };
            let r = random_orthogonal_from(&mut rng, spec.input_dim, sign).unwrap();
            let rx = x.matmul(&r.transpose()).unwrap();
            let a = model.predict(&params, &x).unwrap();
            let b = model.predict(&params, &rx).unwrap();
            worst64 = worst64.max(max_diff(&a, &b));
            worst32 = worst32.max(max_diff(
                &predict_f32(&model, &params, &x),
                &predict_f32(&model, &params, &rx),
            ));
            if spec.permutation_invariant {
                let mut order: Vec<usize> = (0..spec.points).collect();
                rng.shuffle(&mut order);
                let px = Mat::from_fn(spec.points, spec.input_dim, |i, j| x[(order[i], j)]);
                let pa = model.predict(&params, &px).unwrap();
                bit_exact &= a.iter().zip(&pa).all(|(u, v)| u.to_bits() == v.to_bits());
                let fa = predict_f32(&model, &params, &x);
                let fp = predict_f32(&model, &params, &px);
                bit_exact &= fa.iter().zip(&fp).all(|(u, v)| u.to_bits() == v.to_bits());
            }
        }
        perm_models += usize::from(spec.permutation_invariant);
    }
    outcome(
        worst64 < 1e-10 && worst32 < 1e-5 && bit_exact && perm_models > 0,
        format!(
            "{} presets x 10 draws: f64 {worst64:.2e} (< 1e-10), f32 {worst32:.2e} (< 1e-5), permutations bit-identical: {bit_exact} ({perm_models} pooled presets)",
            ModelSpec::PRESETS.len()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let model = Model::new(ModelSpec::o5_regression()).unwrap();
    let count = model.param_count();
    let data = generate_regression(40, 5).unwrap();
    let batch: Vec<&Sample> = data.samples.iter().take(8).collect();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let draws = 3;
    for d in 0..draws {
        let params = random_params(&model, 100 + d);
        let rep = finite_difference_check(
            &model,
            params.values(),
            &batch,
            GradientMode::Full,
            Loss::Mse,
            1e-5,
        )
        .unwrap();
        worst = worst.max(rep.max_rel_error);
        skipped += rep.skipped;
    }
    outcome(
        count == 275 && worst < 1e-5,
        format!(
            "{count} parameters, {draws} draws, max relative error {worst:.2e} (< 1e-5), {skipped} kink coordinates skipped"
        ),
    )
}

/// Settings used for the desk-scale regression runs.
fn regression_config(train_size: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-2,
        lr_schedule: LrSchedule::Cosine,
        epochs: 2000,
        batch_size: 64,
        seed: 0,
        train_size: Some(train_size),
        parallel: false,
        ..TrainConfig::default()
    }
}

fn test_mse(model: &Model, data: &Dataset, train_size: usize) -> (f64, Duration) {
    let start = Instant::now();
    let cfg = regression_config(train_size);
    let init = model.init_params(cfg.seed);
    let out = train(model, &init, &data.split(Split::Train), &data.split(Split::Val), &cfg).unwrap();
    let mse = evaluate(model, &out.params, &data.split(Split::Test), GradOptions::default(), None)
        .unwrap()
        .loss;
    (mse, start.elapsed())
}

fn regression() -> Outcome {
    let model = Model::new(ModelSpec::o5_regression()).unwrap();
    let count = model.param_count();
    let data = generate_regression(10_000, 7).unwrap();
    let (mse_1000, t_1000) = test_mse(&model, &data, 1000);
    let sizes = [100, 300, 1000, 3000];
    let curve: Vec<f64> = sizes
        .iter()
        .map(|&s| if s == 1000 { mse_1000 } else { test_mse(&model, &data, s).0 })
        .collect();
    let monotone = curve.windows(2).all(|w| w[1] < w[0]);
    let curve_text: Vec<String> = sizes
        .iter()
        .zip(&curve)
        .map(|(s, m)| format!("{s}: {m:.4}"))
        .collect();
    outcome(
        count == 275 && mse_1000 <= 0.01 && t_1000 < Duration::from_secs(600) && monotone,
        format!(
            "{count} parameters, test MSE at 1000 samples {mse_1000:.4} (<= 0.01) in {:.0}s (< 600s); size curve [{}] decreasing: {monotone}",
            t_1000.as_secs_f64(),
            curve_text.join(", ")
        ),
    )
}

fn ablations() -> Outcome {
    let data = generate_regression(300, 3).unwrap();
    let train_set = data.split(Split::Train);
    let val = data.split(Split::Val);
    let test = data.split(Split::Test);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e-2,
        batch_size: 32,
        parallel: false,
        ..TrainConfig::default()
    };
    let mut results: Vec<(String, f64)> = Vec::new();
    let mut errors = Vec::new();
    for op in [
        InvariantOp::Delta,
        InvariantOp::DeltaEdge,
        InvariantOp::Sum,
        InvariantOp::L2norm,
    ] {
        for bias in [true, false] {
            for learnable in [true, false] {
                let mut spec = ModelSpec::o5_regression();
                spec.invariant_op = op;
                for layer in &mut spec.layers {
                    layer.use_bias = bias;
                    layer.norm_mode = if learnable { NormMode::Nonlinear } else { NormMode::Unit };
                }
                let label = format!("{op:?}/bias={bias}/learnable_norm={learnable}");
                let run = || -> deh_core::Result<f64> {
                    let model = Model::new(spec)?;
                    let out = train(&model, &model.init_params(0), &train_set, &val, &cfg)?;
                    Ok(evaluate(&model, &out.params, &test, GradOptions::default(), None)?.loss)
                };
                match run() {
                    Ok(mse) if mse.is_finite() => results.push((label, mse)),
                    Ok(mse) => errors.push(format!("{label}: loss {mse}")),
                    Err(e) => errors.push(format!("{label}: {e}")),
                }
            }
        }
    }
    let mut distinct = true;
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            distinct &= results[i].1 != results[j].1;
        }
    }
    let pass = errors.is_empty() && results.len() == 16 && distinct;
    let mut detail = format!(
        "{} of 16 configurations trained, metrics distinct: {distinct}",
        results.len()
    );
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    outcome(pass, detail)
}
