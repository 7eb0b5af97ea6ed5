use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use deh_core::config::RunConfig;
use deh_core::data::{self, Dataset, Sample, Split};
use deh_core::network::Model;
use deh_core::params::Checkpoint;
use deh_core::train::{self, evaluate, metrics_csv, GradOptions, Precision, TrainConfig};
use deh_core::verify::{run_verification, Fault, VerifyOptions};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::{Cli, Command, Ctx, EvalArgs, GenDataArgs, SweepArgs, TrainArgs, TrainOverrides, VerifyArgs};

/// Facts about a finished run that go into its manifest.
#[derive(Debug, Default)]
pub struct RunInfo {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

pub fn run(cli: &Cli, ctx: Ctx) -> Result<RunInfo> {
    match &cli.command {
        Command::Verify(a) => verify(a, ctx),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a, ctx),
        Command::Eval(a) => eval(a, ctx),
        Command::Sweep(a) => sweep(a, ctx),
    }
}

pub fn parse_range(text: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("bad --n-range `{text}` (expected lo..hi)"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    match text.split_once("..") {
        Some((lo, hi)) => {
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            Ok((num(lo)?, num(hi)?))
        }
        None => {
            let n = num(text)?;
            Ok((n, n))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Append `rows` to a CSV, writing `header` first if the file is new or
/// empty. An existing file must carry the same header.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let existing = match fs::read_to_string(path) {
        Ok(text) => Some(text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut out = String::new();
    match existing.as_deref().and_then(|t| t.lines().next()) {
        Some(first) if first != header => {
            return Err(CliError::Usage(format!(
                "{} has a different header; refusing to append",
                path.display()
            )))
        }
        Some(_) => {}
        None => {
            out.push_str(header);
            out.push('\n');
        }
    }
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn verify(a: &VerifyArgs, ctx: Ctx) -> Result<RunInfo> {
    let (n_min, n_max) = parse_range(&a.n_range)?;
    let opts = VerifyOptions {
        n_min,
        n_max,
        trials: a.trials,
        seed: a.seed,
        fault: a.inject_fault.map(Fault::ChangeOfBasis),
        parallel: ctx.parallel,
    };
    let report = run_verification(&opts)?;
    print!("{}", report.to_table());
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_file(&dir.join("verify.csv"), &report.to_csv())?;
        write_file(&dir.join("verify.txt"), &report.to_table())?;
    }
    let info = RunInfo {
        seed: Some(a.seed),
        precision: Some(Precision::F64),
    };
    if report.all_passed() {
        Ok(info)
    } else {
        let failing: Vec<String> = report
            .failures()
            .iter()
            .map(|c| format!("{} ({}; residual {:.3e} >= {:.0e})", c.name, c.anchor, c.max_residual, c.threshold))
            .collect();
        Err(CliError::Verification(failing.join(", ")))
    }
}

fn gen_data(a: &GenDataArgs) -> Result<RunInfo> {
    if !data::SUPPORTED_TASKS.contains(&a.task.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown task `{}`; supported tasks: {}",
            a.task,
            data::SUPPORTED_TASKS.join(", ")
        )));
    }
    if a.out.exists() && !a.force {
        return Err(CliError::Exists(a.out.clone()));
    }
    let dataset = data::generate_regression(a.samples, a.seed)?;
    data::write_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} records ({} train / {} val / {} test) to {}",
        dataset.len(),
        dataset.count(Split::Train),
        dataset.count(Split::Val),
        dataset.count(Split::Test),
        a.out.display()
    );
    Ok(RunInfo {
        seed: Some(a.seed),
        precision: None,
    })
}

fn apply_overrides(cfg: &mut TrainConfig, o: &TrainOverrides, ctx: Ctx) {
    if let Some(seed) = o.seed {
        if seed != cfg.seed {
            log::warn!("--seed {seed} overrides train.seed = {} from the config", cfg.seed);
        }
        cfg.seed = seed;
    }
    if let Some(p) = o.precision {
        if p != cfg.precision {
            log::warn!("--precision {p} overrides train.precision = {} from the config", cfg.precision);
        }
        cfg.precision = p;
    }
    if let Some(e) = o.epochs {
        if e != cfg.epochs {
            log::warn!("--epochs {e} overrides train.epochs = {} from the config", cfg.epochs);
        }
        cfg.epochs = e;
    }
    cfg.parallel = ctx.parallel;
}

fn load_data(path: &Path) -> Result<Dataset> {
    Ok(data::read_dataset(path)?)
}

fn check_data_fits(model: &Model, data: &Dataset) -> Result<()> {
    let spec = model.spec();
    if data.header.dim != spec.input_dim || data.header.points != spec.points {
        return Err(deh_core::Error::InvalidSpec(format!(
            "dataset has {} points of dimension {}, model expects {} of dimension {}",
            data.header.points, data.header.dim, spec.points, spec.input_dim
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    param_count: usize,
    train_samples: usize,
    best_epoch: usize,
    best_val_loss: Option<f64>,
    test_loss: Option<f64>,
    wall_clock_ms: u128,
}

/// Train per `cfg` and write checkpoint, metrics, summary and resolved
/// config into `out_dir`.
fn train_into(
    run: &RunConfig,
    dataset: &Dataset,
    out_dir: &Path,
    ctx: Ctx,
) -> Result<TrainSummary> {
    let start = std::time::Instant::now();
    let model = Model::new(run.model.clone())?;
    check_data_fits(&model, dataset)?;
    let cfg = &run.train;
    let train_set = dataset.split(Split::Train);
    let val_set = dataset.split(Split::Val);
    let test_set = dataset.split(Split::Test);
    let used = cfg.train_size.map_or(train_set.len(), |k| k.min(train_set.len()));
    if let Some(k) = cfg.train_size {
        if k > train_set.len() {
            log::warn!("train_size {k} exceeds the {} training records; using all", train_set.len());
        }
    }
    println!("trainable parameters: {}", model.param_count());
    println!("training on {used} samples for {} epochs", cfg.epochs);

    let init = model.init_params(cfg.seed);
    let outcome = train::train(&model, &init, &train_set, &val_set, cfg)?;
    let opts = grad_options(cfg.loss, cfg.gradient_mode, cfg.precision, ctx);
    let test_loss = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&model, &outcome.params, &test_set, opts, None)?.loss)
    };

    create_dir(out_dir)?;
    Checkpoint::new(run.model.clone(), outcome.params.clone())?.save(&out_dir.join("checkpoint.bin"))?;
    write_file(&out_dir.join("metrics.csv"), &metrics_csv(&outcome.history))?;
    write_file(&out_dir.join("config.toml"), &run.to_toml())?;
    let summary = TrainSummary {
        param_count: model.param_count(),
        train_samples: used,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        test_loss,
        wall_clock_ms: start.elapsed().as_millis(),
    };
    write_file(
        &out_dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    if let Some(v) = summary.best_val_loss {
        println!("best validation loss {v:.6e} at epoch {}", summary.best_epoch);
    }
    if let Some(t) = summary.test_loss {
        println!("test loss {t:.6e}");
    }
    Ok(summary)
}

fn grad_options(
    loss: train::Loss,
    mode: deh_core::neuron::GradientMode,
    precision: Precision,
    ctx: Ctx,
) -> GradOptions {
    GradOptions {
        loss,
        mode,
        precision,
        parallel: ctx.parallel,
    }
}

fn train_cmd(a: &TrainArgs, ctx: Ctx) -> Result<RunInfo> {
    let mut run = RunConfig::load(&a.config)?;
    apply_overrides(&mut run.train, &a.overrides, ctx);
    if let Some(k) = a.train_size {
        run.train.train_size = Some(k);
    }
    run.train.validate()?;
    let dataset = load_data(&a.data)?;
    train_into(&run, &dataset, &a.out_dir, ctx)?;
    Ok(RunInfo {
        seed: Some(run.train.seed),
        precision: Some(run.train.precision),
    })
}

fn sweep(a: &SweepArgs, ctx: Ctx) -> Result<RunInfo> {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::Usage("--sizes must list positive sizes".into()));
    }
    let mut run = RunConfig::load(&a.config)?;
    apply_overrides(&mut run.train, &a.overrides, ctx);
    let dataset = load_data(&a.data)?;
    create_dir(&a.out_dir)?;
    let mut rows = Vec::new();
    for &size in &a.sizes {
        let mut r = run.clone();
        r.train.train_size = Some(size);
        r.train.validate()?;
        let dir = a.out_dir.join(format!("size-{size}"));
        println!("== train size {size}");
        let s = train_into(&r, &dataset, &dir, ctx)?;
        rows.push(format!(
            "{},{},{},{},{}",
            s.train_samples,
            fmt_opt(s.test_loss),
            fmt_opt(s.best_val_loss),
            s.best_epoch,
            s.wall_clock_ms
        ));
    }
    let path = a.out_dir.join("sweep.csv");
    let mut text = String::from("train_size,test_loss,best_val_loss,best_epoch,wall_clock_ms\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    write_file(&path, &text)?;
    println!("wrote {}", path.display());
    Ok(RunInfo {
        seed: Some(run.train.seed),
        precision: Some(run.train.precision),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

pub const EVAL_HEADER: &str =
    "checkpoint,split,count,precision,loss,transform_seed,transformed_loss,abs_diff,accuracy";
pub const SWEEP_EVAL_HEADER: &str = "train_size,split,count,loss,transformed_loss";

struct EvalRow {
    count: usize,
    loss: f64,
    transformed: Option<f64>,
    accuracy: Option<f64>,
}

fn eval_checkpoint(
    path: &Path,
    samples: &[&Sample],
    dataset: &Dataset,
    a: &EvalArgs,
    ctx: Ctx,
) -> Result<EvalRow> {
    let ckpt = Checkpoint::load(path)?;
    let model = Model::new(ckpt.spec.clone())?;
    check_data_fits(&model, dataset)?;
    let loss = if ckpt.spec.output_dim > 1 && dataset.header.targets == 1 {
        train::Loss::CrossEntropy
    } else {
        train::Loss::Mse
    };
    let opts = grad_options(loss, Default::default(), a.precision, ctx);
    let plain = evaluate(&model, &ckpt.params, samples, opts, None)?;
    let transformed = match a.random_transforms {
        Some(seed) => Some(evaluate(&model, &ckpt.params, samples, opts, Some(seed))?.loss),
        None => None,
    };
    Ok(EvalRow {
        count: plain.count,
        loss: plain.loss,
        transformed,
        accuracy: plain.accuracy,
    })
}

fn eval(a: &EvalArgs, ctx: Ctx) -> Result<RunInfo> {
    let split: Split = a.split.parse().map_err(CliError::Usage)?;
    let dataset = load_data(&a.data)?;
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(deh_core::Error::EmptyDataset.into());
    }
    let info = RunInfo {
        seed: a.random_transforms,
        precision: Some(a.precision),
    };

    if let Some(dir) = &a.sweep_dir {
        let mut runs: Vec<(usize, PathBuf)> = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(size) = name.strip_prefix("size-").and_then(|s| s.parse().ok()) {
                let ckpt = entry.path().join("checkpoint.bin");
                if ckpt.is_file() {
                    runs.push((size, ckpt));
                }
            }
        }
        if runs.is_empty() {
            return Err(CliError::Usage(format!(
                "no size-*/checkpoint.bin found under {}",
                dir.display()
            )));
        }
        runs.sort();
        let mut rows = Vec::new();
        for (size, ckpt) in &runs {
            let r = eval_checkpoint(ckpt, &samples, &dataset, a, ctx)?;
            println!("train size {size}: {} loss {:.6e}", split.as_str(), r.loss);
            rows.push(format!(
                "{size},{},{},{:.10e},{}",
                split.as_str(),
                r.count,
                r.loss,
                fmt_opt(r.transformed)
            ));
        }
        let out = a.out.clone().unwrap_or_else(|| dir.join("sweep_eval.csv"));
        let mut text = format!("{SWEEP_EVAL_HEADER}\n");
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        write_file(&out, &text)?;
        println!("wrote {}", out.display());
        return Ok(info);
    }

    let ckpt_path = a
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let r = eval_checkpoint(ckpt_path, &samples, &dataset, a, ctx)?;
    println!("{} loss ({}): {:.10e}", split.as_str(), a.precision, r.loss);
    if let Some(t) = r.transformed {
        println!(
            "{} loss under random O(n) transforms: {:.10e} (|diff| {:.3e})",
            split.as_str(),
            t,
            (t - r.loss).abs()
        );
    }
    if let Some(acc) = r.accuracy {
        println!("accuracy: {acc:.4}");
    }
    if let Some(out) = &a.out {
        let row = format!(
            "{},{},{},{},{:.10e},{},{},{},{}",
            ckpt_path.display(),
            split.as_str(),
            r.count,
            a.precision,
            r.loss,
            a.random_transforms.map(|s| s.to_string()).unwrap_or_default(),
            fmt_opt(r.transformed),
            r.transformed.map(|t| format!("{:.3e}", (t - r.loss).abs())).unwrap_or_default(),
            r.accuracy.map(|x| format!("{x:.6}")).unwrap_or_default(),
        );
        append_csv(out, EVAL_HEADER, &[row])?;
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("2..8").unwrap(), (2, 8));
        assert_eq!(parse_range("3..=5").unwrap(), (3, 5));
        assert_eq!(parse_range("4").unwrap(), (4, 4));
        assert!(parse_range("a..b").is_err());
    }

    #[test]
    fn csv_append_keeps_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        append_csv(&p, "a,b", &["1,2".into()]).unwrap();
        append_csv(&p, "a,b", &["3,4".into()]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n");
        assert!(append_csv(&p, "x,y", &["5,6".into()]).is_err());
    }
}
