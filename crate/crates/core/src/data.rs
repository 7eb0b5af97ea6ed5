//! The synthetic two-point O(5) regression task and the line-oriented dataset
//! format.
//!
//! ```text
//! #deh-dataset v1 task=o5reg dim=5 points=2 targets=1 count=3000 seed=7
//! train x1_1 … x1_5 x2_1 … x2_5 target
//! …
//! ```
//!
//! Each record holds the split label, the `points × dim` coordinates in
//! row-major order and the targets. Values are written with 17 significant
//! digits so a write/read round trip is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::Sampler;
use crate::scalar::{dot, norm};

pub const FORMAT_VERSION: &str = "v1";
pub const REGRESSION_TASK: &str = "o5reg";
pub const SUPPORTED_TASKS: [&str; 1] = [REGRESSION_TASK];

/// Fractions of generated samples assigned to train and validation; the rest
/// is test.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub split: Split,
    /// `points × dim`.
    pub points: Mat<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub task: String,
    pub dim: usize,
    pub points: usize,
    pub targets: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

/// `sin(‖x₁‖) − ‖x₂‖³/2 + x₁ᵀx₂/(‖x₁‖‖x₂‖)`.
pub fn target_function(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    let n1 = norm(x1);
    let n2 = norm(x2);
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(n1.sin() - 0.5 * n2.powi(3) + dot(x1, x2) / (n1 * n2))
}

/// Sample counts per split for `n` samples: `(train, val, test)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * TRAIN_FRACTION).floor() as usize;
    let val = (n as f64 * VAL_FRACTION).floor() as usize;
    (train, val, n - train - val)
}

/// `n_samples` i.i.d. standard Gaussian pairs in R⁵ with their targets. The
/// first 80 % are labelled train, the next 10 % val, the rest test.
pub fn generate_regression(n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let dim = 5;
    let mut rng = Sampler::with_stream(seed, 0xda7a);
    let (train, val, _) = split_sizes(n_samples);
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let (x1, x2, target) = loop {
            let x1 = rng.gaussian_vec(dim);
            let x2 = rng.gaussian_vec(dim);
            // A zero vector has probability zero; resample if it ever occurs.
            if let Ok(t) = target_function(&x1, &x2) {
                break (x1, x2, t);
            }
        };
        let split = if i < train {
            Split::Train
        } else if i < train + val {
            Split::Val
        } else {
            Split::Test
        };
        samples.push(Sample {
            split,
            points: Mat::from_rows(&[x1, x2])?,
            target: vec![target],
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            task: REGRESSION_TASK.into(),
            dim,
            points: 2,
            targets: 1,
            seed,
        },
        samples,
    })
}

/// Largest `|stored − recomputed|` target over the dataset.
pub fn target_residual(data: &Dataset) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in &data.samples {
        let t = target_function(s.points.row(0), s.points.row(1))?;
        worst = worst.max((t - s.target[0]).abs());
    }
    Ok(worst)
}

pub fn format_dataset(data: &Dataset) -> String {
    let h = &data.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#deh-dataset {FORMAT_VERSION} task={} dim={} points={} targets={} count={} seed={}",
        h.task,
        h.dim,
        h.points,
        h.targets,
        data.samples.len(),
        h.seed
    );
    for s in &data.samples {
        out.push_str(s.split.as_str());
        for v in s.points.as_slice().iter().chain(&s.target) {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, format_dataset(data)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Parse dataset text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, head) = lines
        .next()
        .ok_or_else(|| err(1, "missing header line".into()))?;
    let (header, count) = parse_header(head).map_err(|m| err(1, m))?;

    let width = header.dim * header.points + header.targets;
    let mut samples = Vec::with_capacity(count);
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if samples.len() == count {
            return Err(err(line_no, format!("more records than the declared count {count}")));
        }
        let mut fields = line.split_ascii_whitespace();
        let split: Split = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|m| err(line_no, m))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| err(line_no, format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(err(
                line_no,
                format!("expected {width} values, found {}", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(err(line_no, format!("non-finite value {v}")));
        }
        let (coords, target) = values.split_at(header.dim * header.points);
        samples.push(Sample {
            split,
            points: Mat::from_vec(header.points, header.dim, coords.to_vec())?,
            target: target.to_vec(),
        });
    }
    if samples.len() != count {
        // Records are on lines 2.., so the first missing one is this line.
        return Err(err(
            samples.len() + 2,
            format!(
                "truncated: header declares {count} records, found {}",
                samples.len()
            ),
        ));
    }
    Ok(Dataset { header, samples })
}

fn parse_header(line: &str) -> std::result::Result<(DatasetHeader, usize), String> {
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some("#deh-dataset") {
        return Err("not a dataset file (missing `#deh-dataset` header)".into());
    }
    match parts.next() {
        Some(FORMAT_VERSION) => {}
        other => {
            return Err(format!(
                "unsupported schema version {:?} (expected {FORMAT_VERSION})",
                other.unwrap_or("")
            ))
        }
    }
    let mut task = None;
    let (mut dim, mut points, mut targets, mut count, mut seed) = (None, None, None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("malformed header field `{kv}`"))?;
        let num = || v.parse::<u64>().map_err(|e| format!("header field {k}: {e}"));
        match k {
            "task" => task = Some(v.to_string()),
            "dim" => dim = Some(num()? as usize),
            "points" => points = Some(num()? as usize),
            "targets" => targets = Some(num()? as usize),
            "count" => count = Some(num()? as usize),
            "seed" => seed = Some(num()?),
            other => return Err(format!("unknown header field `{other}`")),
        }
    }
    let missing = |name: &str| format!("header is missing `{name}`");
    let header = DatasetHeader {
        task: task.ok_or_else(|| missing("task"))?,
        dim: dim.ok_or_else(|| missing("dim"))?,
        points: points.ok_or_else(|| missing("points"))?,
        targets: targets.ok_or_else(|| missing("targets"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    if header.dim == 0 || header.points == 0 || header.targets == 0 {
        return Err("dim, points and targets must be positive".into());
    }
    Ok((header, count.ok_or_else(|| missing("count"))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn target_examples() {
        let x = [FRAC_PI_2, 0.0, 0.0, 0.0, 0.0];
        let expected = 2.0 - std::f64::consts::PI.powi(3) / 16.0;
        assert!((target_function(&x, &x).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.062108).abs() < 1e-6);
        let y = [1.0, -2.0, 0.5, 0.3, 0.0];
        let ny: Vec<f64> = y.iter().map(|v| -v).collect();
        let n = norm(&y);
        let t = target_function(&y, &ny).unwrap();
        assert!((t - (n.sin() - 0.5 * n.powi(3) - 1.0)).abs() < 1e-12);
        assert!(target_function(&[0.0; 5], &y).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_split() {
        let a = generate_regression(50, 3).unwrap();
        let b = generate_regression(50, 3).unwrap();
        assert_eq!(format_dataset(&a), format_dataset(&b));
        assert_eq!(
            (a.count(Split::Train), a.count(Split::Val), a.count(Split::Test)),
            (40, 5, 5)
        );
        assert!(target_residual(&a).unwrap() < 1e-12);
        assert!(generate_regression(0, 1).is_err());
    }

    #[test]
    fn parse_round_trip_and_errors() {
        let data = generate_regression(12, 9).unwrap();
        let text = format_dataset(&data);
        let p = Path::new("mem");
        assert_eq!(parse_dataset(&text, p).unwrap(), data);

        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        match parse_dataset(&truncated, p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            e => panic!("unexpected {e}"),
        }

        let bad = text.replacen("train", "train oops", 1);
        match parse_dataset(&bad, p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }

        let empty = "#deh-dataset v1 task=o5reg dim=5 points=2 targets=1 count=0 seed=1\n";
        assert!(parse_dataset(empty, p).unwrap().is_empty());
        assert!(parse_dataset("#deh-dataset v2 task=x\n", p).is_err());
    }
}
