//! Cascaded equivariant layers, invariant read-out and the FC head.
//!
//! Layer `l` applies its `K_l` hyperspheres to every channel produced by the
//! previous layer, so after `l` layers there are `K_1·…·K_l` channels of
//! `(n + l)`-dimensional per-point features. Channels never mix before the
//! head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariant::{gram_invariant, gram_invariant_edged, sort_and_pool, Pooling};
use crate::linalg::Mat;
use crate::neuron::{nonlinear_normalize, normalize, GradientMode, HypersphereNeuron};
use crate::params::{ParamLayout, ParamSet};
use crate::rng::Sampler;
use crate::scalar::{norm, ordered_sum, Real};
use crate::simplex::SimplexBasis;

/// Upper bound on the channel count after the last layer.
pub const MAX_CHANNELS: usize = 1 << 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    Unit,
    #[default]
    Nonlinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantOp {
    /// Per-channel Gram matrix `Y·Yᵀ`.
    #[default]
    Delta,
    /// Gram matrix weighted by pairwise squared distances.
    DeltaEdge,
    /// Per-point sum over feature entries.
    Sum,
    /// Per-point feature norm.
    L2norm,
}

impl InvariantOp {
    /// Whether the operator yields an `N×N` stack (rather than `N×1`).
    pub fn is_pairwise(self) -> bool {
        matches!(self, InvariantOp::Delta | InvariantOp::DeltaEdge)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default)]
    pub norm_mode: NormMode,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn new(width: usize, use_bias: bool, norm_mode: NormMode) -> Self {
        LayerSpec {
            width,
            use_bias,
            norm_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Points per sample.
    pub points: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub invariant_op: InvariantOp,
    pub fc_hidden: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub permutation_invariant: bool,
    #[serde(default)]
    pub pooling: Pooling,
    /// Subtract the point-set mean before the first layer.
    #[serde(default)]
    pub center_points: bool,
}

impl ModelSpec {
    /// Two-point O(5) regression: one layer of two hyperspheres, Gram
    /// read-out, FC 32. 275 parameters.
    pub fn o5_regression() -> Self {
        ModelSpec {
            input_dim: 5,
            points: 2,
            layers: vec![LayerSpec::new(2, true, NormMode::Nonlinear)],
            invariant_op: InvariantOp::Delta,
            fc_hidden: 32,
            output_dim: 1,
            permutation_invariant: false,
            pooling: Pooling::MaxAndMean,
            center_points: false,
        }
    }

    /// 20-joint O(3) skeleton classifier, layers `[3, 2]`, 10 classes.
    pub fn o3_action() -> Self {
        ModelSpec {
            input_dim: 3,
            points: 20,
            layers: vec![
                LayerSpec::new(3, true, NormMode::Nonlinear),
                LayerSpec::new(2, true, NormMode::Nonlinear),
            ],
            invariant_op: InvariantOp::Delta,
            fc_hidden: 32,
            output_dim: 10,
            permutation_invariant: true,
            pooling: Pooling::MaxAndMean,
            center_points: false,
        }
    }

    /// 16-point O(5) hull-volume regressor, layers `[8, 6]`.
    pub fn o5_hull() -> Self {
        ModelSpec {
            input_dim: 5,
            points: 16,
            layers: vec![
                LayerSpec::new(8, true, NormMode::Nonlinear),
                LayerSpec::new(6, true, NormMode::Nonlinear),
            ],
            invariant_op: InvariantOp::Delta,
            fc_hidden: 32,
            output_dim: 1,
            permutation_invariant: true,
            pooling: Pooling::MaxAndMean,
            center_points: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "o5_regression" => Ok(Self::o5_regression()),
            "o3_action" => Ok(Self::o3_action()),
            "o5_hull" => Ok(Self::o5_hull()),
            other => Err(Error::InvalidSpec(format!(
                "unknown preset `{other}` (expected one of: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub const PRESETS: [&'static str; 3] = ["o5_regression", "o3_action", "o5_hull"];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_dim < 2 {
            return bad(format!("input_dim must be >= 2, got {}", self.input_dim));
        }
        if self.points == 0 {
            return bad("points must be >= 1".into());
        }
        if self.layers.is_empty() {
            return bad("layers must not be empty".into());
        }
        if let Some(i) = self.layers.iter().position(|l| l.width == 0) {
            return bad(format!("layers[{i}].width must be >= 1"));
        }
        if self.fc_hidden == 0 {
            return bad("fc_hidden must be >= 1".into());
        }
        if self.output_dim == 0 {
            return bad("output_dim must be >= 1".into());
        }
        let mut channels = 1usize;
        for l in &self.layers {
            channels = channels.saturating_mul(l.width);
        }
        if channels > MAX_CHANNELS {
            return bad(format!("{channels} channels exceeds the limit of {MAX_CHANNELS}"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.layers.iter().map(|l| l.width).product()
    }

    /// Invariant scalars handed to the FC head.
    pub fn feature_count(&self) -> usize {
        let n = self.points;
        let per_channel = match (self.invariant_op.is_pairwise(), self.permutation_invariant) {
            (true, false) => n * (n + 1) / 2,
            (true, true) => n * self.pooling.factor(),
            (false, false) => n,
            (false, true) => self.pooling.factor(),
        };
        self.channels() * per_channel
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.layers.len()
    }
}

/// A validated spec together with its simplex bases and parameter layout.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    bases: Vec<SimplexBasis>,
    layout: ParamLayout,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let bases = (0..spec.layers.len())
            .map(|l| SimplexBasis::new(spec.input_dim + l))
            .collect::<Result<Vec<_>>>()?;
        let layout = ParamLayout::for_spec(&spec);
        Ok(Model {
            spec,
            bases,
            layout,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn basis(&self, layer: usize) -> &SimplexBasis {
        &self.bases[layer]
    }

    /// Gaussian spheres with standard deviation `(m+2)^{-1/2}`, zero biases and
    /// normalization scalars, fan-in scaled FC weights.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = Sampler::with_stream(seed, 0x5eed);
        let mut values = Vec::with_capacity(self.layout.len());
        for entry in self.layout.entries() {
            let len = entry.len();
            let std = if entry.name.ends_with(".sphere") {
                1.0 / (entry.shape[0] as f64).sqrt()
            } else if entry.name.ends_with(".weight") {
                let fan_in = entry.shape[1] as f64;
                if entry.name.starts_with("fc.hidden") {
                    (2.0 / fan_in).sqrt()
                } else {
                    (1.0 / fan_in).sqrt()
                }
            } else {
                0.0
            };
            for _ in 0..len {
                values.push(if std > 0.0 { std * rng.gaussian() } else { 0.0 });
            }
        }
        ParamSet::new(self.layout.clone(), values).expect("layout-sized values")
    }

    /// Instantiate every neuron and the head from flat parameter values.
    pub fn build<T: Real>(&self, params: &[T], mode: GradientMode) -> Result<BuiltModel<'_, T>> {
        if params.len() != self.layout.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let s = &params[cursor..cursor + len];
            cursor += len;
            s
        };
        let mut layers = Vec::with_capacity(self.spec.layers.len());
        let mut channels = 1usize;
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let basis = &self.bases[l];
            let m = basis.dim();
            let mut neurons = Vec::with_capacity(channels * layer.width);
            for _ in 0..channels * layer.width {
                let mut neuron = HypersphereNeuron::build_with(take(m + 2), basis, mode)?;
                if layer.use_bias {
                    neuron = neuron.with_bias(take(1)[0]);
                }
                if layer.norm_mode == NormMode::Nonlinear {
                    neuron = neuron.with_norm_scale(take(1)[0]);
                }
                neurons.push(neuron);
            }
            channels *= layer.width;
            layers.push(neurons);
        }
        let f = self.spec.feature_count();
        let h = self.spec.fc_hidden;
        let o = self.spec.output_dim;
        let hidden_w = Mat::from_vec(h, f, take(h * f).to_vec())?;
        let hidden_b = take(h).to_vec();
        let out_w = Mat::from_vec(o, h, take(o * h).to_vec())?;
        let out_b = take(o).to_vec();
        Ok(BuiltModel {
            model: self,
            layers,
            head: FcHead {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            },
        })
    }

    /// Plain 64-bit prediction for one sample.
    pub fn predict(&self, params: &ParamSet, points: &Mat<f64>) -> Result<Vec<f64>> {
        self.build(params.values(), GradientMode::Full)?.predict(points)
    }
}

/// One hidden ReLU layer followed by a linear output.
#[derive(Clone, Debug)]
pub struct FcHead<T> {
    pub hidden_w: Mat<T>,
    pub hidden_b: Vec<T>,
    pub out_w: Mat<T>,
    pub out_b: Vec<T>,
}

impl<T: Real> FcHead<T> {
    pub fn forward(&self, features: &[T]) -> Result<Vec<T>> {
        self.forward_traced(features, &mut Vec::new())
    }

    /// As [`forward`](Self::forward), appending each ReLU gate to `trace`.
    pub fn forward_traced(&self, features: &[T], trace: &mut Vec<u32>) -> Result<Vec<T>> {
        let pre = self.hidden_w.matvec(features)?;
        let hidden: Vec<T> = pre
            .iter()
            .zip(&self.hidden_b)
            .map(|(&z, &b)| {
                let z = z + b;
                trace.push(u32::from(z.to_f64() > 0.0));
                z.relu()
            })
            .collect();
        let out = self.out_w.matvec(&hidden)?;
        Ok(out.iter().zip(&self.out_b).map(|(&z, &b)| z + b).collect())
    }
}

/// A model with every neuron instantiated for one parameter vector.
#[derive(Clone, Debug)]
pub struct BuiltModel<'m, T> {
    model: &'m Model,
    layers: Vec<Vec<HypersphereNeuron<T>>>,
    head: FcHead<T>,
}

impl<'m, T: Real> BuiltModel<'m, T> {
    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn neurons(&self, layer: usize) -> &[HypersphereNeuron<T>] {
        &self.layers[layer]
    }

    pub fn head(&self) -> &FcHead<T> {
        &self.head
    }

    fn check_points(&self, points: &Mat<T>) -> Result<()> {
        let spec = &self.model.spec;
        if points.cols() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                got: points.cols(),
            });
        }
        if points.rows() != spec.points {
            return Err(Error::DimensionMismatch {
                expected: spec.points,
                got: points.rows(),
            });
        }
        Ok(())
    }

    /// Points after optional mean-centering. The mean is accumulated in
    /// ascending order of value so it does not depend on point order.
    fn prepared(&self, points: &Mat<T>) -> Mat<T> {
        if !self.model.spec.center_points {
            return points.clone();
        }
        let inv = 1.0 / points.rows() as f64;
        let mean: Vec<T> = (0..points.cols())
            .map(|c| ordered_sum(&points.col(c)).scale(inv))
            .collect();
        Mat::from_fn(points.rows(), points.cols(), |r, c| points[(r, c)] - mean[c])
    }

    /// Equivariant features: one `N×(n+d)` matrix per channel.
    pub fn cascade(&self, points: &Mat<T>) -> Result<Vec<Mat<T>>> {
        self.check_points(points)?;
        self.cascade_traced(&self.prepared(points), &mut Vec::new())
    }

    fn cascade_traced(&self, points: &Mat<T>, trace: &mut Vec<u32>) -> Result<Vec<Mat<T>>> {
        let mut channels = vec![points.clone()];
        for (layer, neurons) in self.model.spec.layers.iter().zip(&self.layers) {
            let k = layer.width;
            let mut next = Vec::with_capacity(channels.len() * k);
            for (c, ch) in channels.iter().enumerate() {
                for neuron in &neurons[c * k..(c + 1) * k] {
                    let mut rows = Vec::with_capacity(ch.rows());
                    for r in 0..ch.rows() {
                        let y = neuron.apply(ch.row(r))?;
                        let y = match layer.norm_mode {
                            NormMode::None => y,
                            NormMode::Unit => {
                                let (y, degenerate) = normalize(&y);
                                trace.push(u32::from(degenerate));
                                y
                            }
                            NormMode::Nonlinear => {
                                let a = neuron.norm_scale().expect("norm scale present");
                                nonlinear_normalize(&y, a)?
                            }
                        };
                        rows.push(y);
                    }
                    next.push(Mat::from_rows(&rows)?);
                }
            }
            channels = next;
        }
        Ok(channels)
    }

    /// Invariant scalars fed to the head.
    pub fn features(&self, points: &Mat<T>) -> Result<Vec<T>> {
        self.features_traced(points, &mut Vec::new())
    }

    pub fn features_traced(&self, points: &Mat<T>, trace: &mut Vec<u32>) -> Result<Vec<T>> {
        self.check_points(points)?;
        let spec = &self.model.spec;
        let points = self.prepared(points);
        let channels = self.cascade_traced(&points, trace)?;
        let mut out = Vec::with_capacity(spec.feature_count());
        for y in &channels {
            let stack = match spec.invariant_op {
                InvariantOp::Delta => gram_invariant(y),
                InvariantOp::DeltaEdge => gram_invariant_edged(y, &points)?,
                InvariantOp::Sum => Mat::from_fn(y.rows(), 1, |r, _| {
                    y.row(r).iter().fold(T::zero(), |acc, &v| acc + v)
                }),
                InvariantOp::L2norm => Mat::from_fn(y.rows(), 1, |r, _| norm(y.row(r))),
            };
            if spec.permutation_invariant {
                out.extend(sort_and_pool(&stack, spec.pooling, trace));
            } else if spec.invariant_op.is_pairwise() {
                for i in 0..stack.rows() {
                    out.extend_from_slice(&stack.row(i)[i..]);
                }
            } else {
                out.extend_from_slice(stack.as_slice());
            }
        }
        Ok(out)
    }

    pub fn predict(&self, points: &Mat<T>) -> Result<Vec<T>> {
        self.predict_traced(points, &mut Vec::new())
    }

    /// Prediction plus every branch decision taken (normalization
    /// degeneracy, sort orders, argmax rows, ReLU gates).
    pub fn predict_traced(&self, points: &Mat<T>, trace: &mut Vec<u32>) -> Result<Vec<T>> {
        let f = self.features_traced(points, trace)?;
        self.head.forward_traced(&f, trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::random_orthogonal;

    fn sample_points(spec: &ModelSpec, seed: u64) -> Mat<f64> {
        let mut rng = Sampler::new(seed);
        Mat::from_fn(spec.points, spec.input_dim, |_, _| rng.gaussian())
    }

    #[test]
    fn preset_parameter_counts() {
        assert_eq!(Model::new(ModelSpec::o5_regression()).unwrap().param_count(), 275);
        assert_eq!(Model::new(ModelSpec::o3_action()).unwrap().param_count(), 8111);
        assert_eq!(Model::new(ModelSpec::o5_hull()).unwrap().param_count(), 49769);
    }

    #[test]
    fn regression_model_reads_three_gram_entries_per_channel() {
        let spec = ModelSpec::o5_regression();
        assert_eq!(spec.feature_count(), 6);
        let model = Model::new(spec.clone()).unwrap();
        let params = model.init_params(3);
        let built = model.build(params.values(), GradientMode::Full).unwrap();
        let pts = sample_points(&spec, 1);
        let ch = built.cascade(&pts).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!((ch[0].rows(), ch[0].cols()), (2, 6));
        let f = built.features(&pts).unwrap();
        let g = gram_invariant(&ch[1]);
        assert_eq!(&f[3..], &[g[(0, 0)], g[(0, 1)], g[(1, 1)]]);
    }

    #[test]
    fn channel_and_dimension_growth() {
        let mut spec = ModelSpec::o5_regression();
        spec.layers = vec![
            LayerSpec::new(2, false, NormMode::None),
            LayerSpec::new(3, true, NormMode::Unit),
        ];
        let model = Model::new(spec.clone()).unwrap();
        let built = model.build(model.init_params(0).values(), GradientMode::Full).unwrap();
        let ch = built.cascade(&sample_points(&spec, 2)).unwrap();
        assert_eq!(ch.len(), 6);
        assert!(ch.iter().all(|c| c.cols() == 7));
    }

    #[test]
    fn end_to_end_invariance_for_every_operator() {
        for op in [
            InvariantOp::Delta,
            InvariantOp::DeltaEdge,
            InvariantOp::Sum,
            InvariantOp::L2norm,
        ] {
            for perm in [false, true] {
                let mut spec = ModelSpec::o5_regression();
                spec.points = 4;
                spec.invariant_op = op;
                spec.permutation_invariant = perm;
                spec.layers.push(LayerSpec::new(2, true, NormMode::Unit));
                let model = Model::new(spec.clone()).unwrap();
                let params = model.init_params(11);
                let x = sample_points(&spec, 5);
                for (k, sign) in [1i8, -1].into_iter().enumerate() {
                    let r = random_orthogonal(5, 40 + k as u64, sign).unwrap();
                    let rx = x.matmul(&r.transpose()).unwrap();
                    let a = model.predict(&params, &x).unwrap()[0];
                    let b = model.predict(&params, &rx).unwrap()[0];
                    assert!((a - b).abs() < 1e-10, "{op:?} perm={perm}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn permutation_invariance_is_bit_exact() {
        let mut spec = ModelSpec::o3_action();
        spec.points = 7;
        spec.center_points = true;
        let model = Model::new(spec.clone()).unwrap();
        let params = model.init_params(9);
        let x = sample_points(&spec, 8);
        let base = model.predict(&params, &x).unwrap();
        let mut rng = Sampler::new(77);
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..spec.points).collect();
            rng.shuffle(&mut order);
            let px = Mat::from_fn(x.rows(), x.cols(), |r, c| x[(order[r], c)]);
            let out = model.predict(&params, &px).unwrap();
            for (a, b) in base.iter().zip(&out) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let model = Model::new(ModelSpec::o5_regression()).unwrap();
        let mut params = model.init_params(1);
        let start = model.layout().entry("fc.hidden.weight").unwrap().offset;
        for v in &mut params.values_mut()[start..] {
            *v = 0.0;
        }
        let out = model
            .predict(&params, &sample_points(model.spec(), 3))
            .unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        let mut spec = ModelSpec::o5_regression();
        spec.layers.clear();
        assert!(Model::new(spec).is_err());
        let mut spec = ModelSpec::o5_regression();
        spec.fc_hidden = 0;
        assert!(Model::new(spec).is_err());
        assert!(ModelSpec::preset("nope").is_err());
        let model = Model::new(ModelSpec::o5_regression()).unwrap();
        let params = model.init_params(0);
        assert!(model.predict(&params, &Mat::zeros(2, 4)).is_err());
        assert!(model.build(&params.values()[1..], GradientMode::Full).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ModelSpec::o3_action();
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let err = toml::from_str::<ModelSpec>(&format!("{text}\nbogus = 1\n"));
        assert!(err.is_err());
    }
}
