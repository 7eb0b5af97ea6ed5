//! Named parameter tensors stored in one flat vector, and the binary
//! checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "DEHPARAM"
//! version      u32       1
//! manifest_len u32
//! manifest     JSON      { spec, tensors: [{name, shape, offset}], count }
//! values       count × f64
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Model, ModelSpec, NormMode};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEHPARAM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of named tensors. The order is the order in which
/// [`Model::build`] consumes values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let mut layout = ParamLayout {
            entries: Vec::new(),
            len: 0,
        };
        let mut channels = 1;
        for (l, layer) in spec.layers.iter().enumerate() {
            let m = spec.input_dim + l;
            for j in 0..channels * layer.width {
                layout.push(format!("layer{l}.neuron{j}.sphere"), vec![m + 2]);
                if layer.use_bias {
                    layout.push(format!("layer{l}.neuron{j}.bias"), vec![1]);
                }
                if layer.norm_mode == NormMode::Nonlinear {
                    layout.push(format!("layer{l}.neuron{j}.norm_scale"), vec![1]);
                }
            }
            channels *= layer.width;
        }
        let f = spec.feature_count();
        let h = spec.fc_hidden;
        let o = spec.output_dim;
        layout.push("fc.hidden.weight".into(), vec![h, f]);
        layout.push("fc.hidden.bias".into(), vec![h]);
        layout.push("fc.out.weight".into(), vec![o, h]);
        layout.push("fc.out.bias".into(), vec![o]);
        layout
    }

    fn push(&mut self, name: String, shape: Vec<usize>) {
        let entry = ParamEntry {
            name,
            shape,
            offset: self.len,
        };
        self.len += entry.len();
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::ParamMismatch(format!(
                "layout holds {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(ParamSet { layout, values })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len()];
        ParamSet { layout, values }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.entry(name).map(|e| &self.values[e.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    tensors: Vec<ParamEntry>,
    count: usize,
}

/// A model spec with its trained parameters.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        let expected = ParamLayout::for_spec(&spec);
        if &expected != params.layout() {
            return Err(Error::ParamMismatch(
                "parameter layout does not match the model spec".into(),
            ));
        }
        Ok(Checkpoint { spec, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            spec: self.spec.clone(),
            tensors: self.params.layout().entries().to_vec(),
            count: self.params.len(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let json_len = u32::try_from(json.len())
            .map_err(|_| Error::Checkpoint("manifest too large".into()))?;
        out.extend_from_slice(&json_len.to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic: not a parameter checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < json_len {
            return Err(fail("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..json_len])?;
        let raw = &body[json_len..];
        if raw.len() != manifest.count * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} values, found {} bytes",
                manifest.count,
                raw.len()
            )));
        }
        let model = Model::new(manifest.spec.clone())?;
        if model.layout().entries() != manifest.tensors.as_slice() {
            return Err(fail("tensor manifest does not match the model spec"));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ParamSet::new(model.layout().clone(), values)?;
        Ok(Checkpoint {
            spec: manifest.spec,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names_and_offsets() {
        let layout = ParamLayout::for_spec(&ModelSpec::o5_regression());
        let names: Vec<&str> = layout.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "layer0.neuron0.sphere",
                "layer0.neuron0.bias",
                "layer0.neuron0.norm_scale",
                "layer0.neuron1.sphere",
                "layer0.neuron1.bias",
                "layer0.neuron1.norm_scale",
                "fc.hidden.weight",
                "fc.hidden.bias",
                "fc.out.weight",
                "fc.out.bias",
            ]
        );
        assert_eq!(layout.entry("fc.hidden.weight").unwrap().shape, vec![32, 6]);
        assert_eq!(layout.entry("fc.out.bias").unwrap().offset, 274);
        assert_eq!(layout.len(), 275);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = Model::new(ModelSpec::o5_regression()).unwrap();
        let params = model.init_params(4);
        let ckpt = Checkpoint::new(model.spec().clone(), params.clone()).unwrap();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back.spec, *model.spec());
        let a: Vec<u64> = params.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let model = Model::new(ModelSpec::o5_regression()).unwrap();
        let ckpt = Checkpoint::new(model.spec().clone(), model.init_params(0)).unwrap();
        let mut bytes = ckpt.to_bytes().unwrap();
        let err = Checkpoint::from_bytes(b"NOTMAGIC\x01\0\0\0\0\0\0\0").unwrap_err();
        assert!(err.to_string().contains("magic"));
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let other = Model::new(ModelSpec::o3_action()).unwrap();
        assert!(Checkpoint::new(model.spec().clone(), other.init_params(0)).is_err());
    }
}
