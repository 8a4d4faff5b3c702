use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// A trainable tensor with a stable name.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk form of a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDocument {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    /// SHA-256 over names, shapes and values; checked on load when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub parameters: BTreeMap<String, TensorRecord>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Parameter) -> Result<()> {
        if self.get(param.name()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate parameter name {}", param.name())));
        }
        self.params.push(param);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn by_index(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a borrowed trainable leaf, in order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(&p.value)).collect()
    }

    /// Registers every parameter as a constant (frozen) leaf, in order.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant_ref(&p.value)).collect()
    }

    /// Gradients for the bound leaves, zero where the loss did not reach.
    pub fn collect_grads(&self, vars: &[Var], grads: &Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }

    /// Adds `grads` into the stored gradients, creating them if absent.
    pub fn accumulate_grads(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::InvalidShape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::InvalidShape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            match &mut p.grad {
                Some(existing) => existing.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn digest(&self) -> String {
        let mut sorted: Vec<&Parameter> = self.params.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut h = Sha256::new();
        for p in sorted {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update((p.value.shape().len() as u64).to_le_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize().as_slice())
    }

    pub fn to_document(&self, component: Option<&str>) -> WeightDocument {
        WeightDocument {
            format_version: WEIGHT_FORMAT_VERSION,
            component: component.map(str::to_owned),
            digest: Some(self.digest()),
            parameters: self
                .params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        TensorRecord {
                            shape: p.value.shape().to_vec(),
                            values: p.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds a parameter set in the order of `layout`, which lists the
    /// expected names and shapes. Extra or missing names are errors.
    pub fn from_document(doc: &WeightDocument, layout: &[(String, Vec<usize>)]) -> Result<Self> {
        if doc.format_version != WEIGHT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported weight format version {} (expected {WEIGHT_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.parameters.len() != layout.len() {
            return Err(Error::Data(format!(
                "weight document has {} parameters, expected {}",
                doc.parameters.len(),
                layout.len()
            )));
        }
        let mut set = ParamSet::new();
        for (name, shape) in layout {
            let rec = doc
                .parameters
                .get(name)
                .ok_or_else(|| Error::Data(format!("missing parameter {name}")))?;
            if &rec.shape != shape {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    rec.shape
                )));
            }
            let value = Tensor::new(rec.shape.clone(), rec.values.clone())
                .map_err(|e| Error::Data(format!("parameter {name}: {e}")))?;
            set.push(Parameter::new(name.clone(), value))?;
        }
        if let Some(expected) = &doc.digest {
            let actual = set.digest();
            if &actual != expected {
                return Err(Error::Data(format!(
                    "weight digest mismatch: file says {expected}, values hash to {actual}"
                )));
            }
        }
        Ok(set)
    }
}
