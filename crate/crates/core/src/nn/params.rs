use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered list of parameter names and shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema(pub Vec<(String, (usize, usize))>);

impl ParamSchema {
    pub fn total_len(&self) -> usize {
        self.0.iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// Named parameter tensors in insertion order.
///
/// This is the unit that clients download, update and upload, and the unit
/// the server averages. The JSON form is a map `name -> {shape, data}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

/// Tape handles for every parameter of a store, keyed by name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::arg(format!("no parameter named `{name}`")))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn schema(&self) -> ParamSchema {
        ParamSchema(
            self.tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.shape()))
                .collect(),
        )
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Concatenates all tensors, row-major, in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn unflatten(values: &[f64], schema: &ParamSchema) -> Result<ParamStore> {
        if values.len() != schema.total_len() {
            return Err(Error::arg(format!(
                "unflatten: {} values for a schema of {}",
                values.len(),
                schema.total_len()
            )));
        }
        let mut store = ParamStore::new();
        let mut offset = 0;
        for (name, (r, c)) in &schema.0 {
            let n = r * c;
            store.insert(
                name.clone(),
                Tensor::from_vec(*r, *c, values[offset..offset + n].to_vec())?,
            )?;
            offset += n;
        }
        Ok(store)
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Gathers the gradient of every bound parameter into a store with this
    /// store's schema; parameters off the loss path get zeros.
    pub fn gradients(&self, tape: &Tape, bound: &BoundParams, grads: &Gradients) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for name in self.tensors.keys() {
            out.insert(name.clone(), grads.wrt(tape, bound.var(name)?))?;
        }
        Ok(out)
    }

    /// Plain gradient descent: `theta - lr * grad`, elementwise.
    pub fn sgd_step(&self, grads: &ParamStore, lr: f64) -> Result<ParamStore> {
        if self.schema() != grads.schema() {
            return Err(Error::arg("sgd_step: gradient keys or shapes differ from parameters"));
        }
        let mut out = self.clone();
        for (p, g) in out.tensors.values_mut().zip(grads.tensors.values()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ParamStore> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
