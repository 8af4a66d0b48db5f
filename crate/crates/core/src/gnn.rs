//! Weighted-adjacency graph encoders, mean readout and the label classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::PerturbedView;
use crate::error::{Error, Result};
use crate::nn::{BoundParams, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Tag,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(EncoderKind::Gcn),
            "tag" => Ok(EncoderKind::Tag),
            other => Err(Error::arg(format!("unknown encoder `{other}` (expected gcn or tag)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    /// Propagation hops per TAG layer; ignored by GCN.
    pub tag_hops: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Gcn,
            layers: 2,
            hidden: 64,
            tag_hops: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::arg("encoder layers and hidden size must be at least 1"));
        }
        if self.kind == EncoderKind::Tag && self.tag_hops == 0 {
            return Err(Error::arg("tag encoder needs at least one hop"));
        }
        Ok(())
    }
}

/// `D^{-1/2} (max(W, 0) + I) D^{-1/2}` where `D` holds the row sums of
/// `max(W, 0) + I`. Clamping here is post-processing of the private release.
pub fn normalize(view: &PerturbedView) -> Tensor {
    normalize_weights(&view.weights)
}

pub fn normalize_weights(w: &Tensor) -> Tensor {
    let p = w.rows();
    let mut a = w.map(|v| v.max(0.0));
    for i in 0..p {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..p)
        .map(|i| 1.0 / a.row_slice(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..p {
        for j in 0..p {
            a.set(i, j, a.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    a
}

/// Encoder plus classifier for graphs with `feature_dim` node features and
/// `task_count` binary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    pub encoder: EncoderConfig,
    pub feature_dim: usize,
    pub task_count: usize,
}

fn weight_name(layer: usize) -> String {
    format!("encoder.{layer}.weight")
}

fn hop_name(layer: usize, hop: usize) -> String {
    format!("encoder.{layer}.hop{hop}.weight")
}

fn bias_name(layer: usize) -> String {
    format!("encoder.{layer}.bias")
}

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

impl GraphModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        self.encoder.validate()?;
        if self.feature_dim == 0 || self.task_count == 0 {
            return Err(Error::arg("feature_dim and task_count must be positive"));
        }
        let h = self.encoder.hidden;
        let mut store = ParamStore::new();
        for layer in 0..self.encoder.layers {
            let fan_in = if layer == 0 { self.feature_dim } else { h };
            match self.encoder.kind {
                EncoderKind::Gcn => store.insert(weight_name(layer), glorot(fan_in, h, rng))?,
                EncoderKind::Tag => {
                    for hop in 0..=self.encoder.tag_hops {
                        store.insert(hop_name(layer, hop), glorot(fan_in, h, rng))?;
                    }
                }
            }
            store.insert(bias_name(layer), Tensor::zeros(1, h))?;
        }
        store.insert(CLASSIFIER_WEIGHT, glorot(h, self.task_count, rng))?;
        store.insert(CLASSIFIER_BIAS, Tensor::zeros(1, self.task_count))?;
        Ok(store)
    }

    /// Node embeddings `p × hidden` from a normalized proximity matrix and
    /// node features. ReLU between layers, none after the last.
    pub fn encode(&self, tape: &mut Tape, params: &BoundParams, w_hat: Var, x: Var) -> Result<Var> {
        let (p, q) = tape.value(x).shape();
        if q != self.feature_dim || tape.value(w_hat).shape() != (p, p) {
            return Err(Error::shape(
                "encode",
                format!(
                    "features {p}x{q} (q expected {}), proximity {:?}",
                    self.feature_dim,
                    tape.value(w_hat).shape()
                ),
            ));
        }
        let mut h = x;
        for layer in 0..self.encoder.layers {
            let pre = match self.encoder.kind {
                EncoderKind::Gcn => {
                    let agg = tape.matmul(w_hat, h)?;
                    tape.matmul(agg, params.var(&weight_name(layer))?)?
                }
                EncoderKind::Tag => {
                    let mut propagated = h;
                    let mut acc = tape.matmul(propagated, params.var(&hop_name(layer, 0))?)?;
                    for hop in 1..=self.encoder.tag_hops {
                        propagated = tape.matmul(w_hat, propagated)?;
                        let term = tape.matmul(propagated, params.var(&hop_name(layer, hop))?)?;
                        acc = tape.add(acc, term)?;
                    }
                    acc
                }
            };
            h = tape.add_row(pre, params.var(&bias_name(layer))?)?;
            if layer + 1 < self.encoder.layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Affine classifier head: `1 × hidden` to `1 × task_count` logits.
    pub fn predict(&self, tape: &mut Tape, params: &BoundParams, graph_embedding: Var) -> Result<Var> {
        let z = tape.matmul(graph_embedding, params.var(CLASSIFIER_WEIGHT)?)?;
        tape.add_row(z, params.var(CLASSIFIER_BIAS)?)
    }

    /// Graph embedding on a fresh tape; no gradient is kept.
    pub fn embed(&self, params: &ParamStore, w_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let w = tape.leaf(w_hat.clone());
        let xv = tape.leaf(x.clone());
        let h = self.encode(&mut tape, &bound, w, xv)?;
        let g = readout(&mut tape, h)?;
        Ok(tape.value(g).clone())
    }

    /// Task logits for one graph, forward only.
    pub fn logits(&self, params: &ParamStore, w_hat: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let w = tape.leaf(w_hat.clone());
        let xv = tape.leaf(x.clone());
        let h = self.encode(&mut tape, &bound, w, xv)?;
        let g = readout(&mut tape, h)?;
        let z = self.predict(&mut tape, &bound, g)?;
        Ok(tape.value(z).clone())
    }
}

/// Mean pooling of node embeddings into one `1 × hidden` graph embedding.
pub fn readout(tape: &mut Tape, node_embeddings: Var) -> Result<Var> {
    tape.mean_rows(node_embeddings)
}
