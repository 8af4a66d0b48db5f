#![allow(dead_code)]

use fgcl::graph::GraphInstance;
use fgcl::nn::{ParamStore, Tensor};
use fgcl::rng::StreamRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn random_tensor(r: usize, c: usize, rng: &mut StreamRng) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(r, c, data).unwrap()
}

/// Erdos-Renyi graph with Gaussian-ish features and random labels.
pub fn random_graph(id: u64, p: usize, q: usize, t: usize, rng: &mut StreamRng) -> GraphInstance {
    let mut edges = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            if rng.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..t).map(|_| rng.random_range(0..2u8)).collect();
    let mut mask: Vec<bool> = (0..t).map(|_| rng.random_bool(0.8)).collect();
    mask[0] = true;
    GraphInstance::new(id, p, edges, random_tensor(p, q, rng), labels, mask).unwrap()
}

/// Relative error with a floor on the denominator, so two gradients that
/// are both essentially zero compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut g = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * step);
    }
    g
}

/// Central differences with respect to the flattened parameter vector.
pub fn numeric_param_grad(params: &ParamStore, step: f64, mut f: impl FnMut(&ParamStore) -> f64) -> Vec<f64> {
    let schema = params.schema();
    let base = params.flatten();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let up = f(&ParamStore::unflatten(&probe, &schema).unwrap());
        probe[i] = base[i] - step;
        let down = f(&ParamStore::unflatten(&probe, &schema).unwrap());
        probe[i] = base[i];
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Cosine similarity written out by hand.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na.max(1e-12) * nb.max(1e-12))
}

/// The contrastive objective evaluated literally: minus the log of the
/// positive pair's share of the exponentiated similarities.
pub fn info_nce_direct(h0: &[f64], h1: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let pos = (cosine(h0, h1) / tau).exp();
    let neg: f64 = negatives.iter().map(|n| (cosine(n, h1) / tau).exp()).sum();
    -(pos / (pos + neg)).ln()
}

/// Pairwise ROC-AUC: a positive ranked above a negative scores 1, a tie 0.5.
pub fn auc_brute_force(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    Some(credit / (pos.len() * neg.len()) as f64)
}

/// Laplace(0, b) distribution function.
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

pub fn store_from(values: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    let half = values.len() / 2;
    s.insert("a", Tensor::row(&values[..half])).unwrap();
    s.insert("b", Tensor::row(&values[half..])).unwrap();
    s
}
