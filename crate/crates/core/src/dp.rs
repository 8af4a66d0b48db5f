//! Edge-level differential privacy via the Laplace mechanism.
//!
//! A graph is released as a table keyed by unordered node pairs whose value
//! is the pair's connectivity. Adding `Laplace(0, sensitivity / epsilon)`
//! noise to every value gives an epsilon-DP release with respect to graphs
//! that differ in a single edge. The noised table, mirrored into a dense
//! symmetric matrix, is the [`PerturbedView`] used downstream as an augmented
//! graph.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphInstance;
use crate::nn::Tensor;
use crate::rng::{fork, open_unit, substream, Stream};

/// Privacy budget for one release of an edge table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    sensitivity: f64,
}

impl PrivacyBudget {
    /// Budget for the edge-existence query, whose sensitivity is 1.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::arg(format!("epsilon must be finite and > 0, got {epsilon}")));
        }
        Ok(PrivacyBudget {
            epsilon,
            sensitivity: 1.0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Laplace scale `sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// One row per unordered node pair `(i, j)`, `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTable {
    pub rows: Vec<((usize, usize), u8)>,
}

pub fn graph_to_table(g: &GraphInstance) -> EdgeTable {
    let p = g.num_nodes();
    let mut rows = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            rows.push(((i, j), u8::from(g.has_edge(i, j))));
        }
    }
    EdgeTable { rows }
}

/// Dense symmetric release of a noised edge table.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedView {
    pub weights: Tensor,
    pub epsilon_used: f64,
    pub source_id: u64,
}

/// Inverse-CDF transform of one uniform draw `u` in (0, 1) into a
/// `Laplace(0, scale)` variate.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// One `Laplace(0, scale)` draw consuming exactly one uniform from `rng`.
pub fn laplace_sample<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    debug_assert!(scale > 0.0);
    let u = open_unit(rng);
    if u == 0.5 {
        return 0.0;
    }
    laplace_from_uniform(u, scale)
}

/// Anything that can produce Laplace noise. Every [`RngCore`] qualifies;
/// [`ZeroNoise`] is a deterministic stand-in for tests.
pub trait LaplaceSource {
    fn laplace(&mut self, scale: f64) -> f64;
}

impl<R: RngCore + ?Sized> LaplaceSource for R {
    fn laplace(&mut self, scale: f64) -> f64 {
        laplace_sample(scale, self)
    }
}

/// Noise source that always returns 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl LaplaceSource for ZeroNoise {
    fn laplace(&mut self, _scale: f64) -> f64 {
        0.0
    }
}

/// Adds independent Laplace noise to every unordered pair of the adjacency
/// and mirrors it. The diagonal is left at zero and values are not clamped.
pub fn perturb<S: LaplaceSource + ?Sized>(
    g: &GraphInstance,
    budget: &PrivacyBudget,
    noise: &mut S,
) -> PerturbedView {
    let p = g.num_nodes();
    let scale = budget.scale();
    let mut w = g.adjacency();
    for i in 0..p {
        for j in i + 1..p {
            let v = w.get(i, j) + noise.laplace(scale);
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    PerturbedView {
        weights: w,
        epsilon_used: budget.epsilon(),
        source_id: g.id(),
    }
}

/// Two views from explicit noise sources.
pub fn make_views_with<S0, S1>(
    g: &GraphInstance,
    eps0: &PrivacyBudget,
    eps1: &PrivacyBudget,
    noise0: &mut S0,
    noise1: &mut S1,
) -> (PerturbedView, PerturbedView)
where
    S0: LaplaceSource + ?Sized,
    S1: LaplaceSource + ?Sized,
{
    (perturb(g, eps0, noise0), perturb(g, eps1, noise1))
}

/// Two independent augmented views of `g`, each drawn from its own
/// substream forked off `rng`.
pub fn make_views<R: RngCore + ?Sized>(
    g: &GraphInstance,
    eps0: &PrivacyBudget,
    eps1: &PrivacyBudget,
    rng: &mut R,
) -> (PerturbedView, PerturbedView) {
    let mut s0 = fork(rng);
    let mut s1 = fork(rng);
    make_views_with(g, eps0, eps1, &mut s0, &mut s1)
}

/// Graphs on the same node set whose edge sets differ by exactly one edge.
pub fn adjacent(g1: &GraphInstance, g2: &GraphInstance) -> bool {
    g1.num_nodes() == g2.num_nodes() && differing_pairs(g1, g2).len() == 1
}

fn differing_pairs(g1: &GraphInstance, g2: &GraphInstance) -> Vec<(usize, usize)> {
    let a = g1.edges();
    let b = g2.edges();
    let mut out: Vec<(usize, usize)> = a.iter().filter(|e| !g2.has_edge(e.0, e.1)).copied().collect();
    out.extend(b.iter().filter(|e| !g1.has_edge(e.0, e.1)));
    out
}

/// Settings for the empirical epsilon-DP check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpCheckConfig {
    pub epsilon: f64,
    pub n_samples: usize,
    pub n_bins: usize,
    /// Histogram range `[lo, hi)`; draws outside it are discarded.
    pub lo: f64,
    pub hi: f64,
    /// Bins with fewer draws than this in either histogram are ignored.
    pub min_count: u64,
    /// Tolerated Monte-Carlo excess over `e^epsilon`.
    pub slack: f64,
    pub seed: u64,
}

impl DpCheckConfig {
    pub fn new(epsilon: f64, n_samples: usize) -> Self {
        DpCheckConfig {
            epsilon,
            n_samples,
            n_bins: 40,
            lo: -5.0,
            hi: 6.0,
            min_count: 100,
            slack: 1.2,
            seed: 0,
        }
    }

    /// The pass threshold `e^epsilon * slack`.
    pub fn bound(&self) -> f64 {
        self.epsilon.exp() * self.slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpCheckReport {
    pub epsilon: f64,
    pub pair: (usize, usize),
    pub n_samples: usize,
    pub n_bins: usize,
    pub populated_bins: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Estimates the worst-case probability ratio between the released value of
/// the one pair on which two adjacent graphs differ.
///
/// Each graph is perturbed `n_samples` times; the differing pair's released
/// weights are histogrammed over shared bins and the largest ratio (in either
/// direction) over bins populated in both histograms is compared with
/// `e^epsilon * slack`.
pub fn dp_ratio_check(g1: &GraphInstance, g2: &GraphInstance, cfg: &DpCheckConfig) -> Result<DpCheckReport> {
    if !adjacent(g1, g2) {
        return Err(Error::arg("dp_ratio_check: graphs are not adjacent"));
    }
    let budget = PrivacyBudget::new(cfg.epsilon)?;
    if cfg.n_bins == 0 || cfg.n_samples == 0 || !(cfg.hi > cfg.lo) {
        return Err(Error::arg("dp_ratio_check: need samples, bins and a non-empty range"));
    }
    let pair = differing_pairs(g1, g2)[0];
    let width = (cfg.hi - cfg.lo) / cfg.n_bins as f64;
    let histogram = |g: &GraphInstance, stream: u64| {
        let mut rng = substream(cfg.seed, Stream::DpCheck, &[stream]);
        let mut counts = vec![0u64; cfg.n_bins];
        for _ in 0..cfg.n_samples {
            let v = perturb(g, &budget, &mut rng).weights.get(pair.0, pair.1);
            if v >= cfg.lo && v < cfg.hi {
                let bin = (((v - cfg.lo) / width) as usize).min(cfg.n_bins - 1);
                counts[bin] += 1;
            }
        }
        counts
    };
    let h1 = histogram(g1, 1);
    let h2 = histogram(g2, 2);
    let mut max_ratio: f64 = 0.0;
    let mut populated = 0;
    for (&a, &b) in h1.iter().zip(&h2) {
        if a >= cfg.min_count && b >= cfg.min_count {
            populated += 1;
            let r = a as f64 / b as f64;
            max_ratio = max_ratio.max(r).max(1.0 / r);
        }
    }
    let bound = cfg.bound();
    Ok(DpCheckReport {
        epsilon: cfg.epsilon,
        pair,
        n_samples: cfg.n_samples,
        n_bins: cfg.n_bins,
        populated_bins: populated,
        max_ratio,
        bound,
        pass: populated > 0 && max_ratio <= bound,
    })
}

/// The two-member adjacent pair of the three-person social network example:
/// `a` knows `b` and `c`, then `b` and `c` connect.
pub fn canonical_adjacent_pair() -> (GraphInstance, GraphInstance) {
    let mk = |edges: &[(usize, usize)]| {
        GraphInstance::new(0, 3, edges.iter().copied(), Tensor::filled(3, 1, 1.0), vec![0], vec![true])
            .expect("static graph is valid")
    };
    (mk(&[(0, 1), (0, 2)]), mk(&[(0, 1), (0, 2), (1, 2)]))
}

/// Additive (sequential-composition) per-graph budget after `epochs` passes
/// that each release two views. Reported, never enforced.
pub fn budget_report(epochs: usize, eps0: f64, eps1: f64) -> Result<f64> {
    if epochs == 0 {
        return Err(Error::arg("budget_report: epochs must be at least 1"));
    }
    Ok(epochs as f64 * (eps0 + eps1))
}
