//! Negative-sample stack, InfoNCE, the two-view classification loss and
//! their weighted combination.
//!
//! Training is streaming (one target graph per step), so negatives cannot
//! come from the same batch. Instead every client keeps a bounded FIFO of
//! perturbed views it has already trained on; negatives are drawn from the
//! entries whose labels disagree with the target's.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::dp::{perturb, PerturbedView, PrivacyBudget};
use crate::error::{Error, Result};
use crate::graph::{Dataset, GraphInstance};
use crate::nn::{Tape, Tensor, Var};

/// A stored negative candidate. Node features travel with the view so the
/// entry can be re-encoded with the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub view: PerturbedView,
    pub features: Tensor,
    pub labels: Vec<u8>,
    pub label_mask: Vec<bool>,
    pub source_id: u64,
}

impl StackEntry {
    pub fn new(view: PerturbedView, graph: &GraphInstance) -> Self {
        StackEntry {
            source_id: graph.id(),
            view,
            features: graph.features().clone(),
            labels: graph.labels().to_vec(),
            label_mask: graph.label_mask().to_vec(),
        }
    }
}

/// Capacity-bounded FIFO of negative candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeStack {
    capacity: usize,
    entries: VecDeque<StackEntry>,
}

/// Result of [`NegativeStack::sample_negatives`]: indices into the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeDraw {
    pub indices: Vec<usize>,
    /// No entry had a different label, so the whole stack was used.
    pub fallback: bool,
}

/// Whether two label vectors disagree on at least one task observed in both.
pub fn labels_differ(a: &[u8], a_mask: &[bool], b: &[u8], b_mask: &[bool]) -> bool {
    a.iter()
        .zip(a_mask)
        .zip(b.iter().zip(b_mask))
        .any(|((ya, &ma), (yb, &mb))| ma && mb && ya != yb)
}

impl NegativeStack {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::arg("negative stack capacity must be at least 1"));
        }
        Ok(NegativeStack {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&StackEntry> {
        self.entries.get(index)
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &StackEntry> {
        self.entries.iter()
    }

    /// Seeds the stack with views (budget `eps1`) of the last `k` graphs of
    /// `d`, oldest first. Requires `k < capacity` and `k <= d.len()`.
    pub fn init_from<R: RngCore + ?Sized>(
        &mut self,
        d: &Dataset,
        k: usize,
        eps1: &PrivacyBudget,
        rng: &mut R,
    ) -> Result<()> {
        if k >= self.capacity {
            return Err(Error::arg(format!(
                "stack init: k={k} must be smaller than capacity {}",
                self.capacity
            )));
        }
        if k > d.len() {
            return Err(Error::arg(format!(
                "stack init: k={k} exceeds dataset size {}",
                d.len()
            )));
        }
        for g in &d.graphs()[d.len() - k..] {
            let view = perturb(g, eps1, rng);
            self.push(StackEntry::new(view, g));
        }
        Ok(())
    }

    /// Appends an entry, evicting the oldest one when full.
    pub fn push(&mut self, entry: StackEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Draws `k` indices uniformly with replacement from the entries whose
    /// labels differ from the target's; falls back to the whole stack when
    /// there are none.
    pub fn sample_negatives<R: RngCore + ?Sized>(
        &self,
        target_labels: &[u8],
        target_mask: &[bool],
        k: usize,
        rng: &mut R,
    ) -> Result<NegativeDraw> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot sample negatives from an empty stack".into()));
        }
        let candidates: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| labels_differ(target_labels, target_mask, &e.labels, &e.label_mask))
            .map(|(i, _)| i)
            .collect();
        let fallback = candidates.is_empty();
        let pool: Vec<usize> = if fallback {
            (0..self.entries.len()).collect()
        } else {
            candidates
        };
        let indices = (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        Ok(NegativeDraw { indices, fallback })
    }
}

/// InfoNCE for one target with cosine similarity as the score:
///
/// `-log( e^{s(h0,h1)/tau} / (e^{s(h0,h1)/tau} + sum_t e^{s(n_t,h1)/tau}) )`
pub fn info_nce(tape: &mut Tape, h0: Var, h1: Var, negatives: &[Var], tau: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::arg("info_nce needs at least one negative"));
    }
    let pos = tape.cosine_similarity(h0, h1)?;
    let negs = negatives
        .iter()
        .map(|&n| tape.cosine_similarity(n, h1))
        .collect::<Result<Vec<_>>>()?;
    info_nce_from_scores(tape, pos, &negs, tau)
}

/// InfoNCE from precomputed `1 x 1` similarity scores, evaluated as
/// `logsumexp(scores / tau) - pos / tau`.
pub fn info_nce_from_scores(tape: &mut Tape, pos: Var, negatives: &[Var], tau: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::arg("info_nce needs at least one negative"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("temperature must be > 0, got {tau}")));
    }
    let inv_tau = 1.0 / tau;
    let pos = tape.scalar_scale(pos, inv_tau)?;
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    scores.push(pos);
    for &n in negatives {
        scores.push(tape.scalar_scale(n, inv_tau)?);
    }
    let column = tape.concat_rows(&scores)?;
    let row = tape.transpose(column)?;
    let lse = tape.logsumexp_row(row)?;
    tape.sub(lse, pos)
}

/// Forward-only [`info_nce_from_scores`] on plain numbers.
pub fn info_nce_score_value(pos: f64, negatives: &[f64], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::scalar(pos));
    let negs: Vec<Var> = negatives.iter().map(|&n| tape.leaf(Tensor::scalar(n))).collect();
    let l = info_nce_from_scores(&mut tape, p, &negs, tau)?;
    tape.value(l).item()
}

/// Forward-only [`info_nce`] on plain tensors.
pub fn info_nce_value(h0: &Tensor, h1: &Tensor, negatives: &[Tensor], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(h0.clone());
    let b = tape.leaf(h1.clone());
    let negs: Vec<Var> = negatives.iter().map(|n| tape.leaf(n.clone())).collect();
    let l = info_nce(&mut tape, a, b, &negs, tau)?;
    tape.value(l).item()
}

/// Mean of scalar losses (the `1/n` batch factor).
pub fn batch_mean(tape: &mut Tape, losses: &[Var]) -> Result<Var> {
    if losses.is_empty() {
        return Err(Error::arg("batch_mean of no losses"));
    }
    let stacked = tape.concat_rows(losses)?;
    let total = tape.sum(stacked)?;
    tape.scalar_scale(total, 1.0 / losses.len() as f64)
}

/// Two-view supervised loss `(BCE(z0, y) + BCE(z1, y)) / 2`, each BCE
/// averaged over observed tasks. `None` when every task is masked: the
/// instance contributes nothing and is excluded from batch means.
pub fn classification_loss(
    tape: &mut Tape,
    logits0: Var,
    logits1: Var,
    labels: &[u8],
    mask: &[bool],
) -> Result<Option<Var>> {
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let a = tape.bce_with_logits(logits0, &y, mask)?;
    let b = tape.bce_with_logits(logits1, &y, mask)?;
    let s = tape.add(a, b)?;
    Ok(Some(tape.scalar_scale(s, 0.5)?))
}

/// `gamma * contrastive + classification`; a skipped classification term
/// counts as zero.
pub fn combined_loss(tape: &mut Tape, contrastive: Var, classification: Option<Var>, gamma: f64) -> Result<Var> {
    let weighted = tape.scalar_scale(contrastive, gamma)?;
    match classification {
        Some(le) => tape.add(weighted, le),
        None => Ok(weighted),
    }
}
