//! Federated training: client sampling, local contrastive training on
//! privately perturbed views, FedAvg aggregation and evaluation.
//!
//! Per round the server samples `c` of `M` clients. Each sampled client
//! starts from the current global parameters and streams over its local
//! graphs; for every graph it releases two perturbed views, encodes them,
//! draws `k` negatives from its stack and takes one SGD step on
//! `gamma * InfoNCE + two-view BCE`. The server then averages the uploaded
//! parameters in ascending client-id order.

use rand::seq::index;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{classification_loss, combined_loss, info_nce, NegativeStack, StackEntry};
use crate::dp::{budget_report, make_views, perturb, PrivacyBudget};
use crate::error::{Error, Result};
use crate::gnn::{normalize, normalize_weights, readout, EncoderConfig, EncoderKind, GraphModel};
use crate::graph::{partition, stratified_split, Dataset, GraphInstance};
use crate::metrics::{macro_average, roc_auc};
use crate::nn::{ParamStore, Tape, Tensor};
use crate::rng::{substream, Stream};

/// Which adjacency the evaluation feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Clean,
    /// A fresh perturbation with the first view's budget.
    Perturbed,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(EvalMode::Clean),
            "perturbed" => Ok(EvalMode::Perturbed),
            other => Err(Error::arg(format!("unknown eval mode `{other}`"))),
        }
    }
}

/// Everything that governs one federated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clients: usize,
    pub sampled: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    pub tag_hops: usize,
    pub lr: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub gamma: f64,
    pub tau: f64,
    pub k: usize,
    pub cap_n: usize,
    pub eval_mode: EvalMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clients: 8,
            sampled: 4,
            rounds: 100,
            local_epochs: 1,
            encoder: EncoderKind::Gcn,
            layers: 2,
            hidden: 64,
            tag_hops: 2,
            lr: 0.01,
            eps0: 1.0,
            eps1: 1.0,
            gamma: 0.1,
            tau: 1.0,
            k: 10,
            cap_n: 100,
            eval_mode: EvalMode::Perturbed,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.encoder,
            layers: self.layers,
            hidden: self.hidden,
            tag_hops: self.tag_hops,
        }
    }

    /// Checks documented ranges. Returns advisory warnings for values that
    /// are valid but outside the usual hyper-parameter grid.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(field, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("eps0", self.eps0)?;
        positive("eps1", self.eps1)?;
        positive("tau", self.tau)?;
        positive("lr", self.lr).or_else(|e| if self.lr == 0.0 { Ok(()) } else { Err(e) })?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(config_err("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        if self.clients == 0 {
            return Err(config_err("clients", "must be at least 1"));
        }
        if self.sampled == 0 || self.sampled > self.clients {
            return Err(config_err(
                "sampled",
                format!("must satisfy 1 <= sampled <= clients ({}), got {}", self.clients, self.sampled),
            ));
        }
        if self.k == 0 {
            return Err(config_err("k", "must be at least 1"));
        }
        if self.k >= self.cap_n {
            return Err(config_err("k", format!("must be smaller than cap_n ({})", self.cap_n)));
        }
        if self.local_epochs == 0 {
            return Err(config_err("local_epochs", "must be at least 1"));
        }
        if self.layers == 0 {
            return Err(config_err("layers", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(config_err("hidden", "must be at least 1"));
        }
        if self.encoder == EncoderKind::Tag && self.tag_hops == 0 {
            return Err(config_err("tag_hops", "must be at least 1 for the tag encoder"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_err("test_fraction", "must lie in (0, 1)"));
        }
        let mut warnings = Vec::new();
        if ![0.0, 0.001, 0.01, 0.1, 1.0].contains(&self.gamma) {
            warnings.push(format!("gamma {} is outside the grid {{0.001, 0.01, 0.1, 1}}", self.gamma));
        }
        for (name, eps) in [("eps0", self.eps0), ("eps1", self.eps1)] {
            if ![0.1, 1.0, 10.0, 100.0].contains(&eps) {
                warnings.push(format!("{name} {eps} is outside the grid {{0.1, 1, 10, 100}}"));
            }
        }
        if ![1, 5, 10, 20, 30, 40, 50].contains(&self.k) {
            warnings.push(format!("k {} is outside the grid {{1, 5, 10, 20, 30, 40, 50}}", self.k));
        }
        if self.tau != 1.0 {
            warnings.push(format!("tau {} differs from the usual value 1", self.tau));
        }
        Ok(warnings)
    }

    fn budgets(&self) -> Result<(PrivacyBudget, PrivacyBudget)> {
        Ok((PrivacyBudget::new(self.eps0)?, PrivacyBudget::new(self.eps1)?))
    }
}

/// Global parameters and the number of completed aggregations.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub model: GraphModel,
    pub params: ParamStore,
    pub round: usize,
}

/// State a simulated client keeps across rounds.
#[derive(Debug, Clone)]
pub struct ClientRuntime {
    pub id: usize,
    pub data: Dataset,
    pub stack: NegativeStack,
    /// Local epochs trained so far, for budget accounting.
    pub epochs_trained: usize,
}

impl ClientRuntime {
    /// Builds a client and seeds its stack with views of its last
    /// `min(k, local size)` graphs.
    pub fn new(id: usize, data: Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mut stack = NegativeStack::new(cfg.cap_n)?;
        let (_, eps1) = cfg.budgets()?;
        let mut rng = substream(cfg.seed, Stream::StackInit, &[id as u64]);
        stack.init_from(&data, cfg.k.min(data.len()), &eps1, &mut rng)?;
        Ok(ClientRuntime {
            id,
            data,
            stack,
            epochs_trained: 0,
        })
    }

    pub fn graph_ids(&self) -> Vec<u64> {
        self.data.graphs().iter().map(GraphInstance::id).collect()
    }
}

/// Per-graph outcome of one local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub contrastive: f64,
    /// `None` when every task of the graph is masked.
    pub classification: Option<f64>,
    pub total: f64,
    pub fallback: bool,
}

/// Loss terms and their gradients for one target graph, with the given
/// views and already-encoded (constant) negatives.
pub fn step_gradients(
    model: &GraphModel,
    params: &ParamStore,
    graph: &GraphInstance,
    view0: &Tensor,
    view1: &Tensor,
    negatives: &[Tensor],
    gamma: f64,
    tau: f64,
) -> Result<(ParamStore, f64, Option<f64>, f64)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(graph.features().clone());
    let w0 = tape.leaf(view0.clone());
    let w1 = tape.leaf(view1.clone());
    let n0 = model.encode(&mut tape, &bound, w0, x)?;
    let h0 = readout(&mut tape, n0)?;
    let n1 = model.encode(&mut tape, &bound, w1, x)?;
    let h1 = readout(&mut tape, n1)?;
    let negs: Vec<_> = negatives.iter().map(|n| tape.leaf(n.clone())).collect();
    let lc = info_nce(&mut tape, h0, h1, &negs, tau)?;
    let z0 = model.predict(&mut tape, &bound, h0)?;
    let z1 = model.predict(&mut tape, &bound, h1)?;
    let le = classification_loss(&mut tape, z0, z1, graph.labels(), graph.label_mask())?;
    let loss = combined_loss(&mut tape, lc, le, gamma)?;
    let grads = tape.backward(loss)?;
    let g = params.gradients(&tape, &bound, &grads)?;
    let le_value = match le {
        Some(v) => Some(tape.value(v).item()?),
        None => None,
    };
    Ok((g, tape.value(lc).item()?, le_value, tape.value(loss).item()?))
}

/// One streaming step on `graph`: release two views, sample and encode
/// negatives, descend on the combined loss, then push the second view.
#[allow(clippy::too_many_arguments)]
pub fn local_step<R: RngCore + ?Sized>(
    model: &GraphModel,
    params: &ParamStore,
    graph: &GraphInstance,
    stack: &mut NegativeStack,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ParamStore, StepLosses)> {
    let (eps0, eps1) = cfg.budgets()?;
    let (v0, v1) = make_views(graph, &eps0, &eps1, rng);
    let draw = stack.sample_negatives(graph.labels(), graph.label_mask(), cfg.k, rng)?;

    let mut cache: Vec<Option<Tensor>> = vec![None; stack.len()];
    let mut negatives = Vec::with_capacity(draw.indices.len());
    for &i in &draw.indices {
        if cache[i].is_none() {
            let e = stack.get(i).expect("sampled index is in range");
            cache[i] = Some(model.embed(params, &normalize(&e.view), &e.features)?);
        }
        negatives.push(cache[i].clone().expect("filled above"));
    }

    let (grads, lc, le, total) = step_gradients(
        model,
        params,
        graph,
        &normalize(&v0),
        &normalize(&v1),
        &negatives,
        cfg.gamma,
        cfg.tau,
    )?;
    let updated = params.sgd_step(&grads, cfg.lr)?;
    stack.push(StackEntry::new(v1, graph));
    Ok((
        updated,
        StepLosses {
            contrastive: lc,
            classification: le,
            total,
            fallback: draw.fallback,
        },
    ))
}

/// Aggregate statistics of one client's local training in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub client_id: usize,
    pub steps: usize,
    pub loss_c: f64,
    pub loss_e: f64,
    pub loss: f64,
    pub fallbacks: usize,
    pub stack_len: usize,
}

/// The substream a client uses in a given round.
pub fn client_round_rng(seed: u64, round: usize, client: usize) -> crate::rng::StreamRng {
    substream(seed, Stream::ClientRound, &[round as u64, client as u64])
}

/// Downloads `global`, trains `local_epochs` passes over the client's graphs
/// and returns the updated local parameters. `global` itself is untouched.
pub fn client_update(
    model: &GraphModel,
    global: &ParamStore,
    client: &mut ClientRuntime,
    cfg: &TrainConfig,
    round: usize,
) -> Result<(ParamStore, ClientStats)> {
    let mut rng = client_round_rng(cfg.seed, round, client.id);
    let mut params = global.clone();
    let (mut sum_c, mut sum_e, mut sum_l) = (0.0, 0.0, 0.0);
    let (mut steps, mut counted_e, mut fallbacks) = (0, 0, 0);
    for _ in 0..cfg.local_epochs {
        for g in client.data.graphs() {
            let (next, losses) = local_step(model, &params, g, &mut client.stack, cfg, &mut rng).map_err(|e| {
                Error::Training {
                    graph_id: g.id(),
                    source: Box::new(e),
                }
            })?;
            params = next;
            steps += 1;
            sum_c += losses.contrastive;
            sum_l += losses.total;
            if let Some(le) = losses.classification {
                sum_e += le;
                counted_e += 1;
            }
            fallbacks += usize::from(losses.fallback);
        }
        client.epochs_trained += 1;
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((
        params,
        ClientStats {
            client_id: client.id,
            steps,
            loss_c: mean(sum_c, steps),
            loss_e: mean(sum_e, counted_e),
            loss: mean(sum_l, steps),
            fallbacks,
            stack_len: client.stack.len(),
        },
    ))
}

/// `c` distinct client ids drawn uniformly from `0..M`, ascending.
pub fn sample_clients<R: RngCore + ?Sized>(num_clients: usize, c: usize, rng: &mut R) -> Result<Vec<usize>> {
    if c == 0 || c > num_clients {
        return Err(Error::arg(format!("cannot sample {c} of {num_clients} clients")));
    }
    let mut ids = index::sample(rng, num_clients, c).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// FedAvg: `(c/M) * mean(updates) + ((M - c)/M) * theta`.
///
/// Updates must be ordered by ascending client id; they are summed in the
/// given order on flattened vectors.
pub fn fedavg(theta: &ParamStore, updates: &[ParamStore], num_clients: usize, c: usize) -> Result<ParamStore> {
    if c == 0 || c > num_clients {
        return Err(Error::arg(format!("fedavg: need 1 <= c <= M, got c={c}, M={num_clients}")));
    }
    if updates.len() != c {
        return Err(Error::arg(format!("fedavg: {} updates for c={c}", updates.len())));
    }
    let schema = theta.schema();
    let mut sum = vec![0.0; schema.total_len()];
    for u in updates {
        if u.schema() != schema {
            return Err(Error::arg("fedavg: update schema differs from the global model"));
        }
        for (s, v) in sum.iter_mut().zip(u.flatten()) {
            *s += v;
        }
    }
    let w_new = c as f64 / num_clients as f64;
    let w_old = (num_clients - c) as f64 / num_clients as f64;
    let out: Vec<f64> = sum
        .iter()
        .zip(theta.flatten())
        .map(|(s, t)| w_new * (s / c as f64) + w_old * t)
        .collect();
    ParamStore::unflatten(&out, &schema)
}

/// Per-task and macro ROC-AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub macro_auc: f64,
    pub per_task: Vec<Option<f64>>,
}

/// Sigmoid scores for every graph and task. In perturbed mode each graph is
/// seen through a fresh release with budget `eps`.
pub fn predict_scores<R: RngCore + ?Sized>(
    model: &GraphModel,
    params: &ParamStore,
    data: &Dataset,
    perturbed: Option<&PrivacyBudget>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    data.graphs()
        .iter()
        .map(|g| {
            let w = match perturbed {
                Some(b) => normalize(&perturb(g, b, rng)),
                None => normalize_weights(&g.adjacency()),
            };
            let z = model.logits(params, &w, g.features())?;
            Ok(z.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect())
        })
        .collect()
}

/// Macro ROC-AUC over tasks that have both classes among observed labels.
pub fn evaluate<R: RngCore + ?Sized>(
    model: &GraphModel,
    params: &ParamStore,
    test: &Dataset,
    perturbed: Option<&PrivacyBudget>,
    rng: &mut R,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let scores = predict_scores(model, params, test, perturbed, rng)?;
    let per_task: Vec<Option<f64>> = (0..test.task_count())
        .map(|t| {
            let (s, y): (Vec<f64>, Vec<u8>) = test
                .graphs()
                .iter()
                .zip(&scores)
                .filter(|(g, _)| g.label_mask()[t])
                .map(|(g, sc)| (sc[t], g.labels()[t]))
                .unzip();
            roc_auc(&s, &y)
        })
        .collect();
    let macro_auc = macro_average(&per_task)
        .ok_or_else(|| Error::Evaluation("no task has both classes in the test set".into()))?;
    Ok(EvalResult { macro_auc, per_task })
}

/// Everything recorded for one aggregation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based index of the aggregation that produced this report.
    pub round: usize,
    pub sampled: Vec<usize>,
    pub clients: Vec<ClientStats>,
    pub auc_clean: f64,
    pub auc_perturbed: f64,
    pub per_task_clean: Vec<Option<f64>>,
    pub per_task_perturbed: Vec<Option<f64>>,
    pub fallbacks: usize,
    pub eps_cumulative: f64,
}

impl RoundReport {
    /// The metric selected by `mode`.
    pub fn headline_auc(&self, mode: EvalMode) -> f64 {
        match mode {
            EvalMode::Clean => self.auc_clean,
            EvalMode::Perturbed => self.auc_perturbed,
        }
    }
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub global: GlobalModel,
    pub reports: Vec<RoundReport>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Builds the initial global model for `data`.
pub fn init_global(cfg: &TrainConfig, data: &Dataset) -> Result<GlobalModel> {
    let model = GraphModel {
        encoder: cfg.encoder_config(),
        feature_dim: data.feature_dim(),
        task_count: data.task_count(),
    };
    let params = model.init_params(&mut substream(cfg.seed, Stream::Init, &[]))?;
    Ok(GlobalModel {
        model,
        params,
        round: 0,
    })
}

/// Runs the whole protocol on `data`: stratified split, partition across
/// clients, then `rounds` rounds of sample / local train / FedAvg / evaluate.
/// `on_round` sees each report as soon as it exists, so partial results
/// survive a later failure.
pub fn train_with(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_round: impl FnMut(&RoundReport) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = stratified_split(data, cfg.test_fraction, cfg.seed)?;
    let parts = partition(&train_set, cfg.clients, cfg.seed)?;
    let mut clients = parts
        .assignments
        .iter()
        .enumerate()
        .map(|(id, ids)| ClientRuntime::new(id, train_set.subset(ids)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut global = init_global(cfg, data)?;
    let (eps0, _) = cfg.budgets()?;
    let mut reports = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let wrap = |e: Error| Error::Round {
            round: round + 1,
            source: Box::new(e),
        };
        let sampled = sample_clients(
            cfg.clients,
            cfg.sampled,
            &mut substream(cfg.seed, Stream::ClientSampling, &[round as u64]),
        )
        .map_err(wrap)?;
        let model = global.model;
        let snapshot = &global.params;
        let results: Vec<Result<(ParamStore, ClientStats)>> = clients
            .par_iter_mut()
            .filter(|c| sampled.binary_search(&c.id).is_ok())
            .map(|c| client_update(&model, snapshot, c, cfg, round))
            .collect();
        let mut updates = Vec::with_capacity(results.len());
        let mut stats = Vec::with_capacity(results.len());
        for r in results {
            let (p, s) = r.map_err(wrap)?;
            updates.push(p);
            stats.push(s);
        }
        global.params = fedavg(&global.params, &updates, cfg.clients, cfg.sampled).map_err(wrap)?;
        global.round += 1;

        let mut eval_rng = substream(cfg.seed, Stream::Evaluation, &[round as u64]);
        let clean = evaluate(&model, &global.params, &test_set, None, &mut eval_rng).map_err(wrap)?;
        let noisy = evaluate(&model, &global.params, &test_set, Some(&eps0), &mut eval_rng).map_err(wrap)?;
        let max_epochs = clients.iter().map(|c| c.epochs_trained).max().unwrap_or(0);
        let report = RoundReport {
            round: global.round,
            sampled,
            fallbacks: stats.iter().map(|s| s.fallbacks).sum(),
            clients: stats,
            auc_clean: clean.macro_auc,
            auc_perturbed: noisy.macro_auc,
            per_task_clean: clean.per_task,
            per_task_perturbed: noisy.per_task,
            eps_cumulative: budget_report(max_epochs, cfg.eps0, cfg.eps1).map_err(wrap)?,
        };
        on_round(&report)?;
        reports.push(report);
    }
    Ok(TrainOutcome {
        global,
        reports,
        train_size: train_set.len(),
        test_size: test_set.len(),
    })
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, data, |_| Ok(()))
}
