//! Synchronous federated averaging with per-round snapshots.
//!
//! Every round broadcasts the current global model, trains it locally on
//! each client, and averages the results in ascending client order. The
//! per-(client, round) RNG seed is derived from the run seed, so the
//! outcome is independent of client execution order — local training
//! could run concurrently without changing a bit of the result.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::loss::one_hot;
use crate::model::{sgd_step, Hyper, ModelParams, TapedModel};
use crate::rng::{self, derive_seed, rng_from_seed};
use crate::split::FederatedSplit;
use crate::tape::Tape;
use crate::tensor::Tensor;

use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPolicy {
    EveryRound,
    FinalOnly,
}

/// Federated-averaging run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Global aggregation rounds E_G.
    pub rounds: u32,
    pub hyper: Hyper,
    /// Client count; must match the split.
    pub clients: usize,
    pub seed: u64,
    pub snapshot_policy: SnapshotPolicy,
    /// Weight client contributions by train-set size instead of
    /// uniformly. Off by default: the objective being simulated averages
    /// clients uniformly.
    pub weight_by_samples: bool,
}

impl FedConfig {
    pub fn new(rounds: u32, clients: usize, seed: u64) -> Self {
        Self {
            rounds,
            hyper: Hyper::default(),
            clients,
            seed,
            snapshot_policy: SnapshotPolicy::EveryRound,
            weight_by_samples: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::parameter("at least one global round is required"));
        }
        if self.clients == 0 {
            return Err(Error::parameter("at least one client is required"));
        }
        self.hyper.validate()
    }
}

/// Copy of the global model taken after aggregation round `round`
/// (1-based). Rounds in a snapshot store are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    pub round: u32,
    pub params: ModelParams,
}

/// Communication and loss accounting for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Model payloads sent client -> server this round.
    pub uploads: usize,
    /// Model payloads sent server -> client this round.
    pub downloads: usize,
    /// f64 parameters per payload.
    pub payload_params: usize,
    /// Mean (over clients) of the mean training loss observed locally.
    pub mean_train_loss: f64,
    /// Wall-clock seconds for the round; 0 in `no_std` builds.
    pub wall_secs: f64,
}

/// Full-run accounting: per-round communication plus the per-client
/// local-epoch budget split into its federated and distillation parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    pub rounds: Vec<RoundRecord>,
    pub fed_epochs: Vec<u64>,
    pub distill_epochs: Vec<u64>,
}

impl RoundLedger {
    pub fn new(clients: usize) -> Self {
        Self {
            rounds: Vec::new(),
            fed_epochs: vec![0; clients],
            distill_epochs: vec![0; clients],
        }
    }

    /// Total local epochs executed by one client across both stages.
    pub fn total_epochs(&self, client: usize) -> u64 {
        self.fed_epochs[client] + self.distill_epochs[client]
    }

    pub fn total_uploads(&self) -> usize {
        self.rounds.iter().map(|r| r.uploads).sum()
    }
}

/// Result of [`run_fedavg`].
pub struct FedRunOutput {
    pub snapshots: Vec<TeacherSnapshot>,
    pub final_model: ModelParams,
    pub ledger: RoundLedger,
}

pub(crate) struct TrainStats {
    pub params: ModelParams,
    pub mean_loss: f64,
}

/// Mini-batch SGD with cross-entropy on the client's train split.
/// Pure: the input parameters are unchanged. Deterministic for a fixed
/// seed. `hyper.local_epochs == 0` is tolerated and returns the input.
pub fn local_train(
    params: &ModelParams,
    dataset: &Dataset,
    client: &ClientData,
    hyper: &Hyper,
    seed: u64,
) -> Result<ModelParams> {
    Ok(local_train_stats(params, dataset, client, hyper, seed)?.params)
}

pub(crate) fn local_train_stats(
    params: &ModelParams,
    dataset: &Dataset,
    client: &ClientData,
    hyper: &Hyper,
    seed: u64,
) -> Result<TrainStats> {
    if client.train.is_empty() {
        return Err(Error::data("local_train: client has an empty train set"));
    }
    if hyper.batch_size == 0 {
        return Err(Error::parameter("local_train: batch size must be positive"));
    }
    let mut current = params.clone();
    let mut rng = rng_from_seed(seed);
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;

    let mut order = client.train.clone();
    for _ in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let (x, labels) = dataset.gather(batch)?;
            let (next, loss) = hard_step(&current, &x, &labels, dataset.num_classes(), hyper.eta)?;
            current = next;
            loss_sum += loss * batch.len() as f64;
            sample_count += batch.len();
        }
    }
    let mean_loss = if sample_count == 0 {
        0.0
    } else {
        loss_sum / sample_count as f64
    };
    Ok(TrainStats {
        params: current,
        mean_loss,
    })
}

/// One SGD step on mean cross-entropy; returns the updated parameters
/// and the pre-step batch loss.
fn hard_step(
    params: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
    eta: f64,
) -> Result<(ModelParams, f64)> {
    let mut tape = Tape::new();
    let model = TapedModel::record(&mut tape, params);
    let x_node = tape.leaf(x.clone());
    let logits = model.forward(&mut tape, x_node)?;
    let logp = tape.log_softmax(logits)?;
    let loss = tape.soft_cross_mean(logp, one_hot(labels, num_classes)?, 0.0)?;
    let loss_value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let layer_grads = model.grads(&tape, &grads);
    Ok((sgd_step(params, &layer_grads, eta)?, loss_value))
}

/// Element-wise arithmetic mean, summed in client-index order.
pub fn aggregate(client_params: &[ModelParams]) -> Result<ModelParams> {
    let weights = vec![1.0; client_params.len()];
    aggregate_weighted(client_params, &weights)
}

/// Weighted mean of parameter sets; weights are normalized internally.
pub fn aggregate_weighted(client_params: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if client_params.is_empty() {
        return Err(Error::size("aggregate: no client parameters"));
    }
    if weights.len() != client_params.len() {
        return Err(Error::dimension(format!(
            "aggregate: {} weights for {} clients",
            weights.len(),
            client_params.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::parameter(
            "aggregate: weights must sum to a positive value",
        ));
    }
    let first = &client_params[0];
    for (k, p) in client_params.iter().enumerate() {
        if !p.same_architecture(first) {
            return Err(Error::dimension(format!(
                "aggregate: client {k} parameters have a different architecture"
            )));
        }
    }
    let mut layers = Vec::with_capacity(first.num_layers());
    for li in 0..first.num_layers() {
        let mut weight = first.layers()[li].weight.scale(weights[0]);
        let mut bias = first.layers()[li].bias.scale(weights[0]);
        for (p, &w) in client_params.iter().zip(weights).skip(1) {
            weight = weight.add(&p.layers()[li].weight.scale(w))?;
            bias = bias.add(&p.layers()[li].bias.scale(w))?;
        }
        layers.push(crate::model::Layer {
            weight: weight.scale(1.0 / total),
            bias: bias.scale(1.0 / total),
            activation: first.layers()[li].activation,
        });
    }
    ModelParams::from_layers(layers)
}

/// Runs `cfg.rounds` rounds of federated averaging from a seeded
/// initialization, storing global-model snapshots per policy.
pub fn run_fedavg(
    dataset: &Dataset,
    split: &FederatedSplit,
    cfg: &FedConfig,
    init: &ModelParams,
) -> Result<FedRunOutput> {
    if split.client_count() != cfg.clients {
        return Err(Error::parameter(format!(
            "split has {} clients but config says {}",
            split.client_count(),
            cfg.clients
        )));
    }
    let mut global = init.clone();
    let mut snapshots = Vec::new();
    let mut ledger = RoundLedger::new(cfg.clients);
    let payload = global.num_params();

    for round in 1..=cfg.rounds {
        #[cfg(feature = "std")]
        let started = std::time::Instant::now();

        let mut client_params = Vec::with_capacity(cfg.clients);
        let mut loss_acc = 0.0;
        for (k, client) in split.clients.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[rng::stream::LOCAL, k as u64, round as u64]);
            let stats = local_train_stats(&global, dataset, client, &cfg.hyper, seed)?;
            loss_acc += stats.mean_loss;
            client_params.push(stats.params);
            ledger.fed_epochs[k] += cfg.hyper.local_epochs as u64;
        }
        global = if cfg.weight_by_samples {
            let weights: Vec<f64> = split.clients.iter().map(|c| c.train.len() as f64).collect();
            aggregate_weighted(&client_params, &weights)?
        } else {
            aggregate(&client_params)?
        };

        if cfg.snapshot_policy == SnapshotPolicy::EveryRound || round == cfg.rounds {
            snapshots.push(TeacherSnapshot {
                round,
                params: global.clone(),
            });
        }

        #[cfg(feature = "std")]
        let wall_secs = started.elapsed().as_secs_f64();
        #[cfg(not(feature = "std"))]
        let wall_secs = 0.0;

        ledger.rounds.push(RoundRecord {
            round,
            uploads: cfg.clients,
            downloads: cfg.clients,
            payload_params: payload,
            mean_train_loss: loss_acc / cfg.clients as f64,
            wall_secs,
        });
    }

    Ok(FedRunOutput {
        snapshots,
        final_model: global,
        ledger,
    })
}

/// Seeded initial global model for a run.
pub fn init_global(dims: &[usize], seed: u64) -> Result<ModelParams> {
    let mut rng = rng_from_seed(derive_seed(seed, &[rng::stream::INIT]));
    ModelParams::init_mlp(dims, &mut rng)
}
