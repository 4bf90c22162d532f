//! Stage 2: per-client teacher selection and distillation.
//!
//! [`select_teacher`] scans the stored global-model snapshots for the one
//! minimizing a client's validation cross-entropy — that snapshot is the
//! client's teacher. [`distill`] then trains a personal model from the
//! teacher's weights against a blend of hard labels and the teacher's
//! temperature-softened predictions:
//!
//! ```text
//! loss = (1-λ)·CE(σ(student(x)), y) + λT²·soft(teacher, student, T)
//! ```
//!
//! where `soft` is, per [`Objective`], either `KL(σ(teacher/T) ‖
//! σ(student/T))` or the cross-entropy of the student's softened
//! predictions against the teacher's softened targets. The imitation
//! weight λ and temperature T are chosen per client by [`grid_search`]
//! on validation accuracy; test data plays no part in the selection.
//!
//! The T² factor keeps the soft term's gradient contribution roughly
//! T-independent: the gradient of `σ(student/T)` shrinks as `1/T²`.
//!
//! Teacher forward passes happen outside the gradient tape — the teacher
//! is fixed information, never updated.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::fedsim::{run_fedavg, FedConfig, RoundLedger, TeacherSnapshot};
use crate::loss::{cross_entropy, neg_entropy_mean, one_hot, softmax_t, PROB_CLAMP};
use crate::math;
use crate::metrics::accuracy_on;
use crate::model::{forward, sgd_step, Hyper, ModelParams, TapedModel};
use crate::rng::{self, derive_seed, rng_from_seed};
use crate::split::FederatedSplit;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Soft-loss family of the distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// KL divergence between teacher and student distributions.
    Kl,
    /// Cross-entropy of the student's soft predictions against the
    /// teacher's soft targets.
    Gd,
}

/// Which distribution anchors the KL soft loss. The standard distillation
/// direction is [`KlDirection::TeacherRef`] (teacher as reference);
/// [`KlDirection::StudentRef`] is kept for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    TeacherRef,
    StudentRef,
}

/// Which model plays the teacher in stage 2: each client's optimal
/// snapshot, or the final aggregated model for every client (the
/// initialization ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    OptimalTeacher,
    FedavgFinal,
}

/// Stage-2 configuration: the (λ, T) search space and the distillation
/// training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub lambda_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Distillation epochs E per grid candidate.
    pub epochs: u32,
    pub objective: Objective,
    pub init_mode: InitMode,
    pub kl_direction: KlDirection,
    pub hyper: Hyper,
}

impl Default for DistillConfig {
    /// λ covers [0, 0.95] in steps of 0.05 — λ = 1 (pure imitation) is
    /// deliberately absent, it is never selected in practice — and T
    /// spans 1..25 coarsely.
    fn default() -> Self {
        Self {
            lambda_grid: (0..20).map(|i| i as f64 * 0.05).collect(),
            t_grid: alloc::vec![1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0, 25.0],
            epochs: 5,
            objective: Objective::Kl,
            init_mode: InitMode::OptimalTeacher,
            kl_direction: KlDirection::TeacherRef,
            hyper: Hyper::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.t_grid.is_empty() {
            return Err(Error::parameter("distillation grids must be non-empty"));
        }
        for &l in &self.lambda_grid {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::parameter(format!(
                    "imitation weight {l} outside [0, 1]"
                )));
            }
        }
        for &t in &self.t_grid {
            if !(t > 0.0) {
                return Err(Error::parameter(format!(
                    "temperature {t} must be positive"
                )));
            }
        }
        if self.epochs == 0 {
            return Err(Error::parameter(
                "at least one distillation epoch is required",
            ));
        }
        self.hyper.validate()
    }

    /// Sorted, deduplicated copies of the grids. Sweeping these in order
    /// makes the grid-search tie-break (lower λ, then lower T) fall out
    /// of "keep the first strict maximum".
    fn canonical_grids(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lambdas = self.lambda_grid.clone();
        lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lambdas.dedup();
        let mut ts = self.t_grid.clone();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        (lambdas, ts)
    }
}

/// A client's chosen teacher: snapshot round and the validation loss
/// that won.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherChoice {
    pub client: usize,
    pub round: u32,
    pub val_loss: f64,
}

/// Winner of a client's grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalResult {
    pub client: usize,
    pub lambda_star: f64,
    pub t_star: f64,
    pub params: ModelParams,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// One grid cell's outcome; test accuracy is recorded for reporting but
/// never consulted during selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub t: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Everything stage 2 produced for one client.
#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub teacher: TeacherChoice,
    pub result: PersonalResult,
    pub sweep: Vec<SweepCell>,
}

/// Flat per-client record for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalRecord {
    pub client: usize,
    pub teacher_round: u32,
    pub lambda_star: f64,
    #[serde(rename = "T_star")]
    pub t_star: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub objective: Objective,
    pub init_mode: InitMode,
    /// Local epochs this client executed across both stages.
    pub budget: u64,
}

/// Output of [`run_pipeline`].
pub struct PipelineOutcome {
    pub clients: Vec<ClientOutcome>,
    /// Final aggregated model's per-client test accuracy (the baseline
    /// every personalization result is compared against).
    pub fedavg_test_acc: Vec<f64>,
    pub fedavg_val_acc: Vec<f64>,
    pub final_model: ModelParams,
    pub ledger: RoundLedger,
    pub distill_cfg: DistillConfig,
}

impl PipelineOutcome {
    pub fn records(&self) -> Vec<PersonalRecord> {
        self.clients
            .iter()
            .map(|c| PersonalRecord {
                client: c.result.client,
                teacher_round: c.teacher.round,
                lambda_star: c.result.lambda_star,
                t_star: c.result.t_star,
                val_acc: c.result.val_accuracy,
                test_acc: c.result.test_accuracy,
                objective: self.distill_cfg.objective,
                init_mode: self.distill_cfg.init_mode,
                budget: self.ledger.total_epochs(c.result.client),
            })
            .collect()
    }

    pub fn per_user_test_acc(&self) -> Vec<f64> {
        self.clients
            .iter()
            .map(|c| c.result.test_accuracy)
            .collect()
    }
}

/// Scans snapshots for the one minimizing the client's validation
/// cross-entropy; ties go to the earliest round.
pub fn select_teacher(
    snapshots: &[TeacherSnapshot],
    client_index: usize,
    client: &ClientData,
    dataset: &Dataset,
) -> Result<TeacherChoice> {
    if snapshots.is_empty() {
        return Err(Error::data("select_teacher: no snapshots stored"));
    }
    if client.val.is_empty() {
        return Err(Error::data(format!(
            "select_teacher: client {client_index} has an empty validation set"
        )));
    }
    let (x, labels) = dataset.gather(&client.val)?;
    let mut best: Option<(u32, f64)> = None;
    for snapshot in snapshots {
        let logits = forward(&snapshot.params, &x)?;
        let probs = softmax_t(&logits, 1.0)?;
        let loss = cross_entropy(&probs, &labels)?;
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((snapshot.round, loss));
        }
    }
    let (round, val_loss) = best.expect("non-empty snapshots");
    Ok(TeacherChoice {
        client: client_index,
        round,
        val_loss,
    })
}

/// The recorded loss graph for one distillation batch.
pub struct DistillGraph {
    pub tape: Tape,
    pub model: TapedModel,
    pub logits: NodeId,
    pub hard: NodeId,
    pub soft: NodeId,
    pub loss: NodeId,
}

/// Builds `(1-λ)·hard + λT²·soft` for one batch. The teacher's forward
/// pass runs outside the tape and contributes no gradient.
#[allow(clippy::too_many_arguments)]
pub fn distill_loss(
    student: &ModelParams,
    teacher: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
    temperature: f64,
    objective: Objective,
    kl_direction: KlDirection,
) -> Result<DistillGraph> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::parameter(format!(
            "imitation weight {lambda} outside [0, 1]"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if student.out_dim() != teacher.out_dim() {
        return Err(Error::dimension(format!(
            "student outputs {} classes, teacher {}",
            student.out_dim(),
            teacher.out_dim()
        )));
    }

    let teacher_logits = forward(teacher, x)?;
    let teacher_soft = softmax_t(&teacher_logits, temperature)?;

    let mut tape = Tape::new();
    let model = TapedModel::record(&mut tape, student);
    let x_node = tape.leaf(x.clone());
    let logits = model.forward(&mut tape, x_node)?;

    let hard_logp = tape.log_softmax(logits)?;
    let hard = tape.soft_cross_mean(hard_logp, one_hot(labels, num_classes)?, 0.0)?;

    let scaled = tape.scale(logits, 1.0 / temperature);
    let soft_logp = tape.log_softmax(scaled)?;
    let soft = match (objective, kl_direction) {
        (Objective::Kl, KlDirection::TeacherRef) => {
            let offset = neg_entropy_mean(&teacher_soft);
            tape.soft_cross_mean(soft_logp, teacher_soft, offset)?
        }
        (Objective::Kl, KlDirection::StudentRef) => {
            let ln_teacher = teacher_soft.map(|p| math::ln(math::max(p, PROB_CLAMP)));
            tape.kl_to_const_mean(soft_logp, ln_teacher)?
        }
        (Objective::Gd, _) => tape.soft_cross_mean(soft_logp, teacher_soft, 0.0)?,
    };

    let loss = tape.weighted_sum(&[
        (hard, 1.0 - lambda),
        (soft, lambda * temperature * temperature),
    ])?;
    Ok(DistillGraph {
        tape,
        model,
        logits,
        hard,
        soft,
        loss,
    })
}

/// Trains a personal model: initialized from the teacher's weights, then
/// `cfg.epochs` epochs of mini-batch SGD on the distillation loss over
/// the client's train split. Deterministic for a fixed seed; the teacher
/// is read-only.
#[allow(clippy::too_many_arguments)]
pub fn distill(
    teacher: &ModelParams,
    client: &ClientData,
    dataset: &Dataset,
    cfg: &DistillConfig,
    lambda: f64,
    temperature: f64,
    seed: u64,
) -> Result<ModelParams> {
    if client.train.is_empty() {
        return Err(Error::data("distill: client has an empty train set"));
    }
    let mut student = teacher.clone();
    let mut rng = rng_from_seed(seed);
    let mut order = client.train.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.hyper.batch_size) {
            let (x, labels) = dataset.gather(batch)?;
            let graph = distill_loss(
                &student,
                teacher,
                &x,
                &labels,
                dataset.num_classes(),
                lambda,
                temperature,
                cfg.objective,
                cfg.kl_direction,
            )?;
            let grads = graph.tape.backward(graph.loss)?;
            let layer_grads = graph.model.grads(&graph.tape, &grads);
            student = sgd_step(&student, &layer_grads, cfg.hyper.eta)?;
        }
    }
    Ok(student)
}

/// Outcome of one client's grid search: the winner plus every cell.
pub struct GridSearchOutcome {
    pub result: PersonalResult,
    pub sweep: Vec<SweepCell>,
    /// Candidates actually trained (after grid deduplication).
    pub trained_candidates: usize,
}

/// Trains one candidate per (λ, T) pair — all from the same teacher
/// initialization and the same seed, so the pair is the only varying
/// factor — and selects the best validation accuracy. Ties break toward
/// lower λ, then lower T.
pub fn grid_search(
    teacher: &ModelParams,
    client_index: usize,
    client: &ClientData,
    dataset: &Dataset,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<GridSearchOutcome> {
    cfg.validate()?;
    if client.val.is_empty() || client.test.is_empty() {
        return Err(Error::data(format!(
            "grid_search: client {client_index} needs non-empty val and test sets"
        )));
    }
    let (lambdas, ts) = cfg.canonical_grids();
    let mut sweep = Vec::with_capacity(lambdas.len() * ts.len());
    let mut best: Option<PersonalResult> = None;
    for &lambda in &lambdas {
        for &t in &ts {
            let params = distill(teacher, client, dataset, cfg, lambda, t, seed)?;
            let val_accuracy = accuracy_on(&params, dataset, &client.val)?;
            let test_accuracy = accuracy_on(&params, dataset, &client.test)?;
            sweep.push(SweepCell {
                lambda,
                t,
                val_accuracy,
                test_accuracy,
            });
            if best.as_ref().is_none_or(|b| val_accuracy > b.val_accuracy) {
                best = Some(PersonalResult {
                    client: client_index,
                    lambda_star: lambda,
                    t_star: t,
                    params,
                    val_accuracy,
                    test_accuracy,
                });
            }
        }
    }
    Ok(GridSearchOutcome {
        result: best.expect("non-empty grids"),
        sweep,
        trained_candidates: lambdas.len() * ts.len(),
    })
}

/// The full two-stage pipeline: federated averaging with snapshots, then
/// per-client teacher selection and grid-searched distillation. `hidden`
/// gives the MLP hidden-layer widths; input/output sizes come from the
/// dataset.
pub fn run_pipeline(
    dataset: &Dataset,
    split: &FederatedSplit,
    fed_cfg: &FedConfig,
    distill_cfg: &DistillConfig,
    hidden: &[usize],
) -> Result<PipelineOutcome> {
    fed_cfg.validate()?;
    distill_cfg.validate()?;
    if split.client_count() != fed_cfg.clients {
        return Err(Error::parameter(format!(
            "split has {} clients but config says {}",
            split.client_count(),
            fed_cfg.clients
        )));
    }

    let mut dims = alloc::vec![dataset.dim()];
    dims.extend_from_slice(hidden);
    dims.push(dataset.num_classes());
    let init = crate::fedsim::init_global(&dims, fed_cfg.seed)?;

    let stage1 = run_fedavg(dataset, split, fed_cfg, &init)?;
    let mut ledger = stage1.ledger;

    let mut clients = Vec::with_capacity(fed_cfg.clients);
    let mut fedavg_test_acc = Vec::with_capacity(fed_cfg.clients);
    let mut fedavg_val_acc = Vec::with_capacity(fed_cfg.clients);
    for (k, client) in split.clients.iter().enumerate() {
        let teacher_choice = select_teacher(&stage1.snapshots, k, client, dataset)?;
        let teacher_params = match distill_cfg.init_mode {
            InitMode::OptimalTeacher => {
                &stage1
                    .snapshots
                    .iter()
                    .find(|s| s.round == teacher_choice.round)
                    .expect("chosen round exists")
                    .params
            }
            InitMode::FedavgFinal => &stage1.final_model,
        };
        let seed = derive_seed(fed_cfg.seed, &[rng::stream::DISTILL, k as u64]);
        let outcome = grid_search(teacher_params, k, client, dataset, distill_cfg, seed)?;
        ledger.distill_epochs[k] += outcome.trained_candidates as u64 * distill_cfg.epochs as u64;

        fedavg_test_acc.push(accuracy_on(&stage1.final_model, dataset, &client.test)?);
        fedavg_val_acc.push(accuracy_on(&stage1.final_model, dataset, &client.val)?);
        clients.push(ClientOutcome {
            teacher: teacher_choice,
            result: outcome.result,
            sweep: outcome.sweep,
        });
    }

    Ok(PipelineOutcome {
        clients,
        fedavg_test_acc,
        fedavg_val_acc,
        final_model: stage1.final_model,
        ledger,
        distill_cfg: distill_cfg.clone(),
    })
}
