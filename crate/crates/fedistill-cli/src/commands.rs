//! The five subcommands and the run-directory discipline they share:
//! one lock file per run directory, and no artifact is overwritten
//! without `--force`.

use std::fs;
use std::path::{Path, PathBuf};

use fedistill_core::data::Dataset;
use fedistill_core::distill::{
    grid_search, select_teacher, DistillConfig, InitMode, PersonalRecord, SweepCell,
};
use fedistill_core::fedsim::{init_global, run_fedavg, RoundLedger, TeacherSnapshot};
use fedistill_core::metrics::accuracy_on;
use fedistill_core::model::ModelParams;
use fedistill_core::rng::{derive_seed, stream};
use fedistill_core::split::{split, FederatedSplit};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest, ManifestEntry};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report;

/// Artifact locations inside one run directory.
pub struct RunPaths {
    out: PathBuf,
}

impl RunPaths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    pub fn split_file(&self) -> PathBuf {
        self.out.join("split.json")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    pub fn checkpoint_file(&self, round: u32) -> PathBuf {
        self.checkpoints_dir()
            .join(format!("round_{round:04}.pflc"))
    }

    pub fn manifest_file(&self) -> PathBuf {
        self.checkpoints_dir().join("manifest.json")
    }

    pub fn ledger_file(&self) -> PathBuf {
        self.out.join("ledger.json")
    }

    pub fn distill_results_file(&self) -> PathBuf {
        self.out.join("distill_results.json")
    }

    pub fn results_file(&self) -> PathBuf {
        self.out.join("results.json")
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.out.join("tables")
    }

    pub fn plotdata_dir(&self) -> PathBuf {
        self.out.join("plotdata")
    }

    fn lock_file(&self) -> PathBuf {
        self.out.join(".lock")
    }
}

/// Exclusive ownership of a run directory for the duration of a command.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(paths: &RunPaths, force: bool) -> Result<Self> {
        fs::create_dir_all(paths.dir())
            .map_err(|e| CliError::io(paths.dir().display().to_string(), e))?;
        let path = paths.lock_file();
        if force && path.exists() {
            let _ = fs::remove_file(&path);
        }
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::config(format!(
                    "run directory {} is locked by another process (or a stale lock; \
                     pass --force to take over)",
                    paths.dir().display()
                )))
            }
            Err(e) => Err(CliError::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::config(format!(
            "refusing to overwrite {}; pass --force to redo this step",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, json).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, produced_by: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|_| {
        CliError::data(format!(
            "incomplete run: {} is missing; run `{produced_by}` first",
            path.display()
        ))
    })?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::data(format!("{}: invalid artifact: {e}", path.display())))
}

pub fn load_split_file(path: &Path) -> Result<FederatedSplit> {
    read_json(path, "split")
}

/// `split`: freeze the federated data partition to `split.json`.
pub fn cmd_split(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<()> {
    let _lock = RunLock::acquire(paths, force)?;
    refuse_overwrite(&paths.split_file(), force)?;
    let dataset = cfg.load_dataset()?;
    let result = split(&dataset, &cfg.split_spec())?;
    write_json(&paths.split_file(), &result)?;
    println!(
        "wrote {} ({} clients, strategy {:?})",
        paths.split_file().display(),
        result.client_count(),
        result.spec.strategy
    );
    Ok(())
}

fn model_dims(cfg: &RunConfig, dataset: &Dataset) -> Vec<usize> {
    let mut dims = vec![dataset.dim()];
    dims.extend_from_slice(&cfg.model.hidden);
    dims.push(dataset.num_classes());
    dims
}

/// `train`: stage 1 — federated averaging with per-round checkpoints and
/// a hash manifest.
pub fn cmd_train(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<()> {
    let _lock = RunLock::acquire(paths, force)?;
    refuse_overwrite(&paths.manifest_file(), force)?;

    let dataset = cfg.load_dataset()?;
    let federated = load_split_file(&paths.split_file())?;
    let fed_cfg = cfg.fed_config(cfg.seed);
    let init = init_global(&model_dims(cfg, &dataset), fed_cfg.seed)?;
    let output = run_fedavg(&dataset, &federated, &fed_cfg, &init)?;

    fs::create_dir_all(paths.checkpoints_dir())
        .map_err(|e| CliError::io(paths.checkpoints_dir().display().to_string(), e))?;
    let mut entries = Vec::with_capacity(output.snapshots.len());
    for snapshot in &output.snapshots {
        let file = paths.checkpoint_file(snapshot.round);
        checkpoint::save(&file, &snapshot.params)?;
        entries.push(ManifestEntry {
            round: snapshot.round,
            file: file.file_name().unwrap().to_string_lossy().into_owned(),
            sha256: checkpoint::file_sha256(&file)?,
        });
    }
    let manifest = Manifest {
        version: 1,
        rounds: entries,
        final_round: fed_cfg.rounds,
    };
    manifest.save(&paths.manifest_file())?;
    write_json(&paths.ledger_file(), &output.ledger)?;
    println!(
        "wrote {} checkpoints and {}",
        output.snapshots.len(),
        paths.manifest_file().display()
    );
    Ok(())
}

/// Everything `distill` produced, persisted for `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillResults {
    pub version: u32,
    pub fedavg_test_acc: Vec<f64>,
    pub fedavg_val_acc: Vec<f64>,
    /// Chosen teacher round per client (identical across repetitions —
    /// stage 1 is shared).
    pub teacher_rounds: Vec<u32>,
    pub repetitions: Vec<RepetitionResult>,
    /// Per-user test accuracy averaged over repetitions.
    pub averaged_per_user_test_acc: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: u32,
    pub seed: u64,
    pub records: Vec<PersonalRecord>,
    /// Per client, the full (λ, T) sweep.
    pub sweeps: Vec<Vec<SweepCell>>,
}

fn snapshots_from_manifest(
    paths: &RunPaths,
) -> Result<(Vec<TeacherSnapshot>, ModelParams, Manifest)> {
    let manifest = Manifest::load(&paths.manifest_file()).map_err(|e| match e {
        CliError::Io { path, .. } => CliError::data(format!(
            "incomplete run: {path} is missing; run `train` first"
        )),
        other => other,
    })?;
    let loaded = manifest.load_all(&paths.checkpoints_dir())?;
    let snapshots: Vec<TeacherSnapshot> = loaded
        .into_iter()
        .map(|(round, params)| TeacherSnapshot { round, params })
        .collect();
    let final_model = snapshots
        .iter()
        .find(|s| s.round == manifest.final_round)
        .ok_or_else(|| {
            CliError::data(format!(
                "manifest lists no checkpoint for the final round {}",
                manifest.final_round
            ))
        })?
        .params
        .clone();
    Ok((snapshots, final_model, manifest))
}

/// `distill`: stage 2 — teacher selection plus grid-searched distillation
/// for every client, repeated `repetitions` times with derived seeds.
pub fn cmd_distill(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<()> {
    let _lock = RunLock::acquire(paths, force)?;
    refuse_overwrite(&paths.distill_results_file(), force)?;

    let dataset = cfg.load_dataset()?;
    let federated = load_split_file(&paths.split_file())?;
    let (snapshots, final_model, _) = snapshots_from_manifest(paths)?;
    let ledger: RoundLedger = read_json(&paths.ledger_file(), "train")?;
    let distill_cfg = cfg.distill_config();

    let results = run_distill_stage(
        &dataset,
        &federated,
        &snapshots,
        &final_model,
        &ledger,
        &distill_cfg,
        cfg.seed,
        cfg.repetitions,
    )?;
    write_json(&paths.distill_results_file(), &results)?;
    println!(
        "wrote {} ({} repetitions x {} clients)",
        paths.distill_results_file().display(),
        results.repetitions.len(),
        federated.client_count()
    );
    Ok(())
}

/// Stage-2 orchestration shared by `cmd_distill` and tests.
#[allow(clippy::too_many_arguments)]
pub fn run_distill_stage(
    dataset: &Dataset,
    federated: &FederatedSplit,
    snapshots: &[TeacherSnapshot],
    final_model: &ModelParams,
    ledger: &RoundLedger,
    distill_cfg: &DistillConfig,
    run_seed: u64,
    repetitions: u32,
) -> Result<DistillResults> {
    let clients = federated.client_count();
    let mut fedavg_test_acc = Vec::with_capacity(clients);
    let mut fedavg_val_acc = Vec::with_capacity(clients);
    let mut teacher_rounds = Vec::with_capacity(clients);
    let mut choices = Vec::with_capacity(clients);
    for (k, client) in federated.clients.iter().enumerate() {
        let choice = select_teacher(snapshots, k, client, dataset)?;
        teacher_rounds.push(choice.round);
        choices.push(choice);
        fedavg_test_acc.push(accuracy_on(final_model, dataset, &client.test)?);
        fedavg_val_acc.push(accuracy_on(final_model, dataset, &client.val)?);
    }

    let mut repetition_results = Vec::with_capacity(repetitions as usize);
    for rep in 0..repetitions {
        let rep_seed = derive_seed(run_seed, &[stream::REPETITION, rep as u64]);
        let mut records = Vec::with_capacity(clients);
        let mut sweeps = Vec::with_capacity(clients);
        for (k, client) in federated.clients.iter().enumerate() {
            let teacher_params = match distill_cfg.init_mode {
                InitMode::OptimalTeacher => {
                    &snapshots
                        .iter()
                        .find(|s| s.round == choices[k].round)
                        .expect("chosen round exists")
                        .params
                }
                InitMode::FedavgFinal => final_model,
            };
            let seed = derive_seed(rep_seed, &[stream::DISTILL, k as u64]);
            let outcome = grid_search(teacher_params, k, client, dataset, distill_cfg, seed)?;
            records.push(PersonalRecord {
                client: k,
                teacher_round: choices[k].round,
                lambda_star: outcome.result.lambda_star,
                t_star: outcome.result.t_star,
                val_acc: outcome.result.val_accuracy,
                test_acc: outcome.result.test_accuracy,
                objective: distill_cfg.objective,
                init_mode: distill_cfg.init_mode,
                budget: ledger.fed_epochs[k]
                    + outcome.trained_candidates as u64 * distill_cfg.epochs as u64,
            });
            sweeps.push(outcome.sweep);
        }
        repetition_results.push(RepetitionResult {
            repetition: rep,
            seed: rep_seed,
            records,
            sweeps,
        });
    }

    let averaged: Vec<f64> = (0..clients)
        .map(|k| {
            repetition_results
                .iter()
                .map(|r| r.records[k].test_acc)
                .sum::<f64>()
                / repetitions as f64
        })
        .collect();

    Ok(DistillResults {
        version: 1,
        fedavg_test_acc,
        fedavg_val_acc,
        teacher_rounds,
        repetitions: repetition_results,
        averaged_per_user_test_acc: averaged,
    })
}

/// Which index set of a client `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
}

/// `evaluate`: accuracy of any checkpoint on any client subset.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    split_path: &Path,
    client: usize,
    subset: Subset,
) -> Result<f64> {
    let dataset = cfg.load_dataset()?;
    let federated = load_split_file(split_path)?;
    if client >= federated.client_count() {
        return Err(CliError::data(format!(
            "client {client} out of range for a split with {} clients",
            federated.client_count()
        )));
    }
    let params = checkpoint::load(checkpoint_path)?;
    let data = &federated.clients[client];
    let indices = match subset {
        Subset::Train => &data.train,
        Subset::Val => &data.val,
        Subset::Test => &data.test,
    };
    let acc = accuracy_on(&params, &dataset, indices)?;
    println!("accuracy: {acc:.4}");
    Ok(acc)
}

/// `report`: assemble results.json, tables/, and plotdata/ from the
/// artifacts of the earlier stages.
pub fn cmd_report(cfg: &RunConfig, paths: &RunPaths, force: bool) -> Result<()> {
    let _lock = RunLock::acquire(paths, force)?;
    refuse_overwrite(&paths.results_file(), force)?;

    let federated = load_split_file(&paths.split_file())?;
    let ledger: RoundLedger = read_json(&paths.ledger_file(), "train")?;
    let results: DistillResults = read_json(&paths.distill_results_file(), "distill")?;
    report::emit_report(cfg, paths, &federated, &ledger, &results)?;
    println!("wrote {}", paths.results_file().display());
    Ok(())
}
