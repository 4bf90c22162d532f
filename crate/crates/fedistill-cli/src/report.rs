//! Report assembly: `results.json` (full machine-readable record),
//! `tables/*.csv` (accuracy, fairness, rounds, optimal parameters), and
//! `plotdata/*.csv` (per-user λ/T interaction grids).
//!
//! Accuracies are printed to one decimal place in the CSVs and kept at
//! full precision in the JSON. Everything except the timestamp is a pure
//! function of the run artifacts, so identical runs produce identical
//! reports modulo that one line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fedistill_core::fedsim::{RoundLedger, RoundRecord};
use fedistill_core::metrics::{AccuracyTable, InteractionGrid, MethodAccuracy};
use fedistill_core::split::{FederatedSplit, SplitSpec};
use serde::{Deserialize, Serialize};

use crate::commands::{DistillResults, RunPaths};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportJson {
    pub schema_version: u32,
    /// The only non-deterministic field.
    pub timestamp_unix_secs: u64,
    /// Effective configuration, defaults included.
    pub config: RunConfig,
    pub split: SplitSummary,
    pub fedavg: FedSummary,
    pub personalized: PersonalizedSummary,
    pub budget: BudgetSummary,
    pub interaction_grids: Vec<InteractionGrid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub spec: SplitSpec,
    pub client_sizes: Vec<ClientSizes>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientSizes {
    pub client: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedSummary {
    pub global_rounds: usize,
    pub total_uploads: usize,
    pub total_downloads: usize,
    pub payload_params: usize,
    pub per_round: Vec<RoundSummary>,
}

/// [`RoundRecord`] minus its wall-clock field, which would break the
/// rule that identical runs produce identical reports modulo timestamp.
/// Timings stay in `ledger.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub uploads: usize,
    pub downloads: usize,
    pub payload_params: usize,
    pub mean_train_loss: f64,
}

impl From<&RoundRecord> for RoundSummary {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            uploads: r.uploads,
            downloads: r.downloads,
            payload_params: r.payload_params,
            mean_train_loss: r.mean_train_loss,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonalizedSummary {
    /// Per-user accuracy columns: the personalized models (averaged over
    /// repetitions) next to the final aggregated model.
    pub accuracy_table: AccuracyTable,
    pub teacher_round_histogram: BTreeMap<u32, usize>,
    pub optimal_params: Vec<OptimalParams>,
    pub results: DistillResults,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalParams {
    pub client: usize,
    /// λ* averaged over repetitions.
    pub lambda_star_mean: f64,
    /// T* averaged over repetitions.
    pub t_star_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetSummary {
    /// Local epochs per client for one repetition:
    /// rounds·local_epochs + |λ|·|T|·distill_epochs.
    pub per_client_per_repetition: Vec<u64>,
    /// Stage-1 epochs per client.
    pub fed_epochs: Vec<u64>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn acc(v: f64) -> String {
    format!("{v:.1}")
}

/// Builds and writes the full report.
pub fn emit_report(
    cfg: &RunConfig,
    paths: &RunPaths,
    federated: &FederatedSplit,
    ledger: &RoundLedger,
    results: &DistillResults,
) -> Result<()> {
    let report = build_report(cfg, federated, ledger, results)?;

    fs::create_dir_all(paths.tables_dir())
        .map_err(|e| CliError::io(paths.tables_dir().display().to_string(), e))?;
    fs::create_dir_all(paths.plotdata_dir())
        .map_err(|e| CliError::io(paths.plotdata_dir().display().to_string(), e))?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&paths.results_file(), &json)?;

    write_accuracy_table(&paths.tables_dir().join("per_user_accuracy.csv"), &report)?;
    write_fairness(&paths.tables_dir().join("fairness.csv"), &report)?;
    write_rounds(&paths.tables_dir().join("rounds.csv"), &report)?;
    write_optimal_params(&paths.tables_dir().join("optimal_params.csv"), &report)?;
    write_teacher_rounds(&paths.tables_dir().join("teacher_rounds.csv"), &report)?;
    for grid in &report.interaction_grids {
        write_plotdata(
            &paths
                .plotdata_dir()
                .join(format!("user_{}.csv", grid.client)),
            grid,
        )?;
    }
    Ok(())
}

pub fn build_report(
    cfg: &RunConfig,
    federated: &FederatedSplit,
    ledger: &RoundLedger,
    results: &DistillResults,
) -> Result<ReportJson> {
    let accuracy_table = AccuracyTable {
        methods: vec![
            MethodAccuracy::new("personalized", results.averaged_per_user_test_acc.clone())?,
            MethodAccuracy::new("fedavg_final", results.fedavg_test_acc.clone())?,
        ],
    };
    accuracy_table.verify(0.05)?;

    let mut histogram = BTreeMap::new();
    for &round in &results.teacher_rounds {
        *histogram.entry(round).or_insert(0usize) += 1;
    }

    let reps = results.repetitions.len().max(1) as f64;
    let clients = federated.client_count();
    let optimal_params: Vec<OptimalParams> = (0..clients)
        .map(|k| OptimalParams {
            client: k,
            lambda_star_mean: results
                .repetitions
                .iter()
                .map(|r| r.records[k].lambda_star)
                .sum::<f64>()
                / reps,
            t_star_mean: results
                .repetitions
                .iter()
                .map(|r| r.records[k].t_star)
                .sum::<f64>()
                / reps,
        })
        .collect();

    let interaction_grids = average_grids(results)?;

    let per_client_budget: Vec<u64> = (0..clients)
        .map(|k| {
            results
                .repetitions
                .first()
                .map(|r| r.records[k].budget)
                .unwrap_or(ledger.fed_epochs[k])
        })
        .collect();

    // The complexity contract: per repetition, every client executes
    // rounds·local_epochs + |λ|·|T|·epochs local epochs. A mismatch means
    // the artifacts came from different configurations.
    let distill_cfg = cfg.distill_config();
    let mut lambdas = distill_cfg.lambda_grid.clone();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let mut ts = distill_cfg.t_grid.clone();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let expected_budget = cfg.fed.rounds as u64 * cfg.hyper.local_epochs as u64
        + (lambdas.len() * ts.len()) as u64 * distill_cfg.epochs as u64;
    if !results.repetitions.is_empty() {
        for (k, &budget) in per_client_budget.iter().enumerate() {
            if budget != expected_budget {
                return Err(CliError::data(format!(
                    "client {k} executed {budget} local epochs but the configuration \
                     implies {expected_budget}; the run artifacts do not match this config"
                )));
            }
        }
    }

    Ok(ReportJson {
        schema_version: SCHEMA_VERSION,
        timestamp_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg.clone(),
        split: SplitSummary {
            spec: federated.spec.clone(),
            client_sizes: federated
                .clients
                .iter()
                .enumerate()
                .map(|(client, c)| ClientSizes {
                    client,
                    train: c.train.len(),
                    val: c.val.len(),
                    test: c.test.len(),
                })
                .collect(),
            notes: federated.notes.clone(),
        },
        fedavg: FedSummary {
            global_rounds: ledger.rounds.len(),
            total_uploads: ledger.total_uploads(),
            total_downloads: ledger.rounds.iter().map(|r| r.downloads).sum(),
            payload_params: ledger.rounds.first().map(|r| r.payload_params).unwrap_or(0),
            per_round: ledger.rounds.iter().map(RoundSummary::from).collect(),
        },
        personalized: PersonalizedSummary {
            accuracy_table,
            teacher_round_histogram: histogram,
            optimal_params,
            results: results.clone(),
        },
        budget: BudgetSummary {
            per_client_per_repetition: per_client_budget,
            fed_epochs: ledger.fed_epochs.clone(),
        },
        interaction_grids,
    })
}

/// Per-user grids of test accuracy averaged across repetitions.
fn average_grids(results: &DistillResults) -> Result<Vec<InteractionGrid>> {
    let Some(first_rep) = results.repetitions.first() else {
        return Ok(Vec::new());
    };
    let reps = results.repetitions.len() as f64;
    let mut grids = Vec::with_capacity(first_rep.sweeps.len());
    for (client, sweep) in first_rep.sweeps.iter().enumerate() {
        let mut lambda_grid: Vec<f64> = Vec::new();
        let mut t_grid: Vec<f64> = Vec::new();
        for cell in sweep {
            if !lambda_grid.contains(&cell.lambda) {
                lambda_grid.push(cell.lambda);
            }
            if !t_grid.contains(&cell.t) {
                t_grid.push(cell.t);
            }
        }
        let cols = t_grid.len();
        let mut matrix = vec![vec![0.0; cols]; lambda_grid.len()];
        for rep in &results.repetitions {
            for (i, cell) in rep.sweeps[client].iter().enumerate() {
                matrix[i / cols][i % cols] += cell.test_accuracy / reps;
            }
        }
        let grid = InteractionGrid {
            client,
            lambda_grid,
            t_grid,
            test_accuracy: matrix,
        };
        grid.validate()?;
        grids.push(grid);
    }
    Ok(grids)
}

fn write_accuracy_table(path: &Path, report: &ReportJson) -> Result<()> {
    let table = &report.personalized.accuracy_table;
    let mut out = String::from("user");
    for m in &table.methods {
        out.push(',');
        out.push_str(&m.method);
    }
    out.push('\n');
    let users = table.methods[0].per_user.len();
    for u in 0..users {
        out.push_str(&u.to_string());
        for m in &table.methods {
            out.push(',');
            out.push_str(&acc(m.per_user[u]));
        }
        out.push('\n');
    }
    out.push_str("mean");
    for m in &table.methods {
        out.push(',');
        out.push_str(&acc(m.mean));
    }
    out.push('\n');
    out.push_str("std_dev");
    for m in &table.methods {
        out.push(',');
        out.push_str(&acc(m.std_dev));
    }
    out.push('\n');
    write_text(path, &out)
}

fn write_fairness(path: &Path, report: &ReportJson) -> Result<()> {
    let mut out = String::from("method,mean,std_dev\n");
    for m in &report.personalized.accuracy_table.methods {
        out.push_str(&format!(
            "{},{},{}\n",
            m.method,
            acc(m.mean),
            acc(m.std_dev)
        ));
    }
    write_text(path, &out)
}

fn write_rounds(path: &Path, report: &ReportJson) -> Result<()> {
    let mut out = String::from("round,uploads,downloads,payload_params,mean_train_loss\n");
    for r in &report.fedavg.per_round {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            r.round, r.uploads, r.downloads, r.payload_params, r.mean_train_loss
        ));
    }
    write_text(path, &out)
}

fn write_optimal_params(path: &Path, report: &ReportJson) -> Result<()> {
    let mut out = String::from("user,lambda_star,t_star\n");
    for p in &report.personalized.optimal_params {
        out.push_str(&format!(
            "{},{:.2},{:.1}\n",
            p.client, p.lambda_star_mean, p.t_star_mean
        ));
    }
    write_text(path, &out)
}

fn write_teacher_rounds(path: &Path, report: &ReportJson) -> Result<()> {
    let mut out = String::from("round,count\n");
    for (round, count) in &report.personalized.teacher_round_histogram {
        out.push_str(&format!("{round},{count}\n"));
    }
    write_text(path, &out)
}

fn write_plotdata(path: &Path, grid: &InteractionGrid) -> Result<()> {
    let mut out = String::from("lambda,T,accuracy\n");
    for (i, &lambda) in grid.lambda_grid.iter().enumerate() {
        for (j, &t) in grid.t_grid.iter().enumerate() {
            out.push_str(&format!("{lambda},{t},{}\n", acc(grid.test_accuracy[i][j])));
        }
    }
    write_text(path, &out)
}
