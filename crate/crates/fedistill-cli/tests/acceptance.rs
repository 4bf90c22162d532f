//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `--nocapture` to see them).
//!
//! The headline experiments behind the reference accuracy tables are not
//! reproducible at desk scale, so the suite combines convention-level
//! reproduction of published summary statistics with property checks and
//! a directional end-to-end experiment on synthetic data.

use std::process::Command;
use std::sync::OnceLock;

use fedistill_core::data::{partition_client, synth_gaussian, ClientData, Dataset};
use fedistill_core::distill::{
    distill_loss, select_teacher, DistillConfig, InitMode, KlDirection, Objective,
};
use fedistill_core::fedsim::{init_global, FedConfig, SnapshotPolicy, TeacherSnapshot};
use fedistill_core::loss::{cross_entropy, one_hot, softmax_t};
use fedistill_core::metrics::fairness_stats;
use fedistill_core::model::{forward, Hyper, ModelParams, TapedModel};
use fedistill_core::rng::{derive_seed, rng_from_seed, stream};
use fedistill_core::split::{sample_dirichlet, split, FederatedSplit, SplitSpec, Strategy};
use fedistill_core::tape::Tape;
use fedistill_core::Tensor;
use rand::Rng;

fn pass(n: u32, label: &str) {
    println!("acceptance criterion {n} ({label}): PASS");
}

// ── Criterion 1: metric-convention reproduction ─────────────────────────

/// (method, split, per-user column, printed mean, printed std dev).
type Column = (&'static str, &'static str, [f64; 10], f64, f64);

#[rustfmt::skip]
const CIFAR_COLUMNS: [Column; 15] = [
    ("fedavg",     "ds1", [43.6, 50.9, 44.5, 51.3, 45.3, 44.2, 35.8, 37.9, 47.7, 48.6], 45.0, 5.1),
    ("fedavg",     "ds2", [50.8, 45.3, 49.4, 46.5, 50.8, 50.7, 46.5, 49.5, 48.7, 49.1], 48.7, 2.0),
    ("fedavg",     "ds3", [48.2, 40.8, 31.2, 31.5, 49.4, 47.8, 56.8, 58.1, 49.0, 53.5], 46.6, 9.4),
    ("persfl",     "ds1", [85.5, 78.2, 82.2, 82.1, 79.4, 77.1, 75.6, 79.7, 87.7, 91.0], 81.9, 4.9),
    ("persfl",     "ds2", [61.3, 56.9, 57.3, 60.1, 59.1, 61.9, 58.9, 61.2, 60.0, 58.8], 59.6, 1.7),
    ("persfl",     "ds3", [94.5, 79.9, 68.9, 82.5, 82.5, 79.9, 90.3, 87.6, 76.7, 80.3], 82.3, 7.2),
    ("fedper",     "ds1", [83.2, 74.5, 78.4, 77.9, 76.1, 72.1, 70.9, 75.6, 84.4, 88.5], 78.2, 5.6),
    ("fedper",     "ds2", [57.2, 51.4, 53.2, 55.4, 54.4, 57.6, 53.3, 56.9, 57.5, 54.3], 55.1, 2.1),
    ("fedper",     "ds3", [93.1, 77.0, 64.7, 77.5, 78.6, 76.9, 88.5, 84.6, 73.5, 77.9], 79.2, 7.9),
    ("pfedme",     "ds1", [74.3, 64.1, 69.6, 69.4, 67.2, 62.1, 59.9, 65.8, 75.5, 81.7], 69.0, 6.7),
    ("pfedme",     "ds2", [61.7, 57.3, 57.3, 58.9, 59.5, 60.6, 58.6, 60.2, 59.6, 58.3], 59.2, 1.4),
    ("pfedme",     "ds3", [94.2, 79.2, 64.4, 72.5, 80.0, 77.5, 88.3, 84.0, 66.9, 73.8], 78.1, 9.2),
    ("per-fedavg", "ds1", [69.2, 65.0, 67.9, 67.2, 65.8, 62.7, 58.2, 64.3, 72.5, 76.6], 66.9, 5.1),
    ("per-fedavg", "ds2", [58.2, 56.1, 57.2, 58.8, 59.4, 59.3, 57.7, 58.0, 55.8, 55.3], 57.6, 1.5),
    ("per-fedavg", "ds3", [92.5, 73.7, 64.6, 77.0, 82.5, 77.9, 89.1, 83.7, 64.1, 72.7], 77.8, 9.5),
];

#[rustfmt::skip]
const MNIST_COLUMNS: [Column; 15] = [
    ("fedavg",     "ds1", [91.2, 92.2, 88.0, 93.2, 92.3, 92.2, 93.8, 91.5, 94.3, 91.3], 92.0, 1.7),
    ("fedavg",     "ds2", [84.2, 85.2, 83.5, 84.4, 86.6, 84.5, 87.0, 86.8, 85.8, 86.7], 85.5, 1.3),
    ("fedavg",     "ds3", [98.3, 97.9, 96.2, 94.8, 96.3, 97.3, 97.7, 95.7, 94.3, 95.9], 96.4, 1.3),
    ("persfl",     "ds1", [98.3, 98.8, 99.5, 98.2, 98.7, 98.3, 98.7, 98.7, 98.3, 98.5], 98.6, 0.4),
    ("persfl",     "ds2", [88.6, 86.3, 86.0, 87.9, 88.1, 86.4, 88.8, 88.7, 89.1, 89.7], 88.0, 1.3),
    ("persfl",     "ds3", [99.6, 99.3, 98.7, 99.6, 99.6, 99.2, 99.8, 99.6, 99.2, 99.7], 99.4, 0.3),
    ("fedper",     "ds1", [98.2, 98.8, 98.3, 97.8, 98.2, 97.8, 98.5, 98.5, 98.3, 98.5], 98.3, 0.3),
    ("fedper",     "ds2", [84.2, 85.2, 83.5, 84.4, 86.6, 84.5, 87.0, 86.8, 85.8, 86.7], 85.5, 1.3),
    ("fedper",     "ds3", [99.9, 99.3, 98.2, 99.6, 99.6, 99.1, 99.9, 99.4, 98.9, 99.6], 99.4, 0.5),
    ("pfedme",     "ds1", [94.8, 95.8, 93.2, 94.3, 93.7, 94.2, 95.0, 95.8, 94.5, 96.2], 94.8, 1.0),
    ("pfedme",     "ds2", [88.2, 86.1, 85.4, 86.7, 87.4, 85.3, 88.0, 87.7, 87.9, 88.6], 87.1, 1.2),
    ("pfedme",     "ds3", [99.0, 98.3, 97.5, 97.6, 98.1, 98.5, 98.8, 98.0, 97.8, 98.3], 98.2, 0.5),
    ("per-fedavg", "ds1", [97.3, 99.0, 99.7, 98.7, 99.0, 98.8, 99.2, 99.3, 98.8, 99.2], 98.9, 0.6),
    ("per-fedavg", "ds2", [87.5, 86.1, 86.2, 87.5, 88.0, 86.8, 87.9, 88.2, 88.5, 89.1], 87.6, 1.0),
    ("per-fedavg", "ds3", [98.6, 97.6, 96.8, 96.0, 97.1, 97.7, 98.2, 96.9, 96.5, 97.4], 97.3, 0.8),
];

#[test]
fn criterion_01_metric_convention() {
    let tol = 0.05 + 1e-9;
    for (dataset, columns) in [("cifar", &CIFAR_COLUMNS), ("mnist", &MNIST_COLUMNS)] {
        for (method, ds, column, printed_mean, printed_std) in columns {
            let (mean, std) = fairness_stats(column).unwrap();
            assert!(
                (mean - printed_mean).abs() <= tol,
                "{dataset}/{method}/{ds}: computed mean {mean} vs printed {printed_mean}"
            );
            assert!(
                (std - printed_std).abs() <= tol,
                "{dataset}/{method}/{ds}: computed std {std} vs printed {printed_std}"
            );
        }
    }
    // the decisive convention column
    let (mean, std) = fairness_stats(&CIFAR_COLUMNS[3].2).unwrap();
    assert!((mean - 81.9).abs() <= tol && (std - 4.9).abs() <= tol);
    pass(
        1,
        "30 published columns reproduce printed mean/std within 0.05",
    );
}

// ── Criterion 2: gradient correctness ───────────────────────────────────

fn grad_close(ad: f64, fd: f64) -> bool {
    (ad - fd).abs() <= 1e-4 * ad.abs().max(fd.abs()) + 1e-8
}

/// Loss of a hard cross-entropy step as a pure function of flattened
/// parameters; used as the finite-difference target.
fn hard_loss_value(params: &ModelParams, x: &Tensor, labels: &[usize], classes: usize) -> f64 {
    let mut tape = Tape::new();
    let model = TapedModel::record(&mut tape, params);
    let x_node = tape.leaf(x.clone());
    let logits = model.forward(&mut tape, x_node).unwrap();
    let logp = tape.log_softmax(logits).unwrap();
    let loss = tape
        .soft_cross_mean(logp, one_hot(labels, classes).unwrap(), 0.0)
        .unwrap();
    tape.value(loss).item().unwrap()
}

fn perturbed(
    params: &ModelParams,
    layer: usize,
    weight: bool,
    entry: usize,
    h: f64,
) -> ModelParams {
    let mut layers = params.layers().to_vec();
    if weight {
        layers[layer].weight.data_mut()[entry] += h;
    } else {
        layers[layer].bias.data_mut()[entry] += h;
    }
    ModelParams::from_layers(layers).unwrap()
}

#[test]
fn criterion_02_gradient_correctness() {
    let h = 1e-5;
    // 100 random MLPs, up to 3 layers, widths <= 16, batches <= 8
    for trial in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC2, &[trial]));
        let depth = rng.random_range(1..=3usize);
        let mut dims = vec![rng.random_range(2..=16usize)];
        for _ in 0..depth {
            dims.push(rng.random_range(2..=16usize));
        }
        let params = ModelParams::init_mlp(&dims, &mut rng).unwrap();
        let batch = rng.random_range(1..=8usize);
        let classes = *dims.last().unwrap();
        let x = Tensor::matrix(
            batch,
            dims[0],
            (0..batch * dims[0])
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

        let mut tape = Tape::new();
        let model = TapedModel::record(&mut tape, &params);
        let x_node = tape.leaf(x.clone());
        let logits = model.forward(&mut tape, x_node).unwrap();
        let logp = tape.log_softmax(logits).unwrap();
        let loss = tape
            .soft_cross_mean(logp, one_hot(&labels, classes).unwrap(), 0.0)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        let layer_grads = model.grads(&tape, &grads);

        for li in 0..params.num_layers() {
            for (is_weight, count) in [
                (true, params.layers()[li].weight.numel()),
                (false, params.layers()[li].bias.numel()),
            ] {
                for e in 0..count {
                    let up = perturbed(&params, li, is_weight, e, h);
                    let dn = perturbed(&params, li, is_weight, e, -h);
                    let fd = (hard_loss_value(&up, &x, &labels, classes)
                        - hard_loss_value(&dn, &x, &labels, classes))
                        / (2.0 * h);
                    let ad = if is_weight {
                        layer_grads[li].weight.data()[e]
                    } else {
                        layer_grads[li].bias.data()[e]
                    };
                    assert!(
                        grad_close(ad, fd),
                        "trial {trial} layer {li} weight={is_weight} entry {e}: \
                         ad {ad} vs fd {fd}"
                    );
                }
            }
        }
    }

    // distillation loss with random (λ, T) over both objectives and both
    // KL directions
    for trial in 0..24u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC2D, &[trial]));
        let dims = [3usize, rng.random_range(2..=8usize), 4];
        let mut init_rng = rng_from_seed(derive_seed(0xACC2E, &[trial]));
        let student = ModelParams::init_mlp(&dims, &mut init_rng).unwrap();
        let teacher = ModelParams::init_mlp(&dims, &mut init_rng).unwrap();
        let batch = rng.random_range(2..=6usize);
        let x = Tensor::matrix(
            batch,
            3,
            (0..batch * 3)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..4)).collect();
        let lambda = rng.random_range(0.0..=1.0);
        let temperature = rng.random_range(0.5..20.0);
        let objective = if trial % 2 == 0 {
            Objective::Kl
        } else {
            Objective::Gd
        };
        let direction = if trial % 4 < 2 {
            KlDirection::TeacherRef
        } else {
            KlDirection::StudentRef
        };

        let graph = distill_loss(
            &student,
            &teacher,
            &x,
            &labels,
            4,
            lambda,
            temperature,
            objective,
            direction,
        )
        .unwrap();
        let grads = graph.tape.backward(graph.loss).unwrap();
        let layer_grads = graph.model.grads(&graph.tape, &grads);

        let eval = |p: &ModelParams| {
            let g = distill_loss(
                p,
                &teacher,
                &x,
                &labels,
                4,
                lambda,
                temperature,
                objective,
                direction,
            )
            .unwrap();
            g.tape.value(g.loss).item().unwrap()
        };
        for li in 0..student.num_layers() {
            for e in 0..student.layers()[li].weight.numel() {
                let fd = (eval(&perturbed(&student, li, true, e, h))
                    - eval(&perturbed(&student, li, true, e, -h)))
                    / (2.0 * h);
                let ad = layer_grads[li].weight.data()[e];
                assert!(
                    grad_close(ad, fd),
                    "distill trial {trial} λ={lambda} T={temperature}: ad {ad} vs fd {fd}"
                );
            }
        }
    }
    pass(
        2,
        "autodiff matches central differences, 100 MLPs + distillation losses",
    );
}

// ── Criterion 3: loss identities ────────────────────────────────────────

#[test]
fn criterion_03_loss_identities() {
    let mut rng = rng_from_seed(0xACC3);
    let student = ModelParams::init_mlp(&[3, 6, 5], &mut rng).unwrap();
    let teacher = ModelParams::init_mlp(&[3, 6, 5], &mut rng).unwrap();
    let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = vec![0, 2, 4, 1];

    // λ = 0 collapses the objective to the hard term, exactly
    let g = distill_loss(
        &student,
        &teacher,
        &x,
        &labels,
        5,
        0.0,
        9.0,
        Objective::Kl,
        KlDirection::TeacherRef,
    )
    .unwrap();
    let loss = g.tape.value(g.loss).item().unwrap();
    let hard = g.tape.value(g.hard).item().unwrap();
    assert_eq!(loss.to_bits(), hard.to_bits(), "λ=0 must collapse exactly");
    let ce = cross_entropy(
        &softmax_t(&forward(&student, &x).unwrap(), 1.0).unwrap(),
        &labels,
    )
    .unwrap();
    assert!(
        (hard - ce).abs() < 1e-12,
        "hard term {hard} vs pure cross-entropy {ce}"
    );

    // student == teacher zeroes the KL soft term
    let g = distill_loss(
        &student,
        &student,
        &x,
        &labels,
        5,
        0.7,
        4.0,
        Objective::Kl,
        KlDirection::TeacherRef,
    )
    .unwrap();
    let soft = g.tape.value(g.soft).item().unwrap();
    assert!(soft.abs() < 1e-12, "identical models left soft term {soft}");

    // uniform prediction over 10 classes costs ln 10
    let uniform = Tensor::matrix(3, 10, vec![0.1; 30]).unwrap();
    let ce = cross_entropy(&uniform, &[3, 7, 9]).unwrap();
    assert!(
        (ce - (10.0f64).ln()).abs() < 1e-9,
        "uniform CE {ce} vs ln 10"
    );

    pass(
        3,
        "λ=0 collapse exact; soft term zeroed; uniform CE = ln 10",
    );
}

// ── Criterion 4: splitter invariants ────────────────────────────────────

fn assert_disjoint(result: &FederatedSplit) {
    let mut seen = std::collections::BTreeSet::new();
    for client in &result.clients {
        for i in client.all_indices() {
            assert!(seen.insert(i), "index {i} assigned to two clients");
        }
    }
}

fn label_card(ds: &Dataset, client: &ClientData) -> usize {
    client
        .all_indices()
        .map(|i| ds.label_of(i))
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

#[test]
fn criterion_04_splitter_invariants() {
    let ds = synth_gaussian(10, 120, 2, 0.25, 0xACC4).unwrap();

    // DS-1: disjoint, equal sizes, exactly k_overlap classes. Each client
    // takes n/K samples from k classes of 120 each, so the spec demands a
    // dataset "large enough": k·120 must cover n/K, and without headroom
    // the packing degenerates into knife-edge instances that are provably
    // unsatisfiable (e.g. seven 2-class clients of 171 samples cannot
    // tile ten classes of 120). Factor-2 headroom keeps every generated
    // spec honestly feasible.
    for trial in 0..200u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC41, &[trial]));
        let clients = rng.random_range(2..=10usize);
        let k_min = (2 * (1200 / clients)).div_ceil(120).clamp(3, 10);
        let mut spec = SplitSpec::new(Strategy::Ds1, clients, trial);
        spec.k_overlap = rng.random_range(k_min..=10usize);
        let result = split(&ds, &spec).unwrap();
        assert_disjoint(&result);
        let sizes: Vec<usize> = result.clients.iter().map(|c| c.total()).collect();
        assert!(
            sizes.iter().all(|&s| s == sizes[0]),
            "ds1 sizes not equal: {sizes:?}"
        );
        for client in &result.clients {
            assert_eq!(label_card(&ds, client), spec.k_overlap, "spec {spec:?}");
        }
    }

    // DS-2: disjoint, full class coverage
    for trial in 0..200u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC42, &[trial]));
        let spec = SplitSpec::new(Strategy::Ds2, rng.random_range(2..=10usize), trial);
        let result = split(&ds, &spec).unwrap();
        assert_disjoint(&result);
        for client in &result.clients {
            assert_eq!(label_card(&ds, client), 10, "ds2 client missing a class");
        }
    }

    // DS-2: raw Dirichlet marginal std matches sqrt(p(1-p)/(α+1)) within 15%
    let (alpha, clients) = (0.9, 10usize);
    let conc = vec![alpha / clients as f64; clients];
    let mut shares = Vec::with_capacity(200 * clients);
    for draw in 0..200u64 {
        shares.extend(sample_dirichlet(&conc, derive_seed(0xACC43, &[draw])).unwrap());
    }
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    let var =
        shares.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / (shares.len() - 1) as f64;
    let p = 1.0 / clients as f64;
    let analytic = (p * (1.0 - p) / (alpha + 1.0)).sqrt();
    let empirical = var.sqrt();
    assert!(
        (empirical - analytic).abs() / analytic < 0.15,
        "dirichlet marginal std {empirical} vs analytic {analytic}"
    );

    // DS-3: disjoint, exactly 2 classes per client
    for trial in 0..200u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC44, &[trial]));
        let spec = SplitSpec::new(Strategy::Ds3, rng.random_range(2..=10usize), trial);
        let result = split(&ds, &spec).unwrap();
        assert_disjoint(&result);
        for client in &result.clients {
            assert_eq!(label_card(&ds, client), 2, "ds3 client label set wrong");
        }
    }

    // DS-3: σ -> 0 equalizes sizes up to rounding
    for trial in 0..20u64 {
        let mut spec = SplitSpec::new(Strategy::Ds3, 5, trial);
        spec.sigma = 1e-9;
        let result = split(&ds, &spec).unwrap();
        let sizes: Vec<usize> = result.clients.iter().map(|c| c.total()).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "σ→0 sizes {sizes:?}");
    }

    pass(4, "600 seeded splits hold disjointness/size/class invariants; Dirichlet std matches closed form");
}

// ── Criterion 5: teacher-selection oracle ───────────────────────────────

#[test]
fn criterion_05_teacher_selection_oracle() {
    let ds = synth_gaussian(5, 60, 2, 0.3, 0xACC5).unwrap();
    for trial in 0..1000u64 {
        let mut rng = rng_from_seed(derive_seed(0xACC51, &[trial]));
        // random client over a random subset
        let n = rng.random_range(10..=60usize);
        let mut indices: Vec<usize> = (0..ds.len()).collect();
        for i in 0..n {
            let j = rng.random_range(i..ds.len());
            indices.swap(i, j);
        }
        let client = partition_client(&indices[..n], derive_seed(0xACC52, &[trial])).unwrap();

        // random snapshots; occasionally duplicate parameters to force
        // exact ties (earliest round must win)
        let count = rng.random_range(1..=8usize);
        let mut snapshots: Vec<TeacherSnapshot> = Vec::with_capacity(count);
        for s in 0..count {
            let params = if s > 0 && rng.random_range(0.0..1.0) < 0.3 {
                snapshots[rng.random_range(0..s)].params.clone()
            } else {
                init_global(&[2, 4, 5], derive_seed(0xACC53, &[trial, s as u64])).unwrap()
            };
            snapshots.push(TeacherSnapshot {
                round: (s + 1) as u32,
                params,
            });
        }

        let choice = select_teacher(&snapshots, 0, &client, &ds).unwrap();

        // brute force with explicit earliest-round tie-break
        let (x, labels) = ds.gather(&client.val).unwrap();
        let mut best_round = 0u32;
        let mut best_loss = f64::INFINITY;
        for s in &snapshots {
            let loss = cross_entropy(
                &softmax_t(&forward(&s.params, &x).unwrap(), 1.0).unwrap(),
                &labels,
            )
            .unwrap();
            if loss < best_loss {
                best_loss = loss;
                best_round = s.round;
            }
        }
        assert_eq!(choice.round, best_round, "trial {trial}");
        assert_eq!(
            choice.val_loss.to_bits(),
            best_loss.to_bits(),
            "trial {trial}"
        );
    }
    pass(
        5,
        "select_teacher equals brute-force argmin on 1000 fixtures, ties included",
    );
}

// ── Criteria 6, 7, 9: the shared end-to-end experiment ──────────────────

struct EndToEnd {
    fedavg_user: Vec<f64>,
    kl_user: Vec<f64>,
    teacher_init_user: Vec<f64>,
    final_init_user: Vec<f64>,
    gd_user: Vec<f64>,
}

static FIXTURE: OnceLock<EndToEnd> = OnceLock::new();

/// Synthetic 10-class Gaussians, K = 10 clients, DS-1 with k = 4,
/// E_G = 20 rounds, default hyperparameters and grids, 3 repetitions.
fn end_to_end() -> &'static EndToEnd {
    FIXTURE.get_or_init(|| {
        const MASTER: u64 = 0xFED1;
        const CLIENTS: usize = 10;
        const REPS: u64 = 3;
        let mut fedavg_user = vec![0.0; CLIENTS];
        let mut kl_user = vec![0.0; CLIENTS];
        let mut teacher_init_user = vec![0.0; CLIENTS];
        let mut final_init_user = vec![0.0; CLIENTS];
        let mut gd_user = vec![0.0; CLIENTS];

        for rep in 0..REPS {
            let seed = derive_seed(MASTER, &[stream::REPETITION, rep]);
            let ds = synth_gaussian(10, 200, 2, 0.3, seed).unwrap();
            let mut spec = SplitSpec::new(Strategy::Ds1, CLIENTS, seed);
            spec.k_overlap = 4;
            let federated = split(&ds, &spec).unwrap();
            let fed_cfg = FedConfig {
                rounds: 20,
                hyper: Hyper::default(),
                clients: CLIENTS,
                seed,
                snapshot_policy: SnapshotPolicy::EveryRound,
                weight_by_samples: false,
            };
            let base = DistillConfig::default();

            for (cfg, sink) in [
                (base.clone(), &mut kl_user as &mut Vec<f64>),
                (
                    DistillConfig {
                        init_mode: InitMode::FedavgFinal,
                        ..base.clone()
                    },
                    &mut final_init_user,
                ),
                (
                    DistillConfig {
                        objective: Objective::Gd,
                        ..base.clone()
                    },
                    &mut gd_user,
                ),
            ] {
                let out =
                    fedistill_core::distill::run_pipeline(&ds, &federated, &fed_cfg, &cfg, &[32])
                        .unwrap();
                for (k, acc) in out.per_user_test_acc().iter().enumerate() {
                    sink[k] += acc / REPS as f64;
                }
                if cfg.init_mode == InitMode::OptimalTeacher && cfg.objective == Objective::Kl {
                    for (k, acc) in out.fedavg_test_acc.iter().enumerate() {
                        fedavg_user[k] += acc / REPS as f64;
                    }
                    for (k, acc) in out.per_user_test_acc().iter().enumerate() {
                        teacher_init_user[k] += acc / REPS as f64;
                    }
                }
            }
        }
        EndToEnd {
            fedavg_user,
            kl_user,
            teacher_init_user,
            final_init_user,
            gd_user,
        }
    })
}

#[test]
fn criterion_06_personalization_gain() {
    let fx = end_to_end();
    let (personal_mean, personal_std) = fairness_stats(&fx.kl_user).unwrap();
    let (fedavg_mean, fedavg_std) = fairness_stats(&fx.fedavg_user).unwrap();
    assert!(
        personal_mean >= fedavg_mean + 5.0,
        "personalized {personal_mean:.2} vs fedavg {fedavg_mean:.2}: gain below 5 points"
    );
    assert!(
        personal_std <= fedavg_std + 1.0,
        "personalized std {personal_std:.2} vs fedavg std {fedavg_std:.2}: fairness regressed"
    );
    pass(
        6,
        "personalized models beat the global model by >= 5 points without fairness regression",
    );
}

#[test]
fn criterion_07_initialization_ablation() {
    let fx = end_to_end();
    let teacher_mean = fx.teacher_init_user.iter().sum::<f64>() / fx.teacher_init_user.len() as f64;
    let final_mean = fx.final_init_user.iter().sum::<f64>() / fx.final_init_user.len() as f64;
    assert!(
        teacher_mean >= final_mean - 0.5,
        "optimal-teacher start {teacher_mean:.2} vs final-model start {final_mean:.2}"
    );
    pass(
        7,
        "optimal-teacher initialization is non-inferior to final-model initialization",
    );
}

#[test]
fn criterion_09_objective_variant_parity() {
    let fx = end_to_end();
    let kl_mean = fx.kl_user.iter().sum::<f64>() / fx.kl_user.len() as f64;
    let gd_mean = fx.gd_user.iter().sum::<f64>() / fx.gd_user.len() as f64;
    assert!(
        (kl_mean - gd_mean).abs() <= 3.0,
        "KL mean {kl_mean:.2} vs soft-CE mean {gd_mean:.2}: gap above 3 points"
    );
    pass(
        9,
        "soft-CE objective lands within 3 points of the KL objective",
    );
}

// ── Criterion 8: budget accounting ──────────────────────────────────────

#[test]
fn criterion_08_budget_accounting() {
    let ds = synth_gaussian(4, 60, 2, 0.3, 0xACC8).unwrap();
    let configs: [(u32, u32, usize, usize, u32); 3] = [
        // (E_G, E_L, |λ|, |T|, E)
        (5, 2, 3, 4, 2),
        (3, 1, 2, 2, 1),
        (2, 3, 2, 1, 4),
    ];
    for &(rounds, local_epochs, lambdas, ts, epochs) in &configs {
        let spec = SplitSpec::new(Strategy::Ds2, 3, 0xACC8);
        let federated = split(&ds, &spec).unwrap();
        let fed_cfg = FedConfig {
            rounds,
            hyper: Hyper {
                eta: 0.05,
                batch_size: 16,
                local_epochs,
            },
            clients: 3,
            seed: 0xACC8,
            snapshot_policy: SnapshotPolicy::EveryRound,
            weight_by_samples: false,
        };
        let distill_cfg = DistillConfig {
            lambda_grid: (0..lambdas).map(|i| i as f64 * 0.3).collect(),
            t_grid: (0..ts).map(|i| 1.0 + i as f64).collect(),
            epochs,
            hyper: fed_cfg.hyper,
            ..DistillConfig::default()
        };
        let out =
            fedistill_core::distill::run_pipeline(&ds, &federated, &fed_cfg, &distill_cfg, &[8])
                .unwrap();
        let expected = rounds as u64 * local_epochs as u64 + (lambdas * ts) as u64 * epochs as u64;
        for k in 0..3 {
            assert_eq!(
                out.ledger.total_epochs(k),
                expected,
                "config (E_G={rounds}, E_L={local_epochs}, grid={lambdas}x{ts}, E={epochs})"
            );
        }
        for record in out.records() {
            assert_eq!(record.budget, expected);
        }
    }
    pass(
        8,
        "ledger epochs equal E_G*E_L + |λ|*|T|*E for 3 configurations",
    );
}

// ── Criterion 10: determinism and persistence ───────────────────────────

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedistill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_cli_ok(args: &[&str]) {
    let out = run_cli(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_CONFIG: &str = r#"
seed = 11
repetitions = 2

[dataset]
source = "synthetic"
num_classes = 5
per_class = 60
dim = 2
spread = 0.3

[model]
hidden = [16]

[split]
strategy = "ds1"
clients = 4
k_overlap = 3

[fed]
rounds = 5

[hyper]
eta = 0.05
batch_size = 16
local_epochs = 1

[distill]
lambda_grid = [0.0, 0.5]
t_grid = [1.0, 4.0]
epochs = 2
"#;

fn strip_timestamp(results_json: &str) -> String {
    results_json
        .lines()
        .filter(|l| !l.contains("timestamp_unix_secs"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_10_determinism_and_persistence() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("run.toml");
    std::fs::write(&config_path, SMALL_CONFIG).unwrap();
    let config = config_path.to_str().unwrap();

    let mut results = Vec::new();
    for dir in ["a", "b"] {
        let out_dir = tmp.path().join(dir);
        let out = out_dir.to_str().unwrap();
        run_cli_ok(&["split", "--config", config, "--out", out]);
        run_cli_ok(&["train", "--config", config, "--out", out]);
        run_cli_ok(&["distill", "--config", config, "--out", out]);
        run_cli_ok(&["report", "--config", config, "--out", out]);
        results.push((
            std::fs::read_to_string(out_dir.join("split.json")).unwrap(),
            std::fs::read_to_string(out_dir.join("results.json")).unwrap(),
        ));
    }
    assert_eq!(
        results[0].0, results[1].0,
        "split.json differs between identical runs"
    );
    assert_eq!(
        strip_timestamp(&results[0].1),
        strip_timestamp(&results[1].1),
        "results.json differs beyond the timestamp"
    );

    // checkpoint round-trip is bit-exact: re-encoding the decoded model
    // reproduces the file
    let ckpt = tmp.path().join("a/checkpoints/round_0005.pflc");
    let bytes = std::fs::read(&ckpt).unwrap();
    let params = fedistill_cli::checkpoint::load(&ckpt).unwrap();
    assert_eq!(fedistill_cli::checkpoint::encode(&params), bytes);

    // evaluate works against the frozen artifacts
    let split_file = tmp.path().join("a/split.json");
    let out = run_cli(&[
        "evaluate",
        "--config",
        config,
        "--out",
        tmp.path().join("a").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        split_file.to_str().unwrap(),
        "--client",
        "0",
        "--subset",
        "test",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy:"));

    // corrupting one checkpoint byte is caught as an integrity error
    let mut corrupt = std::fs::read(&ckpt).unwrap();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x01;
    std::fs::write(&ckpt, &corrupt).unwrap();
    let out = run_cli(&[
        "distill",
        "--config",
        config,
        "--out",
        tmp.path().join("a").to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "corruption must exit with the integrity code"
    );
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("hash"),
        "stderr names the hash failure"
    );

    pass(
        10,
        "identical configs reproduce identical artifacts; corruption is detected",
    );
}
