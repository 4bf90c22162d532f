//! Non-IID assignment of dataset samples to clients.
//!
//! Three strategies, selected by [`Strategy`]:
//!
//! - **DS-1**: every client gets the same number of samples drawn from
//!   exactly `k_overlap` classes; the per-class mix inside a client is a
//!   seeded random composition.
//! - **DS-2**: for each class, a `Dirichlet(α·p)` proportion vector over
//!   the clients (uniform prior `p = 1/K`) decides how that class's
//!   samples spread; every client is guaranteed at least one sample of
//!   every class.
//! - **DS-3**: every client gets exactly two classes; client sizes follow
//!   a log-normal(μ, σ²) draw normalized to the dataset size.
//!
//! Real-valued proportions are integerized everywhere with the same
//! deterministic [`largest_remainder`] rule, and all randomness flows
//! from the spec seed, so an identical [`SplitSpec`] reproduces an
//! identical [`FederatedSplit`] bit-for-bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{partition_client_covering, ClientData, Dataset};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, derive_seed, rng_from_seed};

const MAX_ATTEMPTS: usize = 100;

/// Minimum client size under DS-3; log-normal with σ = 2 otherwise
/// produces clients too small to carry a 60-20-20 sub-partition.
const DS3_MIN_CLIENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ds1,
    Ds2,
    Ds3,
}

/// Full description of a split; carrying the seed makes the spec a
/// complete recipe for reproducing the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: Strategy,
    /// Client count K.
    pub clients: usize,
    /// Classes per client (DS-1).
    pub k_overlap: usize,
    /// Dirichlet concentration (DS-2).
    pub alpha: f64,
    /// Log-normal location (DS-3).
    pub mu: f64,
    /// Log-normal scale (DS-3).
    pub sigma: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(strategy: Strategy, clients: usize, seed: u64) -> Self {
        Self {
            strategy,
            clients,
            k_overlap: 4,
            alpha: 0.9,
            mu: 0.0,
            sigma: 2.0,
            seed,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::parameter(format!(
                "split needs at least 2 clients, got {}",
                self.clients
            )));
        }
        match self.strategy {
            Strategy::Ds1 => {
                if self.k_overlap == 0 || self.k_overlap > num_classes {
                    return Err(Error::parameter(format!(
                        "k_overlap {} outside 1..={num_classes}",
                        self.k_overlap
                    )));
                }
            }
            Strategy::Ds2 => {
                if !(self.alpha > 0.0) {
                    return Err(Error::parameter(format!(
                        "dirichlet alpha must be positive, got {}",
                        self.alpha
                    )));
                }
            }
            Strategy::Ds3 => {
                if !(self.sigma > 0.0) {
                    return Err(Error::parameter(format!(
                        "log-normal sigma must be positive, got {}",
                        self.sigma
                    )));
                }
                if num_classes < 2 {
                    return Err(Error::parameter(
                        "ds3 needs at least 2 classes to give each client two labels",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-client train/val/test index sets plus the spec that produced them
/// and free-form provenance notes (repairs, down-scalings, coverage
/// shortfalls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedSplit {
    pub version: u32,
    pub spec: SplitSpec,
    pub clients: Vec<ClientData>,
    pub notes: Vec<String>,
}

pub const SPLIT_FORMAT_VERSION: u32 = 1;

impl FederatedSplit {
    pub fn client_count(&self) -> usize {
        self.clients.len()
    }
}

/// Dispatch on the spec's strategy.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<FederatedSplit> {
    spec.validate(dataset.num_classes())?;
    let assignments = match spec.strategy {
        Strategy::Ds1 => split_ds1_indices(dataset, spec)?,
        Strategy::Ds2 => split_ds2_indices(dataset, spec)?,
        Strategy::Ds3 => split_ds3_indices(dataset, spec)?,
    };
    let (raw, mut notes) = assignments;
    let mut clients = Vec::with_capacity(raw.len());
    for (k, indices) in raw.iter().enumerate() {
        let seed = derive_seed(spec.seed, &[rng::stream::PARTITION, k as u64]);
        let (client, achieved) = partition_client_covering(indices, dataset, seed)?;
        if !achieved {
            notes.push(format!(
                "client {k}: label coverage in train/val not achieved after 100 reshuffles"
            ));
        }
        clients.push(client);
    }
    Ok(FederatedSplit {
        version: SPLIT_FORMAT_VERSION,
        spec: spec.clone(),
        clients,
        notes,
    })
}

pub fn split_ds1(dataset: &Dataset, spec: &SplitSpec) -> Result<FederatedSplit> {
    split(
        dataset,
        &SplitSpec {
            strategy: Strategy::Ds1,
            ..spec.clone()
        },
    )
}

pub fn split_ds2(dataset: &Dataset, spec: &SplitSpec) -> Result<FederatedSplit> {
    split(
        dataset,
        &SplitSpec {
            strategy: Strategy::Ds2,
            ..spec.clone()
        },
    )
}

pub fn split_ds3(dataset: &Dataset, spec: &SplitSpec) -> Result<FederatedSplit> {
    split(
        dataset,
        &SplitSpec {
            strategy: Strategy::Ds3,
            ..spec.clone()
        },
    )
}

// ── DS-1: equal sizes, k classes per client ─────────────────────────────

fn split_ds1_indices(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    let k_overlap = spec.k_overlap;
    let clients = spec.clients;
    let per_client = dataset.len() / clients;
    if per_client < k_overlap.max(5) {
        return Err(Error::size(format!(
            "ds1: {} samples over {clients} clients leaves {per_client} per client, \
             need at least {}",
            dataset.len(),
            k_overlap.max(5)
        )));
    }

    for attempt in 0..MAX_ATTEMPTS as u64 {
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[rng::stream::SPLIT, attempt]));
        match try_ds1(dataset, clients, k_overlap, per_client, &mut rng) {
            Some(result) => return Ok(result),
            None => continue,
        }
    }
    Err(Error::feasibility(format!(
        "ds1: no feasible class assignment after {MAX_ATTEMPTS} attempts \
         (k_overlap {k_overlap}, {clients} clients)"
    )))
}

fn try_ds1(
    dataset: &Dataset,
    clients: usize,
    k_overlap: usize,
    per_client: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<Vec<usize>>, Vec<String>)> {
    let num_classes = dataset.num_classes();
    let mut remaining: Vec<usize> = (0..num_classes)
        .map(|c| dataset.indices_of_class(c).len())
        .collect();

    // Plan integer quotas per (client, chosen class) before touching any
    // sample index.
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(clients);
    let mut quotas: Vec<Vec<usize>> = Vec::with_capacity(clients);
    for client in 0..clients {
        // Too few live classes: reroute one unit of quota into an
        // exhausted class to resurrect it (sources need >= 2 so the
        // rerouting cannot exhaust another class in exchange).
        let mut avail: Vec<usize> = (0..num_classes).filter(|&c| remaining[c] > 0).collect();
        while avail.len() < k_overlap {
            let empties: Vec<usize> = (0..num_classes).filter(|&c| remaining[c] == 0).collect();
            let revived = empties
                .iter()
                .any(|&e| repair_capacity(&[e], 1, 2, &sets, &mut quotas, &mut remaining));
            if !revived {
                return None;
            }
            avail = (0..num_classes).filter(|&c| remaining[c] > 0).collect();
        }
        let chosen = weighted_choose(&avail, |c| remaining[c] as f64, k_overlap, rng);
        // Full overlap means every later client will also need one
        // sample of every class, so reserve exactly that much; with
        // partial overlap, later clients route around thin classes.
        let reserve = if k_overlap == num_classes {
            clients - client - 1
        } else {
            0
        };
        let capacity: usize = chosen
            .iter()
            .map(|&c| remaining[c].saturating_sub(reserve))
            .sum();
        if capacity < per_client
            && !repair_capacity(
                &chosen,
                per_client - capacity,
                1,
                &sets,
                &mut quotas,
                &mut remaining,
            )
        {
            return None;
        }
        let caps: Vec<usize> = chosen
            .iter()
            .map(|&c| remaining[c].saturating_sub(reserve))
            .collect();
        let counts = random_composition(per_client, &caps, rng)?;
        for (&c, &q) in chosen.iter().zip(&counts) {
            remaining[c] -= q;
        }
        sets.push(chosen);
        quotas.push(counts);
    }

    // Materialize the plan from seeded-shuffled per-class pools.
    let mut pools: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| {
            let mut p = dataset.indices_of_class(c);
            p.shuffle(rng);
            p
        })
        .collect();
    let mut out = Vec::with_capacity(clients);
    let mut notes = Vec::new();
    for client in 0..clients {
        let mut assigned = Vec::with_capacity(per_client);
        for (&class, &count) in sets[client].iter().zip(&quotas[client]) {
            let pool = &mut pools[class];
            assigned.extend(pool.drain(pool.len() - count..));
        }
        notes.push(format!(
            "ds1 client {client}: classes {:?}, counts {:?}",
            sets[client], quotas[client]
        ));
        out.push(assigned);
    }
    Some((out, notes))
}

/// Frees `needed` units of capacity inside `chosen` by rerouting earlier
/// clients' planned quotas: spare supply in a class outside `chosen`
/// flows along a chain of clients (each absorbing the spare of one of
/// its classes and releasing quota in another) until it surfaces in a
/// chosen class. This is incremental augmenting-path flow with the
/// clients acting as edges; without the chaining, tight instances —
/// two-class clients at near-exact capacity, or a last client skipping
/// one nearly-full class — dead-end even though an allocation exists.
///
/// Deterministic, and keeps every planned quota at >= 1 so label
/// cardinalities stay exact.
fn repair_capacity(
    chosen: &[usize],
    mut needed: usize,
    min_source: usize,
    sets: &[Vec<usize>],
    quotas: &mut [Vec<usize>],
    remaining: &mut [usize],
) -> bool {
    let num_classes = remaining.len();
    while needed > 0 {
        // BFS from spare-holding classes outside `chosen` to any chosen
        // class. An edge c -> c2 exists through client j when j can take
        // more of c and give back quota it planned for c2.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; num_classes]; // (class, client)
        let mut visited = vec![false; num_classes];
        let mut queue = alloc::collections::VecDeque::new();
        for c in 0..num_classes {
            if remaining[c] >= min_source && !chosen.contains(&c) {
                visited[c] = true;
                queue.push_back(c);
            }
        }
        let mut target = None;
        'search: while let Some(c) = queue.pop_front() {
            for (j, set) in sets.iter().enumerate() {
                if !set.contains(&c) {
                    continue;
                }
                for (pos, &c2) in set.iter().enumerate() {
                    if visited[c2] || quotas[j][pos] <= 1 {
                        continue;
                    }
                    visited[c2] = true;
                    parent[c2] = Some((c, j));
                    if chosen.contains(&c2) {
                        target = Some(c2);
                        break 'search;
                    }
                    queue.push_back(c2);
                }
            }
        }
        let Some(end) = target else { return false };

        // walk back to the source, collecting the path and bottleneck
        let mut path = Vec::new(); // (from_class, client, to_class)
        let mut cur = end;
        while let Some((prev, client)) = parent[cur] {
            path.push((prev, client, cur));
            cur = prev;
        }
        let source = cur;
        let mut delta = (remaining[source] - (min_source - 1)).min(needed);
        for &(_, j, to) in &path {
            let pos = sets[j].iter().position(|&c| c == to).expect("class in set");
            delta = delta.min(quotas[j][pos] - 1);
        }
        if delta == 0 {
            return false;
        }
        // apply source-first so intermediates receive before they give
        path.reverse();
        for &(from, j, to) in &path {
            let from_pos = sets[j]
                .iter()
                .position(|&c| c == from)
                .expect("class in set");
            let to_pos = sets[j].iter().position(|&c| c == to).expect("class in set");
            quotas[j][from_pos] += delta;
            quotas[j][to_pos] -= delta;
            remaining[from] -= delta;
            remaining[to] += delta;
        }
        needed -= delta;
    }
    true
}

/// Draws `k` distinct items from `items`, each draw weighted by `weight`.
fn weighted_choose<F: Fn(usize) -> f64>(
    items: &[usize],
    weight: F,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = items.to_vec();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&i| weight(i)).sum();
        let mut target = rng.random_range(0.0..total);
        let mut pick = remaining.len() - 1;
        for (pos, &item) in remaining.iter().enumerate() {
            target -= weight(item);
            if target <= 0.0 {
                pick = pos;
                break;
            }
        }
        chosen.push(remaining.swap_remove(pick));
    }
    chosen
}

/// Seeded random composition of `total` into `caps.len()` parts, each at
/// least 1 and at most its cap. Returns `None` if the caps cannot carry
/// `total`.
fn random_composition(total: usize, caps: &[usize], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let parts = caps.len();
    if total < parts || caps.iter().sum::<usize>() < total {
        return None;
    }
    let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
    let weights: Vec<f64> = (0..parts).map(|_| gamma.sample(rng) + 1e-9).collect();
    let mut counts = largest_remainder(total - parts, &weights);
    for c in counts.iter_mut() {
        *c += 1;
    }
    // Push any excess above a cap onto parts with spare capacity,
    // largest spare first.
    loop {
        let mut excess = 0usize;
        for (c, &cap) in counts.iter_mut().zip(caps) {
            if *c > cap {
                excess += *c - cap;
                *c = cap;
            }
        }
        if excess == 0 {
            return Some(counts);
        }
        let mut spare: Vec<usize> = (0..parts).filter(|&i| counts[i] < caps[i]).collect();
        spare.sort_by_key(|&i| core::cmp::Reverse(caps[i] - counts[i]));
        if spare.is_empty() {
            return None;
        }
        for &i in &spare {
            let room = caps[i] - counts[i];
            let add = room.min(excess);
            counts[i] += add;
            excess -= add;
            if excess == 0 {
                break;
            }
        }
        if excess > 0 {
            return None;
        }
    }
}

// ── DS-2: per-class Dirichlet allocation ────────────────────────────────

fn split_ds2_indices(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    let clients = spec.clients;
    let num_classes = dataset.num_classes();
    let conc = vec![spec.alpha / clients as f64; clients];

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); clients];
    let mut notes = Vec::new();
    for class in 0..num_classes {
        let mut pool = dataset.indices_of_class(class);
        if pool.len() < clients {
            return Err(Error::feasibility(format!(
                "ds2: class {class} has {} samples for {clients} clients; \
                 use a larger dataset or a larger alpha",
                pool.len()
            )));
        }
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[rng::stream::SPLIT, class as u64]));
        pool.shuffle(&mut rng);

        // Re-sample the proportion vector until every client receives at
        // least one sample; keep the draw with the fewest empty cells as
        // a repair base.
        let mut best: Option<(usize, Vec<usize>)> = None;
        for _ in 0..MAX_ATTEMPTS {
            let q = sample_dirichlet_with(&conc, &mut rng)?;
            let counts = largest_remainder(pool.len(), &q);
            let zeros = counts.iter().filter(|&&c| c == 0).count();
            if zeros == 0 {
                best = Some((0, counts));
                break;
            }
            if best.as_ref().is_none_or(|(z, _)| zeros < *z) {
                best = Some((zeros, counts));
            }
        }
        let (zeros, mut counts) = best.expect("at least one draw");
        if zeros > 0 {
            // Transfer one sample per empty cell from the fullest cells.
            for i in 0..clients {
                while counts[i] == 0 {
                    let donor = (0..clients)
                        .max_by_key(|&j| counts[j])
                        .expect("non-empty counts");
                    if counts[donor] <= 1 {
                        return Err(Error::feasibility(format!(
                            "ds2: cannot cover all clients with class {class}; \
                             use a larger dataset or a larger alpha"
                        )));
                    }
                    counts[donor] -= 1;
                    counts[i] += 1;
                }
            }
            notes.push(format!(
                "ds2 class {class}: coverage repaired for {zeros} clients after \
                 {MAX_ATTEMPTS} dirichlet draws"
            ));
        }

        let mut offset = 0;
        for (client, &count) in counts.iter().enumerate() {
            out[client].extend_from_slice(&pool[offset..offset + count]);
            offset += count;
        }
        debug_assert_eq!(offset, pool.len());
    }
    Ok((out, notes))
}

// ── DS-3: two classes per client, log-normal sizes ──────────────────────

fn split_ds3_indices(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    let clients = spec.clients;
    let num_classes = dataset.num_classes();
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[rng::stream::SPLIT]));

    let mut pools: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| {
            let mut p = dataset.indices_of_class(c);
            p.shuffle(&mut rng);
            p
        })
        .collect();

    // Round-robin over a seeded class permutation: coverage + determinism.
    let mut perm: Vec<usize> = (0..num_classes).collect();
    perm.shuffle(&mut rng);
    let class_pairs: Vec<(usize, usize)> = (0..clients)
        .map(|i| (perm[(2 * i) % num_classes], perm[(2 * i + 1) % num_classes]))
        .collect();

    // Each client must end with at least DS3_MIN_CLIENT samples, half per
    // class; classes shared by several clients reserve that much for the
    // clients still waiting.
    let reserve = DS3_MIN_CLIENT / 2;
    let mut users_left = vec![0usize; num_classes];
    for &(a, b) in &class_pairs {
        users_left[a] += 1;
        users_left[b] += 1;
    }
    for (class, &users) in users_left.iter().enumerate() {
        if pools[class].len() < reserve * users {
            return Err(Error::size(format!(
                "ds3: class {class} has {} samples but {users} clients need at least \
                 {reserve} each",
                pools[class].len()
            )));
        }
    }

    let normal = Normal::new(spec.mu, spec.sigma).map_err(|_| {
        Error::parameter(format!(
            "invalid log-normal parameters mu={} sigma={}",
            spec.mu, spec.sigma
        ))
    })?;
    // clamp the exponent so a pathological draw cannot overflow to inf
    // and poison the largest-remainder quotas
    let raw: Vec<f64> = (0..clients)
        .map(|_| math::exp(normal.sample(&mut rng).clamp(-700.0, 700.0)))
        .collect();
    let mut sizes = largest_remainder(dataset.len(), &raw);

    let mut notes = Vec::new();

    // Clamp to the minimum viable client, stealing back from the largest.
    if dataset.len() < DS3_MIN_CLIENT * clients {
        return Err(Error::size(format!(
            "ds3: {} samples cannot give {clients} clients at least {DS3_MIN_CLIENT} each",
            dataset.len()
        )));
    }
    let mut deficit = 0usize;
    for s in sizes.iter_mut() {
        if *s < DS3_MIN_CLIENT {
            deficit += DS3_MIN_CLIENT - *s;
            *s = DS3_MIN_CLIENT;
        }
    }
    while deficit > 0 {
        let donor = (0..clients)
            .max_by_key(|&i| sizes[i])
            .expect("non-empty sizes");
        let take = (sizes[donor] - DS3_MIN_CLIENT).min(deficit);
        if take == 0 {
            break;
        }
        sizes[donor] -= take;
        deficit -= take;
    }

    let mut out = Vec::with_capacity(clients);
    for client in 0..clients {
        let (a, b) = class_pairs[client];
        users_left[a] -= 1;
        users_left[b] -= 1;
        let caps = [
            pools[a].len() - reserve * users_left[a],
            pools[b].len() - reserve * users_left[b],
        ];
        let capacity = caps[0] + caps[1];
        let mut want = sizes[client];
        if capacity < want {
            notes.push(format!(
                "ds3 client {client}: size {want} down-scaled to class capacity {capacity}"
            ));
            want = capacity;
        }
        let counts = random_composition(want, &caps, &mut rng).ok_or_else(|| {
            Error::feasibility(format!(
                "ds3 client {client}: classes {a} and {b} exhausted (capacity {capacity})"
            ))
        })?;
        let mut assigned = Vec::with_capacity(want);
        for (&class, &count) in [a, b].iter().zip(&counts) {
            let pool = &mut pools[class];
            assigned.extend(pool.drain(pool.len() - count..));
        }
        out.push(assigned);
    }
    Ok((out, notes))
}

// ── Shared primitives ───────────────────────────────────────────────────

/// Splits `total` into integer parts proportional to `weights` using
/// largest-remainder rounding; remainder ties are broken by index order.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        let mut out = vec![0; weights.len().max(1)];
        out[0] = total;
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|&q| q as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// One draw from `Dirichlet(alpha)` via normalized Gamma samples.
pub fn sample_dirichlet(alpha: &[f64], seed: u64) -> Result<Vec<f64>> {
    sample_dirichlet_with(alpha, &mut rng_from_seed(seed))
}

/// [`sample_dirichlet`] drawing from a caller-provided generator.
pub fn sample_dirichlet_with(alpha: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::parameter("dirichlet needs at least one parameter"));
    }
    for &a in alpha {
        if !(a > 0.0) {
            return Err(Error::parameter(format!(
                "dirichlet parameters must be positive, got {a}"
            )));
        }
    }
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|_| Error::parameter("invalid gamma shape")))
        .collect::<Result<_>>()?;
    // With very small shapes a whole draw can underflow to zero; redraw.
    for _ in 0..MAX_ATTEMPTS {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|d| d / sum).collect());
        }
    }
    Err(Error::parameter(
        "dirichlet sampling degenerated to zero mass; alpha too small",
    ))
}

/// Log-normal probability density.
pub fn log_normal_pdf(u: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::parameter(format!(
            "log-normal sigma must be positive, got {sigma}"
        )));
    }
    if !(u > 0.0) {
        return Err(Error::parameter(format!(
            "log-normal density is defined for positive values, got {u}"
        )));
    }
    let two_pi = 2.0 * core::f64::consts::PI;
    let z = math::ln(u) - mu;
    Ok(math::exp(-(z * z) / (2.0 * sigma * sigma)) / (sigma * u * math::sqrt(two_pi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    // aliased: proptest's prelude has its own `Strategy` trait
    use super::Strategy as Ds;
    use crate::data::synth_gaussian;
    use alloc::collections::BTreeSet;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn label_set(ds: &Dataset, client: &ClientData) -> BTreeSet<usize> {
        client.all_indices().map(|i| ds.label_of(i)).collect()
    }

    fn assert_disjoint(split: &FederatedSplit) {
        let mut seen = BTreeSet::new();
        for client in &split.clients {
            for i in client.all_indices() {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn largest_remainder_matches_hand_cases() {
        assert_eq!(largest_remainder(10, &[0.6, 0.2, 0.2]), vec![6, 2, 2]);
        assert_eq!(largest_remainder(7, &[0.6, 0.2, 0.2]), vec![4, 2, 1]);
        assert_eq!(largest_remainder(5, &[0.6, 0.2, 0.2]), vec![3, 1, 1]);
        assert_eq!(largest_remainder(100, &[1.0]), vec![100]);
    }

    #[test]
    fn dirichlet_sums_to_one_and_matches_mean() {
        let mut sum0 = 0.0;
        let mut sum1 = 0.0;
        let n = 10_000;
        let mut rng = rng_from_seed(17);
        for _ in 0..n {
            let q = sample_dirichlet_with(&[2.0, 1.0], &mut rng).unwrap();
            let total: f64 = q.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            sum0 += q[0];
            sum1 += q[1];
        }
        assert_abs_diff_eq!(sum0 / n as f64, 2.0 / 3.0, epsilon = 0.02);
        assert_abs_diff_eq!(sum1 / n as f64, 1.0 / 3.0, epsilon = 0.02);

        let mut sym = 0.0;
        for _ in 0..n {
            sym += sample_dirichlet_with(&[1.0, 1.0], &mut rng).unwrap()[0];
        }
        assert_abs_diff_eq!(sym / n as f64, 0.5, epsilon = 0.02);
    }

    #[test]
    fn log_normal_pdf_at_one() {
        let expect = 1.0 / (2.0 * math::sqrt(2.0 * core::f64::consts::PI));
        assert_abs_diff_eq!(
            log_normal_pdf(1.0, 0.0, 2.0).unwrap(),
            expect,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expect, 0.199471, epsilon = 1e-6);
    }

    #[test]
    fn ds1_full_overlap_degenerate() {
        let ds = synth_gaussian(4, 50, 2, 0.2, 1).unwrap();
        let mut spec = SplitSpec::new(Ds::Ds1, 2, 5);
        spec.k_overlap = 4;
        let split = split_ds1(&ds, &spec).unwrap();
        assert_disjoint(&split);
        let sizes: Vec<usize> = split.clients.iter().map(|c| c.total()).collect();
        assert_eq!(sizes[0], sizes[1]);
        for client in &split.clients {
            assert_eq!(label_set(&ds, client).len(), 4);
        }
    }

    #[test]
    fn ds1_k4_ten_clients() {
        let ds = synth_gaussian(10, 100, 2, 0.2, 2).unwrap();
        let spec = SplitSpec::new(Ds::Ds1, 10, 77);
        let split = split_ds1(&ds, &spec).unwrap();
        assert_disjoint(&split);
        let sizes: Vec<usize> = split.clients.iter().map(|c| c.total()).collect();
        assert!(sizes.iter().all(|&s| s == sizes[0]), "sizes {sizes:?}");
        for client in &split.clients {
            assert_eq!(label_set(&ds, client).len(), 4);
        }
    }

    #[test]
    fn ds2_partitions_every_class_and_covers() {
        let ds = synth_gaussian(10, 100, 2, 0.2, 3).unwrap();
        let spec = SplitSpec::new(Ds::Ds2, 10, 13);
        let split = split_ds2(&ds, &spec).unwrap();
        assert_disjoint(&split);
        // per-class counts over clients sum to the class total
        for class in 0..10 {
            let assigned: usize = split
                .clients
                .iter()
                .map(|c| c.all_indices().filter(|&i| ds.label_of(i) == class).count())
                .sum();
            assert_eq!(assigned, 100);
        }
        // full class coverage per client
        for client in &split.clients {
            assert_eq!(label_set(&ds, client).len(), 10);
        }
    }

    #[test]
    fn ds2_huge_alpha_is_nearly_uniform() {
        let ds = synth_gaussian(5, 200, 2, 0.2, 4).unwrap();
        let mut spec = SplitSpec::new(Ds::Ds2, 10, 21);
        spec.alpha = 1e6;
        let split = split_ds2(&ds, &spec).unwrap();
        for class in 0..5 {
            for client in &split.clients {
                let count = client
                    .all_indices()
                    .filter(|&i| ds.label_of(i) == class)
                    .count();
                let share = count as f64 / 200.0;
                assert_abs_diff_eq!(share, 0.1, epsilon = 0.02);
            }
        }
    }

    #[test]
    fn ds3_two_labels_per_client() {
        let ds = synth_gaussian(10, 200, 2, 0.2, 5).unwrap();
        let spec = SplitSpec::new(Ds::Ds3, 10, 31);
        let split = split_ds3(&ds, &spec).unwrap();
        assert_disjoint(&split);
        for client in &split.clients {
            assert_eq!(label_set(&ds, client).len(), 2);
        }
    }

    #[test]
    fn ds3_sigma_zero_limit_equalizes_sizes() {
        let ds = synth_gaussian(10, 100, 2, 0.2, 6).unwrap();
        let mut spec = SplitSpec::new(Ds::Ds3, 5, 8);
        spec.sigma = 1e-6;
        let split = split_ds3(&ds, &spec).unwrap();
        let sizes: Vec<usize> = split.clients.iter().map(|c| c.total()).collect();
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        assert!(max - min <= 1, "sizes {sizes:?}");
    }

    #[test]
    fn identical_specs_reproduce_identical_splits() {
        let ds = synth_gaussian(10, 60, 2, 0.2, 9).unwrap();
        for strategy in [Ds::Ds1, Ds::Ds2, Ds::Ds3] {
            let spec = SplitSpec::new(strategy, 4, 1234);
            let a = split(&ds, &spec).unwrap();
            let b = split(&ds, &spec).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn splits_never_share_indices(
            seed in any::<u64>(),
            strategy_pick in 0usize..3,
            clients in 2usize..6,
        ) {
            let strategy = [Ds::Ds1, Ds::Ds2, Ds::Ds3][strategy_pick];
            let ds = synth_gaussian(6, 80, 2, 0.2, 1000 + seed % 17).unwrap();
            let mut spec = SplitSpec::new(strategy, clients, seed);
            spec.k_overlap = 3;
            let result = split(&ds, &spec).unwrap();
            let mut seen = BTreeSet::new();
            for client in &result.clients {
                for i in client.all_indices() {
                    prop_assert!(seen.insert(i), "index {} assigned twice", i);
                }
            }
        }
    }
}
