//! Seeded random instances and a from-scratch greedy peeler that
//! recomputes every weight from the raw records at every step.

use std::collections::{BTreeMap, BTreeSet};

use coupledflow::detector::Node;
use coupledflow::tensor::{ModeSchema, RoleSets, TransferRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub records: Vec<TransferRecord>,
    pub roles: RoleSets,
    pub schema: ModeSchema,
}

pub fn ids(prefix: &str, n: usize) -> BTreeSet<String> {
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}

/// Random coupled instance with at most `max_nodes` candidate accounts,
/// integer amounts so every partial sum is exact.
pub fn random_instance(seed: u64, max_nodes: usize, n_attrs: usize, integer: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.random_range(1..=max_nodes / 4);
    let ny = rng.random_range(1..=max_nodes / 4);
    let nz = rng.random_range(1..=max_nodes / 4);
    let domain = rng.random_range(1..=3u32);
    let n_records = rng.random_range(1..=60);
    let mut records = Vec::new();
    let amount = |rng: &mut ChaCha8Rng| {
        if integer {
            rng.random_range(1..=20) as f64
        } else {
            rng.random_range(0.01..500.0)
        }
    };
    for _ in 0..n_records {
        let y = format!("y{:02}", rng.random_range(0..ny));
        let attrs: Vec<u32> = (0..n_attrs).map(|_| rng.random_range(0..domain)).collect();
        let a = amount(&mut rng);
        if rng.random_bool(0.5) {
            records.push(TransferRecord::new(
                format!("x{:02}", rng.random_range(0..nx)),
                y,
                attrs,
                a,
            ));
        } else {
            records.push(TransferRecord::new(
                y,
                format!("z{:02}", rng.random_range(0..nz)),
                attrs,
                a,
            ));
        }
    }
    // guarantee both tensors are nonempty
    records.push(TransferRecord::new("x00", "y00", vec![0; n_attrs], amount(&mut rng)));
    records.push(TransferRecord::new("y00", "z00", vec![0; n_attrs], amount(&mut rng)));
    let names: Vec<String> = std::iter::once("time_bin".to_string())
        .chain((1..n_attrs).map(|n| format!("a{n}")))
        .collect();
    Instance {
        records,
        roles: RoleSets {
            sources: ids("x", nx),
            middles: ids("y", ny),
            destinations: ids("z", nz),
        },
        schema: ModeSchema::new(names).unwrap(),
    }
}

pub type Key = (String, Vec<u32>);

pub struct NaiveResult {
    pub order: Vec<Node>,
    pub scores: Vec<f64>,
    pub best: f64,
    pub sources: BTreeSet<String>,
    pub fibers: BTreeSet<Key>,
    pub destinations: BTreeSet<String>,
}

/// O(n^2) greedy: node numbering is fibers in key order, then sources,
/// then destinations, each in id order; ties go to the smaller number.
pub fn naive_greedy(inst: &Instance, alpha: f64) -> NaiveResult {
    let roles = &inst.roles;
    let mut p: BTreeMap<(String, Key), f64> = BTreeMap::new();
    let mut q: BTreeMap<(String, Key), f64> = BTreeMap::new();
    for r in &inst.records {
        if roles.sources.contains(&r.src) && roles.middles.contains(&r.dst) {
            *p.entry((r.src.clone(), (r.dst.clone(), r.attrs.clone()))).or_default() += r.amount;
        }
        if roles.middles.contains(&r.src) && roles.destinations.contains(&r.dst) {
            *q.entry((r.dst.clone(), (r.src.clone(), r.attrs.clone()))).or_default() += r.amount;
        }
    }
    let all_fibers: Vec<Key> = p
        .keys()
        .chain(q.keys())
        .map(|(_, k)| k.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let all_x: Vec<String> = roles.sources.iter().cloned().collect();
    let all_z: Vec<String> = roles.destinations.iter().cloned().collect();

    let mut live_f: BTreeSet<usize> = (0..all_fibers.len()).collect();
    let mut live_x: BTreeSet<usize> = (0..all_x.len()).collect();
    let mut live_z: BTreeSet<usize> = (0..all_z.len()).collect();

    let masses = |i: usize, lx: &BTreeSet<usize>, lz: &BTreeSet<usize>| {
        let k = &all_fibers[i];
        let a: f64 = lx
            .iter()
            .map(|&x| p.get(&(all_x[x].clone(), k.clone())).copied().unwrap_or(0.0))
            .sum();
        let b: f64 = lz
            .iter()
            .map(|&z| q.get(&(all_z[z].clone(), k.clone())).copied().unwrap_or(0.0))
            .sum();
        (a, b)
    };

    let mut order = Vec::new();
    let mut scores = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_sets = (live_f.clone(), live_x.clone(), live_z.clone());
    while !live_f.is_empty() && !live_x.is_empty() && !live_z.is_empty() {
        let mut weights: Vec<(f64, usize, Node)> = Vec::new();
        let mut numerator = 0.0;
        for &i in &live_f {
            let (a, b) = masses(i, &live_x, &live_z);
            let w = a.min(b) - alpha * a.max(b);
            numerator += w;
            weights.push((w, i, Node::Fiber(i as u32)));
        }
        let nf = all_fibers.len();
        for &x in &live_x {
            let w: f64 = live_f
                .iter()
                .map(|&i| {
                    p.get(&(all_x[x].clone(), all_fibers[i].clone()))
                        .copied()
                        .unwrap_or(0.0)
                })
                .sum();
            weights.push((w, nf + x, Node::Source(x as u32)));
        }
        for &z in &live_z {
            let w: f64 = live_f
                .iter()
                .map(|&i| {
                    q.get(&(all_z[z].clone(), all_fibers[i].clone()))
                        .copied()
                        .unwrap_or(0.0)
                })
                .sum();
            weights.push((w, nf + all_x.len() + z, Node::Destination(z as u32)));
        }
        let score = numerator / (live_f.len() + live_x.len() + live_z.len()) as f64;
        if score > best {
            best = score;
            best_sets = (live_f.clone(), live_x.clone(), live_z.clone());
        }
        let (_, _, victim) = weights
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
            .unwrap();
        match victim {
            Node::Fiber(i) => live_f.remove(&(i as usize)),
            Node::Source(x) => live_x.remove(&(x as usize)),
            Node::Destination(z) => live_z.remove(&(z as usize)),
        };
        order.push(victim);
        scores.push(score);
    }
    NaiveResult {
        order,
        scores,
        best,
        sources: best_sets.1.iter().map(|&x| all_x[x].clone()).collect(),
        fibers: best_sets.0.iter().map(|&i| all_fibers[i].clone()).collect(),
        destinations: best_sets.2.iter().map(|&z| all_z[z].clone()).collect(),
    }
}
