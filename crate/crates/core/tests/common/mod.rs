#![allow(dead_code)]

use std::collections::BTreeSet;

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
