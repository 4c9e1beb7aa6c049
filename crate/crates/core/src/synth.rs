//! Synthetic laundering injections with ground truth.
//!
//! Fraud groups are drawn from the role candidates. Edges between the
//! groups exist independently with probability `edge_prob`. Money is split
//! by symmetric Dirichlet draws in two levels: the total over middle
//! accounts, then each middle account's in-amount over its incoming edges
//! and its out-amount over its outgoing edges. The out-amount is the
//! in-amount minus a uniform camouflage residue, and every edge touching
//! one middle account shares a single time bin (and a single value of
//! every other attribute).

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AttrValue, CoupledTensors, IndexedEntries, ModeSchema, Money, Role, RoleSets, TransferRecord};

/// Resampling budget when a middle account draws no edges on one side.
const MAX_EDGE_RESAMPLES: usize = 10_000;

/// Derives an independent stream seed: SplitMix64 of
/// `seed + stream * 0x9E3779B97F4A7C15`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub n_sources: usize,
    pub n_middles: usize,
    pub n_destinations: usize,
    pub edge_prob: f64,
    pub total_dirty_money: Money,
    /// Symmetric Dirichlet concentration per component.
    pub dirichlet_scale: f64,
    pub camouflage_max: Money,
    /// Residue cap as a fraction of a middle account's in-amount.
    pub camouflage_cap_frac: f64,
    pub rng_seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            n_sources: 5,
            n_middles: 10,
            n_destinations: 5,
            edge_prob: 1.0,
            total_dirty_money: 1e7,
            dirichlet_scale: 100.0,
            camouflage_max: 100_000.0,
            camouflage_cap_frac: 0.01,
            rng_seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_sources == 0 || self.n_middles == 0 || self.n_destinations == 0 {
            return bad("every fraud group needs at least one account".into());
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return bad(format!("edge probability must lie in (0, 1], got {}", self.edge_prob));
        }
        if !(self.total_dirty_money > 0.0 && self.total_dirty_money.is_finite()) {
            return bad(format!(
                "injected money must be positive, got {}",
                self.total_dirty_money
            ));
        }
        if self.dirichlet_scale.is_nan() || self.dirichlet_scale <= 0.0 {
            return bad(format!(
                "Dirichlet scale must be positive, got {}",
                self.dirichlet_scale
            ));
        }
        if self.camouflage_max.is_nan() || self.camouflage_max < 0.0 || !(0.0..1.0).contains(&self.camouflage_cap_frac)
        {
            return bad("camouflage bounds must be nonnegative and the cap fraction below 1".into());
        }
        Ok(())
    }

    /// Injected money per fraudulent account.
    pub fn density(&self) -> f64 {
        self.total_dirty_money / (self.n_sources + self.n_middles + self.n_destinations) as f64
    }
}

/// Base records followed by injected ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub records: Vec<TransferRecord>,
    pub n_base: usize,
    pub truth: RoleSets,
    pub config: InjectionConfig,
}

impl Injection {
    pub fn injected(&self) -> &[TransferRecord] {
        &self.records[self.n_base..]
    }
}

/// Symmetric Dirichlet draw of dimension `n` via normalized Gamma variates.
fn dirichlet(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / sum).collect()
}

/// Splits `amount` by `shares`; the last part takes the remainder so the
/// parts sum back to `amount` up to one rounding.
fn split(amount: Money, shares: &[f64]) -> Vec<Money> {
    let mut parts: Vec<Money> = shares.iter().map(|s| s * amount).collect();
    let head: Money = parts[..parts.len() - 1].iter().sum();
    *parts.last_mut().expect("nonempty") = (amount - head).max(0.0);
    parts
}

fn sample_group(
    rng: &mut ChaCha8Rng,
    candidates: &BTreeSet<String>,
    taken: &BTreeSet<String>,
    n: usize,
    role: Role,
) -> Result<Vec<String>> {
    let pool: Vec<&String> = candidates.iter().filter(|c| !taken.contains(*c)).collect();
    if pool.len() < n {
        return Err(Error::Infeasible(format!(
            "need {n} {role:?} accounts, only {} candidates available",
            pool.len()
        )));
    }
    let mut picked: Vec<String> = index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    picked.sort();
    Ok(picked)
}

fn sample_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Result<Vec<usize>> {
    for _ in 0..MAX_EDGE_RESAMPLES {
        let edges: Vec<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
        if !edges.is_empty() {
            return Ok(edges);
        }
    }
    Err(Error::Infeasible(format!(
        "edge probability {p} produced no edges in {MAX_EDGE_RESAMPLES} attempts"
    )))
}

/// Appends one laundering flow to `base`.
///
/// `domains[n]` is the number of values attribute `n` can take; the first
/// attribute is the time bin.
pub fn inject(
    base: &[TransferRecord],
    roles: &RoleSets,
    domains: &[AttrValue],
    config: &InjectionConfig,
) -> Result<Injection> {
    config.validate()?;
    if domains.is_empty() || domains.contains(&0) {
        return Err(Error::InvalidParameter(
            "every attribute domain must be nonempty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut taken = BTreeSet::new();
    let xs = sample_group(&mut rng, &roles.sources, &taken, config.n_sources, Role::Source)?;
    taken.extend(xs.iter().cloned());
    let ys = sample_group(&mut rng, &roles.middles, &taken, config.n_middles, Role::Middle)?;
    taken.extend(ys.iter().cloned());
    let zs = sample_group(
        &mut rng,
        &roles.destinations,
        &taken,
        config.n_destinations,
        Role::Destination,
    )?;

    let shares = dirichlet(&mut rng, ys.len(), config.dirichlet_scale);
    let per_middle = split(config.total_dirty_money, &shares);

    let mut records = base.to_vec();
    let n_base = records.len();
    for (y, &in_amount) in ys.iter().zip(&per_middle) {
        let in_edges = sample_edges(&mut rng, xs.len(), config.edge_prob)?;
        let out_edges = sample_edges(&mut rng, zs.len(), config.edge_prob)?;
        let cap = config.camouflage_max.min(config.camouflage_cap_frac * in_amount);
        let residue = if cap > 0.0 { rng.random_range(0.0..=cap) } else { 0.0 };
        let out_amount = in_amount - residue;
        let attrs: Vec<AttrValue> = domains.iter().map(|&d| rng.random_range(0..d)).collect();

        let in_parts = split(in_amount, &dirichlet(&mut rng, in_edges.len(), config.dirichlet_scale));
        let out_parts = split(
            out_amount,
            &dirichlet(&mut rng, out_edges.len(), config.dirichlet_scale),
        );
        for (&x, amount) in in_edges.iter().zip(in_parts) {
            records.push(TransferRecord::new(xs[x].clone(), y.clone(), attrs.clone(), amount));
        }
        for (&z, amount) in out_edges.iter().zip(out_parts) {
            records.push(TransferRecord::new(y.clone(), zs[z].clone(), attrs.clone(), amount));
        }
    }

    Ok(Injection {
        records,
        n_base,
        truth: RoleSets {
            sources: xs.into_iter().collect(),
            middles: ys.into_iter().collect(),
            destinations: zs.into_iter().collect(),
        },
        config: config.clone(),
    })
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Total injected money per point; group sizes stay fixed.
    Money(Vec<Money>),
    /// Multipliers on the configured group sizes; money stays fixed.
    AccountScale(Vec<usize>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::Money(v) => v.len(),
            Sweep::AccountScale(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Injection settings of sweep point `i`, seeded from `(rng_seed, i)`.
    pub fn point_config(&self, base: &InjectionConfig, i: usize) -> InjectionConfig {
        let mut cfg = base.clone();
        cfg.rng_seed = derive_seed(base.rng_seed, i as u64);
        match self {
            Sweep::Money(v) => cfg.total_dirty_money = v[i],
            Sweep::AccountScale(v) => {
                cfg.n_sources *= v[i];
                cfg.n_middles *= v[i];
                cfg.n_destinations *= v[i];
            }
        }
        cfg
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Sweep::Money(v) => v[i],
            Sweep::AccountScale(v) => v[i] as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Sweep::Money(v) => !v.is_empty() && v.iter().all(|m| *m > 0.0 && m.is_finite()),
            Sweep::AccountScale(v) => !v.is_empty() && v.iter().all(|&k| k >= 1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "sweep values must be nonempty and positive".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    /// The swept value (money or account multiplier).
    pub value: f64,
    /// Injected money per fraudulent account.
    pub density: f64,
    pub injection: Injection,
}

/// One labeled dataset per sweep point.
pub fn density_sweep(
    base: &[TransferRecord],
    roles: &RoleSets,
    domains: &[AttrValue],
    config: &InjectionConfig,
    sweep: &Sweep,
) -> Result<Vec<SweepPoint>> {
    sweep.validate()?;
    (0..sweep.len())
        .map(|i| {
            let cfg = sweep.point_config(config, i);
            let density = cfg.density();
            Ok(SweepPoint {
                index: i,
                value: sweep.value(i),
                density,
                injection: inject(base, roles, domains, &cfg)?,
            })
        })
        .collect()
}

/// Uniformly random background traffic between role candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub n_records: usize,
    pub n_sources: usize,
    pub n_middles: usize,
    pub n_destinations: usize,
    /// Fraction of records that are source -> middle; the rest are middle -> destination.
    pub p_fraction: f64,
    pub schema: ModeSchema,
    /// Number of values per attribute; the first is the number of time bins.
    pub attr_domains: Vec<AttrValue>,
    /// Amounts are log-normal with these parameters of the underlying normal.
    pub amount_log_mean: f64,
    pub amount_log_sd: f64,
    pub seed: u64,
}

impl Default for BackgroundConfig {
    /// Role and record counts on the scale of a public bank transfer log:
    /// about two years of 3-day bins.
    fn default() -> Self {
        BackgroundConfig {
            n_records: 100_000,
            n_sources: 2_000,
            n_middles: 2_300,
            n_destinations: 7_000,
            p_fraction: 0.12 / 0.39,
            schema: ModeSchema::time_only(),
            attr_domains: vec![730],
            amount_log_mean: 8.0,
            amount_log_sd: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub records: Vec<TransferRecord>,
    pub roles: RoleSets,
    pub schema: ModeSchema,
    pub attr_domains: Vec<AttrValue>,
}

pub fn account_id(role: Role, i: usize) -> String {
    let prefix = match role {
        Role::Source => 'S',
        Role::Middle => 'M',
        Role::Destination => 'D',
    };
    format!("{prefix}{i:07}")
}

pub fn random_background(config: &BackgroundConfig) -> Result<Background> {
    if config.n_sources == 0 || config.n_middles == 0 || config.n_destinations == 0 {
        return Err(Error::InvalidParameter("every role needs candidates".into()));
    }
    if config.attr_domains.len() != config.schema.n_attrs() || config.attr_domains.contains(&0) {
        return Err(Error::InvalidParameter(
            "one nonempty domain per schema attribute is required".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.p_fraction) {
        return Err(Error::InvalidParameter("p_fraction must lie in [0, 1]".into()));
    }
    let amounts = LogNormal::new(config.amount_log_mean, config.amount_log_sd)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n_records);
    for _ in 0..config.n_records {
        let y = account_id(Role::Middle, rng.random_range(0..config.n_middles));
        let attrs: Vec<AttrValue> = config.attr_domains.iter().map(|&d| rng.random_range(0..d)).collect();
        let amount = (amounts.sample(&mut rng) * 100.0).round() / 100.0;
        let rec = if rng.random_bool(config.p_fraction) {
            let x = account_id(Role::Source, rng.random_range(0..config.n_sources));
            TransferRecord::new(x, y, attrs, amount)
        } else {
            let z = account_id(Role::Destination, rng.random_range(0..config.n_destinations));
            TransferRecord::new(y, z, attrs, amount)
        };
        records.push(rec);
    }
    let ids = |role, n| (0..n).map(|i| account_id(role, i)).collect();
    Ok(Background {
        records,
        roles: RoleSets {
            sources: ids(Role::Source, config.n_sources),
            middles: ids(Role::Middle, config.n_middles),
            destinations: ids(Role::Destination, config.n_destinations),
        },
        schema: config.schema.clone(),
        attr_domains: config.attr_domains.clone(),
    })
}

/// Random coupled tensors with about `n_entries` entries split evenly
/// between `P` and `Q`, built without string records. Account counts grow
/// linearly with the entry count over 100 time bins, so the average degree
/// stays fixed. Duplicate coordinates coalesce, so `p_nnz + q_nnz` can fall
/// slightly below `n_entries`.
pub fn scaling_tensors(n_entries: usize, seed: u64) -> Result<CoupledTensors> {
    if n_entries < 2 {
        return Err(Error::InvalidParameter("need at least 2 entries".into()));
    }
    const BINS: u32 = 100;
    let nx = (n_entries / 20).max(10);
    let ny = (n_entries / 40).max(5);
    let nz = (n_entries / 20).max(10);
    let amounts = LogNormal::new(8.0, 1.0).expect("valid parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_p = n_entries / 2;
    let n_q = n_entries - n_p;
    let mut fill = |n: usize, n_accounts: usize| {
        let mut e = IndexedEntries::with_capacity(1, n);
        for _ in 0..n {
            let a = rng.random_range(0..n_accounts) as u32;
            let y = rng.random_range(0..ny) as u32;
            let bin = rng.random_range(0..BINS);
            e.push(a, y, &[bin], amounts.sample(&mut rng));
        }
        e
    };
    let p = fill(n_p, nx);
    let q = fill(n_q, nz);
    let ids = |role, n| (0..n).map(|i| account_id(role, i)).collect();
    CoupledTensors::from_indexed(
        ModeSchema::time_only(),
        ids(Role::Source, nx),
        ids(Role::Middle, ny),
        ids(Role::Destination, nz),
        p,
        q,
    )
}

/// Truth file: one `role,account` line per labeled account, roles `x`, `y`, `z`.
pub fn write_truth<W: Write>(mut w: W, truth: &RoleSets) -> std::io::Result<()> {
    for (role, id) in truth.pairs() {
        writeln!(w, "{},{id}", role.label())?;
    }
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<RoleSets> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut truth = RoleSets::default();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = || Error::Parse {
            line: k as u64 + 1,
            message: format!("expected `role,account`, got {line:?}"),
        };
        let (role, id) = line.split_once(',').ok_or_else(parse_err)?;
        let role = Role::from_label(role.trim()).ok_or_else(parse_err)?;
        truth.get_mut(role).insert(id.trim().to_owned());
    }
    Ok(truth)
}
