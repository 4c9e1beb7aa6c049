//! Coupled sparse transfer tensors.
//!
//! Two tensors share the middle-account mode and every attribute mode:
//! `P(source, middle, a3..aN)` holds transfers into middle accounts and
//! `Q(middle, destination, a3..aN)` holds transfers out of them. A *fiber*
//! is identified by `(middle, a3..aN)`; it is a column of the source-mode
//! unfolding of `P` and of the destination-mode unfolding of `Q`.
//!
//! Accounts are interned per role into sorted index spaces, and fibers are
//! interned in lexicographic key order, so index order equals key order and
//! does not depend on the input record order.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Money amounts.
pub type Money = f64;
/// A discrete attribute value (time-bin index or category code).
pub type AttrValue = u32;
/// Index of an account inside one role's index space.
pub type AccountIdx = u32;
/// Index of a fiber key.
pub type FiberIdx = u32;

/// Names of the attribute modes `A3..AN` shared by both tensors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSchema {
    attribute_names: Vec<String>,
}

impl ModeSchema {
    pub fn new<S: Into<String>>(attribute_names: impl IntoIterator<Item = S>) -> Result<Self> {
        let attribute_names: Vec<String> = attribute_names.into_iter().map(Into::into).collect();
        if attribute_names.is_empty() {
            return Err(Error::InvalidParameter(
                "a schema needs at least one attribute mode".into(),
            ));
        }
        Ok(ModeSchema { attribute_names })
    }

    /// The 3-mode schema `(from, to, time_bin)`.
    pub fn time_only() -> Self {
        ModeSchema {
            attribute_names: vec!["time_bin".into()],
        }
    }

    /// Total number of modes, `N = 2 + attributes`.
    pub fn n_modes(&self) -> usize {
        2 + self.attribute_names.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }
}

/// One money transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub src: String,
    pub dst: String,
    /// Attribute values for `A3..AN`; `attrs[0]` is the time bin when time is modeled.
    pub attrs: Vec<AttrValue>,
    pub amount: Money,
}

impl TransferRecord {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, attrs: Vec<AttrValue>, amount: Money) -> Self {
        TransferRecord {
            src: src.into(),
            dst: dst.into(),
            attrs,
            amount,
        }
    }
}

/// External form of a fiber key: a middle account plus attribute values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FiberKey {
    pub middle: String,
    pub attrs: Vec<AttrValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Middle,
    Destination,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Source, Role::Middle, Role::Destination];

    /// Short label used in truth files.
    pub fn label(self) -> &'static str {
        match self {
            Role::Source => "x",
            Role::Middle => "y",
            Role::Destination => "z",
        }
    }

    pub fn from_label(label: &str) -> Option<Role> {
        match label {
            "x" | "source" => Some(Role::Source),
            "y" | "middle" => Some(Role::Middle),
            "z" | "destination" => Some(Role::Destination),
            _ => None,
        }
    }
}

/// Account ids grouped by role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSets {
    pub sources: BTreeSet<String>,
    pub middles: BTreeSet<String>,
    pub destinations: BTreeSet<String>,
}

impl RoleSets {
    pub fn get(&self, role: Role) -> &BTreeSet<String> {
        match role {
            Role::Source => &self.sources,
            Role::Middle => &self.middles,
            Role::Destination => &self.destinations,
        }
    }

    pub fn get_mut(&mut self, role: Role) -> &mut BTreeSet<String> {
        match role {
            Role::Source => &mut self.sources,
            Role::Middle => &mut self.middles,
            Role::Destination => &mut self.destinations,
        }
    }

    /// All `(role, account)` pairs in role order, then id order.
    pub fn pairs(&self) -> impl Iterator<Item = (Role, &str)> + '_ {
        Role::ALL
            .into_iter()
            .flat_map(move |role| self.get(role).iter().map(move |id| (role, id.as_str())))
    }

    pub fn len(&self) -> usize {
        self.sources.len() + self.middles.len() + self.destinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Counts of records kept or dropped while building.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    /// Records routed into `P` (source -> middle).
    pub p_records: usize,
    /// Records routed into `Q` (middle -> destination).
    pub q_records: usize,
    /// Records matching neither role pattern.
    pub dropped: usize,
}

/// Compressed adjacency: row `i` holds `(target, mass)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    masses: Vec<Money>,
}

impl Csr {
    fn row(&self, i: u32) -> impl Iterator<Item = (u32, Money)> + '_ {
        let span = self.offsets[i as usize]..self.offsets[i as usize + 1];
        self.targets[span.clone()]
            .iter()
            .copied()
            .zip(self.masses[span].iter().copied())
    }

    fn row_len(&self, i: u32) -> usize {
        self.offsets[i as usize + 1] - self.offsets[i as usize]
    }

    fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// Entries of one tensor with accounts already interned.
///
/// For `P` the account is the source; for `Q` it is the destination.
#[derive(Debug, Clone, Default)]
pub struct IndexedEntries {
    n_attrs: usize,
    accounts: Vec<AccountIdx>,
    middles: Vec<AccountIdx>,
    attrs: Vec<AttrValue>,
    amounts: Vec<Money>,
}

impl IndexedEntries {
    pub fn new(n_attrs: usize) -> Self {
        IndexedEntries {
            n_attrs,
            ..Default::default()
        }
    }

    pub fn with_capacity(n_attrs: usize, capacity: usize) -> Self {
        IndexedEntries {
            n_attrs,
            accounts: Vec::with_capacity(capacity),
            middles: Vec::with_capacity(capacity),
            attrs: Vec::with_capacity(capacity * n_attrs),
            amounts: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, account: AccountIdx, middle: AccountIdx, attrs: &[AttrValue], amount: Money) {
        debug_assert_eq!(attrs.len(), self.n_attrs);
        self.accounts.push(account);
        self.middles.push(middle);
        self.attrs.extend_from_slice(attrs);
        self.amounts.push(amount);
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    fn attrs_of(&self, k: usize) -> &[AttrValue] {
        &self.attrs[k * self.n_attrs..(k + 1) * self.n_attrs]
    }
}

/// The coupled pair `(P, Q)` with adjacency indices in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTensors {
    schema: ModeSchema,
    sources: Vec<String>,
    middles: Vec<String>,
    destinations: Vec<String>,
    fiber_middle: Vec<AccountIdx>,
    fiber_attrs: Vec<AttrValue>,
    middle_fibers: Vec<usize>,
    p_by_source: Csr,
    p_by_fiber: Csr,
    q_by_destination: Csr,
    q_by_fiber: Csr,
    report: BuildReport,
}

fn intern_ids(ids: &BTreeSet<String>) -> Vec<String> {
    ids.iter().cloned().collect()
}

fn lookup(ids: &[String], id: &str) -> Option<AccountIdx> {
    ids.binary_search_by(|probe| probe.as_str().cmp(id))
        .ok()
        .map(|i| i as AccountIdx)
}

impl CoupledTensors {
    /// Routes records into `P` and `Q` by role membership and coalesces
    /// duplicate coordinates.
    ///
    /// A record whose source is a source candidate and whose destination is
    /// a middle candidate goes to `P`; middle -> destination goes to `Q`.
    /// When roles overlap a record can populate both. Anything else is
    /// dropped and counted in [`BuildReport::dropped`].
    pub fn build(records: &[TransferRecord], roles: &RoleSets, schema: &ModeSchema) -> Result<Self> {
        let sources = intern_ids(&roles.sources);
        let middles = intern_ids(&roles.middles);
        let destinations = intern_ids(&roles.destinations);
        let n_attrs = schema.n_attrs();

        let mut p = IndexedEntries::new(n_attrs);
        let mut q = IndexedEntries::new(n_attrs);
        let mut report = BuildReport {
            records: records.len(),
            ..Default::default()
        };

        for (index, rec) in records.iter().enumerate() {
            if rec.attrs.len() != n_attrs {
                return Err(Error::AttributeArity {
                    index,
                    expected: n_attrs,
                    found: rec.attrs.len(),
                });
            }
            if rec.amount.is_nan() || rec.amount < 0.0 {
                return Err(Error::NegativeAmount {
                    index,
                    amount: rec.amount,
                });
            }
            let mut used = false;
            if let (Some(x), Some(y)) = (lookup(&sources, &rec.src), lookup(&middles, &rec.dst)) {
                p.push(x, y, &rec.attrs, rec.amount);
                report.p_records += 1;
                used = true;
            }
            if let (Some(y), Some(z)) = (lookup(&middles, &rec.src), lookup(&destinations, &rec.dst)) {
                q.push(z, y, &rec.attrs, rec.amount);
                report.q_records += 1;
                used = true;
            }
            if !used {
                report.dropped += 1;
            }
        }

        Self::assemble(schema.clone(), sources, middles, destinations, p, q, report)
    }

    /// Builds from pre-interned entries.
    ///
    /// Id lists must be strictly increasing; entry indices must be in range.
    pub fn from_indexed(
        schema: ModeSchema,
        sources: Vec<String>,
        middles: Vec<String>,
        destinations: Vec<String>,
        p: IndexedEntries,
        q: IndexedEntries,
    ) -> Result<Self> {
        for (name, ids) in [
            ("source", &sources),
            ("middle", &middles),
            ("destination", &destinations),
        ] {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!("{name} ids must be sorted and unique")));
            }
        }
        for (side, entries, n_accounts) in [("P", &p, sources.len()), ("Q", &q, destinations.len())] {
            if entries.n_attrs != schema.n_attrs() {
                return Err(Error::InvalidParameter(format!(
                    "{side} entries carry {} attributes, schema has {}",
                    entries.n_attrs,
                    schema.n_attrs()
                )));
            }
            if entries.accounts.iter().any(|&a| a as usize >= n_accounts)
                || entries.middles.iter().any(|&y| y as usize >= middles.len())
            {
                return Err(Error::InvalidParameter(format!("{side} entry index out of range")));
            }
            if let Some(index) = entries.amounts.iter().position(|a| a.is_nan() || *a < 0.0) {
                return Err(Error::NegativeAmount {
                    index,
                    amount: entries.amounts[index],
                });
            }
        }
        let report = BuildReport {
            records: p.len() + q.len(),
            p_records: p.len(),
            q_records: q.len(),
            dropped: 0,
        };
        Self::assemble(schema, sources, middles, destinations, p, q, report)
    }

    fn assemble(
        schema: ModeSchema,
        sources: Vec<String>,
        middles: Vec<String>,
        destinations: Vec<String>,
        p: IndexedEntries,
        q: IndexedEntries,
        report: BuildReport,
    ) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::DegenerateInput("no source -> middle transfers".into()));
        }
        if q.is_empty() {
            return Err(Error::DegenerateInput("no middle -> destination transfers".into()));
        }
        let n_attrs = schema.n_attrs();

        // Intern fiber keys over both tensors in lexicographic order.
        let n_p = p.len();
        let total = n_p + q.len();
        let key = |k: usize| -> (AccountIdx, &[AttrValue]) {
            if k < n_p {
                (p.middles[k], p.attrs_of(k))
            } else {
                (q.middles[k - n_p], q.attrs_of(k - n_p))
            }
        };
        let mut order: Vec<u32> = (0..total as u32).collect();
        order.sort_unstable_by(|&a, &b| key(a as usize).cmp(&key(b as usize)));

        let mut fiber_of = vec![0 as FiberIdx; total];
        let mut fiber_middle: Vec<AccountIdx> = Vec::new();
        let mut fiber_attrs: Vec<AttrValue> = Vec::new();
        let mut prev: Option<usize> = None;
        for &k in &order {
            let k = k as usize;
            let is_new = match prev {
                None => true,
                Some(j) => key(j) != key(k),
            };
            if is_new {
                let (y, attrs) = key(k);
                fiber_middle.push(y);
                fiber_attrs.extend_from_slice(attrs);
            }
            fiber_of[k] = (fiber_middle.len() - 1) as FiberIdx;
            prev = Some(k);
        }
        drop(order);
        let n_fibers = fiber_middle.len();

        let mut middle_fibers = vec![0usize; middles.len() + 1];
        for &y in &fiber_middle {
            middle_fibers[y as usize + 1] += 1;
        }
        for i in 0..middles.len() {
            middle_fibers[i + 1] += middle_fibers[i];
        }

        let (p_by_source, p_by_fiber) = coalesce(&p.accounts, &fiber_of[..n_p], &p.amounts, sources.len(), n_fibers);
        let (q_by_destination, q_by_fiber) =
            coalesce(&q.accounts, &fiber_of[n_p..], &q.amounts, destinations.len(), n_fibers);
        debug_assert_eq!(fiber_attrs.len(), n_fibers * n_attrs);

        Ok(CoupledTensors {
            schema,
            sources,
            middles,
            destinations,
            fiber_middle,
            fiber_attrs,
            middle_fibers,
            p_by_source,
            p_by_fiber,
            q_by_destination,
            q_by_fiber,
            report,
        })
    }

    pub fn schema(&self) -> &ModeSchema {
        &self.schema
    }

    pub fn report(&self) -> BuildReport {
        self.report
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_middles(&self) -> usize {
        self.middles.len()
    }

    pub fn n_destinations(&self) -> usize {
        self.destinations.len()
    }

    pub fn n_fibers(&self) -> usize {
        self.fiber_middle.len()
    }

    /// Coalesced entries in `P`.
    pub fn p_nnz(&self) -> usize {
        self.p_by_source.nnz()
    }

    /// Coalesced entries in `Q`.
    pub fn q_nnz(&self) -> usize {
        self.q_by_destination.nnz()
    }

    pub fn account_id(&self, role: Role, idx: AccountIdx) -> &str {
        match role {
            Role::Source => &self.sources[idx as usize],
            Role::Middle => &self.middles[idx as usize],
            Role::Destination => &self.destinations[idx as usize],
        }
    }

    pub fn account_index(&self, role: Role, id: &str) -> Option<AccountIdx> {
        match role {
            Role::Source => lookup(&self.sources, id),
            Role::Middle => lookup(&self.middles, id),
            Role::Destination => lookup(&self.destinations, id),
        }
    }

    pub fn fiber_middle(&self, i: FiberIdx) -> AccountIdx {
        self.fiber_middle[i as usize]
    }

    pub fn fiber_attrs(&self, i: FiberIdx) -> &[AttrValue] {
        let w = self.schema.n_attrs();
        &self.fiber_attrs[i as usize * w..(i as usize + 1) * w]
    }

    pub fn fiber_key(&self, i: FiberIdx) -> FiberKey {
        FiberKey {
            middle: self.middles[self.fiber_middle(i) as usize].clone(),
            attrs: self.fiber_attrs(i).to_vec(),
        }
    }

    pub fn fiber_index(&self, key: &FiberKey) -> Option<FiberIdx> {
        let y = self.account_index(Role::Middle, &key.middle)?;
        let range = self.fibers_of_middle(y);
        let (mut lo, mut hi) = (range.start, range.end);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.fiber_attrs(mid).cmp(key.attrs.as_slice()) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Fibers of middle account `y` form a contiguous index range.
    pub fn fibers_of_middle(&self, y: AccountIdx) -> Range<FiberIdx> {
        self.middle_fibers[y as usize] as FiberIdx..self.middle_fibers[y as usize + 1] as FiberIdx
    }

    /// `P` entries of source `x`: `(fiber, mass)` in fiber order.
    pub fn p_by_source(&self, x: AccountIdx) -> impl Iterator<Item = (FiberIdx, Money)> + '_ {
        self.p_by_source.row(x)
    }

    /// `P` entries of fiber `i`: `(source, mass)` in source order.
    pub fn p_by_fiber(&self, i: FiberIdx) -> impl Iterator<Item = (AccountIdx, Money)> + '_ {
        self.p_by_fiber.row(i)
    }

    /// `Q` entries of destination `z`: `(fiber, mass)` in fiber order.
    pub fn q_by_destination(&self, z: AccountIdx) -> impl Iterator<Item = (FiberIdx, Money)> + '_ {
        self.q_by_destination.row(z)
    }

    /// `Q` entries of fiber `i`: `(destination, mass)` in destination order.
    pub fn q_by_fiber(&self, i: FiberIdx) -> impl Iterator<Item = (AccountIdx, Money)> + '_ {
        self.q_by_fiber.row(i)
    }

    pub fn p_degree_of_fiber(&self, i: FiberIdx) -> usize {
        self.p_by_fiber.row_len(i)
    }

    pub fn q_degree_of_fiber(&self, i: FiberIdx) -> usize {
        self.q_by_fiber.row_len(i)
    }

    pub fn p_degree_of_source(&self, x: AccountIdx) -> usize {
        self.p_by_source.row_len(x)
    }

    pub fn q_degree_of_destination(&self, z: AccountIdx) -> usize {
        self.q_by_destination.row_len(z)
    }

    pub fn p_total_mass(&self) -> Money {
        self.p_by_source.masses.iter().sum()
    }

    pub fn q_total_mass(&self) -> Money {
        self.q_by_destination.masses.iter().sum()
    }
}

/// Sorts `(account, fiber, amount)` triples, sums duplicates and produces
/// the two adjacency directions.
fn coalesce(
    accounts: &[AccountIdx],
    fibers: &[FiberIdx],
    amounts: &[Money],
    n_accounts: usize,
    n_fibers: usize,
) -> (Csr, Csr) {
    let mut triples: Vec<(AccountIdx, FiberIdx, Money)> = accounts
        .iter()
        .zip(fibers)
        .zip(amounts)
        .map(|((&a, &f), &m)| (a, f, m))
        .collect();
    // Amount participates in the order so that summation is independent of input order.
    triples.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| a.2.total_cmp(&b.2)));

    let mut by_account = Csr {
        offsets: vec![0; n_accounts + 1],
        targets: Vec::new(),
        masses: Vec::new(),
    };
    let mut owners: Vec<AccountIdx> = Vec::new();
    let mut iter = triples.into_iter().peekable();
    while let Some((a, f, m)) = iter.next() {
        let mut mass = m;
        while let Some(&(a2, f2, m2)) = iter.peek() {
            if a2 != a || f2 != f {
                break;
            }
            mass += m2;
            iter.next();
        }
        owners.push(a);
        by_account.targets.push(f);
        by_account.masses.push(mass);
        by_account.offsets[a as usize + 1] += 1;
    }
    for i in 0..n_accounts {
        by_account.offsets[i + 1] += by_account.offsets[i];
    }

    let nnz = by_account.targets.len();
    let mut offsets = vec![0usize; n_fibers + 1];
    for &f in &by_account.targets {
        offsets[f as usize + 1] += 1;
    }
    for i in 0..n_fibers {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut targets = vec![0u32; nnz];
    let mut masses = vec![0.0; nnz];
    for ((&f, &m), &owner) in by_account.targets.iter().zip(&by_account.masses).zip(&owners) {
        let slot = cursor[f as usize];
        targets[slot] = owner;
        masses[slot] = m;
        cursor[f as usize] += 1;
    }
    let by_fiber = Csr {
        offsets,
        targets,
        masses,
    };
    (by_account, by_fiber)
}

/// A candidate coupled block: retained sources, fibers and destinations.
///
/// The middle accounts `B_y` and attribute values `B_an` are derived from
/// the fiber set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowBlock {
    pub sources: BTreeSet<AccountIdx>,
    pub fibers: BTreeSet<FiberIdx>,
    pub destinations: BTreeSet<AccountIdx>,
}

impl FlowBlock {
    /// The whole tensor pair.
    pub fn full(t: &CoupledTensors) -> Self {
        FlowBlock {
            sources: (0..t.n_sources() as AccountIdx).collect(),
            fibers: (0..t.n_fibers() as FiberIdx).collect(),
            destinations: (0..t.n_destinations() as AccountIdx).collect(),
        }
    }

    pub fn validate(&self, t: &CoupledTensors) -> Result<()> {
        let out_of_range = |set: &BTreeSet<u32>, n: usize| set.iter().next_back().is_some_and(|&i| i as usize >= n);
        if out_of_range(&self.sources, t.n_sources())
            || out_of_range(&self.fibers, t.n_fibers())
            || out_of_range(&self.destinations, t.n_destinations())
        {
            return Err(Error::Precondition("block index out of range".into()));
        }
        Ok(())
    }

    /// Distinct middle accounts over the fiber set (`B_y`).
    pub fn middles(&self, t: &CoupledTensors) -> BTreeSet<AccountIdx> {
        self.fibers.iter().map(|&i| t.fiber_middle(i)).collect()
    }

    /// Distinct values of attribute `n` (0-based over `A3..AN`) over the fiber set.
    pub fn attribute_values(&self, t: &CoupledTensors, n: usize) -> BTreeSet<AttrValue> {
        self.fibers.iter().map(|&i| t.fiber_attrs(i)[n]).collect()
    }

    /// External account ids of the block, with middles derived from fibers.
    pub fn accounts(&self, t: &CoupledTensors) -> RoleSets {
        RoleSets {
            sources: self
                .sources
                .iter()
                .map(|&x| t.account_id(Role::Source, x).to_owned())
                .collect(),
            middles: self
                .middles(t)
                .into_iter()
                .map(|y| t.account_id(Role::Middle, y).to_owned())
                .collect(),
            destinations: self
                .destinations
                .iter()
                .map(|&z| t.account_id(Role::Destination, z).to_owned())
                .collect(),
        }
    }

    pub fn fiber_keys(&self, t: &CoupledTensors) -> Vec<FiberKey> {
        self.fibers.iter().map(|&i| t.fiber_key(i)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() && self.fibers.is_empty() && self.destinations.is_empty()
    }
}

/// In- and out-mass of fiber `i` restricted to the block's sources and destinations.
pub fn fiber_masses(t: &CoupledTensors, block: &FlowBlock, i: FiberIdx) -> Result<(Money, Money)> {
    if !block.fibers.contains(&i) {
        return Err(Error::Precondition(format!("fiber {i} is not in the block")));
    }
    Ok(restricted_masses(t, block, i))
}

pub(crate) fn restricted_masses(t: &CoupledTensors, block: &FlowBlock, i: FiberIdx) -> (Money, Money) {
    let in_mass = t
        .p_by_fiber(i)
        .filter(|(x, _)| block.sources.contains(x))
        .map(|(_, m)| m)
        .sum();
    let out_mass = t
        .q_by_fiber(i)
        .filter(|(z, _)| block.destinations.contains(z))
        .map(|(_, m)| m)
        .sum();
    (in_mass, out_mass)
}

/// `M(B_P) + M(B_Q)`: all block mass on both sides.
pub fn total_block_mass(t: &CoupledTensors, block: &FlowBlock) -> Result<Money> {
    block.validate(t)?;
    Ok(block
        .fibers
        .iter()
        .map(|&i| {
            let (a, b) = restricted_masses(t, block, i);
            a + b
        })
        .sum())
}
