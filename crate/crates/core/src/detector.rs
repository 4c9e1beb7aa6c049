//! Greedy peeling for the densest coupled flow block.
//!
//! Every fiber, source and destination is a node in one min-priority
//! structure. Fiber priority is `f - alpha * q`; source and destination
//! priority is their mass over live fibers. The loop repeatedly deletes the
//! minimum node, pushes the mass change to its live neighbors and scores the
//! remaining block with `numerator / (|B_x| + |I| + |B_z|)`. It stops as
//! soon as any of the three node sets is exhausted and returns the best
//! block seen.
//!
//! Equal priorities are broken by node order: fibers before sources before
//! destinations, then by index.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metric::{fiber_weight, score_block, MetricParams};
use crate::pq::{prefetch, LazyQueue};
use crate::tensor::{AccountIdx, CoupledTensors, FiberIdx, FlowBlock, RoleSets};

/// A peelable node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Node {
    Fiber(FiberIdx),
    Source(AccountIdx),
    Destination(AccountIdx),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DetectOptions {
    /// Recompute every maintained mass from scratch after each removal and
    /// assert agreement. Quadratic; meant for tests.
    pub check_invariants: bool,
    /// Keep the full removal order in the result.
    pub keep_peel_order: bool,
}

/// One loop iteration: the node removed and the score of the block it was removed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeelStep {
    pub removed: Node,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub block: FlowBlock,
    pub score_algorithmic: f64,
    pub score_exact: f64,
    /// Number of removals performed.
    pub iterations: usize,
    /// Number of priority changes applied to live neighbors.
    pub priority_updates: usize,
    pub peel_order: Option<Vec<Node>>,
}

impl DetectionResult {
    pub fn accounts(&self, t: &CoupledTensors) -> RoleSets {
        self.block.accounts(t)
    }
}

pub fn detect(t: &CoupledTensors, params: &MetricParams) -> Result<DetectionResult> {
    detect_with(t, params, DetectOptions::default())
}

pub fn detect_with(t: &CoupledTensors, params: &MetricParams, options: DetectOptions) -> Result<DetectionResult> {
    let mut state = PeelState::new(t, params.alpha());
    let run = state.run(options.check_invariants, false);
    let block = state.snapshot(&run.removed[..run.best_step]);
    let score = score_block(t, &block, params)?;
    debug_assert!(
        (score.algorithmic() - run.best_score).abs() <= 1e-6 * run.best_score.abs().max(1.0),
        "maintained score {} disagrees with recomputed {}",
        run.best_score,
        score.algorithmic()
    );
    let peel_order = options
        .keep_peel_order
        .then(|| run.removed.iter().map(|&v| state.node(v)).collect());
    Ok(DetectionResult {
        block,
        score_algorithmic: score.algorithmic(),
        score_exact: score.exact(),
        iterations: run.removed.len(),
        priority_updates: state.updates,
        peel_order,
    })
}

/// The removal sequence with the score seen before each removal.
///
/// The first step carries the score of the full block; the maximum over
/// all steps is the best score `detect` reports.
pub fn peel_trace(t: &CoupledTensors, params: &MetricParams) -> Vec<PeelStep> {
    let mut state = PeelState::new(t, params.alpha());
    let run = state.run(false, true);
    run.removed
        .iter()
        .zip(&run.scores)
        .map(|(&v, &score)| PeelStep {
            removed: state.node(v),
            score,
        })
        .collect()
}

struct Run {
    removed: Vec<u32>,
    scores: Vec<f64>,
    best_score: f64,
    best_step: usize,
}

/// Peeling record of one node, sized to half a cache line.
///
/// A fiber keeps its masses over live sources (`in_mass`) and live
/// destinations (`out_mass`) with the number of live entries behind each.
/// An account uses `in_mass` and `in_live` only. A mass is exactly zero
/// once its count is zero. `start == REMOVED` marks a peeled node.
#[derive(Debug, Clone, Copy, Default)]
#[repr(C, align(32))]
struct NodeState {
    in_mass: f64,
    out_mass: f64,
    in_live: u32,
    out_live: u32,
    start: u32,
    len: u32,
}

const REMOVED: u32 = u32::MAX;

/// Neighbor of a node with the mass of the entry they share.
#[derive(Debug, Clone, Copy)]
struct Edge {
    node: u32,
    mass: f64,
}

/// Mutable peeling state. Nodes are numbered fibers first, then sources,
/// then destinations. A fiber lists its sources then its destinations as
/// edges, an account its fibers.
struct PeelState<'a> {
    t: &'a CoupledTensors,
    alpha: f64,
    n_fibers: u32,
    n_sources: u32,
    nodes: Vec<NodeState>,
    edges: Vec<Edge>,
    numerator: f64,
    live_fibers: usize,
    live_sources: usize,
    live_destinations: usize,
    queue: LazyQueue,
    updates: usize,
}

impl<'a> PeelState<'a> {
    fn new(t: &'a CoupledTensors, alpha: f64) -> Self {
        let n_f = t.n_fibers();
        let n_x = t.n_sources();
        let n_z = t.n_destinations();
        let n_edges = 2 * (t.p_nnz() + t.q_nnz());
        assert!(
            n_f + n_x + n_z < REMOVED as usize && n_edges < REMOVED as usize,
            "tensors too large"
        );
        let x_base = n_f as u32;
        let z_base = (n_f + n_x) as u32;

        let mut nodes = Vec::with_capacity(n_f + n_x + n_z);
        let mut edges = Vec::with_capacity(n_edges);
        for i in 0..n_f as FiberIdx {
            let mut s = NodeState {
                start: edges.len() as u32,
                ..Default::default()
            };
            for (x, m) in t.p_by_fiber(i) {
                s.in_mass += m;
                s.in_live += 1;
                edges.push(Edge {
                    node: x_base + x,
                    mass: m,
                });
            }
            for (z, m) in t.q_by_fiber(i) {
                s.out_mass += m;
                s.out_live += 1;
                edges.push(Edge {
                    node: z_base + z,
                    mass: m,
                });
            }
            s.len = s.in_live + s.out_live;
            nodes.push(s);
        }
        fn account(nodes: &mut Vec<NodeState>, edges: &mut Vec<Edge>, row: impl Iterator<Item = (FiberIdx, f64)>) {
            let mut s = NodeState {
                start: edges.len() as u32,
                ..Default::default()
            };
            for (i, m) in row {
                s.in_mass += m;
                s.in_live += 1;
                edges.push(Edge { node: i, mass: m });
            }
            s.len = s.in_live;
            nodes.push(s);
        }
        for x in 0..n_x as AccountIdx {
            account(&mut nodes, &mut edges, t.p_by_source(x));
        }
        for z in 0..n_z as AccountIdx {
            account(&mut nodes, &mut edges, t.q_by_destination(z));
        }

        let keys: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(v, s)| Self::weight_of(s, v < n_f, alpha))
            .collect();
        let numerator = keys[..n_f].iter().sum();
        PeelState {
            t,
            alpha,
            n_fibers: n_f as u32,
            n_sources: n_x as u32,
            nodes,
            edges,
            numerator,
            live_fibers: n_f,
            live_sources: n_x,
            live_destinations: n_z,
            queue: LazyQueue::from_keys(&keys),
            updates: 0,
        }
    }

    #[inline]
    fn weight_of(s: &NodeState, is_fiber: bool, alpha: f64) -> f64 {
        if is_fiber {
            fiber_weight(s.in_mass, s.out_mass, alpha)
        } else {
            s.in_mass
        }
    }

    fn node(&self, v: u32) -> Node {
        if v < self.n_fibers {
            Node::Fiber(v)
        } else if v < self.n_fibers + self.n_sources {
            Node::Source(v - self.n_fibers)
        } else {
            Node::Destination(v - self.n_fibers - self.n_sources)
        }
    }

    #[inline]
    fn is_live(&self, v: u32) -> bool {
        self.nodes[v as usize].start != REMOVED
    }

    fn run(&mut self, check: bool, keep_scores: bool) -> Run {
        let mut removed = Vec::with_capacity(self.nodes.len());
        let mut scores = Vec::new();
        let mut best_score = f64::NEG_INFINITY;
        let mut best_step = 0;
        while self.live_fibers > 0 && self.live_sources > 0 && self.live_destinations > 0 {
            let denominator = self.live_fibers + self.live_sources + self.live_destinations;
            let score = self.numerator / denominator as f64;
            if score > best_score {
                best_score = score;
                best_step = removed.len();
            }
            self.prefetch_ahead();
            let (nodes, n_f, alpha) = (&self.nodes, self.n_fibers, self.alpha);
            let p = self
                .queue
                .pop_current(|p| {
                    let s = &nodes[p.item as usize];
                    s.start != REMOVED && Self::weight_of(s, p.item < n_f, alpha) == p.key
                })
                .expect("live nodes remain");
            removed.push(p.item);
            if keep_scores {
                scores.push(score);
            }
            if p.item < self.n_fibers {
                self.remove_fiber(p.item);
            } else {
                self.remove_account(p.item);
            }
            if check {
                self.verify();
            }
        }
        Run {
            removed,
            scores,
            best_score,
            best_step,
        }
    }

    /// Most pops come from the sorted initial run, so upcoming removals are
    /// known. Stages their record, edges, neighbor records and neighbor
    /// queue entries into cache over successive iterations; each stage's
    /// addresses come from data the previous stage fetched.
    #[inline]
    fn prefetch_ahead(&self) {
        if let Some(p) = self.queue.upcoming(32) {
            prefetch(self.nodes.as_ptr().wrapping_add(p.item as usize));
        }
        if let Some(p) = self.queue.upcoming(16) {
            let s = &self.nodes[p.item as usize];
            if s.start != REMOVED {
                let edges = self.edges.as_ptr().wrapping_add(s.start as usize);
                prefetch(edges);
                prefetch(edges.wrapping_add(s.len.saturating_sub(1) as usize));
            }
        }
        if let Some(p) = self.queue.upcoming(8) {
            for e in self.live_edges(p.item) {
                prefetch(self.nodes.as_ptr().wrapping_add(e.node as usize));
                self.queue.prefetch_position(e.node);
            }
        }
        if let Some(p) = self.queue.upcoming(4) {
            for e in self.live_edges(p.item) {
                self.queue.prefetch_entry(e.node);
            }
        }
    }

    /// Edges of `v`, or none once it is removed.
    #[inline]
    fn live_edges(&self, v: u32) -> &[Edge] {
        let s = &self.nodes[v as usize];
        if s.start == REMOVED {
            &[]
        } else {
            &self.edges[s.start as usize..(s.start + s.len) as usize]
        }
    }

    /// Marks `v` removed and returns its edge range.
    fn take(&mut self, v: u32) -> std::ops::Range<usize> {
        let s = &mut self.nodes[v as usize];
        let range = s.start as usize..(s.start + s.len) as usize;
        s.start = REMOVED;
        range
    }

    fn remove_fiber(&mut self, i: FiberIdx) {
        let s = self.nodes[i as usize];
        self.numerator -= fiber_weight(s.in_mass, s.out_mass, self.alpha);
        self.live_fibers -= 1;
        if self.live_fibers == 0 {
            self.numerator = 0.0;
        }
        for k in self.take(i) {
            let e = self.edges[k];
            let a = &mut self.nodes[e.node as usize];
            if a.start == REMOVED {
                continue;
            }
            a.in_live -= 1;
            let old = a.in_mass;
            a.in_mass = if a.in_live == 0 { 0.0 } else { a.in_mass - e.mass };
            self.updates += 1;
            if a.in_mass != old {
                self.queue.push(e.node, a.in_mass);
            }
        }
    }

    /// Removes a source or destination, updating the matching side of its fibers.
    fn remove_account(&mut self, v: u32) {
        let is_source = v < self.n_fibers + self.n_sources;
        if is_source {
            self.live_sources -= 1;
        } else {
            self.live_destinations -= 1;
        }
        let alpha = self.alpha;
        let mut delta = 0.0;
        for k in self.take(v) {
            let e = self.edges[k];
            let s = &mut self.nodes[e.node as usize];
            if s.start == REMOVED {
                continue;
            }
            let old = fiber_weight(s.in_mass, s.out_mass, alpha);
            if is_source {
                s.in_live -= 1;
                s.in_mass = if s.in_live == 0 { 0.0 } else { s.in_mass - e.mass };
            } else {
                s.out_live -= 1;
                s.out_mass = if s.out_live == 0 { 0.0 } else { s.out_mass - e.mass };
            }
            let new = fiber_weight(s.in_mass, s.out_mass, alpha);
            delta += new - old;
            self.updates += 1;
            if new != old {
                self.queue.push(e.node, new);
            }
        }
        self.numerator += delta;
    }

    /// Block obtained from the full tensors by deleting `removed`.
    fn snapshot(&self, removed: &[u32]) -> FlowBlock {
        let mut gone = vec![false; self.nodes.len()];
        for &v in removed {
            gone[v as usize] = true;
        }
        let mut block = FlowBlock::default();
        for (v, _) in gone.iter().enumerate().filter(|(_, &g)| !g) {
            match self.node(v as u32) {
                Node::Fiber(i) => block.fibers.insert(i),
                Node::Source(x) => block.sources.insert(x),
                Node::Destination(z) => block.destinations.insert(z),
            };
        }
        block
    }

    fn verify(&self) {
        let t = self.t;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let x_base = self.n_fibers;
        let z_base = self.n_fibers + self.n_sources;
        let queued: std::collections::HashSet<(u32, u64)> = self
            .queue
            .entries()
            .map(|p| (p.item, (p.key + 0.0).to_bits()))
            .collect();
        let priority_is_queued = |v: u32| {
            let w = Self::weight_of(&self.nodes[v as usize], v < x_base, self.alpha);
            queued.contains(&(v, (w + 0.0).to_bits()))
        };
        let mut numerator = 0.0;
        for i in 0..self.n_fibers {
            if !self.is_live(i) {
                continue;
            }
            let s = self.nodes[i as usize];
            let a: f64 = t
                .p_by_fiber(i)
                .filter(|&(x, _)| self.is_live(x_base + x))
                .map(|(_, m)| m)
                .sum();
            let b: f64 = t
                .q_by_fiber(i)
                .filter(|&(z, _)| self.is_live(z_base + z))
                .map(|(_, m)| m)
                .sum();
            assert!(close(a, s.in_mass), "fiber {i} in-mass drifted");
            assert!(close(b, s.out_mass), "fiber {i} out-mass drifted");
            assert!(priority_is_queued(i), "fiber {i} priority is stale");
            numerator += fiber_weight(a, b, self.alpha);
        }
        assert!(close(numerator, self.numerator), "numerator drifted");
        for x in 0..self.n_sources {
            if !self.is_live(x_base + x) {
                continue;
            }
            let row: f64 = t.p_by_source(x).filter(|&(i, _)| self.is_live(i)).map(|(_, m)| m).sum();
            assert!(
                close(row, self.nodes[(x_base + x) as usize].in_mass),
                "source {x} row mass drifted"
            );
            assert!(priority_is_queued(x_base + x), "source {x} priority is stale");
        }
        for z in 0..t.n_destinations() as AccountIdx {
            if !self.is_live(z_base + z) {
                continue;
            }
            let col: f64 = t
                .q_by_destination(z)
                .filter(|&(i, _)| self.is_live(i))
                .map(|(_, m)| m)
                .sum();
            assert!(
                close(col, self.nodes[(z_base + z) as usize].in_mass),
                "destination {z} column mass drifted"
            );
            assert!(priority_is_queued(z_base + z), "destination {z} priority is stale");
        }
    }
}
