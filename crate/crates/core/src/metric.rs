//! Fiber statistics, node weights and the flow anomalousness score.
//!
//! For a fiber with in-mass `a` (from retained sources) and out-mass `b`
//! (to retained destinations), `f = min(a, b)`, `q = max(a, b)` and
//! `r = q - f`. The score of a block is
//!
//! ```text
//!        sum over fibers (f - alpha * q)
//! g = -------------------------------------
//!                  denominator
//! ```
//!
//! where the exact denominator counts distinct values per mode
//! (`|B_x| + |B_y| + |B_z| + sum |B_an|`) and the algorithmic one counts
//! peelable nodes (`|B_x| + |I| + |B_z|`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{restricted_masses, CoupledTensors, FlowBlock, Money};

/// Default imbalance cost rate.
pub const DEFAULT_ALPHA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    alpha: f64,
}

impl MetricParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(MetricParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberStats {
    /// Flow that passes through: `min(in, out)`.
    pub f: Money,
    /// `max(in, out)`.
    pub q: Money,
    /// Retained or missing money: `q - f`.
    pub r: Money,
}

impl FiberStats {
    /// `(1 - alpha) f - alpha r`, the first numerator form.
    pub fn balanced_form(&self, alpha: f64) -> f64 {
        (1.0 - alpha) * self.f - alpha * self.r
    }

    /// `f - alpha q`, the second numerator form.
    pub fn weight(&self, alpha: f64) -> f64 {
        self.f - alpha * self.q
    }
}

pub fn fiber_stats(in_mass: Money, out_mass: Money) -> Result<FiberStats> {
    if !(in_mass >= 0.0 && out_mass >= 0.0) {
        return Err(Error::Precondition(format!(
            "fiber masses must be nonnegative, got ({in_mass}, {out_mass})"
        )));
    }
    let f = in_mass.min(out_mass);
    let q = in_mass.max(out_mass);
    Ok(FiberStats { f, q, r: q - f })
}

/// Weight of a fiber node: `min(in, out) - alpha * max(in, out)`.
#[inline]
pub fn fiber_weight(in_mass: Money, out_mass: Money, alpha: f64) -> f64 {
    in_mass.min(out_mass) - alpha * in_mass.max(out_mass)
}

/// Block-restricted masses of one peelable node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeMasses {
    Fiber {
        in_mass: Money,
        out_mass: Money,
    },
    /// Row mass of a source over retained fibers.
    Source {
        row_mass: Money,
    },
    /// Column mass of a destination over retained fibers.
    Destination {
        col_mass: Money,
    },
}

/// Priority of a node in the peeling order.
pub fn node_weight(masses: NodeMasses, params: &MetricParams) -> f64 {
    match masses {
        NodeMasses::Fiber { in_mass, out_mass } => fiber_weight(in_mass, out_mass, params.alpha),
        NodeMasses::Source { row_mass } => row_mass,
        NodeMasses::Destination { col_mass } => col_mass,
    }
}

/// Numerator and both denominators of a block score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub numerator: f64,
    pub exact_denominator: usize,
    pub algorithmic_denominator: usize,
}

impl BlockScore {
    pub fn exact(&self) -> f64 {
        self.numerator / self.exact_denominator as f64
    }

    pub fn algorithmic(&self) -> f64 {
        self.numerator / self.algorithmic_denominator as f64
    }
}

/// Scores a block from scratch.
pub fn score_block(t: &CoupledTensors, block: &FlowBlock, params: &MetricParams) -> Result<BlockScore> {
    block.validate(t)?;
    if block.sources.is_empty() {
        return Err(Error::EmptyBlock("source"));
    }
    if block.fibers.is_empty() {
        return Err(Error::EmptyBlock("fiber"));
    }
    if block.destinations.is_empty() {
        return Err(Error::EmptyBlock("destination"));
    }
    let numerator = block
        .fibers
        .iter()
        .map(|&i| {
            let (a, b) = restricted_masses(t, block, i);
            fiber_weight(a, b, params.alpha)
        })
        .sum();
    let attr_values: usize = (0..t.schema().n_attrs())
        .map(|n| block.attribute_values(t, n).len())
        .sum();
    let n_x = block.sources.len();
    let n_z = block.destinations.len();
    Ok(BlockScore {
        numerator,
        exact_denominator: attr_values + n_x + block.middles(t).len() + n_z,
        algorithmic_denominator: n_x + block.fibers.len() + n_z,
    })
}

/// Score with the distinct-values denominator.
pub fn g_exact(t: &CoupledTensors, block: &FlowBlock, params: &MetricParams) -> Result<f64> {
    score_block(t, block, params).map(|s| s.exact())
}

/// Score with the `|B_x| + |I| + |B_z|` denominator; the quantity peeling maximizes.
pub fn g_algorithmic(t: &CoupledTensors, block: &FlowBlock, params: &MetricParams) -> Result<f64> {
    score_block(t, block, params).map(|s| s.algorithmic())
}
