//! Detection quality against ground truth and random-flow baselines.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::detect;
use crate::error::{Error, Result};
use crate::metric::MetricParams;
use crate::synth::{inject, InjectionConfig, Sweep};
use crate::tensor::{
    total_block_mass, AttrValue, CoupledTensors, FlowBlock, ModeSchema, Money, RoleSets, TransferRecord,
};

pub use crate::gp::{gp_cdf, gp_fit, gp_log_likelihood, surprisingness, GpFit};

/// Default number of random flows sampled for a tail fit.
pub const DEFAULT_SAMPLES: usize = 5000;
/// Default tail fraction.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and F over `(role, account)` pairs.
///
/// An empty detection has precision 0; an empty truth has recall 0.
pub fn accuracy(detected: &RoleSets, truth: &RoleSets) -> Accuracy {
    let hits: usize = crate::tensor::Role::ALL
        .iter()
        .map(|&r| detected.get(r).intersection(truth.get(r)).count())
        .sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(hits, detected.len());
    let recall = ratio(hits, truth.len());
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Accuracy {
        precision,
        recall,
        f_measure,
    }
}

pub fn f_measure(detected: &RoleSets, truth: &RoleSets) -> f64 {
    accuracy(detected, truth).f_measure
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Normalized injection density in `[0, 1]`.
    pub density: f64,
    pub f_measure: f64,
}

/// Min-max normalizes densities onto `[0, 1]`.
pub fn normalize_densities(raw: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Precondition(
            "densities need at least two distinct finite values".into(),
        ));
    }
    Ok(raw.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Trapezoidal area under the F-measure curve.
pub fn fauc(curve: &[CurvePoint]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::Precondition(format!(
            "a curve needs at least 2 points, got {}",
            curve.len()
        )));
    }
    for p in curve {
        if !(0.0..=1.0).contains(&p.density) || !(0.0..=1.0).contains(&p.f_measure) {
            return Err(Error::Precondition(format!("curve point {p:?} outside [0, 1]")));
        }
    }
    if curve.windows(2).any(|w| w[1].density <= w[0].density) {
        return Err(Error::Precondition(
            "curve densities must be strictly increasing".into(),
        ));
    }
    Ok(curve
        .windows(2)
        .map(|w| (w[1].density - w[0].density) * (w[0].f_measure + w[1].f_measure) / 2.0)
        .sum())
}

/// Writes `density,f_measure,sweep_value` rows.
pub fn write_curve<W: Write>(mut w: W, curve: &[CurvePoint], sweep_values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "density,f_measure,sweep_value")?;
    for (p, v) in curve.iter().zip(sweep_values) {
        writeln!(w, "{},{},{}", p.density, p.f_measure, v)?;
    }
    Ok(())
}

/// Detection quality at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub index: usize,
    pub sweep_value: f64,
    /// Injected money per fraudulent account.
    pub raw_density: f64,
    pub point: CurvePoint,
    pub accuracy: Accuracy,
    pub score_algorithmic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub outcomes: Vec<SweepOutcome>,
    pub fauc: f64,
}

impl SweepReport {
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.outcomes.iter().map(|o| o.point).collect()
    }
}

/// Injects, detects and scores every point of `sweep` over one background.
pub fn evaluate_sweep(
    base: &[TransferRecord],
    roles: &RoleSets,
    schema: &ModeSchema,
    domains: &[AttrValue],
    config: &InjectionConfig,
    sweep: &Sweep,
    params: &MetricParams,
) -> Result<SweepReport> {
    sweep.validate()?;
    if sweep.len() < 2 {
        return Err(Error::InvalidParameter("a sweep needs at least 2 points".into()));
    }
    let mut raw = Vec::with_capacity(sweep.len());
    let mut partial = Vec::with_capacity(sweep.len());
    for i in 0..sweep.len() {
        let cfg = sweep.point_config(config, i);
        let injection = inject(base, roles, domains, &cfg)?;
        let t = CoupledTensors::build(&injection.records, roles, schema)?;
        let result = detect(&t, params)?;
        raw.push(cfg.density());
        partial.push((
            accuracy(&result.accounts(&t), &injection.truth),
            result.score_algorithmic,
        ));
    }
    let normalized = normalize_densities(&raw)?;
    let outcomes: Vec<SweepOutcome> = partial
        .into_iter()
        .enumerate()
        .map(|(i, (acc, score))| SweepOutcome {
            index: i,
            sweep_value: sweep.value(i),
            raw_density: raw[i],
            point: CurvePoint {
                density: normalized[i],
                f_measure: acc.f_measure,
            },
            accuracy: acc,
            score_algorithmic: score,
        })
        .collect();
    let curve: Vec<CurvePoint> = outcomes.iter().map(|o| o.point).collect();
    let fauc = fauc(&curve)?;
    Ok(SweepReport { outcomes, fauc })
}

/// Role cardinalities of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSize {
    pub sources: usize,
    pub middles: usize,
    pub destinations: usize,
}

impl FlowSize {
    pub fn of(accounts: &RoleSets) -> FlowSize {
        FlowSize {
            sources: accounts.sources.len(),
            middles: accounts.middles.len(),
            destinations: accounts.destinations.len(),
        }
    }
}

/// Block of the given accounts spanning every fiber of its middle accounts.
pub fn account_block(
    t: &CoupledTensors,
    sources: BTreeSet<u32>,
    middles: &[u32],
    destinations: BTreeSet<u32>,
) -> FlowBlock {
    FlowBlock {
        sources,
        fibers: middles.iter().flat_map(|&y| t.fibers_of_middle(y)).collect(),
        destinations,
    }
}

/// Total masses of `n` uniformly random flows of `size`.
pub fn sample_flow_masses(t: &CoupledTensors, size: FlowSize, n: usize, seed: u64) -> Result<Vec<Money>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let dims = [
        (size.sources, t.n_sources(), "source"),
        (size.middles, t.n_middles(), "middle"),
        (size.destinations, t.n_destinations(), "destination"),
    ];
    for (want, have, role) in dims {
        if want == 0 || want > have {
            return Err(Error::Infeasible(format!(
                "cannot sample {want} {role} accounts from {have}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |have: usize, want: usize| -> Vec<u32> {
        index::sample(&mut rng, have, want)
            .into_iter()
            .map(|i| i as u32)
            .collect()
    };
    (0..n)
        .map(|_| {
            let xs = draw(t.n_sources(), size.sources).into_iter().collect();
            let ys = draw(t.n_middles(), size.middles);
            let zs = draw(t.n_destinations(), size.destinations).into_iter().collect();
            total_block_mass(t, &account_block(t, xs, &ys, zs))
        })
        .collect()
}
