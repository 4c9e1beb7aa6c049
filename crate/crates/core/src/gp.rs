//! Generalized Pareto tail fits by maximum likelihood.
//!
//! Parameters are `xi` (shape) and `sigma > 0` (scale); the density of an
//! exceedance `y >= 0` is `(1/sigma) (1 + xi y / sigma)^(-1 - 1/xi)`, with
//! the exponential law at `xi = 0`. The fit runs Newton's method on the
//! mean log-likelihood in `(xi, ln sigma)` from a probability-weighted
//! moments start, with a backtracking line search that keeps the iterate
//! inside the support and `xi > -1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of exceedances accepted by [`gp_fit`].
pub const MIN_EXCEEDANCES: usize = 20;
/// Convergence threshold on the largest gradient component of the mean log-likelihood.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

/// `|xi * y / sigma|` below which series expansions replace closed forms.
const SERIES_CUTOFF: f64 = 0.1;
const SERIES_TERMS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFit {
    /// The `(k+1)`-th largest sample, `k = ceil(epsilon * n)`.
    pub threshold: f64,
    pub shape: f64,
    pub scale: f64,
    pub n_samples: usize,
    pub epsilon: f64,
    pub n_exceedances: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Ascending samples backing the sub-threshold empirical CDF.
    pub sorted_samples: Vec<f64>,
}

/// `(ln(1+u) - u/(1+u)) / u^2`.
fn s0(u: f64) -> f64 {
    if u.abs() < SERIES_CUTOFF {
        // sum over m >= 2 of (-1)^m (m-1)/m u^(m-2)
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 2..2 + SERIES_TERMS {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (m - 1) as f64 / m as f64 * pow;
            pow *= u;
        }
        acc
    } else {
        (u.ln_1p() - u / (1.0 + u)) / (u * u)
    }
}

/// Derivative of [`s0`].
fn s1(u: f64) -> f64 {
    if u.abs() < SERIES_CUTOFF {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for m in 3..3 + SERIES_TERMS {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (m - 1) as f64 / m as f64 * (m - 2) as f64 * pow;
            pow *= u;
        }
        acc
    } else {
        let v = 1.0 + u;
        1.0 / (u * v * v) + 2.0 / (u * u * v) - 2.0 * u.ln_1p() / (u * u * u)
    }
}

/// `ln(1+u) / u`.
fn log1p_ratio(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u / 2.0
    } else {
        u.ln_1p() / u
    }
}

fn feasible(y: &[f64], xi: f64, sigma: f64) -> bool {
    if !(sigma > 0.0 && sigma.is_finite() && xi > -1.0 && xi.is_finite()) {
        return false;
    }
    let y_max = y.iter().copied().fold(0.0, f64::max);
    1.0 + xi * y_max / sigma > 0.0
}

/// GP log-likelihood of exceedances `y`; `-inf` outside the parameter space.
pub fn gp_log_likelihood(y: &[f64], xi: f64, sigma: f64) -> f64 {
    if !feasible(y, xi, sigma) {
        return f64::NEG_INFINITY;
    }
    let k = y.len() as f64;
    // (1 + 1/xi) ln(1 + u) = (1 + xi) t ln(1+u)/u with u = xi t
    let tail: f64 = y
        .iter()
        .map(|&v| {
            let t = v / sigma;
            (1.0 + xi) * t * log1p_ratio(xi * t)
        })
        .sum();
    -k * sigma.ln() - tail
}

/// Gradient and Hessian of the log-likelihood in `(xi, tau = ln sigma)`.
fn derivatives(y: &[f64], xi: f64, sigma: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for &v in y {
        let t = v / sigma;
        let u = xi * t;
        let w = 1.0 + u;
        g[0] += t * t * s0(u) - t / w;
        g[1] += -1.0 + (1.0 + xi) * t / w;
        h[0][0] += t * t * t * s1(u) + t * t / (w * w);
        h[0][1] += t * (1.0 - t) / (w * w);
        h[1][1] += -(1.0 + xi) * t / (w * w);
    }
    h[1][0] = h[0][1];
    (g, h)
}

/// Probability-weighted moments estimate, or the exponential fit when that
/// estimate leaves the parameter space.
fn pwm_start(sorted_y: &[f64]) -> (f64, f64) {
    let k = sorted_y.len() as f64;
    let a0 = sorted_y.iter().sum::<f64>() / k;
    let a1 = sorted_y
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (1.0 - (i as f64 + 1.0 - 0.35) / k))
        .sum::<f64>()
        / k;
    let d = a0 - 2.0 * a1;
    let xi = 2.0 - a0 / d;
    let sigma = 2.0 * a0 * a1 / d;
    if d > 0.0 && xi > -0.5 && feasible(sorted_y, xi, sigma) {
        (xi, sigma)
    } else {
        (0.0, a0)
    }
}

/// Maximum-likelihood GP fit to exceedances `y`.
///
/// Returns `(xi, sigma, log_likelihood, iterations)`.
pub fn fit_exceedances(y: &[f64]) -> Result<(f64, f64, f64, usize)> {
    let k = y.len();
    if k < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 exceedances, got {k}")));
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo >= 0.0 && hi.is_finite()) {
        return Err(Error::DegenerateFit(
            "exceedances must be finite and nonnegative".into(),
        ));
    }
    if lo == hi {
        return Err(Error::DegenerateFit(format!("all {k} exceedances equal {lo}")));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut xi, mut sigma) = pwm_start(&sorted);
    let mut ll = gp_log_likelihood(y, xi, sigma);
    let kf = k as f64;

    for iter in 0..MAX_ITERATIONS {
        let (g, h) = derivatives(y, xi, sigma);
        let gmax = g[0].abs().max(g[1].abs()) / kf;
        if gmax <= GRADIENT_TOLERANCE {
            return Ok((xi, sigma, ll, iter));
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let newton = if h[0][0] < 0.0 && det > 0.0 {
            Some([
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
            ])
        } else {
            None
        };
        let ascent = [g[0] / kf, g[1] / kf];
        let mut moved = false;
        for dir in newton.into_iter().chain(std::iter::once(ascent)) {
            let mut step = 1.0;
            for _ in 0..60 {
                let nxi = xi + step * dir[0];
                let nsigma = sigma * (step * dir[1]).exp();
                let nll = gp_log_likelihood(y, nxi, nsigma);
                if nll.is_finite() && nll >= ll {
                    moved = nxi != xi || nsigma != sigma;
                    xi = nxi;
                    sigma = nsigma;
                    ll = nll;
                    break;
                }
                step *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            return Err(Error::NonConvergence {
                iterations: iter,
                shape: xi,
                scale: sigma,
                gradient: gmax,
            });
        }
    }
    let (g, _) = derivatives(y, xi, sigma);
    let gmax = g[0].abs().max(g[1].abs()) / kf;
    if gmax <= GRADIENT_TOLERANCE {
        return Ok((xi, sigma, ll, MAX_ITERATIONS));
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        shape: xi,
        scale: sigma,
        gradient: gmax,
    })
}

/// Fits the tail of `masses` above the empirical `(1 - epsilon)`-quantile.
///
/// The top `k = ceil(epsilon * n)` samples are the exceedances; the
/// threshold is the largest sample below them.
pub fn gp_fit(masses: &[f64], epsilon: f64) -> Result<GpFit> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if masses.iter().any(|m| !m.is_finite()) {
        return Err(Error::Precondition("masses must be finite".into()));
    }
    let n = masses.len();
    let k = (epsilon * n as f64).ceil() as usize;
    if k < MIN_EXCEEDANCES || k >= n {
        return Err(Error::Precondition(format!(
            "{n} samples at epsilon {epsilon} give {k} exceedances; need at least {MIN_EXCEEDANCES} and fewer than n"
        )));
    }
    let mut sorted = masses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - k - 1];
    let y: Vec<f64> = sorted[n - k..].iter().map(|m| m - threshold).collect();
    let (shape, scale, log_likelihood, iterations) = fit_exceedances(&y)?;
    Ok(GpFit {
        threshold,
        shape,
        scale,
        n_samples: n,
        epsilon,
        n_exceedances: k,
        log_likelihood,
        iterations,
        sorted_samples: sorted,
    })
}

/// GP distribution function at exceedance `y`.
pub fn gp_cdf(y: f64, xi: f64, sigma: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let u = xi * y / sigma;
    if u <= -1.0 {
        return 1.0;
    }
    // (1 + u)^(-1/xi) = exp(-(y/sigma) ln(1+u)/u)
    let survival = (-(y / sigma) * log1p_ratio(u)).exp();
    1.0 - survival
}

/// Tail probability score of a flow mass: empirical CDF below the
/// threshold, `1 - epsilon (1 - F_GP(mass - threshold))` at or above it.
pub fn surprisingness(fit: &GpFit, observed_mass: f64) -> f64 {
    if observed_mass.is_nan() {
        return f64::NAN;
    }
    if observed_mass < fit.threshold {
        let below = fit.sorted_samples.partition_point(|&s| s <= observed_mass);
        return below as f64 / fit.n_samples as f64;
    }
    let tail = gp_cdf(observed_mass - fit.threshold, fit.shape, fit.scale);
    (1.0 - fit.epsilon * (1.0 - tail)).clamp(0.0, 1.0)
}
