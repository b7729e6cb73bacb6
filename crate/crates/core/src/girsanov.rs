//! Expectations under the solution law as reweighted expectations over the
//! driftless process.
//!
//! With `a(t) = sigma(t, M(t))^{-1} B(t, M_t)` the density of the solution
//! law with respect to the law of `M` on `[0, T]` is
//!
//! ```text
//! D(T) = exp( int_0^T a^T dW - 1/2 int_0^T |a|^2 dt )
//! ```
//!
//! and `E f(X_t) = E[ f(M_t) D(t) ]`. Weights are carried in log space.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::models::ModelSpec;
use crate::paths::{PathSegment, SamplePath};
use crate::solver::{map_driftless_paths, map_paths, SolverConfig};
use crate::stats::{pairwise_sum, MeanEstimate};

/// A driftless path with its log Girsanov weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub path: SamplePath,
    /// `log D(T)`.
    pub log_weight: f64,
    /// `int_0^T |a|^2 dt`.
    pub quad_var: f64,
    /// `1/2 int |a|^2 dt` over each window of the partition used.
    pub window_exponents: Vec<f64>,
    pub clip_events: u64,
}

impl WeightedSample {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn is_flagged(&self) -> bool {
        self.clip_events > 0 || !self.log_weight.is_finite() || !self.weight().is_finite()
    }
}

/// Monte Carlo estimate with weight diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub ess: f64,
    pub flagged: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl EstimatorReport {
    pub fn with_digest(mut self, digest: &str) -> Self {
        self.config_digest = digest.to_string();
        self
    }
}

/// Per-step `|a_k|^2` and the weight along a driftless path.
fn weight_terms(model: &ModelSpec, path: &SamplePath) -> Result<(f64, Vec<f64>, u64)> {
    let grid = path.grid();
    let d = path.dim();
    let h = grid.h();
    let mut log_weight = 0.0;
    let mut sq = Vec::with_capacity(grid.n_main());
    let mut drift = vec![0.0; d];
    let mut clips = 0;
    for k in 0..grid.n_main() {
        let t = grid.main_time(k);
        let seg = path.segment_view(k);
        clips += model
            .drift
            .eval(t, &seg, &mut drift)
            .map_err(|e| Error::Weight {
                step: k,
                message: e.to_string(),
            })?;
        if drift.iter().all(|&b| b == 0.0) {
            sq.push(0.0);
            continue;
        }
        let a = model
            .diffusion
            .solve(t, seg.current(), &drift)
            .map_err(|message| Error::Weight { step: k, message })?;
        let dw = path.increment(k);
        let a_dw: f64 = a.iter().zip(dw).map(|(x, y)| x * y).sum();
        let a2: f64 = a.iter().map(|v| v * v).sum();
        log_weight += a_dw - 0.5 * a2 * h;
        sq.push(a2);
    }
    Ok((log_weight, sq, clips))
}

/// Girsanov weight of a driftless path over its whole horizon.
pub fn girsanov_weight(model: &ModelSpec, path: &SamplePath) -> Result<WeightedSample> {
    girsanov_weight_windows(model, path, &[0.0, path.grid().horizon()])
}

/// As [`girsanov_weight`], also splitting `1/2 int |a|^2` over the windows
/// delimited by `boundaries` (`0 = T_0 < ... < T_n = T`).
pub fn girsanov_weight_windows(model: &ModelSpec, path: &SamplePath, boundaries: &[f64]) -> Result<WeightedSample> {
    let grid = path.grid();
    let (log_weight, sq, clip_events) = weight_terms(model, path)?;
    let h = grid.h();
    let mut window_exponents = Vec::with_capacity(boundaries.len().saturating_sub(1));
    for w in boundaries.windows(2) {
        let lo = (w[0] / h).round() as usize;
        let hi = ((w[1] / h).round() as usize).min(sq.len());
        let s: f64 = sq[lo.min(hi)..hi].iter().sum();
        window_exponents.push(0.5 * s * h);
    }
    Ok(WeightedSample {
        path: path.clone(),
        log_weight,
        quad_var: sq.iter().sum::<f64>() * h,
        window_exponents,
        clip_events,
    })
}

/// `(sum w)^2 / sum w^2`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Estimation("no weights".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Estimation("weights must be finite and nonnegative".into()));
    }
    let s = pairwise_sum(weights);
    if s == 0.0 {
        return Err(Error::Estimation("all weights are zero".into()));
    }
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    Ok(s * s / pairwise_sum(&sq))
}

/// Effective sample size from log weights, normalised by the batch maximum.
pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Estimation("no finite log weight".into()));
    }
    let w: Vec<f64> = log_weights
        .iter()
        .map(|lw| if lw.is_finite() { (lw - max).exp() } else { 0.0 })
        .collect();
    ess(&w)
}

#[derive(Debug, Clone, Copy)]
struct Term {
    log_weight: f64,
    value: f64,
    flagged: bool,
}

fn functional_value(f: &Functional, path: &SamplePath, k: usize) -> (f64, bool) {
    let v = f.eval(&path.segment_view(k));
    let bound = f.bound();
    if v.abs() > bound {
        (bound.copysign(v), true)
    } else {
        (v, false)
    }
}

fn main_step(cfg: &SolverConfig, t: f64) -> Result<usize> {
    let node = cfg
        .grid
        .node_of(t)
        .ok_or_else(|| Error::domain(format!("t = {t} is not a grid time")))?;
    if node <= cfg.grid.n_pre() {
        return Err(Error::domain("evaluation time must be positive"));
    }
    Ok(node - cfg.grid.n_pre())
}

fn report_from_terms(terms: &[Term], seed: u64) -> Result<EstimatorReport> {
    let n = terms.len();
    let flagged = terms.iter().filter(|t| t.flagged).count();
    if flagged == n {
        return Err(Error::Estimation("every path was flagged".into()));
    }
    // paths whose weight overflowed cannot enter the unnormalised mean
    let usable: Vec<&Term> = terms.iter().filter(|t| t.log_weight.exp().is_finite()).collect();
    if usable.is_empty() {
        return Err(Error::Estimation("every weight overflowed".into()));
    }
    let products: Vec<f64> = usable.iter().map(|t| t.log_weight.exp() * t.value).collect();
    let m = MeanEstimate::from_samples(&products);
    let lw: Vec<f64> = terms.iter().map(|t| t.log_weight).collect();
    Ok(EstimatorReport {
        estimate: m.mean,
        stderr: m.stderr,
        n,
        ess: ess_from_log_weights(&lw)?,
        flagged,
        seed,
        config_digest: String::new(),
    })
}

/// `E f(X_t)` as the weighted mean of `f(M_t) D(t)` over driftless paths.
pub fn weighted_expectation(
    model: &ModelSpec,
    x0: &PathSegment,
    f: &Functional,
    t: f64,
    cfg: &SolverConfig,
) -> Result<EstimatorReport> {
    main_step(cfg, t)?;
    // D(t) suffices for a functional of X_t
    let cfg_t = cfg.with_horizon(t)?;
    let k = cfg_t.grid.n_main();
    let terms = map_driftless_paths(model, x0, &cfg_t, |path| {
        let (log_weight, _, clips) = weight_terms(model, path)?;
        let (value, clipped) = functional_value(f, path, k);
        Ok(Term {
            log_weight,
            value,
            flagged: clips > 0 || clipped || !log_weight.exp().is_finite(),
        })
    })?;
    report_from_terms(&terms, cfg.seed)
}

/// Plain Monte Carlo of `E f(X_t)` over Euler-Maruyama paths of the full equation.
pub fn direct_expectation(
    model: &ModelSpec,
    x0: &PathSegment,
    f: &Functional,
    t: f64,
    cfg: &SolverConfig,
) -> Result<EstimatorReport> {
    main_step(cfg, t)?;
    let cfg_t = cfg.with_horizon(t)?;
    let k = cfg_t.grid.n_main();
    let terms = map_paths(model, x0, &cfg_t, |path| {
        let (value, clipped) = functional_value(f, path, k);
        Term {
            log_weight: 0.0,
            value,
            flagged: clipped || path.is_flagged(),
        }
    })?;
    report_from_terms(&terms, cfg.seed)
}

/// Greedy partition `0 = T_0 < ... < T_n = T` into maximal windows on which
/// the pilot estimate of `E exp(1/2 int |a|^2 dt)` stays at or below `target`.
pub fn novikov_partition(
    model: &ModelSpec,
    x0: &PathSegment,
    horizon: f64,
    target: f64,
    pilot: &SolverConfig,
) -> Result<Vec<f64>> {
    if !(target > 1.0) {
        return Err(Error::domain("novikov target must exceed 1"));
    }
    let cfg = pilot.with_horizon(horizon)?;
    let h = cfg.grid.h();
    let n_steps = cfg.grid.n_main();
    let rows = map_driftless_paths(model, x0, &cfg, |path| weight_terms(model, path).map(|(_, sq, _)| sq))?;

    let mut bounds = vec![0.0];
    let mut start = 0;
    let mut partial = vec![0.0; rows.len()];
    while start < n_steps {
        partial.iter_mut().for_each(|p| *p = 0.0);
        let mut end = start;
        while end < n_steps {
            let trial: Vec<f64> = rows
                .iter()
                .zip(&partial)
                .map(|(row, p)| (0.5 * (p + row[end] * h)).exp())
                .collect();
            let mean = pairwise_sum(&trial) / trial.len() as f64;
            if !(mean <= target) {
                break;
            }
            for (p, row) in partial.iter_mut().zip(&rows) {
                *p += row[end] * h;
            }
            end += 1;
        }
        if end == start {
            return Err(Error::Partition(format!(
                "a single step at t = {} already exceeds the target {target}",
                cfg.grid.main_time(start)
            )));
        }
        bounds.push(cfg.grid.main_time(end));
        start = end;
    }
    Ok(bounds)
}
