//! Explicit Euler-Maruyama for `dX = B(t, X_t) dt + sigma(t, X(t)) dW`.
//!
//! The drift is evaluated at the left endpoint on the segment `X_{t_k}`, and
//! the delayed values it reads are exact grid reads.

use crate::error::{Error, Result};
use crate::models::{ModelSpec, DRIFT_CLIP};
use crate::paths::{PathSegment, SamplePath, Segment, TimeGrid};
use crate::rng::BrownianDriver;
use crate::stats::par_replicates;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    pub seed: u64,
    pub replicates: usize,
    /// Drift coordinates above this magnitude are clipped and counted.
    pub drift_clip: f64,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid, seed: u64, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::config("replicate count must be at least 1"));
        }
        Ok(Self {
            grid,
            seed,
            replicates,
            drift_clip: DRIFT_CLIP,
        })
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Ok(Self {
            grid: self.grid.with_horizon(horizon)?,
            ..*self
        })
    }

    pub fn with_replicates(&self, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::config("replicate count must be at least 1"));
        }
        Ok(Self { replicates, ..*self })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    pub fn driver(&self, replicate: u64) -> BrownianDriver {
        BrownianDriver::new(self.seed, replicate, &self.grid)
    }
}

/// Two solutions driven by the same Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub x: SamplePath,
    pub y: SamplePath,
}

impl CoupledPair {
    /// `||X_t^y - X_t^x||_inf` at main step `k`.
    pub fn segment_distance(&self, k: usize) -> f64 {
        let a = self.x.segment_view(k);
        let b = self.y.segment_view(k);
        a.values()
            .chunks_exact(a.dim())
            .zip(b.values().chunks_exact(b.dim()))
            .map(|(u, v)| {
                u.iter()
                    .zip(v)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn integrate(
    model: &ModelSpec,
    x0: &PathSegment,
    cfg: &SolverConfig,
    increments: Vec<f64>,
    with_drift: bool,
) -> Result<SamplePath> {
    let grid = cfg.grid;
    let d = model.dim();
    x0.check_grid(&grid, d)?;
    if increments.len() != grid.n_main() * d {
        return Err(Error::domain(format!(
            "expected {} increments, got {}",
            grid.n_main() * d,
            increments.len()
        )));
    }
    if with_drift {
        model.check_grid(&grid)?;
    }
    let h = grid.h();
    let n_pre = grid.n_pre();
    let mut states = Vec::with_capacity(grid.n_nodes() * d);
    states.extend_from_slice(x0.values());
    let mut drift = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut clips = 0u64;
    let drift_is_zero = !with_drift || model.drift.is_zero();

    for k in 0..grid.n_main() {
        let t = grid.main_time(k);
        let seg = Segment::new(h, d, &states[k * d..(k + n_pre + 1) * d]);
        let current = seg.current();
        if drift_is_zero {
            drift.fill(0.0);
        } else {
            clips += model
                .drift
                .eval(t, &seg, &mut drift)
                .map_err(|e| Error::Integration {
                    step: k,
                    message: e.to_string(),
                })?;
            for b in drift.iter_mut() {
                if !(b.abs() <= cfg.drift_clip) {
                    *b = if b.is_nan() {
                        cfg.drift_clip
                    } else {
                        cfg.drift_clip.copysign(*b)
                    };
                    clips += 1;
                }
            }
        }
        model
            .diffusion
            .apply(t, current, &increments[k * d..(k + 1) * d], &mut noise);
        for i in 0..d {
            next[i] = current[i] + drift[i] * h + noise[i];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                step: k,
                message: "non-finite state".into(),
            });
        }
        states.extend_from_slice(&next);
    }
    Ok(SamplePath::from_parts(grid, d, states, increments, clips))
}

/// Euler-Maruyama with prescribed increments (`n_main x d`, flattened).
pub fn euler_maruyama_with_increments(
    model: &ModelSpec,
    x0: &PathSegment,
    cfg: &SolverConfig,
    increments: Vec<f64>,
) -> Result<SamplePath> {
    integrate(model, x0, cfg, increments, true)
}

pub fn euler_maruyama(
    model: &ModelSpec,
    x0: &PathSegment,
    cfg: &SolverConfig,
    driver: &BrownianDriver,
) -> Result<SamplePath> {
    integrate(model, x0, cfg, driver.increments(model.dim()), true)
}

/// The driftless process `dM = sigma(t, M) dW`, `M_0 = x0`.
pub fn driftless_path(
    model: &ModelSpec,
    x0: &PathSegment,
    cfg: &SolverConfig,
    driver: &BrownianDriver,
) -> Result<SamplePath> {
    integrate(model, x0, cfg, driver.increments(model.dim()), false)
}

pub fn driftless_path_with_increments(
    model: &ModelSpec,
    x0: &PathSegment,
    cfg: &SolverConfig,
    increments: Vec<f64>,
) -> Result<SamplePath> {
    integrate(model, x0, cfg, increments, false)
}

pub fn coupled_paths(
    model: &ModelSpec,
    x0: &PathSegment,
    y0: &PathSegment,
    cfg: &SolverConfig,
    driver: &BrownianDriver,
) -> Result<CoupledPair> {
    coupled_paths_with_increments(model, x0, y0, cfg, driver.increments(model.dim()))
}

pub fn coupled_paths_with_increments(
    model: &ModelSpec,
    x0: &PathSegment,
    y0: &PathSegment,
    cfg: &SolverConfig,
    increments: Vec<f64>,
) -> Result<CoupledPair> {
    let x = integrate(model, x0, cfg, increments.clone(), true)?;
    let y = integrate(model, y0, cfg, increments, true)?;
    Ok(CoupledPair { x, y })
}

/// Run `f` on every replicate path of `cfg`, in replicate order.
pub fn map_paths<T, F>(model: &ModelSpec, x0: &PathSegment, cfg: &SolverConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SamplePath) -> T + Sync + Send,
{
    par_replicates(cfg.replicates, |rep| {
        euler_maruyama(model, x0, cfg, &cfg.driver(rep)).map(|p| f(&p))
    })
    .into_iter()
    .collect()
}

/// Run `f` on every replicate driftless path of `cfg`, in replicate order.
pub fn map_driftless_paths<T, F>(model: &ModelSpec, x0: &PathSegment, cfg: &SolverConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SamplePath) -> Result<T> + Sync + Send,
{
    par_replicates(cfg.replicates, |rep| {
        driftless_path(model, x0, cfg, &cfg.driver(rep)).and_then(|p| f(&p))
    })
    .into_iter()
    .collect()
}
