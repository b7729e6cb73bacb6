//! One-dimensional backward equation for the drift-removing transform.
//!
//! For a scalar drift `b` and diffusion `sigma`, `u~(., .; T)` solves
//!
//! ```text
//! d_t u~ + 1/2 sigma^2 u~_xx + b u~_x + b = 0,   u~(T, .) = 0,
//! ```
//!
//! and `u(t, x) = u~(t, x) + x` turns `X` into a process without `b`-drift.
//! The equation is marched from `T` down to `S` with backward Euler in
//! reverse time on `[-L, L]`, centred second differences, upwinded first
//! differences and the linear-extrapolation closure `u_0 = 2 u_1 - u_2` (and
//! its mirror) at the ends.

use std::io::{self, Write};
use std::ops::ControlFlow;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::EstimatorReport;
use crate::models::{DiffusionField, ModelSpec, PointwiseDrift};
use crate::paths::{write_num, PathSegment, SamplePath};
use crate::solver::{map_paths, SolverConfig};
use crate::stats::MeanEstimate;

const INTEGRAL_TOL: f64 = 1e-9;

fn steps(len: f64, step: f64, what: &str) -> Result<usize> {
    let q = len / step;
    let n = q.round();
    if !(n >= 1.0) || (q - n).abs() > INTEGRAL_TOL * q.max(1.0) {
        return Err(Error::domain(format!("{what} not an integer multiple of its step")));
    }
    Ok(n as usize)
}

/// Space-time grid `[-L, L] x [S, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeGrid {
    pub half_width: f64,
    pub dx: f64,
    pub start: f64,
    pub end: f64,
    pub dt: f64,
    #[serde(skip)]
    nx: usize,
    #[serde(skip)]
    nt: usize,
}

impl PdeGrid {
    pub fn new(half_width: f64, dx: f64, start: f64, end: f64, dt: f64) -> Result<Self> {
        if !(half_width > 0.0 && dx > 0.0 && dt > 0.0) || !half_width.is_finite() {
            return Err(Error::domain("L, dx and dt must be positive"));
        }
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::domain("time window must have S < T"));
        }
        let cells = steps(2.0 * half_width, dx, "2L")?;
        if cells < 3 {
            return Err(Error::domain("need at least four spatial nodes"));
        }
        let nt = steps(end - start, dt, "T - S")?;
        Ok(Self {
            half_width,
            dx,
            start,
            end,
            dt,
            nx: cells + 1,
            nt,
        })
    }

    /// Same spatial grid on `[start, end]`, with the largest time step not
    /// above `self.dt` that divides the window.
    pub fn with_window(&self, start: f64, end: f64) -> Result<Self> {
        let n = ((end - start) / self.dt * (1.0 - 1e-12)).ceil().max(1.0);
        Self::new(self.half_width, self.dx, start, end, (end - start) / n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Number of time steps.
    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    pub fn t(&self, j: usize) -> f64 {
        if j == self.nt {
            self.end
        } else {
            self.start + j as f64 * self.dt
        }
    }
}

/// `u~` on a [`PdeGrid`]; row `j` holds time `t_j = S + j dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    grid: PdeGrid,
    values: Vec<f64>,
    gradient: Vec<f64>,
}

impl PdeSolution {
    /// Wrap precomputed values, `(nt + 1) x nx` row-major.
    pub fn from_values(grid: PdeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != (grid.nt + 1) * grid.nx {
            return Err(Error::domain("value table does not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite value in table"));
        }
        let gradient = values.chunks_exact(grid.nx).flat_map(|row| centred_gradient(row, grid.dx)).collect();
        Ok(Self { grid, values, gradient })
    }

    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.grid.end
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// `d_x u~` at the nodes of row `j`.
    pub fn gradient_row(&self, j: usize) -> &[f64] {
        &self.gradient[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// Bilinear interpolation of `(u~, d_x u~)`; `None` outside the grid.
    pub fn interpolate(&self, t: f64, x: f64) -> Option<(f64, f64)> {
        let g = &self.grid;
        if !(x >= -g.half_width && x <= g.half_width) {
            return None;
        }
        let tol = 1e-9 * g.dt;
        if t < g.start - tol || t > g.end + tol {
            return None;
        }
        let (j, wt) = cell(t - g.start, g.dt, g.nt);
        let (i, wx) = cell(x + g.half_width, g.dx, g.nx - 1);
        let at = |tab: &[f64], j: usize| {
            let row = &tab[j * g.nx..(j + 1) * g.nx];
            if wx == 0.0 {
                row[i]
            } else {
                (1.0 - wx) * row[i] + wx * row[i + 1]
            }
        };
        let lerp = |tab: &[f64]| {
            if wt == 0.0 {
                at(tab, j)
            } else {
                (1.0 - wt) * at(tab, j) + wt * at(tab, j + 1)
            }
        };
        Some((lerp(&self.values), lerp(&self.gradient)))
    }

    /// Plot table `t,x,u`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,u")?;
        let mut line = String::new();
        for j in 0..=self.grid.nt {
            for (i, v) in self.row(j).iter().enumerate() {
                line.clear();
                write_num(&mut line, self.grid.t(j));
                line.push(',');
                write_num(&mut line, self.grid.x(i));
                line.push(',');
                write_num(&mut line, *v);
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Cell index and fractional offset of `s` on a grid of `n` cells of width `step`.
fn cell(s: f64, step: f64, n: usize) -> (usize, f64) {
    let q = (s / step).max(0.0);
    let i = q.floor() as usize;
    if i >= n {
        return (n, 0.0);
    }
    let w = q - i as f64;
    if w < 1e-12 {
        (i, 0.0)
    } else {
        (i, w)
    }
}

fn centred_gradient(row: &[f64], dx: f64) -> Vec<f64> {
    let n = row.len();
    (0..n)
        .map(|i| match i {
            0 => (row[1] - row[0]) / dx,
            _ if i == n - 1 => (row[n - 1] - row[n - 2]) / dx,
            _ => (row[i + 1] - row[i - 1]) / (2.0 * dx),
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Reverse-time march; `visit(j, row)` sees every row from `nt` down to 0
/// and may stop the march early.
fn march<Sig, B, V>(sigma: Sig, b: B, grid: &PdeGrid, mut visit: V) -> Result<()>
where
    Sig: Fn(f64, f64) -> f64,
    B: Fn(f64, f64) -> f64,
    V: FnMut(usize, &[f64]) -> ControlFlow<()>,
{
    let n = grid.nx;
    let m = n - 2;
    let (dt, dx) = (grid.dt, grid.dx);
    let mut u = vec![0.0; n];
    if visit(grid.nt, &u).is_break() {
        return Ok(());
    }
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for j in (0..grid.nt).rev() {
        let t = grid.t(j);
        for k in 0..m {
            let x = grid.x(k + 1);
            let s = sigma(t, x);
            let bx = b(t, x);
            let a = 0.5 * s * s / (dx * dx);
            let (bp, bm) = (bx.max(0.0) / dx, (-bx).max(0.0) / dx);
            lo[k] = -dt * (a + bm);
            up[k] = -dt * (a + bp);
            di[k] = 1.0 + dt * (2.0 * a + bp + bm);
            rhs[k] = u[k + 1] + dt * bx;
        }
        // ghost nodes by linear extrapolation; for outward drift this turns the
        // upwind difference downwind, and the row is dominant only while
        // dt |b| / dx <= 1/2
        for (k, x) in [(0, grid.x(1)), (m - 1, grid.x(n - 2))] {
            let outward = if k == 0 { (-b(t, x)).max(0.0) } else { b(t, x).max(0.0) };
            if dt * outward / dx > 0.5 {
                return Err(Error::Solver(format!(
                    "boundary closure unstable at x = {x}: dt |b| / dx = {} > 1/2",
                    dt * outward / dx
                )));
            }
        }
        di[0] += 2.0 * lo[0];
        up[0] -= lo[0];
        lo[0] = 0.0;
        di[m - 1] += 2.0 * up[m - 1];
        lo[m - 1] -= up[m - 1];
        up[m - 1] = 0.0;
        thomas(&lo, &mut di, &up, &mut rhs).map_err(|e| Error::Solver(format!("at t = {t}: {e}")))?;
        u[1..=m].copy_from_slice(&rhs);
        u[0] = 2.0 * u[1] - u[2];
        u[n - 1] = 2.0 * u[n - 2] - u[n - 3];
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite value at t = {t}")));
        }
        if visit(j, &u).is_break() {
            break;
        }
    }
    Ok(())
}

/// Tridiagonal solve in place; the solution ends up in `rhs`.
fn thomas(lo: &[f64], di: &mut [f64], up: &[f64], rhs: &mut [f64]) -> std::result::Result<(), String> {
    let m = di.len();
    let scale = di.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let check = |p: f64| {
        if p.abs() <= 1e-12 * scale || !p.is_finite() {
            Err(format!("singular tridiagonal system (pivot {p:e})"))
        } else {
            Ok(())
        }
    };
    check(di[0])?;
    for k in 1..m {
        let w = lo[k] / di[k - 1];
        di[k] -= w * up[k - 1];
        rhs[k] -= w * rhs[k - 1];
        check(di[k])?;
    }
    rhs[m - 1] /= di[m - 1];
    for k in (0..m - 1).rev() {
        rhs[k] = (rhs[k] - up[k] * rhs[k + 1]) / di[k];
    }
    Ok(())
}

fn scalar_sigma(sigma: &DiffusionField) -> impl Fn(f64, f64) -> f64 + '_ {
    move |t, x| sigma.matrix(t, &[x])[0]
}

/// Solve for `u~` on `grid` with a scalar diffusion and drift `b`.
pub fn solve_backward_pde(sigma: &DiffusionField, b: &PointwiseDrift, grid: &PdeGrid) -> Result<PdeSolution> {
    solve_backward_pde_with(scalar_sigma(sigma), |_, x| b.value(x), grid)
}

/// [`solve_backward_pde`] for arbitrary coefficient functions `(t, x) -> value`.
pub fn solve_backward_pde_with(
    sigma: impl Fn(f64, f64) -> f64,
    b: impl Fn(f64, f64) -> f64,
    grid: &PdeGrid,
) -> Result<PdeSolution> {
    let n = grid.nx;
    let mut values = vec![0.0; (grid.nt + 1) * n];
    march(sigma, b, grid, |j, row| {
        values[j * n..(j + 1) * n].copy_from_slice(row);
        ControlFlow::Continue(())
    })?;
    PdeSolution::from_values(*grid, values)
}

/// Largest centred first difference of `u~` over the grid.
pub fn gradient_bound(sol: &PdeSolution) -> f64 {
    max_abs(&sol.gradient)
}

/// One tested window of [`select_delta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowCheck {
    pub start: f64,
    pub end: f64,
    pub max_gradient: f64,
}

/// Outcome of the dyadic window search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub delta: f64,
    pub windows_tested: usize,
    pub max_gradient: f64,
    /// Windows of length `delta` that certified it.
    pub windows: Vec<WindowCheck>,
}

/// Gradient bound allowed on a contraction window.
pub const CONTRACTION: f64 = 0.5;
const COVER: usize = 9;

/// Largest `delta` in `T0, T0/2, T0/4, ...` such that every window of length
/// `delta` in an even cover of `[0, T0]` keeps `gradient_bound <= 1/2`.
///
/// `template` supplies `L`, `dx` and the maximal `dt`; the window itself is
/// taken from the search.
pub fn select_delta(sigma: &DiffusionField, b: &PointwiseDrift, horizon: f64, template: &PdeGrid) -> Result<DeltaReport> {
    select_delta_with(scalar_sigma(sigma), |_, x| b.value(x), horizon, template)
}

pub fn select_delta_with(
    sigma: impl Fn(f64, f64) -> f64,
    b: impl Fn(f64, f64) -> f64,
    horizon: f64,
    template: &PdeGrid,
) -> Result<DeltaReport> {
    if !(horizon > 0.0) {
        return Err(Error::domain("T0 must be positive"));
    }
    let floor = 4.0 * template.dt;
    let mut tested = 0;
    let mut delta = horizon;
    loop {
        if delta < floor {
            return Err(Error::domain(format!(
                "no contraction window above the floor 4 dt = {floor:e}; drift too singular at this resolution"
            )));
        }
        let starts = window_starts(horizon, delta);
        let mut checks = Vec::with_capacity(starts.len());
        let mut ok = true;
        for s in starts {
            let grid = template.with_window(s, s + delta)?;
            let mut worst = 0.0f64;
            march(&sigma, &b, &grid, |_, row| {
                worst = worst.max(max_abs(&centred_gradient(row, grid.dx)));
                if worst > CONTRACTION {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            tested += 1;
            checks.push(WindowCheck {
                start: s,
                end: s + delta,
                max_gradient: worst,
            });
            if worst > CONTRACTION {
                ok = false;
                break;
            }
        }
        if ok {
            let max_gradient = checks.iter().fold(0.0f64, |m, c| m.max(c.max_gradient));
            return Ok(DeltaReport {
                delta,
                windows_tested: tested,
                max_gradient,
                windows: checks,
            });
        }
        delta /= 2.0;
    }
}

fn window_starts(horizon: f64, delta: f64) -> Vec<f64> {
    let fits = (horizon / delta).round() as usize;
    let count = fits.min(COVER);
    if count <= 1 {
        return vec![0.0];
    }
    let span = horizon - delta;
    (0..count).map(|i| span * i as f64 / (count - 1) as f64).collect()
}

/// `Y(t) = u~(t, X(t)) + X(t)` on the nodes with `t >= S`; earlier nodes are
/// copied. `None` when the path leaves `[-L, L]` inside the window.
pub fn transform_path(sol: &PdeSolution, path: &SamplePath) -> Result<Option<SamplePath>> {
    if path.dim() != 1 {
        return Err(Error::domain("transform is one-dimensional"));
    }
    let g = path.grid();
    let pg = sol.grid();
    let eps = 1e-9 * g.h();
    if g.horizon() > pg.end + eps {
        return Err(Error::domain("path extends beyond the PDE horizon"));
    }
    let mut states = path.states().to_vec();
    for (node, y) in states.iter_mut().enumerate() {
        let t = g.time(node);
        if t < pg.start - eps {
            continue;
        }
        match sol.interpolate(t.min(pg.end), *y) {
            Some((u, _)) => *y += u,
            None => return Ok(None),
        }
    }
    SamplePath::new(*g, 1, states, path.increments().to_vec()).map(Some)
}

/// Largest per-step mean drift `|E[Y(t_{k+1}) - Y(t_k)]| / h` of the
/// transformed Euler-Maruyama paths of `model` over the window.
///
/// The martingale part `d_x u(t_k, X_k) sigma dW_k` is subtracted from each
/// increment before averaging; it has mean zero and carries most of the
/// variance.
pub fn drift_removal_residual(
    model: &ModelSpec,
    x0: &PathSegment,
    sol: &PdeSolution,
    cfg: &SolverConfig,
) -> Result<EstimatorReport> {
    if model.dim() != 1 {
        return Err(Error::domain("transform is one-dimensional"));
    }
    if model.drift.as_pointwise().is_none() {
        return Err(Error::domain("drift must be purely pointwise"));
    }
    let pg = *sol.grid();
    let eps = 1e-9 * cfg.grid.h();
    if pg.start.abs() > eps || (cfg.grid.horizon() - pg.end).abs() > eps {
        return Err(Error::domain("simulation horizon must match the PDE window [0, T]"));
    }
    let h = cfg.grid.h();
    let n_steps = cfg.grid.n_main();
    let rows = map_paths(model, x0, cfg, |path| -> Option<Vec<f64>> {
        if path.is_flagged() {
            return None;
        }
        let mut out = Vec::with_capacity(n_steps);
        let mut prev = {
            let x = path.main_state(0)[0];
            sol.interpolate(0.0, x)?
        };
        for k in 0..n_steps {
            let x = path.main_state(k)[0];
            let t = cfg.grid.main_time(k);
            let xn = path.main_state(k + 1)[0];
            let next = sol.interpolate(cfg.grid.main_time(k + 1).min(pg.end), xn)?;
            let dw = path.increment(k)[0];
            let noise = model.diffusion.matrix(t, &[x])[0] * dw;
            let dy = (next.0 + xn) - (prev.0 + x);
            out.push(dy - (1.0 + prev.1) * noise);
            prev = next;
        }
        Some(out)
    })?;
    let n = rows.len();
    let kept: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let flagged = n - kept.len();
    if flagged * 10 > n {
        return Err(Error::Estimation(format!(
            "{flagged} of {n} paths left [-L, L] or were clipped; residual inconclusive"
        )));
    }
    if kept.is_empty() {
        return Err(Error::Estimation("no usable paths".into()));
    }
    let mut worst = MeanEstimate {
        mean: 0.0,
        stderr: 0.0,
        n: kept.len(),
    };
    let mut column = vec![0.0; kept.len()];
    for k in 0..n_steps {
        for (c, row) in column.iter_mut().zip(&kept) {
            *c = row[k];
        }
        let m = MeanEstimate::from_samples(&column);
        if k == 0 || m.mean.abs() > worst.mean.abs() {
            worst = m;
        }
    }
    Ok(EstimatorReport {
        estimate: worst.mean.abs() / h,
        stderr: worst.stderr / h,
        n,
        ess: kept.len() as f64,
        flagged,
        seed: cfg.seed,
        config_digest: String::new(),
    })
}
