//! Time grids, path segments and sample paths.
//!
//! A path lives on the uniform grid `-r, -r + h, ..., 0, h, ..., T`. The
//! delay `r` and the horizon `T` are exact multiples of `h`, so the segment
//! `X_t(s) = X(t + s)`, `s in [-r, 0]`, is always a contiguous slice of grid
//! nodes and the delayed read `X(t - r)` never needs interpolation.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};

const GRID_REL_TOL: f64 = 1e-9;

/// Uniform grid on `[-r, T]` with step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    r: f64,
    horizon: f64,
    h: f64,
    n_pre: usize,
    n_main: usize,
}

fn integer_ratio(len: f64, h: f64) -> Option<usize> {
    let ratio = len / h;
    let n = ratio.round();
    if n < 1.0 || n > (u32::MAX as f64) || (ratio - n).abs() > GRID_REL_TOL * n.max(1.0) {
        None
    } else {
        Some(n as usize)
    }
}

impl TimeGrid {
    pub fn new(r: f64, horizon: f64, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::domain(format!("step h must be positive, got {h}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::domain(format!("delay r must be positive, got {r}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!("horizon T must be positive, got {horizon}")));
        }
        let n_pre = integer_ratio(r, h)
            .ok_or_else(|| Error::domain("r not an integer multiple of h"))?;
        let n_main = integer_ratio(horizon, h)
            .ok_or_else(|| Error::domain("T not an integer multiple of h"))?;
        Ok(Self {
            r: n_pre as f64 * h,
            horizon: n_main as f64 * h,
            h,
            n_pre,
            n_main,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of steps in `[-r, 0]`.
    pub fn n_pre(&self) -> usize {
        self.n_pre
    }

    /// Number of steps in `[0, T]`.
    pub fn n_main(&self) -> usize {
        self.n_main
    }

    /// Total number of nodes on `[-r, T]`.
    pub fn n_nodes(&self) -> usize {
        self.n_pre + self.n_main + 1
    }

    /// Time of node `i`, where node 0 is `-r`.
    pub fn time(&self, node: usize) -> f64 {
        (node as f64 - self.n_pre as f64) * self.h
    }

    /// Time of the `k`-th main step, `k = 0` being `t = 0`.
    pub fn main_time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Node index of a time on the grid, if it is one.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        if !t.is_finite() {
            return None;
        }
        let pos = (t + self.r) / self.h;
        let k = pos.round();
        if k < 0.0 || k > (self.n_nodes() - 1) as f64 {
            return None;
        }
        if (pos - k).abs() > GRID_REL_TOL * k.abs().max(1.0) {
            return None;
        }
        Some(k as usize)
    }

    /// Same `r` and `h`, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.r, horizon, self.h)
    }
}

/// Borrowed segment `X_t` on `[-r, 0]`: `n_pre + 1` states, oldest first.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    h: f64,
    dim: usize,
    values: &'a [f64],
}

impl<'a> Segment<'a> {
    pub(crate) fn new(h: f64, dim: usize, values: &'a [f64]) -> Self {
        debug_assert!(dim > 0 && values.len().is_multiple_of(dim));
        Self { h, dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of grid points, `n_pre + 1`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn r(&self) -> f64 {
        (self.len() - 1) as f64 * self.h
    }

    /// State at point `j`, `j = 0` being `s = -r`.
    pub fn state(&self, j: usize) -> &'a [f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// The current value `x(0)`.
    pub fn current(&self) -> &'a [f64] {
        self.state(self.len() - 1)
    }

    /// Index of the lag `s in [-r, 0]`, if it is a grid point.
    pub fn lag_index(&self, s: f64) -> Option<usize> {
        let n = self.len() - 1;
        let pos = n as f64 + s / self.h;
        let k = pos.round();
        if !pos.is_finite() || k < 0.0 || k > n as f64 {
            return None;
        }
        if (pos - k).abs() > GRID_REL_TOL * k.abs().max(1.0) {
            return None;
        }
        Some(k as usize)
    }

    /// State at lag `s`, which must be a grid point of `[-r, 0]`.
    pub fn at_lag(&self, s: f64) -> Option<&'a [f64]> {
        self.lag_index(s).map(|j| self.state(j))
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(euclidean_norm)
            .fold(0.0, f64::max)
    }

    pub fn to_owned(&self) -> PathSegment {
        PathSegment {
            h: self.h,
            dim: self.dim,
            values: self.values.to_vec(),
        }
    }
}

pub(crate) fn euclidean_norm(x: &[f64]) -> f64 {
    if x.len() == 1 {
        x[0].abs()
    } else {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Owned element of the segment space `C([-r, 0], R^d)`, sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    h: f64,
    dim: usize,
    values: Vec<f64>,
}

impl PathSegment {
    /// Segment from flattened states (`len * dim` entries, oldest first).
    pub fn from_values(h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::domain("segment spacing must be positive"));
        }
        if values.len() < 2 * dim || !values.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "segment needs a whole number (>= 2) of {dim}-dimensional states, got {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("segment entries must be finite"));
        }
        Ok(Self { h, dim, values })
    }

    /// Constant segment equal to `value` on the `[-r, 0]` part of `grid`.
    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Result<Self> {
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(value.len() * (grid.n_pre() + 1))
            .collect();
        Self::from_values(grid.h(), value.len(), values)
    }

    /// Segment sampled from `f(s)` at the grid points `s in [-r, 0]`.
    pub fn from_fn(grid: &TimeGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(dim * (grid.n_pre() + 1));
        for j in 0..=grid.n_pre() {
            let s = grid.time(j);
            let x = f(s);
            if x.len() != dim {
                return Err(Error::domain(format!(
                    "segment function returned {} components, expected {dim}",
                    x.len()
                )));
            }
            values.extend_from_slice(&x);
        }
        Self::from_values(grid.h(), dim, values)
    }

    pub fn view(&self) -> Segment<'_> {
        Segment::new(self.h, self.dim, &self.values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        self.view().state(j)
    }

    pub fn current(&self) -> &[f64] {
        self.view().current()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    /// Pointwise sum `self + offset`, used to build probe sequences `y_n = x + c/n`.
    pub fn shifted(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::domain("offset dimension mismatch"));
        }
        let values = self
            .values
            .chunks_exact(self.dim)
            .flat_map(|x| x.iter().zip(offset).map(|(a, b)| a + b))
            .collect();
        Self::from_values(self.h, self.dim, values)
    }

    /// `||self - other||_inf`.
    pub fn distance(&self, other: &PathSegment) -> Result<f64> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::domain("segments live on different grids"));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Segment::new(self.h, self.dim, &diff).sup_norm())
    }

    /// Whether this segment fits the `[-r, 0]` part of `grid` in dimension `dim`.
    pub fn check_grid(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::domain(format!(
                "initial segment has dimension {}, model has {dim}",
                self.dim
            )));
        }
        if self.len() != grid.n_pre() + 1 || (self.h - grid.h()).abs() > GRID_REL_TOL * grid.h() {
            return Err(Error::domain(
                "initial segment does not match the grid spacing and delay",
            ));
        }
        Ok(())
    }
}

/// `max_j |seg(s_j)|`.
pub fn sup_norm(seg: &PathSegment) -> f64 {
    seg.sup_norm()
}

/// A trajectory on `[-r, T]` together with the Brownian increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
    clip_events: u64,
}

impl SamplePath {
    pub(crate) fn from_parts(
        grid: TimeGrid,
        dim: usize,
        states: Vec<f64>,
        increments: Vec<f64>,
        clip_events: u64,
    ) -> Self {
        debug_assert_eq!(states.len(), grid.n_nodes() * dim);
        debug_assert_eq!(increments.len(), grid.n_main() * dim);
        Self {
            grid,
            dim,
            states,
            increments,
            clip_events,
        }
    }

    /// Build a path from explicit node states and increments.
    pub fn new(grid: TimeGrid, dim: usize, states: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if states.len() != grid.n_nodes() * dim {
            return Err(Error::domain(format!(
                "expected {} state values, got {}",
                grid.n_nodes() * dim,
                states.len()
            )));
        }
        if increments.len() != grid.n_main() * dim {
            return Err(Error::domain(format!(
                "expected {} increment values, got {}",
                grid.n_main() * dim,
                increments.len()
            )));
        }
        Ok(Self::from_parts(grid, dim, states, increments, 0))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of drift evaluations that hit the clip threshold.
    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }

    pub fn is_flagged(&self) -> bool {
        self.clip_events > 0
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// State at node `i` (node 0 is `t = -r`).
    pub fn state(&self, node: usize) -> &[f64] {
        &self.states[node * self.dim..(node + 1) * self.dim]
    }

    /// State at main step `k` (`t = k h`).
    pub fn main_state(&self, k: usize) -> &[f64] {
        self.state(self.grid.n_pre() + k)
    }

    /// Increment `W(t_{k+1}) - W(t_k)`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// Segment `X_{t_k}` as a borrowed view; `k` counts main steps.
    pub fn segment_view(&self, k: usize) -> Segment<'_> {
        let start = k * self.dim;
        let end = (k + self.grid.n_pre() + 1) * self.dim;
        Segment::new(self.grid.h(), self.dim, &self.states[start..end])
    }

    /// The segment `X_t`, re-indexed to `[-r, 0]`.
    pub fn segment_at(&self, t: f64) -> Result<PathSegment> {
        let node = self
            .grid
            .node_of(t)
            .ok_or_else(|| Error::domain(format!("t = {t} is not a grid time")))?;
        if node < self.grid.n_pre() {
            return Err(Error::domain(format!("t = {t} lies before 0")));
        }
        Ok(self.segment_view(node - self.grid.n_pre()).to_owned())
    }

    /// Piecewise-linear read between grid nodes.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let g = &self.grid;
        if !(t >= -g.r() && t <= g.horizon()) {
            return Err(Error::domain(format!(
                "t = {t} outside [{}, {}]",
                -g.r(),
                g.horizon()
            )));
        }
        if let Some(node) = g.node_of(t) {
            return Ok(self.state(node).to_vec());
        }
        let pos = (t + g.r()) / g.h();
        let lo = (pos.floor() as usize).min(g.n_nodes() - 2);
        let w = pos - lo as f64;
        Ok(self
            .state(lo)
            .iter()
            .zip(self.state(lo + 1))
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// CSV with columns `t, x_1..x_d, dW_1..dW_d`; the increment on row
    /// `t_{k+1}` is the one that produced that state, so `dW` is empty on `[-r, 0]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(csv_header(self.dim).as_bytes())?;
        let mut line = String::new();
        for node in 0..self.grid.n_nodes() {
            line.clear();
            write_num(&mut line, self.grid.time(node));
            for v in self.state(node) {
                line.push(',');
                write_num(&mut line, *v);
            }
            if node > self.grid.n_pre() {
                for v in self.increment(node - self.grid.n_pre() - 1) {
                    line.push(',');
                    write_num(&mut line, *v);
                }
            } else {
                for _ in 0..self.dim {
                    line.push(',');
                }
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Parse the CSV written by [`SamplePath::write_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty input".into(),
        })?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 3 || cols.len().is_multiple_of(2) || cols[0] != "t" {
            return Err(Error::Parse {
                line: 1,
                message: "header must be t,x_1..x_d,dW_1..dW_d".into(),
            });
        }
        let dim = (cols.len() - 1) / 2;
        if header.trim_end_matches('\r') != csv_header(dim).trim_end() {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header for dimension {dim}"),
            });
        }

        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut incs: Vec<Option<Vec<f64>>> = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 1 + 2 * dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} fields, got {}", 1 + 2 * dim, fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("invalid number {s:?}"),
                    })
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..=dim] {
                states.push(parse(f)?);
            }
            let dw = &fields[1 + dim..];
            if dw.iter().all(|f| f.trim().is_empty()) {
                incs.push(None);
            } else {
                incs.push(Some(dw.iter().map(|f| parse(f)).collect::<Result<Vec<_>>>()?));
            }
        }

        if times.len() < 3 {
            return Err(Error::Parse {
                line: 2,
                message: "need at least three rows".into(),
            });
        }
        let h = times[1] - times[0];
        let grid = TimeGrid::new(-times[0], *times.last().unwrap(), h).map_err(|e| Error::Parse {
            line: 2,
            message: format!("times do not form a valid grid: {e}"),
        })?;
        if grid.n_nodes() != times.len() {
            return Err(Error::Parse {
                line: 2,
                message: "row count does not match the time grid".into(),
            });
        }
        let mut increments = Vec::with_capacity(grid.n_main() * dim);
        for (node, (&t, inc)) in times.iter().zip(incs).enumerate() {
            let expected = grid.time(node);
            if (t - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(Error::Parse {
                    line: node + 2,
                    message: format!("time {t} off the uniform grid (expected {expected})"),
                });
            }
            match (node > grid.n_pre(), inc) {
                (true, Some(v)) => increments.extend(v),
                (false, None) => {}
                (true, None) => {
                    return Err(Error::Parse {
                        line: node + 2,
                        message: "missing increment for t > 0".into(),
                    })
                }
                (false, Some(_)) => {
                    return Err(Error::Parse {
                        line: node + 2,
                        message: "increment given on [-r, 0]".into(),
                    })
                }
            }
        }
        Ok(Self::from_parts(grid, dim, states, increments, 0))
    }
}

fn csv_header(dim: usize) -> String {
    let mut s = String::from("t");
    for i in 1..=dim {
        let _ = write!(s, ",x_{i}");
    }
    for i in 1..=dim {
        let _ = write!(s, ",dW_{i}");
    }
    s.push('\n');
    s
}

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn write_num(buf: &mut String, v: f64) {
    let _ = write!(buf, "{v:.16e}");
}
