//! Experiment configuration (JSON) and its validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdde_core::analysis::{exp_sup_bound, DecisionRule, Estimator, GronwallScenario};
use sdde_core::models::{Atom, DelayMeasure, Kernel, PointwiseDrift, UniformDensity};
use sdde_core::zvonkin::{PdeGrid, CONTRACTION};
use sdde_core::{Functional, ModelSpec, PathSegment, SolverConfig, TimeGrid};

use crate::LabError;

/// Largest grid (nodes on `[-r, T]`) a config may ask for.
pub const MAX_GRID_NODES: usize = 10_000_000;
/// Largest PDE table (`(nt + 1) * nx`) a config may ask for.
pub const MAX_PDE_CELLS: usize = 50_000_000;
pub const MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    StrongFeller,
    Stability,
    GirsanovCheck,
    Zvonkin,
    Bounds,
    Validate,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::StrongFeller => "strong-feller",
            Self::Stability => "stability",
            Self::GirsanovCheck => "girsanov-check",
            Self::Zvonkin => "zvonkin",
            Self::Bounds => "bounds",
            Self::Validate => "validate",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub lag: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

fn one() -> f64 {
    1.0
}

fn one_dim() -> usize {
    1
}

/// Model family and its parameters; the delay `r` comes from the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dX = sgn(X(t - 1)) dt + dW`.
    SgnDelay {},
    /// `B(t, xi) = int k(t, xi(s)) mu(ds)`, `sigma = sigma * I`.
    Kernel {
        kernel: String,
        #[serde(default)]
        atoms: Vec<AtomConfig>,
        #[serde(default)]
        density: Option<DensityConfig>,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    /// `b(x) = scale |x - center|^(-alpha)`, clipped.
    PointwiseSingular {
        center: f64,
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    /// `b(x) = scale sgn(x - center)`.
    PointwiseSign {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
    /// `B(t, xi) = slope xi(0) + offset`.
    Linear {
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one_dim")]
        dim: usize,
    },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match *self {
            Self::SgnDelay {} => 1,
            Self::Kernel { dim, .. }
            | Self::PointwiseSingular { dim, .. }
            | Self::PointwiseSign { dim, .. }
            | Self::Linear { dim, .. } => dim,
        }
    }

    fn sigma(&self) -> f64 {
        match *self {
            Self::SgnDelay {} => 1.0,
            Self::Kernel { sigma, .. }
            | Self::PointwiseSingular { sigma, .. }
            | Self::PointwiseSign { sigma, .. }
            | Self::Linear { sigma, .. } => sigma,
        }
    }

    pub fn pointwise(&self) -> Option<PointwiseDrift> {
        match *self {
            Self::PointwiseSingular { center, alpha, scale, .. } => {
                Some(PointwiseDrift::PowerSingular { scale, center, alpha })
            }
            Self::PointwiseSign { scale, center, .. } => Some(PointwiseDrift::Sign { scale, center }),
            Self::Linear { slope, offset, .. } if slope == 0.0 => Some(PointwiseDrift::constant(offset)),
            _ => None,
        }
    }

    /// Build the model on delay `r`, declaring the square envelope where one
    /// is known in closed form.
    pub fn build(&self, r: f64, horizon: f64) -> sdde_core::Result<ModelSpec> {
        match self {
            Self::SgnDelay {} => {
                if (r - 1.0).abs() > 1e-12 {
                    return Err(sdde_core::Error::Config("sgn_delay needs r = 1".into()));
                }
                Ok(ModelSpec::sgn_delay().with_square_envelope(|_, _| 1.0, 0.0, 0.0))
            }
            Self::Kernel { kernel, atoms, density, sigma, dim } => {
                let k = Kernel::from_name(kernel)
                    .ok_or_else(|| sdde_core::Error::Config(format!("unknown kernel {kernel:?}")))?;
                let measure = DelayMeasure {
                    atoms: atoms.iter().map(|a| Atom { lag: a.lag, weight: a.weight }).collect(),
                    density: density.map(|d| UniformDensity {
                        from: d.from,
                        to: d.to,
                        value: d.value,
                    }),
                };
                let tv = measure.total_variation();
                let identity = matches!(k, Kernel::Identity);
                let m = ModelSpec::kernel(*dim, r, k, measure, *sigma)?;
                // |B| <= tv sup|k|, or tv |xi|_inf for the identity kernel
                let d = *dim as f64;
                Ok(if identity {
                    m.with_square_envelope(|_, _| 0.0, d * tv * tv * horizon, 0.0)
                } else {
                    m.with_square_envelope(move |_, _| d * tv * tv, 0.0, 0.0)
                })
            }
            Self::PointwiseSingular { dim, sigma, .. } => {
                ModelSpec::pointwise(*dim, r, self.pointwise().expect("pointwise family"), *sigma)
            }
            Self::PointwiseSign { scale, dim, sigma, .. } => {
                let s2 = scale * scale * *dim as f64;
                Ok(ModelSpec::pointwise(*dim, r, self.pointwise().expect("pointwise family"), *sigma)?
                    .with_square_envelope(move |_, _| s2, 0.0, 0.0))
            }
            Self::Linear { slope, offset, sigma, dim } => {
                let o2 = 2.0 * offset * offset * *dim as f64;
                Ok(ModelSpec::affine(*dim, r, *slope, *offset, *sigma)?
                    .with_square_envelope(move |_, _| o2, 2.0 * slope * slope * horizon, 0.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r: f64,
    pub horizon: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Probe sequence `y_n = x + shifts[n]` (added to every coordinate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub shifts: Vec<f64>,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub rule: DecisionRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub half_width: f64,
    pub dx: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallConfig {
    pub scenario: GronwallScenario,
    pub p: f64,
    pub mu: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub alpha: f64,
    #[serde(default)]
    pub gronwall: Option<GronwallConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Filled from the command line when absent.
    #[serde(default)]
    pub kind: Option<Kind>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub monte_carlo: MonteCarloConfig,
    /// Constant initial segment; one value per coordinate or a single value
    /// for all of them. Defaults to zero.
    #[serde(default)]
    pub initial: Vec<f64>,
    #[serde(default)]
    pub functional: Option<Functional>,
    /// Evaluation time; defaults to the horizon.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub pde: Option<PdeConfig>,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
    /// Output directory; not part of the digest.
    #[serde(default)]
    pub output: Option<String>,
}

/// A problem with one field of a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))
    }

    /// Hex SHA-256 of the sorted-key JSON of everything but the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let canonical = serde_json::to_value(&c)
            .and_then(|v| serde_json::to_string(&v))
            .expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn time_grid(&self) -> sdde_core::Result<TimeGrid> {
        TimeGrid::new(self.grid.r, self.grid.horizon, self.grid.h)
    }

    pub fn solver_config(&self) -> sdde_core::Result<SolverConfig> {
        SolverConfig::new(self.time_grid()?, self.monte_carlo.seed, self.monte_carlo.replicates)
    }

    pub fn build_model(&self) -> sdde_core::Result<ModelSpec> {
        let grid = self.time_grid()?;
        self.model.build(grid.r(), grid.horizon())
    }

    pub fn initial_value(&self) -> Vec<f64> {
        let d = self.model.dim();
        match self.initial.len() {
            0 => vec![0.0; d],
            1 => vec![self.initial[0]; d],
            _ => self.initial.clone(),
        }
    }

    pub fn initial_segment(&self, grid: &TimeGrid) -> sdde_core::Result<PathSegment> {
        PathSegment::constant(grid, &self.initial_value())
    }

    pub fn evaluation_time(&self) -> f64 {
        self.t.unwrap_or(self.grid.horizon)
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn is_multiple(len: f64, h: f64) -> bool {
    let ratio = len / h;
    let n = ratio.round();
    n >= 1.0 && n <= u32::MAX as f64 && (ratio - n).abs() <= 1e-9 * n
}

/// Everything that would stop `cfg` from running; empty when it is runnable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let kind = match cfg.kind {
        Some(k) => Some(k),
        None => {
            out.push(Diagnostic::new("kind", "experiment kind missing"));
            None
        }
    };

    let g = cfg.grid;
    let mut grid_ok = true;
    for (field, v) in [("grid.r", g.r), ("grid.horizon", g.horizon), ("grid.h", g.h)] {
        if !positive(v) {
            out.push(Diagnostic::new(field, format!("must be positive and finite, got {v}")));
            grid_ok = false;
        }
    }
    if grid_ok {
        if !is_multiple(g.r, g.h) {
            out.push(Diagnostic::new("grid.r", "r not an integer multiple of h"));
            grid_ok = false;
        }
        if !is_multiple(g.horizon, g.h) {
            out.push(Diagnostic::new("grid.horizon", "T not an integer multiple of h"));
            grid_ok = false;
        }
    }
    if grid_ok && (g.r + g.horizon) / g.h + 1.0 > MAX_GRID_NODES as f64 {
        out.push(Diagnostic::new(
            "grid.h",
            format!("grid would have more than {MAX_GRID_NODES} nodes"),
        ));
        grid_ok = false;
    }
    if cfg.monte_carlo.replicates == 0 {
        out.push(Diagnostic::new("monte_carlo.replicates", "N ≥ 1 required"));
    }

    let dim = cfg.model.dim();
    let mut model_ok = true;
    if dim == 0 || dim > MAX_DIM {
        out.push(Diagnostic::new("model.dim", format!("dimension must lie in 1..={MAX_DIM}")));
        model_ok = false;
    }
    if !positive(cfg.model.sigma()) {
        out.push(Diagnostic::new("model.sigma", "must be positive and finite"));
        model_ok = false;
    }
    match &cfg.model {
        ModelConfig::Kernel { kernel, atoms, density, .. } => {
            if Kernel::from_name(kernel).is_none() {
                out.push(Diagnostic::new(
                    "model.kernel",
                    format!("unknown kernel {kernel:?} (zero, identity, tanh, sign)"),
                ));
                model_ok = false;
            }
            for (i, a) in atoms.iter().enumerate() {
                if !(a.lag.is_finite() && a.weight.is_finite()) || a.lag > 0.0 || (grid_ok && a.lag < -g.r) {
                    out.push(Diagnostic::new(
                        &format!("model.atoms[{i}]"),
                        "lag must lie in [-r, 0] with a finite weight",
                    ));
                    model_ok = false;
                }
            }
            if let Some(d) = density {
                let inside = d.from.is_finite() && d.to.is_finite() && d.from < d.to && d.to <= 0.0;
                if !inside || !d.value.is_finite() || (grid_ok && d.from < -g.r) {
                    out.push(Diagnostic::new("model.density", "need -r <= from < to <= 0 and a finite value"));
                    model_ok = false;
                }
            }
        }
        ModelConfig::PointwiseSingular { center, alpha, scale, .. } => {
            if !(center.is_finite() && scale.is_finite()) {
                out.push(Diagnostic::new("model", "center and scale must be finite"));
                model_ok = false;
            }
            if !(alpha.is_finite() && *alpha > 0.0) {
                out.push(Diagnostic::new("model.alpha", "must be positive"));
                model_ok = false;
            }
        }
        ModelConfig::PointwiseSign { scale, center, .. } => {
            if !(center.is_finite() && scale.is_finite()) {
                out.push(Diagnostic::new("model", "center and scale must be finite"));
                model_ok = false;
            }
        }
        ModelConfig::Linear { slope, offset, .. } => {
            if !(slope.is_finite() && offset.is_finite()) {
                out.push(Diagnostic::new("model", "slope and offset must be finite"));
                model_ok = false;
            }
        }
        ModelConfig::SgnDelay {} => {}
    }
    let mut model = None;
    if grid_ok && model_ok {
        match cfg.build_model().and_then(|m| {
            let grid = cfg.time_grid()?;
            m.check_grid(&grid)?;
            Ok(m)
        }) {
            Ok(m) => model = Some(m),
            Err(e) => out.push(Diagnostic::new("model", e.to_string())),
        }
    }

    if !(cfg.initial.len() <= 1 || cfg.initial.len() == dim) {
        out.push(Diagnostic::new(
            "initial",
            format!("expected 1 or {dim} values, got {}", cfg.initial.len()),
        ));
    } else if cfg.initial.iter().any(|v| !v.is_finite()) {
        out.push(Diagnostic::new("initial", "values must be finite"));
    }

    let Some(kind) = kind else { return out };
    let needs_time = matches!(kind, Kind::StrongFeller | Kind::Stability | Kind::GirsanovCheck);
    if needs_time && grid_ok {
        let t = cfg.evaluation_time();
        let grid = cfg.time_grid().expect("grid checked");
        let on_grid = grid.node_of(t).is_some_and(|n| n > grid.n_pre());
        if !(t > 0.0 && t <= grid.horizon() * (1.0 + 1e-12)) || !on_grid {
            out.push(Diagnostic::new("t", "must be a grid time in (0, T]"));
        }
    }
    if matches!(kind, Kind::StrongFeller | Kind::GirsanovCheck) {
        match cfg.functional {
            None => out.push(Diagnostic::new("functional", "required for this experiment")),
            Some(f) => {
                if f.coord().is_some_and(|c| c >= dim) {
                    out.push(Diagnostic::new("functional.coord", "coordinate out of range"));
                }
                if kind == Kind::StrongFeller && !f.bound().is_finite() {
                    out.push(Diagnostic::new("functional", "probe functional must be bounded"));
                }
            }
        }
    }
    if matches!(kind, Kind::StrongFeller | Kind::Stability) {
        match &cfg.probe {
            None => out.push(Diagnostic::new("probe", "required for this experiment")),
            Some(p) => {
                if p.shifts.is_empty() {
                    out.push(Diagnostic::new("probe.shifts", "need at least one probe point"));
                }
                if p.shifts.iter().any(|s| !s.is_finite()) {
                    out.push(Diagnostic::new("probe.shifts", "shifts must be finite"));
                }
                if kind == Kind::Stability && !(p.gamma > 0.0 && p.gamma < 2.0) {
                    out.push(Diagnostic::new("probe.gamma", "gamma must lie in (0, 2)"));
                }
                let r = p.rule;
                let sigmas = [r.converged_sigmas, r.gap_sigmas, r.increase_sigmas, r.relative_tolerance];
                if sigmas.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    out.push(Diagnostic::new("probe.rule", "thresholds must be finite and nonnegative"));
                }
            }
        }
    }
    if kind == Kind::Zvonkin {
        check_pde(cfg, dim, grid_ok, &mut out);
    }
    if kind == Kind::Bounds {
        match cfg.bounds {
            None => out.push(Diagnostic::new("bounds", "required for this experiment")),
            Some(b) => {
                if !(b.alpha.is_finite() && b.alpha >= 0.0) {
                    out.push(Diagnostic::new("bounds.alpha", "alpha must be nonnegative"));
                } else if let Some(m) = &model {
                    let horizon = cfg.grid.horizon;
                    if exp_sup_bound(b.alpha, m.dim(), m.c_sigma(), horizon, 0.0).is_err() {
                        out.push(Diagnostic::new("bounds.alpha", "alpha ≥ 1/(2dC_σT)"));
                    }
                }
                if let Some(gc) = b.gronwall {
                    let conj = gc.mu > 1.0 && gc.nu > 1.0 && (1.0 / gc.mu + 1.0 / gc.nu - 1.0).abs() <= 1e-12;
                    if !conj {
                        out.push(Diagnostic::new("bounds.gronwall", "need mu, nu > 1 with 1/mu + 1/nu = 1"));
                    }
                    if !(gc.p > 0.0 && gc.p * gc.nu < 1.0) {
                        out.push(Diagnostic::new("bounds.gronwall.p", "need p > 0 and p nu < 1"));
                    }
                }
            }
        }
    }
    out
}

fn check_pde(cfg: &ExperimentConfig, dim: usize, grid_ok: bool, out: &mut Vec<Diagnostic>) {
    let Some(b) = cfg.model.pointwise() else {
        out.push(Diagnostic::new(
            "model",
            "zvonkin needs a pointwise drift (pointwise_sign, pointwise_singular or linear with slope 0)",
        ));
        return;
    };
    if dim != 1 {
        out.push(Diagnostic::new("model.dim", "zvonkin is one-dimensional"));
    }
    if !matches!(cfg.initial.len(), 0 | 1) {
        out.push(Diagnostic::new("initial", "zvonkin takes a single initial value"));
    }
    let Some(p) = cfg.pde else {
        out.push(Diagnostic::new("pde", "required for this experiment"));
        return;
    };
    if !grid_ok {
        return;
    }
    let (nx, nt) = (2.0 * p.half_width / p.dx + 1.0, cfg.grid.horizon / p.dt + 1.0);
    if nx.is_finite() && nt.is_finite() && nx * nt > MAX_PDE_CELLS as f64 {
        out.push(Diagnostic::new("pde", format!("table would exceed {MAX_PDE_CELLS} cells")));
        return;
    }
    if let Err(e) = PdeGrid::new(p.half_width, p.dx, 0.0, cfg.grid.horizon, p.dt) {
        out.push(Diagnostic::new("pde", e.to_string()));
        return;
    }
    let x0 = cfg.initial_value().first().copied().unwrap_or(0.0);
    if x0.abs() >= p.half_width {
        out.push(Diagnostic::new("initial", "initial value outside [-L, L]"));
    }
    // drift pointing out of the box at the boundary rows
    let outward = b.value(p.half_width).max(0.0).max((-b.value(-p.half_width)).max(0.0));
    if p.dt * outward / p.dx > CONTRACTION {
        out.push(Diagnostic::new("pde.dt", "boundary needs dt |b| / dx <= 1/2"));
    }
}
