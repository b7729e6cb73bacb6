//! Drift functionals, diffusion fields and the structural metadata that the
//! well-posedness results ask for.
//!
//! A drift sees only the segment `X_t` on `[-r, 0]`, so bounded memory holds
//! by construction. The structural hypotheses (integrability envelopes,
//! ellipticity, the strict-past split) cannot be verified symbolically; the
//! `check_*` functions certify them on caller-supplied probe sets.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::{Segment, SamplePath, TimeGrid};

/// Magnitude above which a pointwise drift value is clipped.
pub const DRIFT_CLIP: f64 = 1e12;

const VALIDATION_TOL: f64 = 1e-10;

/// `sgn(x)` with `sgn(0) = 1`.
pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// The delayed-sign drift `B(t, x_t) = sgn(x(-1))` on a segment with `r = 1`.
pub fn sgn_delay_drift(_t: f64, seg: &Segment<'_>) -> f64 {
    sgn(seg.state(0)[0])
}

fn clip(v: f64) -> (f64, bool) {
    if v.is_nan() {
        (DRIFT_CLIP, true)
    } else if v.abs() > DRIFT_CLIP {
        (DRIFT_CLIP.copysign(v), true)
    } else {
        (v, false)
    }
}

/// A drift `b(x)` acting on each coordinate of the current state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PointwiseDrift {
    Constant { value: f64 },
    /// `scale * sgn(x - center)`.
    Sign { scale: f64, center: f64 },
    /// `scale * |x - center|^(-alpha)`, clipped at [`DRIFT_CLIP`].
    PowerSingular { scale: f64, center: f64, alpha: f64 },
}

impl PointwiseDrift {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn sign(scale: f64) -> Self {
        Self::Sign { scale, center: 0.0 }
    }

    /// Value and whether it was clipped.
    pub fn eval(&self, x: f64) -> (f64, bool) {
        match *self {
            Self::Constant { value } => (value, false),
            Self::Sign { scale, center } => (scale * sgn(x - center), false),
            Self::PowerSingular { scale, center, alpha } => {
                clip(scale * (x - center).abs().powf(-alpha))
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Constant { value } => value == 0.0,
            Self::Sign { scale, .. } | Self::PowerSingular { scale, .. } => scale == 0.0,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match *self {
            Self::Constant { value } => value.abs(),
            Self::Sign { scale, .. } => scale.abs(),
            Self::PowerSingular { scale, .. } => {
                if scale == 0.0 {
                    0.0
                } else {
                    DRIFT_CLIP
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Self::Constant { value } => Self::Constant { value: value * factor },
            Self::Sign { scale, center } => Self::Sign {
                scale: scale * factor,
                center,
            },
            Self::PowerSingular { scale, center, alpha } => Self::PowerSingular {
                scale: scale * factor,
                center,
                alpha,
            },
        }
    }
}

type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Kernel `k(t, x)` of an integral drift, applied coordinatewise.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    Identity,
    Tanh,
    Sign,
    Custom(KernelFn),
}

impl Kernel {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Identity => x,
            Self::Tanh => x.tanh(),
            Self::Sign => sgn(x),
            Self::Custom(f) => f(t, x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Identity => "identity",
            Self::Tanh => "tanh",
            Self::Sign => "sign",
            Self::Custom(_) => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "zero" => Self::Zero,
            "identity" => Self::Identity,
            "tanh" => Self::Tanh,
            "sign" => Self::Sign,
            _ => return None,
        })
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kernel::{}", self.name())
    }
}

/// Point mass `weight * delta_lag` with `lag in [-r, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub lag: f64,
    pub weight: f64,
}

/// Constant density `value` on `[from, to]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformDensity {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

/// Finite measure on `[-r, 0]`: grid atoms plus an optional uniform density.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DelayMeasure {
    pub atoms: Vec<Atom>,
    pub density: Option<UniformDensity>,
}

impl DelayMeasure {
    pub fn atom(lag: f64, weight: f64) -> Self {
        Self {
            atoms: vec![Atom { lag, weight }],
            density: None,
        }
    }

    pub fn uniform(from: f64, to: f64, value: f64) -> Self {
        Self {
            atoms: Vec::new(),
            density: Some(UniformDensity { from, to, value }),
        }
    }

    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight).sum();
        atoms + self.density.map_or(0.0, |d| d.value * (d.to - d.from))
    }

    /// Largest lag (closest to 0) charged by the measure.
    pub fn max_lag(&self) -> Option<f64> {
        let atoms = self.atoms.iter().filter(|a| a.weight != 0.0).map(|a| a.lag);
        let dens = self.density.filter(|d| d.value != 0.0).map(|d| d.to);
        atoms.chain(dens).reduce(f64::max)
    }

    /// Sum of `|weight|` over the charged points, a Lipschitz constant for `k = tanh`.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.abs()).sum();
        atoms + self.density.map_or(0.0, |d| d.value.abs() * (d.to - d.from))
    }

    /// Segment indices `lo..=hi` spanned by the density support.
    fn density_range(&self, seg: &Segment<'_>) -> Result<(usize, usize)> {
        let Some(d) = self.density else {
            return Err(Error::domain("measure has no density part"));
        };
        match (seg.lag_index(d.from), seg.lag_index(d.to)) {
            (Some(lo), Some(hi)) if lo <= hi => Ok((lo, hi)),
            _ => Err(Error::domain(format!(
                "density support [{}, {}] must be a grid interval of [-r, 0]",
                d.from, d.to
            ))),
        }
    }
}

/// `B(t, x_t) = \int_{-r}^0 k(t, x(s)) mu(ds)`.
#[derive(Debug, Clone)]
pub struct KernelDrift {
    pub kernel: Kernel,
    pub measure: DelayMeasure,
}

impl KernelDrift {
    pub fn new(kernel: Kernel, measure: DelayMeasure) -> Self {
        Self { kernel, measure }
    }

    /// Quadrature of `k(t, seg(s))` against the measure.
    pub fn evaluate(&self, t: f64, seg: &Segment<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; seg.dim()];
        self.eval_into(t, seg, &mut out)?;
        Ok(out)
    }

    fn eval_into(&self, t: f64, seg: &Segment<'_>, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        if matches!(self.kernel, Kernel::Zero) {
            return Ok(());
        }
        let mut add = |j: usize, w: f64| {
            for (o, &x) in out.iter_mut().zip(seg.state(j)) {
                *o += w * self.kernel.eval(t, x);
            }
        };
        for a in &self.measure.atoms {
            let j = seg
                .lag_index(a.lag)
                .ok_or_else(|| Error::domain(format!("atom at {} is not a grid point of [-r, 0]", a.lag)))?;
            add(j, a.weight);
        }
        if let Some(d) = self.measure.density {
            let (lo, hi) = self.measure.density_range(seg)?;
            // trapezoid rule, exact for constants and affine integrands
            let w = seg.h() * d.value;
            for j in lo..=hi {
                add(j, if j == lo || j == hi { 0.5 * w } else { w });
            }
        }
        Ok(())
    }
}

type CustomDriftFn = Arc<dyn Fn(f64, &Segment<'_>, &mut [f64]) + Send + Sync>;

/// Drift functional `B(t, X_t)`.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `slope * X(t) + offset`, coordinatewise.
    Affine { slope: f64, offset: f64 },
    /// `sgn(X(t - 1))` in one dimension.
    SgnDelay,
    Kernel(KernelDrift),
    Pointwise(PointwiseDrift),
    /// `B~(t, X_t) + b(X(t))` where `B~` only reads the strict past.
    Split {
        strict_past: Box<Drift>,
        pointwise: PointwiseDrift,
    },
    Custom(CustomDriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Affine { slope, offset } => write!(f, "Affine({slope}, {offset})"),
            Self::SgnDelay => write!(f, "SgnDelay"),
            Self::Kernel(k) => write!(f, "Kernel({:?}, {:?})", k.kernel, k.measure),
            Self::Pointwise(p) => write!(f, "Pointwise({p:?})"),
            Self::Split { strict_past, pointwise } => {
                write!(f, "Split({strict_past:?}, {pointwise:?})")
            }
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Drift {
    pub fn custom(f: impl Fn(f64, &Segment<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Affine { slope, offset } => *slope == 0.0 && *offset == 0.0,
            Self::Kernel(k) => matches!(k.kernel, Kernel::Zero),
            Self::Pointwise(p) => p.is_zero(),
            _ => false,
        }
    }

    /// Evaluate into `out`; returns the number of clipped coordinates.
    pub fn eval(&self, t: f64, seg: &Segment<'_>, out: &mut [f64]) -> Result<u64> {
        match self {
            Self::Zero => {
                out.fill(0.0);
                Ok(0)
            }
            Self::Affine { slope, offset } => {
                for (o, &x) in out.iter_mut().zip(seg.current()) {
                    *o = slope * x + offset;
                }
                Ok(0)
            }
            Self::SgnDelay => {
                let x = seg
                    .at_lag(-1.0)
                    .ok_or_else(|| Error::domain("sgn-delay drift needs r >= 1 on the grid"))?;
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = sgn(v);
                }
                Ok(0)
            }
            Self::Kernel(k) => {
                k.eval_into(t, seg, out)?;
                Ok(0)
            }
            Self::Pointwise(b) => {
                let mut clips = 0;
                for (o, &x) in out.iter_mut().zip(seg.current()) {
                    let (v, c) = b.eval(x);
                    *o = v;
                    clips += c as u64;
                }
                Ok(clips)
            }
            Self::Split { strict_past, pointwise } => {
                let mut clips = strict_past.eval(t, seg, out)?;
                for (o, &x) in out.iter_mut().zip(seg.current()) {
                    let (v, c) = pointwise.eval(x);
                    *o += v;
                    clips += c as u64;
                }
                Ok(clips)
            }
            Self::Custom(f) => {
                f(t, seg, out);
                Ok(0)
            }
        }
    }

    pub fn evaluate(&self, t: f64, seg: &Segment<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; seg.dim()];
        self.eval(t, seg, &mut out)?;
        Ok(out)
    }

    /// The strict-past part `B~` when the drift is split (or has no pointwise part).
    pub fn strict_past_part(&self) -> Option<&Drift> {
        match self {
            Self::Split { strict_past, .. } => Some(strict_past),
            Self::Kernel(_) | Self::SgnDelay | Self::Zero => Some(self),
            _ => None,
        }
    }

    /// The pointwise part `b` when the drift has no functional component.
    pub fn as_pointwise(&self) -> Option<PointwiseDrift> {
        match self {
            Self::Pointwise(b) => Some(b.clone()),
            Self::Zero => Some(PointwiseDrift::constant(0.0)),
            Self::Affine { slope, offset } if *slope == 0.0 => Some(PointwiseDrift::constant(*offset)),
            Self::Split { strict_past, pointwise } if strict_past.is_zero() => Some(pointwise.clone()),
            _ => None,
        }
    }

    /// Largest lag read by the functional part; `Some(0)` means it reads the present.
    pub fn latest_lag_read(&self) -> Option<f64> {
        match self {
            Self::Zero => None,
            Self::SgnDelay => Some(-1.0),
            Self::Kernel(k) => k.measure.max_lag(),
            Self::Split { strict_past, .. } => strict_past.latest_lag_read(),
            Self::Affine { .. } | Self::Pointwise(_) | Self::Custom(_) => Some(0.0),
        }
    }

    /// Whether the drift is continuous in the path for `t in [0, r)`.
    pub fn is_continuous(&self) -> Option<bool> {
        match self {
            Self::Zero | Self::Affine { .. } => Some(true),
            Self::SgnDelay => Some(false),
            Self::Kernel(k) => match k.kernel {
                Kernel::Zero | Kernel::Identity | Kernel::Tanh => Some(true),
                Kernel::Sign => Some(false),
                Kernel::Custom(_) => None,
            },
            Self::Pointwise(b) | Self::Split { pointwise: b, .. } => match b {
                PointwiseDrift::Constant { .. } => Some(true),
                _ => Some(false),
            },
            Self::Custom(_) => None,
        }
    }
}

type CustomDiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Diffusion coefficient `sigma(t, x)`, a `d x d` matrix stored row-major.
#[derive(Clone)]
pub enum DiffusionField {
    /// `scale * I`.
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Constant row-major matrix.
    Constant(Vec<f64>),
    Custom(CustomDiffusionFn),
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Scalar(s) => write!(f, "Scalar({s})"),
            Self::Diagonal(d) => write!(f, "Diagonal({d:?})"),
            Self::Constant(m) => write!(f, "Constant({m:?})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl DiffusionField {
    pub fn identity() -> Self {
        Self::Scalar(1.0)
    }

    pub fn custom(f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Self::Custom(_))
    }

    /// Row-major `sigma(t, x)`.
    pub fn matrix(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut m = vec![0.0; d * d];
        match self {
            Self::Scalar(s) => (0..d).for_each(|i| m[i * d + i] = *s),
            Self::Diagonal(v) => (0..d).for_each(|i| m[i * d + i] = v[i]),
            Self::Constant(c) => m.copy_from_slice(c),
            Self::Custom(f) => f(t, x, &mut m),
        }
        m
    }

    /// `out = sigma(t, x) dw`.
    pub fn apply(&self, t: f64, x: &[f64], dw: &[f64], out: &mut [f64]) {
        match self {
            Self::Scalar(s) => out.iter_mut().zip(dw).for_each(|(o, w)| *o = s * w),
            Self::Diagonal(v) => {
                for ((o, w), s) in out.iter_mut().zip(dw).zip(v) {
                    *o = s * w;
                }
            }
            _ => {
                let d = x.len();
                let m = self.matrix(t, x);
                for i in 0..d {
                    out[i] = (0..d).map(|j| m[i * d + j] * dw[j]).sum();
                }
            }
        }
    }

    /// Solve `sigma(t, x) a = rhs` by LU with partial pivoting.
    ///
    /// Fails when the pivot-ratio condition estimate exceeds `1e12`.
    pub fn solve(&self, t: f64, x: &[f64], rhs: &[f64]) -> std::result::Result<Vec<f64>, String> {
        const MAX_COND: f64 = 1e12;
        let diag_solve = |diag: &mut dyn Iterator<Item = f64>| {
            let diag: Vec<f64> = diag.collect();
            let big = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let small = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if !(small > 0.0) || !(big / small <= MAX_COND) || !big.is_finite() {
                return Err(format!("sigma numerically singular (pivots {small:e}..{big:e})"));
            }
            Ok(rhs.iter().zip(&diag).map(|(r, s)| r / s).collect())
        };
        match self {
            Self::Scalar(s) => diag_solve(&mut std::iter::repeat_n(*s, rhs.len())),
            Self::Diagonal(v) => diag_solve(&mut v.iter().copied()),
            _ => {
                let d = x.len();
                let m = DMatrix::from_row_slice(d, d, &self.matrix(t, x));
                if m.iter().any(|v| !v.is_finite()) {
                    return Err("sigma has non-finite entries".into());
                }
                let lu = m.lu();
                let u = lu.u();
                let big = u.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let small = u.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
                if !(small > 0.0) || big / small > MAX_COND {
                    return Err(format!("sigma numerically singular (pivots {small:e}..{big:e})"));
                }
                let b = nalgebra::DVector::from_column_slice(rhs);
                lu.solve(&b)
                    .map(|v| v.iter().copied().collect())
                    .ok_or_else(|| "sigma singular".to_string())
            }
        }
    }
}

type EnvelopeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Declared integrability envelopes of the drift.
#[derive(Clone, Default)]
pub struct Envelopes {
    /// `F` with `int |B|^2 <= int |F(s, x(s))| ds + C1 sup |x|^2 + C2`.
    pub f: Option<EnvelopeFn>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// `F~`, `G` and `H` with `int H(|B|^2) <= int |F~| + G(sup |x|)`.
    pub f_tilde: Option<EnvelopeFn>,
    pub h: Option<RadialFn>,
    pub g: Option<RadialFn>,
    /// Declared continuity of `x -> B(t, x)` for `t in [0, r)`; not verifiable.
    pub continuous_on_initial_window: bool,
}

impl fmt::Debug for Envelopes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Envelopes")
            .field("f", &self.f.is_some())
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("f_tilde", &self.f_tilde.is_some())
            .field("h", &self.h.is_some())
            .field("g", &self.g.is_some())
            .field("continuous_on_initial_window", &self.continuous_on_initial_window)
            .finish()
    }
}

/// A stochastic functional differential equation `dX = B(t, X_t) dt + sigma(t, X(t)) dW`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    dim: usize,
    delay: f64,
    pub drift: Drift,
    pub diffusion: DiffusionField,
    strict_past_lag: Option<f64>,
    c_sigma: f64,
    pub envelopes: Envelopes,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        delay: f64,
        drift: Drift,
        diffusion: DiffusionField,
        c_sigma: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be at least 1"));
        }
        if !(delay.is_finite() && delay > 0.0) {
            return Err(Error::config("delay r must be positive"));
        }
        if !(c_sigma >= 1.0) || !c_sigma.is_finite() {
            return Err(Error::config("C_sigma must be >= 1"));
        }
        if let Drift::SgnDelay = drift {
            if dim != 1 || delay < 1.0 {
                return Err(Error::config("sgn-delay drift needs d = 1 and r >= 1"));
            }
        }
        match &diffusion {
            DiffusionField::Diagonal(v) if v.len() != dim => {
                return Err(Error::config("diagonal diffusion has wrong length"))
            }
            DiffusionField::Constant(m) if m.len() != dim * dim => {
                return Err(Error::config("constant diffusion matrix has wrong size"))
            }
            _ => {}
        }
        let continuous = drift.is_continuous().unwrap_or(false);
        Ok(Self {
            name: name.into(),
            dim,
            delay,
            drift,
            diffusion,
            strict_past_lag: None,
            c_sigma,
            envelopes: Envelopes {
                continuous_on_initial_window: continuous,
                ..Envelopes::default()
            },
        })
    }

    /// `dX(t) = sgn(X(t - 1)) dt + dW(t)`, `r = 1`.
    pub fn sgn_delay() -> Self {
        Self::new("sgn_delay", 1, 1.0, Drift::SgnDelay, DiffusionField::identity(), 1.0)
            .expect("valid built-in")
    }

    /// `B = \int k(t, x(s)) mu(ds)` with `sigma = sigma_scale * I`.
    pub fn kernel(dim: usize, delay: f64, kernel: Kernel, measure: DelayMeasure, sigma_scale: f64) -> Result<Self> {
        let c_sigma = c_sigma_for_scale(sigma_scale);
        let mut m = Self::new(
            "kernel",
            dim,
            delay,
            Drift::Kernel(KernelDrift::new(kernel, measure)),
            DiffusionField::Scalar(sigma_scale),
            c_sigma,
        )?;
        if let Some(lag) = m.drift.latest_lag_read() {
            if lag < 0.0 {
                m.strict_past_lag = Some(-lag);
            }
        }
        Ok(m)
    }

    /// `B = b(X(t))` coordinatewise.
    pub fn pointwise(dim: usize, delay: f64, b: PointwiseDrift, sigma_scale: f64) -> Result<Self> {
        Self::new(
            "pointwise",
            dim,
            delay,
            Drift::Pointwise(b),
            DiffusionField::Scalar(sigma_scale),
            c_sigma_for_scale(sigma_scale),
        )
    }

    /// `B = slope * X(t) + offset`.
    pub fn affine(dim: usize, delay: f64, slope: f64, offset: f64, sigma_scale: f64) -> Result<Self> {
        Self::new(
            "linear",
            dim,
            delay,
            Drift::Affine { slope, offset },
            DiffusionField::Scalar(sigma_scale),
            c_sigma_for_scale(sigma_scale),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn c_sigma(&self) -> f64 {
        self.c_sigma
    }

    pub fn strict_past_lag(&self) -> Option<f64> {
        self.strict_past_lag
    }

    /// Declare `r_B~`; the strict-past part must not read lags above `-r_B~`.
    pub fn with_strict_past_lag(mut self, lag: f64) -> Result<Self> {
        if !(lag > 0.0 && lag < self.delay) {
            return Err(Error::config("strict-past lag must lie in (0, r)"));
        }
        let part = self
            .drift
            .strict_past_part()
            .ok_or_else(|| Error::config("drift has no strict-past part"))?;
        if let Some(latest) = part.latest_lag_read() {
            if latest > -lag + 1e-12 {
                return Err(Error::config(format!(
                    "strict-past part reads lag {latest}, later than -r_B~ = {}",
                    -lag
                )));
            }
        }
        self.strict_past_lag = Some(lag);
        Ok(self)
    }

    pub fn with_c_sigma(mut self, c_sigma: f64) -> Result<Self> {
        if !(c_sigma >= 1.0) || !c_sigma.is_finite() {
            return Err(Error::config("C_sigma must be >= 1"));
        }
        self.c_sigma = c_sigma;
        Ok(self)
    }

    /// Declare `F`, `C1`, `C2` of the square-integrability condition.
    pub fn with_square_envelope(
        mut self,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        c1: f64,
        c2: f64,
    ) -> Self {
        self.envelopes.f = Some(Arc::new(f));
        self.envelopes.c1 = Some(c1);
        self.envelopes.c2 = Some(c2);
        self
    }

    /// Declare `F~`, `H`, `G` of the superlinear condition.
    pub fn with_superlinear_envelope(
        mut self,
        f_tilde: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.envelopes.f_tilde = Some(Arc::new(f_tilde));
        self.envelopes.h = Some(Arc::new(h));
        self.envelopes.g = Some(Arc::new(g));
        self
    }

    /// Same equation without drift: `dM = sigma(t, M) dW`.
    pub fn driftless(&self) -> Self {
        Self {
            drift: Drift::Zero,
            ..self.clone()
        }
    }

    /// Check that the model can be integrated on `grid`.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.r() - self.delay).abs() > 1e-9 * self.delay {
            return Err(Error::domain(format!(
                "grid delay {} differs from model delay {}",
                grid.r(),
                self.delay
            )));
        }
        // probe the functional once on a zero segment to surface off-grid atoms
        let zeros = vec![0.0; self.dim * (grid.n_pre() + 1)];
        let seg = Segment::new(grid.h(), self.dim, &zeros);
        self.drift.evaluate(0.0, &seg).map(|_| ())
    }
}

/// Smallest `C_sigma >= 1` with `C^-1 <= s^2 <= C`.
pub fn c_sigma_for_scale(s: f64) -> f64 {
    let s2 = s * s;
    if s2 == 0.0 {
        f64::INFINITY
    } else {
        s2.max(1.0 / s2).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub message: String,
}

/// Outcome of a sampled condition check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub check: String,
    pub passed: bool,
    pub points: usize,
    /// Smallest value of the checked statistic over the probe set.
    pub min: f64,
    /// Largest value of the checked statistic over the probe set.
    pub max: f64,
    pub failures: Vec<PointFailure>,
}

impl ValidationReport {
    fn new(check: &str, points: usize) -> Self {
        Self {
            check: check.into(),
            passed: true,
            points,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn fail(&mut self, index: usize, message: String) {
        self.passed = false;
        self.failures.push(PointFailure { index, message });
    }
}

/// Eigenvalue range of `sigma sigma^T` over `points`, checked against `[1/C, C]`.
pub fn check_ellipticity(field: &DiffusionField, points: &[(f64, Vec<f64>)], c_sigma: f64) -> Result<ValidationReport> {
    if points.is_empty() {
        return Err(Error::domain("ellipticity check needs at least one point"));
    }
    let mut rep = ValidationReport::new("ellipticity", points.len());
    for (i, (t, x)) in points.iter().enumerate() {
        let d = x.len();
        let m = field.matrix(*t, x);
        if m.iter().any(|v| !v.is_finite()) {
            rep.fail(i, "non-finite diffusion matrix".into());
            continue;
        }
        let s = DMatrix::from_row_slice(d, d, &m);
        let a = &s * s.transpose();
        let eig = SymmetricEigen::new(a).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rep.record(lo);
        rep.record(hi);
        if lo < 1.0 / c_sigma - VALIDATION_TOL || hi > c_sigma + VALIDATION_TOL {
            rep.fail(i, format!("eigenvalues [{lo}, {hi}] outside [{}, {c_sigma}]", 1.0 / c_sigma));
        }
    }
    Ok(rep)
}

/// Largest Hilbert-Schmidt difference quotient `|sigma(x) - sigma(y)| / |x - y|`.
pub fn check_lipschitz(
    field: &DiffusionField,
    pairs: &[(f64, Vec<f64>, Vec<f64>)],
    c_sigma: f64,
) -> Result<ValidationReport> {
    if pairs.is_empty() {
        return Err(Error::domain("lipschitz check needs at least one pair"));
    }
    let mut rep = ValidationReport::new("lipschitz", pairs.len());
    for (i, (t, x, y)) in pairs.iter().enumerate() {
        let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            return Err(Error::domain(format!("pair {i} has x = y")));
        }
        let mx = field.matrix(*t, x);
        let my = field.matrix(*t, y);
        if mx.iter().chain(&my).any(|v| !v.is_finite()) {
            rep.fail(i, "non-finite diffusion matrix".into());
            continue;
        }
        let hs = mx.iter().zip(&my).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let q = hs / dist;
        rep.record(q);
        if q > c_sigma + VALIDATION_TOL {
            rep.fail(i, format!("difference quotient {q} exceeds {c_sigma}"));
        }
    }
    Ok(rep)
}

/// Trapezoid running integral of `g(k)` over main steps `0..=k`.
fn running_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut acc = vec![0.0; values.len()];
    for k in 1..values.len() {
        acc[k] = acc[k - 1] + 0.5 * h * (values[k - 1] + values[k]);
    }
    acc
}

/// Drift values `B(t_k, X_{t_k})` along a path, `k = 0..=n_main`.
fn drift_along(model: &ModelSpec, path: &SamplePath) -> Result<Vec<Vec<f64>>> {
    let grid = path.grid();
    (0..=grid.n_main())
        .map(|k| model.drift.evaluate(grid.main_time(k), &path.segment_view(k)))
        .collect()
}

/// Running `sup_{[-r, t_k]} |x|^2`.
fn running_sup_sq(path: &SamplePath) -> Vec<f64> {
    let grid = path.grid();
    let mut sup = (0..=grid.n_pre())
        .map(|i| crate::paths::euclidean_norm(path.state(i)).powi(2))
        .fold(0.0, f64::max);
    (0..=grid.n_main())
        .map(|k| {
            sup = sup.max(crate::paths::euclidean_norm(path.main_state(k)).powi(2));
            sup
        })
        .collect()
}

/// Sampled check of `int_0^t |B|^2 <= int_0^t |F| + C1 sup |x|^2 + C2` along each probe path.
pub fn check_condition_driftc1(model: &ModelSpec, probes: &[SamplePath]) -> Result<ValidationReport> {
    let env = &model.envelopes;
    let (f, c1, c2) = match (&env.f, env.c1, env.c2) {
        (Some(f), Some(c1), Some(c2)) => (f, c1, c2),
        _ => return Err(Error::config("model does not declare F, C1 and C2")),
    };
    let mut rep = ValidationReport::new("square_integrability", probes.len());
    for (i, path) in probes.iter().enumerate() {
        let grid = path.grid();
        let h = grid.h();
        let b2: Vec<f64> = drift_along(model, path)?
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum())
            .collect();
        let fv: Vec<f64> = (0..=grid.n_main())
            .map(|k| f(grid.main_time(k), path.main_state(k)).abs())
            .collect();
        let lhs = running_trapezoid(&b2, h);
        let fint = running_trapezoid(&fv, h);
        let sup = running_sup_sq(path);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=grid.n_main() {
            let rhs = fint[k] + c1 * sup[k] + c2;
            let margin = lhs[k] - rhs;
            worst = worst.max(margin);
            if margin > VALIDATION_TOL * rhs.abs().max(1.0) {
                rep.fail(i, format!("violated at t = {}: {} > {}", grid.main_time(k), lhs[k], rhs));
                break;
            }
        }
        rep.record(worst);
    }
    Ok(rep)
}

/// Sampled check of `int_0^t H(|B|^2) <= int_0^t |F~| + G(sup |x|)` along each probe path.
pub fn check_condition_driftc2(model: &ModelSpec, probes: &[SamplePath]) -> Result<ValidationReport> {
    let env = &model.envelopes;
    let (ft, hfun, gfun) = match (&env.f_tilde, &env.h, &env.g) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::config("model does not declare F~, H and G")),
    };
    let mut rep = ValidationReport::new("superlinear_integrability", probes.len());
    for (i, path) in probes.iter().enumerate() {
        let grid = path.grid();
        let h = grid.h();
        let hb: Vec<f64> = drift_along(model, path)?
            .iter()
            .map(|b| hfun(b.iter().map(|v| v * v).sum()))
            .collect();
        let fv: Vec<f64> = (0..=grid.n_main())
            .map(|k| ft(grid.main_time(k), path.main_state(k)).abs())
            .collect();
        let lhs = running_trapezoid(&hb, h);
        let fint = running_trapezoid(&fv, h);
        let sup = running_sup_sq(path);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=grid.n_main() {
            let rhs = fint[k] + gfun(sup[k].sqrt());
            let margin = lhs[k] - rhs;
            worst = worst.max(margin);
            if margin > VALIDATION_TOL * rhs.abs().max(1.0) {
                rep.fail(i, format!("violated at t = {}: {} > {}", grid.main_time(k), lhs[k], rhs));
                break;
            }
        }
        rep.record(worst);
    }
    Ok(rep)
}
