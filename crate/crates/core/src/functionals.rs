//! Bounded test functionals `f: C([-r, 0], R^d) -> R`.

use serde::{Deserialize, Serialize};

use crate::paths::Segment;

/// Built-in functional battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    /// `f = 1`.
    One,
    /// `tanh(xi(0)_coord)`.
    TanhEndpoint {
        #[serde(default)]
        coord: usize,
    },
    /// `xi(0)_coord`; unbounded, for moment checks.
    Endpoint {
        #[serde(default)]
        coord: usize,
    },
    /// Logistic smoothing of `1{xi(0)_coord > threshold}` at width `scale`.
    SmoothedHalfLine {
        #[serde(default)]
        coord: usize,
        threshold: f64,
        #[serde(default = "default_smoothing")]
        scale: f64,
    },
    /// `tanh(||xi||_inf)`.
    TanhSupNorm,
}

fn default_smoothing() -> f64 {
    0.1
}

impl Functional {
    pub fn eval(&self, seg: &Segment<'_>) -> f64 {
        match *self {
            Self::One => 1.0,
            Self::TanhEndpoint { coord } => seg.current()[coord].tanh(),
            Self::Endpoint { coord } => seg.current()[coord],
            Self::SmoothedHalfLine { coord, threshold, scale } => {
                let z = (seg.current()[coord] - threshold) / scale;
                1.0 / (1.0 + (-z).exp())
            }
            Self::TanhSupNorm => seg.sup_norm().tanh(),
        }
    }

    /// Declared bound `sup |f|`.
    pub fn bound(&self) -> f64 {
        match self {
            Self::Endpoint { .. } => f64::INFINITY,
            _ => 1.0,
        }
    }

    pub fn coord(&self) -> Option<usize> {
        match *self {
            Self::TanhEndpoint { coord } | Self::Endpoint { coord } | Self::SmoothedHalfLine { coord, .. } => {
                Some(coord)
            }
            _ => None,
        }
    }
}
