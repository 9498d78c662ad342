//! Alpha-spending schedules allocating the type-I budget across looks.
//!
//! A spending function maps the information fraction `t in [0, T]` to the
//! cumulative type-I probability `alpha(t)` allowed to be spent by time `t`,
//! with `alpha(0) = 0` and `alpha(T) = alpha`. Four standard shapes are
//! provided; all are nondecreasing in `t`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Spending-curve shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpendingKind {
    /// `alpha * ln(1 + (e-1) t/T)`: near-linear spend, Pocock-flavored.
    PocockLike,
    /// `2 - 2 Phi(z_{1-alpha/2} sqrt(T/t))`: conservative early spend,
    /// O'Brien-Fleming-flavored.
    OBrienFlemingLike,
    /// `alpha * (t/T)^theta`, `theta > 0`.
    Power { theta: f64 },
    /// `alpha * (1 - exp(-gamma t/T)) / (1 - exp(-gamma))`, `gamma != 0`.
    Exponential { gamma: f64 },
}

/// A validated spending schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpendingFunction {
    kind: SpendingKind,
    alpha: f64,
    t_max: f64,
}

impl SpendingFunction {
    /// Requires `alpha` in (0, 1), `t_max > 0`, and a valid shape parameter
    /// (`theta > 0`, `gamma != 0`).
    pub fn new(kind: SpendingKind, alpha: f64, t_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be in (0, 1), got {alpha}"
            )));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "spending horizon must be positive and finite, got {t_max}"
            )));
        }
        match kind {
            SpendingKind::Power { theta } if !(theta > 0.0) => {
                return Err(Error::InvalidParam(format!(
                    "power spending exponent must be positive, got {theta}"
                )));
            }
            SpendingKind::Exponential { gamma } if gamma == 0.0 || !gamma.is_finite() => {
                return Err(Error::InvalidParam(
                    "exponential spending rate must be finite and nonzero".into(),
                ));
            }
            _ => {}
        }
        Ok(SpendingFunction { kind, alpha, t_max })
    }

    pub fn kind(&self) -> SpendingKind {
        self.kind
    }

    /// Total budget `alpha(t_max)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Cumulative spend `alpha(t)`. Errors when `t` is outside `[0, t_max]`.
    pub fn spend(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::InvalidParam(format!(
                "information fraction {t} outside [0, {}]",
                self.t_max
            )));
        }
        let frac = t / self.t_max;
        Ok(match self.kind {
            SpendingKind::PocockLike => {
                self.alpha * (1.0 + (std::f64::consts::E - 1.0) * frac).ln()
            }
            SpendingKind::OBrienFlemingLike => {
                if t == 0.0 {
                    0.0
                } else {
                    let std_normal = Normal::new(0.0, 1.0).unwrap();
                    let z = normal_quantile(&std_normal, 1.0 - self.alpha / 2.0);
                    2.0 - 2.0 * std_normal.cdf(z / frac.sqrt())
                }
            }
            SpendingKind::Power { theta } => self.alpha * frac.powf(theta),
            SpendingKind::Exponential { gamma } => {
                self.alpha * (1.0 - (-gamma * frac).exp()) / (1.0 - (-gamma).exp())
            }
        })
    }
}

/// Standard-normal quantile, Newton-polished to machine precision so that
/// `alpha(t_max)` lands on the budget exactly up to rounding.
fn normal_quantile(std_normal: &Normal, p: f64) -> f64 {
    let mut z = std_normal.inverse_cdf(p);
    for _ in 0..2 {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= f64::MIN_POSITIVE {
            break;
        }
        z -= (std_normal.cdf(z) - p) / pdf;
    }
    z
}
