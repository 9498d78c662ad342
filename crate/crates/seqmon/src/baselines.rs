//! Competing sequential tests used for benchmarking: a
//! law-of-the-iterated-logarithm boundary on the sup contrast, and a
//! mixture sequential probability ratio test on the difference of mean
//! outcomes ("always-valid test", AVT).
//!
//! Both expose the same `interim` contract as the main monitors so runs can
//! swap methods without touching the driver.

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::grid::SupGrid;
use crate::qte::{MonitorDecision, Verdict};
use crate::stream::{Arm, ArmState, Observation};

/// √(2 ln ln N) / √N, the anytime-valid rate factor.
///
/// Defined for N ≥ 3 (ln ln N must be positive).
pub fn lil_rate(n: u64) -> Result<f64> {
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "iterated-logarithm rate needs at least 3 observations, got {n}"
        )));
    }
    let nf = n as f64;
    Ok((2.0 * nf.ln().ln()).sqrt() / nf.sqrt())
}

/// Sequential test that rejects when the unnormalized sup contrast exceeds
/// an iterated-logarithm envelope.
///
/// The envelope is `sup_x ‖φ(x)‖ · √(2 ln ln N)/√N · √(D/N)` where `D`
/// accumulates `r² ‖Σ̂_a⁻¹ φ(x)‖²` over observations, each stage scored with
/// that stage's refreshed coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LilMonitor {
    basis: BasisSpec,
    grid: SupGrid,
    arms: ArmState,
    cum_norm: f64,
    stage: u64,
    terminated: bool,
    history: Vec<MonitorDecision>,
}

impl LilMonitor {
    pub fn new(basis: BasisSpec, grid: SupGrid) -> Result<Self> {
        let arms = ArmState::new(basis.output_dim())?;
        Ok(LilMonitor {
            basis,
            grid,
            arms,
            cum_norm: 0.0,
            stage: 0,
            terminated: false,
            history: Vec::new(),
        })
    }

    pub fn arm_state(&self) -> &ArmState {
        &self.arms
    }

    pub fn history(&self) -> &[MonitorDecision] {
        &self.history
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Largest feature norm over the current grid.
    fn sup_phi_norm(&self) -> Result<f64> {
        let mut sup = 0.0_f64;
        for x in self.grid.points() {
            let phi = self.basis.eval(x)?;
            sup = sup.max(phi.norm());
        }
        Ok(sup)
    }

    /// Current envelope value. Errors with fewer than 3 observations.
    pub fn bound(&self) -> Result<f64> {
        let n = self.arms.n();
        let rate = lil_rate(n)?;
        let dispersion = (self.cum_norm / n as f64).sqrt();
        Ok(self.sup_phi_norm()? * rate * dispersion)
    }

    /// Ingests a stage batch and tests the sup contrast against the envelope.
    pub fn interim(&mut self, batch: &[Observation]) -> Result<MonitorDecision> {
        if self.terminated {
            return Err(Error::MonitorTerminated);
        }
        self.stage += 1;
        for obs in batch {
            self.grid.observe(&obs.x);
            self.arms.ingest(&self.basis, obs)?;
        }
        self.arms.refresh_coefficients();
        // Score the batch with the coefficients just refreshed.
        for obs in batch {
            let phi = self.basis.eval(&obs.x)?;
            let w = self.arms.pinv_apply(obs.arm, &phi)?;
            let r = obs.y - self.arms.beta(obs.arm).dot(&phi);
            self.cum_norm += r * r * w.norm_squared();
        }

        let contrast = self.arms.beta_contrast();
        let mut best: Option<(f64, &[f64])> = None;
        for x in self.grid.points() {
            let phi = self.basis.eval(x)?;
            let s = phi.dot(&contrast);
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, x));
            }
        }

        let decision = match (best, self.bound()) {
            (Some((statistic, x)), Ok(boundary)) => {
                let verdict = if statistic > boundary {
                    Verdict::Reject
                } else {
                    Verdict::Continue
                };
                MonitorDecision {
                    stage: self.stage,
                    statistic,
                    boundary,
                    spend_target: None,
                    survivors: None,
                    verdict,
                    samples_used: self.arms.n(),
                    argmax_x: Some(x.to_vec()),
                    degenerate: false,
                }
            }
            // Empty grid or too few observations: nothing to test yet.
            _ => MonitorDecision {
                stage: self.stage,
                statistic: 0.0,
                boundary: f64::INFINITY,
                spend_target: None,
                survivors: None,
                verdict: Verdict::Continue,
                samples_used: self.arms.n(),
                argmax_x: None,
                degenerate: true,
            },
        };
        if decision.verdict == Verdict::Reject {
            self.terminated = true;
        }
        self.history.push(decision.clone());
        Ok(decision)
    }
}

/// Sufficient statistics for the mixture sequential probability ratio test
/// on the difference of mean outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvtState {
    n: [u64; 2],
    sum_y: [f64; 2],
    sum_y2: [f64; 2],
    tau2: f64,
}

impl AvtState {
    /// `tau2` is the variance of the Gaussian mixing prior on the effect.
    pub fn new(tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0) || !tau2.is_finite() {
            return Err(Error::InvalidParam(format!(
                "mixture variance must be positive and finite, got {tau2}"
            )));
        }
        Ok(AvtState {
            n: [0; 2],
            sum_y: [0.0; 2],
            sum_y2: [0.0; 2],
            tau2,
        })
    }

    pub fn ingest(&mut self, arm: Arm, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "outcome" });
        }
        let a = arm.index();
        self.n[a] += 1;
        self.sum_y[a] += y;
        self.sum_y2[a] += y * y;
        Ok(())
    }

    pub fn count(&self, arm: Arm) -> u64 {
        self.n[arm.index()]
    }

    pub fn mean(&self, arm: Arm) -> f64 {
        let a = arm.index();
        if self.n[a] == 0 {
            0.0
        } else {
            self.sum_y[a] / self.n[a] as f64
        }
    }

    /// Mean difference, treatment minus control.
    pub fn mean_difference(&self) -> f64 {
        self.mean(Arm::Treatment) - self.mean(Arm::Control)
    }

    /// Pooled outcome variance with both arm means profiled out.
    pub fn pooled_variance(&self) -> Result<f64> {
        let (n0, n1) = (self.n[0], self.n[1]);
        if n0 < 2 || n1 < 2 {
            return Err(Error::InsufficientData(format!(
                "pooled variance needs 2 observations per arm, got {n0} and {n1}"
            )));
        }
        let mut ss = 0.0;
        for a in 0..2 {
            let na = self.n[a] as f64;
            ss += self.sum_y2[a] - self.sum_y[a] * self.sum_y[a] / na;
        }
        Ok((ss / (n0 + n1 - 2) as f64).max(0.0))
    }

    /// Mixture likelihood ratio
    /// `Λ = √(v/(v+τ²)) · exp(τ² Δ̂² / (2 v (v+τ²)))`
    /// with `v = σ̂² (1/n₀ + 1/n₁)` and `Δ̂` the mean difference.
    ///
    /// Zero variance with unequal means yields `+∞`.
    pub fn statistic(&self) -> Result<f64> {
        let sigma2 = self.pooled_variance()?;
        let v = sigma2 * (1.0 / self.n[0] as f64 + 1.0 / self.n[1] as f64);
        let delta = self.mean_difference();
        if v == 0.0 {
            return Ok(if delta == 0.0 { 0.0 } else { f64::INFINITY });
        }
        let tau2 = self.tau2;
        Ok((v / (v + tau2)).sqrt() * (tau2 * delta * delta / (2.0 * v * (v + tau2))).exp())
    }
}

/// Always-valid test monitor: rejects once `Λ ≥ 1/α`. The mixture ratio
/// depends on the squared mean difference, so rejection is sign-blind.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AvtMonitor {
    state: AvtState,
    alpha: f64,
    stage: u64,
    terminated: bool,
    history: Vec<MonitorDecision>,
}

impl AvtMonitor {
    pub fn new(tau2: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "significance level must be in (0, 1), got {alpha}"
            )));
        }
        Ok(AvtMonitor {
            state: AvtState::new(tau2)?,
            alpha,
            stage: 0,
            terminated: false,
            history: Vec::new(),
        })
    }

    pub fn state(&self) -> &AvtState {
        &self.state
    }

    pub fn history(&self) -> &[MonitorDecision] {
        &self.history
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn interim(&mut self, batch: &[Observation]) -> Result<MonitorDecision> {
        if self.terminated {
            return Err(Error::MonitorTerminated);
        }
        self.stage += 1;
        for obs in batch {
            self.state.ingest(obs.arm, obs.y)?;
        }
        let n = self.state.count(Arm::Control) + self.state.count(Arm::Treatment);
        let boundary = 1.0 / self.alpha;
        let decision = match self.state.statistic() {
            Ok(lambda) => {
                let verdict = if lambda >= boundary {
                    Verdict::Reject
                } else {
                    Verdict::Continue
                };
                MonitorDecision {
                    stage: self.stage,
                    statistic: lambda,
                    boundary,
                    spend_target: None,
                    survivors: None,
                    verdict,
                    samples_used: n,
                    argmax_x: None,
                    degenerate: false,
                }
            }
            Err(Error::InsufficientData(_)) => MonitorDecision {
                stage: self.stage,
                statistic: 0.0,
                boundary,
                spend_target: None,
                survivors: None,
                verdict: Verdict::Continue,
                samples_used: n,
                argmax_x: None,
                degenerate: true,
            },
            Err(e) => return Err(e),
        };
        if decision.verdict == Verdict::Reject {
            self.terminated = true;
        }
        self.history.push(decision.clone());
        Ok(decision)
    }
}
