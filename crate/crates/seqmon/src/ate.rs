//! Sequential test for a positive covariate-averaged treatment effect.
//!
//! The statistic is the plug-in average contrast
//! `S = phibar'(beta_1 - beta_0)` with `phibar` the running mean of the
//! feature vectors over *all* observations. Its bootstrap keeps, per draw,
//! the pair of arm coefficient paths (shared with the supremum monitor's
//! ensemble) plus one scalar path capturing the variability of `phibar`
//! itself:
//!
//! ```text
//! s_b <- (1 - m/N) s_b + N^-1 sqrt(stage_phi_hat) e2
//! ```
//!
//! where `stage_phi_hat = sum_{i in stage} ((phi_i - phibar)'(beta_1 -
//! beta_0))^2` at the stage-refreshed quantities, and `e2` is a single
//! standard Gaussian per (stage, draw). The bootstrap statistic is
//! `S_b = phibar'(path_1 - path_0) + s_b`, and the decision compares the raw
//! (unnormalized) `S` against the boundary solved from the raw `S_b`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::bootstrap::BootstrapEnsemble;
use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::qte::{MonitorConfig, MonitorDecision, Verdict};
use crate::rng::{keyed_rng, StreamDomain};
use crate::stream::{Arm, ArmState, Observation};

/// Streaming state of the averaged-effect test: the two-arm regression plus
/// the feature-mean and effect-dispersion accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AteState {
    arms: ArmState,
    sum_phi: DVector<f64>,
    /// Open-stage sum of squared centered contrasts.
    stage_phi_hat: f64,
    /// Closed-stage sum.
    cum_phi_hat: f64,
}

impl AteState {
    pub fn new(q: usize) -> Result<Self> {
        Ok(AteState {
            arms: ArmState::new(q)?,
            sum_phi: DVector::zeros(q),
            stage_phi_hat: 0.0,
            cum_phi_hat: 0.0,
        })
    }

    pub fn arms(&self) -> &ArmState {
        &self.arms
    }

    pub fn n(&self) -> u64 {
        self.arms.n()
    }

    /// Running mean of the feature vectors over all observations.
    pub fn phi_bar(&self) -> DVector<f64> {
        if self.arms.n() == 0 {
            DVector::zeros(self.sum_phi.len())
        } else {
            &self.sum_phi / self.arms.n() as f64
        }
    }

    pub fn stage_phi_hat(&self) -> f64 {
        self.stage_phi_hat
    }

    pub fn cum_phi_hat(&self) -> f64 {
        self.cum_phi_hat
    }

    pub fn ingest(&mut self, spec: &BasisSpec, obs: &Observation) -> Result<()> {
        let phi = spec.eval(&obs.x)?;
        self.arms.ingest_features(&phi, obs.arm, obs.y)?;
        self.sum_phi += &phi;
        Ok(())
    }

    pub fn refresh_coefficients(&mut self) {
        self.arms.refresh_coefficients();
    }

    /// Stage pass after the refresh: the regression's sandwich blocks plus
    /// the scalar dispersion of the centered contrast.
    pub fn stage_accumulate(&mut self, spec: &BasisSpec, batch: &[Observation]) -> Result<()> {
        self.arms.stage_accumulate(spec, batch)?;
        let phi_bar = self.phi_bar();
        let contrast = self.arms.beta_contrast();
        for obs in batch {
            let phi = spec.eval(&obs.x)?;
            let centered = (phi - &phi_bar).dot(&contrast);
            self.stage_phi_hat += centered * centered;
        }
        Ok(())
    }

    pub fn stage_close(&mut self) {
        self.arms.stage_close();
        self.cum_phi_hat += self.stage_phi_hat;
        self.stage_phi_hat = 0.0;
    }

    /// The averaged contrast `phibar'(beta_1 - beta_0)` at the refreshed
    /// coefficients.
    pub fn statistic(&self) -> f64 {
        self.phi_bar().dot(&self.arms.beta_contrast())
    }

    /// Conditional variance of the bootstrap statistic given the data:
    /// `N^-2 (sum_a phibar' CumPhi_a phibar + cum_phi_hat)`.
    pub fn bootstrap_conditional_variance(&self) -> f64 {
        let n = self.arms.n();
        if n == 0 {
            return 0.0;
        }
        let phi_bar = self.phi_bar();
        let arm_part = quad_form(self.arms.cum_sandwich(Arm::Control), &phi_bar)
            + quad_form(self.arms.cum_sandwich(Arm::Treatment), &phi_bar);
        (arm_part + self.cum_phi_hat) / (n as f64 * n as f64)
    }
}

/// Bootstrap paths of the averaged-effect test: the per-arm ensemble plus
/// one scalar path per draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtePaths {
    ens: BootstrapEnsemble,
    scalar: Vec<f64>,
}

impl AtePaths {
    pub fn new(draws: usize, q: usize, seed: u64) -> Result<Self> {
        Ok(AtePaths {
            ens: BootstrapEnsemble::new(draws, q, seed)?,
            scalar: vec![0.0; draws],
        })
    }

    pub fn ensemble(&self) -> &BootstrapEnsemble {
        &self.ens
    }

    pub fn scalar(&self, b: usize) -> f64 {
        self.scalar[b]
    }

    /// One stage update of all paths: arm paths through the shared ensemble
    /// recursion, scalar paths with a single Gaussian scaled by the stage's
    /// effect dispersion.
    pub fn stage_update(&mut self, state: &AteState, n_k: u64, m: u64) -> Result<()> {
        self.ens.stage_update(state.arms(), n_k, m)?;
        let stage = self.ens.stage();
        let keep = 1.0 - m as f64 / n_k as f64;
        let scale = state.stage_phi_hat().sqrt() / n_k as f64;
        for (b, s) in self.scalar.iter_mut().enumerate() {
            let mut rng = keyed_rng(self.ens.seed(), StreamDomain::BootstrapScalar, stage, b as u64);
            let e2: f64 = rng.sample(StandardNormal);
            *s = keep * *s + scale * e2;
        }
        Ok(())
    }

    /// Bootstrap statistics `phibar'(path_1 - path_0) + s_b` over survivors,
    /// in survivor order; raw scale.
    pub fn statistics(&self, phi_bar: &DVector<f64>) -> Vec<f64> {
        self.ens
            .survivors()
            .iter()
            .map(|&b| {
                let b = b as usize;
                phi_bar.dot(self.ens.path(Arm::Treatment, b))
                    - phi_bar.dot(self.ens.path(Arm::Control, b))
                    + self.scalar[b]
            })
            .collect()
    }

    pub fn solve_boundary(&mut self, stats: &[f64], spend_target: f64) -> Result<f64> {
        self.ens.solve_boundary(stats, spend_target)
    }
}

/// The one-sided sequential averaged-effect monitor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AteMonitor {
    basis: BasisSpec,
    cfg: MonitorConfig,
    state: AteState,
    paths: AtePaths,
    stage: u64,
    terminated: bool,
    history: Vec<MonitorDecision>,
}

impl AteMonitor {
    pub fn new(basis: BasisSpec, cfg: MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        let q = basis.output_dim();
        Ok(AteMonitor {
            state: AteState::new(q)?,
            paths: AtePaths::new(cfg.bootstrap_draws, q, cfg.seed)?,
            basis,
            cfg,
            stage: 0,
            terminated: false,
            history: Vec::new(),
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AteState {
        &self.state
    }

    pub fn paths(&self) -> &AtePaths {
        &self.paths
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn history(&self) -> &[MonitorDecision] {
        &self.history
    }

    /// One interim stage; same lifecycle as the supremum monitor but with
    /// the raw averaged contrast compared against the raw bootstrap
    /// boundary (no `sqrt(N)` scaling on either side).
    pub fn interim(&mut self, batch: &[Observation]) -> Result<MonitorDecision> {
        if self.terminated {
            return Err(Error::MonitorTerminated);
        }
        for obs in batch {
            self.state.ingest(&self.basis, obs)?;
        }
        self.stage += 1;
        let n_k = self.state.n();
        let decision = if n_k == 0 {
            MonitorDecision {
                stage: self.stage,
                statistic: 0.0,
                boundary: f64::INFINITY,
                spend_target: None,
                survivors: Some(self.paths.ensemble().survivor_count()),
                verdict: Verdict::Continue,
                samples_used: 0,
                argmax_x: None,
                degenerate: true,
            }
        } else {
            self.state.refresh_coefficients();
            self.state.stage_accumulate(&self.basis, batch)?;
            self.paths.stage_update(&self.state, n_k, batch.len() as u64)?;
            self.state.stage_close();
            let t = self.cfg.information_fraction(n_k);
            let spend_target = self.cfg.spending.spend(t)?;
            let statistic = self.state.statistic();
            let stats = self.paths.statistics(&self.state.phi_bar());
            let boundary = self.paths.solve_boundary(&stats, spend_target)?;
            let verdict = if statistic > boundary {
                Verdict::Reject
            } else {
                Verdict::Continue
            };
            MonitorDecision {
                stage: self.stage,
                statistic,
                boundary,
                spend_target: Some(spend_target),
                survivors: Some(self.paths.ensemble().survivor_count()),
                verdict,
                samples_used: n_k,
                argmax_x: None,
                degenerate: false,
            }
        };
        if decision.verdict == Verdict::Reject {
            self.terminated = true;
        }
        self.history.push(decision.clone());
        Ok(decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    use crate::spending::{SpendingFunction, SpendingKind};

    fn mon_cfg(seed: u64, horizon: u64, draws: usize) -> MonitorConfig {
        MonitorConfig {
            spending: SpendingFunction::new(SpendingKind::PocockLike, 0.05, 1.0).unwrap(),
            bootstrap_draws: draws,
            horizon_n: horizon,
            seed,
        }
    }

    fn batch(n: usize, seed: u64, effect: f64) -> Vec<Observation> {
        let mut rng = keyed_rng(seed, StreamDomain::Covariates, 0, 0);
        (0..n)
            .map(|_| {
                let x = vec![rng.random_range(-2.0..2.0)];
                let arm = if rng.random_bool(0.5) {
                    Arm::Treatment
                } else {
                    Arm::Control
                };
                let mut y: f64 = rng.random_range(-1.0..1.0) + 0.3 * x[0];
                if arm == Arm::Treatment {
                    y += effect;
                }
                Observation { x, arm, y }
            })
            .collect()
    }

    #[test]
    fn phi_bar_averages_all_observations() {
        let basis = BasisSpec::linear(1);
        let mut st = AteState::new(2).unwrap();
        for (x, arm) in [(1.0, Arm::Control), (3.0, Arm::Treatment)] {
            st.ingest(&basis, &Observation { x: vec![x], arm, y: 0.0 })
                .unwrap();
        }
        let pb = st.phi_bar();
        assert_eq!(pb.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn statistic_is_the_averaged_contrast() {
        let basis = BasisSpec::linear(1);
        let mut st = AteState::new(2).unwrap();
        let data = batch(500, 2, 1.0);
        for o in &data {
            st.ingest(&basis, o).unwrap();
        }
        st.refresh_coefficients();
        let oracle = st.phi_bar().dot(&st.arms().beta_contrast());
        assert_eq!(st.statistic().to_bits(), oracle.to_bits());
        // With a unit uniform shift the estimate should be near 1.
        assert!((st.statistic() - 1.0).abs() < 0.2, "{}", st.statistic());
    }

    #[test]
    fn bootstrap_variance_identity_holds() {
        // Conditional on the data, Var(S_b) telescopes to
        // N^-2 (sum_a phibar' CumPhi_a phibar + sum_j phi_hat_j).
        // Estimate the left side over many draws and compare.
        let basis = BasisSpec::linear(1);
        let q = 2;
        let draws = 20_000;
        let mut st = AteState::new(q).unwrap();
        let mut paths = AtePaths::new(draws, q, 77).unwrap();
        for (size, seed) in [(400usize, 5u64), (200, 6), (200, 7)] {
            let b = batch(size, 50 + seed, 0.5);
            for o in &b {
                st.ingest(&basis, o).unwrap();
            }
            st.refresh_coefficients();
            st.stage_accumulate(&basis, &b).unwrap();
            paths.stage_update(&st, st.n(), b.len() as u64).unwrap();
            st.stage_close();
        }
        let phi_bar = st.phi_bar();
        let stats = paths.statistics(&phi_bar);
        let mean = stats.iter().sum::<f64>() / draws as f64;
        let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (draws - 1) as f64;
        let expect = st.bootstrap_conditional_variance();
        // Var of a sample variance over B Gaussian draws is ~ 2 V^2 / B:
        // allow 4 standard errors.
        let se = expect * (2.0 / draws as f64).sqrt();
        assert!(
            (var - expect).abs() < 4.0 * se,
            "bootstrap variance {var:e} vs identity {expect:e} (se {se:e})"
        );
        assert!(mean.abs() < 4.0 * (expect / draws as f64).sqrt());
    }

    #[test]
    fn monitor_rejects_positive_average_effects() {
        let basis = BasisSpec::linear(1);
        let mut mon = AteMonitor::new(basis, mon_cfg(9, 1000, 500)).unwrap();
        let mut rejected = false;
        for k in 0..5 {
            let d = mon.interim(&batch(200, 900 + k, 1.0)).unwrap();
            assert!(d.argmax_x.is_none());
            if d.verdict == Verdict::Reject {
                assert!(d.statistic > d.boundary);
                rejected = true;
                break;
            }
        }
        assert!(rejected, "unit average effect should reject within 5 looks");
        assert!(mon.is_terminated());
    }

    #[test]
    fn monitor_holds_under_the_null() {
        let mut rejections = 0;
        for trial in 0..40 {
            let basis = BasisSpec::linear(1);
            let mut mon = AteMonitor::new(basis, mon_cfg(100 + trial, 600, 400)).unwrap();
            for k in 0..3 {
                if mon
                    .interim(&batch(200, 5000 + trial * 10 + k, 0.0))
                    .unwrap()
                    .verdict
                    == Verdict::Reject
                {
                    rejections += 1;
                    break;
                }
            }
        }
        assert!(rejections <= 7, "{rejections}/40 null rejections");
    }

    #[test]
    fn scalar_paths_telescope_like_the_arm_paths() {
        // The scalar path after two stages must equal the closed form
        // N_2^-1 (sqrt(ph_1) e2_1 + sqrt(ph_2) e2_2) with the keyed draws.
        let basis = BasisSpec::linear(1);
        let mut st = AteState::new(2).unwrap();
        let mut paths = AtePaths::new(4, 2, 13).unwrap();
        let b1 = batch(100, 31, 0.8);
        for o in &b1 {
            st.ingest(&basis, o).unwrap();
        }
        st.refresh_coefficients();
        st.stage_accumulate(&basis, &b1).unwrap();
        let ph1 = st.stage_phi_hat();
        paths.stage_update(&st, 100, 100).unwrap();
        st.stage_close();
        let b2 = batch(60, 32, 0.8);
        for o in &b2 {
            st.ingest(&basis, o).unwrap();
        }
        st.refresh_coefficients();
        st.stage_accumulate(&basis, &b2).unwrap();
        let ph2 = st.stage_phi_hat();
        paths.stage_update(&st, 160, 60).unwrap();
        st.stage_close();
        assert!(ph1 > 0.0 && ph2 > 0.0, "dispersion should be nonzero");
        for b in 0..4u64 {
            let e1: f64 = {
                let mut r = keyed_rng(13, StreamDomain::BootstrapScalar, 1, b);
                r.sample(StandardNormal)
            };
            let e2: f64 = {
                let mut r = keyed_rng(13, StreamDomain::BootstrapScalar, 2, b);
                r.sample(StandardNormal)
            };
            let expect = (ph1.sqrt() * e1 + ph2.sqrt() * e2) / 160.0;
            assert_relative_eq!(
                paths.scalar(b as usize),
                expect,
                epsilon = 1e-15,
                max_relative = 1e-12
            );
        }
    }
}
