//! Treatment assignment policies.
//!
//! A policy maps a covariate vector and a snapshot of the streaming
//! regression to a treatment propensity `Pr(A = 1 | x)`. The epsilon-greedy
//! policy explores uniformly during a burn-in and whenever the greedy sign
//! is undefined (an arm without observations), then assigns the arm favored
//! by the current coefficient contrast with probability `1 - epsilon`.
//!
//! Propensities take only the exact values `{epsilon, 1 - epsilon, 0.5}` for
//! the greedy family and `{p}` for the randomized family, so logged
//! propensities can be matched exactly downstream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::stream::{Arm, ArmState};

/// Default burn-in length of the epsilon-greedy policy.
pub const DEFAULT_BURN_IN: u64 = 50;

/// Assignment policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Assign treatment with fixed probability `p`.
    Random { p: f64 },
    /// Explore uniformly for the first `burn_in` observations, then assign
    /// the greedy arm with probability `1 - epsilon`.
    EpsilonGreedy { epsilon: f64, burn_in: u64 },
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::Random { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "assignment probability must be in (0, 1), got {p}"
                    )));
                }
            }
            Policy::EpsilonGreedy { epsilon, burn_in } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "exploration rate must be in (0, 1), got {epsilon}"
                    )));
                }
                if burn_in == 0 {
                    return Err(Error::InvalidParam(
                        "burn-in must be at least 1 observation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether the policy reads the regression snapshot at all.
    pub fn is_adaptive(&self) -> bool {
        matches!(self, Policy::EpsilonGreedy { .. })
    }

    /// Short design label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Random { .. } => "random",
            Policy::EpsilonGreedy { .. } => "epsilon-greedy",
        }
    }

    /// Treatment propensity at `x` given the snapshot.
    ///
    /// Epsilon-greedy: 0.5 during burn-in or when either arm has no
    /// observations; otherwise `1 - epsilon` when the fitted contrast at `x`
    /// is strictly positive and `epsilon` otherwise (ties favor control).
    /// Requires refreshed coefficients once past burn-in.
    pub fn propensity(&self, spec: &BasisSpec, x: &[f64], snapshot: &ArmState) -> Result<f64> {
        match *self {
            Policy::Random { p } => Ok(p),
            Policy::EpsilonGreedy { epsilon, burn_in } => {
                if snapshot.n() < burn_in {
                    return Ok(0.5);
                }
                if snapshot.arm_count(Arm::Control) == 0
                    || snapshot.arm_count(Arm::Treatment) == 0
                {
                    return Ok(0.5);
                }
                if !snapshot.coefficients_current() {
                    return Err(Error::StaleCoefficients);
                }
                let phi = spec.eval(x)?;
                let contrast = phi.dot(&snapshot.beta_contrast());
                Ok(if contrast > 0.0 { 1.0 - epsilon } else { epsilon })
            }
        }
    }

    /// Samples an arm; returns it with the propensity used.
    pub fn assign<R: Rng>(
        &self,
        spec: &BasisSpec,
        x: &[f64],
        snapshot: &ArmState,
        rng: &mut R,
    ) -> Result<(Arm, f64)> {
        let p = self.propensity(spec, x, snapshot)?;
        let arm = if rng.random_bool(p) {
            Arm::Treatment
        } else {
            Arm::Control
        };
        Ok((arm, p))
    }

    /// The deterministic greedy choice: the arm whose propensity exceeds
    /// one half, control on ties. Reported with the propensity.
    pub fn greedy_arm(&self, spec: &BasisSpec, x: &[f64], snapshot: &ArmState) -> Result<(Arm, f64)> {
        let p = self.propensity(spec, x, snapshot)?;
        let arm = if p > 0.5 { Arm::Treatment } else { Arm::Control };
        Ok((arm, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use crate::rng::{keyed_rng, StreamDomain};
    use crate::stream::Observation;

    fn greedy(epsilon: f64, burn_in: u64) -> Policy {
        Policy::EpsilonGreedy { epsilon, burn_in }
    }

    /// Snapshot with a known positive contrast on x (treatment better for
    /// x > 0, control for x < 0): y = a * x per arm with slopes -1 and +1.
    fn sign_snapshot(n_per_arm: usize) -> (BasisSpec, ArmState) {
        let spec = BasisSpec::linear(1);
        let mut st = ArmState::new(2).unwrap();
        let mut rng = keyed_rng(4, StreamDomain::Covariates, 0, 0);
        for _ in 0..n_per_arm {
            let x: f64 = rng.random_range(-2.0..2.0);
            st.ingest(&spec, &Observation { x: vec![x], arm: Arm::Control, y: -x })
                .unwrap();
            let x2: f64 = rng.random_range(-2.0..2.0);
            st.ingest(&spec, &Observation { x: vec![x2], arm: Arm::Treatment, y: x2 })
                .unwrap();
        }
        st.refresh_coefficients();
        (spec, st)
    }

    #[test]
    fn random_policy_returns_its_probability() {
        let spec = BasisSpec::linear(1);
        let st = ArmState::new(2).unwrap();
        let p = Policy::Random { p: 0.37 }
            .propensity(&spec, &[0.0], &st)
            .unwrap();
        assert_eq!(p, 0.37);
    }

    #[test]
    fn burn_in_and_empty_arms_give_half() {
        let spec = BasisSpec::linear(1);
        let pol = greedy(0.3, 50);
        let mut st = ArmState::new(2).unwrap();
        assert_eq!(pol.propensity(&spec, &[1.0], &st).unwrap(), 0.5);
        // Past burn-in but all observations on one arm: still 0.5.
        for i in 0..60 {
            st.ingest(
                &spec,
                &Observation { x: vec![i as f64 / 30.0], arm: Arm::Control, y: 1.0 },
            )
            .unwrap();
        }
        st.refresh_coefficients();
        assert_eq!(pol.propensity(&spec, &[1.0], &st).unwrap(), 0.5);
    }

    #[test]
    fn greedy_propensities_take_exact_values() {
        let (spec, st) = sign_snapshot(100);
        let pol = greedy(0.3, 50);
        // Contrast is ~2x: positive at x = 1, negative at x = -1.
        assert_eq!(pol.propensity(&spec, &[1.0], &st).unwrap(), 0.7);
        assert_eq!(pol.propensity(&spec, &[-1.0], &st).unwrap(), 0.3);
        for x in [-1.7, -0.4, 0.2, 1.9] {
            let p = pol.propensity(&spec, &[x], &st).unwrap();
            assert!(p == 0.3 || p == 0.7 || p == 0.5, "unexpected propensity {p}");
        }
    }

    #[test]
    fn stale_snapshot_is_rejected_past_burn_in() {
        let (spec, mut st) = sign_snapshot(100);
        st.ingest(&spec, &Observation { x: vec![0.1], arm: Arm::Control, y: 0.0 })
            .unwrap();
        let pol = greedy(0.3, 50);
        assert!(matches!(
            pol.propensity(&spec, &[1.0], &st),
            Err(Error::StaleCoefficients)
        ));
        st.refresh_coefficients_fast();
        assert!(pol.propensity(&spec, &[1.0], &st).is_ok());
    }

    #[test]
    fn parameters_are_validated() {
        assert!(Policy::Random { p: 0.0 }.validate().is_err());
        assert!(Policy::Random { p: 1.0 }.validate().is_err());
        assert!(Policy::Random { p: 0.5 }.validate().is_ok());
        assert!(greedy(0.0, 50).validate().is_err());
        assert!(greedy(1.0, 50).validate().is_err());
        assert!(greedy(0.3, 0).validate().is_err());
        assert!(greedy(0.3, 50).validate().is_ok());
    }

    #[test]
    fn assignment_frequencies_match_propensities() {
        let (spec, st) = sign_snapshot(100);
        let pol = greedy(0.3, 50);
        let mut rng = keyed_rng(8, StreamDomain::Assignment, 0, 0);
        let n = 100_000;
        let mut treated = 0u32;
        for _ in 0..n {
            let (arm, p) = pol.assign(&spec, &[1.0], &st, &mut rng).unwrap();
            assert_eq!(p, 0.7);
            if arm == Arm::Treatment {
                treated += 1;
            }
        }
        let rate = treated as f64 / n as f64;
        let se = (0.7 * 0.3 / n as f64).sqrt();
        assert!((rate - 0.7).abs() < 4.0 * se, "rate {rate}");
    }

    #[test]
    fn assignments_are_independent_of_covariate_bins() {
        // Under the random policy, arm and covariate bin must be
        // independent: chi-squared test on a 2 x 4 table.
        let spec = BasisSpec::linear(1);
        let st = ArmState::new(2).unwrap();
        let pol = Policy::Random { p: 0.5 };
        let mut rng_x = keyed_rng(3, StreamDomain::Covariates, 0, 0);
        let mut rng_a = keyed_rng(3, StreamDomain::Assignment, 0, 0);
        let mut table = [[0.0_f64; 4]; 2];
        let n = 20_000;
        for _ in 0..n {
            let x: f64 = rng_x.random_range(-2.0..2.0);
            let bin = (((x + 2.0) / 1.0) as usize).min(3);
            let (arm, _) = pol.assign(&spec, &[x], &st, &mut rng_a).unwrap();
            table[arm.index()][bin] += 1.0;
        }
        let row: Vec<f64> = (0..2).map(|a| table[a].iter().sum()).collect();
        let col: Vec<f64> = (0..4).map(|b| table[0][b] + table[1][b]).collect();
        let mut chi2 = 0.0;
        for a in 0..2 {
            for b in 0..4 {
                let expect = row[a] * col[b] / n as f64;
                let diff = table[a][b] - expect;
                chi2 += diff * diff / expect;
            }
        }
        let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} exceeds {crit}");
    }

    #[test]
    fn greedy_converges_to_the_oracle_policy() {
        // Stream where treatment is better iff x > 0. Feed the policy its
        // own assignments; late-phase greedy choices should match the oracle
        // more often than early-phase ones.
        let spec = BasisSpec::linear(1);
        let pol = greedy(0.3, 50);
        let mut st = ArmState::new(2).unwrap();
        let mut rng_x = keyed_rng(7, StreamDomain::Covariates, 0, 0);
        let mut rng_a = keyed_rng(7, StreamDomain::Assignment, 0, 0);
        let mut rng_y = keyed_rng(7, StreamDomain::Noise, 0, 0);
        let mut early_match = 0u32;
        let mut late_match = 0u32;
        let (early_n, late_from, total) = (2000u32, 5000u32, 10_000u32);
        for i in 0..total {
            let x: f64 = rng_x.random_range(-2.0..2.0);
            st.refresh_coefficients_fast();
            let (arm, p) = pol.assign(&spec, &[x], &st, &mut rng_a).unwrap();
            // Greedy choice implied by the propensity.
            let greedy_now = if p == 0.5 {
                None
            } else {
                Some(if p > 0.5 { Arm::Treatment } else { Arm::Control })
            };
            let oracle = if x > 0.0 { Arm::Treatment } else { Arm::Control };
            if let Some(g) = greedy_now {
                let matched = (g == oracle) as u32;
                if i < early_n {
                    early_match += matched;
                } else if i >= late_from {
                    late_match += matched;
                }
            }
            let noise: f64 = rng_y.random_range(-0.5..0.5);
            let y = match arm {
                Arm::Treatment => 0.5 * x + noise,
                Arm::Control => -0.5 * x + noise,
            };
            st.ingest(&spec, &Observation { x: vec![x], arm, y }).unwrap();
        }
        let early_rate = early_match as f64 / early_n as f64;
        let late_rate = late_match as f64 / (total - late_from) as f64;
        assert!(
            late_rate > early_rate,
            "late greedy-oracle agreement {late_rate:.3} not above early {early_rate:.3}"
        );
        assert!(late_rate > 0.9, "late agreement too low: {late_rate:.3}");
    }
}
