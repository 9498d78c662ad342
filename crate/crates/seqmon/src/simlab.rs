//! Synthetic experiment lab: data-generating processes, single-trial
//! execution, and seeded Monte-Carlo aggregation.
//!
//! Covariates are trivariate Gaussian with an AR(1)-style covariance
//! (`0.5^|i-j|`), hard-truncated to `[-2, 2]` per coordinate. Potential
//! outcomes are `Y(a) = 1 + (x1 - x2)/2 + a·τ(x) + ε` where the treatment
//! effect `τ(x) = g((x1+x2)/√2) · x3²` is shaped by a quadratic or cosine
//! profile `g` scaled by `delta`; `delta = 0` makes both arms identical.
//!
//! Trials are pure functions of their config (covariates, assignment, noise
//! and bootstrap streams are all counter-keyed), so Monte-Carlo aggregates
//! are reproducible bit for bit at any thread count.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::driver::AnyMonitor;
use crate::error::{Error, Result};
use crate::grid::{GridSource, SupGrid};
use crate::policies::Policy;
use crate::qte::{MonitorConfig, MonitorDecision, Verdict};
use crate::rng::{keyed_rng, StreamDomain};
use crate::spending::{SpendingFunction, SpendingKind};
use crate::stream::{ArmState, Observation};

/// Covariate dimension of the synthetic processes.
pub const DIM: usize = 3;
/// Per-coordinate truncation bound.
pub const TRUNCATION: f64 = 2.0;

/// Shape of the treatment-effect profile `g(u)` in `τ(x) = g(u)·x3²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `g(u) = delta·u²/3`: a nonnegative effect growing away from u = 0.
    Quadratic,
    /// `g(u) = delta·cos(πu)`: an effect that changes sign in u.
    Cosine,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Quadratic => "quadratic",
            Scenario::Cosine => "cosine",
        }
    }
}

/// Lower-triangular Cholesky factor of the covariance `0.5^|i-j|`, 3x3.
const CHOL: [[f64; 3]; 3] = [
    [1.0, 0.0, 0.0],
    [0.5, 0.8660254037844386, 0.0],
    [0.25, 0.4330127018922193, 0.8660254037844386],
];

/// Synthetic data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    pub scenario: Scenario,
    /// Effect scale; zero means no treatment effect anywhere.
    pub delta: f64,
    /// Standard deviation of the additive outcome noise.
    pub noise_sd: f64,
}

impl Dgp {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParam(format!(
                "effect scale must be a finite nonnegative number, got {}",
                self.delta
            )));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::InvalidParam(format!(
                "noise standard deviation must be positive and finite, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }

    /// Untruncated correlated Gaussian draw.
    fn latent<R: Rng>(rng: &mut R) -> [f64; DIM] {
        let z: [f64; DIM] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let mut x = [0.0; DIM];
        for i in 0..DIM {
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                x[i] += CHOL[i][j] * zj;
            }
        }
        x
    }

    /// One covariate vector: correlated Gaussian clamped to the support.
    pub fn covariates<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        Self::latent(rng)
            .iter()
            .map(|&v| v.clamp(-TRUNCATION, TRUNCATION))
            .collect()
    }

    /// Treatment effect `τ(x)`.
    pub fn tau(&self, x: &[f64]) -> f64 {
        let u = (x[0] + x[1]) / 2.0f64.sqrt();
        let g = match self.scenario {
            Scenario::Quadratic => self.delta * u * u / 3.0,
            Scenario::Cosine => self.delta * (std::f64::consts::PI * u).cos(),
        };
        g * x[2] * x[2]
    }

    /// Conditional mean outcome under arm `a`.
    pub fn outcome_mean(&self, x: &[f64], a: usize) -> f64 {
        1.0 + (x[0] - x[1]) / 2.0 + a as f64 * self.tau(x)
    }

    /// One reward draw under arm `a`.
    pub fn outcome<R: Rng>(&self, x: &[f64], a: usize, rng: &mut R) -> f64 {
        let eps: f64 = StandardNormal.sample(rng);
        self.outcome_mean(x, a) + self.noise_sd * eps
    }
}

/// Instantiates the configured grid. Fixed lattices span the basis support
/// when it is known and the generator's truncation box otherwise.
pub fn build_grid(source: GridSource, basis: &BasisSpec, seed: u64) -> Result<SupGrid> {
    match source {
        GridSource::FixedGrid { resolution } => {
            let support = if basis.support().is_empty() {
                vec![(-TRUNCATION, TRUNCATION); basis.dim_x()]
            } else {
                basis.support().to_vec()
            };
            SupGrid::fixed(&support, resolution)
        }
        GridSource::ObservedSample { reservoir } => SupGrid::reservoir(reservoir, seed),
    }
}

/// Which sequential test a trial runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Bootstrap monitor of the sup (qualitative) contrast.
    BatQte,
    /// Bootstrap monitor of the averaged contrast.
    BatAte,
    /// Iterated-logarithm envelope on the sup contrast.
    Lil,
    /// Mixture likelihood ratio on the mean difference.
    Avt,
}

impl Method {
    /// Wire label used in CSV outputs.
    pub fn label(self) -> &'static str {
        match self {
            Method::BatQte => "BAT-QTE",
            Method::BatAte => "BAT-ATE",
            Method::Lil => "LIL",
            Method::Avt => "AVT",
        }
    }
}

/// Full description of one simulated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub method: Method,
    pub dgp: Dgp,
    pub policy: Policy,
    pub basis: BasisSpec,
    pub grid: GridSource,
    /// First-stage sample count.
    pub n_first: u64,
    /// Per-arm batch size; each later stage adds twice this many samples.
    pub batch: u64,
    /// Number of interim looks including the first.
    pub stages: u64,
    pub bootstrap_draws: usize,
    pub alpha: f64,
    pub spending: SpendingKind,
    /// Mixing variance of the AVT likelihood ratio.
    pub avt_tau2: f64,
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.policy.validate()?;
        if self.basis.dim_x() != DIM {
            return Err(Error::InvalidParam(format!(
                "basis covers {} covariates but the generator produces {DIM}",
                self.basis.dim_x()
            )));
        }
        if self.n_first == 0 {
            return Err(Error::InvalidParam("first stage must be nonempty".into()));
        }
        if self.stages == 0 {
            return Err(Error::InvalidParam("need at least one stage".into()));
        }
        if self.stages > 1 && self.batch == 0 {
            return Err(Error::InvalidParam(
                "later stages need a positive batch size".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "significance level must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Total samples when every stage runs: `n_first + (stages-1)·2·batch`.
    pub fn horizon_n(&self) -> u64 {
        self.n_first + (self.stages - 1) * 2 * self.batch
    }

    /// Samples added at stage `k` (zero-based).
    pub fn stage_size(&self, k: u64) -> u64 {
        if k == 0 {
            self.n_first
        } else {
            2 * self.batch
        }
    }

    pub(crate) fn monitor_config(&self) -> Result<MonitorConfig> {
        Ok(MonitorConfig {
            spending: SpendingFunction::new(self.spending, self.alpha, 1.0)?,
            bootstrap_draws: self.bootstrap_draws,
            horizon_n: self.horizon_n(),
            seed: self.seed,
        })
    }
}

/// Outcome of a single simulated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rejected: bool,
    /// Samples consumed when the experiment stopped.
    pub stop_n: u64,
    /// Stage (1-based) at which it stopped.
    pub stop_stage: u64,
    pub decisions: Vec<MonitorDecision>,
}

/// Runs one experiment end to end.
///
/// Covariates, assignments, rewards and bootstrap draws come from disjoint
/// streams keyed by `cfg.seed`, so the result is a pure function of the
/// config. Adaptive policies see a regression snapshot refreshed after every
/// observation.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let mut monitor = AnyMonitor::from_config(cfg)?;
    let mut rng_x = keyed_rng(cfg.seed, StreamDomain::Covariates, 0, 0);
    let mut rng_a = keyed_rng(cfg.seed, StreamDomain::Assignment, 0, 0);
    let mut rng_y = keyed_rng(cfg.seed, StreamDomain::Noise, 0, 0);
    let adaptive = cfg.policy.is_adaptive();
    let mut policy_state = ArmState::new(cfg.basis.output_dim())?;

    let mut consumed = 0u64;
    let mut decisions = Vec::with_capacity(cfg.stages as usize);
    for k in 0..cfg.stages {
        let size = cfg.stage_size(k);
        let mut batch = Vec::with_capacity(size as usize);
        for _ in 0..size {
            let x = cfg.dgp.covariates(&mut rng_x);
            let (arm, _) = cfg.policy.assign(&cfg.basis, &x, &policy_state, &mut rng_a)?;
            let y = cfg.dgp.outcome(&x, arm.index(), &mut rng_y);
            let obs = Observation { x, arm, y };
            if adaptive {
                policy_state.ingest(&cfg.basis, &obs)?;
                policy_state.refresh_coefficients_fast();
            }
            batch.push(obs);
        }
        consumed += size;
        let decision = monitor.interim(&batch)?;
        let rejected = decision.verdict == Verdict::Reject;
        decisions.push(decision);
        if rejected {
            return Ok(TrialResult {
                rejected: true,
                stop_n: consumed,
                stop_stage: k + 1,
                decisions,
            });
        }
    }
    Ok(TrialResult {
        rejected: false,
        stop_n: consumed,
        stop_stage: cfg.stages,
        decisions,
    })
}

/// Monte-Carlo summary of one experiment cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub replications: u64,
    pub rej_prob: f64,
    pub se_rej: f64,
    pub mean_stop: f64,
    pub se_stop: f64,
}

pub(crate) fn aggregate_results(results: &[TrialResult]) -> Aggregate {
    let r = results.len() as f64;
    let p = results.iter().filter(|t| t.rejected).count() as f64 / r;
    let mean_stop = results.iter().map(|t| t.stop_n as f64).sum::<f64>() / r;
    let var_stop = results
        .iter()
        .map(|t| {
            let d = t.stop_n as f64 - mean_stop;
            d * d
        })
        .sum::<f64>()
        / (r - 1.0);
    Aggregate {
        replications: results.len() as u64,
        rej_prob: p,
        se_rej: (p * (1.0 - p) / r).sqrt(),
        mean_stop,
        se_stop: (var_stop / r).sqrt(),
    }
}

/// Runs `replications` independent trials (seeds `cfg.seed + r`) and
/// aggregates. Parallel over trials; the result does not depend on the
/// worker count.
pub fn run_monte_carlo(cfg: &TrialConfig, replications: u64) -> Result<(Aggregate, Vec<TrialResult>)> {
    if replications < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 replications for standard errors, got {replications}"
        )));
    }
    cfg.validate()?;
    let results: Vec<TrialResult> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut trial = cfg.clone();
            trial.seed = cfg.seed + r;
            run_trial(&trial)
        })
        .collect::<Result<_>>()?;
    Ok((aggregate_results(&results), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_cfg(method: Method) -> TrialConfig {
        TrialConfig {
            method,
            dgp: Dgp {
                scenario: Scenario::Quadratic,
                delta: 0.0,
                noise_sd: 0.5,
            },
            policy: Policy::Random { p: 0.5 },
            basis: BasisSpec::linear(DIM),
            grid: GridSource::ObservedSample { reservoir: 64 },
            n_first: 200,
            batch: 50,
            stages: 3,
            bootstrap_draws: 200,
            alpha: 0.05,
            spending: SpendingKind::PocockLike,
            avt_tau2: 1.0,
            seed: 12,
        }
    }

    #[test]
    fn cholesky_factor_reproduces_the_covariance() {
        let sigma = |i: usize, j: usize| 0.5f64.powi((i as i32 - j as i32).abs());
        for i in 0..DIM {
            for j in 0..DIM {
                let mut dot = 0.0;
                for k in 0..DIM {
                    dot += CHOL[i][k] * CHOL[j][k];
                }
                assert_relative_eq!(dot, sigma(i, j), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn covariates_stay_in_the_box() {
        let dgp = base_cfg(Method::Lil).dgp;
        let mut rng = keyed_rng(5, StreamDomain::Covariates, 0, 0);
        for _ in 0..1_000_000 {
            for (i, v) in dgp.covariates(&mut rng).iter().enumerate() {
                assert!((-2.0..=2.0).contains(v), "coordinate {i} = {v}");
            }
        }
    }

    #[test]
    fn latent_correlation_matches_the_design() {
        let mut rng = keyed_rng(6, StreamDomain::Covariates, 0, 0);
        let n = 100_000;
        let (mut s1, mut s2, mut s12, mut s11, mut s22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = Dgp::latent(&mut rng);
            s1 += x[0];
            s2 += x[1];
            s12 += x[0] * x[1];
            s11 += x[0] * x[0];
            s22 += x[1] * x[1];
        }
        let nf = n as f64;
        let cov = s12 / nf - (s1 / nf) * (s2 / nf);
        let corr = cov / ((s11 / nf - (s1 / nf).powi(2)) * (s22 / nf - (s2 / nf).powi(2))).sqrt();
        assert!((corr - 0.5).abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn outcome_means_match_hand_values() {
        // No effect: both arms share the baseline.
        let null = Dgp { scenario: Scenario::Quadratic, delta: 0.0, noise_sd: 0.5 };
        assert_eq!(null.outcome_mean(&[1.0, 1.0, 1.0], 1), 1.0);

        // Quadratic profile at x = (1, 1, 2): u = √2, g = 0.15·2/3 = 0.1,
        // τ = 0.1·4 = 0.4.
        let quad = Dgp { scenario: Scenario::Quadratic, delta: 0.15, noise_sd: 0.5 };
        assert_relative_eq!(quad.outcome_mean(&[1.0, 1.0, 2.0], 1), 1.4, epsilon = 1e-12);
        assert_relative_eq!(quad.outcome_mean(&[1.0, 1.0, 2.0], 0), 1.0, epsilon = 1e-12);

        // Cosine profile at u = 1 (cos π = -1), x3 = 1.
        let cosine = Dgp { scenario: Scenario::Cosine, delta: 0.1, noise_sd: 1.0 };
        let x = [2.0f64.sqrt(), 0.0, 1.0];
        assert_relative_eq!(
            cosine.outcome_mean(&x, 1),
            1.0 + 2.0f64.sqrt() / 2.0 - 0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_delta_kills_the_effect_everywhere() {
        for scenario in [Scenario::Quadratic, Scenario::Cosine] {
            let dgp = Dgp { scenario, delta: 0.0, noise_sd: 0.5 };
            let active = Dgp { scenario, delta: 0.1, noise_sd: 0.5 };
            let mut sup: f64 = 0.0;
            for i in 0..9 {
                for j in 0..9 {
                    for k in 0..9 {
                        let x = [
                            -2.0 + 0.5 * i as f64,
                            -2.0 + 0.5 * j as f64,
                            -2.0 + 0.5 * k as f64,
                        ];
                        assert_eq!(dgp.tau(&x), 0.0);
                        sup = sup.max(active.tau(&x));
                    }
                }
            }
            assert!(sup > 0.0, "{scenario:?} has no positive-effect region");
        }
    }

    #[test]
    fn trials_are_pure_functions_of_the_config() {
        for method in [Method::BatQte, Method::BatAte, Method::Lil, Method::Avt] {
            let cfg = base_cfg(method);
            let a = run_trial(&cfg).unwrap();
            let b = run_trial(&cfg).unwrap();
            assert_eq!(a, b, "{method:?} not reproducible");
        }
    }

    #[test]
    fn never_rejecting_trials_exhaust_the_schedule() {
        // The iterated-logarithm envelope never fires under the null.
        let mut cfg = base_cfg(Method::Lil);
        cfg.n_first = 2000;
        cfg.batch = 200;
        cfg.stages = 5;
        let r = run_trial(&cfg).unwrap();
        assert!(!r.rejected);
        assert_eq!(r.stop_n, 3600);
        assert_eq!(r.stop_stage, 5);
        assert_eq!(cfg.horizon_n(), 3600);

        cfg.batch = 20;
        cfg.stages = 50;
        let r = run_trial(&cfg).unwrap();
        assert_eq!(r.stop_n, 3960);
        assert_eq!(r.stop_stage, 50);
    }

    #[test]
    fn sure_rejection_gives_degenerate_aggregate() {
        // A clear mean shift over a large first look drives the likelihood
        // ratio far past 1/alpha in every replication. (Scaling delta up
        // instead would backfire: the effect's spread inflates the pooled
        // variance quadratically while the mean gap grows linearly.)
        let mut cfg = base_cfg(Method::Avt);
        cfg.dgp.delta = 2.0;
        cfg.n_first = 2000;
        cfg.stages = 2;
        let (agg, results) = run_monte_carlo(&cfg, 8).unwrap();
        assert!(results.iter().all(|t| t.rejected && t.stop_stage == 1));
        assert_eq!(agg.rej_prob, 1.0);
        assert_eq!(agg.se_rej, 0.0);
        assert_eq!(agg.mean_stop, 2000.0);
        assert_eq!(agg.se_stop, 0.0);
    }

    #[test]
    fn binomial_standard_error_matches_the_formula() {
        let results: Vec<TrialResult> = (0..400)
            .map(|i| TrialResult {
                rejected: i % 2 == 0,
                stop_n: 100,
                stop_stage: 1,
                decisions: Vec::new(),
            })
            .collect();
        let agg = aggregate_results(&results);
        assert_relative_eq!(agg.rej_prob, 0.5, epsilon = 1e-15);
        assert_relative_eq!(agg.se_rej, 0.025, epsilon = 1e-15);
    }

    #[test]
    fn monte_carlo_is_threadcount_invariant() {
        let cfg = base_cfg(Method::BatAte);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg, 12).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&cfg, 12).unwrap());
        assert_eq!(one.0, four.0);
        assert_eq!(one.1, four.1);
    }

    #[test]
    fn adaptive_assignment_skews_toward_the_better_arm() {
        // Strong uniform effect: once past burn-in the greedy policy should
        // treat most units.
        let mut cfg = base_cfg(Method::Lil);
        cfg.dgp.delta = 2.0;
        cfg.policy = Policy::EpsilonGreedy { epsilon: 0.3, burn_in: 50 };
        cfg.n_first = 600;
        cfg.stages = 1;
        let r = run_trial(&cfg).unwrap();
        assert!(!r.decisions.is_empty());
        // Reconstruct the played arms from the trial's own streams.
        let mut rng_x = keyed_rng(cfg.seed, StreamDomain::Covariates, 0, 0);
        let mut rng_a = keyed_rng(cfg.seed, StreamDomain::Assignment, 0, 0);
        let mut rng_y = keyed_rng(cfg.seed, StreamDomain::Noise, 0, 0);
        let mut policy_state = ArmState::new(cfg.basis.output_dim()).unwrap();
        let mut treated_late = 0u32;
        for i in 0..600 {
            let x = cfg.dgp.covariates(&mut rng_x);
            let (arm, _) = cfg
                .policy
                .assign(&cfg.basis, &x, &policy_state, &mut rng_a)
                .unwrap();
            let y = cfg.dgp.outcome(&x, arm.index(), &mut rng_y);
            policy_state
                .ingest(&cfg.basis, &Observation { x, arm, y })
                .unwrap();
            policy_state.refresh_coefficients_fast();
            if i >= 300 && arm.index() == 1 {
                treated_late += 1;
            }
        }
        let rate = treated_late as f64 / 300.0;
        assert!(rate > 0.6, "late treatment share {rate}");
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut cfg = base_cfg(Method::BatQte);
        cfg.basis = BasisSpec::linear(2);
        assert!(matches!(run_trial(&cfg), Err(Error::InvalidParam(_))));
        let mut cfg = base_cfg(Method::BatQte);
        cfg.stages = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(Method::BatQte);
        cfg.stages = 2;
        cfg.batch = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(Method::BatQte);
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        assert!(run_monte_carlo(&base_cfg(Method::Avt), 1).is_err());
    }
}
