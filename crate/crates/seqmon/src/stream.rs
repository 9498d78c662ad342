//! Streaming per-arm least squares with stage-block variance accumulation.
//!
//! [`ArmState`] maintains, for each arm `a` in {0, 1}:
//!
//! * design moments `Sigma_a = n^-1 sum 1(A_i=a) phi(X_i) phi(X_i)'` and
//!   `gamma_a = n^-1 sum 1(A_i=a) phi(X_i) Y_i`, stored as exact sums and
//!   divided on demand (identical to the recursive running average in exact
//!   arithmetic, and closer to batch recomputation in floating point);
//! * coefficients `beta_a = pinv(Sigma_a) gamma_a`, refreshed once per stage;
//! * sandwich variance blocks
//!   `Phi_{a,k} = sum_{i in stage k} 1(A_i=a) pinv(Sigma_a) phi r^2 phi' pinv(Sigma_a)`
//!   with residuals `r = Y_i - phi' beta_a` taken at the stage-refreshed
//!   coefficients, split into a current-stage block and a cumulative sum of
//!   closed stages.
//!
//! The stage lifecycle is: ingest the batch, `refresh_coefficients`,
//! `stage_accumulate` over the same batch, then `stage_close`. Raw
//! observations are never retained.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg::{pinv_sym, quad_form};

/// Treatment arm of a two-arm experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn from_index(i: u64) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }
}

/// One experiment record: covariates, assigned arm, observed reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub arm: Arm,
    pub y: f64,
}

/// How current the derived quantities are relative to the ingested data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
enum RefreshLevel {
    /// Data ingested since the last refresh.
    #[default]
    Stale,
    /// Coefficients current; cached pseudoinverses are not.
    CoefficientsOnly,
    /// Coefficients and cached pseudoinverses current.
    Full,
}

/// Streaming two-arm regression state. See the module docs for the fields'
/// definitions and the stage lifecycle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmState {
    q: usize,
    n: u64,
    arm_n: [u64; 2],
    sum_sigma: [DMatrix<f64>; 2],
    sum_gamma: [DVector<f64>; 2],
    beta: [DVector<f64>; 2],
    cum_sandwich: [DMatrix<f64>; 2],
    stage_sandwich: [DMatrix<f64>; 2],
    /// Observations ingested in the currently open stage.
    stage_count: u64,
    #[serde(skip)]
    sigma_pinv: [DMatrix<f64>; 2],
    #[serde(skip)]
    refresh: RefreshLevel,
}

impl ArmState {
    /// Empty state for feature dimension `q >= 1`.
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParam(
                "feature dimension must be at least 1".into(),
            ));
        }
        Ok(ArmState {
            q,
            n: 0,
            arm_n: [0, 0],
            sum_sigma: [DMatrix::zeros(q, q), DMatrix::zeros(q, q)],
            sum_gamma: [DVector::zeros(q), DVector::zeros(q)],
            beta: [DVector::zeros(q), DVector::zeros(q)],
            cum_sandwich: [DMatrix::zeros(q, q), DMatrix::zeros(q, q)],
            stage_sandwich: [DMatrix::zeros(q, q), DMatrix::zeros(q, q)],
            stage_count: 0,
            sigma_pinv: [DMatrix::zeros(q, q), DMatrix::zeros(q, q)],
            refresh: RefreshLevel::Stale,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Total observations ingested across both arms.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn arm_count(&self, arm: Arm) -> u64 {
        self.arm_n[arm.index()]
    }

    /// Observations ingested in the currently open stage.
    pub fn stage_count(&self) -> u64 {
        self.stage_count
    }

    /// Whether `beta` reflects all ingested data.
    pub fn coefficients_current(&self) -> bool {
        self.refresh != RefreshLevel::Stale
    }

    /// Normalized design moment `Sigma_a` (zeros before any data).
    pub fn sigma_hat(&self, arm: Arm) -> DMatrix<f64> {
        if self.n == 0 {
            DMatrix::zeros(self.q, self.q)
        } else {
            &self.sum_sigma[arm.index()] / self.n as f64
        }
    }

    /// Normalized response moment `gamma_a` (zeros before any data).
    pub fn gamma_hat(&self, arm: Arm) -> DVector<f64> {
        if self.n == 0 {
            DVector::zeros(self.q)
        } else {
            &self.sum_gamma[arm.index()] / self.n as f64
        }
    }

    /// Coefficients as of the last refresh.
    pub fn beta(&self, arm: Arm) -> &DVector<f64> {
        &self.beta[arm.index()]
    }

    /// Treatment-minus-control coefficient contrast.
    pub fn beta_contrast(&self) -> DVector<f64> {
        &self.beta[1] - &self.beta[0]
    }

    /// Sum of closed-stage sandwich blocks for one arm.
    pub fn cum_sandwich(&self, arm: Arm) -> &DMatrix<f64> {
        &self.cum_sandwich[arm.index()]
    }

    /// Open-stage sandwich block for one arm.
    pub fn stage_sandwich(&self, arm: Arm) -> &DMatrix<f64> {
        &self.stage_sandwich[arm.index()]
    }

    /// Folds one observation into the running sums. Coefficients are *not*
    /// refreshed; that is deferred to the interim analysis.
    pub fn ingest(&mut self, spec: &BasisSpec, obs: &Observation) -> Result<()> {
        let phi = spec.eval(&obs.x)?;
        self.ingest_features(&phi, obs.arm, obs.y)
    }

    /// [`ArmState::ingest`] for a pre-evaluated feature vector.
    pub fn ingest_features(&mut self, phi: &DVector<f64>, arm: Arm, y: f64) -> Result<()> {
        if phi.len() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: phi.len(),
            });
        }
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "reward" });
        }
        let a = arm.index();
        self.n += 1;
        self.arm_n[a] += 1;
        self.stage_count += 1;
        self.sum_sigma[a].ger(1.0, phi, phi, 1.0);
        self.sum_gamma[a].axpy(y, phi, 1.0);
        self.refresh = RefreshLevel::Stale;
        Ok(())
    }

    /// Recomputes both arms' coefficients via the eigendecomposition
    /// pseudoinverse and caches `pinv(Sigma_a)` for the stage's variance
    /// accumulation. Cheap no-op when nothing changed since the last call.
    pub fn refresh_coefficients(&mut self) {
        if self.refresh == RefreshLevel::Full {
            return;
        }
        for a in 0..2 {
            let arm = Arm::from_index(a as u64).unwrap();
            let sigma = self.sigma_hat(arm);
            self.sigma_pinv[a] = pinv_sym(&sigma);
            self.beta[a] = &self.sigma_pinv[a] * self.gamma_hat(arm);
        }
        self.refresh = RefreshLevel::Full;
    }

    /// Coefficient-only refresh on the fast path: a Cholesky solve per arm
    /// when the moment is numerically positive definite, falling back to the
    /// pseudoinverse otherwise. Produces the same coefficients as
    /// [`ArmState::refresh_coefficients`] up to solver rounding but does not
    /// update the cached pseudoinverses, so stage accumulation still requires
    /// the full refresh. Intended for per-observation policy updates.
    pub fn refresh_coefficients_fast(&mut self) {
        if self.refresh != RefreshLevel::Stale {
            return;
        }
        for a in 0..2 {
            let arm = Arm::from_index(a as u64).unwrap();
            let sigma = self.sigma_hat(arm);
            match sigma.clone().cholesky() {
                Some(chol) => {
                    self.beta[a] = chol.solve(&self.gamma_hat(arm));
                }
                None => {
                    self.sigma_pinv[a] = pinv_sym(&sigma);
                    self.beta[a] = &self.sigma_pinv[a] * self.gamma_hat(arm);
                }
            }
        }
        self.refresh = RefreshLevel::CoefficientsOnly;
    }

    /// Applies the cached pseudoinverse of one arm's design moment.
    pub fn pinv_apply(&self, arm: Arm, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if self.refresh != RefreshLevel::Full {
            return Err(Error::StaleCoefficients);
        }
        Ok(&self.sigma_pinv[arm.index()] * phi)
    }

    /// Adds the batch's sandwich contributions to the open stage block,
    /// using the stage-refreshed coefficients and cached pseudoinverses.
    ///
    /// Must follow [`ArmState::refresh_coefficients`] for the same stage;
    /// errors with [`Error::StaleCoefficients`] otherwise.
    pub fn stage_accumulate(&mut self, spec: &BasisSpec, batch: &[Observation]) -> Result<()> {
        if self.refresh != RefreshLevel::Full {
            return Err(Error::StaleCoefficients);
        }
        for obs in batch {
            let phi = spec.eval(&obs.x)?;
            let a = obs.arm.index();
            let r = obs.y - self.beta[a].dot(&phi);
            let w = &self.sigma_pinv[a] * &phi;
            self.stage_sandwich[a].ger(r * r, &w, &w, 1.0);
        }
        Ok(())
    }

    /// Folds the open stage block into the cumulative sum and resets it.
    pub fn stage_close(&mut self) {
        for a in 0..2 {
            let (cum, stage) = (&mut self.cum_sandwich[a], &mut self.stage_sandwich[a]);
            *cum += &*stage;
            stage.fill(0.0);
        }
        self.stage_count = 0;
    }

    /// Test-only hook: overwrite the open-stage sandwich blocks so tests can
    /// drive the bootstrap with prescribed variance inputs.
    #[cfg(test)]
    pub(crate) fn set_stage_blocks_for_test(&mut self, blocks: [DMatrix<f64>; 2]) {
        self.stage_sandwich = blocks;
    }

    /// Pointwise variance estimate
    /// `V(x) = n^-2 sum_a phi(x)' CumPhi_a phi(x)` of the coefficient
    /// contrast at feature vector `phi_x`, from closed stages only.
    pub fn variance_at(&self, phi_x: &DVector<f64>) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n2 = (self.n as f64) * (self.n as f64);
        let v = (quad_form(&self.cum_sandwich[0], phi_x) + quad_form(&self.cum_sandwich[1], phi_x))
            / n2;
        v.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::{keyed_rng, StreamDomain};

    fn spec1() -> BasisSpec {
        BasisSpec::linear(1)
    }

    fn obs(x: f64, arm: Arm, y: f64) -> Observation {
        Observation {
            x: vec![x],
            arm,
            y,
        }
    }

    fn random_batch(n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = keyed_rng(seed, StreamDomain::Covariates, 0, 0);
        (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let arm = if rng.random_bool(0.5) {
                    Arm::Treatment
                } else {
                    Arm::Control
                };
                let y = 1.0 + 0.5 * x
                    + if arm == Arm::Treatment { 0.3 } else { 0.0 }
                    + rng.random_range(-1.0..1.0);
                obs(x, arm, y)
            })
            .collect()
    }

    /// Batch OLS oracle: solve pinv(Sigma_a) gamma_a from scratch.
    fn batch_beta(spec: &BasisSpec, data: &[Observation], arm: Arm) -> DVector<f64> {
        let q = spec.output_dim();
        let n = data.len() as f64;
        let mut sigma = DMatrix::<f64>::zeros(q, q);
        let mut gamma = DVector::<f64>::zeros(q);
        for o in data {
            if o.arm != arm {
                continue;
            }
            let phi = spec.eval(&o.x).unwrap();
            sigma.ger(1.0 / n, &phi, &phi, 1.0);
            gamma.axpy(o.y / n, &phi, 1.0);
        }
        pinv_sym(&sigma) * gamma
    }

    #[test]
    fn single_arm_constant_fit() {
        // Two control observations y = 1, 3 at x = 0: intercept-only info,
        // coefficient on x pinned to zero by the pseudoinverse.
        let spec = spec1();
        let mut st = ArmState::new(2).unwrap();
        st.ingest(&spec, &obs(0.0, Arm::Control, 1.0)).unwrap();
        st.ingest(&spec, &obs(0.0, Arm::Control, 3.0)).unwrap();
        st.refresh_coefficients();
        let b = st.beta(Arm::Control);
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-12);
        assert_eq!(b[1], 0.0);
        assert_eq!(st.beta(Arm::Treatment).as_slice(), &[0.0, 0.0]);
        assert_eq!(st.arm_count(Arm::Control), 2);
        assert_eq!(st.arm_count(Arm::Treatment), 0);
    }

    #[test]
    fn online_sums_match_batch_recomputation() {
        let spec = spec1();
        let data = random_batch(1000, 3);
        let mut st = ArmState::new(2).unwrap();
        for o in &data {
            st.ingest(&spec, o).unwrap();
        }
        st.refresh_coefficients();
        for arm in [Arm::Control, Arm::Treatment] {
            let oracle = batch_beta(&spec, &data, arm);
            let online = st.beta(arm);
            for i in 0..2 {
                assert!(
                    (online[i] - oracle[i]).abs() <= 1e-10 * oracle[i].abs().max(1.0),
                    "arm {arm:?} coef {i}: {} vs {}",
                    online[i],
                    oracle[i]
                );
            }
        }
    }

    #[test]
    fn refresh_is_idempotent_between_ingests() {
        let spec = spec1();
        let mut st = ArmState::new(2).unwrap();
        for o in random_batch(50, 4) {
            st.ingest(&spec, &o).unwrap();
        }
        st.refresh_coefficients();
        let b = st.beta(Arm::Treatment).clone();
        st.refresh_coefficients();
        assert_eq!(st.beta(Arm::Treatment), &b);
    }

    #[test]
    fn fast_refresh_matches_full_refresh() {
        let spec = spec1();
        let data = random_batch(400, 5);
        let mut full = ArmState::new(2).unwrap();
        let mut fast = ArmState::new(2).unwrap();
        for o in &data {
            full.ingest(&spec, o).unwrap();
            fast.ingest(&spec, o).unwrap();
        }
        full.refresh_coefficients();
        fast.refresh_coefficients_fast();
        for arm in [Arm::Control, Arm::Treatment] {
            for i in 0..2 {
                assert_relative_eq!(
                    full.beta(arm)[i],
                    fast.beta(arm)[i],
                    epsilon = 1e-9,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn stage_accumulate_requires_refresh() {
        let spec = spec1();
        let batch = random_batch(10, 6);
        let mut st = ArmState::new(2).unwrap();
        for o in &batch {
            st.ingest(&spec, o).unwrap();
        }
        assert!(matches!(
            st.stage_accumulate(&spec, &batch),
            Err(Error::StaleCoefficients)
        ));
        // A coefficient-only refresh is not enough: the cached pseudoinverse
        // is required.
        st.refresh_coefficients_fast();
        assert!(matches!(
            st.stage_accumulate(&spec, &batch),
            Err(Error::StaleCoefficients)
        ));
        st.refresh_coefficients();
        st.stage_accumulate(&spec, &batch).unwrap();
    }

    #[test]
    fn stage_close_moves_block_and_resets() {
        let spec = spec1();
        let batch = random_batch(40, 7);
        let mut st = ArmState::new(2).unwrap();
        for o in &batch {
            st.ingest(&spec, o).unwrap();
        }
        st.refresh_coefficients();
        st.stage_accumulate(&spec, &batch).unwrap();
        let stage0 = st.stage_sandwich(Arm::Control).clone();
        let stage1 = st.stage_sandwich(Arm::Treatment).clone();
        assert!(stage0.norm() + stage1.norm() > 0.0);
        st.stage_close();
        assert_eq!(st.cum_sandwich(Arm::Control), &stage0);
        assert_eq!(st.cum_sandwich(Arm::Treatment), &stage1);
        assert_eq!(st.stage_sandwich(Arm::Control).norm(), 0.0);
        assert_eq!(st.stage_count(), 0);
    }

    #[test]
    fn variance_at_matches_hand_computed_blocks() {
        // q = 1, n = 100, cumulative blocks [25] and [11] at phi = [1]:
        // V = (25 + 11) / 100^2 = 0.0036.
        let mut st = ArmState::new(1).unwrap();
        let spec = BasisSpec::linear(0);
        for i in 0..100 {
            let arm = if i % 2 == 0 { Arm::Control } else { Arm::Treatment };
            st.ingest(&spec, &Observation { x: vec![], arm, y: 0.0 })
                .unwrap();
        }
        st.cum_sandwich[0][(0, 0)] = 25.0;
        st.cum_sandwich[1][(0, 0)] = 11.0;
        let phi = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(st.variance_at(&phi), 0.0036, epsilon = 1e-15);
    }

    #[test]
    fn variance_at_scales_quadratically_in_phi() {
        let spec = spec1();
        let batch = random_batch(200, 8);
        let mut st = ArmState::new(2).unwrap();
        for o in &batch {
            st.ingest(&spec, o).unwrap();
        }
        st.refresh_coefficients();
        st.stage_accumulate(&spec, &batch).unwrap();
        st.stage_close();
        let phi = DVector::from_vec(vec![1.0, 0.75]);
        let v1 = st.variance_at(&phi);
        let v2 = st.variance_at(&(&phi * 2.0));
        // Exact in floating point for a power-of-two scale.
        assert_eq!(v2, 4.0 * v1);
        assert!(v1 > 0.0);
    }

    #[test]
    fn sandwich_residuals_use_stage_refreshed_coefficients() {
        // One stage, q = 1 intercept-only, all mass on control:
        // after refresh beta = mean(y); the block is sum of
        // (pinv * 1)^2 * (y_i - mean)^2 with pinv = 1/sigma = n/m.
        let spec = BasisSpec::linear(0);
        let mut st = ArmState::new(1).unwrap();
        let ys = [1.0, 2.0, 6.0];
        let batch: Vec<Observation> = ys
            .iter()
            .map(|&y| Observation { x: vec![], arm: Arm::Control, y })
            .collect();
        for o in &batch {
            st.ingest(&spec, o).unwrap();
        }
        st.refresh_coefficients();
        st.stage_accumulate(&spec, &batch).unwrap();
        // beta = mean(y) = 3; sigma = 3/3 = 1 so pinv = 1, and the block is
        // sum (y - 3)^2 = 4 + 1 + 9 = 14.
        assert_relative_eq!(
            st.stage_sandwich(Arm::Control)[(0, 0)],
            14.0,
            epsilon = 1e-12
        );
        st.stage_close();
        let phi = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(st.variance_at(&phi), 14.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn ingest_rejects_non_finite_reward() {
        let spec = spec1();
        let mut st = ArmState::new(2).unwrap();
        assert!(matches!(
            st.ingest(&spec, &obs(0.0, Arm::Control, f64::NAN)),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(st.n(), 0);
    }

    #[test]
    fn serde_round_trip_preserves_sums() {
        let spec = spec1();
        let mut st = ArmState::new(2).unwrap();
        for o in random_batch(60, 9) {
            st.ingest(&spec, &o).unwrap();
        }
        st.refresh_coefficients();
        let json = serde_json::to_string(&st).unwrap();
        let mut back: ArmState = serde_json::from_str(&json).unwrap();
        assert!(!back.coefficients_current());
        back.refresh_coefficients();
        assert_eq!(back.n(), st.n());
        assert_eq!(back.beta(Arm::Control), st.beta(Arm::Control));
        assert_eq!(back.beta(Arm::Treatment), st.beta(Arm::Treatment));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn online_equals_batch_for_any_split(seed in 0u64..500, cut in 1usize..99) {
            let data = random_batch(100, seed);
            let spec = spec1();
            let mut st = ArmState::new(2).unwrap();
            for o in &data[..cut] {
                st.ingest(&spec, o).unwrap();
            }
            for o in &data[cut..] {
                st.ingest(&spec, o).unwrap();
            }
            st.refresh_coefficients();
            for arm in [Arm::Control, Arm::Treatment] {
                let oracle = batch_beta(&spec, &data, arm);
                for i in 0..2 {
                    prop_assert!((st.beta(arm)[i] - oracle[i]).abs()
                        <= 1e-10 * oracle[i].abs().max(1.0));
                }
            }
        }
    }
}
