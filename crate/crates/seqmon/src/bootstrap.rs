//! Multiplier-bootstrap coefficient paths and the spending boundary solver.
//!
//! The ensemble keeps `B` per-arm coefficient paths. At interim stage `k`
//! with cumulative count `N_k` and batch size `m_k`, each path receives one
//! Gaussian perturbation scaled by the stage's sandwich block:
//!
//! ```text
//! beta_{a,b} <- (1 - m_k/N_k) beta_{a,b} + N_k^-1 sqrt(Phi_{a,k}) e_{k,a,b}
//! ```
//!
//! Because `1 - m_k/N_k = N_{k-1}/N_k`, the update telescopes to the closed
//! form `beta_{a,b}(t_k) = N_k^-1 sum_{j<=k} sqrt(Phi_{a,j}) e_{j,a,b}`
//! without revisiting past stages. Draws are keyed by `(stage, draw, arm)`,
//! so the ensemble is reproducible from the seed alone.
//!
//! The stage boundary is an upper order statistic of the surviving paths'
//! statistics; paths at or below the boundary survive to the next stage, and
//! the pruned fraction of the whole ensemble accounts for the budget already
//! spent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::rng::{gaussian_vector, keyed_rng, StreamDomain};
use crate::stream::{Arm, ArmState};

/// The per-arm bootstrap coefficient paths and the survivor set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    q: usize,
    seed: u64,
    /// Interim stages applied so far; also the draw counter's stage key.
    stage: u64,
    /// `paths[arm][b]` is path `b`'s coefficient vector for that arm.
    paths: [Vec<DVector<f64>>; 2],
    /// Indices of paths that have not crossed any boundary, ascending.
    survivors: Vec<u32>,
}

impl BootstrapEnsemble {
    /// `draws` zero-initialized paths per arm, all surviving.
    pub fn new(draws: usize, q: usize, seed: u64) -> Result<Self> {
        if draws < 2 {
            return Err(Error::InvalidParam(
                "bootstrap needs at least 2 draws".into(),
            ));
        }
        if q == 0 {
            return Err(Error::InvalidParam(
                "feature dimension must be at least 1".into(),
            ));
        }
        if draws > u32::MAX as usize {
            return Err(Error::InvalidParam("too many bootstrap draws".into()));
        }
        Ok(BootstrapEnsemble {
            q,
            seed,
            stage: 0,
            paths: [
                vec![DVector::zeros(q); draws],
                vec![DVector::zeros(q); draws],
            ],
            survivors: (0..draws as u32).collect(),
        })
    }

    pub fn draws(&self) -> usize {
        self.paths[0].len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stages applied so far.
    pub fn stage(&self) -> u64 {
        self.stage
    }

    /// Surviving path indices, ascending.
    pub fn survivors(&self) -> &[u32] {
        &self.survivors
    }

    pub fn survivor_count(&self) -> usize {
        self.survivors.len()
    }

    /// One path's coefficient vector.
    pub fn path(&self, arm: Arm, b: usize) -> &DVector<f64> {
        &self.paths[arm.index()][b]
    }

    /// The Gaussian vector used for `(stage, draw, arm)`; exposed so tests
    /// can replay the closed-form telescoped sum.
    pub fn stage_gaussian(seed: u64, stage: u64, b: usize, arm: Arm, q: usize) -> DVector<f64> {
        let mut rng = keyed_rng(
            seed,
            StreamDomain::BootstrapArm,
            stage,
            ((b as u64) << 1) | arm.index() as u64,
        );
        gaussian_vector(&mut rng, q)
    }

    /// Applies one interim stage to every path (survivors and pruned alike,
    /// keeping the draw sequence aligned). `n_k` is the cumulative count
    /// after the stage's ingest, `m` the stage batch size; `m > n_k` errors.
    pub fn stage_update(&mut self, state: &ArmState, n_k: u64, m: u64) -> Result<()> {
        if m > n_k {
            return Err(Error::BatchExceedsTotal { m, n: n_k });
        }
        if state.q() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: state.q(),
            });
        }
        self.stage += 1;
        let keep = 1.0 - m as f64 / n_k as f64;
        let scale = 1.0 / n_k as f64;
        for arm in [Arm::Control, Arm::Treatment] {
            let root = psd_sqrt(state.stage_sandwich(arm))?;
            let paths = &mut self.paths[arm.index()];
            for (b, path) in paths.iter_mut().enumerate() {
                let e = Self::stage_gaussian(self.seed, self.stage, b, arm, self.q);
                // path = keep * path + scale * root * e
                path.gemv(scale, &root, &e, keep);
            }
        }
        Ok(())
    }

    /// Solves the stage boundary from the survivors' statistics and prunes
    /// crossers.
    ///
    /// `stats[i]` must correspond to `survivors()[i]`. With `B` total draws,
    /// pruned fraction `c = (B - |I|)/B`, and cumulative spending target
    /// `alpha_k`, the conditional tail probability is
    /// `p = clamp((alpha_k - c) / (1 - c), 0, 1)`; the boundary is `+inf`
    /// when `p = 0` and otherwise the `ceil(p |I|)`-th largest statistic.
    /// Paths with statistics at or below the boundary survive. Errors if the
    /// survivor set is empty on entry.
    pub fn solve_boundary(&mut self, stats: &[f64], spend_target: f64) -> Result<f64> {
        let surv = self.survivors.len();
        if surv == 0 {
            return Err(Error::EmptySurvivors);
        }
        if stats.len() != surv {
            return Err(Error::DimensionMismatch {
                expected: surv,
                got: stats.len(),
            });
        }
        let b_total = self.draws() as f64;
        let pruned_frac = (self.draws() - surv) as f64 / b_total;
        let p = ((spend_target - pruned_frac) / (1.0 - pruned_frac)).clamp(0.0, 1.0);
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let rank = ((p * surv as f64).ceil() as usize).clamp(1, surv);
        let mut sorted = stats.to_vec();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let z = sorted[rank - 1];
        let kept: Vec<u32> = self
            .survivors
            .iter()
            .zip(stats)
            .filter(|(_, &s)| s <= z)
            .map(|(&b, _)| b)
            .collect();
        self.survivors = kept;
        Ok(z)
    }
}
