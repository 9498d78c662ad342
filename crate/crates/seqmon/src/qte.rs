//! Sequential test for a positive conditional treatment effect somewhere in
//! covariate space.
//!
//! At each interim stage the monitor ingests the batch, refreshes the
//! streaming regression, accumulates the stage's variance blocks, advances
//! the bootstrap ensemble, and compares the scaled supremum statistic
//! `sqrt(N_k) * sup_x phi(x)'(beta_1 - beta_0) / se(x)` against a boundary
//! solved from the surviving bootstrap paths under the alpha-spending
//! schedule. Grid points with zero estimated standard error are skipped; if
//! every point is degenerate the stage continues with an infinite boundary
//! and the decision's `degenerate` flag set.
//!
//! A two-sided procedure runs one monitor on the stream as-is and a second
//! on the reward-negated stream; it rejects once both sides have rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::bootstrap::BootstrapEnsemble;
use crate::error::{Error, Result};
use crate::grid::SupGrid;
use crate::spending::SpendingFunction;
use crate::stream::{Arm, ArmState, Observation};

/// Outcome of one interim look.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Continue,
    Reject,
}

/// Everything reported at one interim stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorDecision {
    /// 1-based stage index.
    pub stage: u64,
    /// The monitored statistic on its decision scale (already `sqrt(N)`
    /// scaled where the procedure calls for it).
    #[serde(with = "crate::checkpoint::portable_float")]
    pub statistic: f64,
    /// Rejection boundary the statistic was compared against.
    #[serde(with = "crate::checkpoint::portable_float")]
    pub boundary: f64,
    /// Cumulative alpha-spending target at this stage, when applicable.
    pub spend_target: Option<f64>,
    /// Surviving bootstrap paths after this stage, when applicable.
    pub survivors: Option<usize>,
    pub verdict: Verdict,
    /// Cumulative observations used.
    pub samples_used: u64,
    /// Grid point attaining the supremum, for sup-type monitors.
    pub argmax_x: Option<Vec<f64>>,
    /// True when the stage could not form a studentized statistic (no data
    /// yet, or every grid point had zero standard error). Such stages never
    /// reject and spend no budget.
    pub degenerate: bool,
}

/// Shared settings of the bootstrap-calibrated monitors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub spending: SpendingFunction,
    pub bootstrap_draws: usize,
    /// Planned total sample size; the information fraction at stage `k` is
    /// `min(N_k / horizon_n, 1)`.
    pub horizon_n: u64,
    pub seed: u64,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_n == 0 {
            return Err(Error::InvalidParam(
                "planned sample size must be positive".into(),
            ));
        }
        if self.bootstrap_draws < 2 {
            return Err(Error::InvalidParam(
                "bootstrap needs at least 2 draws".into(),
            ));
        }
        Ok(())
    }

    /// Information fraction for cumulative count `n`, clamped to the
    /// spending horizon so late overruns spend the full budget.
    pub fn information_fraction(&self, n: u64) -> f64 {
        (n as f64 / self.horizon_n as f64 * self.spending.t_max()).min(self.spending.t_max())
    }
}

/// Supremum of the studentized contrast over the grid.
///
/// Returns the unscaled statistic `sup_x phi(x)'(beta_1 - beta_0) / se(x)`
/// and the first grid point attaining it (ties broken by grid order). Grid
/// points with zero variance are skipped; if all are skipped, errors with
/// [`Error::DegenerateVariance`].
pub fn sup_statistic(
    state: &ArmState,
    spec: &BasisSpec,
    grid: &SupGrid,
) -> Result<(f64, Vec<f64>)> {
    let contrast = state.beta_contrast();
    let mut best: Option<(f64, usize)> = None;
    for (i, x) in grid.points().iter().enumerate() {
        let phi = spec.eval(x)?;
        let v = state.variance_at(&phi);
        if v <= 0.0 {
            continue;
        }
        let s = phi.dot(&contrast) / v.sqrt();
        match best {
            Some((b, _)) if s <= b => {}
            _ => best = Some((s, i)),
        }
    }
    best.map(|(s, i)| (s, grid.points()[i].clone()))
        .ok_or(Error::DegenerateVariance)
}

/// Supremum statistics of the surviving bootstrap paths, on the decision
/// scale (multiplied by `sqrt(N)`), in survivor order.
///
/// Uses the same grid and the same standard errors as [`sup_statistic`], so
/// observed and bootstrap suprema are maximized over identical point sets.
pub fn bootstrap_sup(
    ens: &BootstrapEnsemble,
    state: &ArmState,
    spec: &BasisSpec,
    grid: &SupGrid,
) -> Result<Vec<f64>> {
    let q = state.q();
    // Rows phi(x)/se(x) for the usable grid points.
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    for x in grid.points() {
        let phi = spec.eval(x)?;
        let v = state.variance_at(&phi);
        if v <= 0.0 {
            continue;
        }
        rows.push(phi / v.sqrt());
    }
    if rows.is_empty() {
        return Err(Error::DegenerateVariance);
    }
    let g = rows.len();
    let u = DMatrix::from_fn(g, q, |i, j| rows[i][j]);
    let scale = (state.n() as f64).sqrt();
    let surv = ens.survivors();
    let mut out = Vec::with_capacity(surv.len());
    // Chunked products keep the working set small at large draw counts.
    const CHUNK: usize = 256;
    for chunk in surv.chunks(CHUNK) {
        let d = DMatrix::from_fn(q, chunk.len(), |i, j| {
            let b = chunk[j] as usize;
            ens.path(Arm::Treatment, b)[i] - ens.path(Arm::Control, b)[i]
        });
        let prod = &u * &d;
        for j in 0..chunk.len() {
            let mut sup = f64::NEG_INFINITY;
            for i in 0..g {
                let v = prod[(i, j)];
                if v > sup {
                    sup = v;
                }
            }
            out.push(sup * scale);
        }
    }
    Ok(out)
}

/// The one-sided sequential supremum-contrast monitor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QteMonitor {
    basis: BasisSpec,
    grid: SupGrid,
    cfg: MonitorConfig,
    arms: ArmState,
    ensemble: BootstrapEnsemble,
    stage: u64,
    terminated: bool,
    history: Vec<MonitorDecision>,
}

impl QteMonitor {
    pub fn new(basis: BasisSpec, grid: SupGrid, cfg: MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        let q = basis.output_dim();
        Ok(QteMonitor {
            arms: ArmState::new(q)?,
            ensemble: BootstrapEnsemble::new(cfg.bootstrap_draws, q, cfg.seed)?,
            basis,
            grid,
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

    pub fn arm_state(&self) -> &ArmState {
        &self.arms
    }

    pub fn grid(&self) -> &SupGrid {
        &self.grid
    }

    pub fn ensemble(&self) -> &BootstrapEnsemble {
        &self.ensemble
    }

    /// Completed interim stages.
    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn history(&self) -> &[MonitorDecision] {
        &self.history
    }

    /// Runs one interim stage on a batch of observations.
    ///
    /// Pipeline: ingest pass (running sums and grid reservoir), coefficient
    /// refresh, stage variance accumulation, bootstrap stage update, stage
    /// close, then statistic / boundary / verdict. Empty batches are allowed
    /// (a look without new data). Errors once the monitor has rejected.
    pub fn interim(&mut self, batch: &[Observation]) -> Result<MonitorDecision> {
        if self.terminated {
            return Err(Error::MonitorTerminated);
        }
        for obs in batch {
            self.arms.ingest(&self.basis, obs)?;
            self.grid.observe(&obs.x);
        }
        self.stage += 1;
        let n_k = self.arms.n();
        let decision = if n_k == 0 {
            MonitorDecision {
                stage: self.stage,
                statistic: 0.0,
                boundary: f64::INFINITY,
                spend_target: None,
                survivors: Some(self.ensemble.survivor_count()),
                verdict: Verdict::Continue,
                samples_used: 0,
                argmax_x: None,
                degenerate: true,
            }
        } else {
            self.arms.refresh_coefficients();
            self.arms.stage_accumulate(&self.basis, batch)?;
            self.ensemble
                .stage_update(&self.arms, n_k, batch.len() as u64)?;
            self.arms.stage_close();
            let t = self.cfg.information_fraction(n_k);
            let spend_target = self.cfg.spending.spend(t)?;
            match sup_statistic(&self.arms, &self.basis, &self.grid) {
                Err(Error::DegenerateVariance) => MonitorDecision {
                    stage: self.stage,
                    statistic: 0.0,
                    boundary: f64::INFINITY,
                    spend_target: Some(spend_target),
                    survivors: Some(self.ensemble.survivor_count()),
                    verdict: Verdict::Continue,
                    samples_used: n_k,
                    argmax_x: None,
                    degenerate: true,
                },
                Err(e) => return Err(e),
                Ok((sup, argmax)) => {
                    let stats = bootstrap_sup(&self.ensemble, &self.arms, &self.basis, &self.grid)?;
                    let boundary = self.ensemble.solve_boundary(&stats, spend_target)?;
                    let statistic = (n_k as f64).sqrt() * sup;
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
                        survivors: Some(self.ensemble.survivor_count()),
                        verdict,
                        samples_used: n_k,
                        argmax_x: Some(argmax),
                        degenerate: false,
                    }
                }
            }
        };
        if decision.verdict == Verdict::Reject {
            self.terminated = true;
        }
        self.history.push(decision.clone());
        Ok(decision)
    }
}

/// Verdict of the two-sided composition of a positive-side and a
/// reward-negated monitor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedOutcome {
    pub verdict: Verdict,
    /// Stage at which the two-sided null was rejected: the later of the two
    /// one-sided stop stages.
    pub stop_stage: Option<u64>,
}

/// Combines two one-sided histories into the two-sided verdict.
///
/// The monitors must have seen the same stream: their cumulative counts must
/// agree on every common stage, else [`Error::StreamMismatch`]. The
/// two-sided null is rejected once both sides have rejected; the stop stage
/// is the maximum of the one-sided stop stages.
pub fn two_sided(pos: &QteMonitor, neg: &QteMonitor) -> Result<TwoSidedOutcome> {
    for (dp, dn) in pos.history().iter().zip(neg.history()) {
        if dp.samples_used != dn.samples_used {
            return Err(Error::StreamMismatch {
                stage: dp.stage,
                n_pos: dp.samples_used,
                n_neg: dn.samples_used,
            });
        }
    }
    let stop = |m: &QteMonitor| {
        m.history()
            .iter()
            .find(|d| d.verdict == Verdict::Reject)
            .map(|d| d.stage)
    };
    match (stop(pos), stop(neg)) {
        (Some(a), Some(b)) => Ok(TwoSidedOutcome {
            verdict: Verdict::Reject,
            stop_stage: Some(a.max(b)),
        }),
        _ => Ok(TwoSidedOutcome {
            verdict: Verdict::Continue,
            stop_stage: None,
        }),
    }
}

/// Drives a positive-side monitor and a reward-negated twin over the same
/// stream. Each side runs at the full budget of its own spending schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoSidedMonitor {
    pos: QteMonitor,
    neg: QteMonitor,
}

impl TwoSidedMonitor {
    /// The negated side derives an independent bootstrap seed from the
    /// configured one.
    pub fn new(basis: BasisSpec, grid: SupGrid, cfg: MonitorConfig) -> Result<Self> {
        let mut neg_cfg = cfg.clone();
        neg_cfg.seed = crate::rng::derive_seed(cfg.seed, crate::rng::StreamDomain::Noise, u64::MAX, 0);
        let neg_grid = grid.clone();
        Ok(TwoSidedMonitor {
            pos: QteMonitor::new(basis.clone(), grid, cfg)?,
            neg: QteMonitor::new(basis, neg_grid, neg_cfg)?,
        })
    }

    pub fn positive(&self) -> &QteMonitor {
        &self.pos
    }

    pub fn negative(&self) -> &QteMonitor {
        &self.neg
    }

    /// Feeds the batch to both sides (rewards negated on the second) and
    /// returns the combined outcome. Sides that already rejected are left
    /// untouched.
    pub fn interim(&mut self, batch: &[Observation]) -> Result<TwoSidedOutcome> {
        if !self.pos.is_terminated() {
            self.pos.interim(batch)?;
        }
        if !self.neg.is_terminated() {
            let negated: Vec<Observation> = batch
                .iter()
                .map(|o| Observation {
                    x: o.x.clone(),
                    arm: o.arm,
                    y: -o.y,
                })
                .collect();
            self.neg.interim(&negated)?;
        }
        two_sided(&self.pos, &self.neg)
    }
}
