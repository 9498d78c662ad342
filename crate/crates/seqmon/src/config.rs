//! Run configuration: a TOML document describing a whole simulation suite.
//!
//! The document is organized in sections (`[monitor]`, `[basis]`, `[grid]`,
//! `[policy]`, `[schedule]`, `[sim]`), each carrying the settings of the
//! corresponding module plus sweep lists. A run expands the cross product
//! methods × designs × scenarios × (batch, stages) cells × deltas into one
//! [`SweepCell`] per combination; every cell gets a disjoint seed block so
//! its trials never share randomness with another cell.
//!
//! Unknown keys are rejected everywhere, so typos fail loudly instead of
//! silently running defaults.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::grid::GridSource;
use crate::policies::{Policy, DEFAULT_BURN_IN};
use crate::simlab::{Dgp, Method, Scenario, TrialConfig};
use crate::spending::SpendingKind;

/// Seed distance between sweep cells; also the cap on replications, so the
/// per-trial seeds `cell_seed + r` of different cells never collide.
pub const CELL_SEED_STRIDE: u64 = 1_000_003;

/// Parsed, structurally valid run configuration.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for simulation; 0 picks the machine default.
    #[serde(default)]
    pub threads: usize,
    /// Monte-Carlo replications per sweep cell.
    #[serde(default)]
    pub replications: u64,
    #[serde(default)]
    pub output: OutputSection,
    pub monitor: MonitorSection,
    pub basis: BasisSection,
    #[serde(default)]
    pub grid: GridSection,
    pub policy: PolicySection,
    pub schedule: ScheduleSection,
    pub sim: SimSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Aggregate CSV path (one row per sweep cell).
    pub aggregate: Option<String>,
    /// Optional per-stage trace CSV path (one row per interim decision).
    pub trace: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    pub methods: Vec<Method>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_spending")]
    pub spending: SpendingKind,
    #[serde(default = "default_bootstrap_draws")]
    pub bootstrap_draws: usize,
    /// Mixture variance of the always-valid likelihood-ratio baseline.
    #[serde(default = "default_tau2")]
    pub avt_tau2: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub kind: BasisKindSection,
    pub dim_x: usize,
    /// Interior knots per coordinate (spline basis only).
    #[serde(default = "default_internal_knots")]
    pub internal_knots: usize,
    /// Per-coordinate `[lo, hi]` support (spline basis only). A single pair
    /// broadcasts to every coordinate.
    pub support: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKindSection {
    Linear,
    AdditiveCubicSpline,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_grid_kind")]
    pub source: GridKindSection,
    /// Points per axis for the fixed lattice.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Capacity of the covariate reservoir for the observed-sample grid.
    #[serde(default = "default_reservoir")]
    pub reservoir: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKindSection {
    Fixed,
    Observed,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            source: default_grid_kind(),
            resolution: default_resolution(),
            reservoir: default_reservoir(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub designs: Vec<DesignKindSection>,
    /// Treatment probability of the randomized design.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Exploration rate of the epsilon-greedy design.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKindSection {
    Random,
    EpsilonGreedy,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Samples consumed before the first interim look.
    pub n_first: u64,
    /// `[batch, stages]` pairs; each later stage adds `2 * batch` samples.
    pub cells: Vec<[u64; 2]>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub scenarios: Vec<Scenario>,
    pub deltas: Vec<f64>,
    pub noise_sd: f64,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_spending() -> SpendingKind {
    SpendingKind::PocockLike
}
fn default_bootstrap_draws() -> usize {
    500
}
fn default_tau2() -> f64 {
    1.0
}
fn default_internal_knots() -> usize {
    3
}
fn default_grid_kind() -> GridKindSection {
    GridKindSection::Observed
}
fn default_resolution() -> usize {
    9
}
fn default_reservoir() -> usize {
    512
}
fn default_p() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

/// One point of the sweep: labels for reporting plus the full trial config.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub method: Method,
    pub design: &'static str,
    pub scenario: Scenario,
    pub batch: u64,
    pub stages: u64,
    pub delta: f64,
    pub trial: TrialConfig,
}

impl RunConfig {
    /// Reads and parses a TOML config file.
    ///
    /// A missing file is a configuration error (the diagnostic names the
    /// path); other I/O failures keep their I/O classification.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file not found: {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.monitor.methods.is_empty() {
            return Err(Error::Config("monitor.methods must not be empty".into()));
        }
        if self.policy.designs.is_empty() {
            return Err(Error::Config("policy.designs must not be empty".into()));
        }
        if self.sim.scenarios.is_empty() {
            return Err(Error::Config("sim.scenarios must not be empty".into()));
        }
        if self.sim.deltas.is_empty() {
            return Err(Error::Config("sim.deltas must not be empty".into()));
        }
        if self.schedule.cells.is_empty() {
            return Err(Error::Config("schedule.cells must not be empty".into()));
        }
        for d in &self.sim.deltas {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::Config(format!(
                    "sim.deltas entries must be finite and nonnegative, got {d}"
                )));
            }
        }
        for [batch, stages] in &self.schedule.cells {
            if *stages == 0 || (*stages > 1 && *batch == 0) {
                return Err(Error::Config(format!(
                    "schedule cell [{batch}, {stages}] needs stages >= 1 and a positive batch"
                )));
            }
        }
        if self.replications > CELL_SEED_STRIDE {
            return Err(Error::Config(format!(
                "replications must be at most {CELL_SEED_STRIDE} so sweep cells keep disjoint seed blocks"
            )));
        }
        Ok(())
    }

    pub fn basis_spec(&self) -> Result<BasisSpec> {
        let b = &self.basis;
        match b.kind {
            BasisKindSection::Linear => Ok(BasisSpec::linear(b.dim_x)),
            BasisKindSection::AdditiveCubicSpline => {
                let support: Vec<(f64, f64)> = match &b.support {
                    None => {
                        return Err(Error::Config(
                            "basis.support is required for the spline basis".into(),
                        ))
                    }
                    Some(s) if s.len() == 1 => vec![(s[0][0], s[0][1]); b.dim_x],
                    Some(s) if s.len() == b.dim_x => {
                        s.iter().map(|pair| (pair[0], pair[1])).collect()
                    }
                    Some(s) => {
                        return Err(Error::Config(format!(
                            "basis.support has {} pairs but dim_x = {}",
                            s.len(),
                            b.dim_x
                        )))
                    }
                };
                BasisSpec::additive_cubic_spline(b.dim_x, b.internal_knots, &support)
            }
        }
    }

    pub fn grid_source(&self) -> GridSource {
        match self.grid.source {
            GridKindSection::Fixed => GridSource::FixedGrid {
                resolution: self.grid.resolution,
            },
            GridKindSection::Observed => GridSource::ObservedSample {
                reservoir: self.grid.reservoir,
            },
        }
    }

    fn design_policy(&self, design: DesignKindSection) -> Policy {
        match design {
            DesignKindSection::Random => Policy::Random { p: self.policy.p },
            DesignKindSection::EpsilonGreedy => Policy::EpsilonGreedy {
                epsilon: self.policy.epsilon,
                burn_in: self.policy.burn_in,
            },
        }
    }

    /// Expands the sweep into one cell per combination, in a fixed order
    /// (methods, then designs, scenarios, schedule cells, deltas). Cell `i`
    /// draws its trial seeds from `seed + i * CELL_SEED_STRIDE + r`.
    pub fn expand(&self) -> Result<Vec<SweepCell>> {
        let cells = self.cells_impl()?;
        for cell in &cells {
            cell.trial.validate()?;
        }
        Ok(cells)
    }

    fn cells_impl(&self) -> Result<Vec<SweepCell>> {
        let basis = self.basis_spec()?;
        let mut cells = Vec::new();
        let mut index = 0u64;
        for &method in &self.monitor.methods {
            for &design in &self.policy.designs {
                for &scenario in &self.sim.scenarios {
                    for &[batch, stages] in &self.schedule.cells {
                        for &delta in &self.sim.deltas {
                            let policy = self.design_policy(design);
                            let trial = TrialConfig {
                                method,
                                dgp: Dgp {
                                    scenario,
                                    delta,
                                    noise_sd: self.sim.noise_sd,
                                },
                                policy,
                                basis: basis.clone(),
                                grid: self.grid_source(),
                                n_first: self.schedule.n_first,
                                batch,
                                stages,
                                bootstrap_draws: self.monitor.bootstrap_draws,
                                alpha: self.monitor.alpha,
                                spending: self.monitor.spending,
                                avt_tau2: self.monitor.avt_tau2,
                                seed: self.seed + index * CELL_SEED_STRIDE,
                            };
                            cells.push(SweepCell {
                                method,
                                design: policy.label(),
                                scenario,
                                batch,
                                stages,
                                delta,
                                trial,
                            });
                            index += 1;
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// The unique trial config of a single-cell sweep, for commands that run
    /// one monitor over external data (replay). Errors when any sweep list
    /// has more than one entry. Unlike [`RunConfig::expand`] this skips the
    /// simulation-only checks, so the basis arity may differ from the
    /// synthetic processes'.
    pub fn single_trial(&self) -> Result<TrialConfig> {
        let mut cells = self.cells_impl()?;
        if cells.len() != 1 {
            return Err(Error::Config(format!(
                "this command needs a single-cell config; the sweep expands to {} cells",
                cells.len()
            )));
        }
        let trial = cells.remove(0).trial;
        trial.policy.validate()?;
        Ok(trial)
    }
}
