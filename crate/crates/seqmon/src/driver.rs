//! One type over the four sequential tests, so trial execution, log replay
//! and checkpoints can handle any configured method uniformly.

use serde::{Deserialize, Serialize};

use crate::ate::AteMonitor;
use crate::baselines::{AvtMonitor, LilMonitor};
use crate::error::Result;
use crate::qte::{MonitorDecision, QteMonitor};
use crate::simlab::{build_grid, Method, TrialConfig};
use crate::stream::Observation;

/// A monitor of any supported method.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnyMonitor {
    Qte(Box<QteMonitor>),
    Ate(Box<AteMonitor>),
    Lil(Box<LilMonitor>),
    Avt(Box<AvtMonitor>),
}

impl AnyMonitor {
    /// Builds the monitor the config asks for.
    pub fn from_config(cfg: &TrialConfig) -> Result<Self> {
        let grid = || build_grid(cfg.grid, &cfg.basis, cfg.seed);
        Ok(match cfg.method {
            Method::BatQte => AnyMonitor::Qte(Box::new(QteMonitor::new(
                cfg.basis.clone(),
                grid()?,
                cfg.monitor_config()?,
            )?)),
            Method::BatAte => AnyMonitor::Ate(Box::new(AteMonitor::new(
                cfg.basis.clone(),
                cfg.monitor_config()?,
            )?)),
            Method::Lil => {
                AnyMonitor::Lil(Box::new(LilMonitor::new(cfg.basis.clone(), grid()?)?))
            }
            Method::Avt => AnyMonitor::Avt(Box::new(AvtMonitor::new(cfg.avt_tau2, cfg.alpha)?)),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            AnyMonitor::Qte(_) => Method::BatQte,
            AnyMonitor::Ate(_) => Method::BatAte,
            AnyMonitor::Lil(_) => Method::Lil,
            AnyMonitor::Avt(_) => Method::Avt,
        }
    }

    pub fn interim(&mut self, batch: &[Observation]) -> Result<MonitorDecision> {
        match self {
            AnyMonitor::Qte(m) => m.interim(batch),
            AnyMonitor::Ate(m) => m.interim(batch),
            AnyMonitor::Lil(m) => m.interim(batch),
            AnyMonitor::Avt(m) => m.interim(batch),
        }
    }

    pub fn is_terminated(&self) -> bool {
        match self {
            AnyMonitor::Qte(m) => m.is_terminated(),
            AnyMonitor::Ate(m) => m.is_terminated(),
            AnyMonitor::Lil(m) => m.is_terminated(),
            AnyMonitor::Avt(m) => m.is_terminated(),
        }
    }

    pub fn history(&self) -> &[MonitorDecision] {
        match self {
            AnyMonitor::Qte(m) => m.history(),
            AnyMonitor::Ate(m) => m.history(),
            AnyMonitor::Lil(m) => m.history(),
            AnyMonitor::Avt(m) => m.history(),
        }
    }

    /// Interim stages completed so far.
    pub fn stages_done(&self) -> usize {
        self.history().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::grid::GridSource;
    use crate::policies::Policy;
    use crate::qte::Verdict;
    use crate::simlab::{Dgp, Scenario, DIM};
    use crate::spending::SpendingKind;
    use crate::stream::Arm;

    fn cfg(method: Method) -> TrialConfig {
        TrialConfig {
            method,
            dgp: Dgp {
                scenario: Scenario::Quadratic,
                delta: 0.0,
                noise_sd: 0.5,
            },
            policy: Policy::Random { p: 0.5 },
            basis: BasisSpec::linear(DIM),
            grid: GridSource::FixedGrid { resolution: 3 },
            n_first: 100,
            batch: 30,
            stages: 3,
            bootstrap_draws: 64,
            alpha: 0.05,
            spending: SpendingKind::PocockLike,
            avt_tau2: 1.0,
            seed: 3,
        }
    }

    fn batch(n: usize, seed: u64) -> Vec<Observation> {
        use rand::Rng;
        let mut rng = crate::rng::keyed_rng(seed, crate::rng::StreamDomain::Noise, 1, 0);
        (0..n)
            .map(|i| Observation {
                x: vec![
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ],
                arm: if i % 2 == 0 { Arm::Control } else { Arm::Treatment },
                y: rng.random_range(-1.0..1.0),
            })
            .collect()
    }

    #[test]
    fn dispatch_covers_every_method() {
        for method in [Method::BatQte, Method::BatAte, Method::Lil, Method::Avt] {
            let mut mon = AnyMonitor::from_config(&cfg(method)).unwrap();
            assert_eq!(mon.method(), method);
            assert_eq!(mon.stages_done(), 0);
            let d = mon.interim(&batch(100, 8)).unwrap();
            assert_eq!(d.stage, 1);
            assert_eq!(d.verdict, Verdict::Continue);
            assert_eq!(mon.stages_done(), 1);
            assert_eq!(mon.history().len(), 1);
            assert!(!mon.is_terminated());
        }
    }

    #[test]
    fn serialization_preserves_future_decisions() {
        for method in [Method::BatQte, Method::BatAte, Method::Lil, Method::Avt] {
            let mut live = AnyMonitor::from_config(&cfg(method)).unwrap();
            live.interim(&batch(100, 8)).unwrap();
            let json = serde_json::to_string(&live).unwrap();
            let mut restored: AnyMonitor = serde_json::from_str(&json).unwrap();
            let next = batch(60, 9);
            let a = live.interim(&next).unwrap();
            let b = restored.interim(&next).unwrap();
            assert_eq!(a, b, "{method:?} diverged after a round trip");
        }
    }
}
