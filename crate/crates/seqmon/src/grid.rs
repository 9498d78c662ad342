//! Finite evaluation grids standing in for suprema over covariate space.
//!
//! The supremum statistics are maximized over a finite point set: either a
//! fixed cross-product lattice over the basis support, or a uniform random
//! sample of the observed covariates maintained by reservoir sampling.
//! Reservoir decisions are keyed by the running observation index, so the
//! retained set is a deterministic function of `(seed, stream prefix)` and is
//! unchanged by checkpoint/resume or batch boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, StreamDomain};
use rand::Rng;

/// Upper bound on fixed-lattice size, to catch runaway cross products.
const MAX_FIXED_POINTS: usize = 250_000;

/// Where grid points come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSource {
    /// Cross-product lattice with `resolution` points per dimension.
    FixedGrid { resolution: usize },
    /// Uniform sample of observed covariates with the given capacity.
    ObservedSample { reservoir: usize },
}

/// A supremum-evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupGrid {
    source: GridSource,
    points: Vec<Vec<f64>>,
    /// Observations offered to the reservoir so far.
    seen: u64,
    seed: u64,
}

impl SupGrid {
    /// Fixed lattice spanning the given per-dimension intervals, endpoints
    /// included. Requires `resolution >= 2` and at least one dimension.
    pub fn fixed(support: &[(f64, f64)], resolution: usize) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidParam(
                "fixed grid requires at least one dimension with known support".into(),
            ));
        }
        if resolution < 2 {
            return Err(Error::InvalidParam(
                "fixed grid resolution must be at least 2".into(),
            ));
        }
        let total = resolution
            .checked_pow(support.len() as u32)
            .filter(|&t| t <= MAX_FIXED_POINTS)
            .ok_or_else(|| {
                Error::InvalidParam(format!(
                    "fixed grid of {resolution}^{} points exceeds the {MAX_FIXED_POINTS} cap",
                    support.len()
                ))
            })?;
        for (dim, &(lo, hi)) in support.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParam(format!(
                    "invalid support [{lo}, {hi}] in dimension {dim}"
                )));
            }
        }
        let d = support.len();
        let mut points = Vec::with_capacity(total);
        let mut index = vec![0usize; d];
        loop {
            let point: Vec<f64> = (0..d)
                .map(|j| {
                    let (lo, hi) = support[j];
                    lo + (hi - lo) * index[j] as f64 / (resolution - 1) as f64
                })
                .collect();
            points.push(point);
            // Odometer increment over the lattice indices.
            let mut j = d;
            loop {
                if j == 0 {
                    return Ok(SupGrid {
                        source: GridSource::FixedGrid { resolution },
                        points,
                        seen: 0,
                        seed: 0,
                    });
                }
                j -= 1;
                index[j] += 1;
                if index[j] < resolution {
                    break;
                }
                index[j] = 0;
            }
        }
    }

    /// Empty reservoir of the given capacity; `observe` fills it.
    pub fn reservoir(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParam(
                "reservoir capacity must be at least 1".into(),
            ));
        }
        Ok(SupGrid {
            source: GridSource::ObservedSample {
                reservoir: capacity,
            },
            points: Vec::new(),
            seen: 0,
            seed,
        })
    }

    pub fn source(&self) -> GridSource {
        self.source
    }

    /// Offers one observed covariate vector to the reservoir. No-op for
    /// fixed grids.
    pub fn observe(&mut self, x: &[f64]) {
        let GridSource::ObservedSample { reservoir } = self.source else {
            return;
        };
        self.seen += 1;
        if self.points.len() < reservoir {
            self.points.push(x.to_vec());
        } else {
            let mut rng = keyed_rng(self.seed, StreamDomain::GridReservoir, self.seen, 0);
            let j = rng.random_range(0..self.seen);
            if (j as usize) < reservoir {
                self.points[j as usize] = x.to_vec();
            }
        }
    }

    /// Current grid points.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}
