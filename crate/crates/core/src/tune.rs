//! Threshold selection by grid search, and the M/M/1 model path.

use rayon::prelude::*;
use serde::Serialize;

use crate::criteria::check_c1;
use crate::dist::DelayLaw;
use crate::error::invalid;
use crate::propagate::{expected_improvement, mse, propagate_path_with, raw_moments, PathModel, PropagationOptions};
use crate::{Error, Result};

/// Waiting time of a single M/M/1 egress queue fed by one Poisson flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MM1Model {
    pub mean_packet_bytes: f64,
    pub mean_interarrival_us: f64,
    pub line_rate_bps: f64,
    pub utilization: f64,
    pub mean_wait_ns: f64,
    /// Rate of the busy-period waiting tail, per ns.
    pub rate_per_ns: f64,
}

impl MM1Model {
    pub fn service_time_ns(&self) -> f64 {
        self.mean_packet_bytes * 8.0 * 1e9 / self.line_rate_bps
    }

    /// Atom `1 - ρ` at zero plus an exponential tail.
    pub fn waiting_law(&self) -> DelayLaw {
        DelayLaw::exponential(1.0 - self.utilization, self.rate_per_ns).expect("validated model")
    }

    /// The tail alone, without the idle atom.
    pub fn waiting_law_pure(&self) -> DelayLaw {
        DelayLaw::exponential(0.0, self.rate_per_ns).expect("validated model")
    }
}

/// Builds the model from mean packet size, mean interarrival time and line rate.
pub fn mm1_from_flow(mean_packet_bytes: f64, mean_interarrival_us: f64, line_rate_bps: f64) -> Result<MM1Model> {
    for (name, v) in [
        ("mean packet size", mean_packet_bytes),
        ("mean interarrival time", mean_interarrival_us),
        ("line rate", line_rate_bps),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} {v} must be positive")));
        }
    }
    let service = mean_packet_bytes * 8.0 * 1e9 / line_rate_bps;
    let interarrival = mean_interarrival_us * 1e3;
    let rho = service / interarrival;
    if rho >= 1.0 {
        return Err(Error::UnstableQueue(rho));
    }
    let rate = 1.0 / service - 1.0 / interarrival;
    Ok(MM1Model {
        mean_packet_bytes,
        mean_interarrival_us,
        line_rate_bps,
        utilization: rho,
        mean_wait_ns: rho / rate,
        rate_per_ns: rate,
    })
}

/// Log-spaced candidate thresholds, both ends included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Search {
    pub lo_ns: f64,
    pub hi_ns: f64,
    pub steps: usize,
}

impl Search {
    pub const DEFAULT_STEPS: usize = 512;

    pub fn new(lo_ns: f64, hi_ns: f64, steps: usize) -> Result<Self> {
        let s = Search { lo_ns, hi_ns, steps };
        s.validate()?;
        Ok(s)
    }

    /// `[λ*, 3λ*]` for a mean wait `λ*`.
    pub fn around_mean_wait(mean_wait_ns: f64) -> Result<Self> {
        Self::new(mean_wait_ns, 3.0 * mean_wait_ns, Self::DEFAULT_STEPS)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo_ns > 0.0 && self.lo_ns.is_finite()) {
            return Err(invalid(format!("search start {} must be positive", self.lo_ns)));
        }
        if !(self.hi_ns >= self.lo_ns && self.hi_ns.is_finite()) {
            return Err(invalid(format!("search end {} below start {}", self.hi_ns, self.lo_ns)));
        }
        if self.steps == 0 {
            return Err(Error::EmptyInput("search grid"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 || self.hi_ns == self.lo_ns {
            return vec![self.lo_ns];
        }
        let ratio = (self.hi_ns / self.lo_ns).ln() / (self.steps - 1) as f64;
        let mut pts: Vec<f64> = (0..self.steps).map(|i| self.lo_ns * (ratio * i as f64).exp()).collect();
        pts[self.steps - 1] = self.hi_ns;
        pts
    }
}

/// Both directions of a client-server path. Reverse hops are listed in
/// travel order, starting at the server.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPair {
    pub fwd: Vec<DelayLaw>,
    pub rev: Vec<DelayLaw>,
}

impl PathPair {
    pub fn new(fwd: Vec<DelayLaw>, rev: Vec<DelayLaw>) -> Result<Self> {
        if fwd.is_empty() || rev.is_empty() {
            return Err(Error::EmptyInput("hop laws"));
        }
        if fwd.len() != rev.len() {
            return Err(invalid(format!(
                "forward path has {} hops, reverse has {}",
                fwd.len(),
                rev.len()
            )));
        }
        Ok(PathPair { fwd, rev })
    }

    /// Same laws in both directions.
    pub fn symmetric(hops: Vec<DelayLaw>) -> Result<Self> {
        let rev = hops.iter().rev().cloned().collect();
        Self::new(hops, rev)
    }

    pub fn raw_mse(&self) -> f64 {
        mse(&raw_moments(&self.fwd), &raw_moments(&self.rev))
    }
}

/// Marking parameters other than the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marking {
    pub levels: u32,
    pub capacity: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub delta_star_ns: f64,
    pub levels: u32,
    pub capacity: u64,
    pub mse_raw: f64,
    pub mse_comp: f64,
    /// `None` when the raw MSE is zero.
    pub improvement: Option<f64>,
}

/// Corrected and raw MSE at one threshold.
pub fn evaluate(paths: &PathPair, marking: Marking, delta_star: f64, opts: &PropagationOptions) -> Result<Evaluation> {
    let run = |hops: &[DelayLaw]| {
        let path = PathModel::new(hops.to_vec(), delta_star, marking.levels, marking.capacity)?;
        propagate_path_with(&path, opts).map(|p| p.error_law)
    };
    let fwd = run(&paths.fwd)?;
    let rev = run(&paths.rev)?;
    let mse_raw = paths.raw_mse();
    let mse_comp = mse(&fwd, &rev);
    let improvement = if mse_raw > 0.0 {
        Some(expected_improvement(mse_comp, mse_raw)?)
    } else {
        None
    };
    Ok(Evaluation {
        delta_star_ns: delta_star,
        levels: marking.levels,
        capacity: marking.capacity,
        mse_raw,
        mse_comp,
        improvement,
    })
}

/// Evaluates every grid point, in grid order.
pub fn scan(paths: &PathPair, marking: Marking, search: &Search, opts: &PropagationOptions) -> Result<Vec<Evaluation>> {
    search.validate()?;
    search
        .points()
        .into_par_iter()
        .map(|x| evaluate(paths, marking, x, opts))
        .collect()
}

/// Lowest MSE on the grid; ties go to the smallest threshold.
pub fn optimize_threshold(
    paths: &PathPair,
    marking: Marking,
    search: &Search,
    opts: &PropagationOptions,
) -> Result<Evaluation> {
    let rows = scan(paths, marking, search, opts)?;
    let best = argmin(&rows).ok_or(Error::EmptyInput("search grid"))?;
    warn_if_c1_fails(paths, &best);
    Ok(best)
}

fn argmin(rows: &[Evaluation]) -> Option<Evaluation> {
    rows.iter()
        .copied()
        .reduce(|best, e| if e.mse_comp < best.mse_comp { e } else { best })
}

fn warn_if_c1_fails(paths: &PathPair, best: &Evaluation) {
    for (dir, hops) in [("forward", &paths.fwd), ("reverse", &paths.rev)] {
        for (i, law) in hops.iter().enumerate() {
            if let Ok((false, rhs)) = check_c1(law, best.delta_star_ns, best.levels) {
                log::warn!(
                    "C1 fails on {dir} hop {i} at optimum {:.1} ns with R={} (needs {rhs:.1} ns)",
                    best.delta_star_ns,
                    best.levels
                );
            }
        }
    }
}

/// Every candidate of a sweep over `R`, and the optimum per `R`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<Evaluation>,
    pub best: Vec<Evaluation>,
    /// Whether the best MSE never rises with `R`.
    pub monotone: bool,
}

impl SweepResult {
    pub fn best_for(&self, levels: u32) -> Option<&Evaluation> {
        self.best.iter().find(|e| e.levels == levels)
    }
}

/// Optimizes the threshold for each `R` at a fixed capacity.
pub fn sweep_r(
    paths: &PathPair,
    capacity: u64,
    levels: &[u32],
    search: &Search,
    opts: &PropagationOptions,
) -> Result<SweepResult> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("level list"));
    }
    let mut rows = Vec::with_capacity(levels.len() * search.steps);
    let mut best = Vec::with_capacity(levels.len());
    for &r in levels {
        let marking = Marking { levels: r, capacity };
        let scanned = scan(paths, marking, search, opts)?;
        let b = argmin(&scanned).ok_or(Error::EmptyInput("search grid"))?;
        warn_if_c1_fails(paths, &b);
        best.push(b);
        rows.extend(scanned);
    }
    let mut order: Vec<&Evaluation> = best.iter().collect();
    order.sort_by_key(|e| e.levels);
    let monotone = order
        .windows(2)
        .all(|w| w[1].mse_comp <= w[0].mse_comp * (1.0 + 1e-9));
    if !monotone {
        log::warn!("best MSE rises with R at N={capacity}; refine the search grid");
    }
    Ok(SweepResult { rows, best, monotone })
}
