//! Sufficient conditions for marking to help, and the regions where they hold.
//!
//! With threshold delay `x` and `R` levels the corrected delay is
//! `X_R = X - x·min(level(X), R)`. C1 bounds the variance of one direction,
//! C2 and C3 bound the squared difference of the two directions' means.

use serde::Serialize;

use crate::dist::DelayLaw;
use crate::error::invalid;
use crate::Result;

/// Relative gap below which two means count as equal.
const MEAN_TIE: f64 = 1e-12;
/// Probability of the upper quantile used as the range of unbounded laws.
pub const RANGE_QUANTILE: f64 = 0.9999;
const GRID_POINTS: usize = 1024;

fn check_threshold(delta_star: f64, levels: u32) -> Result<()> {
    if !(delta_star > 0.0 && delta_star.is_finite()) {
        return Err(invalid(format!("threshold delay {delta_star} must be positive")));
    }
    if levels == 0 {
        return Err(invalid("level count must be at least 1"));
    }
    Ok(())
}

/// Returns whether C1 holds and its right-hand side
/// `2µ / (1 + (2R-1)·P(X > Rx))`.
pub fn check_c1(law: &DelayLaw, delta_star: f64, levels: u32) -> Result<(bool, f64)> {
    check_threshold(delta_star, levels)?;
    let mu = law.mean();
    if mu <= 0.0 {
        return Ok((true, 0.0));
    }
    let tail = law.ccdf(f64::from(levels) * delta_star)?;
    let rhs = 2.0 * mu / (1.0 + f64::from(2 * levels - 1) * tail);
    Ok((delta_star >= rhs, rhs))
}

/// `P_req(X > rx) > P_resp(X > rx)` for every `r` in `1..=R`.
///
/// `req` must have the larger mean. Equal means fail the strict ordering;
/// in that regime the mean term is already zero and C2 is not needed.
pub fn check_c2(req: &DelayLaw, resp: &DelayLaw, delta_star: f64, levels: u32) -> Result<bool> {
    check_threshold(delta_star, levels)?;
    orientation(req, resp)?;
    for r in 1..=levels {
        let t = f64::from(r) * delta_star;
        if req.ccdf(t)? <= resp.ccdf(t)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Returns whether `x < UB` with `UB = 2(µ_req - µ_resp) / Σ_r (P_req(X > rx) - P_resp(X > rx))`.
pub fn check_c3(req: &DelayLaw, resp: &DelayLaw, delta_star: f64, levels: u32) -> Result<(bool, f64)> {
    check_threshold(delta_star, levels)?;
    orientation(req, resp)?;
    let gap = tail_gap(req, resp, delta_star, levels)?;
    let diff = req.mean() - resp.mean();
    let ub = if gap == 0.0 { f64::INFINITY } else { 2.0 * diff / gap };
    Ok((delta_star < ub, ub))
}

fn orientation(req: &DelayLaw, resp: &DelayLaw) -> Result<()> {
    let (a, b) = (req.mean(), resp.mean());
    if a < b && !means_tie(a, b) {
        return Err(invalid(format!(
            "first law must have the larger mean ({a} < {b})"
        )));
    }
    Ok(())
}

fn means_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= MEAN_TIE * a.abs().max(b.abs())
}

fn tail_gap(req: &DelayLaw, resp: &DelayLaw, delta_star: f64, levels: u32) -> Result<f64> {
    let mut gap = 0.0;
    for r in 1..=levels {
        let t = f64::from(r) * delta_star;
        gap += req.ccdf(t)? - resp.ccdf(t)?;
    }
    Ok(gap)
}

/// Mean of `X_R`.
pub fn mean_after_marking(law: &DelayLaw, delta_star: f64, levels: u32) -> Result<f64> {
    Ok(marked_moments(law, delta_star, levels)?.0)
}

/// Variance of `X_R`.
pub fn variance_after_marking(law: &DelayLaw, delta_star: f64, levels: u32) -> Result<f64> {
    let (m1, m2) = marked_moments(law, delta_star, levels)?;
    Ok((m2 - m1 * m1).max(0.0))
}

fn marked_moments(law: &DelayLaw, delta_star: f64, levels: u32) -> Result<(f64, f64)> {
    check_threshold(delta_star, levels)?;
    let top = u64::from(levels);
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for r in 0..=top {
        let hi = if r == top { None } else { Some(r + 1) };
        let [_, a, b] = law.level_moments(delta_star, r, hi);
        m1 += a;
        m2 += b;
    }
    Ok((m1, m2))
}

/// Squared difference of the two directions' means after marking.
pub fn bias_after_marking(req: &DelayLaw, resp: &DelayLaw, delta_star: f64, levels: u32) -> Result<f64> {
    let d = mean_after_marking(req, delta_star, levels)? - mean_after_marking(resp, delta_star, levels)?;
    Ok(d * d)
}

/// Which region [`improvement_region_fraction`] measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RegionMode {
    /// Thresholds where C1 holds.
    #[default]
    Sufficient,
    /// Thresholds where the variance actually drops.
    Actual,
}

/// Upper end of the threshold range: the largest support point, or a high
/// quantile for unbounded laws.
pub fn threshold_range(law: &DelayLaw) -> f64 {
    match law.upper_support() {
        Some(x) => x,
        None => law.quantile(RANGE_QUANTILE),
    }
}

fn grid(hi: f64) -> impl Iterator<Item = f64> {
    (1..=GRID_POINTS).map(move |i| hi * i as f64 / GRID_POINTS as f64)
}

/// Smallest threshold in `(0, range]` where C1 holds.
///
/// Scans a grid and refines the first crossing by bisection on
/// `x - rhs(x)`. `None` when C1 fails on the whole grid.
pub fn ir_lower_bound(law: &DelayLaw, levels: u32) -> Result<Option<f64>> {
    let hi = threshold_range(law);
    if law.mean() <= 0.0 || hi <= 0.0 {
        return Ok(Some(0.0));
    }
    let holds = |x: f64| check_c1(law, x, levels).map(|(h, _)| h);
    let mut prev = 0.0;
    for x in grid(hi) {
        if holds(x)? {
            let (mut lo, mut up) = (prev, x);
            for _ in 0..60 {
                let mid = 0.5 * (lo + up);
                if holds(mid)? {
                    up = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(up));
        }
        prev = x;
    }
    Ok(None)
}

/// Fraction of the threshold range covered by the improvement region.
///
/// When the region is a single upper interval its edge is located by
/// bisection; otherwise the grid count is used.
pub fn improvement_region_fraction(law: &DelayLaw, levels: u32, mode: RegionMode) -> Result<f64> {
    if levels == 0 {
        return Err(invalid("level count must be at least 1"));
    }
    let hi = threshold_range(law);
    if law.is_degenerate() || hi <= 0.0 {
        return Ok(1.0);
    }
    let var = law.variance();
    let inside = |x: f64| -> Result<bool> {
        match mode {
            RegionMode::Sufficient => Ok(check_c1(law, x, levels)?.0),
            RegionMode::Actual => Ok(variance_after_marking(law, x, levels)? < var),
        }
    };
    let flags = grid(hi).map(inside).collect::<Result<Vec<bool>>>()?;
    let count = flags.iter().filter(|&&f| f).count();
    let first = flags.iter().position(|&f| f);
    let upper_interval = first.is_some_and(|i| flags[i..].iter().all(|&f| f));
    if mode == RegionMode::Sufficient && upper_interval {
        let lb = ir_lower_bound(law, levels)?.unwrap_or(hi);
        return Ok(((hi - lb) / hi).clamp(0.0, 1.0));
    }
    Ok(count as f64 / GRID_POINTS as f64)
}

/// Every condition at one `(x, R)` for a forward/reverse pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub delta_star_ns: f64,
    pub levels: u32,
    /// C1 on both directions.
    pub c1_holds: bool,
    pub c1_fwd: bool,
    pub c1_rev: bool,
    pub c2_holds: bool,
    pub c3_holds: bool,
    /// Equal means: the mean term vanishes and C2/C3 are not needed.
    pub a1_regime: bool,
    /// Larger of the two directions' bounds.
    pub ir_lower_bound: f64,
    pub c3_upper_bound: f64,
    /// Smaller of the two directions' fractions.
    pub ir_fraction: f64,
}

/// Evaluates C1 on each direction and C2/C3 on the pair, ordered by mean.
pub fn evaluate_conditions(fwd: &DelayLaw, rev: &DelayLaw, delta_star: f64, levels: u32) -> Result<ConditionReport> {
    let (c1_fwd, _) = check_c1(fwd, delta_star, levels)?;
    let (c1_rev, _) = check_c1(rev, delta_star, levels)?;
    let (req, resp) = if fwd.mean() >= rev.mean() { (fwd, rev) } else { (rev, fwd) };
    let a1_regime = means_tie(req.mean(), resp.mean());
    let c2_holds = check_c2(req, resp, delta_star, levels)?;
    let (c3_holds, c3_upper_bound) = check_c3(req, resp, delta_star, levels)?;
    let lb = |law| ir_lower_bound(law, levels).map(|b| b.unwrap_or(f64::INFINITY));
    let ir_lower_bound = lb(fwd)?.max(lb(rev)?);
    let ir_fraction = improvement_region_fraction(fwd, levels, RegionMode::Sufficient)?
        .min(improvement_region_fraction(rev, levels, RegionMode::Sufficient)?);
    Ok(ConditionReport {
        delta_star_ns: delta_star,
        levels,
        c1_holds: c1_fwd && c1_rev,
        c1_fwd,
        c1_rev,
        c2_holds,
        c3_holds,
        a1_regime,
        ir_lower_bound,
        c3_upper_bound,
        ir_fraction,
    })
}

#[cfg(test)]
mod tests;
