//! Four-timestamp offset estimation and marking-based compensation.
//!
//! `t1` client send, `t2` server receive, `t3` server send, `t4` client
//! receive. The server clock leads the client by `θ`; the estimate error is
//! `ε = θ - θ̂`.

use serde::{Deserialize, Serialize};

use crate::cmc::{delay_level, CounterState};
use crate::error::invalid;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncRound {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    pub fwd_counter: CounterState,
    pub rev_counter: CounterState,
    pub delta_star_ns: f64,
    pub true_offset_ns: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetEstimate {
    pub theta_hat_ns: f64,
    /// `θ - θ̂` when the true offset is known.
    pub epsilon_ns: Option<f64>,
    pub compensated: bool,
    /// A compensation larger than the measured one-way delay.
    pub negative_queuing: bool,
}

impl SyncRound {
    /// Round trip with the residence time at the server removed.
    pub fn round_trip(&self) -> i64 {
        (self.t2 - self.t1) + (self.t4 - self.t3)
    }

    /// One-way delay estimates `(t2 - t1, t4 - t3)`, optionally compensated.
    pub fn delay_estimates(&self, compensated: bool) -> (f64, f64) {
        let (cf, cr) = if compensated { self.compensation() } else { (0.0, 0.0) };
        ((self.t2 - self.t1) as f64 - cf, (self.t4 - self.t3) as f64 - cr)
    }

    fn compensation(&self) -> (f64, f64) {
        (
            self.fwd_counter.0 as f64 * self.delta_star_ns,
            self.rev_counter.0 as f64 * self.delta_star_ns,
        )
    }
}

fn finish(round: &SyncRound, t2: f64, t4: f64, compensated: bool, negative_queuing: bool) -> OffsetEstimate {
    let theta_hat = ((t2 - round.t1 as f64) + (round.t3 as f64 - t4)) / 2.0;
    OffsetEstimate {
        theta_hat_ns: theta_hat,
        epsilon_ns: round.true_offset_ns.map(|th| th as f64 - theta_hat),
        compensated,
        negative_queuing,
    }
}

/// `θ̂ = ((t2 - t1) + (t3 - t4)) / 2`.
pub fn estimate_offset(round: &SyncRound) -> OffsetEstimate {
    finish(round, round.t2 as f64, round.t4 as f64, false, false)
}

fn compensated(round: &SyncRound) -> OffsetEstimate {
    let (cf, cr) = round.compensation();
    let negative = cf > (round.t2 - round.t1) as f64 || cr > (round.t4 - round.t3) as f64;
    finish(round, round.t2 as f64 - cf, round.t4 as f64 - cr, true, negative)
}

/// Server rewrites `t2` as `t2 - n_fwd·δ*`, the client subtracts `n_rev·δ*` from `t4`.
pub fn compensate_server_mode(round: &SyncRound) -> OffsetEstimate {
    compensated(round)
}

/// The response carries both counters and the client applies both corrections.
/// Same arithmetic as the server-side variant, so results are bit-identical.
pub fn compensate_fr_mode(round: &SyncRound) -> OffsetEstimate {
    compensated(round)
}

/// Residual of one hop: `r = min(floor(q/δ*), R, budget)`, error `q - r·δ*`.
pub fn per_hop_corrected_error(delta_q: f64, levels: u32, delta_star: f64, budget: u64) -> Result<(f64, u32)> {
    if delta_q.is_nan() || delta_q < 0.0 {
        return Err(invalid(format!("queuing delay {delta_q} must be non-negative")));
    }
    if !(delta_star > 0.0) {
        return Err(invalid(format!("threshold delay {delta_star} must be positive")));
    }
    let r = delay_level(delta_q, delta_star)
        .min(u64::from(levels))
        .min(budget) as u32;
    Ok((delta_q - r as f64 * delta_star, r))
}

/// Folds [`per_hop_corrected_error`] over a path sharing one counter budget.
/// Returns the summed residual and the final counter.
pub fn path_corrected_error(delays: &[f64], levels: u32, delta_star: f64, capacity: u64) -> Result<(f64, u64)> {
    let mut total = 0.0;
    let mut used = 0u64;
    for &q in delays {
        let (e, r) = per_hop_corrected_error(q, levels, delta_star, capacity - used)?;
        total += e;
        used += u64::from(r);
    }
    Ok((total, used))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const US: i64 = 1000;

    fn round(t: [i64; 4], theta: i64) -> SyncRound {
        SyncRound {
            t1: t[0],
            t2: t[1],
            t3: t[2],
            t4: t[3],
            fwd_counter: CounterState(0),
            rev_counter: CounterState(0),
            delta_star_ns: 10_000.0,
            true_offset_ns: Some(theta),
        }
    }

    #[test]
    fn raw_estimates() {
        let e = estimate_offset(&round([0, 10 * US, 20 * US, 30 * US], 0));
        assert_eq!((e.theta_hat_ns, e.epsilon_ns), (0.0, Some(0.0)));

        let e = estimate_offset(&round([0, 15 * US, 20 * US, 25 * US], 0));
        assert_eq!(e.theta_hat_ns, 5000.0);
        assert_eq!(e.epsilon_ns, Some(-5000.0));

        let th = 7 * US;
        let e = estimate_offset(&round([0, 10 * US + th, 20 * US + th, 30 * US], th));
        assert_eq!(e.theta_hat_ns, 7000.0);
        assert_eq!(e.epsilon_ns, Some(0.0));
    }

    #[test]
    fn exact_compensation() {
        let mut r = round([0, 15 * US, 20 * US, 25 * US], 0);
        assert_eq!(compensate_server_mode(&r).theta_hat_ns, estimate_offset(&r).theta_hat_ns);
        r.fwd_counter = CounterState(1);
        let e = compensate_server_mode(&r);
        assert_eq!(e.epsilon_ns, Some(0.0));
        assert!(e.compensated && !e.negative_queuing);
    }

    #[test]
    fn overcorrection_leaves_positive_error() {
        // 8 us base each way, 8 us queued on the request only, one mark of 10 us
        let mut r = round([0, 16 * US, 16 * US, 24 * US], 0);
        r.fwd_counter = CounterState(1);
        assert_eq!(compensate_server_mode(&r).epsilon_ns, Some(1000.0));
    }

    #[test]
    fn negative_implied_queuing_is_flagged() {
        let mut r = round([0, 5 * US, 5 * US, 10 * US], 0);
        r.fwd_counter = CounterState(1);
        let e = compensate_fr_mode(&r);
        assert!(e.negative_queuing);
        assert_eq!(e.epsilon_ns, Some(5000.0));
    }

    #[test]
    fn per_hop_examples() {
        assert_eq!(per_hop_corrected_error(0.0, 2, 10.0, 5).unwrap(), (0.0, 0));
        assert_eq!(per_hop_corrected_error(25.0, 2, 10.0, 2).unwrap(), (5.0, 2));
        assert_eq!(per_hop_corrected_error(25.0, 2, 10.0, 1).unwrap(), (15.0, 1));
        assert!(per_hop_corrected_error(-1.0, 2, 10.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn modes_agree_bitwise(
            t1 in -1_000_000i64..1_000_000,
            d in prop::array::uniform3(0i64..10_000_000),
            nf in 0u64..20, nr in 0u64..20,
            delta in 1.0..1e6f64,
            theta in -1_000_000i64..1_000_000,
        ) {
            let r = SyncRound {
                t1, t2: t1 + d[0] + theta, t3: t1 + d[0] + theta + d[1], t4: t1 + d[0] + d[1] + d[2],
                fwd_counter: CounterState(nf), rev_counter: CounterState(nr),
                delta_star_ns: delta, true_offset_ns: Some(theta),
            };
            let a = compensate_server_mode(&r);
            let b = compensate_fr_mode(&r);
            prop_assert_eq!(a.theta_hat_ns.to_bits(), b.theta_hat_ns.to_bits());
            prop_assert_eq!(a.epsilon_ns.map(f64::to_bits), b.epsilon_ns.map(f64::to_bits));
        }

        #[test]
        fn summed_residuals_match_end_to_end_compensation(
            fwd in prop::collection::vec(0u32..50_000, 1..6),
            rev in prop::collection::vec(0u32..50_000, 1..6),
            levels in 1u32..4, cap in 4u64..10,
            delta in 1000u32..20_000,
        ) {
            let delta = f64::from(delta);
            let fq: Vec<f64> = fwd.iter().map(|&x| f64::from(x)).collect();
            let rq: Vec<f64> = rev.iter().map(|&x| f64::from(x)).collect();
            let (ef, nf) = path_corrected_error(&fq, levels, delta, cap).unwrap();
            let (er, nr) = path_corrected_error(&rq, levels, delta, cap).unwrap();
            let base = 3_000i64;
            let sum_f: i64 = fwd.iter().map(|&x| i64::from(x)).sum();
            let sum_r: i64 = rev.iter().map(|&x| i64::from(x)).sum();
            let t2 = base + sum_f;
            let r = SyncRound {
                t1: 0, t2, t3: t2 + 500, t4: t2 + 500 + base + sum_r,
                fwd_counter: CounterState(nf), rev_counter: CounterState(nr),
                delta_star_ns: delta, true_offset_ns: Some(0),
            };
            let eps = compensate_server_mode(&r).epsilon_ns.unwrap();
            prop_assert!((eps - (er - ef) / 2.0).abs() < 1e-6);
            prop_assert!((ef - (sum_f as f64 - nf as f64 * delta)).abs() < 1e-6);
        }
    }
}
