use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::RoundRecord;
use crate::error::invalid;
use crate::sync::{compensate_server_mode, estimate_offset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Offset of the round with the smallest round-trip estimate.
    MinRtt,
    /// Offset of the round with the median round-trip estimate (lower median).
    MedianRtt,
    MovingAverage,
}

/// Sliding window over the last `M` rounds.
#[derive(Clone, Debug)]
pub struct FilterWindow {
    kind: FilterKind,
    len: usize,
    /// `(fwd delay estimate, rev delay estimate, offset estimate)`.
    ring: VecDeque<(f64, f64, f64)>,
}

impl FilterWindow {
    pub fn new(kind: FilterKind, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(invalid("filter window must hold at least one round"));
        }
        Ok(Self {
            kind,
            len,
            ring: VecDeque::with_capacity(len),
        })
    }

    /// Adds a round and returns the filtered offset.
    pub fn push(&mut self, fwd: f64, rev: f64, offset: f64) -> f64 {
        if self.ring.len() == self.len {
            self.ring.pop_front();
        }
        self.ring.push_back((fwd, rev, offset));
        self.output().expect("window is non-empty")
    }

    pub fn output(&self) -> Option<f64> {
        if self.ring.is_empty() {
            return None;
        }
        let rtt = |e: &(f64, f64, f64)| e.0 + e.1;
        Some(match self.kind {
            FilterKind::MinRtt => {
                let mut best = self.ring[0];
                for e in self.ring.iter().skip(1) {
                    if rtt(e) < rtt(&best) {
                        best = *e;
                    }
                }
                best.2
            }
            FilterKind::MedianRtt => {
                let mut v: Vec<_> = self.ring.iter().copied().collect();
                v.sort_by(|a, b| rtt(a).total_cmp(&rtt(b)));
                v[(v.len() - 1) / 2].2
            }
            FilterKind::MovingAverage => self.ring.iter().map(|e| e.2).sum::<f64>() / self.ring.len() as f64,
        })
    }
}

/// Filtered offset-estimate errors `θ - θ̂_filtered`, one per round.
///
/// With `compensated` set, the delay estimates that drive selection and the
/// offsets themselves both use the corrected timestamps.
pub fn apply_filter(kind: FilterKind, len: usize, rounds: &[RoundRecord], compensated: bool) -> Result<Vec<f64>> {
    let mut window = FilterWindow::new(kind, len)?;
    rounds
        .iter()
        .map(|r| {
            let est = if compensated {
                compensate_server_mode(&r.sync)
            } else {
                estimate_offset(&r.sync)
            };
            let theta = r
                .sync
                .true_offset_ns
                .ok_or_else(|| invalid("round lacks a true offset"))? as f64;
            let (fwd, rev) = r.sync.delay_estimates(compensated);
            Ok(theta - window.push(fwd, rev, est.theta_hat_ns))
        })
        .collect()
}

/// Root mean square.
pub fn measure_rms(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptyInput("error series"));
    }
    Ok((series.iter().map(|x| x * x).sum::<f64>() / series.len() as f64).sqrt())
}
