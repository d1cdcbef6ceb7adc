//! Switch-side marking: congestion level from queue occupancy, the bounded
//! counter update, and header capacity arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{Error, Result};

/// Tofino queue depth granularity.
pub const CELL_BYTES: u64 = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// One bit per increment; `N = b`.
    BitShift,
    /// Binary counter; `N = 2^(b-1)`.
    IntegerCounter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Client to server (request).
    #[serde(alias = "fwd")]
    Forward,
    /// Server to client (response).
    #[serde(alias = "rev")]
    Reverse,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Reverse => "rev",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingConfig {
    /// Byte threshold `K` per level.
    pub threshold_bytes: u64,
    /// Levels per hop, `R`.
    pub levels: u32,
    /// Header bits available for the counter.
    pub header_bits: u32,
    pub line_rate_bps: f64,
    pub encoding: Encoding,
    #[serde(default)]
    pub fr_split: bool,
    /// Emulate a switch that reads depth in 80-byte cells shifted right by this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_exponent: Option<u32>,
    /// Replaces the encoding-derived capacity (per direction).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_override: Option<u64>,
    /// When set, the compensation step is `8(K + mtu)/LR` instead of `8K/LR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtu_bytes: Option<u64>,
}

impl MarkingConfig {
    /// Single level, one bit, no split.
    pub fn classic(threshold_bytes: u64, line_rate_bps: f64) -> Self {
        Self {
            threshold_bytes,
            levels: 1,
            header_bits: 1,
            line_rate_bps,
            encoding: Encoding::BitShift,
            fr_split: false,
            cell_exponent: None,
            capacity_override: None,
            mtu_bytes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_bytes == 0 {
            return Err(invalid("threshold_bytes must be positive"));
        }
        if self.levels == 0 {
            return Err(invalid("levels must be at least 1"));
        }
        if !(self.line_rate_bps > 0.0 && self.line_rate_bps.is_finite()) {
            return Err(invalid("line_rate_bps must be positive"));
        }
        if let Some(n) = self.cell_exponent {
            let k = CELL_BYTES.checked_shl(n).filter(|_| n < 57);
            if k != Some(self.threshold_bytes) {
                return Err(invalid(format!(
                    "cell_exponent {n} requires threshold_bytes = 80·2^{n}, got {}",
                    self.threshold_bytes
                )));
            }
        }
        if self.capacity_override == Some(0) {
            return Err(invalid("capacity_override must be positive"));
        }
        for dir in [Direction::Forward, Direction::Reverse] {
            let n = self.capacity(dir)?;
            if u64::from(self.levels) > n {
                return Err(invalid(format!("levels {} exceed counter capacity {n}", self.levels)));
            }
        }
        Ok(())
    }

    /// Counter capacity available to one direction.
    pub fn capacity(&self, direction: Direction) -> Result<u64> {
        let (f, r) = encoding_capacity(self.header_bits, self.encoding, self.fr_split)?;
        if let Some(n) = self.capacity_override {
            return Ok(n);
        }
        Ok(match direction {
            Direction::Forward => f,
            Direction::Reverse => r,
        })
    }

    /// Delay credited per mark, in ns.
    pub fn delta_star_ns(&self) -> f64 {
        threshold_delay(self.threshold_bytes + self.mtu_bytes.unwrap_or(0), self.line_rate_bps)
    }
}

/// Counter value carried in a header.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CounterState(pub u64);

impl CounterState {
    pub fn value(self) -> u64 {
        self.0
    }
}

/// Both direction counters of one exchange. Without a split only one is
/// used per packet; with a split the response carries both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MarkingHeader {
    pub forward: CounterState,
    pub reverse: CounterState,
}

impl MarkingHeader {
    pub fn mark(&mut self, queue_bits: u64, config: &MarkingConfig, direction: Direction) -> Result<()> {
        let slot = match direction {
            Direction::Forward => &mut self.forward,
            Direction::Reverse => &mut self.reverse,
        };
        *slot = mark_packet(*slot, queue_bits, config, direction)?;
        Ok(())
    }
}

/// `min(floor(queue_bits / 8K), R)`.
pub fn congestion_level(queue_bits: u64, config: &MarkingConfig) -> u32 {
    if let Some(n) = config.cell_exponent {
        return cell_level(queue_bits / (8 * CELL_BYTES), n, config.levels);
    }
    let steps = queue_bits / (8 * config.threshold_bytes);
    steps.min(u64::from(config.levels)) as u32
}

/// `min(depth >> n, R)` on a depth counted in cells.
pub fn cell_level(enq_qdepth_cells: u64, n: u32, levels: u32) -> u32 {
    let shifted = enq_qdepth_cells.checked_shr(n).unwrap_or(0);
    shifted.min(u64::from(levels)) as u32
}

/// `y = x + min(r, N - x)`.
pub fn counter_update(x: CounterState, level: u32, capacity: u64) -> Result<CounterState> {
    if x.0 > capacity {
        return Err(Error::CorruptCounter {
            value: x.0,
            capacity,
        });
    }
    Ok(CounterState(x.0 + u64::from(level).min(capacity - x.0)))
}

pub fn mark_packet(
    counter: CounterState,
    queue_bits: u64,
    config: &MarkingConfig,
    direction: Direction,
) -> Result<CounterState> {
    let capacity = config.capacity(direction)?;
    counter_update(counter, congestion_level(queue_bits, config), capacity)
}

/// `8K / LR` in ns.
pub fn threshold_delay(threshold_bytes: u64, line_rate_bps: f64) -> f64 {
    threshold_bytes as f64 * 8.0 * 1e9 / line_rate_bps
}

/// `8(K + MTU) / LR` in ns.
pub fn threshold_delay_with_mtu(threshold_bytes: u64, mtu_bytes: u64, line_rate_bps: f64) -> f64 {
    threshold_delay(threshold_bytes + mtu_bytes, line_rate_bps)
}

/// Byte threshold whose delay is `delay_ns` (rounded to the nearest byte).
pub fn threshold_bytes_for_delay(delay_ns: f64, line_rate_bps: f64) -> u64 {
    (delay_ns * line_rate_bps / 8e9).round().max(1.0) as u64
}

/// `(N_forward, N_reverse)` for `b` header bits.
pub fn encoding_capacity(header_bits: u32, encoding: Encoding, fr_split: bool) -> Result<(u64, u64)> {
    if header_bits == 0 {
        return Err(invalid("header_bits must be at least 1"));
    }
    if header_bits > 64 {
        return Err(invalid("header_bits above 64 are not supported"));
    }
    if fr_split && header_bits % 2 == 1 {
        return Err(invalid(format!("split marking needs an even bit budget, got {header_bits}")));
    }
    let n = match encoding {
        Encoding::BitShift => u64::from(header_bits),
        Encoding::IntegerCounter => 1u64 << (header_bits - 1),
    };
    let n = if fr_split { n / 2 } else { n };
    Ok((n, n))
}

/// Number of whole thresholds `delay` spans: `floor(delay / δ)`, with values
/// within a relative 1e-9 of a boundary snapped onto it.
pub fn delay_level(delay: f64, delta: f64) -> u64 {
    if delay <= 0.0 {
        return 0;
    }
    let q = delay / delta;
    let near = q.round();
    if (q - near).abs() <= 1e-9 * near.max(1.0) {
        near as u64
    } else {
        q.floor() as u64
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn config(k: u64, r: u32) -> MarkingConfig {
        MarkingConfig {
            levels: r,
            header_bits: 8,
            ..MarkingConfig::classic(k, 1e9)
        }
    }

    #[test]
    fn congestion_level_examples() {
        let c = config(3600, 2);
        assert_eq!(congestion_level(0, &c), 0);
        assert_eq!(congestion_level(8 * 7300, &c), 2);
        assert_eq!(congestion_level(8 * 3600, &c), 1);
        assert_eq!(congestion_level(8 * 3600 - 1, &c), 0);
        assert_eq!(congestion_level(u64::MAX, &c), 2);
    }

    #[test]
    fn cell_level_examples() {
        assert_eq!(cell_level(0, 4, 8), 0);
        assert_eq!(cell_level(100, 4, 8), 6);
        assert_eq!(cell_level(100, 4, 4), 4);
        assert_eq!(cell_level(100, 70, 4), 0);
    }

    #[test]
    fn counter_update_examples() {
        assert_eq!(counter_update(CounterState(4), 3, 4).unwrap(), CounterState(4));
        assert_eq!(counter_update(CounterState(3), 2, 4).unwrap(), CounterState(4));
        assert_eq!(counter_update(CounterState(0), 0, 4).unwrap(), CounterState(0));
        assert!(matches!(
            counter_update(CounterState(5), 0, 4),
            Err(Error::CorruptCounter { value: 5, capacity: 4 })
        ));
    }

    #[test]
    fn threshold_delay_examples() {
        assert_eq!(threshold_delay(3600, 1e10), 2880.0);
        assert_eq!(threshold_delay(0, 1e10), 0.0);
        assert_eq!(threshold_delay(80 << 4, 1e9), 10240.0);
        assert_eq!(threshold_delay_with_mtu(3600, 1500, 1e10), 4080.0);
        assert_eq!(threshold_bytes_for_delay(2880.0, 1e10), 3600);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(encoding_capacity(30, Encoding::IntegerCounter, false).unwrap(), (1 << 29, 1 << 29));
        assert_eq!(encoding_capacity(2, Encoding::BitShift, true).unwrap(), (1, 1));
        assert_eq!(encoding_capacity(1, Encoding::BitShift, false).unwrap(), (1, 1));
        assert_eq!(encoding_capacity(1, Encoding::IntegerCounter, false).unwrap(), (1, 1));
        assert_eq!(encoding_capacity(8, Encoding::IntegerCounter, true).unwrap(), (64, 64));
        assert!(encoding_capacity(3, Encoding::BitShift, true).is_err());
        assert!(encoding_capacity(0, Encoding::BitShift, false).is_err());
    }

    #[test]
    fn mark_packet_examples() {
        let c = config(1000, 2);
        let fwd = Direction::Forward;
        assert_eq!(mark_packet(CounterState(3), 0, &c, fwd).unwrap(), CounterState(3));
        assert_eq!(mark_packet(CounterState(8), 1 << 30, &c, fwd).unwrap(), CounterState(8));
        assert_eq!(mark_packet(CounterState(0), 12_000, &c, fwd).unwrap(), CounterState(1));
    }

    #[test]
    fn split_header_touches_one_half() {
        let c = MarkingConfig {
            fr_split: true,
            ..config(1000, 2)
        };
        assert_eq!(c.capacity(Direction::Forward).unwrap(), 4);
        let mut h = MarkingHeader::default();
        h.mark(20_000, &c, Direction::Forward).unwrap();
        h.mark(20_000, &c, Direction::Forward).unwrap();
        h.mark(20_000, &c, Direction::Forward).unwrap();
        assert_eq!(h.forward, CounterState(4));
        assert_eq!(h.reverse, CounterState(0));
        h.mark(8_000, &c, Direction::Reverse).unwrap();
        assert_eq!(h.reverse, CounterState(1));
    }

    #[test]
    fn validation() {
        assert!(config(1000, 2).validate().is_ok());
        assert!(MarkingConfig { levels: 9, ..config(1000, 2) }.validate().is_err());
        assert!(MarkingConfig { header_bits: 3, fr_split: true, ..config(1000, 1) }.validate().is_err());
        let cells = MarkingConfig {
            cell_exponent: Some(4),
            ..config(1280, 2)
        };
        assert!(cells.validate().is_ok());
        assert!(MarkingConfig { threshold_bytes: 1300, ..cells.clone() }.validate().is_err());
        let over = MarkingConfig {
            header_bits: 3,
            encoding: Encoding::IntegerCounter,
            capacity_override: Some(7),
            levels: 7,
            ..config(1000, 1)
        };
        assert!(over.validate().is_ok());
        assert_eq!(over.capacity(Direction::Reverse).unwrap(), 7);
    }

    #[test]
    fn delay_level_snaps_near_boundaries() {
        assert_eq!(delay_level(0.0, 1.0), 0);
        assert_eq!(delay_level(0.3, 0.1), 3);
        assert_eq!(delay_level(2.9999, 1.0), 2);
        assert_eq!(delay_level(3.0, 1.0), 3);
    }

    #[test]
    fn exhaustive_counter_oracle() {
        for n in 1..=8u64 {
            for r_max in 1..=8u32 {
                for x in 0..=n {
                    for r in 0..=r_max {
                        let y = counter_update(CounterState(x), r, n).unwrap().0;
                        assert_eq!(y, (x + u64::from(r)).min(n));
                        assert!(y >= x && y <= n);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn cell_level_matches_byte_rule(depth in 0u64..1_000_000, n in 0u32..8, r in 1u32..16) {
            let c = MarkingConfig {
                levels: r,
                header_bits: 16,
                ..MarkingConfig::classic(CELL_BYTES << n, 1e10)
            };
            prop_assert_eq!(cell_level(depth, n, r), congestion_level(depth * CELL_BYTES * 8, &c));
        }

        #[test]
        fn path_folding_is_monotone_and_bounded(
            queues in prop::collection::vec(0u64..200_000, 1..12),
            r in 1u32..5,
            bits in 4u32..9,
        ) {
            let c = MarkingConfig { levels: r, header_bits: bits, ..MarkingConfig::classic(1000, 1e9) };
            let cap = c.capacity(Direction::Forward).unwrap();
            let mut x = CounterState(0);
            for q in queues {
                let y = mark_packet(x, q, &c, Direction::Forward).unwrap();
                prop_assert!(y >= x && y.0 <= cap);
                x = y;
            }
        }
    }
}
