//! Discrete-event simulation of a client-server path with congested hops.
//!
//! Each hop has one FIFO egress queue per direction. Cross traffic enters a
//! queue, is served and leaves; sync packets traverse every queue of their
//! direction, picking up marks on the way. Both clocks are ideal, so the
//! offset estimate error comes from queuing asymmetry alone.

mod engine;
mod filter;

use serde::{Deserialize, Serialize};

use crate::cmc::{Direction, MarkingConfig};
use crate::error::invalid;
use crate::sync::SyncRound;
use crate::Result;

pub use engine::run_scenario;
pub use filter::{apply_filter, measure_rms, FilterKind, FilterWindow};

const FRAME_PAYLOAD_MAX: u64 = 1500;
const FRAME_PAYLOAD_MIN: u64 = 46;
/// Ethernet and PHY headers plus the interpacket gap.
const FRAME_OVERHEAD: u64 = 54 + 12;

/// Bytes on the wire for a payload, split into frames when framing is on.
pub fn wire_frames(payload: u64, framing: bool) -> Vec<u64> {
    if !framing {
        return vec![payload.max(1)];
    }
    let mut left = payload.max(1);
    let mut frames = Vec::with_capacity(left.div_ceil(FRAME_PAYLOAD_MAX) as usize);
    while left > 0 {
        let chunk = left.min(FRAME_PAYLOAD_MAX);
        frames.push(chunk.max(FRAME_PAYLOAD_MIN) + FRAME_OVERHEAD);
        left -= chunk;
    }
    frames
}

/// One Poisson source with exponential packet sizes, optionally gated on/off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub mean_packet_bytes: f64,
    pub mean_interarrival_us: f64,
    /// Fraction of each cycle the source is on; it starts on.
    #[serde(default = "one")]
    pub duty_cycle: f64,
    #[serde(default = "default_cycle")]
    pub cycle_period_ns: u64,
}

fn one() -> f64 {
    1.0
}

fn default_cycle() -> u64 {
    80_000_000_000
}

impl FlowSpec {
    pub fn poisson(mean_packet_bytes: f64, mean_interarrival_us: f64) -> Self {
        Self {
            mean_packet_bytes,
            mean_interarrival_us,
            duty_cycle: 1.0,
            cycle_period_ns: default_cycle(),
        }
    }

    pub fn on_off(mut self, duty_cycle: f64, cycle_period_ns: u64) -> Self {
        self.duty_cycle = duty_cycle;
        self.cycle_period_ns = cycle_period_ns;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.mean_packet_bytes > 0.0 && self.mean_packet_bytes.is_finite()) {
            return Err(invalid("mean_packet_bytes must be positive"));
        }
        if !(self.mean_interarrival_us > 0.0 && self.mean_interarrival_us.is_finite()) {
            return Err(invalid("mean_interarrival_us must be positive"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(invalid(format!("duty_cycle {} must lie in (0, 1]", self.duty_cycle)));
        }
        if self.cycle_period_ns == 0 {
            return Err(invalid("cycle_period_ns must be positive"));
        }
        Ok(())
    }
}

/// Cross traffic at one hop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopSpec {
    #[serde(default)]
    pub fwd: Vec<FlowSpec>,
    #[serde(default)]
    pub rev: Vec<FlowSpec>,
}

impl HopSpec {
    pub fn flows(&self, direction: Direction) -> &[FlowSpec] {
        match direction {
            Direction::Forward => &self.fwd,
            Direction::Reverse => &self.rev,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub hops: Vec<HopSpec>,
    #[serde(default = "default_line_rate")]
    pub line_rate_bps: f64,
    #[serde(default)]
    pub framing: bool,
    pub marking: MarkingConfig,
    #[serde(default = "default_sync_interval")]
    pub sync_interval_ns: u64,
    pub duration_ns: u64,
    /// Rounds and statistics start after this.
    #[serde(default)]
    pub warmup_ns: u64,
    /// Propagation delay of every link.
    #[serde(default = "default_base_delay")]
    pub base_delay_ns: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_u32")]
    pub replications: u32,
    #[serde(default = "default_buffer")]
    pub buffer_bits: u64,
    #[serde(default = "default_sync_bytes")]
    pub sync_bytes: u64,
    /// Server processing time between receive and send.
    #[serde(default = "default_turnaround")]
    pub turnaround_ns: u64,
    /// Server clock minus client clock.
    #[serde(default)]
    pub true_offset_ns: i64,
    /// Per-queue cap on retained wait samples.
    #[serde(default = "default_wait_cap")]
    pub wait_sample_cap: usize,
}

fn default_line_rate() -> f64 {
    1e9
}
fn default_sync_interval() -> u64 {
    250_000_000
}
fn default_base_delay() -> u64 {
    1_000
}
fn one_u32() -> u32 {
    1
}
fn default_buffer() -> u64 {
    1_000_000_000
}
fn default_sync_bytes() -> u64 {
    90
}
fn default_turnaround() -> u64 {
    10_000
}
fn default_wait_cap() -> usize {
    1_000_000
}

impl ScenarioSpec {
    /// Idle path of `hops` hops with the given marking and run length.
    pub fn new(hops: usize, marking: MarkingConfig, duration_ns: u64) -> Self {
        Self {
            hops: vec![HopSpec::default(); hops],
            line_rate_bps: marking.line_rate_bps,
            framing: false,
            marking,
            sync_interval_ns: default_sync_interval(),
            duration_ns,
            warmup_ns: 0,
            base_delay_ns: default_base_delay(),
            seed: 0,
            replications: 1,
            buffer_bits: default_buffer(),
            sync_bytes: default_sync_bytes(),
            turnaround_ns: default_turnaround(),
            true_offset_ns: 0,
            wait_sample_cap: default_wait_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops.is_empty() {
            return Err(invalid("scenario needs at least one hop"));
        }
        if !(self.line_rate_bps > 0.0 && self.line_rate_bps.is_finite()) {
            return Err(invalid("line_rate_bps must be positive"));
        }
        self.marking.validate()?;
        if self.marking.line_rate_bps != self.line_rate_bps {
            return Err(invalid(format!(
                "marking line rate {} differs from scenario line rate {}",
                self.marking.line_rate_bps, self.line_rate_bps
            )));
        }
        if self.sync_interval_ns == 0 {
            return Err(invalid("sync_interval_ns must be positive"));
        }
        if self.duration_ns <= self.sync_interval_ns {
            return Err(invalid("duration_ns must exceed sync_interval_ns"));
        }
        if self.warmup_ns >= self.duration_ns {
            return Err(invalid("warmup_ns must be shorter than duration_ns"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.sync_bytes == 0 {
            return Err(invalid("sync_bytes must be positive"));
        }
        for hop in &self.hops {
            for f in hop.fwd.iter().chain(&hop.rev) {
                f.validate()?;
            }
        }
        Ok(())
    }

    /// Seed of replication `k`.
    pub fn replication_seed(&self, k: u32) -> u64 {
        self.seed.wrapping_add(u64::from(k))
    }
}

/// One completed sync exchange with ground truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub index: u64,
    pub sync: SyncRound,
    /// Queuing delay at each hop, by hop index.
    pub fwd_waits_ns: Vec<i64>,
    pub rev_waits_ns: Vec<i64>,
    /// Queue occupancy seen by the sync packet at each hop.
    pub fwd_occupancy_bits: Vec<u64>,
    pub rev_occupancy_bits: Vec<u64>,
    pub eps_raw_ns: f64,
    pub eps_comp_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueueStats {
    pub hop: usize,
    pub direction: Direction,
    pub arrivals: u64,
    pub cross_arrivals: u64,
    pub drops: u64,
    /// Fraction of the measured interval the server was busy.
    pub utilization: f64,
    pub mean_wait_ns: f64,
}

/// Reservoir sample of the waits of every packet through one queue.
#[derive(Clone, Debug, PartialEq)]
pub struct WaitSamples {
    pub hop: usize,
    pub direction: Direction,
    pub samples: Vec<f64>,
    pub seen: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub queue_stats: Vec<QueueStats>,
    pub waits: Vec<WaitSamples>,
    /// Sync exchanges lost to buffer overflow.
    pub lost_rounds: u64,
}

impl SimOutput {
    pub fn eps_raw(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.eps_raw_ns).collect()
    }

    pub fn eps_comp(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.eps_comp_ns).collect()
    }

    pub fn waits_for(&self, hop: usize, direction: Direction) -> Option<&WaitSamples> {
        self.waits.iter().find(|w| w.hop == hop && w.direction == direction)
    }
}
