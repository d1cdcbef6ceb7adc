use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{wire_frames, FlowSpec, QueueStats, RoundRecord, ScenarioSpec, SimOutput, WaitSamples};
use crate::cmc::{mark_packet, CounterState, Direction};
use crate::sync::{compensate_server_mode, estimate_offset, SyncRound};
use crate::Result;

const RESERVOIR_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug)]
enum Event {
    Cross(usize),
    Send,
    /// Sync packet `round` reaching stage `leg` of its trip.
    Sync { round: usize, leg: usize },
}

struct Entry {
    time: i64,
    seq: u64,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Calendar {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl Calendar {
    fn push(&mut self, time: i64, event: Event) {
        self.seq += 1;
        self.heap.push(Entry {
            time,
            seq: self.seq,
            event,
        });
    }
}

struct Admitted {
    wait: i64,
    occupancy_bits: u64,
    depart: i64,
}

struct Queue {
    hop: usize,
    direction: Direction,
    busy_until: i64,
    arrivals: u64,
    cross_arrivals: u64,
    drops: u64,
    busy_ns: i64,
    wait_sum: f64,
    reservoir: Vec<f64>,
    seen: u64,
    rng: ChaCha8Rng,
}

struct Flow {
    queue: usize,
    spec: FlowSpec,
    gap: Exp<f64>,
    size: Exp<f64>,
    rng: ChaCha8Rng,
}

impl Flow {
    /// Next arrival after `now`, skipping off periods.
    fn next_arrival(&mut self, now: i64) -> i64 {
        let t = now + self.gap.sample(&mut self.rng).round() as i64;
        if self.spec.duty_cycle >= 1.0 {
            return t;
        }
        let period = self.spec.cycle_period_ns as i64;
        let on = (self.spec.duty_cycle * period as f64).round() as i64;
        if t.rem_euclid(period) < on {
            return t;
        }
        let start = (t.div_euclid(period) + 1) * period;
        self.next_arrival(start)
    }

    fn packet_bytes(&mut self) -> u64 {
        self.size.sample(&mut self.rng).round().max(1.0) as u64
    }
}

struct InFlight {
    t1: i64,
    t2: i64,
    t3: i64,
    fwd: CounterState,
    rev: CounterState,
    fwd_waits: Vec<i64>,
    rev_waits: Vec<i64>,
    fwd_occ: Vec<u64>,
    rev_occ: Vec<u64>,
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    queues: Vec<Queue>,
    flows: Vec<Flow>,
    calendar: Calendar,
    flights: Vec<InFlight>,
    rounds: Vec<RoundRecord>,
    lost: u64,
    sync_wire_bytes: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn queue_index(hop: usize, direction: Direction) -> usize {
    2 * hop + usize::from(direction == Direction::Reverse)
}

/// Runs every replication of a scenario, one output per seed.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<Vec<SimOutput>> {
    spec.validate()?;
    (0..spec.replications)
        .map(|k| run_once(spec, spec.replication_seed(k)))
        .collect()
}

/// One replication.
pub(crate) fn run_once(spec: &ScenarioSpec, seed: u64) -> Result<SimOutput> {
    spec.validate()?;
    let mut queues = Vec::with_capacity(2 * spec.hops.len());
    let mut flows = Vec::new();
    for (hop, h) in spec.hops.iter().enumerate() {
        for direction in [Direction::Forward, Direction::Reverse] {
            let q = queue_index(hop, direction);
            queues.push(Queue {
                hop,
                direction,
                busy_until: 0,
                arrivals: 0,
                cross_arrivals: 0,
                drops: 0,
                busy_ns: 0,
                wait_sum: 0.0,
                reservoir: Vec::new(),
                seen: 0,
                rng: stream(seed, RESERVOIR_STREAM + q as u64),
            });
            for f in h.flows(direction) {
                flows.push(Flow {
                    queue: q,
                    spec: f.clone(),
                    gap: Exp::new(1.0 / (f.mean_interarrival_us * 1e3)).expect("validated rate"),
                    size: Exp::new(1.0 / f.mean_packet_bytes).expect("validated size"),
                    rng: stream(seed, 1 + flows.len() as u64),
                });
            }
        }
    }
    let mut sim = Sim {
        spec,
        queues,
        flows,
        calendar: Calendar {
            heap: BinaryHeap::new(),
            seq: 0,
        },
        flights: Vec::new(),
        rounds: Vec::new(),
        lost: 0,
        sync_wire_bytes: wire_frames(spec.sync_bytes, spec.framing).iter().sum(),
    };
    sim.run()?;
    let measured = (spec.duration_ns - spec.warmup_ns) as f64;
    let mut queue_stats = Vec::with_capacity(sim.queues.len());
    let mut waits = Vec::with_capacity(sim.queues.len());
    for q in sim.queues {
        let accepted = q.arrivals - q.drops;
        queue_stats.push(QueueStats {
            hop: q.hop,
            direction: q.direction,
            arrivals: q.arrivals,
            cross_arrivals: q.cross_arrivals,
            drops: q.drops,
            utilization: q.busy_ns as f64 / measured,
            mean_wait_ns: if accepted > 0 { q.wait_sum / accepted as f64 } else { 0.0 },
        });
        waits.push(WaitSamples {
            hop: q.hop,
            direction: q.direction,
            samples: q.reservoir,
            seen: q.seen,
        });
    }
    Ok(SimOutput {
        seed,
        rounds: sim.rounds,
        queue_stats,
        waits,
        lost_rounds: sim.lost,
    })
}

impl Sim<'_> {
    fn run(&mut self) -> Result<()> {
        for i in 0..self.flows.len() {
            let t = self.flows[i].next_arrival(0);
            self.calendar.push(t, Event::Cross(i));
        }
        let first = self.spec.warmup_ns.div_ceil(self.spec.sync_interval_ns).max(1) * self.spec.sync_interval_ns;
        self.calendar.push(first as i64, Event::Send);
        while let Some(Entry { time, event, .. }) = self.calendar.heap.pop() {
            match event {
                Event::Cross(i) => self.cross(i, time),
                Event::Send => self.send(time),
                Event::Sync { round, leg } => self.sync_leg(round, leg, time)?,
            }
        }
        Ok(())
    }

    fn cross(&mut self, i: usize, now: i64) {
        let end = self.spec.duration_ns as i64;
        if now >= end {
            return;
        }
        let bytes = self.flows[i].packet_bytes();
        let q = self.flows[i].queue;
        for frame in wire_frames(bytes, self.spec.framing) {
            self.queues[q].cross_arrivals += u64::from(now >= self.spec.warmup_ns as i64);
            self.enqueue(q, now, frame);
        }
        let next = self.flows[i].next_arrival(now);
        if next < end {
            self.calendar.push(next, Event::Cross(i));
        }
    }

    fn send(&mut self, now: i64) {
        let round = self.flights.len();
        let hops = self.spec.hops.len();
        self.flights.push(InFlight {
            t1: now,
            t2: 0,
            t3: 0,
            fwd: CounterState(0),
            rev: CounterState(0),
            fwd_waits: vec![0; hops],
            rev_waits: vec![0; hops],
            fwd_occ: vec![0; hops],
            rev_occ: vec![0; hops],
        });
        self.calendar.push(now + self.spec.base_delay_ns as i64, Event::Sync { round, leg: 0 });
        let next = now + self.spec.sync_interval_ns as i64;
        if next < self.spec.duration_ns as i64 {
            self.calendar.push(next, Event::Send);
        }
    }

    /// Legs `0..h` are forward queues, `h` the server, `h+1..=2h` reverse
    /// queues from the server side, `2h+1` the client.
    fn sync_leg(&mut self, round: usize, leg: usize, now: i64) -> Result<()> {
        let h = self.spec.hops.len();
        let link = self.spec.base_delay_ns as i64;
        let offset = self.spec.true_offset_ns;
        if leg == h {
            let f = &mut self.flights[round];
            f.t2 = now + offset;
            f.t3 = f.t2 + self.spec.turnaround_ns as i64;
            let leave = now + self.spec.turnaround_ns as i64;
            self.calendar.push(leave + link, Event::Sync { round, leg: h + 1 });
            return Ok(());
        }
        if leg == 2 * h + 1 {
            self.finish(round, now);
            return Ok(());
        }
        let (hop, direction) = if leg < h { (leg, Direction::Forward) } else { (2 * h - leg, Direction::Reverse) };
        let q = queue_index(hop, direction);
        let Some(adm) = self.enqueue(q, now, self.sync_wire_bytes) else {
            self.lost += 1;
            return Ok(());
        };
        let f = &mut self.flights[round];
        let slot = match direction {
            Direction::Forward => {
                f.fwd_waits[hop] = adm.wait;
                f.fwd_occ[hop] = adm.occupancy_bits;
                &mut f.fwd
            }
            Direction::Reverse => {
                f.rev_waits[hop] = adm.wait;
                f.rev_occ[hop] = adm.occupancy_bits;
                &mut f.rev
            }
        };
        *slot = mark_packet(*slot, adm.occupancy_bits, &self.spec.marking, direction)?;
        self.calendar.push(adm.depart + link, Event::Sync { round, leg: leg + 1 });
        Ok(())
    }

    fn finish(&mut self, round: usize, t4: i64) {
        let f = &self.flights[round];
        let sync = SyncRound {
            t1: f.t1,
            t2: f.t2,
            t3: f.t3,
            t4,
            fwd_counter: f.fwd,
            rev_counter: f.rev,
            delta_star_ns: self.spec.marking.delta_star_ns(),
            true_offset_ns: Some(self.spec.true_offset_ns),
        };
        let eps_raw = estimate_offset(&sync).epsilon_ns.unwrap_or(f64::NAN);
        let eps_comp = compensate_server_mode(&sync).epsilon_ns.unwrap_or(f64::NAN);
        self.rounds.push(RoundRecord {
            index: round as u64,
            sync,
            fwd_waits_ns: f.fwd_waits.clone(),
            rev_waits_ns: f.rev_waits.clone(),
            fwd_occupancy_bits: f.fwd_occ.clone(),
            rev_occupancy_bits: f.rev_occ.clone(),
            eps_raw_ns: eps_raw,
            eps_comp_ns: eps_comp,
        });
    }

    /// Lindley step for one packet; `None` when the buffer overflows.
    fn enqueue(&mut self, q: usize, now: i64, bytes: u64) -> Option<Admitted> {
        let lr = self.spec.line_rate_bps;
        let warm = now >= self.spec.warmup_ns as i64;
        let end = self.spec.duration_ns as i64;
        let queue = &mut self.queues[q];
        let wait = (queue.busy_until - now).max(0);
        let occupancy_bits = (wait as f64 * lr / 1e9).round() as u64;
        queue.arrivals += u64::from(warm);
        if occupancy_bits + 8 * bytes > self.spec.buffer_bits {
            queue.drops += u64::from(warm);
            return None;
        }
        let service = (bytes as f64 * 8e9 / lr).round() as i64;
        let start = now + wait;
        let depart = start + service;
        queue.busy_until = depart;
        let lo = start.max(self.spec.warmup_ns as i64);
        queue.busy_ns += (depart.min(end) - lo).max(0);
        if warm {
            queue.wait_sum += wait as f64;
            queue.seen += 1;
            let cap = self.spec.wait_sample_cap;
            if queue.reservoir.len() < cap {
                queue.reservoir.push(wait as f64);
            } else {
                let j = queue.rng.random_range(0..queue.seen);
                if (j as usize) < cap {
                    queue.reservoir[j as usize] = wait as f64;
                }
            }
        }
        Some(Admitted {
            wait,
            occupancy_bits,
            depart,
        })
    }
}
