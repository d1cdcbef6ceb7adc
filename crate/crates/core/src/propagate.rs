//! Forward recursion for the corrected end-to-end error.
//!
//! The state after each hop is one sub-distribution of accumulated residual
//! error per counter value. A hop with law `X` moves mass from counter `n`
//! to `n + r` for `r < M = min(R, N - n)` with residual `X - r·δ*` on
//! `level(X) = r`, and to `n + M` with residual `X - M·δ*` on
//! `level(X) >= M`. Counter `N` is absorbing: `M = 0`, the whole delay is
//! added uncorrected.
//!
//! All residuals live on the grid `w = δ*/k`. Off-grid mass is split
//! linearly between neighbours, which preserves means exactly. The split
//! noise is zero-mean given the true delay and independent of the counter
//! path, so it inflates the end-to-end variance by exactly the sum of the
//! per-hop split variances, which is tracked and removed. MSE values are
//! therefore independent of `k` up to tail truncation.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex64;

use crate::dist::{DelayLaw, HistogramLaw, Segment};
use crate::error::invalid;
use crate::spectral::{self, Plan};
use crate::{Error, Result};

/// One direction of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathModel {
    pub hops: Vec<DelayLaw>,
    pub delta_star_ns: f64,
    pub levels: u32,
    pub capacity: u64,
}

impl PathModel {
    pub fn new(hops: Vec<DelayLaw>, delta_star_ns: f64, levels: u32, capacity: u64) -> Result<Self> {
        let p = Self {
            hops,
            delta_star_ns,
            levels,
            capacity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops.is_empty() {
            return Err(Error::EmptyInput("path hops"));
        }
        if !(self.delta_star_ns > 0.0 && self.delta_star_ns.is_finite()) {
            return Err(invalid(format!("threshold delay {} must be positive", self.delta_star_ns)));
        }
        if self.levels == 0 || u64::from(self.levels) > self.capacity {
            return Err(invalid(format!(
                "need 1 <= levels <= capacity, got levels {} capacity {}",
                self.levels, self.capacity
            )));
        }
        Ok(())
    }

    /// Moments of the uncorrected end-to-end delay.
    pub fn raw_moments(&self) -> LawMoments {
        raw_moments(&self.hops)
    }
}

/// Mean and variance of a sum of independent hop delays.
pub fn raw_moments(hops: &[DelayLaw]) -> LawMoments {
    LawMoments {
        mean: hops.iter().map(DelayLaw::mean).sum(),
        variance: hops.iter().map(DelayLaw::variance).sum(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    /// Pick per hop by estimated cost.
    Auto,
    Direct,
    Spectral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOptions {
    /// Grid cells per threshold, `k = δ*/w`.
    pub bins_per_threshold: usize,
    /// Explicit grid width; `δ*` is then snapped to a multiple of it.
    pub bin_width_ns: Option<f64>,
    pub tail_epsilon: f64,
    pub max_bins_per_hop: usize,
    pub engine: Engine,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            bins_per_threshold: 64,
            bin_width_ns: None,
            tail_epsilon: 1e-14,
            max_bins_per_hop: 1 << 18,
            engine: Engine::Auto,
        }
    }
}

/// Per-counter sub-distributions of accumulated residual.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationState {
    bin_width: f64,
    masses: Vec<Vec<f64>>,
    overflow: Vec<f64>,
    split_variance: f64,
}

impl PropagationState {
    fn initial(bin_width: f64, states: usize) -> Self {
        let mut masses = vec![Vec::new(); states];
        masses[0] = vec![1.0];
        Self {
            bin_width,
            masses,
            overflow: vec![0.0; states],
            split_variance: 0.0,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// Grid masses and overflow for counter value `n`.
    pub fn sub_law(&self, n: usize) -> (&[f64], f64) {
        (&self.masses[n], self.overflow[n])
    }

    pub fn counter_probabilities(&self) -> Vec<f64> {
        self.masses
            .iter()
            .zip(&self.overflow)
            .map(|(m, o)| m.iter().sum::<f64>() + o)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.counter_probabilities().iter().sum()
    }

    /// Sum over counter values.
    pub fn marginal(&self) -> HistogramLaw {
        let len = self.masses.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut out = vec![0.0; len];
        for m in &self.masses {
            for (o, x) in out.iter_mut().zip(m) {
                *o += x;
            }
        }
        HistogramLaw::from_parts(self.bin_width, out, self.overflow.iter().sum(), self.split_variance)
    }
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub error_law: HistogramLaw,
    /// `P(counter = n)`, up to the largest reachable value.
    pub counter_dist: Vec<f64>,
    /// Counter distribution after each hop.
    pub counter_history: Vec<Vec<f64>>,
    pub state: PropagationState,
    /// Threshold actually used, after snapping to the grid.
    pub delta_star_ns: f64,
    /// Requested minus used threshold.
    pub delta_star_snap_ns: f64,
    pub bin_width_ns: f64,
}

impl Propagation {
    pub fn mean_counter(&self) -> f64 {
        self.counter_dist.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

pub fn propagate_path(path: &PathModel) -> Result<Propagation> {
    propagate_path_with(path, &PropagationOptions::default())
}

pub fn propagate_path_with(path: &PathModel, opts: &PropagationOptions) -> Result<Propagation> {
    path.validate()?;
    let (k, w) = match opts.bin_width_ns {
        Some(w) if w > 0.0 => (((path.delta_star_ns / w).round() as usize).max(1), w),
        Some(w) => return Err(invalid(format!("bin width {w} must be positive"))),
        None => {
            if opts.bins_per_threshold == 0 {
                return Err(invalid("bins_per_threshold must be positive"));
            }
            let k = opts.bins_per_threshold;
            (k, path.delta_star_ns / k as f64)
        }
    };
    let delta = k as f64 * w;
    let reach = (path.hops.len() as u64).saturating_mul(u64::from(path.levels));
    let top = path.capacity.min(reach) as usize;
    let ctx = StepContext {
        delta,
        k,
        levels: path.levels,
        capacity: path.capacity,
        opts,
    };
    let mut state = PropagationState::initial(w, top + 1);
    let mut history = Vec::with_capacity(path.hops.len());
    for law in &path.hops {
        ctx.step(&mut state, law);
        history.push(state.counter_probabilities());
    }
    Ok(Propagation {
        error_law: state.marginal(),
        counter_dist: state.counter_probabilities(),
        counter_history: history,
        state,
        delta_star_ns: delta,
        delta_star_snap_ns: path.delta_star_ns - delta,
        bin_width_ns: w,
    })
}

struct StepContext<'a> {
    delta: f64,
    k: usize,
    levels: u32,
    capacity: u64,
    opts: &'a PropagationOptions,
}

struct Pieces {
    body: Vec<Segment>,
    top: BTreeMap<usize, Segment>,
    /// Probability of each level `0..R` and of `>= R`, for overflow routing.
    level_mass: Vec<f64>,
}

impl Pieces {
    fn piece(&self, r: usize, m: usize) -> &Segment {
        if r < m {
            &self.body[r]
        } else {
            &self.top[&m]
        }
    }

    fn tail_mass(&self, m: usize) -> f64 {
        self.level_mass[m..].iter().sum()
    }
}

impl StepContext<'_> {
    fn headroom(&self, n: usize) -> usize {
        (u64::from(self.levels).min(self.capacity - n as u64)) as usize
    }

    fn segment(&self, law: &DelayLaw, lo: u64, hi: Option<u64>) -> Segment {
        law.lattice_segment(
            self.delta,
            lo,
            hi,
            self.k,
            self.opts.max_bins_per_hop,
            self.opts.tail_epsilon,
        )
    }

    fn step(&self, state: &mut PropagationState, law: &DelayLaw) {
        let states = state.masses.len();
        let live: Vec<usize> = (0..states)
            .filter(|&n| !state.masses[n].is_empty() || state.overflow[n] > 0.0)
            .collect();
        let r_max = self.levels as usize;
        let body: Vec<Segment> = (0..r_max as u64).map(|r| self.segment(law, r, Some(r + 1))).collect();
        let mut top = BTreeMap::new();
        top.insert(r_max, self.segment(law, r_max as u64, None));
        for &n in &live {
            let m = self.headroom(n);
            top.entry(m).or_insert_with(|| self.segment(law, m as u64, None));
        }
        let mut level_mass: Vec<f64> = body.iter().map(Segment::mass).collect();
        level_mass.push(top[&r_max].mass());
        let pieces = Pieces { body, top, level_mass };

        let split_variance =
            pieces.body.iter().map(|s| s.split_variance).sum::<f64>() + pieces.top[&r_max].split_variance;

        // targets: (source state, piece level r, headroom m)
        let mut moves: Vec<(usize, usize, usize)> = Vec::new();
        for &n in &live {
            let m = self.headroom(n);
            for r in 0..=m {
                moves.push((n, r, m));
            }
        }

        let mut new_overflow = vec![0.0; states];
        for &(n, r, m) in &moves {
            let piece = pieces.piece(r, m);
            let lattice: f64 = state.masses[n].iter().sum();
            let routed = if r < m { pieces.level_mass[r] } else { pieces.tail_mass(m) };
            new_overflow[n + r] += state.overflow[n] * routed + lattice * piece.overflow;
        }

        let engine = match self.opts.engine {
            Engine::Auto => self.choose_engine(state, &pieces, &moves),
            e => e,
        };
        let new_masses = match engine {
            Engine::Spectral => self.spectral_step(state, &pieces, &moves),
            _ => self.direct_step(state, &pieces, &moves),
        };
        state.masses = new_masses;
        state.overflow = new_overflow;
        state.split_variance += split_variance;
    }

    fn target_lengths(&self, state: &PropagationState, pieces: &Pieces, moves: &[(usize, usize, usize)]) -> Vec<usize> {
        let mut len = vec![0usize; state.masses.len()];
        for &(n, r, m) in moves {
            let (a, b) = (state.masses[n].len(), pieces.piece(r, m).masses.len());
            if a > 0 && b > 0 {
                len[n + r] = len[n + r].max(a + b - 1);
            }
        }
        len
    }

    fn choose_engine(&self, state: &PropagationState, pieces: &Pieces, moves: &[(usize, usize, usize)]) -> Engine {
        let direct: f64 = moves
            .iter()
            .map(|&(n, r, m)| state.masses[n].len() as f64 * pieces.piece(r, m).masses.len() as f64)
            .sum();
        let longest = self.target_lengths(state, pieces, moves).into_iter().max().unwrap_or(0);
        let l = longest.max(2).next_power_of_two() as f64;
        let transforms = (state.masses.len() + pieces.body.len() + pieces.top.len() + state.masses.len()) as f64 / 2.0;
        let spectral = transforms * l * l.log2() * 1.5 + moves.len() as f64 * l * 2.0;
        if direct <= spectral {
            Engine::Direct
        } else {
            Engine::Spectral
        }
    }

    fn direct_step(&self, state: &PropagationState, pieces: &Pieces, moves: &[(usize, usize, usize)]) -> Vec<Vec<f64>> {
        let lens = self.target_lengths(state, pieces, moves);
        let mut out: Vec<Vec<f64>> = lens.iter().map(|&l| vec![0.0; l]).collect();
        for &(n, r, m) in moves {
            let src = &state.masses[n];
            let piece = &pieces.piece(r, m).masses;
            if src.is_empty() || piece.is_empty() {
                continue;
            }
            spectral::convolve_into(&mut out[n + r], src, piece);
        }
        out
    }

    fn spectral_step(&self, state: &PropagationState, pieces: &Pieces, moves: &[(usize, usize, usize)]) -> Vec<Vec<f64>> {
        let lens = self.target_lengths(state, pieces, moves);
        let longest = lens.iter().copied().max().unwrap_or(0);
        if longest == 0 {
            return vec![Vec::new(); state.masses.len()];
        }
        let plan = Plan::new(longest);
        let h = plan.half_len();

        let sources: Vec<usize> = {
            let mut s: Vec<usize> = moves.iter().map(|m| m.0).filter(|&n| !state.masses[n].is_empty()).collect();
            s.dedup();
            s
        };
        let src_spec = transform_all(&plan, sources.iter().map(|&n| state.masses[n].as_slice()));
        let src_index: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(i, &n)| (n, i)).collect();

        // pieces keyed by (is_top, index)
        let mut keys: Vec<(bool, usize)> = (0..pieces.body.len()).map(|r| (false, r)).collect();
        keys.extend(pieces.top.keys().map(|&m| (true, m)));
        let piece_slices = keys.iter().map(|&(is_top, i)| {
            if is_top {
                pieces.top[&i].masses.as_slice()
            } else {
                pieces.body[i].masses.as_slice()
            }
        });
        let piece_spec = transform_all(&plan, piece_slices);
        let piece_index: BTreeMap<(bool, usize), usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut acc: Vec<Option<Vec<Complex64>>> = vec![None; state.masses.len()];
        for &(n, r, m) in moves {
            let Some(&si) = src_index.get(&n) else { continue };
            let key = if r < m { (false, r) } else { (true, m) };
            let p = &piece_spec[piece_index[&key]];
            let s = &src_spec[si];
            let slot = acc[n + r].get_or_insert_with(|| vec![Complex64::new(0.0, 0.0); h]);
            for ((a, x), y) in slot.iter_mut().zip(s).zip(p) {
                *a += x * y;
            }
        }

        let targets: Vec<usize> = (0..acc.len()).filter(|&t| acc[t].is_some()).collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); state.masses.len()];
        for pair in targets.chunks(2) {
            let a = acc[pair[0]].as_deref().unwrap();
            let b = pair.get(1).map(|&t| acc[t].as_deref().unwrap());
            let (ra, rb) = plan.inverse_pair(a, b);
            out[pair[0]] = clean(ra, lens[pair[0]]);
            if let Some(&t) = pair.get(1) {
                out[t] = clean(rb, lens[t]);
            }
        }
        out
    }
}

fn transform_all<'a>(plan: &Plan, signals: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<Complex64>> {
    let signals: Vec<&[f64]> = signals.collect();
    let mut out = Vec::with_capacity(signals.len());
    for pair in signals.chunks(2) {
        let (fa, fb) = plan.forward_pair(pair[0], pair.get(1).copied().unwrap_or(&[]));
        out.push(fa);
        if pair.len() == 2 {
            out.push(fb);
        }
    }
    out
}

fn clean(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.truncate(len);
    for x in &mut v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

/// Anything with a mean and variance.
pub trait Moments {
    fn mean(&self) -> f64;
    fn variance(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LawMoments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments for LawMoments {
    fn mean(&self) -> f64 {
        self.mean
    }
    fn variance(&self) -> f64 {
        self.variance
    }
}

impl Moments for DelayLaw {
    fn mean(&self) -> f64 {
        DelayLaw::mean(self)
    }
    fn variance(&self) -> f64 {
        DelayLaw::variance(self)
    }
}

impl Moments for HistogramLaw {
    fn mean(&self) -> f64 {
        HistogramLaw::mean(self)
    }
    fn variance(&self) -> f64 {
        HistogramLaw::variance(self)
    }
}

impl<T: Moments + ?Sized> Moments for &T {
    fn mean(&self) -> f64 {
        (**self).mean()
    }
    fn variance(&self) -> f64 {
        (**self).variance()
    }
}

/// `E[ε²]` with `ε = (rev - fwd)/2` for independent directions.
pub fn mse<A: Moments + ?Sized, B: Moments + ?Sized>(fwd: &A, rev: &B) -> f64 {
    let bias = fwd.mean() - rev.mean();
    (fwd.variance() + rev.variance() + bias * bias) / 4.0
}

/// `1 - sqrt(mse_comp / mse_raw)`.
pub fn expected_improvement(mse_comp: f64, mse_raw: f64) -> Result<f64> {
    if !(mse_raw > 0.0) {
        return Err(invalid(format!("raw MSE {mse_raw} must be positive")));
    }
    Ok(1.0 - (mse_comp.max(0.0) / mse_raw).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseDecomposition {
    pub per_pair: Vec<f64>,
    /// `½ Σ_{i<k} Δ_i Δ_k`.
    pub coherence: f64,
}

impl MseDecomposition {
    pub fn total(&self) -> f64 {
        self.per_pair.iter().sum::<f64>() + self.coherence
    }
}

/// Splits the end-to-end MSE into per-link terms and a cross term.
/// Pair `i` is the forward hop on link `i` with the reverse hop on the same link.
pub fn multihop_mse_decomposition<A: Moments, B: Moments>(pairs: &[(A, B)]) -> Result<MseDecomposition> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("hop pairs"));
    }
    let per_pair = pairs.iter().map(|(f, r)| mse(f, r)).collect();
    let deltas: Vec<f64> = pairs.iter().map(|(f, r)| f.mean() - r.mean()).collect();
    let mut coherence = 0.0;
    for i in 0..deltas.len() {
        for k in i + 1..deltas.len() {
            coherence += deltas[i] * deltas[k];
        }
    }
    Ok(MseDecomposition {
        per_pair,
        coherence: coherence / 2.0,
    })
}
