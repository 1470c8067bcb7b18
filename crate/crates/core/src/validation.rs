//! Checks of the analytic approximation: exact chains for tiny systems and
//! empirical distances for the independence and empty-slot assumptions.
//!
//! The exact oracles enumerate every occupancy pattern `{0..m-1}^V`. A
//! transition factorizes over nodes: a node keeps its slot w.p. `1 - p_E` or
//! moves to one of the `N` slots empty in the old pattern w.p. `p_E / N` each.

use serde::Serialize;

use crate::analysis::{counts_pmf, ReservationStats};
use crate::analytic::EmptySlotSolution;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::prob::{total_variation, Pmf};
use crate::sim::{FrameObserver, FrameView, TraceSet};

/// Largest occupancy state space the exact chain accepts.
pub const MAX_STATES: u128 = 100_000;
/// Largest extended (state times counter) space.
pub const MAX_EXTENDED_STATES: u128 = 1_000_000;
/// Largest number of stored transitions.
pub const MAX_TRANSITIONS: u128 = 50_000_000;

const STATIONARY_TOL: f64 = 1e-12;
const MAX_POWER_ITER: usize = 1_000_000;

/// Frame-state laws at reservation starts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalStatePmfs {
    pub marginal: Pmf,
    /// Given the previous reservation ended in a collision.
    pub given_prev_collision: Pmf,
    /// Given the previous reservation ended as a singleton.
    pub given_prev_singleton: Pmf,
    pub collision_count: u64,
    pub singleton_count: u64,
    pub min_count: u64,
}

impl ConditionalStatePmfs {
    /// Builds the laws from reservation pairs. The marginal pools both
    /// conditions, so all three come from the same sample.
    pub fn from_stats(stats: &ReservationStats, min_count: u64) -> Result<Self> {
        let pooled: Vec<u64> = stats
            .start_after_collision
            .iter()
            .zip(&stats.start_after_singleton)
            .map(|(a, b)| a + b)
            .collect();
        let or_point = |c: &[u64]| counts_pmf(c).or_else(|_| Ok::<_, Error>(Pmf::empty()));
        Ok(Self {
            marginal: counts_pmf(&pooled)?,
            given_prev_collision: or_point(&stats.start_after_collision)?,
            given_prev_singleton: or_point(&stats.start_after_singleton)?,
            collision_count: stats.start_after_collision.iter().sum(),
            singleton_count: stats.start_after_singleton.iter().sum(),
            min_count,
        })
    }

    pub fn low_confidence(&self) -> bool {
        self.collision_count < self.min_count || self.singleton_count < self.min_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionDistance {
    pub d_collision: f64,
    pub d_singleton: f64,
    pub low_confidence: bool,
    pub pmfs: ConditionalStatePmfs,
}

/// Total-variation distances between the conditional start-state laws and
/// the marginal. An empty conditional (never observed) has distance 0 and
/// raises the low-confidence flag.
pub fn assumption_distance_from(stats: &ReservationStats, min_count: u64) -> Result<AssumptionDistance> {
    let pmfs = ConditionalStatePmfs::from_stats(stats, min_count)?;
    let dist = |p: &Pmf| {
        if p.is_empty() {
            0.0
        } else {
            total_variation(p, &pmfs.marginal)
        }
    };
    Ok(AssumptionDistance {
        d_collision: dist(&pmfs.given_prev_collision),
        d_singleton: dist(&pmfs.given_prev_singleton),
        low_confidence: pmfs.low_confidence(),
        pmfs,
    })
}

/// Assumption distances for node `v` with the default minimum of 10^4 pairs.
pub fn assumption_distance(traces: &TraceSet, v: usize) -> Result<AssumptionDistance> {
    assumption_distance_from(&crate::analysis::reservation_statistics(traces, v)?, 10_000)
}

/// Empirical empty-slot law next to the fixed-point mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmptySlotReport {
    pub pmf: Pmf,
    pub mean: f64,
    pub e_n: f64,
    /// Distance to a point mass at `E[N]` rounded to the nearest integer.
    pub tv_vs_point: f64,
    pub relative_gap: f64,
}

impl EmptySlotReport {
    pub fn new(pmf: Pmf, frame_size: usize, solution: &EmptySlotSolution) -> Result<Self> {
        let mean = pmf.mean()? / pmf.mass();
        let point = Pmf::delta(solution.e_n.round() as i64);
        Ok(Self {
            tv_vs_point: total_variation(&pmf, &point),
            relative_gap: (mean - solution.e_n).abs() / frame_size as f64,
            mean,
            e_n: solution.e_n,
            pmf,
        })
    }

    /// `n,pmf` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("n,pmf\n");
        for (n, w) in self.pmf.iter() {
            s.push_str(&format!("{n},{}\n", crate::prob::format_real(w)));
        }
        s
    }
}

pub fn empty_slot_report(traces: &TraceSet, solution: &EmptySlotSolution) -> Result<EmptySlotReport> {
    let mut counter = EmptySlotCounter::default();
    for &n in &traces.empty_counts {
        counter.add(n as usize);
    }
    EmptySlotReport::new(counter.pmf()?, traces.config.frame_size, solution)
}

/// Streaming histogram of the number of empty slots per frame.
#[derive(Debug, Clone, Default)]
pub struct EmptySlotCounter {
    counts: Vec<u64>,
    total: u64,
}

impl EmptySlotCounter {
    fn add(&mut self, n: usize) {
        if self.counts.len() <= n {
            self.counts.resize(n + 1, 0);
        }
        self.counts[n] += 1;
        self.total += 1;
    }

    pub fn pmf(&self) -> Result<Pmf> {
        if self.total == 0 {
            return Err(Error::InsufficientData("no frames observed".into()));
        }
        Pmf::from_counts(0, &self.counts, self.total).map(|p| p.trimmed())
    }
}

impl FrameObserver for EmptySlotCounter {
    fn observe(&mut self, f: &FrameView<'_>) {
        self.add(f.empty_count);
    }
}

/// Sparse transition matrix of the occupancy chain.
#[derive(Debug, Clone)]
pub struct OccupancyChain {
    pub num_nodes: usize,
    pub frame_size: usize,
    pub ending_prob: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
    /// Frame state of node 0 in each state.
    omega0: Vec<u16>,
}

impl OccupancyChain {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let (v, m, p) = (config.num_nodes, config.frame_size, config.ending_prob);
        if v == 0 || v >= m {
            return Err(Error::Config("need 0 < num_nodes < frame_size".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("ending_prob {p} outside [0, 1]")));
        }
        let states = (m as u128).checked_pow(v as u32).unwrap_or(u128::MAX);
        if states > MAX_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: MAX_STATES,
            });
        }
        let n_states = states as usize;
        let mut row_ptr = Vec::with_capacity(n_states + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        let mut omega0 = Vec::with_capacity(n_states);
        let mut transitions: u128 = 0;
        row_ptr.push(0);
        let mut slots = vec![0usize; v];
        for s in 0..n_states {
            decode(s, m, &mut slots);
            let mut occ = vec![0u16; m];
            for &d in &slots {
                occ[d] += 1;
            }
            omega0.push(occ[slots[0]]);
            let empties: Vec<usize> = (0..m).filter(|&k| occ[k] == 0).collect();
            let n = empties.len();
            transitions += ((n + 1) as u128).pow(v as u32);
            if transitions > MAX_TRANSITIONS {
                return Err(Error::StateSpaceTooLarge {
                    states: transitions,
                    limit: MAX_TRANSITIONS,
                });
            }
            // odometer over per-node choices: 0 keeps, j moves to empties[j - 1]
            let mut choice = vec![0usize; v];
            loop {
                let mut prob = 1.0;
                let mut target = 0usize;
                let mut scale = 1usize;
                for u in 0..v {
                    let d = if choice[u] == 0 {
                        prob *= 1.0 - p;
                        slots[u]
                    } else {
                        prob *= p / n as f64;
                        empties[choice[u] - 1]
                    };
                    target += d * scale;
                    scale *= m;
                }
                if prob > 0.0 {
                    cols.push(target as u32);
                    probs.push(prob);
                }
                let mut u = 0;
                while u < v {
                    choice[u] += 1;
                    if choice[u] <= n {
                        break;
                    }
                    choice[u] = 0;
                    u += 1;
                }
                if u == v {
                    break;
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            num_nodes: v,
            frame_size: m,
            ending_prob: p,
            row_ptr,
            cols,
            probs,
            omega0,
        })
    }

    pub fn num_states(&self) -> usize {
        self.omega0.len()
    }

    /// Outgoing transitions of state `s`.
    pub fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[s]..self.row_ptr[s + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.probs[r].iter().copied())
    }

    /// Slots of every node in state `s`.
    pub fn slots(&self, s: usize) -> Vec<usize> {
        let mut out = vec![0; self.num_nodes];
        decode(s, self.frame_size, &mut out);
        out
    }

    pub fn state_index(&self, slots: &[usize]) -> usize {
        slots.iter().rev().fold(0, |acc, &d| acc * self.frame_size + d)
    }

    fn push_forward(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, p) in self.row(s) {
                out[t] += w * p;
            }
        }
    }

    /// Largest `|1 - row sum|`.
    pub fn row_sum_error(&self) -> f64 {
        (0..self.num_states())
            .map(|s| (1.0 - self.row(s).map(|(_, p)| p).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }
}

fn decode(mut s: usize, m: usize, slots: &mut [usize]) {
    for d in slots.iter_mut() {
        *d = s % m;
        s /= m;
    }
}

/// Stationary law of the occupancy chain.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub chain: OccupancyChain,
    pub probs: Vec<f64>,
    pub iterations: usize,
    /// `max |(pi T - pi)(s)|` of the returned vector.
    pub residual: f64,
}

impl Stationary {
    /// Slot law of node `v`.
    pub fn slot_marginal(&self, v: usize) -> Pmf {
        let m = self.chain.frame_size;
        let mut w = vec![0.0; m];
        for (s, &p) in self.probs.iter().enumerate() {
            w[self.chain.slots(s)[v]] += p;
        }
        Pmf::from_raw(0, w)
    }

    /// Law of the number of empty slots.
    pub fn empty_slot_pmf(&self) -> Pmf {
        let m = self.chain.frame_size;
        let mut w = vec![0.0; m + 1];
        for (s, &p) in self.probs.iter().enumerate() {
            let slots = self.chain.slots(s);
            let occupied = (0..m).filter(|k| slots.contains(k)).count();
            w[m - occupied] += p;
        }
        Pmf::from_raw(0, w).trimmed()
    }
}

/// Exact stationary distribution by power iteration from the uniform vector.
pub fn brute_force_stationary(config: &SystemConfig) -> Result<Stationary> {
    let chain = OccupancyChain::new(config)?;
    let n = chain.num_states();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for it in 1..=MAX_POWER_ITER {
        chain.push_forward(&pi, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let diff = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if diff < STATIONARY_TOL {
            chain.push_forward(&pi, &mut next);
            let residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            return Ok(Stationary {
                chain,
                probs: pi,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_POWER_ITER,
        last: f64::NAN,
        residual: f64::NAN,
    })
}

/// Counter of node 0 carried alongside the occupancy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Counter {
    /// Frames since node 0 was last alone; 0 when alone now.
    Collision,
    /// Frames since node 0 last changed slot; 1 in the frame of a change.
    Age,
}

/// Stationary law of (occupancy, counter) with the counter capped: the top
/// value `cap` stands for every value from `cap` on.
struct Extended {
    base: Stationary,
    /// `probs[s * (cap + 1) + a]`.
    probs: Vec<f64>,
}

fn extended_stationary(config: &SystemConfig, counter: Counter, cap: usize) -> Result<Extended> {
    if cap < 2 {
        return Err(Error::Config("counter cap must be at least 2".into()));
    }
    let base = brute_force_stationary(config)?;
    let n = base.chain.num_states();
    let size = n as u128 * (cap as u128 + 1);
    if size > MAX_EXTENDED_STATES {
        return Err(Error::StateSpaceTooLarge {
            states: size,
            limit: MAX_EXTENDED_STATES,
        });
    }
    let w = cap + 1;
    let m = base.chain.frame_size;
    let mut pi = vec![0.0; n * w];
    let start = match counter {
        Counter::Collision => 0,
        Counter::Age => 1,
    };
    for s in 0..n {
        pi[s * w + start] = base.probs[s];
    }
    let mut next = vec![0.0; n * w];
    let chain = &base.chain;
    let step = |pi: &[f64], next: &mut [f64]| {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            let row = &pi[s * w..(s + 1) * w];
            let row_sum: f64 = row.iter().sum();
            if row_sum == 0.0 {
                continue;
            }
            for (t, p) in chain.row(s) {
                let out = &mut next[t * w..(t + 1) * w];
                let reset = match counter {
                    Counter::Collision => chain.omega0[t] == 1,
                    Counter::Age => t % m != s % m,
                };
                if reset {
                    out[start] += p * row_sum;
                } else {
                    for a in start..cap {
                        out[a + 1] += p * row[a];
                    }
                    out[cap] += p * row[cap];
                }
            }
        }
    };
    for _ in 0..MAX_POWER_ITER {
        step(&pi, &mut next);
        let diff = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if diff < STATIONARY_TOL {
            return Ok(Extended { base, probs: pi });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_POWER_ITER,
        last: f64::NAN,
        residual: f64::NAN,
    })
}

/// Exact laws of the collision duration and the position-averaged age.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactAoi {
    /// `P(C = c)` for `c < cap`.
    pub collision: Pmf,
    /// `P(C >= cap)`.
    pub collision_deficit: f64,
    /// Position-averaged age law over ages resolvable below the cap.
    pub aoi: Pmf,
    pub aoi_deficit: f64,
    /// Set when the deficit exceeds 1e-6; raise the cap to shrink it.
    pub warning: Option<String>,
}

/// Default cap `100 * ceil(1 / p_E)`.
pub fn default_cap(ending_prob: f64) -> usize {
    100 * (1.0 / ending_prob).ceil() as usize
}

/// Exact age law of node 0 from the chain extended by its collision duration.
pub fn exact_aoi_small(config: &SystemConfig, cap: usize) -> Result<ExactAoi> {
    let ext = extended_stationary(config, Counter::Collision, cap)?;
    let chain = &ext.base.chain;
    let (m, w) = (chain.frame_size, cap + 1);
    let mut collision = vec![0.0; cap];
    let mut aoi = vec![0.0; (cap + 1) * m];
    let mut aoi_deficit = 0.0;
    for s in 0..chain.num_states() {
        for a in 0..w {
            let mass = ext.probs[s * w + a];
            if a < cap {
                collision[a] += mass;
            }
            if mass == 0.0 {
                continue;
            }
            for (t, p) in chain.row(s) {
                let next_c = if chain.omega0[t] == 1 { 0 } else { (a + 1).min(cap) };
                let d = t % m;
                let share = mass * p / m as f64;
                // positions before this frame's transmission see the previous duration
                if a < cap {
                    for pos in 0..d {
                        aoi[m * (a + 1) + pos] += share;
                    }
                } else {
                    aoi_deficit += share * d as f64;
                }
                if next_c < cap {
                    for pos in d..m {
                        aoi[m * next_c + pos] += share;
                    }
                } else {
                    aoi_deficit += share * (m - d) as f64;
                }
            }
        }
    }
    let collision_deficit: f64 = (0..chain.num_states()).map(|s| ext.probs[s * w + cap]).sum();
    let warning = (collision_deficit > 1e-6 || aoi_deficit > 1e-6).then(|| {
        format!("cap {cap} leaves deficit {collision_deficit:.3e} in the collision duration and {aoi_deficit:.3e} in the age")
    });
    Ok(ExactAoi {
        collision: Pmf::from_raw(0, collision),
        collision_deficit,
        aoi: Pmf::from_raw(0, aoi).trimmed(),
        aoi_deficit,
        warning,
    })
}

/// Exact reservation quantities of node 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactReservation {
    /// `P(Ω(x) >= 2, B(x) = b)` for `1 <= b < cap`.
    pub joint_collision: Pmf,
    /// `P(B(x) = b)` for `1 <= b < cap`.
    pub duration: Pmf,
    /// Law of `Ω(x)` given `B(x) = 1`.
    pub start_state: Pmf,
    /// Law of the number of empty slots.
    pub empty_slots: Pmf,
}

/// Exact reservation laws from the chain extended by node 0's reservation age.
pub fn exact_reservation_small(config: &SystemConfig, cap: usize) -> Result<ExactReservation> {
    let ext = extended_stationary(config, Counter::Age, cap)?;
    let chain = &ext.base.chain;
    let (v, w) = (chain.num_nodes, cap + 1);
    let mut joint = vec![0.0; cap - 1];
    let mut duration = vec![0.0; cap - 1];
    let mut start = vec![0.0; v];
    for s in 0..chain.num_states() {
        let omega = chain.omega0[s] as usize;
        for b in 1..cap {
            let p = ext.probs[s * w + b];
            duration[b - 1] += p;
            if omega >= 2 {
                joint[b - 1] += p;
            }
        }
        start[omega - 1] += ext.probs[s * w + 1];
    }
    let start_mass: f64 = start.iter().sum();
    Ok(ExactReservation {
        joint_collision: Pmf::from_raw(1, joint),
        duration: Pmf::from_raw(1, duration),
        start_state: Pmf::from_raw(1, start.iter().map(|x| x / start_mass).collect()),
        empty_slots: ext.base.empty_slot_pmf(),
    })
}
