//! Age-of-information trajectories and reservation statistics from traces.
//!
//! Slot time `t` is absolute: `t = x * m + pos` for frame `x` and position
//! `pos`. A node's update is received in frame `x` at slot `d(x)` when it is
//! alone in that slot, and carries information sampled at the start of the
//! frame. The age at `t` is therefore
//!
//! * `m * C(x - 1) + m + pos` when `pos < d(x)` (this frame's reception is
//!   still ahead), and
//! * `m * C(x) + pos` otherwise,
//!
//! where `C(x)` counts frames since the last singleton frame. A value that
//! depends on frames before the recorded window is *censored*: it is reported
//! as `None` and excluded from histograms, never truncated.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prob::Pmf;
use crate::sim::{FrameObserver, FrameView, NodeTrace, TraceSet};

/// Collision durations and slots of one node over the recorded window.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiTrajectory {
    pub node: usize,
    pub frame_size: usize,
    pub first_frame: u64,
    pub slots: Vec<u16>,
    /// `C(x)` per recorded frame; `None` until the first singleton frame.
    pub collision: Vec<Option<u32>>,
}

impl AoiTrajectory {
    pub fn from_trace(traces: &TraceSet, v: usize) -> Result<Self> {
        let node = traces.node(v)?;
        let mut collision = Vec::with_capacity(node.len());
        let mut c: Option<u32> = None;
        for &omega in &node.states {
            c = if omega == 1 { Some(0) } else { c.map(|c| c + 1) };
            collision.push(c);
        }
        Ok(Self {
            node: v,
            frame_size: traces.config.frame_size,
            first_frame: traces.first_frame,
            slots: node.slots.clone(),
            collision,
        })
    }

    fn index(&self, x: u64) -> Option<usize> {
        let i = x.checked_sub(self.first_frame)? as usize;
        (i < self.collision.len()).then_some(i)
    }

    /// `C(x)` for an absolute frame index, `None` when censored or outside the window.
    pub fn collision_duration(&self, x: u64) -> Option<u32> {
        self.collision[self.index(x)?]
    }

    /// Age in slots at absolute slot time `t`.
    pub fn aoi_at(&self, t: u64) -> Option<u64> {
        let m = self.frame_size as u64;
        let (x, pos) = (t / m, t % m);
        let d = self.slots[self.index(x)?] as u64;
        if pos < d {
            let c = self.collision_duration(x.checked_sub(1)?)? as u64;
            Some(m * c + m + pos)
        } else {
            Some(m * self.collision_duration(x)? as u64 + pos)
        }
    }

    /// Slot times covered by the window.
    pub fn time_range(&self) -> std::ops::Range<u64> {
        let m = self.frame_size as u64;
        self.first_frame * m..(self.first_frame + self.collision.len() as u64) * m
    }

    /// Ages over the window, `None` where censored.
    pub fn ages(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        self.time_range().map(|t| self.aoi_at(t))
    }
}

/// `C(x)` for node `v` at absolute frame `x`; `Ok(None)` when censored.
pub fn collision_duration(traces: &TraceSet, v: usize, x: u64) -> Result<Option<u32>> {
    let node = traces.node(v)?;
    let end = traces.first_frame + node.len() as u64;
    if x < traces.first_frame || x >= end {
        return Err(Error::Domain(format!(
            "frame {x} outside the recorded window [{}, {end})",
            traces.first_frame
        )));
    }
    let i = (x - traces.first_frame) as usize;
    Ok(node.states[..=i].iter().rev().position(|&o| o == 1).map(|c| c as u32))
}

/// Age of node `v` at absolute slot time `t`; `Ok(None)` when censored.
pub fn aoi_at(traces: &TraceSet, v: usize, t: u64) -> Result<Option<u64>> {
    let m = traces.config.frame_size as u64;
    let (x, pos) = (t / m, t % m);
    let node = traces.node(v)?;
    let d = node.slots[frame_offset(traces, node, x)?] as u64;
    if pos < d {
        if x == traces.first_frame {
            return Ok(None);
        }
        Ok(collision_duration(traces, v, x - 1)?.map(|c| m * c as u64 + m + pos))
    } else {
        Ok(collision_duration(traces, v, x)?.map(|c| m * c as u64 + pos))
    }
}

fn frame_offset(traces: &TraceSet, node: &NodeTrace, x: u64) -> Result<usize> {
    x.checked_sub(traces.first_frame)
        .map(|i| i as usize)
        .filter(|&i| i < node.len())
        .ok_or_else(|| Error::Domain(format!("frame {x} outside the recorded window")))
}

/// Outcome of checking the reservation-based age decomposition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SegmentationReport {
    /// Slot times compared.
    pub checked: u64,
    /// Slot times skipped because the history leaves the window.
    pub censored: u64,
    /// Slot times where the decomposition disagrees with the direct age.
    pub violations: u64,
    /// Frames where the reservation sum disagrees with `C(x)`.
    pub duration_violations: u64,
    /// Largest number of collided reservations `W(x)` seen.
    pub max_collided_reservations: u32,
}

/// Sum of the ages `B` at the ends of the collided reservations preceding
/// frame index `i`, walking back reservation by reservation until a
/// singleton reservation end. Returns `(sum, W)` or `None` if censored.
fn reservation_sum(node: &NodeTrace, i: usize) -> Option<(u64, u32)> {
    let mut xi = i as i64;
    let mut sum = 0u64;
    let mut w = 0u32;
    loop {
        if xi < 0 {
            return None;
        }
        let k = xi as usize;
        if node.states[k] == 1 {
            return Some((sum, w));
        }
        let b = node.ages[k] as u64;
        sum += b;
        w += 1;
        xi -= b as i64;
    }
}

/// Recomputes every age from reservation boundaries and compares it with the
/// direct definition. Any mismatch is a bug; the expected count is zero.
pub fn verify_segmentation(traces: &TraceSet, v: usize) -> Result<SegmentationReport> {
    let node = traces.node(v)?;
    let traj = AoiTrajectory::from_trace(traces, v)?;
    let m = traces.config.frame_size as u64;
    let mut rep = SegmentationReport::default();
    let sums: Vec<Option<(u64, u32)>> = (0..node.len()).map(|i| reservation_sum(node, i)).collect();
    for (i, s) in sums.iter().enumerate() {
        if let Some((sum, w)) = *s {
            rep.max_collided_reservations = rep.max_collided_reservations.max(w);
            if traj.collision[i] != Some(sum as u32) {
                rep.duration_violations += 1;
            }
        }
    }
    for i in 0..node.len() {
        let x = traces.first_frame + i as u64;
        let d = node.slots[i] as u64;
        for pos in 0..m {
            let seg = if pos < d {
                (i > 0).then(|| sums[i - 1]).flatten().map(|(s, _)| m * (1 + s) + pos)
            } else {
                sums[i].map(|(s, _)| m * s + pos)
            };
            let direct = traj.aoi_at(x * m + pos);
            match (seg, direct) {
                (Some(a), Some(b)) => {
                    rep.checked += 1;
                    if a != b {
                        rep.violations += 1;
                    }
                }
                (None, None) => rep.censored += 1,
                _ => {
                    rep.checked += 1;
                    rep.violations += 1;
                }
            }
        }
    }
    Ok(rep)
}

/// Histogram of ages for every slot of every observed frame.
///
/// Within one frame the ages of positions `0..d` form the contiguous run
/// `m (C(x-1) + 1) + [0, d)` and those of `d..m` the run `m C(x) + [d, m)`,
/// so each frame costs two difference-array updates.
#[derive(Debug, Clone)]
pub struct AoiAccumulator {
    nodes: Option<Vec<usize>>,
    frame_size: usize,
    last_c: Vec<Option<u32>>,
    diff: Vec<i64>,
    slots_seen: u64,
    censored: u64,
}

impl AoiAccumulator {
    /// Pools the listed nodes, or every node when `nodes` is `None`.
    pub fn new(nodes: Option<Vec<usize>>) -> Self {
        Self {
            nodes,
            frame_size: 0,
            last_c: Vec::new(),
            diff: Vec::new(),
            slots_seen: 0,
            censored: 0,
        }
    }

    fn add_run(&mut self, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        if self.diff.len() <= hi {
            let want = (hi + 1).max(self.diff.len() * 2);
            self.diff.resize(want, 0);
        }
        self.diff[lo] += 1;
        self.diff[hi] -= 1;
    }

    /// Feeds one node-frame: slot `d` and frame state `omega`.
    fn push(&mut self, k: usize, d: usize, omega: u16) {
        let m = self.frame_size;
        let prev = self.last_c[k];
        let cur = if omega == 1 { Some(0) } else { prev.map(|c| c + 1) };
        self.slots_seen += m as u64;
        match prev {
            Some(c) => {
                let base = m * (c as usize + 1);
                self.add_run(base, base + d);
            }
            None => self.censored += d as u64,
        }
        match cur {
            Some(c) => {
                let base = m * c as usize;
                self.add_run(base + d, base + m);
            }
            None => self.censored += (m - d) as u64,
        }
        self.last_c[k] = cur;
    }

    pub fn finish(&self) -> Result<EmpiricalAoi> {
        if self.slots_seen == 0 {
            return Err(Error::InsufficientData("no frames observed".into()));
        }
        let mut counts = Vec::with_capacity(self.diff.len());
        let mut acc = 0i64;
        for &d in &self.diff {
            acc += d;
            counts.push(acc as u64);
        }
        while counts.last() == Some(&0) {
            counts.pop();
        }
        EmpiricalAoi::from_counts(self.frame_size, counts, self.slots_seen, self.censored)
    }
}

impl FrameObserver for AoiAccumulator {
    fn observe(&mut self, f: &FrameView<'_>) {
        if self.frame_size == 0 {
            self.frame_size = f.frame_size;
            let n = self.nodes.as_ref().map_or(f.num_nodes(), Vec::len);
            self.last_c = vec![None; n];
        }
        match self.nodes.take() {
            Some(nodes) => {
                for (k, &v) in nodes.iter().enumerate() {
                    self.push(k, f.slots[v] as usize, f.frame_state(v));
                }
                self.nodes = Some(nodes);
            }
            None => {
                for v in 0..f.num_nodes() {
                    self.push(v, f.slots[v] as usize, f.frame_state(v));
                }
            }
        }
    }
}

/// Empirical age distribution, position-averaged and per position.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalAoi {
    pub frame_size: usize,
    /// Occurrences of each age value, indexed by age.
    pub counts: Vec<u64>,
    /// Slot observations including censored ones.
    pub observations: u64,
    pub censored: u64,
    /// Age pmf averaged over positions. Its mass is `1 - censored_fraction`.
    pub averaged: Pmf,
}

impl EmpiricalAoi {
    fn from_counts(frame_size: usize, counts: Vec<u64>, observations: u64, censored: u64) -> Result<Self> {
        let averaged = Pmf::from_counts(0, &counts, observations)?;
        Ok(Self {
            frame_size,
            counts,
            observations,
            censored,
            averaged,
        })
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.observations as f64
    }

    /// Age pmf at a fixed position; supported on ages congruent to `pos` mod `m`.
    pub fn per_position(&self, pos: usize) -> Result<Pmf> {
        let m = self.frame_size;
        if pos >= m {
            return Err(Error::Domain(format!("position {pos} outside the frame")));
        }
        let per_pos = self.observations / m as u64;
        let weights: Vec<f64> = (pos..self.counts.len().max(pos + 1))
            .map(|delta| {
                if (delta - pos) % m == 0 {
                    self.counts.get(delta).copied().unwrap_or(0) as f64 / per_pos as f64
                } else {
                    0.0
                }
            })
            .collect();
        Pmf::new(pos as i64, weights).map(|p| p.trimmed())
    }

    /// `delta,pmf,cdf` rows of the averaged pmf.
    pub fn averaged_csv(&self) -> String {
        aoi_csv(&self.averaged)
    }

    /// `position,delta,pmf` rows over all positions, nonzero entries only.
    pub fn per_position_csv(&self) -> String {
        let m = self.frame_size;
        let per_pos = (self.observations / m as u64) as f64;
        let mut s = String::from("position,delta,pmf\n");
        for pos in 0..m {
            for delta in (pos..self.counts.len()).step_by(m) {
                let c = self.counts[delta];
                if c > 0 {
                    s.push_str(&format!("{pos},{delta},{}\n", crate::prob::format_real(c as f64 / per_pos)));
                }
            }
        }
        s
    }
}

/// `delta,pmf,cdf` rows for an age pmf.
pub fn aoi_csv(pmf: &Pmf) -> String {
    let mut s = String::from("delta,pmf,cdf\n");
    for ((delta, p), c) in pmf.iter().zip(pmf.cdf()) {
        s.push_str(&format!(
            "{delta},{},{}\n",
            crate::prob::format_real(p),
            crate::prob::format_real(c)
        ));
    }
    s
}

/// Empirical age distribution of node `v` from its trace.
pub fn empirical_aoi_pmf(traces: &TraceSet, v: usize) -> Result<EmpiricalAoi> {
    let node = traces.node(v)?;
    let mut acc = AoiAccumulator::new(Some(vec![0]));
    acc.frame_size = traces.config.frame_size;
    acc.last_c = vec![None];
    for i in 0..node.len() {
        acc.push(0, node.slots[i] as usize, node.states[i]);
    }
    acc.finish()
}

/// Counts gathered over reservations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReservationStats {
    /// `B` at the last frame of each completed reservation.
    pub durations: Vec<u64>,
    /// Frame state in the first frame of each observed reservation start.
    pub start_states: Vec<u64>,
    /// Start state given the preceding reservation ended in a collision.
    pub start_after_collision: Vec<u64>,
    /// Start state given the preceding reservation ended as a singleton.
    pub start_after_singleton: Vec<u64>,
}

impl ReservationStats {
    fn new(num_nodes: usize) -> Self {
        Self {
            durations: vec![0; 2],
            start_states: vec![0; num_nodes + 1],
            start_after_collision: vec![0; num_nodes + 1],
            start_after_singleton: vec![0; num_nodes + 1],
        }
    }

    pub fn completed(&self) -> u64 {
        self.durations.iter().sum()
    }

    /// Pmf of `B` at reservation ends, support from 1.
    pub fn duration_pmf(&self) -> Result<Pmf> {
        counts_pmf(&self.durations)
    }

    /// Pmf of the frame state at reservation starts, support from 1.
    pub fn start_state_pmf(&self) -> Result<Pmf> {
        counts_pmf(&self.start_states)
    }

    fn record(&mut self, prev: Option<(u16, u32)>, state: u16) {
        self.start_states[state as usize] += 1;
        if let Some((prev_state, prev_age)) = prev {
            let b = prev_age as usize;
            if self.durations.len() <= b {
                self.durations.resize(b + 1, 0);
            }
            self.durations[b] += 1;
            if prev_state == 1 {
                self.start_after_singleton[state as usize] += 1;
            } else {
                self.start_after_collision[state as usize] += 1;
            }
        }
    }
}

/// Pmf over `1..` from counts indexed by value (index 0 is unused).
pub(crate) fn counts_pmf(counts: &[u64]) -> Result<Pmf> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    Pmf::from_counts(1, &counts[1..], total).map(|p| p.trimmed())
}

/// Streaming reservation statistics pooled over nodes.
#[derive(Debug, Clone)]
pub struct ReservationAccumulator {
    nodes: Option<Vec<usize>>,
    last: Vec<Option<(u16, u32)>>,
    stats: Option<ReservationStats>,
}

impl ReservationAccumulator {
    /// Pools the listed nodes, or every node when `nodes` is `None`.
    pub fn new(nodes: Option<Vec<usize>>) -> Self {
        Self {
            nodes,
            last: Vec::new(),
            stats: None,
        }
    }

    pub fn finish(self) -> Result<ReservationStats> {
        self.stats
            .ok_or_else(|| Error::InsufficientData("no frames observed".into()))
    }
}

impl FrameObserver for ReservationAccumulator {
    fn observe(&mut self, f: &FrameView<'_>) {
        let stats = self.stats.get_or_insert_with(|| ReservationStats::new(f.num_nodes()));
        let nodes: Vec<usize> = self.nodes.clone().unwrap_or_else(|| (0..f.num_nodes()).collect());
        if self.last.is_empty() {
            self.last = vec![None; nodes.len()];
        }
        for (k, &v) in nodes.iter().enumerate() {
            let (state, age) = (f.frame_state(v), f.ages[v]);
            if age == 1 {
                stats.record(self.last[k], state);
            }
            self.last[k] = Some((state, age));
        }
    }
}

/// Reservation statistics of node `v`. The reservation in progress at the
/// end of the window is not counted.
pub fn reservation_statistics(traces: &TraceSet, v: usize) -> Result<ReservationStats> {
    let node = traces.node(v)?;
    let mut stats = ReservationStats::new(traces.config.num_nodes);
    let mut last = None;
    for i in 0..node.len() {
        if node.ages[i] == 1 {
            stats.record(last, node.states[i]);
        }
        last = Some((node.states[i], node.ages[i]));
    }
    if stats.completed() == 0 {
        return Err(Error::InsufficientData(format!(
            "node {v} completed no reservation in the window"
        )));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::prob::total_variation;
    use crate::sim::{run_simulation, run_simulation_tracking, Simulator};
    use proptest::prelude::*;

    /// Age by scanning slot instants backwards for the last reception: a
    /// reception happens at `y m + d(y)` whenever the node is alone in frame `y`.
    fn backward_scan(traces: &TraceSet, v: usize, t: u64) -> Option<u64> {
        let node = traces.node(v).unwrap();
        let m = traces.config.frame_size as u64;
        let mut s = t;
        loop {
            let y = s / m;
            if y < traces.first_frame {
                return None;
            }
            let i = (y - traces.first_frame) as usize;
            if s % m == node.slots[i] as u64 && node.states[i] == 1 {
                return Some(t - y * m);
            }
            if s == 0 {
                return None;
            }
            s -= 1;
        }
    }

    fn synthetic(states: Vec<u16>, slots: Vec<u16>, ages: Vec<u32>, m: usize) -> TraceSet {
        let n = states.len();
        TraceSet {
            config: SystemConfig::new(3, m, 0.5).with_horizon(0, n as u64),
            first_frame: 10,
            empty_counts: vec![1; n],
            nodes: vec![NodeTrace {
                node: 0,
                slots,
                states,
                ages,
            }],
        }
    }

    #[test]
    fn collision_duration_counts_back_to_last_singleton() {
        let t = synthetic(vec![2, 1, 2, 2, 3], vec![0; 5], vec![1, 2, 3, 4, 5], 5);
        assert_eq!(collision_duration(&t, 0, 11).unwrap(), Some(0));
        assert_eq!(collision_duration(&t, 0, 14).unwrap(), Some(3));
        assert_eq!(collision_duration(&t, 0, 10).unwrap(), None);
        assert!(collision_duration(&t, 0, 15).is_err());
        let traj = AoiTrajectory::from_trace(&t, 0).unwrap();
        assert_eq!(traj.collision, vec![None, Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn singleton_after_collision_resets() {
        let t = synthetic(vec![2, 2, 1], vec![0; 3], vec![1, 2, 1], 5);
        assert_eq!(collision_duration(&t, 0, 12).unwrap(), Some(0));
    }

    #[test]
    fn single_node_ages_follow_both_cases() {
        let cfg = SystemConfig::new(1, 4, 0.5).with_horizon(0, 200);
        let t = run_simulation(&cfg).unwrap();
        let node = t.node(0).unwrap();
        let m = 4u64;
        for i in 1..node.len() {
            let x = t.first_frame + i as u64;
            let d = node.slots[i] as u64;
            for pos in 0..m {
                let want = if pos < d { m + pos } else { pos };
                assert_eq!(aoi_at(&t, 0, x * m + pos).unwrap(), Some(want));
            }
        }
    }

    #[test]
    fn ages_match_backward_scan_and_trajectory() {
        let cfg = SystemConfig::new(3, 5, 0.3).with_seed(11).with_horizon(0, 200);
        let t = run_simulation(&cfg).unwrap();
        let traj = AoiTrajectory::from_trace(&t, 0).unwrap();
        let mut compared = 0;
        for time in traj.time_range() {
            let a = aoi_at(&t, 0, time).unwrap();
            assert_eq!(a, traj.aoi_at(time));
            let b = backward_scan(&t, 0, time);
            if let Some(a) = a {
                assert_eq!(Some(a), b, "t = {time}");
                compared += 1;
            }
        }
        assert!(compared > 900);
    }

    #[test]
    fn aoi_steps_by_one_or_drops_whole_frames() {
        let cfg = SystemConfig::new(4, 6, 0.4).with_seed(3).with_horizon(10, 500);
        let t = run_simulation(&cfg).unwrap();
        let traj = AoiTrajectory::from_trace(&t, 0).unwrap();
        let ages: Vec<Option<u64>> = traj.ages().collect();
        for w in ages.windows(2) {
            if let [Some(a), Some(b)] = *w {
                let diff = b as i64 - a as i64;
                assert!(diff == 1 || (diff < 1 && (1 - diff) % 6 == 0), "step {diff}");
            }
        }
    }

    #[test]
    fn segmentation_holds_for_single_node() {
        let cfg = SystemConfig::new(1, 3, 0.5).with_horizon(0, 1_000);
        let t = run_simulation(&cfg).unwrap();
        let r = verify_segmentation(&t, 0).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.max_collided_reservations, 0);
    }

    #[test]
    fn segmentation_holds_on_small_system() {
        let cfg = SystemConfig::new(5, 10, 0.3).with_seed(5).with_horizon(1_000, 10_000);
        let t = run_simulation_tracking(&cfg, &[0, 4]).unwrap();
        for v in [0, 4] {
            let r = verify_segmentation(&t, v).unwrap();
            assert_eq!(r.violations, 0);
            assert_eq!(r.duration_violations, 0);
            assert!(r.checked > 90_000);
            assert!(r.max_collided_reservations >= 2);
        }
    }

    #[test]
    fn two_slot_single_node_distribution_is_exact() {
        // d uniform on {0, 1}, pos uniform on {0, 1}: ages 0, 1, 1, 2
        let cfg = SystemConfig::new(1, 2, 1.0).with_horizon(0, 400_000);
        let t = run_simulation(&cfg).unwrap();
        let e = empirical_aoi_pmf(&t, 0).unwrap();
        let (p, _) = e.averaged.renormalized().unwrap();
        let exact = Pmf::new(0, vec![0.25, 0.5, 0.25]).unwrap();
        assert!(total_variation(&p, &exact) < 0.005);
        assert_eq!(p.end(), 3);
    }

    #[test]
    fn single_node_support_and_mass() {
        let m = 5;
        let cfg = SystemConfig::new(1, m, 0.3).with_horizon(0, 20_000);
        let t = run_simulation(&cfg).unwrap();
        let e = empirical_aoi_pmf(&t, 0).unwrap();
        assert_eq!(e.averaged.offset(), 0);
        assert!(e.averaged.end() <= 2 * m as i64 - 1);
        assert!((e.averaged.mass() + e.censored_fraction() - 1.0).abs() < 1e-12);
        let mut per_pos_mass = 0.0;
        for pos in 0..m {
            let p = e.per_position(pos).unwrap();
            assert!(p.iter().all(|(d, w)| w == 0.0 || (d as usize) % m == pos));
            per_pos_mass += p.mass() / m as f64;
        }
        assert!((per_pos_mass - e.averaged.mass()).abs() < 1e-12);
    }

    #[test]
    fn streaming_accumulator_matches_trace_histogram() {
        let cfg = SystemConfig::new(4, 7, 0.2).with_seed(8).with_horizon(50, 3_000);
        let from_trace = empirical_aoi_pmf(&run_simulation(&cfg).unwrap(), 0).unwrap();
        let mut acc = AoiAccumulator::new(Some(vec![0]));
        Simulator::new(&cfg).unwrap().run(&mut acc);
        assert_eq!(acc.finish().unwrap(), from_trace);
    }

    #[test]
    fn histogram_matches_direct_ages() {
        let cfg = SystemConfig::new(3, 5, 0.3).with_seed(2).with_horizon(0, 2_000);
        let t = run_simulation(&cfg).unwrap();
        let traj = AoiTrajectory::from_trace(&t, 0).unwrap();
        let mut counts = vec![0u64; 0];
        let mut censored = 0;
        for a in traj.ages() {
            match a {
                Some(a) => {
                    if counts.len() <= a as usize {
                        counts.resize(a as usize + 1, 0);
                    }
                    counts[a as usize] += 1;
                }
                None => censored += 1,
            }
        }
        let e = empirical_aoi_pmf(&t, 0).unwrap();
        assert_eq!(e.counts, counts);
        assert_eq!(e.censored, censored);
    }

    #[test]
    fn reservation_extremes() {
        let t = run_simulation(&SystemConfig::new(3, 6, 1.0).with_horizon(0, 1_000)).unwrap();
        let s = reservation_statistics(&t, 0).unwrap();
        assert_eq!(s.duration_pmf().unwrap(), Pmf::delta(1));
        let t = run_simulation(&SystemConfig::new(1, 4, 0.2).with_horizon(0, 5_000)).unwrap();
        let s = reservation_statistics(&t, 0).unwrap();
        assert_eq!(s.start_state_pmf().unwrap(), Pmf::delta(1));
    }

    #[test]
    fn reservation_durations_are_geometric() {
        let p = 0.5;
        let cfg = SystemConfig::new(2, 4, p).with_seed(4).with_horizon(100, 200_000);
        let s = reservation_statistics(&run_simulation(&cfg).unwrap(), 0).unwrap();
        assert!(s.completed() >= 100_000);
        let geo = Pmf::new(1, (1..60).map(|b| p * (1.0 - p).powi(b - 1)).collect()).unwrap();
        let tv = total_variation(&s.duration_pmf().unwrap(), &geo);
        assert!(tv < 0.01, "{tv}");
    }

    #[test]
    fn streaming_reservations_match_trace() {
        let cfg = SystemConfig::new(4, 7, 0.2).with_seed(8).with_horizon(50, 3_000);
        let from_trace = reservation_statistics(&run_simulation(&cfg).unwrap(), 0).unwrap();
        let mut acc = ReservationAccumulator::new(Some(vec![0]));
        Simulator::new(&cfg).unwrap().run(&mut acc);
        let mut streamed = acc.finish().unwrap();
        streamed.durations.resize(from_trace.durations.len(), 0);
        assert_eq!(streamed, from_trace);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_traces_agree_with_oracles(
            v in 1usize..5, extra in 1usize..4, p in 0.1f64..1.0, seed in any::<u64>()
        ) {
            let cfg = SystemConfig::new(v, v + extra, p).with_seed(seed).with_horizon(0, 150);
            let t = run_simulation(&cfg).unwrap();
            let r = verify_segmentation(&t, 0).unwrap();
            prop_assert_eq!(r.violations, 0);
            prop_assert_eq!(r.duration_violations, 0);
            let traj = AoiTrajectory::from_trace(&t, 0).unwrap();
            for time in traj.time_range() {
                if let Some(a) = traj.aoi_at(time) {
                    prop_assert_eq!(Some(a), backward_scan(&t, 0, time));
                }
            }
        }
    }
}
