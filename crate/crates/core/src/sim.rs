//! Frame-stepped Monte-Carlo simulation of semi-persistent scheduling.
//!
//! Every frame each node either keeps its slot or ends its reservation and
//! draws a new slot uniformly from the slots that were empty in the previous
//! frame. The empty set is computed once per frame boundary, before any node
//! moves, so two reselecting nodes can land on the same slot.
//!
//! Statistics are collected through [`FrameObserver`]s. [`TraceRecorder`]
//! keeps full per-frame records for a chosen set of nodes; the streaming
//! accumulators in [`crate::analysis`] and [`crate::validation`] pool all
//! nodes without storing traces.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CounterModel, SystemConfig};
use crate::error::{Error, Result};
use crate::prob::Pmf;

/// Occupancy pattern of one frame plus per-node reservation bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelState {
    pub frame_index: u64,
    /// Slot of every node, in `0..m`.
    pub slots: Vec<u16>,
    /// Frames since the node last changed its slot; 1 in the frame of a change.
    pub reservation_age: Vec<u32>,
    /// Remaining transmissions of the current counter (uniform counter model only).
    pub pending_counter: Vec<u32>,
}

impl ChannelState {
    /// Number of nodes transmitting in each slot.
    pub fn occupancy(&self, frame_size: usize) -> Vec<u16> {
        let mut occ = vec![0u16; frame_size];
        for &s in &self.slots {
            occ[s as usize] += 1;
        }
        occ
    }

    pub fn empty_slots(&self, frame_size: usize) -> Vec<u16> {
        self.occupancy(frame_size)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(s, _)| s as u16)
            .collect()
    }

    /// Number of nodes sharing each node's slot, the node itself included.
    pub fn frame_states(&self, frame_size: usize) -> Vec<u16> {
        let occ = self.occupancy(frame_size);
        self.slots.iter().map(|&s| occ[s as usize]).collect()
    }
}

/// Collision-free start state: node `v` transmits in slot `v + 1`.
pub fn initial_state(config: &SystemConfig) -> Result<ChannelState> {
    if config.num_nodes >= config.frame_size {
        return Err(Error::Config(format!(
            "num_nodes ({}) must be smaller than frame_size ({})",
            config.num_nodes, config.frame_size
        )));
    }
    let v = config.num_nodes;
    Ok(ChannelState {
        frame_index: 1,
        slots: (1..=v as u16).collect(),
        reservation_age: vec![1; v],
        pending_counter: vec![0; v],
    })
}

/// Scratch buffers reused across frames.
#[derive(Debug, Clone, Default)]
struct Scratch {
    occupancy: Vec<u16>,
    empties: Vec<u16>,
}

fn advance<R: Rng>(state: &mut ChannelState, config: &SystemConfig, rng: &mut R, scratch: &mut Scratch) {
    let m = config.frame_size;
    scratch.occupancy.clear();
    scratch.occupancy.resize(m, 0);
    for &s in &state.slots {
        scratch.occupancy[s as usize] += 1;
    }
    scratch.empties.clear();
    scratch.empties.extend(
        scratch
            .occupancy
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(s, _)| s as u16),
    );
    assert!(
        !scratch.empties.is_empty(),
        "no empty slot in frame {}; requires num_nodes < frame_size",
        state.frame_index
    );
    let n_empty = scratch.empties.len();

    for v in 0..state.slots.len() {
        let reselect = match config.counter_model {
            CounterModel::Geometric => rng.gen::<f64>() < config.ending_prob,
            CounterModel::UniformCounter { lo, hi, p_keep } => {
                let c = &mut state.pending_counter[v];
                *c = c.saturating_sub(1);
                if *c == 0 {
                    *c = rng.gen_range(lo..=hi);
                    rng.gen::<f64>() >= p_keep
                } else {
                    false
                }
            }
        };
        if reselect {
            state.slots[v] = scratch.empties[rng.gen_range(0..n_empty)];
            state.reservation_age[v] = 1;
        } else {
            state.reservation_age[v] += 1;
        }
    }
    state.frame_index += 1;
}

/// One frame transition. Draws are consumed in node order.
pub fn step_frame<R: Rng>(state: &ChannelState, config: &SystemConfig, rng: &mut R) -> ChannelState {
    let mut next = state.clone();
    advance(&mut next, config, rng, &mut Scratch::default());
    next
}

/// Read-only view of one simulated frame handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub frame_index: u64,
    pub frame_size: usize,
    pub slots: &'a [u16],
    pub ages: &'a [u32],
    /// Nodes per slot.
    pub occupancy: &'a [u16],
    pub empty_count: usize,
}

impl FrameView<'_> {
    pub fn num_nodes(&self) -> usize {
        self.slots.len()
    }

    pub fn frame_state(&self, v: usize) -> u16 {
        self.occupancy[self.slots[v] as usize]
    }
}

pub trait FrameObserver {
    fn observe(&mut self, frame: &FrameView<'_>);
}

impl<O: FrameObserver + ?Sized> FrameObserver for &mut O {
    fn observe(&mut self, frame: &FrameView<'_>) {
        (**self).observe(frame)
    }
}

impl<A: FrameObserver, B: FrameObserver> FrameObserver for (A, B) {
    fn observe(&mut self, frame: &FrameView<'_>) {
        self.0.observe(frame);
        self.1.observe(frame);
    }
}

impl<A: FrameObserver, B: FrameObserver, C: FrameObserver> FrameObserver for (A, B, C) {
    fn observe(&mut self, frame: &FrameView<'_>) {
        self.0.observe(frame);
        self.1.observe(frame);
        self.2.observe(frame);
    }
}

impl<O: FrameObserver> FrameObserver for Vec<O> {
    fn observe(&mut self, frame: &FrameView<'_>) {
        for o in self {
            o.observe(frame);
        }
    }
}

/// A seeded run of the channel. The whole trajectory is a function of the
/// configuration, `rng_seed` included.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SystemConfig,
    state: ChannelState,
    rng: ChaCha8Rng,
    scratch: Scratch,
}

impl Simulator {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let state = initial_state(config)?;
        Self::with_state(config, state)
    }

    /// Starts from an arbitrary state. Only structural consistency is checked,
    /// which lets tests drive degenerate chains such as `ending_prob = 0`.
    pub fn with_state(config: &SystemConfig, mut state: ChannelState) -> Result<Self> {
        let v = config.num_nodes;
        if state.slots.len() != v || state.reservation_age.len() != v || state.pending_counter.len() != v {
            return Err(Error::Config("state does not match num_nodes".into()));
        }
        if v >= config.frame_size {
            return Err(Error::Config("num_nodes must be smaller than frame_size".into()));
        }
        if let Some(&s) = state.slots.iter().find(|&&s| s as usize >= config.frame_size) {
            return Err(Error::Config(format!("slot {s} outside the frame")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        if let CounterModel::UniformCounter { lo, hi, .. } = config.counter_model {
            for c in state.pending_counter.iter_mut().filter(|c| **c == 0) {
                *c = rng.gen_range(lo..=hi);
            }
        }
        Ok(Self {
            config: config.clone(),
            state,
            rng,
            scratch: Scratch::default(),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn step(&mut self) {
        advance(&mut self.state, &self.config, &mut self.rng, &mut self.scratch);
    }

    /// Runs the configured warm-up unobserved, then the measured frames with
    /// every frame passed to `observer`.
    pub fn run<O: FrameObserver>(&mut self, observer: &mut O) {
        for _ in 0..self.config.warmup_frames {
            self.step();
        }
        let m = self.config.frame_size;
        let mut occupancy = vec![0u16; m];
        for _ in 0..self.config.measured_frames {
            self.step();
            occupancy.iter_mut().for_each(|c| *c = 0);
            for &s in &self.state.slots {
                occupancy[s as usize] += 1;
            }
            let empty_count = occupancy.iter().filter(|&&c| c == 0).count();
            observer.observe(&FrameView {
                frame_index: self.state.frame_index,
                frame_size: m,
                slots: &self.state.slots,
                ages: &self.state.reservation_age,
                occupancy: &occupancy,
                empty_count,
            });
        }
    }
}

/// Per-frame record of one node over the measured window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node: usize,
    pub slots: Vec<u16>,
    /// Frame state: nodes sharing this node's slot, itself included.
    pub states: Vec<u16>,
    pub ages: Vec<u32>,
}

impl NodeTrace {
    fn new(node: usize) -> Self {
        Self {
            node,
            slots: Vec::new(),
            states: Vec::new(),
            ages: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// True when the node changed its slot at the transition into frame `i`.
    pub fn reselected(&self, i: usize) -> bool {
        self.ages[i] == 1
    }
}

/// Simulator output over the measured frames (warm-up excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub config: SystemConfig,
    /// Absolute index of the first recorded frame.
    pub first_frame: u64,
    pub empty_counts: Vec<u32>,
    pub nodes: Vec<NodeTrace>,
}

impl TraceSet {
    pub fn total_frames(&self) -> usize {
        self.empty_counts.len()
    }

    pub fn node(&self, v: usize) -> Result<&NodeTrace> {
        self.nodes
            .iter()
            .find(|n| n.node == v)
            .ok_or_else(|| Error::Domain(format!("node {v} was not tracked")))
    }

    pub fn tracked_nodes(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.node).collect()
    }
}

/// Observer building a [`TraceSet`] for the tracked nodes.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    trace: TraceSet,
}

impl TraceRecorder {
    pub fn new(config: &SystemConfig, tracked: &[usize]) -> Result<Self> {
        if let Some(&v) = tracked.iter().find(|&&v| v >= config.num_nodes) {
            return Err(Error::Config(format!("tracked node {v} does not exist")));
        }
        let cap = config.measured_frames.min(1 << 24) as usize;
        let mut nodes: Vec<NodeTrace> = tracked.iter().map(|&v| NodeTrace::new(v)).collect();
        for n in &mut nodes {
            n.slots.reserve(cap);
            n.states.reserve(cap);
            n.ages.reserve(cap);
        }
        Ok(Self {
            trace: TraceSet {
                config: config.clone(),
                first_frame: 0,
                empty_counts: Vec::with_capacity(cap),
                nodes,
            },
        })
    }

    pub fn finish(self) -> TraceSet {
        self.trace
    }
}

impl FrameObserver for TraceRecorder {
    fn observe(&mut self, frame: &FrameView<'_>) {
        if self.trace.empty_counts.is_empty() {
            self.trace.first_frame = frame.frame_index;
        }
        self.trace.empty_counts.push(frame.empty_count as u32);
        for n in &mut self.trace.nodes {
            n.slots.push(frame.slots[n.node]);
            n.states.push(frame.frame_state(n.node));
            n.ages.push(frame.ages[n.node]);
        }
    }
}

/// Simulates `config` and records node 0.
pub fn run_simulation(config: &SystemConfig) -> Result<TraceSet> {
    run_simulation_tracking(config, &[0])
}

pub fn run_simulation_tracking(config: &SystemConfig, tracked: &[usize]) -> Result<TraceSet> {
    let mut sim = Simulator::new(config)?;
    let mut rec = TraceRecorder::new(config, tracked)?;
    sim.run(&mut rec);
    Ok(rec.finish())
}

/// Slot marginal pooled over the tracked nodes.
pub fn empirical_slot_marginal(traces: &TraceSet) -> Result<Pmf> {
    let m = traces.config.frame_size;
    let mut counts = vec![0u64; m];
    let mut total = 0u64;
    for n in &traces.nodes {
        for &s in &n.slots {
            counts[s as usize] += 1;
        }
        total += n.len() as u64;
    }
    Pmf::from_counts(0, &counts, total)
}

/// Streaming slot marginal pooled over every node.
#[derive(Debug, Clone, Default)]
pub struct SlotMarginal {
    counts: Vec<u64>,
    total: u64,
}

impl SlotMarginal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pmf(&self) -> Result<Pmf> {
        Pmf::from_counts(0, &self.counts, self.total)
    }
}

impl FrameObserver for SlotMarginal {
    fn observe(&mut self, frame: &FrameView<'_>) {
        if self.counts.is_empty() {
            self.counts = vec![0; frame.frame_size];
        }
        for &s in frame.slots {
            self.counts[s as usize] += 1;
        }
        self.total += frame.slots.len() as u64;
    }
}

/// Binary trace dump: per frame a little-endian `u32` frame index, then one
/// `u16` slot per node, then one `u8` frame state per node (saturating at 255).
#[derive(Debug)]
pub struct TraceDumpWriter<W: Write> {
    out: W,
    buf: Vec<u8>,
    error: Option<io::Error>,
}

impl<W: Write> TraceDumpWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            buf: Vec::new(),
            error: None,
        }
    }

    /// Flushes and returns the writer, or the first I/O error encountered.
    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> FrameObserver for TraceDumpWriter<W> {
    fn observe(&mut self, frame: &FrameView<'_>) {
        if self.error.is_some() {
            return;
        }
        self.buf.clear();
        self.buf.extend_from_slice(&(frame.frame_index as u32).to_le_bytes());
        for &s in frame.slots {
            self.buf.extend_from_slice(&s.to_le_bytes());
        }
        for v in 0..frame.num_nodes() {
            self.buf.push(frame.frame_state(v).min(u8::MAX as u16) as u8);
        }
        if let Err(e) = self.out.write_all(&self.buf) {
            self.error = Some(e);
        }
    }
}

/// One decoded record of a binary trace dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub frame_index: u32,
    pub slots: Vec<u16>,
    pub states: Vec<u8>,
}

pub fn read_trace_dump<R: Read>(mut input: R, num_nodes: usize) -> io::Result<Vec<DumpRecord>> {
    let width = 4 + 3 * num_nodes;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % width != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("dump length {} is not a multiple of the record width {width}", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(width)
        .map(|rec| {
            let frame_index = u32::from_le_bytes(rec[0..4].try_into().unwrap());
            let slots = rec[4..4 + 2 * num_nodes]
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            let states = rec[4 + 2 * num_nodes..].to_vec();
            DumpRecord {
                frame_index,
                slots,
                states,
            }
        })
        .collect())
}
