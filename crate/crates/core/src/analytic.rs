//! Closed-form approximation of the age distribution.
//!
//! The approximation treats the frame states at consecutive reservation
//! boundaries as independent and the number of empty slots as fixed at its
//! mean `E[N]`. The pipeline is
//!
//! 1. `E[N]` from a renewal fixed point over the occupancy of a single slot,
//! 2. the frame-state law at a reservation start (binomial thinning of the
//!    other `V - 1` nodes, each landing on the node's new slot w.p. `p_E / n`),
//! 3. `f_P(b) = P(B = b) P(collided | B = b)`, the law of one collided
//!    reservation,
//! 4. the collision duration `Q(c) = s * sum_w f_P^{*w}(c)` with `s` the
//!    probability that a reservation ends as a singleton,
//! 5. the age pmf at each position and its uniform average over positions.
//!
//! Several readings of the underlying formulas are selectable; the defaults
//! are the ones that agree with simulation (see the enum docs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{binomial_row, Pmf};

/// Exponent of the reservation-duration law.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationExponent {
    /// `p_E (1 - p_E)^(b - 1)`, a proper geometric law on `1, 2, ...`.
    #[default]
    Normalized,
    /// `p_E (1 - p_E)^b`, which carries mass `1 - p_E` only.
    Shifted,
}

/// How a reselecting node spreads over empty slots in the fixed point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalDenominator {
    /// A given empty slot receives each reselecting node w.p. `p_E / E[N]`.
    #[default]
    EmptySlots,
    /// `p_E / (1 + E[N])`.
    EmptySlotsPlusOne,
}

/// Occupancy transition of a busy slot in the fixed point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyTransitions {
    /// From `k` occupants, `n` remain w.p. `C(k, n) (1 - p_E)^n p_E^(k - n)`.
    #[default]
    Survivors,
    /// From `k` occupants, `n` remain w.p. `C(k, n) p_E^n (1 - p_E)^(k - n)`.
    Reselectors,
}

/// Weights of the two collision-duration terms at a fixed position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionWeighting {
    /// `P(d > pos) = (m - 1 - pos) / m` on the previous frame's duration and
    /// `P(d <= pos) = (pos + 1) / m` on the current one, with `d` uniform.
    #[default]
    ReceptionOrder,
    /// `pos / m` and `(m - pos) / m`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting value; `m / V` when absent.
    pub start: Option<f64>,
    pub arrival: ArrivalDenominator,
    pub transitions: OccupancyTransitions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            start: None,
            arrival: ArrivalDenominator::default(),
            transitions: OccupancyTransitions::default(),
        }
    }
}

/// Source of the empty-slot law `Q_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmptySlotModel {
    /// Point mass at the fixed-point mean.
    FixedPoint(FixedPointOptions),
    /// A given distribution over `1..=m`.
    Explicit { pmf: Pmf },
    /// Distribution measured from simulation.
    Empirical { pmf: Pmf },
}

impl Default for EmptySlotModel {
    fn default() -> Self {
        Self::FixedPoint(FixedPointOptions::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticParams {
    pub num_nodes: usize,
    pub frame_size: usize,
    pub ending_prob: f64,
    /// Largest number of collided reservations summed over.
    #[serde(default = "default_w_bar")]
    pub w_bar: u32,
    /// Longest reservation considered.
    #[serde(default = "default_b_bar")]
    pub b_bar: u32,
    #[serde(default)]
    pub empty_slots: EmptySlotModel,
    #[serde(default)]
    pub exponent: ReservationExponent,
    #[serde(default)]
    pub weighting: PositionWeighting,
    /// Collision-duration tail mass below which the age pmf is cut off.
    #[serde(default = "default_tail_cutoff")]
    pub tail_cutoff: f64,
}

fn default_w_bar() -> u32 {
    50
}

fn default_b_bar() -> u32 {
    1000
}

fn default_tail_cutoff() -> f64 {
    1e-15
}

impl AnalyticParams {
    pub fn new(num_nodes: usize, frame_size: usize, ending_prob: f64) -> Self {
        Self {
            num_nodes,
            frame_size,
            ending_prob,
            w_bar: default_w_bar(),
            b_bar: default_b_bar(),
            empty_slots: EmptySlotModel::default(),
            exponent: ReservationExponent::default(),
            weighting: PositionWeighting::default(),
            tail_cutoff: default_tail_cutoff(),
        }
    }

    pub fn from_config(config: &crate::config::SystemConfig) -> Self {
        Self::new(config.num_nodes, config.frame_size, config.ending_prob)
    }

    pub fn with_truncation(mut self, w_bar: u32, b_bar: u32) -> Self {
        self.w_bar = w_bar;
        self.b_bar = b_bar;
        self
    }

    pub fn with_empty_slots(mut self, model: EmptySlotModel) -> Self {
        self.empty_slots = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_point(self.num_nodes, self.frame_size, self.ending_prob)?;
        if self.w_bar < 1 || self.b_bar < 1 {
            return Err(Error::Config("w_bar and b_bar must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.tail_cutoff) {
            return Err(Error::Config(format!("tail_cutoff {} outside [0, 1)", self.tail_cutoff)));
        }
        match &self.empty_slots {
            EmptySlotModel::FixedPoint(_) => {}
            EmptySlotModel::Explicit { pmf } | EmptySlotModel::Empirical { pmf } => {
                check_empty_slot_pmf(pmf, self.frame_size)?
            }
        }
        Ok(())
    }
}

fn check_point(v: usize, m: usize, p: f64) -> Result<()> {
    if v == 0 || v >= m {
        return Err(Error::Config(format!("need 0 < num_nodes ({v}) < frame_size ({m})")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("ending_prob {p} outside (0, 1]")));
    }
    Ok(())
}

fn check_empty_slot_pmf(pmf: &Pmf, m: usize) -> Result<()> {
    let t = pmf.trimmed();
    if !t.is_empty() && (t.offset() < 1 || t.end() > m as i64 + 1) {
        return Err(Error::Domain(format!(
            "empty-slot pmf support [{}, {}) not within 1..={m}",
            t.offset(),
            t.end()
        )));
    }
    if (pmf.mass() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("empty-slot pmf has mass {}", pmf.mass())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmptySlotSolution {
    pub e_n: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Iterates starting with the initial value.
    pub trajectory: Vec<f64>,
}

/// Expected time, in frames, until a slot that currently holds `k` nodes is
/// empty again, for `k = 1..=V`. Solves `(I - A) z = e` by forward substitution.
pub fn busy_durations(v: usize, p: f64, transitions: OccupancyTransitions) -> Result<Vec<f64>> {
    let mut z = vec![0.0; v + 1];
    for k in 1..=v {
        // row k of A over n = 0..=k; column 0 (slot emptied) is dropped
        let row = match transitions {
            OccupancyTransitions::Survivors => binomial_row(k as u64, 1.0 - p)?,
            OccupancyTransitions::Reselectors => binomial_row(k as u64, p)?,
        };
        let diag = 1.0 - row[k];
        if diag <= 0.0 {
            return Err(Error::Singular(format!(
                "I - A has a zero pivot at k = {k} for ending_prob {p}"
            )));
        }
        let rhs: f64 = 1.0 + (1..k).map(|n| row[n] * z[n]).sum::<f64>();
        z[k] = rhs / diag;
    }
    z.remove(0);
    Ok(z)
}

/// Mean number of empty slots with the default options.
pub fn expected_empty_slots(v: usize, m: usize, p: f64, tol: f64, max_iter: usize) -> Result<EmptySlotSolution> {
    solve_empty_slots(
        v,
        m,
        p,
        &FixedPointOptions {
            tol,
            max_iter,
            ..FixedPointOptions::default()
        },
    )
}

/// Iterates `E_{i+1} = m / (1 + sum_k w_k z_k)` where `w_k` is the chance
/// that exactly `k` of the `V` nodes move into a given empty slot and `z_k`
/// the resulting busy time. A slot alternates between empty stretches and
/// busy periods, so `m` over one plus the mean busy-to-empty ratio is the
/// mean number of empty slots.
pub fn solve_empty_slots(v: usize, m: usize, p: f64, opts: &FixedPointOptions) -> Result<EmptySlotSolution> {
    check_point(v, m, p)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let z = busy_durations(v, p, opts.transitions)?;
    let mut e = opts.start.unwrap_or(m as f64 / v as f64);
    if !(e > 0.0 && e <= m as f64) {
        return Err(Error::Config(format!("start value {e} outside (0, m]")));
    }
    let mut trajectory = vec![e];
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let denom = match opts.arrival {
            ArrivalDenominator::EmptySlots => e,
            ArrivalDenominator::EmptySlotsPlusOne => 1.0 + e,
        };
        let q = (p / denom).min(1.0);
        let w = binomial_row(v as u64, q)?;
        let busy: f64 = (1..=v).map(|k| w[k] * z[k - 1]).sum();
        let next = m as f64 / (1.0 + busy);
        residual = (next - e).abs();
        e = next;
        trajectory.push(e);
        if residual < opts.tol {
            return Ok(EmptySlotSolution {
                e_n: e,
                iterations: it,
                residual,
                trajectory,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last: e,
        residual,
    })
}

/// Empty-slot law used by the start-state distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum EmptySlotLaw {
    /// All mass at one (possibly fractional) value.
    Point(f64),
    Distribution(Pmf),
}

/// Frame-state law at a reservation start over `λ = 1..=V`:
/// `sum_n Q_N(n) Binom(V - 1, p_E / n, λ - 1)`.
pub fn start_state_pmf(v: usize, p: f64, law: &EmptySlotLaw) -> Result<Pmf> {
    if v == 0 {
        return Err(Error::Config("num_nodes must be positive".into()));
    }
    let mut acc = vec![0.0; v];
    let mut add = |n: f64, weight: f64| -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        if !(n > 0.0) || p / n > 1.0 {
            return Err(Error::Domain(format!(
                "empty-slot value {n} gives landing probability above one"
            )));
        }
        for (a, b) in acc.iter_mut().zip(binomial_row(v as u64 - 1, p / n)?) {
            *a += weight * b;
        }
        Ok(())
    };
    match law {
        EmptySlotLaw::Point(n) => add(*n, 1.0)?,
        EmptySlotLaw::Distribution(q) => {
            for (n, w) in q.iter() {
                add(n as f64, w)?;
            }
        }
    }
    Pmf::new(1, acc)
}

/// `P(collided | B = b) = 1 - sum_λ P_start(λ) (1 - (1 - p_E)^(b-1))^(λ-1)`:
/// each of the other `λ - 1` starting occupants must have left within the
/// `b - 1` frames since the start.
pub fn collision_given_duration(start: &Pmf, p: f64, b: u32) -> Result<f64> {
    if b < 1 {
        return Err(Error::Domain("reservation duration must be at least 1".into()));
    }
    // 1 - y^k evaluated as -expm1(k ln y) to keep precision as y -> 1
    let stay = (1.0 - p).powi(b as i32 - 1);
    let ln_y = (-stay).ln_1p();
    let mut out = (1.0 - start.mass()).max(0.0);
    for (lambda, w) in start.iter() {
        if lambda <= 1 || w == 0.0 {
            continue;
        }
        let k = (lambda - 1) as f64;
        out += w * -(k * ln_y).exp_m1();
    }
    Ok(out.clamp(0.0, 1.0))
}

/// Normalized reservation-duration law `p_E (1 - p_E)^(b - 1)`.
pub fn reservation_duration_pmf(p: f64, b: u32) -> Result<f64> {
    reservation_duration_pmf_with(p, b, ReservationExponent::Normalized)
}

pub fn reservation_duration_pmf_with(p: f64, b: u32, exponent: ReservationExponent) -> Result<f64> {
    if b < 1 {
        return Err(Error::Domain("reservation duration must be at least 1".into()));
    }
    let e = match exponent {
        ReservationExponent::Normalized => b - 1,
        ReservationExponent::Shifted => b,
    };
    Ok(p * (1.0 - p).powi(e as i32))
}

/// `sum_{b=1}^{b_bar} P(B = b)` in closed form.
pub fn reservation_mass(p: f64, b_bar: u32, exponent: ReservationExponent) -> f64 {
    let head = -(b_bar as f64 * (-p).ln_1p()).exp_m1();
    match exponent {
        ReservationExponent::Normalized => head,
        ReservationExponent::Shifted => (1.0 - p) * head,
    }
}

/// Joint probability of a collided reservation of length `b` for
/// `b = 1..=b_bar`, as a pmf with offset 1.
pub fn joint_collision_pmf(start: &Pmf, p: f64, b_bar: u32, exponent: ReservationExponent) -> Result<Pmf> {
    let weights = (1..=b_bar)
        .map(|b| Ok(reservation_duration_pmf_with(p, b, exponent)? * collision_given_duration(start, p, b)?))
        .collect::<Result<Vec<f64>>>()?;
    Pmf::new(1, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionDuration {
    /// `Q(c)` over `c = 0..=w_bar * b_bar`.
    pub pmf: Pmf,
    /// Probability that a reservation of length at most `b_bar` ends as a singleton.
    pub s: f64,
    /// Total mass of `f_P`.
    pub r: f64,
    /// `1 - mass(Q)`.
    pub truncation_deficit: f64,
}

/// `Q(c) = s * sum_{w=0}^{w_bar} f_P^{*w}(c)` for a joint law `f_p` on `1..`.
pub fn collision_duration_from(f_p: &Pmf, reservation_mass: f64, w_bar: u32) -> Result<CollisionDuration> {
    let r = f_p.mass();
    let s = reservation_mass - r;
    if s < 0.0 {
        return Err(Error::Domain("collided mass exceeds reservation mass".into()));
    }
    let len = (w_bar as usize) * (f_p.end().max(1) as usize - 1) + 1;
    let mut acc = vec![0.0; len];
    let mut cur = Pmf::delta(0);
    for w in 0..=w_bar {
        let off = cur.offset() as usize;
        for (a, &c) in acc[off..].iter_mut().zip(cur.weights()) {
            *a += c;
        }
        if w < w_bar {
            cur = cur.convolve(f_p);
        }
    }
    let pmf = Pmf::new(0, acc.into_iter().map(|a| a * s).collect())?;
    let truncation_deficit = (1.0 - pmf.mass()).max(0.0);
    Ok(CollisionDuration {
        pmf,
        s,
        r,
        truncation_deficit,
    })
}

/// Age pmf at position `pos`, supported on `δ ≡ pos (mod m)`, with `Q(-1) = 0`.
pub fn aoi_pmf(m: usize, q: &Pmf, pos: usize, weighting: PositionWeighting) -> Result<Pmf> {
    if pos >= m {
        return Err(Error::Domain(format!("position {pos} outside the frame of {m}")));
    }
    check_collision_pmf(q)?;
    let (a, b) = position_weights(m, pos, weighting);
    let frames = q.end() as usize + 1;
    let mut w = vec![0.0; (frames - 1) * m + 1];
    for f in 0..frames {
        let prev = if f == 0 { 0.0 } else { q.get(f as i64 - 1) };
        w[f * m] = a * prev + b * q.get(f as i64);
    }
    Ok(Pmf::from_raw(pos as i64, w))
}

/// Uniform mixture of [`aoi_pmf`] over the `m` positions.
pub fn aoi_pmf_averaged(m: usize, q: &Pmf, weighting: PositionWeighting) -> Result<Pmf> {
    check_collision_pmf(q)?;
    let frames = q.end() as usize + 1;
    let weights: Vec<(f64, f64)> = (0..m).map(|pos| position_weights(m, pos, weighting)).collect();
    let mut w = Vec::with_capacity(frames * m);
    for f in 0..frames {
        let prev = if f == 0 { 0.0 } else { q.get(f as i64 - 1) };
        let cur = q.get(f as i64);
        for &(a, b) in &weights {
            w.push((a * prev + b * cur) / m as f64);
        }
    }
    Ok(Pmf::from_raw(0, w).trimmed())
}

fn check_collision_pmf(q: &Pmf) -> Result<()> {
    if q.offset() < 0 {
        return Err(Error::Domain("collision-duration pmf must start at 0 or later".into()));
    }
    Ok(())
}

fn position_weights(m: usize, pos: usize, weighting: PositionWeighting) -> (f64, f64) {
    let (m, pos) = (m as f64, pos as f64);
    match weighting {
        PositionWeighting::ReceptionOrder => ((m - 1.0 - pos) / m, (pos + 1.0) / m),
        PositionWeighting::Linear => (pos / m, (m - pos) / m),
    }
}

/// Drops the tail of `q` whose total mass is below `cutoff`; returns the
/// shortened pmf and the dropped mass.
pub fn cut_tail(q: &Pmf, cutoff: f64) -> (Pmf, f64) {
    let w = q.weights();
    let mut tail = 0.0;
    let mut keep = w.len();
    while keep > 1 && tail + w[keep - 1] < cutoff {
        tail += w[keep - 1];
        keep -= 1;
    }
    (Pmf::from_raw(q.offset(), w[..keep].to_vec()), tail)
}

/// Every intermediate of one analytic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticResult {
    pub params: AnalyticParams,
    /// Present when the empty-slot law came from the fixed point.
    pub empty_slots: Option<EmptySlotSolution>,
    pub start_state: Pmf,
    /// `f_P` over `1..=b_bar`.
    pub joint_collision: Pmf,
    pub collision: CollisionDuration,
    /// Collision-duration mass dropped before forming the age pmf.
    pub tail_dropped: f64,
    /// Position-averaged age pmf, not renormalized.
    pub aoi: Pmf,
    /// `1 / mass(aoi)`, applied by the scalar metrics.
    pub renormalization: f64,
}

impl AnalyticResult {
    pub fn normalized_aoi(&self) -> Pmf {
        Pmf::from_raw(
            self.aoi.offset(),
            self.aoi.weights().iter().map(|w| w * self.renormalization).collect(),
        )
    }

    /// Mean age in slots under the renormalized pmf.
    pub fn average_aoi(&self) -> f64 {
        self.aoi.iter().map(|(d, w)| d as f64 * w).sum::<f64>() * self.renormalization
    }

    /// Probability that the age exceeds `theta` slots, under the renormalized pmf.
    pub fn violation_probability(&self, theta: i64) -> f64 {
        (1.0 - self.aoi.cdf_at(theta) * self.renormalization).clamp(0.0, 1.0)
    }

    /// Age pmf at a single position, cut like the averaged pmf.
    pub fn aoi_at_position(&self, pos: usize) -> Result<Pmf> {
        let (q, _) = cut_tail(&self.collision.pmf, self.params.tail_cutoff);
        aoi_pmf(self.params.frame_size, &q, pos, self.params.weighting)
    }
}

/// Resolves the empty-slot law of `params`, solving the fixed point if needed.
pub fn empty_slot_law(params: &AnalyticParams) -> Result<(EmptySlotLaw, Option<EmptySlotSolution>)> {
    match &params.empty_slots {
        EmptySlotModel::FixedPoint(opts) => {
            let sol = solve_empty_slots(params.num_nodes, params.frame_size, params.ending_prob, opts)?;
            Ok((EmptySlotLaw::Point(sol.e_n), Some(sol)))
        }
        EmptySlotModel::Explicit { pmf } | EmptySlotModel::Empirical { pmf } => {
            Ok((EmptySlotLaw::Distribution(pmf.clone()), None))
        }
    }
}

/// Runs the full pipeline.
pub fn evaluate(params: &AnalyticParams) -> Result<AnalyticResult> {
    params.validate()?;
    let (v, m, p) = (params.num_nodes, params.frame_size, params.ending_prob);
    let (law, solution) = empty_slot_law(params)?;
    let start_state = start_state_pmf(v, p, &law)?;
    let joint_collision = joint_collision_pmf(&start_state, p, params.b_bar, params.exponent)?;
    let reservation_mass = reservation_mass(p, params.b_bar, params.exponent);
    let collision = collision_duration_from(&joint_collision, reservation_mass, params.w_bar)?;
    let (q, tail_dropped) = cut_tail(&collision.pmf, params.tail_cutoff);
    let aoi = aoi_pmf_averaged(m, &q, params.weighting)?;
    if aoi.mass() <= 0.0 {
        return Err(Error::Domain("age pmf has no mass".into()));
    }
    let renormalization = 1.0 / aoi.mass();
    Ok(AnalyticResult {
        params: params.clone(),
        empty_slots: solution,
        start_state,
        joint_collision,
        collision,
        tail_dropped,
        aoi,
        renormalization,
    })
}

/// Collision-duration pmf of `params`.
pub fn collision_duration_pmf(params: &AnalyticParams) -> Result<CollisionDuration> {
    evaluate(params).map(|r| r.collision)
}

pub fn average_aoi(params: &AnalyticParams) -> Result<f64> {
    evaluate(params).map(|r| r.average_aoi())
}

pub fn violation_probability(params: &AnalyticParams, theta: i64) -> Result<f64> {
    evaluate(params).map(|r| r.violation_probability(theta))
}

/// Per-frame ending probability from the reselection-counter parameters:
/// `(1 - p_rc) (1 - p_keep)`.
pub fn p_e_from_3gpp(p_rc: f64, p_keep: f64) -> Result<f64> {
    for (name, x) in [("p_rc", p_rc), ("p_keep", p_keep)] {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("{name} = {x} outside [0, 1)")));
        }
    }
    Ok((1.0 - p_rc) * (1.0 - p_keep))
}
