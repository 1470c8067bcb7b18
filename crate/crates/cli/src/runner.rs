//! Per-point computation. Each point writes its own files into its own
//! directory; the caller assembles summaries and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sps_aoi::analysis::{aoi_csv, AoiAccumulator, EmpiricalAoi, ReservationAccumulator, ReservationStats};
use sps_aoi::analytic::{self, AnalyticResult, EmptySlotModel, FixedPointOptions};
use sps_aoi::prob::format_real;
use sps_aoi::sim::{Simulator, TraceDumpWriter};
use sps_aoi::validation::{
    assumption_distance_from, default_cap, exact_aoi_small, exact_reservation_small, EmptySlotCounter,
    EmptySlotReport,
};
use sps_aoi::{total_variation, CounterModel, Pmf, SystemConfig};

use crate::spec::{ExperimentSpec, Format, Mode};

/// Row of `psi_vs_pe.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub p_e: f64,
    pub v: usize,
    pub m: usize,
    pub avg_aoi_analytic: f64,
    pub avg_aoi_sim: f64,
    pub psi_analytic: f64,
    pub psi_sim: f64,
}

/// Row of `var_dist.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct VarDistRow {
    pub m: usize,
    pub load: f64,
    pub d_collision: f64,
    pub d_singleton: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PointOutcome {
    pub sweep: Option<SweepRow>,
    pub var_dist: Option<VarDistRow>,
}

/// Files of one point, all under `dir`.
struct PointWriter<'a> {
    dir: PathBuf,
    spec: &'a ExperimentSpec,
}

impl PointWriter<'_> {
    fn csv(&self, name: &str, body: &str) -> Result<()> {
        if self.spec.wants(Format::Csv) {
            write_file(&self.dir.join(name), body.as_bytes())?;
        }
        Ok(())
    }

    fn json(&self, name: &str, value: &Value) -> Result<()> {
        if self.spec.wants(Format::Json) {
            let mut body = serde_json::to_string_pretty(value)?;
            body.push('\n');
            write_file(&self.dir.join(name), body.as_bytes())?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

struct SimOutcome {
    aoi: EmpiricalAoi,
    reservations: ReservationStats,
    empty_slots: Pmf,
}

fn simulate(config: &SystemConfig, spec: &ExperimentSpec, dir: &Path) -> Result<SimOutcome> {
    let nodes = (!spec.simulation.pool_nodes).then(|| vec![0]);
    let mut stats = (
        AoiAccumulator::new(nodes.clone()),
        ReservationAccumulator::new(nodes),
        EmptySlotCounter::default(),
    );
    let mut sim = Simulator::new(config)?;
    if spec.simulation.dump_trace {
        let path = dir.join("trace.bin");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut obs = (&mut stats, TraceDumpWriter::new(BufWriter::new(file)));
        sim.run(&mut obs);
        obs.1.finish()?.flush()?;
    } else {
        sim.run(&mut stats);
    }
    Ok(SimOutcome {
        aoi: stats.0.finish()?,
        reservations: stats.1.finish()?,
        empty_slots: stats.2.pmf()?,
    })
}

fn fixed_point_options(spec: &ExperimentSpec) -> FixedPointOptions {
    match &spec.analytic.empty_slots {
        EmptySlotModel::FixedPoint(o) => *o,
        _ => FixedPointOptions::default(),
    }
}

fn fixed_point_csv(trajectory: &[f64]) -> String {
    let mut s = String::from("iteration,E_N\n");
    for (i, e) in trajectory.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", format_real(*e)));
    }
    s
}

fn pmf_csv(header: &str, pmf: &Pmf) -> String {
    let mut s = format!("{header},pmf\n");
    for (x, w) in pmf.iter() {
        s.push_str(&format!("{x},{}\n", format_real(w)));
    }
    s
}

/// Several pmfs side by side over the union of their supports.
fn joined_csv(key: &str, columns: &[(&str, &Pmf)], cumulative: bool) -> String {
    let lo = columns.iter().map(|(_, p)| p.offset()).min().unwrap_or(0);
    let hi = columns.iter().map(|(_, p)| p.end()).max().unwrap_or(0);
    let mut s = String::from(key);
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let dense: Vec<Vec<f64>> = columns
        .iter()
        .map(|(_, p)| {
            let mut acc = 0.0;
            (lo..hi)
                .map(|x| {
                    acc += p.get(x);
                    if cumulative {
                        acc
                    } else {
                        p.get(x)
                    }
                })
                .collect()
        })
        .collect();
    for (i, x) in (lo..hi).enumerate() {
        s.push_str(&x.to_string());
        for col in &dense {
            s.push(',');
            s.push_str(&format_real(col[i]));
        }
        s.push('\n');
    }
    s
}

fn per_position_analytic_csv(result: &AnalyticResult) -> Result<String> {
    let mut s = String::from("position,delta,pmf\n");
    for pos in 0..result.params.frame_size {
        for (delta, w) in result.aoi_at_position(pos)?.iter() {
            if w > 0.0 {
                s.push_str(&format!("{pos},{delta},{}\n", format_real(w)));
            }
        }
    }
    Ok(s)
}

fn analytic_metrics(r: &AnalyticResult, theta: i64) -> Value {
    json!({
        "aoi_mass": r.aoi.mass(),
        "renormalization": r.renormalization,
        "renormalized": r.renormalization != 1.0,
        "collision_mass": r.collision.pmf.mass(),
        "collision_truncation_deficit": r.collision.truncation_deficit,
        "collision_tail_dropped": r.tail_dropped,
        "start_state_mass": r.start_state.mass(),
        "joint_collision_mass": r.joint_collision.mass(),
        "s": r.collision.s,
        "r": r.collision.r,
        "average_aoi": r.average_aoi(),
        "violation_probability": r.violation_probability(theta),
        "empty_slots": r.empty_slots.as_ref().map(|e| json!({
            "E_N": e.e_n,
            "iterations": e.iterations,
            "residual": e.residual,
        })),
    })
}

/// Simulated age pmf renormalized over non-censored observations.
fn sim_aoi(aoi: &EmpiricalAoi) -> Result<(Pmf, f64)> {
    Ok(aoi.averaged.renormalized()?)
}

fn sim_metrics(out: &SimOutcome, aoi: &Pmf, factor: f64, theta: i64, spec: &ExperimentSpec) -> Result<Value> {
    let empty_mean = out.empty_slots.mean()? / out.empty_slots.mass();
    Ok(json!({
        "pooled_nodes": spec.simulation.pool_nodes,
        "observations": out.aoi.observations,
        "censored_fraction": out.aoi.censored_fraction(),
        "aoi_mass": out.aoi.averaged.mass(),
        "renormalization": factor,
        "renormalized": factor != 1.0,
        "average_aoi": aoi.mean()?,
        "violation_probability": aoi.tail_above(theta),
        "reservations_completed": out.reservations.completed(),
        "empty_slots_mean": empty_mean,
    }))
}

fn notes(config: &SystemConfig) -> Vec<String> {
    let mut n = Vec::new();
    if let CounterModel::UniformCounter { lo, hi, p_keep } = config.counter_model {
        n.push(format!(
            "simulated with a uniform reselection counter on [{lo}, {hi}] and keep probability {p_keep}; \
             the analytic model assumes geometric reservations with ending probability {}",
            config.ending_prob
        ));
    }
    n
}

/// Runs one point and writes its files into `dir`.
pub fn run_point(spec: &ExperimentSpec, index: usize, config: &SystemConfig, dir: &Path) -> Result<PointOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let start = Instant::now();
    let w = PointWriter { dir: dir.to_path_buf(), spec };
    let theta = spec.theta;
    let params = spec.analytic.params(config);
    let mut metrics = json!({
        "point": index,
        "seed": config.rng_seed,
        "config": config,
        "load": config.load(),
        "theta": theta,
    });
    let mut outcome = PointOutcome::default();

    match spec.mode() {
        Mode::Analytic => {
            let r = analytic::evaluate(&params)?;
            write_analytic(&w, &r)?;
            metrics["analytic"] = analytic_metrics(&r, theta);
        }
        Mode::Simulate => {
            let out = simulate(config, spec, dir)?;
            let (aoi, factor) = sim_aoi(&out.aoi)?;
            write_sim(&w, &out)?;
            metrics["simulation"] = sim_metrics(&out, &aoi, factor, theta, spec)?;
        }
        Mode::Compare | Mode::Sweep => {
            let r = analytic::evaluate(&params)?;
            let out = simulate(config, spec, dir)?;
            let (aoi, factor) = sim_aoi(&out.aoi)?;
            write_analytic(&w, &r)?;
            write_sim(&w, &out)?;
            let analytic_aoi = r.normalized_aoi();
            w.csv(
                "aoi_cdf.csv",
                &joined_csv("delta", &[("cdf_analytic", &analytic_aoi), ("cdf_sim", &aoi)], true),
            )?;
            let tv = total_variation(&analytic_aoi, &aoi);
            metrics["analytic"] = analytic_metrics(&r, theta);
            metrics["simulation"] = sim_metrics(&out, &aoi, factor, theta, spec)?;
            metrics["tv_analytic_vs_sim"] = json!(tv);
            if let Some(e) = &r.empty_slots {
                let report = EmptySlotReport::new(out.empty_slots.clone(), config.frame_size, e)?;
                metrics["empty_slots"] = empty_slot_metrics(&report);
            }
            outcome.sweep = Some(SweepRow {
                p_e: config.ending_prob,
                v: config.num_nodes,
                m: config.frame_size,
                avg_aoi_analytic: r.average_aoi(),
                avg_aoi_sim: aoi.mean()?,
                psi_analytic: r.violation_probability(theta),
                psi_sim: aoi.tail_above(theta),
            });
        }
        Mode::Validate => {
            let out = simulate(config, spec, dir)?;
            let dist = assumption_distance_from(&out.reservations, spec.simulation.min_pairs)?;
            let opts = fixed_point_options(spec);
            let sol = analytic::solve_empty_slots(config.num_nodes, config.frame_size, config.ending_prob, &opts)?;
            let report = EmptySlotReport::new(out.empty_slots.clone(), config.frame_size, &sol)?;
            let p = &dist.pmfs;
            w.csv(
                "conditional_states.csv",
                &joined_csv(
                    "omega",
                    &[
                        ("marginal", &p.marginal),
                        ("given_prev_collision", &p.given_prev_collision),
                        ("given_prev_singleton", &p.given_prev_singleton),
                    ],
                    false,
                ),
            )?;
            w.csv("empty_slots.csv", &report.csv())?;
            w.csv("fixed_point.csv", &fixed_point_csv(&sol.trajectory))?;
            metrics["assumption"] = json!({
                "d_collision": dist.d_collision,
                "d_singleton": dist.d_singleton,
                "low_confidence": dist.low_confidence,
                "pairs_after_collision": p.collision_count,
                "pairs_after_singleton": p.singleton_count,
                "min_pairs": p.min_count,
            });
            metrics["empty_slots"] = empty_slot_metrics(&report);
            metrics["empty_slots"]["iterations"] = json!(sol.iterations);
            metrics["empty_slots"]["residual"] = json!(sol.residual);
            outcome.var_dist = Some(VarDistRow {
                m: config.frame_size,
                load: config.load(),
                d_collision: dist.d_collision,
                d_singleton: dist.d_singleton,
            });
        }
        Mode::Oracle => {
            let cap = spec.oracle.cap.unwrap_or_else(|| default_cap(config.ending_prob));
            let exact = exact_aoi_small(config, cap)?;
            let exact_res = exact_reservation_small(config, cap)?;
            let r = analytic::evaluate(&params)?;
            let analytic_aoi = r.normalized_aoi();
            let mut columns = vec![("pmf_exact", &exact.aoi), ("pmf_analytic", &analytic_aoi)];
            let sim = if spec.oracle.simulate {
                let out = simulate(config, spec, dir)?;
                Some(sim_aoi(&out.aoi)?.0)
            } else {
                None
            };
            if let Some(s) = &sim {
                columns.push(("pmf_sim", s));
            }
            w.csv("aoi_oracle.csv", &joined_csv("delta", &columns, false))?;
            w.csv(
                "reservation_oracle.csv",
                &joined_csv(
                    "b",
                    &[
                        ("duration_exact", &exact_res.duration),
                        ("joint_collision_exact", &exact_res.joint_collision),
                        ("joint_collision_analytic", &r.joint_collision),
                    ],
                    false,
                ),
            )?;
            w.csv("empty_slots_exact.csv", &pmf_csv("n", &exact_res.empty_slots))?;
            metrics["oracle"] = json!({
                "cap": cap,
                "aoi_mass": exact.aoi.mass(),
                "aoi_deficit": exact.aoi_deficit,
                "collision_deficit": exact.collision_deficit,
                "warning": exact.warning,
                "tv_analytic_vs_exact": total_variation(&analytic_aoi, &exact.aoi),
                "tv_sim_vs_exact": sim.as_ref().map(|s| total_variation(s, &exact.aoi)),
                "tv_joint_collision_analytic_vs_exact": total_variation(&r.joint_collision, &exact_res.joint_collision),
            });
            metrics["analytic"] = analytic_metrics(&r, theta);
        }
    }

    metrics["notes"] = json!(notes(config));
    metrics["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    w.json("metrics.json", &metrics)?;
    Ok(outcome)
}

fn empty_slot_metrics(r: &EmptySlotReport) -> Value {
    json!({
        "E_N": r.e_n,
        "empirical_mean": r.mean,
        "relative_gap": r.relative_gap,
        "tv_vs_point": r.tv_vs_point,
    })
}

fn write_analytic(w: &PointWriter<'_>, r: &AnalyticResult) -> Result<()> {
    w.csv("aoi_cdf_analytic.csv", &aoi_csv(&r.aoi))?;
    w.csv("collision_duration.csv", &pmf_csv("c", &r.collision.pmf))?;
    if let Some(e) = &r.empty_slots {
        w.csv("fixed_point.csv", &fixed_point_csv(&e.trajectory))?;
    }
    if w.spec.simulation.per_position {
        w.csv("aoi_per_position_analytic.csv", &per_position_analytic_csv(r)?)?;
    }
    Ok(())
}

fn write_sim(w: &PointWriter<'_>, out: &SimOutcome) -> Result<()> {
    w.csv("aoi_cdf_sim.csv", &out.aoi.averaged_csv())?;
    w.csv("empty_slots.csv", &pmf_csv("n", &out.empty_slots))?;
    if out.reservations.completed() > 0 {
        w.csv("reservation_duration_sim.csv", &pmf_csv("b", &out.reservations.duration_pmf()?))?;
    }
    if w.spec.simulation.per_position {
        w.csv("aoi_per_position_sim.csv", &out.aoi.per_position_csv())?;
    }
    Ok(())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("p_E,V,m,avg_aoi_analytic,avg_aoi_sim,psi_analytic,psi_sim\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_real(r.p_e),
            r.v,
            r.m,
            format_real(r.avg_aoi_analytic),
            format_real(r.avg_aoi_sim),
            format_real(r.psi_analytic),
            format_real(r.psi_sim)
        ));
    }
    s
}

pub fn var_dist_csv(rows: &[VarDistRow]) -> String {
    let mut s = String::from("m,load,d_collision,d_singleton\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.m,
            format_real(r.load),
            format_real(r.d_collision),
            format_real(r.d_singleton)
        ));
    }
    s
}
