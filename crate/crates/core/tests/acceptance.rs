//! Exit criteria. Each criterion is one test that prints a single
//! `[PASS]` or `[FAIL]` line before asserting.
//!
//! Run with `cargo test -p sps-aoi --test acceptance -- --nocapture`.

use sps_aoi::analysis::{empirical_aoi_pmf, verify_segmentation, AoiAccumulator, ReservationAccumulator};
use sps_aoi::analytic::{self, AnalyticParams, FixedPointOptions, ReservationExponent};
use sps_aoi::sim::{run_simulation, run_simulation_tracking, SlotMarginal, Simulator};
use sps_aoi::validation::{
    assumption_distance_from, brute_force_stationary, exact_aoi_small, EmptySlotCounter,
};
use sps_aoi::{total_variation, Pmf, SystemConfig};

const SEED: u64 = 20_240_917;
const P_SWEEP: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.1];

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name}: {detail}");
}

/// Pooled age histogram and reservation counts over every node.
struct Pooled {
    aoi: Pmf,
    censored: f64,
    reservations: sps_aoi::analysis::ReservationStats,
    empty_slots: Pmf,
}

fn simulate_pooled(v: usize, m: usize, p: f64, seed: u64) -> Pooled {
    let cfg = SystemConfig::new(v, m, p).with_seed(seed);
    let mut obs = (
        AoiAccumulator::new(None),
        ReservationAccumulator::new(None),
        EmptySlotCounter::default(),
    );
    Simulator::new(&cfg).unwrap().run(&mut obs);
    let aoi = obs.0.finish().unwrap();
    Pooled {
        censored: aoi.censored_fraction(),
        aoi: aoi.averaged.renormalized().unwrap().0,
        reservations: obs.1.finish().unwrap(),
        empty_slots: obs.2.pmf().unwrap(),
    }
}

fn monotone(xs: &[f64], increasing: bool) -> bool {
    xs.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

#[test]
fn criterion_01_segmentation_identity() {
    let points = [(5, 10, 0.3), (66, 100, 0.05), (195, 200, 0.1), (195, 200, 0.02)];
    let mut all_ok = true;
    let mut details = Vec::new();
    for (i, &(v, m, p)) in points.iter().enumerate() {
        let cfg = SystemConfig::new(v, m, p)
            .with_seed(SEED + i as u64)
            .with_horizon(10_000, 100_000);
        let traces = run_simulation_tracking(&cfg, &[0, v - 1]).unwrap();
        for node in [0, v - 1] {
            let r = verify_segmentation(&traces, node).unwrap();
            all_ok &= r.violations == 0 && r.duration_violations == 0 && r.checked > 0;
            details.push(format!(
                "({v},{m},{p}) node {node}: {} violations over {} slots, {} censored",
                r.violations, r.checked, r.censored
            ));
        }
    }
    report(1, "segmentation identity", all_ok, &details.join("; "));
    assert!(all_ok);
}

#[test]
fn criterion_02_stationary_uniformity() {
    let cfg = SystemConfig::new(66, 100, 0.05).with_seed(SEED);
    let mut marginal = SlotMarginal::new();
    Simulator::new(&cfg).unwrap().run(&mut marginal);
    let tv = total_variation(&marginal.pmf().unwrap(), &Pmf::uniform(0, 99).unwrap());

    let st = brute_force_stationary(&SystemConfig::new(2, 4, 0.3)).unwrap();
    let exact_err = (0..2)
        .flat_map(|v| st.slot_marginal(v).weights().to_vec())
        .map(|w| (w - 0.25).abs())
        .fold(0.0, f64::max);
    let pass = tv < 0.01 && exact_err < 1e-10;
    report(
        2,
        "stationary uniformity",
        pass,
        &format!("simulated TV {tv:.5} (< 0.01), exact max deviation {exact_err:.2e} (< 1e-10)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_reservation_duration_law() {
    let p = 0.1;
    let pooled = simulate_pooled(195, 200, p, SEED);
    let hist = pooled.reservations.duration_pmf().unwrap();
    let completed = pooled.reservations.completed();
    let law = |exp| {
        let w = (1..=1000)
            .map(|b| analytic::reservation_duration_pmf_with(p, b, exp).unwrap())
            .collect();
        Pmf::new(1, w).unwrap()
    };
    let tv = total_variation(&hist, &law(ReservationExponent::Normalized));
    let tv_alt = total_variation(&hist, &law(ReservationExponent::Shifted));
    let margin = tv_alt - 0.01;
    let pass = completed >= 100_000 && tv < 0.01 && margin > 0.05;
    report(
        3,
        "reservation duration law",
        pass,
        &format!(
            "{completed} reservations; TV {tv:.5} (< 0.01); shifted form TV {tv_alt:.5}, \
             margin over threshold {margin:.5} (> 0.05)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_age_distribution_vs_simulation() {
    let points = [(195, 200, 0.1), (130, 200, 0.1), (130, 200, 0.02), (66, 100, 0.05)];
    let mut all_ok = true;
    let mut details = Vec::new();
    for (i, &(v, m, p)) in points.iter().enumerate() {
        let sim = simulate_pooled(v, m, p, SEED + 10 + i as u64);
        let model = analytic::evaluate(&AnalyticParams::new(v, m, p)).unwrap();
        let tv = total_variation(&model.normalized_aoi(), &sim.aoi);
        all_ok &= tv <= 0.05;
        details.push(format!("({v},{m},{p}) TV {tv:.4} (censored {:.1e})", sim.censored));
    }
    report(4, "age distribution vs simulation", all_ok, &format!("{} (<= 0.05)", details.join(", ")));
    assert!(all_ok);
}

#[test]
fn criterion_05_average_age() {
    let (v, m) = (195, 200);
    let mut analytic_avg = Vec::new();
    let mut ok = true;
    let mut details = Vec::new();
    for (i, &p) in P_SWEEP.iter().enumerate() {
        let sim = simulate_pooled(v, m, p, SEED + 20 + i as u64);
        let sim_avg = sim.aoi.mean().unwrap();
        let a = analytic::evaluate(&AnalyticParams::new(v, m, p)).unwrap().average_aoi();
        let rel = (a - sim_avg).abs() / sim_avg;
        ok &= rel <= 0.05;
        analytic_avg.push(a);
        details.push(format!("p_E {p}: {a:.1} vs {sim_avg:.1} ({:.2}%)", 100.0 * rel));
    }
    let mono = monotone(&analytic_avg, false);
    let pass = ok && mono;
    report(
        5,
        "average age",
        pass,
        &format!("{}; analytic decreasing: {mono}", details.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_06_age_violation() {
    let theta = 400;
    let mut pass = true;
    let mut details = Vec::new();
    for (k, &(v, m)) in [(66, 100), (130, 200), (195, 200)].iter().enumerate() {
        let mut ana = Vec::new();
        let mut sim = Vec::new();
        for (i, &p) in P_SWEEP.iter().enumerate() {
            let s = simulate_pooled(v, m, p, SEED + 100 * (k as u64 + 1) + i as u64);
            let psi_sim = s.aoi.tail_above(theta);
            let psi = analytic::evaluate(&AnalyticParams::new(v, m, p))
                .unwrap()
                .violation_probability(theta);
            let tol = (0.15 * psi_sim).max(0.02);
            let ok = (psi - psi_sim).abs() <= tol;
            pass &= ok;
            ana.push(psi);
            sim.push(psi_sim);
            details.push(format!(
                "({v},{m},{p}) {psi:.4} vs {psi_sim:.4}{}",
                if ok { "" } else { " out of tolerance" }
            ));
        }
        let (ma, ms) = (monotone(&ana, true), monotone(&sim, true));
        pass &= ma && ms;
        details.push(format!("({v},{m}) increasing analytic {ma} simulated {ms}"));
    }
    report(6, "age violation", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_07_independence_assumption() {
    let p = 0.1;
    let mut d_col = Vec::new();
    let mut details = Vec::new();
    let mut singleton_ok = true;
    for (i, &m) in [20usize, 50, 100, 200].iter().enumerate() {
        let v = (0.65 * m as f64).round() as usize;
        let sim = simulate_pooled(v, m, p, SEED + 300 + i as u64);
        let d = assumption_distance_from(&sim.reservations, 10_000).unwrap();
        if m >= 100 {
            singleton_ok &= d.d_singleton < 0.1;
        }
        d_col.push(d.d_collision);
        details.push(format!(
            "m {m} (V {v}): d_collision {:.4}, d_singleton {:.4}{}",
            d.d_collision,
            d.d_singleton,
            if d.low_confidence { " low confidence" } else { "" }
        ));
    }
    let decreasing = monotone(&d_col, false);
    let pass = decreasing && singleton_ok;
    report(
        7,
        "independence assumption",
        pass,
        &format!("{}; d_collision decreasing {decreasing}", details.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_empty_slot_fixed_point() {
    let mut pass = true;
    let mut details = Vec::new();
    for (i, &(v, m, p)) in [(195usize, 200usize, 0.1), (66, 100, 0.05)].iter().enumerate() {
        let a = analytic::expected_empty_slots(v, m, p, 1e-9, 500);
        let b = analytic::solve_empty_slots(
            v,
            m,
            p,
            &FixedPointOptions {
                start: Some((m - v) as f64),
                max_iter: 500,
                ..FixedPointOptions::default()
            },
        );
        let (a, b) = match (a, b) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                report(8, "empty-slot fixed point", false, &format!("solver failed: {a:?} {b:?}"));
                panic!("fixed point did not converge");
            }
        };
        let sim = simulate_pooled(v, m, p, SEED + 400 + i as u64);
        let mean_n = sim.empty_slots.mean().unwrap();
        let gap = (a.e_n - mean_n).abs() / m as f64;
        let same = (a.e_n - b.e_n).abs() < 1e-6;
        let ok = a.residual < 1e-9 && a.iterations < 500 && b.iterations < 500 && gap <= 0.05 && same;
        pass &= ok;
        details.push(format!(
            "({v},{m},{p}) E[N] {:.3} in {} iterations (residual {:.1e}), from m-V {:.3} in {}, simulated {mean_n:.3}, gap/m {gap:.4}",
            a.e_n, a.iterations, a.residual, b.e_n, b.iterations
        ));
    }
    report(8, "empty-slot fixed point", pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn criterion_09_exact_oracle_agreement() {
    let cfg = SystemConfig::new(2, 5, 0.3).with_seed(SEED).with_horizon(1_000, 1_000_000);
    let exact = exact_aoi_small(&cfg, 300).unwrap();
    let sim = empirical_aoi_pmf(&run_simulation(&cfg).unwrap(), 0).unwrap();
    let tv_sim = total_variation(&sim.averaged, &exact.aoi);
    let model = analytic::evaluate(&AnalyticParams::new(2, 5, 0.3).with_truncation(30, 200)).unwrap();
    let tv_model = total_variation(&model.normalized_aoi(), &exact.aoi);
    let pass = tv_sim < 0.01;
    report(
        9,
        "exact oracle agreement",
        pass,
        &format!(
            "simulated vs exact TV {tv_sim:.5} (< 0.01); analytic vs exact TV {tv_model:.4} (reported); exact deficit {:.1e}",
            exact.aoi_deficit
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_single_node_pipeline() {
    let mut max_err: f64 = 0.0;
    let mut psi_ok = true;
    for m in [2usize, 5, 10, 100] {
        let model = analytic::evaluate(&AnalyticParams::new(1, m, 0.1)).unwrap();
        // enumeration over a uniform slot and a uniform position
        let mut exact = vec![0.0; 2 * m];
        for d in 0..m {
            for pos in 0..m {
                exact[if pos < d { m + pos } else { pos }] += 1.0 / (m * m) as f64;
            }
        }
        for (delta, &x) in exact.iter().enumerate() {
            max_err = max_err.max((model.aoi.get(delta as i64) - x).abs());
        }
        max_err = max_err.max(model.aoi.tail_above(2 * m as i64 - 1));
        psi_ok &= model.violation_probability(2 * m as i64) == 0.0;
    }
    let pass = max_err <= 1e-12 && psi_ok;
    report(
        10,
        "single-node pipeline",
        pass,
        &format!("max elementwise error {max_err:.2e} (<= 1e-12), violation at 2m is zero: {psi_ok}"),
    );
    assert!(pass);
}
