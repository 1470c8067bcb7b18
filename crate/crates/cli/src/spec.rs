//! Experiment description files and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sps_aoi::analytic::{
    AnalyticParams, EmptySlotModel, PositionWeighting, ReservationExponent,
};
use sps_aoi::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Analytic,
    Compare,
    Validate,
    Sweep,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "p_E", alias = "ending_prob")]
    EndingProb,
    #[serde(rename = "V", alias = "num_nodes")]
    NumNodes,
    #[serde(rename = "m", alias = "frame_size")]
    FrameSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    /// `(V, m)` systems crossed with the values; the base system when empty.
    #[serde(default)]
    pub systems: Vec<(usize, usize)>,
    /// With `parameter = "m"`, sets `V = round(load * m)` at every point.
    #[serde(default)]
    pub load: Option<f64>,
}

/// Analytic settings; the operating point comes from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticSection {
    pub w_bar: u32,
    pub b_bar: u32,
    pub empty_slots: EmptySlotModel,
    pub exponent: ReservationExponent,
    pub weighting: PositionWeighting,
    pub tail_cutoff: f64,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        let p = AnalyticParams::new(1, 2, 1.0);
        Self {
            w_bar: p.w_bar,
            b_bar: p.b_bar,
            empty_slots: p.empty_slots,
            exponent: p.exponent,
            weighting: p.weighting,
            tail_cutoff: p.tail_cutoff,
        }
    }
}

impl AnalyticSection {
    pub fn params(&self, config: &SystemConfig) -> AnalyticParams {
        AnalyticParams {
            num_nodes: config.num_nodes,
            frame_size: config.frame_size,
            ending_prob: config.ending_prob,
            w_bar: self.w_bar,
            b_bar: self.b_bar,
            empty_slots: self.empty_slots.clone(),
            exponent: self.exponent,
            weighting: self.weighting,
            tail_cutoff: self.tail_cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Pool age and reservation statistics over every node instead of node 0.
    pub pool_nodes: bool,
    /// Write the binary frame dump `trace.bin`.
    pub dump_trace: bool,
    /// Write per-position age pmfs.
    pub per_position: bool,
    /// Minimum reservation pairs before assumption distances are trusted.
    pub min_pairs: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            pool_nodes: false,
            dump_trace: false,
            per_position: false,
            min_pairs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Counter cap of the extended chain; `100 * ceil(1 / p_E)` when absent.
    pub cap: Option<usize>,
    /// Also simulate and compare against the exact law.
    pub simulate: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { cap: None, simulate: true }
    }
}

/// One experiment as read from a file plus overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub base: SystemConfig,
    #[serde(default)]
    pub analytic: AnalyticSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
    /// Age threshold in slots.
    #[serde(default = "default_theta")]
    pub theta: i64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_theta() -> i64 {
    400
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// Sets `path = value` in a TOML tree, creating tables as needed. The value is
/// parsed as TOML and falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| InvalidSpec(format!("override `{assignment}` is not of the form key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().unwrap();
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(InvalidSpec(format!("override `{path}`: `{key}` is not a table")).into()),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Command-line and environment overrides, highest precedence first.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<Format>>,
}

impl ExperimentSpec {
    /// Reads `path` (if any), applies `--set` assignments, then the dedicated
    /// flags, and validates the result for `mode`.
    pub fn load(path: Option<&Path>, mode: Mode, overrides: &Overrides) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| InvalidSpec(format!("parsing {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in &overrides.sets {
            apply_override(&mut doc, s)?;
        }
        let mut spec: ExperimentSpec = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| InvalidSpec(format!("experiment description: {e}")))?;
        if let Some(m) = spec.mode {
            if m != mode {
                return Err(InvalidSpec(format!("file describes a {m:?} run but {mode:?} was requested")).into());
            }
        }
        spec.mode = Some(mode);
        if let Some(seed) = overrides.seed {
            spec.base.rng_seed = seed;
        }
        if let Some(out) = &overrides.out {
            spec.output_dir = out.clone();
        }
        if let Some(f) = &overrides.formats {
            spec.formats = f.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn mode(&self) -> Mode {
        self.mode.expect("mode is set on load")
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    /// Checks every point before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.theta < 0 {
            return Err(InvalidSpec(format!("theta {} must be nonnegative", self.theta)).into());
        }
        if self.formats.is_empty() {
            return Err(InvalidSpec("no output format selected".into()).into());
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(InvalidSpec("sweep has no values".into()).into());
            }
            if sw.load.is_some() && sw.parameter != SweepParam::FrameSize {
                return Err(InvalidSpec("sweep.load applies to an m sweep only".into()).into());
            }
        }
        for (i, point) in self.points()?.iter().enumerate() {
            point
                .validate()
                .map_err(|e| InvalidSpec(format!("point {i}: {e}")))?;
            self.analytic
                .params(point)
                .validate()
                .map_err(|e| InvalidSpec(format!("point {i}: {e}")))?;
        }
        Ok(())
    }

    /// Operating points in output order. Point `i` uses seed `rng_seed + i`.
    pub fn points(&self) -> Result<Vec<SystemConfig>> {
        let Some(sw) = &self.sweep else {
            return Ok(vec![self.base.clone()]);
        };
        let systems = if sw.systems.is_empty() {
            vec![(self.base.num_nodes, self.base.frame_size)]
        } else {
            sw.systems.clone()
        };
        let mut out = Vec::new();
        for &(v, m) in &systems {
            for &x in &sw.values {
                let mut c = self.base.clone();
                c.num_nodes = v;
                c.frame_size = m;
                match sw.parameter {
                    SweepParam::EndingProb => c.ending_prob = x,
                    SweepParam::NumNodes => c.num_nodes = integer(x, "V")?,
                    SweepParam::FrameSize => {
                        c.frame_size = integer(x, "m")?;
                        if let Some(load) = sw.load {
                            c.num_nodes = (load * c.frame_size as f64).round() as usize;
                        }
                    }
                }
                c.rng_seed = self.base.rng_seed.wrapping_add(out.len() as u64);
                out.push(c);
            }
        }
        Ok(out)
    }
}

fn integer(x: f64, name: &str) -> Result<usize> {
    if x.fract() != 0.0 || x < 0.0 {
        return Err(InvalidSpec(format!("{name} = {x} must be a nonnegative integer")).into());
    }
    Ok(x as usize)
}

/// A description that fails validation; reported with its own exit code.
#[derive(Debug, thiserror::Error)]
#[error("invalid experiment: {0}")]
pub struct InvalidSpec(pub String);

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, mode: Mode, sets: &[&str]) -> Result<ExperimentSpec> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.toml");
        std::fs::write(&p, text).unwrap();
        let o = Overrides {
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Overrides::default()
        };
        ExperimentSpec::load(Some(&p), mode, &o)
    }

    const BASE: &str = "[base]\nnum_nodes = 195\nframe_size = 200\nending_prob = 0.1\n";

    #[test]
    fn defaults_match_reference_setup() {
        let s = load(BASE, Mode::Compare, &[]).unwrap();
        assert_eq!(s.base.warmup_frames, 50_000);
        assert_eq!(s.base.measured_frames, 500_000);
        assert_eq!(s.analytic.w_bar, 50);
        assert_eq!(s.analytic.b_bar, 1000);
        assert_eq!(s.theta, 400);
        assert_eq!(s.points().unwrap().len(), 1);
    }

    #[test]
    fn overrides_take_precedence() {
        let s = load(BASE, Mode::Analytic, &["base.ending_prob=0.05", "theta=300", "analytic.w_bar=10"]).unwrap();
        assert_eq!(s.base.ending_prob, 0.05);
        assert_eq!(s.theta, 300);
        assert_eq!(s.analytic.w_bar, 10);
        let s = ExperimentSpec::load(
            None,
            Mode::Analytic,
            &Overrides {
                sets: vec!["base.num_nodes=3".into(), "base.frame_size=5".into(), "base.ending_prob=0.3".into()],
                seed: Some(9),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(s.base.rng_seed, 9);
    }

    #[test]
    fn rejects_invalid_points_before_compute() {
        assert!(load(BASE, Mode::Analytic, &["base.num_nodes=200"]).is_err());
        assert!(load(BASE, Mode::Analytic, &["base.ending_prob=0"]).is_err());
        assert!(load(BASE, Mode::Analytic, &["theta=-1"]).is_err());
        let sweep = format!("{BASE}[sweep]\nparameter = \"p_E\"\nvalues = [0.1, 1.5]\n");
        assert!(load(&sweep, Mode::Sweep, &[]).is_err());
        let e = load("mode = \"simulate\"\n[base]\nnum_nodes=1\nframe_size=2\nending_prob=0.1\n", Mode::Analytic, &[]);
        assert!(e.is_err());
        assert!(load(&format!("{BASE}bogus = 1\n"), Mode::Analytic, &[]).is_err());
    }

    #[test]
    fn sweep_points_cross_systems() {
        let text = format!(
            "{BASE}[sweep]\nparameter = \"p_E\"\nvalues = [0.02, 0.1]\nsystems = [[66, 100], [195, 200]]\n"
        );
        let s = load(&text, Mode::Sweep, &["base.rng_seed=7"]).unwrap();
        let pts = s.points().unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[1].num_nodes, pts[1].frame_size, pts[1].ending_prob), (66, 100, 0.1));
        assert_eq!(pts[3].rng_seed, 10);
        let text = format!("{BASE}[sweep]\nparameter = \"m\"\nvalues = [20, 50]\nload = 0.65\n");
        let pts = load(&text, Mode::Validate, &[]).unwrap().points().unwrap();
        assert_eq!((pts[1].num_nodes, pts[1].frame_size), (33, 50));
    }
}
