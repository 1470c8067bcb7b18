use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule by which a node decides to end its reservation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CounterModel {
    /// End the reservation with probability `ending_prob` before every frame.
    Geometric,
    /// Counter drawn uniformly from `lo..=hi` and decremented after each
    /// transmission; when it reaches zero the node keeps its slot for another
    /// counter with probability `p_keep`, otherwise it reselects.
    UniformCounter { lo: u32, hi: u32, p_keep: f64 },
}

/// Parameters of one simulated or analysed operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_nodes: usize,
    pub frame_size: usize,
    pub ending_prob: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_frames: u64,
    #[serde(default = "default_measured")]
    pub measured_frames: u64,
    #[serde(default = "default_counter")]
    pub counter_model: CounterModel,
}

fn default_warmup() -> u64 {
    50_000
}

fn default_measured() -> u64 {
    500_000
}

fn default_counter() -> CounterModel {
    CounterModel::Geometric
}

impl SystemConfig {
    /// Geometric counter model with the default horizon of 50k warm-up and
    /// 500k measured frames.
    pub fn new(num_nodes: usize, frame_size: usize, ending_prob: f64) -> Self {
        Self {
            num_nodes,
            frame_size,
            ending_prob,
            rng_seed: 0,
            warmup_frames: default_warmup(),
            measured_frames: default_measured(),
            counter_model: CounterModel::Geometric,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_horizon(mut self, warmup: u64, measured: u64) -> Self {
        self.warmup_frames = warmup;
        self.measured_frames = measured;
        self
    }

    pub fn with_counter(mut self, counter: CounterModel) -> Self {
        self.counter_model = counter;
        self
    }

    /// Checks every invariant of the operating point. Simulation and analysis
    /// entry points call this before doing any work.
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::Config("num_nodes must be positive".into()));
        }
        if self.num_nodes >= self.frame_size {
            return Err(Error::Config(format!(
                "num_nodes ({}) must be smaller than frame_size ({})",
                self.num_nodes, self.frame_size
            )));
        }
        if self.frame_size > u16::MAX as usize {
            return Err(Error::Config(format!(
                "frame_size {} exceeds {}",
                self.frame_size,
                u16::MAX
            )));
        }
        if !(self.ending_prob > 0.0 && self.ending_prob <= 1.0) {
            return Err(Error::Config(format!(
                "ending_prob {} outside (0, 1]",
                self.ending_prob
            )));
        }
        if self.measured_frames == 0 {
            return Err(Error::Config("measured_frames must be positive".into()));
        }
        if let CounterModel::UniformCounter { lo, hi, p_keep } = self.counter_model {
            if lo < 1 || lo > hi {
                return Err(Error::Config(format!(
                    "uniform counter range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
                )));
            }
            if !(0.0..1.0).contains(&p_keep) {
                return Err(Error::Config(format!("p_keep {p_keep} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Offered load `V / m`.
    pub fn load(&self) -> f64 {
        self.num_nodes as f64 / self.frame_size as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_points() {
        assert!(SystemConfig::new(4, 6, 0.1).validate().is_ok());
        assert!(SystemConfig::new(6, 6, 0.1).validate().is_err());
        assert!(SystemConfig::new(0, 6, 0.1).validate().is_err());
        assert!(SystemConfig::new(4, 6, 0.0).validate().is_err());
        assert!(SystemConfig::new(4, 6, 1.0).validate().is_ok());
        assert!(SystemConfig::new(4, 6, 1.5).validate().is_err());
        let bad = SystemConfig::new(4, 6, 0.1).with_counter(CounterModel::UniformCounter {
            lo: 0,
            hi: 3,
            p_keep: 0.0,
        });
        assert!(bad.validate().is_err());
        let bad = SystemConfig::new(4, 6, 0.1).with_counter(CounterModel::UniformCounter {
            lo: 5,
            hi: 15,
            p_keep: 1.0,
        });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deserializes_with_defaults() {
        let c: SystemConfig =
            serde_json::from_str(r#"{"num_nodes":195,"frame_size":200,"ending_prob":0.1}"#)
                .unwrap();
        assert_eq!(c.warmup_frames, 50_000);
        assert_eq!(c.measured_frames, 500_000);
        assert_eq!(c.counter_model, CounterModel::Geometric);
    }
}
