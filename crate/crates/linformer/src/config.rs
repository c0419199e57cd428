//! Run configuration: sectioned key=value files, defaults, and the
//! flag > file > default override chain used by the CLI.

use std::path::Path;

use crate::channel_sim::{CovSource, EstimationConfig, SimConfig};
use crate::error::{LabError, Result};
use crate::model::{MixerKind, ModelConfig};
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub estimation: EstimationConfig,
    /// Master seed; sub-streams are derived by name, see `sub_seed`.
    pub seed: u64,
}

/// Derive a named, decorrelated sub-stream seed from the master seed
/// (FNV-1a over the stream name, folded into the master).
pub fn sub_seed(master: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    master ^ h
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| LabError::Config(format!("invalid value '{}' for key '{}'", value, key)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(LabError::Config(format!("invalid boolean '{}' for key '{}'", value, key))),
    }
}

impl RunConfig {
    /// Apply one dotted key, e.g. `sim.speed_kmh` or `train.max_lr`. Unknown
    /// keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.sim.seed = sub_seed(self.seed, "sim");
                self.train.seed = sub_seed(self.seed, "train");
            }
            "sim.r" => {
                self.sim.r = parse(key, value)?;
                self.model.r = self.sim.r;
            }
            "sim.t" => {
                self.sim.t = parse(key, value)?;
                self.model.t = self.sim.t;
            }
            "sim.paths" => self.sim.l = parse(key, value)?,
            "sim.ts" => self.sim.ts = parse(key, value)?,
            "sim.fc" => self.sim.fc = parse(key, value)?,
            "sim.speed_kmh" => self.sim.speed_kmh = parse(key, value)?,
            "sim.num_frames" => self.sim.num_frames = parse(key, value)?,
            "sim.delay_spread_ns" => self.sim.delay_spread_ns = parse(key, value)?,
            "model.n_past" => self.model.n_past = parse(key, value)?,
            "model.n_future" => self.model.n_future = parse(key, value)?,
            "model.d_model" => self.model.d_model = parse(key, value)?,
            "model.n_layers" => self.model.n_layers = parse(key, value)?,
            "model.mixer" => self.model.mixer = MixerKind::parse(value)?,
            "model.heads" => self.model.heads = parse(key, value)?,
            "model.use_pos_enc" => self.model.use_pos_enc = parse_bool(key, value)?,
            "train.max_lr" => self.train.max_lr = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.loss" => self.train.loss = LossKind::parse(value)?,
            "train.aug_snr_low" => {
                let lo = parse(key, value)?;
                let hi = self.train.aug_snr_range_db.map_or(lo, |(_, h)| h.max(lo));
                self.train.aug_snr_range_db = Some((lo, hi));
            }
            "train.aug_snr_high" => {
                let hi = parse(key, value)?;
                let lo = self.train.aug_snr_range_db.map_or(hi, |(l, _)| l.min(hi));
                self.train.aug_snr_range_db = Some((lo, hi));
            }
            "train.augment" => {
                if !parse_bool(key, value)? {
                    self.train.aug_snr_range_db = None;
                } else if self.train.aug_snr_range_db.is_none() {
                    self.train.aug_snr_range_db = Some((0.0, 20.0));
                }
            }
            "est.snr_db" => self.estimation.snr_db = parse(key, value)?,
            "est.cov" => {
                self.estimation.cov_source = match value {
                    "identity" => CovSource::Identity,
                    "sample" => CovSource::Sample,
                    _ => {
                        return Err(LabError::Config(format!(
                            "invalid covariance source '{}' (identity|sample)",
                            value
                        )))
                    }
                }
            }
            other => return Err(LabError::Config(format!("unknown config key '{}'", other))),
        }
        Ok(())
    }

    /// Parse a sectioned key=value file: `[sim]` headers scope bare keys,
    /// `#` starts a comment, blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LabError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            let key = key.trim();
            let full = if section.is_empty() || key.contains('.') || key == "seed" {
                key.to_string()
            } else {
                format!("{}.{}", section, key)
            };
            self.set(&full, value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.r != self.sim.r || self.model.t != self.sim.t {
            return Err(LabError::Config(format!(
                "model antenna config {}x{} disagrees with simulator {}x{}",
                self.model.r, self.model.t, self.sim.r, self.sim.t
            )));
        }
        Ok(())
    }
}
