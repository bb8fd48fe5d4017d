//! Plain `key=value` training configuration.

use std::fmt::Write as _;

use crate::error::{Result, SliError};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// G1 and D1 only, SIFT map to LBP.
    Lbp,
    /// `pretrain_steps` of the LBP stage, then end-to-end G1 + G2 with D2.
    Full,
    /// G2' and its discriminator on keypoint-location maps.
    Binary,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Lbp => "lbp",
            Stage::Full => "full",
            Stage::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lbp" => Ok(Stage::Lbp),
            "full" => Ok(Stage::Full),
            "binary" => Ok(Stage::Binary),
            _ => Err(SliError::InvalidParameter(format!("unknown stage {s:?} (lbp, full, binary)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage: Stage,
    pub steps: usize,
    pub pretrain_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub depth: usize,
    pub base_channels: usize,
    pub disc_channels: usize,
    /// Emit a checkpoint every this many steps; 0 disables intermediate ones.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage: Stage::Full,
            steps: 2000,
            pretrain_steps: 500,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::default(),
            depth: 4,
            base_channels: 32,
            disc_channels: 32,
            checkpoint_every: 0,
        }
    }
}

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| SliError::InvalidParameter(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "stage" => self.stage = Stage::parse(value)?,
            "steps" => self.steps = num(key, value)?,
            "pretrain_steps" => self.pretrain_steps = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "lambda_r" => self.weights.lambda_r = num(key, value)?,
            "lambda_p" => self.weights.lambda_p = num(key, value)?,
            "lambda_s" => self.weights.lambda_s = num(key, value)?,
            "lambda_g" => self.weights.lambda_g = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "disc_channels" => self.disc_channels = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            _ => return Err(SliError::InvalidParameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SliError::InvalidParameter(format!("line {}: expected key=value", n + 1)));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [self.lr, 1.0 - self.beta1, 1.0 - self.beta2];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) || self.beta1 < 0.0 || self.beta2 < 0.0 {
            return Err(SliError::InvalidParameter("need lr > 0 and betas in [0, 1)".into()));
        }
        if self.depth == 0 || self.base_channels == 0 || self.disc_channels == 0 {
            return Err(SliError::InvalidParameter("depth and channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let _ = writeln!(s, "seed={}\nstage={}\nsteps={}\npretrain_steps={}", self.seed, self.stage.name(), self.steps, self.pretrain_steps);
        let _ = writeln!(s, "lr={}\nbeta1={}\nbeta2={}", self.lr, self.beta1, self.beta2);
        let _ = writeln!(s, "lambda_r={}\nlambda_p={}\nlambda_s={}\nlambda_g={}", w.lambda_r, w.lambda_p, w.lambda_s, w.lambda_g);
        let _ = writeln!(s, "depth={}\nbase_channels={}\ndisc_channels={}", self.depth, self.base_channels, self.disc_channels);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let cfg = TrainConfig::parse("# toy\nseed = 7\nstage=lbp\nlr=0.0005\n\nlambda_s=0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage, Stage::Lbp);
        assert_eq!(cfg.weights.lambda_s, 0.0);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(TrainConfig::parse("seed").is_err());
        assert!(TrainConfig::parse("colour=red").is_err());
        assert!(TrainConfig::parse("lr=-1").is_err());
        assert!(TrainConfig::parse("lambda_r=-2").is_err());
        assert!(TrainConfig::parse("stage=classifier").is_err());
    }
}
