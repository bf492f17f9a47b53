//! The `key=value` text dialect shared by config files, dataset headers and
//! checkpoint headers, plus the experiment-wide configuration built on it.
//!
//! Config files hold one or more `key=value` tokens per line; `#` starts a
//! comment. Headers use the same tokens on one line wrapped in braces:
//! `{M=64 N=2 T=24}`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::NetVariant;
use crate::sim::SparsityConfig;

/// Ordered `key=value` map. Later duplicates override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = KvMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                let tok = tok.trim_matches(|c| c == '{' || c == '}');
                if tok.is_empty() {
                    continue;
                }
                let (k, v) = tok.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!("expected key=value, got `{tok}`"))
                })?;
                if k.is_empty() {
                    return Err(Error::InvalidConfig(format!("empty key in `{tok}`")));
                }
                map.set(k, v);
            }
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={v}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={v}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Merge `other` over `self`.
    pub fn merged(mut self, other: &KvMap) -> Self {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
        self
    }

    /// Single-line `{k=v ...}` form used in file headers.
    pub fn to_header(&self) -> String {
        let body: Vec<String> = self.entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{{{}}}", body.join(" "))
    }

    /// One `key=value` per line, the config-file form.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Optimizer and schedule settings for layer-wise training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub refine_lr: f64,
    pub train_batch: usize,
    pub val_batch: usize,
    /// Cap on optimizer steps in one training stage.
    pub layerwise_steps_per_stage: usize,
    /// Optimizer steps between validation checks.
    pub val_every: usize,
    pub max_epochs_per_stage: usize,
    /// Validation checks without improvement before a stage stops.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            refine_lr: 1e-4,
            train_batch: 32,
            val_batch: 100,
            layerwise_steps_per_stage: 600,
            val_every: 25,
            max_epochs_per_stage: 10,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.refine_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.train_batch == 0 || self.val_batch == 0 || self.layerwise_steps_per_stage == 0
            || self.val_every == 0
        {
            return Err(Error::InvalidConfig(
                "batch sizes and steps per check must be positive".into(),
            ));
        }
        if self.max_epochs_per_stage == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "max_epochs_per_stage and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything one experiment cell needs: data generation, nets, training,
/// baselines and benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sparsity: SparsityConfig,
    pub k_train: usize,
    pub k_val: usize,
    pub k_test: usize,
    pub layers_coarse: usize,
    pub layers_fine: usize,
    pub coarse_p_min: usize,
    pub coarse_p_max: usize,
    pub train: TrainConfig,
    pub ista_max_iters: usize,
    pub ista_tol: f64,
    /// Validation episodes used for the baseline regularization grid.
    pub ista_grid_samples: usize,
    pub timing_reps: usize,
    pub variants: Vec<NetVariant>,
}

impl ExperimentConfig {
    /// Reduced setting that trains on a desktop CPU.
    pub fn desk() -> Self {
        let sparsity = SparsityConfig::new(64, 2, 24, 7, 8, 5, 3, 30.0).expect("desk config is valid");
        Self::with_sparsity(sparsity)
    }

    pub fn with_sparsity(sparsity: SparsityConfig) -> Self {
        let s = sparsity.s_common;
        let m = sparsity.m;
        Self {
            sparsity,
            k_train: 2000,
            k_val: 500,
            k_test: 500,
            layers_coarse: 6,
            layers_fine: 10,
            coarse_p_min: s.saturating_sub(2),
            coarse_p_max: (s + 2).min(m),
            train: TrainConfig::default(),
            ista_max_iters: 2000,
            ista_tol: 1e-4,
            ista_grid_samples: 100,
            timing_reps: 5,
            variants: NetVariant::ALL.to_vec(),
        }
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::desk();
        let sp = &d.sparsity;
        let sparsity = SparsityConfig::new(
            kv.get_or("M", sp.m)?,
            kv.get_or("N", sp.n)?,
            kv.get_or("T", sp.t)?,
            kv.get_or("L", sp.frames)?,
            kv.get_or("s_bar", sp.s_bar)?,
            kv.get_or("s_c", sp.s_c)?,
            match kv.get("s_common") {
                Some(_) => kv.require("s_common")?,
                None => kv.get_or::<usize>("s_c", sp.s_c)?.saturating_sub(2),
            },
            kv.get_or("snr_db", sp.snr_db)?,
        )?;
        let mut cfg = Self::with_sparsity(sparsity);
        cfg.k_train = kv.get_or("k_train", cfg.k_train)?;
        cfg.k_val = kv.get_or("k_val", cfg.k_val)?;
        cfg.k_test = kv.get_or("k_test", cfg.k_test)?;
        cfg.layers_coarse = kv.get_or("layers_coarse", cfg.layers_coarse)?;
        cfg.layers_fine = kv.get_or("layers_fine", cfg.layers_fine)?;
        cfg.coarse_p_min = kv.get_or("coarse_p_min", cfg.coarse_p_min)?;
        cfg.coarse_p_max = kv.get_or("coarse_p_max", cfg.coarse_p_max)?;
        let t = &mut cfg.train;
        t.learning_rate = kv.get_or("learning_rate", t.learning_rate)?;
        t.refine_lr = kv.get_or("refine_lr", t.refine_lr)?;
        t.train_batch = kv.get_or("train_batch", t.train_batch)?;
        t.val_batch = kv.get_or("val_batch", t.val_batch)?;
        t.layerwise_steps_per_stage =
            kv.get_or("layerwise_steps_per_stage", t.layerwise_steps_per_stage)?;
        t.val_every = kv.get_or("val_every", t.val_every)?;
        t.max_epochs_per_stage = kv.get_or("max_epochs_per_stage", t.max_epochs_per_stage)?;
        t.patience = kv.get_or("patience", t.patience)?;
        t.seed = kv.get_or("seed", t.seed)?;
        cfg.ista_max_iters = kv.get_or("ista_max_iters", cfg.ista_max_iters)?;
        cfg.ista_tol = kv.get_or("ista_tol", cfg.ista_tol)?;
        cfg.ista_grid_samples = kv.get_or("ista_grid_samples", cfg.ista_grid_samples)?;
        cfg.timing_reps = kv.get_or("timing_reps", cfg.timing_reps)?;
        if let Some(v) = kv.get("variants") {
            cfg.variants = v
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.sparsity.to_kv();
        kv.set("k_train", self.k_train);
        kv.set("k_val", self.k_val);
        kv.set("k_test", self.k_test);
        kv.set("layers_coarse", self.layers_coarse);
        kv.set("layers_fine", self.layers_fine);
        kv.set("coarse_p_min", self.coarse_p_min);
        kv.set("coarse_p_max", self.coarse_p_max);
        let t = &self.train;
        kv.set("learning_rate", t.learning_rate);
        kv.set("refine_lr", t.refine_lr);
        kv.set("train_batch", t.train_batch);
        kv.set("val_batch", t.val_batch);
        kv.set("layerwise_steps_per_stage", t.layerwise_steps_per_stage);
        kv.set("val_every", t.val_every);
        kv.set("max_epochs_per_stage", t.max_epochs_per_stage);
        kv.set("patience", t.patience);
        kv.set("seed", t.seed);
        kv.set("ista_max_iters", self.ista_max_iters);
        kv.set("ista_tol", self.ista_tol);
        kv.set("ista_grid_samples", self.ista_grid_samples);
        kv.set("timing_reps", self.timing_reps);
        let v: Vec<&str> = self.variants.iter().map(|v| v.tag()).collect();
        kv.set("variants", v.join(","));
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.k_train == 0 || self.k_val == 0 || self.k_test == 0 {
            return Err(Error::InvalidConfig("dataset sizes must be at least 1".into()));
        }
        if self.layers_coarse == 0 || self.layers_fine == 0 {
            return Err(Error::InvalidConfig("nets need at least one layer".into()));
        }
        if self.coarse_p_min > self.coarse_p_max || self.coarse_p_max > self.sparsity.m {
            return Err(Error::InvalidConfig(format!(
                "coarse support bounds {}..{} invalid for M={}",
                self.coarse_p_min, self.coarse_p_max, self.sparsity.m
            )));
        }
        if !(self.ista_tol > 0.0) || self.ista_max_iters == 0 || self.timing_reps == 0 {
            return Err(Error::InvalidConfig("baseline settings must be positive".into()));
        }
        Ok(())
    }

    /// Short stable hash of the canonical key=value form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let h = Sha256::digest(self.to_kv().to_text().as_bytes());
        hex::encode(&h[..6])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_file_and_header_forms() {
        let kv = KvMap::parse("# desk\nM=64 N=2\nT=24 # pilots\n").unwrap();
        assert_eq!(kv.get("M"), Some("64"));
        assert_eq!(kv.get("T"), Some("24"));
        let again = KvMap::parse(&kv.to_header()).unwrap();
        assert_eq!(kv, again);
        assert!(KvMap::parse("M64").is_err());
    }

    #[test]
    fn experiment_config_round_trips() {
        let cfg = ExperimentConfig::desk();
        let back = ExperimentConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.coarse_p_min, 1);
        assert_eq!(cfg.coarse_p_max, 5);
    }

    #[test]
    fn overrides_apply() {
        let kv = KvMap::parse("T=16 snr_db=10 k_train=10").unwrap();
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.sparsity.t, 16);
        assert_eq!(cfg.sparsity.snr_db, 10.0);
        assert_eq!(cfg.k_train, 10);
        assert_ne!(cfg.digest(), ExperimentConfig::desk().digest());
    }
}
