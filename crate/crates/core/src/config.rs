//! Flat `key = value` run configuration for predictor training.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::SneConfig;
use crate::error::{validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Sne,
    Mlp,
    Statnn,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Sne => "sne",
            EncoderKind::Mlp => "mlp",
            EncoderKind::Statnn => "statnn",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sne" => Ok(EncoderKind::Sne),
            "mlp" => Ok(EncoderKind::Mlp),
            "statnn" => Ok(EncoderKind::Statnn),
            _ => Err(validation(format!("unknown encoder '{s}' (expected sne, mlp or statnn)"))),
        }
    }
}

/// Training configuration. Defaults follow the stock hyperparameter table;
/// `milestones` are fractions of `epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub encoder: EncoderKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub encoding_size: usize,
    pub sab_hidden: usize,
    pub pma_seed_size: usize,
    pub sab_blocks: usize,
    pub chunk_size: usize,
    pub layer_norm: bool,
    pub heads: usize,
    pub type_pe: bool,
    pub level_pe: bool,
    pub mask_padding: bool,
    pub input_norm: bool,
    pub head_hidden: usize,
    pub milestones: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Sne,
            lr: 1e-4,
            batch_size: 64,
            epochs: 100,
            encoding_size: 1024,
            sab_hidden: 512,
            pma_seed_size: 1024,
            sab_blocks: 2,
            chunk_size: 32,
            layer_norm: false,
            heads: 4,
            type_pe: true,
            level_pe: true,
            mask_padding: false,
            input_norm: true,
            head_hidden: 1000,
            milestones: vec![0.6, 0.85],
            gamma: 0.3,
            seed: 0,
        }
    }
}

/// Every accepted key with its help text. `optimizer`, `scheduler` and `loss`
/// are fixed and only accept their single value.
pub const KEYS: &[(&str, &str)] = &[
    ("encoder", "sne | mlp | statnn"),
    ("lr", "base learning rate"),
    ("optimizer", "adam (fixed)"),
    ("scheduler", "multistep (fixed)"),
    ("loss", "bce (fixed)"),
    ("batch_size", "networks per optimizer step"),
    ("epochs", "training epochs"),
    ("encoding_size", "final encoding width H"),
    ("sab_hidden", "width h inside the SAB stacks"),
    ("pma_seed_size", "PMA seed width; must equal encoding_size"),
    ("sab_blocks", "SAB blocks per set-to-set stack"),
    ("chunk_size", "chunk length c"),
    ("layer_norm", "LayerNorm inside SAB blocks"),
    ("heads", "attention heads"),
    ("type_pe", "layer-type positional encoding"),
    ("level_pe", "layer-level positional encoding"),
    ("mask_padding", "zero padded chunk entries after the lift"),
    ("input_norm", "divide weight and bias values by their training-split RMS"),
    ("head_hidden", "predictor hidden width"),
    ("milestones", "comma separated epoch fractions for lr decay"),
    ("gamma", "lr decay factor per milestone"),
    ("seed", "initialization and shuffling seed"),
];

/// One line per key: name, default and description.
pub fn keys_help() -> String {
    let defaults = RunConfig::default().to_text();
    let default_of = |key: &str| -> String {
        match key {
            "optimizer" => "adam".into(),
            "scheduler" => "multistep".into(),
            "loss" => "bce".into(),
            _ => defaults
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
                .unwrap_or_default()
                .to_string(),
        }
    };
    let mut s = String::from("Config keys (default):\n");
    for (key, help) in KEYS {
        let _ = writeln!(s, "  {key:<14} {:<10} {help}", default_of(key));
    }
    s
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| validation(format!("invalid value '{value}' for key '{key}'")))
}

fn fixed(key: &str, value: &str, only: &str) -> Result<()> {
    if value == only {
        Ok(())
    } else {
        Err(validation(format!("{key} only supports '{only}', got '{value}'")))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "encoder" => self.encoder = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "optimizer" => fixed(key, v, "adam")?,
            "scheduler" => fixed(key, v, "multistep")?,
            "loss" => fixed(key, v, "bce")?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "encoding_size" => self.encoding_size = parse(key, v)?,
            "sab_hidden" => self.sab_hidden = parse(key, v)?,
            "pma_seed_size" => self.pma_seed_size = parse(key, v)?,
            "sab_blocks" => self.sab_blocks = parse(key, v)?,
            "chunk_size" => self.chunk_size = parse(key, v)?,
            "layer_norm" => self.layer_norm = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "type_pe" => self.type_pe = parse(key, v)?,
            "level_pe" => self.level_pe = parse(key, v)?,
            "mask_padding" => self.mask_padding = parse(key, v)?,
            "input_norm" => self.input_norm = parse(key, v)?,
            "head_hidden" => self.head_hidden = parse(key, v)?,
            "milestones" => {
                self.milestones = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|m| parse(key, m.trim())).collect::<Result<_>>()?
                }
            }
            "gamma" => self.gamma = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(validation(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| validation(format!("expected key=value, got '{pair}'")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` comments.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        cfg.apply(lines)?;
        Ok(cfg)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ms: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "encoder = {}", self.encoder);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "encoding_size = {}", self.encoding_size);
        let _ = writeln!(s, "sab_hidden = {}", self.sab_hidden);
        let _ = writeln!(s, "pma_seed_size = {}", self.pma_seed_size);
        let _ = writeln!(s, "sab_blocks = {}", self.sab_blocks);
        let _ = writeln!(s, "chunk_size = {}", self.chunk_size);
        let _ = writeln!(s, "layer_norm = {}", self.layer_norm);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "type_pe = {}", self.type_pe);
        let _ = writeln!(s, "level_pe = {}", self.level_pe);
        let _ = writeln!(s, "mask_padding = {}", self.mask_padding);
        let _ = writeln!(s, "input_norm = {}", self.input_norm);
        let _ = writeln!(s, "head_hidden = {}", self.head_hidden);
        let _ = writeln!(s, "milestones = {}", ms.join(","));
        let _ = writeln!(s, "gamma = {:?}", self.gamma);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn sne(&self) -> SneConfig {
        SneConfig {
            hidden: self.sab_hidden,
            encoding: self.encoding_size,
            chunk_size: self.chunk_size,
            heads: self.heads,
            sab_blocks: self.sab_blocks,
            use_layer_norm: self.layer_norm,
            type_pe: self.type_pe,
            level_pe: self.level_pe,
            mask_padding: self.mask_padding,
            ..SneConfig::default()
        }
    }

    /// Milestones as epoch numbers. Short runs merge coinciding milestones
    /// and drop those that fall on or after the last epoch.
    pub fn milestone_epochs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .milestones
            .iter()
            .map(|f| (f * self.epochs as f64).round() as usize)
            .filter(|&m| m < self.epochs)
            .collect();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(validation("lr must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.head_hidden == 0 {
            return Err(validation("batch_size, epochs and head_hidden must be positive"));
        }
        if self.pma_seed_size != self.encoding_size {
            return Err(validation(format!(
                "pma_seed_size ({}) must equal encoding_size ({})",
                self.pma_seed_size, self.encoding_size
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(validation("gamma must lie in (0, 1]"));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m))
            || self.milestones.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(validation("milestones must be increasing fractions in [0, 1]"));
        }
        if self.encoder == EncoderKind::Sne {
            self.sne().validate()?;
        }
        Ok(())
    }
}
