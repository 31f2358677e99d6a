//! Flat `key = value` run configuration.
//!
//! ```text
//! # tiny model
//! channels = 16
//! groups = 2
//! scale = 2
//! lr = 1e-3
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::benchmark::SelectorConfig;
use crate::error::{Error, Result};
use crate::metrics::{ColorSpace, EvalProtocol};
use crate::model::ModelConfig;
use crate::training::{LossKind, TrainConfig};

/// Every setting a command may need. `crop = None` means "same as scale".
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub color: ColorSpace,
    pub crop: Option<usize>,
    pub selector: SelectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            color: ColorSpace::Y,
            crop: None,
            selector: SelectorConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "scale",
    "channels",
    "groups",
    "kernel",
    "conv",
    "mff",
    "ccb",
    "ca",
    "fnorm",
    "lr",
    "lr_halving_period",
    "epochs",
    "patch_size",
    "batch_size",
    "iterations_per_epoch",
    "loss",
    "seed",
    "checkpoint_every",
    "log_every",
    "protocol",
    "crop",
    "edge_threshold",
    "response_threshold",
    "sigma",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            color: self.color,
            crop: self.crop.unwrap_or(self.model.scale),
        }
    }

    /// Set one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "scale" => m.scale = parse(key, value)?,
            "channels" => m.channels = parse(key, value)?,
            "groups" => m.groups = parse(key, value)?,
            "kernel" => m.kernel = parse(key, value)?,
            "conv" => m.conv_variant = value.parse()?,
            "mff" => m.use_mff = parse_bool(key, value)?,
            "ccb" => m.use_ccb = parse_bool(key, value)?,
            "ca" => m.use_ca = parse_bool(key, value)?,
            "fnorm" => m.use_fnorm = parse_bool(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "lr_halving_period" => t.lr_halving_period = parse(key, value)?,
            "epochs" => t.total_epochs = parse(key, value)?,
            "patch_size" => t.patch_size = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "iterations_per_epoch" => t.iterations_per_epoch = parse(key, value)?,
            "loss" => t.loss = value.parse()?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "protocol" => self.color = value.parse()?,
            "crop" => self.crop = Some(parse(key, value)?),
            "edge_threshold" => self.selector.edge_threshold = parse(key, value)?,
            "response_threshold" => self.selector.response_threshold = parse(key, value)?,
            "sigma" => self.selector.sigma = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (key, value) in parse_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.selector.validate()
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let t = &self.train;
        let mut pairs = model_pairs(m);
        pairs.extend(train_pairs(t));
        pairs.push(("protocol".into(), self.color.to_string()));
        if let Some(c) = self.crop {
            pairs.push(("crop".into(), c.to_string()));
        }
        pairs.push(("edge_threshold".into(), self.selector.edge_threshold.to_string()));
        pairs.push((
            "response_threshold".into(),
            self.selector.response_threshold.to_string(),
        ));
        pairs.push(("sigma".into(), self.selector.sigma.to_string()));
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn model_pairs(m: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("scale".into(), m.scale.to_string()),
        ("channels".into(), m.channels.to_string()),
        ("groups".into(), m.groups.to_string()),
        ("kernel".into(), m.kernel.to_string()),
        ("conv".into(), m.conv_variant.to_string()),
        ("mff".into(), m.use_mff.to_string()),
        ("ccb".into(), m.use_ccb.to_string()),
        ("ca".into(), m.use_ca.to_string()),
        ("fnorm".into(), m.use_fnorm.to_string()),
    ]
}

pub fn train_pairs(t: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("lr".into(), format!("{:e}", t.lr)),
        ("lr_halving_period".into(), t.lr_halving_period.to_string()),
        ("epochs".into(), t.total_epochs.to_string()),
        ("patch_size".into(), t.patch_size.to_string()),
        ("batch_size".into(), t.batch_size.to_string()),
        ("iterations_per_epoch".into(), t.iterations_per_epoch.to_string()),
        ("loss".into(), t.loss.to_string()),
        ("seed".into(), t.seed.to_string()),
        ("checkpoint_every".into(), t.checkpoint_every.to_string()),
        ("log_every".into(), t.log_every.to_string()),
    ]
}

/// Model settings from `key = value` pairs; other keys are ignored.
pub fn model_from_pairs(pairs: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let mut cfg = RunConfig::default();
    for key in ["scale", "channels", "groups", "kernel", "conv", "mff", "ccb", "ca", "fnorm"] {
        let value = pairs
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing model key `{key}`")))?;
        cfg.set(key, value)?;
    }
    Ok(cfg.model)
}

/// Split `key = value` lines, dropping blanks and `#` comments. Line numbers
/// are reported on malformed lines and repeated keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some(prev) = seen.insert(key.to_string(), i + 1) {
            return Err(Error::Config(format!(
                "line {}: `{key}` already set on line {prev}",
                i + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "mae" => Ok(LossKind::L1),
            "l2" | "mse" => Ok(LossKind::L2),
            _ => Err(Error::Config(format!("unknown loss `{s}` (l1 or l2)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvVariant;

    #[test]
    fn parses_with_comments() {
        let cfg = RunConfig::parse("# tiny\nchannels = 16 # width\n\ngroups=2\nconv = seq\nca = false\n")
            .unwrap();
        assert_eq!(cfg.model.channels, 16);
        assert_eq!(cfg.model.groups, 2);
        assert_eq!(cfg.model.conv_variant, ConvVariant::Seq);
        assert!(!cfg.model.use_ca);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("chanels = 16\n").unwrap_err().to_string();
        assert!(err.contains("chanels"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed() {
        assert!(RunConfig::parse("scale = 2\nscale = 3\n").is_err());
        assert!(RunConfig::parse("scale 2\n").is_err());
        assert!(RunConfig::parse("scale = two\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("lr", "0.001").unwrap();
        cfg.set("crop", "0").unwrap();
        cfg.set("loss", "l2").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig { crop: Some(1), ..Default::default() };
        let pairs = cfg.to_pairs();
        let keys: Vec<_> = pairs.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, KEYS);
    }
}
