use std::path::PathBuf;

use crate::encoder::{Pooling, ProviderKind};
use crate::error::{Error, Result};
use crate::routing::TemperatureSchedule;

/// Full training configuration. Defaults reproduce the complete model at
/// desk scale; every ablation flag bypasses exactly one component.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub split_seed: u64,
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pooling: Pooling,
    pub provider: ProviderKind,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub positional_coeff: f64,
    pub projection_width: Option<usize>,
    pub max_tokens_per_user: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_epochs: usize,
    pub mlp_hidden: usize,
    pub recurrent_hidden: usize,
    pub conv_channels: usize,
    pub no_memory: bool,
    pub mlp_memory: bool,
    pub no_pe: bool,
    pub soft_routing: bool,
    pub random_routing: bool,
    pub mean_pooling: bool,
    pub data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            split_seed: 1234,
            d: 64,
            h: 32,
            k: 3,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            pooling: Pooling::Attention,
            provider: ProviderKind::HashedNgram,
            alpha: 0.1,
            beta: 0.1,
            lambda: 0.1,
            dropout: 0.2,
            positional_coeff: 0.1,
            projection_width: None,
            max_tokens_per_user: 2048,
            tau_start: 1.0,
            tau_end: 0.1,
            anneal_epochs: 20,
            mlp_hidden: 128,
            recurrent_hidden: 32,
            conv_channels: 32,
            no_memory: false,
            mlp_memory: false,
            no_pe: false,
            soft_routing: false,
            random_routing: false,
            mean_pooling: false,
            data: None,
            embeddings: None,
            checkpoint: None,
            out: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule {
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            anneal_epochs: self.anneal_epochs,
        }
    }

    /// Pooling strategy after applying the mean-pooling ablation flag.
    pub fn effective_pooling(&self) -> Pooling {
        if self.mean_pooling {
            Pooling::Mean
        } else {
            self.pooling
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 8 {
            return Err(Error::invalid(format!("d = {} must be >= 8", self.d)));
        }
        if self.h < 1 {
            return Err(Error::invalid("h must be >= 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid(format!("k = {} must be >= 2", self.k)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::invalid("alpha, beta, lambda must be >= 0"));
        }
        if self.lambda >= 1.0 {
            return Err(Error::invalid(
                "lambda must stay below 1 so modulation never saturates",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.max_tokens_per_user < 1 {
            return Err(Error::invalid("max_tokens_per_user must be >= 1"));
        }
        if self.mlp_hidden < 1 || self.recurrent_hidden < 1 || self.conv_channels < 1 {
            return Err(Error::invalid("specialist sizes must be >= 1"));
        }
        if self.no_memory && self.mlp_memory {
            return Err(Error::invalid(
                "no_memory and mlp_memory are mutually exclusive",
            ));
        }
        if self.soft_routing && self.random_routing {
            return Err(Error::invalid(
                "soft_routing and random_routing are mutually exclusive",
            ));
        }
        self.schedule().validate()?;
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn parse_opt_usize(v: &str) -> Option<Option<usize>> {
    if v == "none" {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

/// Parse the flat `key = value` config format. Keys match the TrainConfig
/// field names exactly; unknown keys are rejected. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_config_file(path: &std::path::Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text, &path.display().to_string())
}

pub fn parse_config_text(text: &str, source: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let bad = || err(format!("invalid value `{value}` for key `{key}`"));
        match key {
            "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
            "split_seed" => cfg.split_seed = value.parse().map_err(|_| bad())?,
            "d" => cfg.d = value.parse().map_err(|_| bad())?,
            "h" => cfg.h = value.parse().map_err(|_| bad())?,
            "k" => cfg.k = value.parse().map_err(|_| bad())?,
            "epochs" => cfg.epochs = value.parse().map_err(|_| bad())?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad())?,
            "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad())?,
            "pooling" => {
                cfg.pooling = match value {
                    "mean" => Pooling::Mean,
                    "attention" => Pooling::Attention,
                    _ => return Err(bad()),
                }
            }
            "provider" => {
                cfg.provider = match value {
                    "hashed-ngram" => ProviderKind::HashedNgram,
                    "precomputed-file" => ProviderKind::PrecomputedFile,
                    _ => return Err(bad()),
                }
            }
            "alpha" => cfg.alpha = value.parse().map_err(|_| bad())?,
            "beta" => cfg.beta = value.parse().map_err(|_| bad())?,
            "lambda" => cfg.lambda = value.parse().map_err(|_| bad())?,
            "dropout" => cfg.dropout = value.parse().map_err(|_| bad())?,
            "positional_coeff" => cfg.positional_coeff = value.parse().map_err(|_| bad())?,
            "projection_width" => cfg.projection_width = parse_opt_usize(value).ok_or_else(bad)?,
            "max_tokens_per_user" => cfg.max_tokens_per_user = value.parse().map_err(|_| bad())?,
            "tau_start" => cfg.tau_start = value.parse().map_err(|_| bad())?,
            "tau_end" => cfg.tau_end = value.parse().map_err(|_| bad())?,
            "anneal_epochs" => cfg.anneal_epochs = value.parse().map_err(|_| bad())?,
            "mlp_hidden" => cfg.mlp_hidden = value.parse().map_err(|_| bad())?,
            "recurrent_hidden" => cfg.recurrent_hidden = value.parse().map_err(|_| bad())?,
            "conv_channels" => cfg.conv_channels = value.parse().map_err(|_| bad())?,
            "no_memory" => cfg.no_memory = parse_bool(value).ok_or_else(bad)?,
            "mlp_memory" => cfg.mlp_memory = parse_bool(value).ok_or_else(bad)?,
            "no_pe" => cfg.no_pe = parse_bool(value).ok_or_else(bad)?,
            "soft_routing" => cfg.soft_routing = parse_bool(value).ok_or_else(bad)?,
            "random_routing" => cfg.random_routing = parse_bool(value).ok_or_else(bad)?,
            "mean_pooling" => cfg.mean_pooling = parse_bool(value).ok_or_else(bad)?,
            "data" => cfg.data = Some(PathBuf::from(value)),
            "embeddings" => cfg.embeddings = Some(PathBuf::from(value)),
            "checkpoint" => cfg.checkpoint = Some(PathBuf::from(value)),
            "out" => cfg.out = Some(PathBuf::from(value)),
            _ => return Err(err(format!("unknown config key `{key}`"))),
        }
    }
    Ok(cfg)
}
