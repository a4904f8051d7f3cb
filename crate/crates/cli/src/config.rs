//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` comments, unknown keys rejected. The
//! canonical rendering (sorted keys, shortest-roundtrip floats) feeds the
//! FNV-1a hash recorded in every report, so two runs agree on the hash
//! exactly when they agree on the configuration.

use std::fs;
use std::path::Path;

pub use mcout_core::mcout::Variant;

use mcout_core::mcout::ReasoningConfig;
use mcout_core::model::{DecoderConfig, EncoderConfig, GenerationConfig, ModelConfig};
use mcout_core::optim::AdamWConfig;
use mcout_core::schedule::LrSchedule;
use mcout_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub max_context: usize,
    pub patch_size: usize,
    pub image_side: usize,
    pub image_channels: usize,

    pub n_t: usize,
    pub variant: Variant,
    pub latent_heads: usize,
    pub backprop_through_loop: bool,
    pub detach_thoughts: bool,
    pub mu: f64,

    pub steps: u64,
    pub pretrain_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_warmup: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,

    pub temperature: f64,
    pub max_new_tokens: usize,
    pub eval_seed: u64,

    pub ablate_mu: Vec<f64>,
    pub ablate_nt: Vec<usize>,
    pub ablate_steps: u64,

    /// Dataset paths; CLI flags override.
    pub train_data: String,
    pub eval_data: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 4,
            heads: 4,
            dropout: 0.0,
            max_positions: 160,
            max_context: 128,
            patch_size: 4,
            image_side: 16,
            image_channels: 3,
            n_t: 5,
            variant: Variant::Multi,
            latent_heads: 4,
            backprop_through_loop: true,
            detach_thoughts: false,
            mu: 0.5,
            steps: 600,
            pretrain_steps: 0,
            batch_size: 4,
            seed: 0,
            lr_warmup: 0.0,
            lr_init: 3e-4,
            lr_min: 3e-5,
            warmup_steps: 20,
            weight_decay: 0.05,
            temperature: 0.1,
            max_new_tokens: 8,
            eval_seed: 7,
            ablate_mu: vec![0.0, 0.3, 0.5, 0.8],
            ablate_nt: vec![0, 5, 10],
            ablate_steps: 0,
            train_data: String::new(),
            eval_data: String::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, Error> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(&format!("reading config {}", path.display()), e))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), Error> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key {
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "max_positions" => self.max_positions = parse(key, value)?,
            "max_context" => self.max_context = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "image_side" => self.image_side = parse(key, value)?,
            "image_channels" => self.image_channels = parse(key, value)?,
            "n_t" => self.n_t = parse(key, value)?,
            "variant" => {
                self.variant = match value.to_ascii_lowercase().as_str() {
                    "base" => Variant::Base,
                    "multi" => Variant::Multi,
                    other => {
                        return Err(Error::Config(format!(
                            "variant must be base or multi, got {other:?}"
                        )))
                    }
                }
            }
            "latent_heads" => self.latent_heads = parse(key, value)?,
            "backprop_through_loop" => self.backprop_through_loop = parse(key, value)?,
            "detach_thoughts" => self.detach_thoughts = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr_warmup" => self.lr_warmup = parse(key, value)?,
            "lr_init" => self.lr_init = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "max_new_tokens" => self.max_new_tokens = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            "ablate_mu" => self.ablate_mu = parse_list(key, value)?,
            "ablate_nt" => self.ablate_nt = parse_list(key, value)?,
            "ablate_steps" => self.ablate_steps = parse(key, value)?,
            "train_data" => self.train_data = value.to_string(),
            "eval_data" => self.eval_data = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` override strings (the `--set` flag).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), Error> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?}: expected key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sorted `key = value` lines; the identity the config hash is over.
    pub fn canonical(&self) -> String {
        let list_f = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let list_u = |v: &[usize]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = vec![
            format!("ablate_mu = {}", list_f(&self.ablate_mu)),
            format!("ablate_nt = {}", list_u(&self.ablate_nt)),
            format!("ablate_steps = {}", self.ablate_steps),
            format!("backprop_through_loop = {}", self.backprop_through_loop),
            format!("batch_size = {}", self.batch_size),
            format!("detach_thoughts = {}", self.detach_thoughts),
            format!("dim = {}", self.dim),
            format!("dropout = {}", self.dropout),
            format!("eval_seed = {}", self.eval_seed),
            format!("heads = {}", self.heads),
            format!("image_channels = {}", self.image_channels),
            format!("image_side = {}", self.image_side),
            format!("latent_heads = {}", self.latent_heads),
            format!("layers = {}", self.layers),
            format!("lr_init = {}", self.lr_init),
            format!("lr_min = {}", self.lr_min),
            format!("lr_warmup = {}", self.lr_warmup),
            format!("max_context = {}", self.max_context),
            format!("max_new_tokens = {}", self.max_new_tokens),
            format!("max_positions = {}", self.max_positions),
            format!("mu = {}", self.mu),
            format!("n_t = {}", self.n_t),
            format!("patch_size = {}", self.patch_size),
            format!("pretrain_steps = {}", self.pretrain_steps),
            format!("seed = {}", self.seed),
            format!("steps = {}", self.steps),
            format!("temperature = {}", self.temperature),
            format!("train_data = {}", self.train_data),
            format!("eval_data = {}", self.eval_data),
            format!(
                "variant = {}",
                match self.variant {
                    Variant::Base => "base",
                    Variant::Multi => "multi",
                }
            ),
            format!("warmup_steps = {}", self.warmup_steps),
            format!("weight_decay = {}", self.weight_decay),
        ];
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_height: self.image_side,
            image_width: self.image_side,
            image_channels: self.image_channels,
            encoder: EncoderConfig {
                patch_size: self.patch_size,
                dim: self.dim,
            },
            decoder: DecoderConfig {
                layers: self.layers,
                heads: self.heads,
                dim: self.dim,
                vocab: mcout_core::model::vocab::SIZE,
                max_positions: self.max_positions,
                dropout: self.dropout,
            },
            max_context: self.max_context,
        }
    }

    pub fn reasoning_config(&self) -> ReasoningConfig {
        ReasoningConfig {
            n_t: self.n_t,
            variant: self.variant,
            backprop_through_loop: self.backprop_through_loop,
            detach_thoughts: self.detach_thoughts,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.pretrain_steps + self.steps
    }

    pub fn schedule(&self) -> Result<LrSchedule, Error> {
        LrSchedule::new(
            self.lr_warmup,
            self.lr_init,
            self.lr_min,
            self.warmup_steps.min(self.total_steps()),
            self.total_steps(),
        )
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn generation(&self, seed: u64) -> Result<GenerationConfig, Error> {
        GenerationConfig::new(
            self.temperature,
            self.max_new_tokens,
            mcout_core::model::vocab::EOS,
            seed,
        )
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model_config().validate()?;
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.variant == Variant::Multi && (self.latent_heads == 0 || self.dim % self.latent_heads != 0)
        {
            return Err(Error::Config(format!(
                "latent_heads {} must divide dim {}",
                self.latent_heads, self.dim
            )));
        }
        Ok(())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_assignments_and_comments() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("# comment\n\n  mu = 0.8\nvariant= base\nsteps =42\n")
            .unwrap();
        assert_eq!(cfg.mu, 0.8);
        assert_eq!(cfg.variant, Variant::Base);
        assert_eq!(cfg.steps, 42);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_str("learning_rate = 0.1\n").unwrap_err();
        assert!(format!("{err}").contains("unknown config key"));
    }

    #[test]
    fn bad_value_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_str("steps = many\n").is_err());
        assert!(cfg.apply_str("variant = medium\n").is_err());
        assert!(cfg.apply_str("mu 0.5\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash_hex(), b.hash_hex());
        b.mu = 0.25;
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 16);
    }

    #[test]
    fn canonical_is_sorted_and_complete() {
        let canon = RunConfig::default().canonical();
        let keys: Vec<&str> = canon
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys.len(), 32);
        // Every canonical line round-trips through the parser.
        let mut cfg = RunConfig::default();
        cfg.apply_str(&canon).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["mu=0.1".into(), "mu=0.9".into()]).unwrap();
        assert_eq!(cfg.mu, 0.9);
        assert!(cfg.apply_overrides(&["nonsense".into()]).is_err());
    }
}
