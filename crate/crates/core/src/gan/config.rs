use std::fmt;
use std::str::FromStr;

use crate::config::{hash_text, parse_flat, parse_value};
use crate::error::{Error, Result};
use crate::sdesolve::{DiscriminatorDims, GeneratorDims, Method};

/// How real samples reach the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Samples share one grid, which is also the solver grid.
    Dense,
    /// Samples are interpolated onto a uniform grid of `sparse_points`.
    Sparse,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Regime::Dense),
            "sparse" => Ok(Regime::Sparse),
            _ => Err(Error::config("regime", format!("expected dense or sparse, got `{s}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Dense => "dense",
            Regime::Sparse => "sparse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub channels: usize,
    pub noise_dim: usize,
    pub brownian_dim: usize,
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub mlp_width: usize,
    pub mlp_depth: usize,
    pub batch_size: usize,
    pub generator_steps: usize,
    pub disc_steps_per_gen: usize,
    pub pretrain_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_gp: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    /// First generator step (1-based) whose weights enter the average.
    pub swa_start: usize,
    pub seed: u64,
    pub method: Method,
    pub regime: Regime,
    pub sparse_points: usize,
    /// Samples per tape; gradients are summed over chunks in order.
    pub chunk_size: usize,
    /// Threads for chunk-parallel solves. Does not affect results.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            channels: 1,
            noise_dim: 5,
            brownian_dim: 3,
            generator_hidden: 32,
            discriminator_hidden: 32,
            mlp_width: 16,
            mlp_depth: 1,
            batch_size: 1024,
            generator_steps: 6000,
            disc_steps_per_gen: 5,
            pretrain_steps: 0,
            lr: 1e-3,
            weight_decay: 0.01,
            lambda_gp: 10.0,
            adadelta_rho: 0.9,
            adadelta_eps: 1e-6,
            swa_start: 501,
            seed: 0,
            method: Method::Midpoint,
            regime: Regime::Dense,
            sparse_points: 64,
            chunk_size: 128,
            workers: 1,
        }
    }
}

pub const PRESETS: [&str; 2] = ["ou-paper", "ou-desk"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ou-paper" => Ok(TrainConfig::default()),
            // averaging over the final 1833 of 2000 steps, the same share as 5500 of 6000
            "ou-desk" => Ok(TrainConfig {
                batch_size: 256,
                generator_steps: 2000,
                swa_start: 168,
                ..TrainConfig::default()
            }),
            _ => Err(Error::config(
                "preset",
                format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", ")),
            )),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = "a non-negative integer";
        let num = "a number";
        match key {
            "channels" => self.channels = parse_value(key, value, int)?,
            "noise_dim" => self.noise_dim = parse_value(key, value, int)?,
            "brownian_dim" => self.brownian_dim = parse_value(key, value, int)?,
            "generator_hidden" => self.generator_hidden = parse_value(key, value, int)?,
            "discriminator_hidden" => self.discriminator_hidden = parse_value(key, value, int)?,
            "mlp_width" => self.mlp_width = parse_value(key, value, int)?,
            "mlp_depth" => self.mlp_depth = parse_value(key, value, int)?,
            "batch_size" => self.batch_size = parse_value(key, value, int)?,
            "generator_steps" => self.generator_steps = parse_value(key, value, int)?,
            "disc_steps_per_gen" => self.disc_steps_per_gen = parse_value(key, value, int)?,
            "pretrain_steps" => self.pretrain_steps = parse_value(key, value, int)?,
            "lr" => self.lr = parse_value(key, value, num)?,
            "weight_decay" => self.weight_decay = parse_value(key, value, num)?,
            "lambda_gp" => self.lambda_gp = parse_value(key, value, num)?,
            "adadelta_rho" => self.adadelta_rho = parse_value(key, value, num)?,
            "adadelta_eps" => self.adadelta_eps = parse_value(key, value, num)?,
            "swa_start" => self.swa_start = parse_value(key, value, int)?,
            "seed" => self.seed = parse_value(key, value, int)?,
            "method" => {
                self.method = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("expected midpoint or euler, got `{value}`")))?
            }
            "regime" => self.regime = value.parse()?,
            "sparse_points" => self.sparse_points = parse_value(key, value, int)?,
            "chunk_size" => self.chunk_size = parse_value(key, value, int)?,
            "workers" => self.workers = parse_value(key, value, int)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies every entry of a flat config text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for e in parse_flat(text)? {
            self.set(&e.key, &e.value)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("noise_dim", self.noise_dim.to_string()),
            ("brownian_dim", self.brownian_dim.to_string()),
            ("generator_hidden", self.generator_hidden.to_string()),
            ("discriminator_hidden", self.discriminator_hidden.to_string()),
            ("mlp_width", self.mlp_width.to_string()),
            ("mlp_depth", self.mlp_depth.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("generator_steps", self.generator_steps.to_string()),
            ("disc_steps_per_gen", self.disc_steps_per_gen.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("weight_decay", format!("{:e}", self.weight_decay)),
            ("lambda_gp", format!("{:e}", self.lambda_gp)),
            ("adadelta_rho", format!("{:e}", self.adadelta_rho)),
            ("adadelta_eps", format!("{:e}", self.adadelta_eps)),
            ("swa_start", self.swa_start.to_string()),
            ("seed", self.seed.to_string()),
            ("method", self.method.to_string()),
            ("regime", self.regime.to_string()),
            ("sparse_points", self.sparse_points.to_string()),
            ("chunk_size", self.chunk_size.to_string()),
            ("workers", self.workers.to_string()),
        ]
    }

    /// `key = value` lines that [`TrainConfig::apply_text`] reads back.
    pub fn dump(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hash of every setting that can change results (`workers` cannot).
    pub fn hash(&self) -> String {
        let text: String = self
            .entries()
            .iter()
            .filter(|(k, _)| *k != "workers")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        hash_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("noise_dim", self.noise_dim),
            ("brownian_dim", self.brownian_dim),
            ("generator_hidden", self.generator_hidden),
            ("discriminator_hidden", self.discriminator_hidden),
            ("mlp_width", self.mlp_width),
            ("batch_size", self.batch_size),
            ("disc_steps_per_gen", self.disc_steps_per_gen),
            ("swa_start", self.swa_start),
            ("chunk_size", self.chunk_size),
            ("workers", self.workers),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be at least 1"));
            }
        }
        if self.regime == Regime::Sparse && self.sparse_points < 2 {
            return Err(Error::config("sparse_points", "must be at least 2"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::config("lambda_gp", "must be non-negative"));
        }
        if !(self.adadelta_rho > 0.0 && self.adadelta_rho < 1.0) {
            return Err(Error::config("adadelta_rho", "must lie in (0, 1)"));
        }
        if !(self.adadelta_eps > 0.0) {
            return Err(Error::config("adadelta_eps", "must be positive"));
        }
        Ok(())
    }

    pub fn generator_dims(&self) -> GeneratorDims {
        GeneratorDims {
            v: self.noise_dim,
            w: self.brownian_dim,
            x: self.generator_hidden,
            y: self.channels,
            width: self.mlp_width,
            depth: self.mlp_depth,
        }
    }

    pub fn discriminator_dims(&self) -> DiscriminatorDims {
        DiscriminatorDims {
            y: self.channels,
            h: self.discriminator_hidden,
            width: self.mlp_width,
            depth: self.mlp_depth,
        }
    }
}
