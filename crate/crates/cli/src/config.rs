//! Run configuration: optional `key = value` file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use qpadapt::train::{Precision, Strategy, TrainConfig};
use qpadapt::{Arch, Mode};

use crate::error::{CliError, CliResult};

pub const KEYS: [&str; 13] = [
    "model",
    "model_size",
    "mode",
    "strategy",
    "qps",
    "data",
    "batch_size",
    "lr",
    "iterations",
    "seed",
    "precision",
    "crop",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub model_size: Option<usize>,
    /// Must agree with the strategy when given.
    pub mode: Option<Mode>,
    pub strategy: Strategy,
    /// Defaults to every QP in the dataset.
    pub qps: Option<Vec<i32>>,
    pub data: Option<PathBuf>,
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub precision: Precision,
    pub crop: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            model: "dcad".into(),
            model_size: None,
            mode: None,
            strategy: t.strategy,
            qps: None,
            data: None,
            batch_size: t.batch_size,
            lr: t.lr,
            iterations: t.iterations,
            seed: None,
            precision: t.precision,
            crop: None,
            out: None,
        }
    }
}

pub fn parse_qps(s: &str) -> CliResult<Vec<i32>> {
    s.split(',')
        .map(|p| p.trim().parse::<i32>().map_err(|_| CliError::usage(format!("bad QP `{p}` in `{s}`"))))
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::usage(format!("{key}: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "model" => self.model = v.to_string(),
            "model_size" => self.model_size = Some(parse_num(key, v)?),
            "mode" => self.mode = Some(v.parse()?),
            "strategy" => self.strategy = v.parse()?,
            "qps" => self.qps = Some(parse_qps(v)?),
            "data" => self.data = Some(PathBuf::from(v)),
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "seed" => self.seed = Some(parse_num(key, v)?),
            "precision" => self.precision = v.parse()?,
            "crop" => self.crop = Some(parse_num(key, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(CliError::usage(format!("unknown config key `{key}` (known: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn arch(&self) -> CliResult<Arch> {
        Ok(Arch::from_name(&self.model, self.model_size)?)
    }

    /// Checks the run can start: seed present, paths exist, values sane.
    pub fn train_config(&self, dataset_qps: &[i32]) -> CliResult<TrainConfig> {
        let seed = self.seed.ok_or_else(|| CliError::usage("a seed is required (--seed or `seed =` in the config)"))?;
        if let Some(mode) = self.mode {
            if mode != self.strategy.mode() {
                return Err(CliError::usage(format!(
                    "mode {mode} conflicts with strategy {} (which trains {} models)",
                    self.strategy,
                    self.strategy.mode()
                )));
            }
        }
        let data = self.data.as_ref().ok_or_else(|| CliError::usage("a dataset directory is required (--data)"))?;
        if !data.is_dir() {
            return Err(CliError::Io(format!("dataset directory {} does not exist", data.display())));
        }
        if self.out.is_none() {
            return Err(CliError::usage("an output directory is required (--out)"));
        }
        Ok(TrainConfig {
            arch: self.arch()?,
            strategy: self.strategy,
            qps: self.qps.clone().unwrap_or_else(|| dataset_qps.to_vec()),
            batch_size: self.batch_size,
            lr: self.lr,
            iterations: self.iterations,
            seed,
            precision: self.precision,
            crop: self.crop,
        })
    }
}
