//! Run configuration: defaults, `key = value` files and command-line
//! overrides, applied in that order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activations::BaseKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub classes: Vec<u8>,
    pub per_class: usize,
    pub dither_mean: f64,
    pub hidden: Vec<usize>,
    pub top: usize,
    pub mixtures: usize,
    pub base: BaseKind,
    pub cd_k: usize,
    pub lr: f64,
    pub tca_lr: f64,
    pub lambda_fe: f64,
    pub batch_size: usize,
    pub epochs_a: usize,
    pub epochs_b: usize,
    pub epochs_c: usize,
    /// Ends phases (a) and (b) early once the MSE stops improving.
    pub plateau: bool,
    pub freeze_tca: bool,
    pub top_epochs: usize,
    pub top_lr: f64,
    pub top_cd_k: usize,
    pub updown_frozen: usize,
    pub updown_enabled: usize,
    pub updown_lr: f64,
    pub ae_lr: f64,
    pub ae_max_epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Reconstruction image dump period in epochs; 0 disables dumps.
    pub dump_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::from("data/mnist389/images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist389/labels-idx1-ubyte"),
            classes: vec![3, 8, 9],
            per_class: 500,
            dither_mean: 0.05,
            hidden: vec![32],
            top: 256,
            mixtures: 3,
            base: BaseKind::Ted,
            cd_k: 1,
            lr: 0.05,
            tca_lr: 0.01,
            lambda_fe: 1.0,
            batch_size: 100,
            epochs_a: 100,
            epochs_b: 50,
            epochs_c: 100,
            plateau: false,
            freeze_tca: false,
            top_epochs: 100,
            top_lr: 0.05,
            top_cd_k: 3,
            updown_frozen: 20,
            updown_enabled: 20,
            updown_lr: 0.05,
            ae_lr: 0.02,
            ae_max_epochs: 2000,
            seed: 0,
            out_dir: PathBuf::from("out"),
            dump_every: 0,
        }
    }
}

/// Every accepted key, in output order.
pub const KEYS: &[&str] = &[
    "images",
    "labels",
    "classes",
    "per_class",
    "dither_mean",
    "hidden",
    "top",
    "mixtures",
    "base",
    "cd_k",
    "lr",
    "tca_lr",
    "lambda_fe",
    "batch_size",
    "epochs_a",
    "epochs_b",
    "epochs_c",
    "plateau",
    "freeze_tca",
    "top_epochs",
    "top_lr",
    "top_cd_k",
    "updown_frozen",
    "updown_enabled",
    "updown_lr",
    "ae_lr",
    "ae_max_epochs",
    "seed",
    "out_dir",
    "dump_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::invalid(format!("`{key}` needs at least one entry")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("bad value `{value}` for `{key}`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Set one key; dashes in `key` are accepted in place of underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "images" => self.images = PathBuf::from(v),
            "labels" => self.labels = PathBuf::from(v),
            "classes" => self.classes = parse_list(k, v)?,
            "per_class" => self.per_class = parse(k, v)?,
            "dither_mean" => self.dither_mean = parse(k, v)?,
            "hidden" => self.hidden = parse_list(k, v)?,
            "top" => self.top = parse(k, v)?,
            "mixtures" => self.mixtures = parse(k, v)?,
            "base" => self.base = v.parse()?,
            "cd_k" => self.cd_k = parse(k, v)?,
            "lr" => self.lr = parse(k, v)?,
            "tca_lr" => self.tca_lr = parse(k, v)?,
            "lambda_fe" => self.lambda_fe = parse(k, v)?,
            "batch_size" => self.batch_size = parse(k, v)?,
            "epochs_a" => self.epochs_a = parse(k, v)?,
            "epochs_b" => self.epochs_b = parse(k, v)?,
            "epochs_c" => self.epochs_c = parse(k, v)?,
            "plateau" => self.plateau = parse_bool(k, v)?,
            "freeze_tca" => self.freeze_tca = parse_bool(k, v)?,
            "top_epochs" => self.top_epochs = parse(k, v)?,
            "top_lr" => self.top_lr = parse(k, v)?,
            "top_cd_k" => self.top_cd_k = parse(k, v)?,
            "updown_frozen" => self.updown_frozen = parse(k, v)?,
            "updown_enabled" => self.updown_enabled = parse(k, v)?,
            "updown_lr" => self.updown_lr = parse(k, v)?,
            "ae_lr" => self.ae_lr = parse(k, v)?,
            "ae_max_epochs" => self.ae_max_epochs = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "dump_every" => self.dump_every = parse(k, v)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "images" => self.images.display().to_string(),
            "labels" => self.labels.display().to_string(),
            "classes" => join(&self.classes),
            "per_class" => self.per_class.to_string(),
            "dither_mean" => self.dither_mean.to_string(),
            "hidden" => join(&self.hidden),
            "top" => self.top.to_string(),
            "mixtures" => self.mixtures.to_string(),
            "base" => self.base.to_string(),
            "cd_k" => self.cd_k.to_string(),
            "lr" => self.lr.to_string(),
            "tca_lr" => self.tca_lr.to_string(),
            "lambda_fe" => self.lambda_fe.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs_a" => self.epochs_a.to_string(),
            "epochs_b" => self.epochs_b.to_string(),
            "epochs_c" => self.epochs_c.to_string(),
            "plateau" => self.plateau.to_string(),
            "freeze_tca" => self.freeze_tca.to_string(),
            "top_epochs" => self.top_epochs.to_string(),
            "top_lr" => self.top_lr.to_string(),
            "top_cd_k" => self.top_cd_k.to_string(),
            "updown_frozen" => self.updown_frozen.to_string(),
            "updown_enabled" => self.updown_enabled.to_string(),
            "updown_lr" => self.updown_lr.to_string(),
            "ae_lr" => self.ae_lr.to_string(),
            "ae_max_epochs" => self.ae_max_epochs.to_string(),
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "dump_every" => self.dump_every.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Defaults, then the optional file, then `overrides` in order.
    pub fn resolve<'a>(
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("per_class", self.per_class),
            ("top", self.top),
            ("mixtures", self.mixtures),
            ("cd_k", self.cd_k),
            ("batch_size", self.batch_size),
            ("top_cd_k", self.top_cd_k),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("`{k}` must be at least 1")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dither_mean) {
            return Err(Error::invalid("`dither_mean` must be in [0, 1)"));
        }
        Ok(())
    }

    /// The full configuration as `# key = value` lines.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "# {k} = {}", self.get(k).expect("listed key"));
        }
        out
    }
}
