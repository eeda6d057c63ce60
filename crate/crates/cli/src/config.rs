//! Flat `key = value` config files and resolution of flags over file over defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use symfeat::FeatureMapKind;

/// Settings as given on the command line or in a config file; `None` = not given.
#[derive(Debug, Clone, Default, PartialEq, clap::Args)]
pub struct Settings {
    /// Digits CSV (64 pixel values 0..16, then the label)
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory for every artifact of the run
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for table reproduction
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Train networks with bias terms
    #[arg(long, global = true, overrides_with = "no_bias")]
    pub bias: bool,
    /// Train networks without bias terms (the default)
    #[arg(long, global = true)]
    pub no_bias: bool,
    /// identity | square | neighbor | perm
    #[arg(long, global = true)]
    pub features: Option<FeatureMapKind>,
    #[arg(long, global = true)]
    pub perm_seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub momentum: Option<f64>,
    /// Invert the test images before prediction
    #[arg(long, global = true)]
    pub invert: bool,
    /// Worker threads for independent table cells
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Training set: `original` (X_train) or `symmetrized` (±X_train)
    #[arg(long, global = true)]
    pub train_set: Option<String>,
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub split_seed: Option<u64>,
    /// Model file for eval and model-based probes
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Order of the cyclic rotation group for the orbit probe
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Group orders for the goldstone sweep
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    /// Inclusion probability for the sampled-loss probe
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Download location for `data fetch`
    #[arg(long, global = true)]
    pub url: Option<String>,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("`{key}` expects true or false, got `{v}`"),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow::anyhow!("invalid value `{v}` for `{key}`: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

/// Parses `key = value` lines; `#` starts a comment. Keys use `_` or `-`.
pub fn parse_config(text: &str) -> Result<Settings> {
    let mut seen = BTreeMap::new();
    let mut s = Settings::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{raw}`", i + 1);
        };
        let key = k.trim().replace('-', "_");
        let v = v.trim();
        if seen.insert(key.clone(), i + 1).is_some() {
            bail!("line {}: `{key}` given twice", i + 1);
        }
        let ctx = || format!("line {}", i + 1);
        match key.as_str() {
            "data" => s.data = Some(v.into()),
            "out" => s.out = Some(v.into()),
            "seed" => s.seed = Some(parse(&key, v).with_context(ctx)?),
            "seeds" => s.seeds = Some(parse_list(&key, v).with_context(ctx)?),
            "bias" => {
                let b = parse_bool(&key, v).with_context(ctx)?;
                s.bias = b;
                s.no_bias = !b;
            }
            "features" => s.features = Some(parse(&key, v).with_context(ctx)?),
            "perm_seed" => s.perm_seed = Some(parse(&key, v).with_context(ctx)?),
            "epochs" => s.epochs = Some(parse(&key, v).with_context(ctx)?),
            "lr" => s.lr = Some(parse(&key, v).with_context(ctx)?),
            "batch" => s.batch = Some(parse(&key, v).with_context(ctx)?),
            "momentum" => s.momentum = Some(parse(&key, v).with_context(ctx)?),
            "invert" => s.invert = parse_bool(&key, v).with_context(ctx)?,
            "jobs" => s.jobs = Some(parse(&key, v).with_context(ctx)?),
            "train_set" => s.train_set = Some(v.into()),
            "test_fraction" => s.test_fraction = Some(parse(&key, v).with_context(ctx)?),
            "split_seed" => s.split_seed = Some(parse(&key, v).with_context(ctx)?),
            "model" => s.model = Some(v.into()),
            "n" => s.n = Some(parse(&key, v).with_context(ctx)?),
            "sweep" => s.sweep = Some(parse_list(&key, v).with_context(ctx)?),
            "mu" => s.mu = Some(parse(&key, v).with_context(ctx)?),
            "trials" => s.trials = Some(parse(&key, v).with_context(ctx)?),
            "url" => s.url = Some(v.into()),
            _ => bail!("line {}: unknown key `{key}`", i + 1),
        }
    }
    Ok(s)
}

pub fn load_config(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

pub const DEFAULT_DATA: &str = "data/optdigits.csv";
pub const DEFAULT_URL: &str =
    "https://raw.githubusercontent.com/scikit-learn/scikit-learn/main/sklearn/datasets/data/digits.csv.gz";

/// Fully resolved settings for one run; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub use_bias: bool,
    pub features: FeatureMapKind,
    pub perm_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub momentum: f64,
    pub invert: bool,
    pub jobs: usize,
    pub train_set: String,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub model: Option<PathBuf>,
    pub n: usize,
    pub sweep: Vec<usize>,
    pub mu: f64,
    pub trials: usize,
    pub url: String,
}

impl RunConfig {
    /// Flags override the config file, which overrides defaults.
    pub fn resolve(flags: &Settings, file: &Settings) -> Result<Self> {
        let defaults = symfeat::TrainConfig::default();
        let bias = if flags.bias || flags.no_bias {
            flags.bias
        } else {
            file.bias
        };
        let pick_bool = |f: bool, c: bool| f || c;
        let mut features = flags.features.or(file.features).unwrap_or(FeatureMapKind::Identity);
        let perm_seed = flags.perm_seed.or(file.perm_seed);
        if let (FeatureMapKind::PermutationProduct { .. }, Some(seed)) = (features, perm_seed) {
            features = FeatureMapKind::PermutationProduct { seed };
        }
        let seed = flags.seed.or(file.seed).unwrap_or(defaults.seed);
        let cfg = Self {
            data: flags.data.clone().or_else(|| file.data.clone()).unwrap_or_else(|| DEFAULT_DATA.into()),
            out: flags.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| "out".into()),
            seed,
            seeds: flags.seeds.clone().or_else(|| file.seeds.clone()).unwrap_or_else(|| vec![0, 1, 2, 3, 4]),
            use_bias: bias,
            features,
            perm_seed: perm_seed.unwrap_or(0),
            epochs: flags.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            lr: flags.lr.or(file.lr).unwrap_or(defaults.learning_rate),
            batch: flags.batch.or(file.batch).unwrap_or(defaults.batch_size),
            momentum: flags.momentum.or(file.momentum).unwrap_or(defaults.momentum),
            invert: pick_bool(flags.invert, file.invert),
            jobs: flags.jobs.or(file.jobs).unwrap_or(1),
            train_set: flags
                .train_set
                .clone()
                .or_else(|| file.train_set.clone())
                .unwrap_or_else(|| "original".into()),
            test_fraction: flags.test_fraction.or(file.test_fraction).unwrap_or(0.25),
            split_seed: flags.split_seed.or(file.split_seed).unwrap_or(0),
            model: flags.model.clone().or_else(|| file.model.clone()),
            n: flags.n.or(file.n).unwrap_or(360),
            sweep: flags.sweep.clone().or_else(|| file.sweep.clone()).unwrap_or_else(|| vec![4, 16, 64, 360]),
            mu: flags.mu.or(file.mu).unwrap_or(0.5),
            trials: flags.trials.or(file.trials).unwrap_or(10_000),
            url: flags.url.clone().or_else(|| file.url.clone()).unwrap_or_else(|| DEFAULT_URL.into()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        if self.seeds.is_empty() {
            bail!("--seeds must name at least one seed");
        }
        if !matches!(self.train_set.as_str(), "original" | "symmetrized") {
            bail!("--train-set must be `original` or `symmetrized`, got `{}`", self.train_set);
        }
        if self.n == 0 || self.sweep.contains(&0) {
            bail!("cyclic group orders must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self) -> symfeat::TrainConfig {
        symfeat::TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            momentum: self.momentum,
            use_bias: self.use_bias,
            feature_map: self.features,
            dims: symfeat::DIGIT_ARCHITECTURE.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_files() {
        let s = parse_config("# run\nepochs = 3\nfeatures=perm:4\nbias = true\nseeds = 1, 2\n").unwrap();
        assert_eq!(s.epochs, Some(3));
        assert_eq!(s.features, Some(FeatureMapKind::PermutationProduct { seed: 4 }));
        assert!(s.bias);
        assert_eq!(s.seeds, Some(vec![1, 2]));
    }

    #[test]
    fn rejects_unknown_and_malformed_lines() {
        assert!(parse_config("colour = blue").is_err());
        assert!(parse_config("epochs").is_err());
        assert!(parse_config("epochs = many").is_err());
        assert!(parse_config("epochs = 1\nepochs = 2").is_err());
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file = parse_config("epochs = 7\nlr = 0.1\nbias = true").unwrap();
        let flags = Settings {
            epochs: Some(9),
            no_bias: true,
            ..Settings::default()
        };
        let cfg = RunConfig::resolve(&flags, &file).unwrap();
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.lr, 0.1);
        assert!(!cfg.use_bias);
        assert_eq!(cfg.batch, 32);
        let cfg = RunConfig::resolve(&Settings::default(), &file).unwrap();
        assert!(cfg.use_bias);
    }

    #[test]
    fn perm_seed_applies_to_perm_features() {
        let flags = Settings {
            features: Some(FeatureMapKind::PermutationProduct { seed: 0 }),
            perm_seed: Some(8),
            ..Settings::default()
        };
        let cfg = RunConfig::resolve(&flags, &Settings::default()).unwrap();
        assert_eq!(cfg.features, FeatureMapKind::PermutationProduct { seed: 8 });
    }
}
