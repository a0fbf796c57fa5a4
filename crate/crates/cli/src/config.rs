//! `key = value` run configuration for `microvoc train`.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are rejected. Relative paths resolve against the config file's
//! directory. See [`KEYS`] for every key and its default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use microvoc::augment::{Expansion, MeanMode};
use microvoc::data::{IngestConfig, VOC_CLASSES};
use microvoc::init::InitKind;
use microvoc::optim::PlateauMetric;
use microvoc::trainer::{AugmentConfig, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line (e.g. a missing key).
    pub line: usize,
    pub message: String,
}

/// `(key, default, meaning)` for every accepted key. `-` marks required keys.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("arch", "-", "architecture string, e.g. IMG-(Conv64-ReLU)-(FC1024-ReLU-FC20)-Softmax"),
    ("manifest", "-", "dataset manifest path"),
    ("output_dir", "-", "directory for checkpoint, history CSV and dataset stats"),
    ("root", "<manifest dir>", "image root the manifest paths are relative to"),
    ("classes", "<20 VOC classes>", "comma-separated class names"),
    ("image_size", "128", "images are resized to image_size x image_size"),
    ("mean_mode", "per-channel", "per-channel | per-pixel training-mean subtraction"),
    ("seed", "0", "seed for split, initialization, shuffling, augmentation and dropout"),
    ("batch_size", "32", "minibatch size"),
    ("max_iterations", "1000", "total minibatch steps"),
    ("eval_every", "100", "evaluate, report and checkpoint every N iterations"),
    ("alpha", "1e-4", "Adam step size"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("epsilon", "1e-8", "Adam denominator fuzz"),
    ("lambda", "5e-4", "L2 penalty coefficient"),
    ("l2_biases", "false", "also penalize biases"),
    ("scheduler_metric", "val_acc", "val_acc | train_loss, the plateau-monitored metric"),
    ("patience", "5", "evaluations without improvement before alpha drops"),
    ("min_delta", "1e-3", "minimum change that counts as improvement"),
    ("factor", "10", "alpha is divided by this on a plateau"),
    ("alpha_floor", "1e-8", "alpha never drops below this"),
    ("augment", "false", "expand the training split with flips and crops"),
    ("crop", "<7/8 of image_size>", "side of the random square crops"),
    ("expansion", "five", "five | six-crops"),
    ("conv_init", "xavier", "xavier | gaussian:<std>"),
    ("fc_init", "xavier", "xavier | gaussian:<std>"),
    ("resume", "<none>", "checkpoint to continue training from"),
    ("finetune_from", "<none>", "checkpoint whose conv layers seed a frozen-conv fine-tune"),
    ("finetune_std", "0.005", "std of the Gaussian used to re-initialize FC layers when fine-tuning"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub ingest: IngestConfig,
    pub manifest: PathBuf,
    pub root: PathBuf,
    pub output_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub finetune_from: Option<PathBuf>,
    pub finetune_std: f64,
}

struct Entries {
    map: HashMap<String, (usize, String)>,
    base: PathBuf,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| err(line, format!("invalid value '{v}' for {key}"))),
        }
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), ConfigError> {
        self.take(key).ok_or_else(|| err(0, format!("missing required key '{key}'")))
    }

    fn path(&self, v: &str) -> PathBuf {
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn opt_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|(_, v)| self.path(&v))
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                err(line, format!("invalid value '{v}' for {key} (expected one of {})", names.join(", ")))
            }),
        }
    }

    fn init(&mut self, key: &str) -> Result<InitKind, ConfigError> {
        match self.take(key) {
            None => Ok(InitKind::Xavier),
            Some((_, v)) if v == "xavier" => Ok(InitKind::Xavier),
            Some((line, v)) => v
                .strip_prefix("gaussian:")
                .and_then(|s| s.parse().ok())
                .filter(|std: &f64| *std > 0.0)
                .map(|std| InitKind::Gaussian { std })
                .ok_or_else(|| err(line, format!("invalid value '{v}' for {key} (expected xavier or gaussian:<std>)"))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(0, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| err(line, "expected 'key = value'"))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(name, _, _)| *name == k) {
                return Err(err(line, format!("unknown key '{k}'")));
            }
            if map.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(err(line, format!("duplicate key '{k}'")));
            }
        }
        let mut e = Entries { map, base: base.to_path_buf() };

        let (_, arch) = e.required("arch")?;
        let (_, manifest) = e.required("manifest")?;
        let manifest = e.path(&manifest);
        let (_, out) = e.required("output_dir")?;
        let output_dir = e.path(&out);
        let root = e.opt_path("root").unwrap_or_else(|| microvoc::data::default_root(&manifest));

        let classes = match e.take("classes") {
            None => VOC_CLASSES.iter().map(|s| s.to_string()).collect(),
            Some((line, v)) => {
                let names: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                if names.iter().any(String::is_empty) {
                    return Err(err(line, "empty class name"));
                }
                names
            }
        };
        let image_size: usize = e.parse("image_size", 128)?;
        let mean_mode = e.choice(
            "mean_mode",
            MeanMode::PerChannel,
            &[("per-channel", MeanMode::PerChannel), ("per-pixel", MeanMode::PerPixel)],
        )?;
        let seed: u64 = e.parse("seed", 0)?;

        let mut train = TrainConfig::new(arch);
        train.seed = seed;
        train.batch_size = e.parse("batch_size", train.batch_size)?;
        train.max_iterations = e.parse("max_iterations", train.max_iterations)?;
        train.eval_every = e.parse("eval_every", train.eval_every)?;
        train.adam.alpha = e.parse("alpha", train.adam.alpha)?;
        train.adam.beta1 = e.parse("beta1", train.adam.beta1)?;
        train.adam.beta2 = e.parse("beta2", train.adam.beta2)?;
        train.adam.epsilon = e.parse("epsilon", train.adam.epsilon)?;
        train.adam.lambda = e.parse("lambda", train.adam.lambda)?;
        train.l2_biases = e.parse("l2_biases", false)?;
        train.scheduler.metric = e.choice(
            "scheduler_metric",
            PlateauMetric::ValidationAccuracy,
            &[("val_acc", PlateauMetric::ValidationAccuracy), ("train_loss", PlateauMetric::TrainingLoss)],
        )?;
        train.scheduler.patience = e.parse("patience", train.scheduler.patience)?;
        train.scheduler.min_delta = e.parse("min_delta", train.scheduler.min_delta)?;
        train.scheduler.factor = e.parse("factor", train.scheduler.factor)?;
        train.scheduler.floor = e.parse("alpha_floor", train.scheduler.floor)?;
        let augment: bool = e.parse("augment", false)?;
        let crop: usize = e.parse("crop", image_size * 7 / 8)?;
        let expansion =
            e.choice("expansion", Expansion::Five, &[("five", Expansion::Five), ("six-crops", Expansion::SixCrops)])?;
        if augment {
            if crop == 0 || crop > image_size {
                return Err(err(0, format!("crop {crop} must be in 1..={image_size}")));
            }
            train.augment = Some(AugmentConfig { crop: (crop, crop), expansion });
        }
        train.conv_init = e.init("conv_init")?;
        train.fc_init = e.init("fc_init")?;
        train.validate().map_err(|x| err(0, x.to_string()))?;
        if train.max_iterations == 0 {
            return Err(err(0, "max_iterations must be positive"));
        }
        if image_size == 0 {
            return Err(err(0, "image_size must be positive"));
        }

        let resume = e.opt_path("resume");
        let finetune_from = e.opt_path("finetune_from");
        let finetune_std: f64 = e.parse("finetune_std", 0.005)?;
        if resume.is_some() && finetune_from.is_some() {
            return Err(err(0, "resume and finetune_from are mutually exclusive"));
        }
        if !(finetune_std > 0.0) {
            return Err(err(0, "finetune_std must be positive"));
        }
        debug_assert!(e.map.is_empty(), "unconsumed keys: {:?}", e.map.keys());

        Ok(RunConfig {
            ingest: IngestConfig { classes, image_size, seed, mean_mode, ..IngestConfig::default() },
            train,
            manifest,
            root,
            output_dir,
            resume,
            finetune_from,
            finetune_std,
        })
    }
}
