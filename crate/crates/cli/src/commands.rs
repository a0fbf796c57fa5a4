use std::io::Write;
use std::path::Path;

use microvoc::archdsl::{parse_with_input, render, Shape};
use microvoc::augment::{resize_to, subtract_mean};
use microvoc::data::{check_failures, default_root, load_records, parse_manifest, write_stats};
use microvoc::gradcheck::{standard_suite, SUITE_KINDS};
use microvoc::image::load_image;
use microvoc::layers::softmax;
use microvoc::trainer::{evaluate, load_checkpoint, run, save_state, Checkpoint, Network, TrainState};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub const CHECKPOINT_FILE: &str = "latest.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATS_FILE: &str = "dataset-stats.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(microvoc::Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<microvoc::Error> for CliError {
    fn from(e: microvoc::Error) -> Self {
        match e {
            microvoc::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

/// Architecture strings come from flags or config, so parse failures are usage errors.
fn arch_error(e: microvoc::Error) -> CliError {
    match e {
        microvoc::Error::Parse { .. } | microvoc::Error::Shape { .. } | microvoc::Error::InvalidShape(_) => {
            CliError::Usage(format!("architecture: {e}"))
        }
        other => other.into(),
    }
}

pub fn train(config: &Path, out: &mut impl Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let size = cfg.ingest.image_size;
    let input = Shape::new(3, size, size);
    parse_with_input(&cfg.train.arch, input).map_err(arch_error)?;

    let ingested = microvoc::data::ingest(&cfg.manifest, &cfg.root, &cfg.ingest)?;
    for f in &ingested.failures {
        eprintln!("warning: manifest line {}: {}", f.line, f.message);
    }
    let dataset = ingested.dataset;
    write_stats(&dataset, size, cfg.ingest.mean_mode, &cfg.output_dir.join(STATS_FILE))?;

    let mut state = if let Some(path) = &cfg.resume {
        let ckpt = load_checkpoint(path)?;
        let expected = render(&parse_with_input(&cfg.train.arch, input).map_err(arch_error)?);
        if ckpt.state.net.arch() != expected || ckpt.state.net.spec().input != input {
            return Err(CliError::Usage(format!(
                "resume checkpoint holds {} on {}, config asks for {expected} on {input}",
                ckpt.state.net.arch(),
                ckpt.state.net.spec().input
            )));
        }
        ckpt.state
    } else if let Some(path) = &cfg.finetune_from {
        let source = load_checkpoint(path)?;
        let spec = parse_with_input(&cfg.train.arch, input).map_err(arch_error)?;
        let mut net = Network::build_with(spec, cfg.train.conv_init, cfg.train.fc_init, cfg.train.seed)?;
        net.prepare_finetune(&source.state.net, cfg.finetune_std, cfg.train.seed)?;
        TrainState::from_network(&cfg.train, net)?
    } else {
        TrainState::new(&cfg.train, input).map_err(arch_error)?
    };

    let ckpt_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let history_path = cfg.output_dir.join(HISTORY_FILE);
    let names = &dataset.class_names;
    let mean = dataset.mean.as_ref();
    run(&cfg.train, &dataset, &mut state, |st, rec| {
        writeln!(out, "{rec}")?;
        save_state(st, names, mean, &ckpt_path)?;
        st.history.write_csv(&history_path)
    })?;
    // Covers a resume that had nothing left to do.
    save_state(&state, names, mean, &ckpt_path)?;
    state.history.write_csv(&history_path)?;
    Ok(())
}

/// Loads, resizes and mean-subtracts an image the way the checkpoint's model expects.
fn prepare(ckpt: &Checkpoint, image: microvoc::Tensor4) -> Result<microvoc::Tensor4, CliError> {
    let input = ckpt.state.net.spec().input;
    let img = resize_to(&image, (input.h, input.w))?;
    Ok(match &ckpt.mean {
        Some(m) => subtract_mean(&img, m)?,
        None => img,
    })
}

pub fn eval(checkpoint: &Path, manifest: &Path, root: Option<&Path>, out: &mut impl Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| microvoc::Error::Load(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let records = parse_manifest(&text)?;
    let root = root.map(Path::to_path_buf).unwrap_or_else(|| default_root(manifest));
    let input = ckpt.state.net.spec().input;
    let (samples, failures) = load_records(&records, &root, &ckpt.class_names, (input.h, input.w))?;
    check_failures(&failures, records.len(), 0.01)?;
    for f in &failures {
        eprintln!("warning: manifest line {}: {}", f.line, f.message);
    }
    let mut prepared = Vec::with_capacity(samples.len());
    for mut s in samples {
        s.image = prepare(&ckpt, s.image)?;
        prepared.push(s);
    }
    let refs: Vec<_> = prepared.iter().collect();
    let acc = evaluate(&ckpt.state.net, &refs)?;
    writeln!(out, "accuracy={acc:.6}")?;
    Ok(())
}

pub fn predict(checkpoint: &Path, image: &Path, out: &mut impl Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let x = prepare(&ckpt, load_image(image)?)?;
    let probs = softmax(&ckpt.state.net.logits(&x)?);
    let mut ranked: Vec<(usize, f64)> = probs.data().iter().copied().enumerate().collect();
    // Stable sort keeps lower class indices first on ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (rank, (k, p)) in ranked.into_iter().take(5).enumerate() {
        let name = ckpt.class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
        writeln!(out, "{} {name} {p:.6}", rank + 1)?;
    }
    Ok(())
}

pub fn gradcheck(layer: Option<&str>, seed: u64, out: &mut impl Write) -> Result<(), CliError> {
    if let Some(k) = layer {
        if !SUITE_KINDS.contains(&k) {
            return Err(CliError::Usage(format!("unknown layer kind '{k}' (expected one of {})", SUITE_KINDS.join(", "))));
        }
    }
    let reports = standard_suite(layer, seed)?;
    let mut worst = 0.0f64;
    for r in &reports {
        writeln!(out, "{r}")?;
        worst = worst.max(r.max_rel_error);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    writeln!(out, "checks={} failed={failed} max_rel_error={worst:.3e}", reports.len())?;
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}

pub fn parse_input_shape(s: &str) -> Result<Shape, CliError> {
    let dims: Vec<usize> = s.split('x').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| {
        CliError::Usage(format!("invalid input shape '{s}' (expected CxHxW)"))
    })?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape::new(c, h, w)),
        _ => Err(CliError::Usage(format!("invalid input shape '{s}' (expected CxHxW)"))),
    }
}

pub fn inspect(arch: &str, input: Shape, out: &mut impl Write) -> Result<(), CliError> {
    let spec = parse_with_input(arch, input).map_err(arch_error)?;
    let params = spec.layer_params();
    writeln!(out, "{:>3}  {:<28} {:<16} {:>14}", "#", "layer", "output", "params")?;
    writeln!(out, "{:>3}  {:<28} {:<16} {:>14}", "", "IMG", input.to_string(), 0)?;
    for (i, (layer, shape)) in spec.layers.iter().zip(&spec.shapes).enumerate() {
        writeln!(out, "{:>3}  {:<28} {:<16} {:>14}", i, layer.token(), shape.to_string(), params[i])?;
    }
    writeln!(out, "output {}", spec.output())?;
    writeln!(out, "total parameters: {}", spec.param_count)?;
    Ok(())
}
