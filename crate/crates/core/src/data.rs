//! Manifest-driven dataset ingestion.
//!
//! A manifest is UTF-8 text whose first line is `#microvoc-manifest v1`,
//! followed by one record per line: `<relative image path>\t<label>[;<label>...]`.
//! Blank lines and further `#` lines are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::{mean_subtract, reduce_multilabel, resize_to, split_60_40, Dataset, MeanMode, Sample};
use crate::error::{Error, Result};
use crate::image::load_image;

pub const MANIFEST_HEADER: &str = "#microvoc-manifest v1";
pub const STATS_HEADER: &str = "#microvoc-stats v1";

/// The twenty VOC object categories, the default class list.
pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub path: String,
    pub labels: Vec<String>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(Error::Format { line: 1, message: format!("expected header '{MANIFEST_HEADER}'") }),
    }
    let mut records = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let text = raw.trim_end_matches('\r');
        if text.trim().is_empty() || text.starts_with('#') {
            continue;
        }
        let (path, labels) = text
            .split_once('\t')
            .ok_or_else(|| Error::Format { line, message: "expected '<path>\\t<label>[;<label>...]'".into() })?;
        if path.is_empty() {
            return Err(Error::Format { line, message: "empty image path".into() });
        }
        let labels: Vec<String> = labels.split(';').map(|l| l.trim().to_string()).collect();
        if labels.iter().any(String::is_empty) {
            return Err(Error::Format { line, message: "empty label".into() });
        }
        records.push(ManifestRecord { line, path: path.to_string(), labels });
    }
    Ok(records)
}

/// A record whose image could not be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFailure {
    pub line: usize,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub classes: Vec<String>,
    /// Images are resized to `image_size`×`image_size`.
    pub image_size: usize,
    pub seed: u64,
    pub mean_mode: MeanMode,
    /// Abort when more than this fraction of records fail to decode.
    pub max_failure_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            classes: VOC_CLASSES.iter().map(|s| s.to_string()).collect(),
            image_size: 128,
            seed: 0,
            mean_mode: MeanMode::PerChannel,
            max_failure_fraction: 0.01,
        }
    }
}

/// Decoded, resized samples with labels resolved against `classes`.
/// Unknown labels are an immediate error; decode failures are collected.
pub fn load_records(
    records: &[ManifestRecord],
    root: &Path,
    classes: &[String],
    size: (usize, usize),
) -> Result<(Vec<Sample>, Vec<RecordFailure>)> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let mut samples = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for r in records {
        if let Some(bad) = r.labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::Format { line: r.line, message: format!("unknown label '{bad}'") });
        }
        let name = reduce_multilabel(&r.labels)?;
        let label = classes.iter().position(|c| *c == name).expect("label checked above");
        let decoded = load_image(&root.join(&r.path)).and_then(|img| resize_to(&img, size));
        match decoded {
            Ok(image) => samples.push(Sample::new(image, label, r.path.clone())?),
            Err(e) => failures.push(RecordFailure { line: r.line, path: r.path.clone(), message: e.to_string() }),
        }
    }
    Ok((samples, failures))
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub dataset: Dataset,
    /// Records skipped because their image failed to decode (within the allowed fraction).
    pub failures: Vec<RecordFailure>,
}

/// Errors when more than `max_fraction` of `total` records failed, listing the first few.
pub fn check_failures(failures: &[RecordFailure], total: usize, max_fraction: f64) -> Result<()> {
    if failures.len() as f64 <= max_fraction * total as f64 {
        return Ok(());
    }
    let mut msg = format!("{} of {total} images failed to load:", failures.len());
    for f in failures.iter().take(10) {
        let _ = write!(msg, "\n  line {}: {}", f.line, f.message);
    }
    Err(Error::Image(msg))
}

/// Image root used when none is given: the manifest's directory.
pub fn default_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads a manifest, decodes and resizes images, reduces multi-label
/// records, splits 60:40 under the seed and subtracts the training mean.
pub fn ingest(manifest: &Path, root: &Path, cfg: &IngestConfig) -> Result<IngestOutcome> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::Load(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let records = parse_manifest(&text)?;
    if records.is_empty() {
        return Err(Error::Format { line: 1, message: "manifest has no records".into() });
    }
    let (samples, failures) = load_records(&records, root, &cfg.classes, (cfg.image_size, cfg.image_size))?;
    check_failures(&failures, records.len(), cfg.max_failure_fraction)?;
    let mut dataset = split_60_40(samples, cfg.seed)?;
    dataset.class_names = cfg.classes.clone();
    mean_subtract(&mut dataset, cfg.mean_mode)?;
    Ok(IngestOutcome { dataset, failures })
}

/// Sidecar text recording the preprocessing so later runs can be checked
/// against it: image size, mean mode, channel means and split membership.
pub fn stats_text(dataset: &Dataset, image_size: usize, mean_mode: MeanMode) -> String {
    let mut out = format!("{STATS_HEADER}\nimage_size={image_size}\n");
    let mode = match mean_mode {
        MeanMode::PerChannel => "per-channel",
        MeanMode::PerPixel => "per-pixel",
    };
    let _ = writeln!(out, "mean_mode={mode}");
    let means = dataset.channel_means().unwrap_or([0.0; 3]);
    let _ = writeln!(out, "channel_mean={},{},{}", means[0], means[1], means[2]);
    let _ = writeln!(out, "classes={}", dataset.class_names.join(","));
    for (s, split) in dataset.samples.iter().zip(&dataset.split) {
        let tag = match split {
            crate::augment::Split::Train => "train",
            crate::augment::Split::Val => "val",
        };
        let _ = writeln!(out, "{tag}\t{}\t{}", s.label, s.id);
    }
    out
}

pub fn write_stats(dataset: &Dataset, image_size: usize, mean_mode: MeanMode, path: &Path) -> Result<()> {
    std::fs::write(path, stats_text(dataset, image_size, mean_mode))?;
    Ok(())
}
