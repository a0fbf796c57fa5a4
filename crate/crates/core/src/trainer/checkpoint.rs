//! Versioned little-endian binary checkpoints. See `docs/checkpoint-format.md`
//! for the byte layout.

use std::path::Path;

use crate::archdsl::{parse_with_input, Shape};
use crate::error::{Error, Result};
use crate::optim::{AdamState, PlateauMetric, PlateauScheduler};
use crate::tensor::{Dims, Tensor4};

use super::network::Network;
use super::train::{EvalRecord, TrainHistory, TrainState};

pub const MAGIC: &[u8; 8] = b"MVOCCKPT";
pub const VERSION: u32 = 1;

/// A training state plus the dataset metadata needed to use the model later.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainState,
    pub class_names: Vec<String>,
    /// Mean subtracted from inputs during training, if any.
    pub mean: Option<Tensor4>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the checkpoint format")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn tensor(&mut self, t: &Tensor4) -> Result<()> {
        for d in t.dims().as_array() {
            self.u32(d)?;
        }
        for &v in t.data() {
            self.f64(v);
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Load(format!("truncated checkpoint while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Load(format!("{what} is not UTF-8")))
    }
    /// Counts are checked against the remaining bytes before allocating.
    fn count(&mut self, min_item_bytes: usize, what: &str) -> Result<usize> {
        let n = self.u32(what)?;
        if n.saturating_mul(min_item_bytes) > self.buf.len() - self.pos {
            return Err(Error::Load(format!("truncated checkpoint: {n} {what} do not fit")));
        }
        Ok(n)
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor4> {
        let d = [self.u32(what)?, self.u32(what)?, self.u32(what)?, self.u32(what)?];
        let len = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let bytes = len
            .and_then(|l| l.checked_mul(8))
            .filter(|&b| b <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Load(format!("truncated checkpoint while reading {what} data")))?;
        let data = self.take(bytes, what)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor4::from_vec(Dims::new(d[0], d[1], d[2], d[3]), data).map_err(|e| Error::Load(format!("{what}: {e}")))
    }
}

fn metric_code(m: PlateauMetric) -> u8 {
    match m {
        PlateauMetric::ValidationAccuracy => 0,
        PlateauMetric::TrainingLoss => 1,
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    encode(&ckpt.state, &ckpt.class_names, ckpt.mean.as_ref())
}

/// Serializes borrowed parts; same bytes as [`to_bytes`] on the assembled checkpoint.
pub fn encode(st: &TrainState, class_names: &[String], mean: Option<&Tensor4>) -> Result<Vec<u8>> {
    let net = &st.net;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize)?;
    w.str(&net.arch())?;
    let input = net.spec().input;
    for d in [input.c, input.h, input.w] {
        w.u32(d)?;
    }

    let params = net.params();
    w.u32(params.len())?;
    for p in params {
        w.tensor(p)?;
    }
    let frozen = net.frozen();
    w.u32(frozen.len())?;
    for chunk in frozen.chunks(8) {
        w.u8(chunk.iter().enumerate().fold(0u8, |b, (i, &f)| b | (u8::from(f) << i)));
    }

    w.u64(st.adam.t);
    w.u32(st.adam.m.len())?;
    for t in st.adam.m.iter().chain(&st.adam.v) {
        w.tensor(t)?;
    }

    w.u64(net.seed());
    w.u64(st.iteration);
    w.f64(st.alpha);
    let s = &st.scheduler;
    w.u8(metric_code(s.metric));
    w.u32(s.patience)?;
    w.f64(s.min_delta);
    w.f64(s.factor);
    w.f64(s.floor);
    let (best, stalled) = s.progress();
    w.u8(u8::from(best.is_some()));
    w.f64(best.unwrap_or(0.0));
    w.u32(stalled)?;

    w.u32(class_names.len())?;
    for name in class_names {
        w.str(name)?;
    }
    match mean {
        Some(m) => {
            w.u8(1);
            w.tensor(m)?;
        }
        None => w.u8(0),
    }
    w.u32(st.history.records.len())?;
    for r in &st.history.records {
        w.u64(r.iteration);
        for v in [r.loss, r.train_acc, r.val_acc, r.alpha] {
            w.f64(v);
        }
    }
    Ok(w.0)
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Load("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let arch = r.str("architecture")?;
    let input = Shape::new(r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?);
    let spec = parse_with_input(&arch, input).map_err(|e| Error::Load(format!("stored architecture: {e}")))?;

    let n_params = r.count(16, "parameter tensors")?;
    let params = (0..n_params).map(|_| r.tensor("parameter tensor")).collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32("freeze bitmap")?;
    let bits = r.take(n_layers.div_ceil(8), "freeze bitmap")?;
    let frozen = (0..n_layers).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();

    let t = r.u64("optimizer step")?;
    let n_moments = r.count(32, "optimizer moments")?;
    let m = (0..n_moments).map(|_| r.tensor("first moment")).collect::<Result<Vec<_>>>()?;
    let v = (0..n_moments).map(|_| r.tensor("second moment")).collect::<Result<Vec<_>>>()?;

    let seed = r.u64("seed")?;
    let iteration = r.u64("iteration")?;
    let alpha = r.f64("alpha")?;
    let metric = match r.u8("scheduler metric")? {
        0 => PlateauMetric::ValidationAccuracy,
        1 => PlateauMetric::TrainingLoss,
        other => return Err(Error::Load(format!("unknown scheduler metric {other}"))),
    };
    let patience = r.u32("scheduler")?;
    let min_delta = r.f64("scheduler")?;
    let factor = r.f64("scheduler")?;
    let floor = r.f64("scheduler")?;
    let has_best = r.u8("scheduler")? == 1;
    let best = r.f64("scheduler")?;
    let stalled = r.u32("scheduler")?;
    let mut scheduler = PlateauScheduler::new(metric, patience, min_delta, factor, floor);
    scheduler.restore(has_best.then_some(best), stalled);

    let n_classes = r.count(4, "class names")?;
    let class_names = (0..n_classes).map(|_| r.str("class name")).collect::<Result<Vec<_>>>()?;
    let mean = match r.u8("mean flag")? {
        0 => None,
        _ => Some(r.tensor("mean")?),
    };
    let n_records = r.count(40, "history records")?;
    let mut history = TrainHistory::default();
    for _ in 0..n_records {
        history.records.push(EvalRecord {
            iteration: r.u64("history")?,
            loss: r.f64("history")?,
            train_acc: r.f64("history")?,
            val_acc: r.f64("history")?,
            alpha: r.f64("history")?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Load(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }

    let net = Network::from_parts(spec, params, frozen, seed).map_err(|e| Error::Load(e.to_string()))?;
    let adam = AdamState { m, v, t };
    if adam.dims() != net.trainable_dims() {
        return Err(Error::Load("optimizer state does not match the trainable parameters".into()));
    }
    Ok(Checkpoint {
        state: TrainState { net, adam, alpha, scheduler, iteration, history },
        class_names,
        mean,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

/// Writes to a sibling temporary file first, then renames over `path`.
pub fn save_state(st: &TrainState, class_names: &[String], mean: Option<&Tensor4>, path: &Path) -> Result<()> {
    let bytes = encode(st, class_names, mean)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}
