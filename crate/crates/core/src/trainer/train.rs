use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::archdsl::{parse_with_input, Shape};
use crate::augment::{augment_train, Dataset, Expansion, Sample};
use crate::error::{Error, Result};
use crate::init::InitKind;
use crate::layers::{softmax_cross_entropy, Mode};
use crate::optim::{adam_step, AdamConfig, AdamState, PlateauMetric, PlateauScheduler};
use crate::rng::{self, stream};
use crate::tensor::Tensor4;

use super::network::{Gradients, Network};

/// Training-set expansion settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub crop: (usize, usize),
    pub expansion: Expansion,
}

impl AugmentConfig {
    /// Crops of 7/8 of the image side, five-way expansion.
    pub fn for_input(input: Shape) -> Self {
        AugmentConfig { crop: (input.h * 7 / 8, input.w * 7 / 8), expansion: Expansion::Five }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: String,
    pub adam: AdamConfig,
    /// Also apply the L2 penalty to biases.
    pub l2_biases: bool,
    pub scheduler: PlateauScheduler,
    pub batch_size: usize,
    pub max_iterations: u64,
    /// Evaluate (and report) every this many iterations, and after the last one.
    pub eval_every: u64,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    pub conv_init: InitKind,
    pub fc_init: InitKind,
}

impl TrainConfig {
    pub fn new(arch: impl Into<String>) -> Self {
        TrainConfig {
            arch: arch.into(),
            adam: AdamConfig::default(),
            l2_biases: false,
            scheduler: PlateauScheduler::default(),
            batch_size: 32,
            max_iterations: 1000,
            eval_every: 100,
            seed: 0,
            augment: None,
            conv_init: InitKind::Xavier,
            fc_init: InitKind::Xavier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.scheduler.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation point. `loss` is the mean regularized minibatch loss since
/// the previous record; `alpha` is the step size in effect over that window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub alpha: f64,
}

impl fmt::Display for EvalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} loss={:.6} train_acc={:.4} val_acc={:.4} alpha={:e}",
            self.iteration, self.loss, self.train_acc, self.val_acc, self.alpha
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "iteration,loss,train_acc,val_acc,alpha";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.loss, r.train_acc, r.val_acc, r.alpha));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: Network,
    pub adam: AdamState,
    pub alpha: f64,
    pub scheduler: PlateauScheduler,
    pub iteration: u64,
    pub history: TrainHistory,
}

impl TrainState {
    /// Fresh network built from `config.arch` for inputs of shape `input`.
    pub fn new(config: &TrainConfig, input: Shape) -> Result<Self> {
        let spec = parse_with_input(&config.arch, input)?;
        let net = Network::build_with(spec, config.conv_init, config.fc_init, config.seed)?;
        Self::from_network(config, net)
    }

    /// Starts training an existing network (e.g. one prepared for fine-tuning).
    /// The optimizer state covers only the currently unfrozen parameters.
    pub fn from_network(config: &TrainConfig, net: Network) -> Result<Self> {
        if net.classes().is_none() {
            return Err(Error::InvalidArgument("architecture must end with Softmax to be trained".into()));
        }
        Ok(TrainState {
            adam: AdamState::new(net.trainable_dims())?,
            net,
            alpha: config.adam.alpha,
            scheduler: config.scheduler.clone(),
            iteration: 0,
            history: TrainHistory::default(),
        })
    }
}

/// Index of the largest logit of each row; ties go to the lowest index.
pub fn predictions(logits: &Tensor4) -> Vec<usize> {
    let d = logits.dims();
    let c = d.sample_len();
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose top-1 prediction equals the label.
pub fn accuracy_from_logits(logits: &Tensor4, labels: &[usize]) -> Result<f64> {
    let preds = predictions(logits);
    if preds.len() != labels.len() {
        return Err(Error::InvalidShape(format!("{} logit rows for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set is undefined".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

const EVAL_BATCH: usize = 64;

fn stack_samples(samples: &[&Sample]) -> Result<Tensor4> {
    Tensor4::stack(samples.iter().map(|s| &s.image))
}

/// Test-mode top-1 accuracy over `samples`.
pub fn evaluate(net: &Network, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    let mut hits = 0usize;
    for chunk in samples.chunks(EVAL_BATCH) {
        let logits = net.logits(&stack_samples(chunk)?)?;
        hits += predictions(&logits).iter().zip(chunk).filter(|(p, s)| **p == s.label).count();
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Adds the L2 gradient to trainable weights (and biases if requested);
/// returns the penalty over the same tensors.
fn regularize(net: &Network, grads: &mut Gradients, lambda: f64, biases: bool) -> Result<f64> {
    let mut penalty = 0.0;
    if lambda == 0.0 {
        return Ok(penalty);
    }
    for (layer, g) in net.layers().iter().zip(grads.layers.iter_mut()) {
        let Some(g) = g.as_mut().filter(|g| !g.discard) else { continue };
        let count = if biases { 2 } else { 1 };
        for (p, gt) in layer.params().into_iter().zip(g.tensors.iter_mut()).take(count) {
            gt.add_scaled(2.0 * lambda, p)?;
            penalty += p.sq_l2();
        }
    }
    Ok(lambda * penalty)
}

fn check_dataset(net: &Network, dataset: &Dataset) -> Result<()> {
    let classes = net.classes().unwrap_or(0);
    let input = net.spec().input;
    for s in &dataset.samples {
        if s.label >= classes {
            return Err(Error::InvalidLabel { label: s.label, classes });
        }
        let d = s.image.dims();
        if (d.c, d.h, d.w) != (input.c, input.h, input.w) {
            return Err(Error::InvalidShape(format!("sample {} has dims {d}, network expects {input}", s.id)));
        }
    }
    if dataset.train().is_empty() || dataset.val().is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty train and validation splits".into()));
    }
    Ok(())
}

/// Trains a fresh network; see [`run`].
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainState> {
    let first = dataset.samples.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let d = first.image.dims();
    let mut state = TrainState::new(config, Shape::new(d.c, d.h, d.w))?;
    run(config, dataset, &mut state, |_, _| Ok(()))?;
    Ok(state)
}

/// Advances `state` to `config.max_iterations`. Each iteration is one
/// minibatch drawn from a per-epoch seeded permutation of the (optionally
/// expanded) training split. At every evaluation point a record is appended,
/// the scheduler observes it, and `observer` is called.
///
/// The shuffle and dropout streams are functions of the seed and the
/// iteration number, so a state saved at an evaluation point and resumed
/// produces the same trajectory as an uninterrupted run.
pub fn run(
    config: &TrainConfig,
    dataset: &Dataset,
    state: &mut TrainState,
    mut observer: impl FnMut(&TrainState, &EvalRecord) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if state.net.seed() != config.seed {
        return Err(Error::State(format!(
            "state was created with seed {}, config has {}",
            state.net.seed(),
            config.seed
        )));
    }
    check_dataset(&state.net, dataset)?;
    let plain_train = dataset.train();
    let val = dataset.val();
    let expanded;
    let train_set: Vec<&Sample> = match config.augment {
        Some(a) => {
            expanded = augment_train(dataset, a.crop, a.expansion, config.seed)?;
            expanded.iter().collect()
        }
        None => plain_train.clone(),
    };
    let n = train_set.len() as u64;
    let batch = config.batch_size as u64;
    let mut perm: (u64, Vec<usize>) = (u64::MAX, Vec::new());
    let mut window = (0.0f64, 0u64);

    while state.iteration < config.max_iterations {
        let it = state.iteration;
        let mut members = Vec::with_capacity(config.batch_size);
        for p in it * batch..(it + 1) * batch {
            let epoch = p / n;
            if perm.0 != epoch {
                let mut order: Vec<usize> = (0..train_set.len()).collect();
                order.shuffle(&mut rng::derived(config.seed, stream::SHUFFLE, epoch));
                perm = (epoch, order);
            }
            members.push(train_set[perm.1[(p % n) as usize]]);
        }
        let images = stack_samples(&members)?;
        let labels: Vec<usize> = members.iter().map(|s| s.label).collect();

        state.net.set_rng_stream(it);
        let logits = state.net.forward(&images, Mode::Train)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        let mut grads = state.net.backward(&out.grad_logits)?;
        let penalty = regularize(&state.net, &mut grads, config.adam.lambda, config.l2_biases)?;
        let loss = out.loss + penalty;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration: it + 1 });
        }
        let cfg = AdamConfig { alpha: state.alpha, ..config.adam };
        adam_step(&mut state.net.trainable_params_mut(), &grads.trainable(), &mut state.adam, &cfg)?;

        state.iteration += 1;
        window.0 += loss;
        window.1 += 1;

        if state.iteration.is_multiple_of(config.eval_every) || state.iteration == config.max_iterations {
            let record = EvalRecord {
                iteration: state.iteration,
                loss: window.0 / window.1 as f64,
                train_acc: evaluate(&state.net, &plain_train)?,
                val_acc: evaluate(&state.net, &val)?,
                alpha: state.alpha,
            };
            window = (0.0, 0);
            let metric = match state.scheduler.metric {
                PlateauMetric::ValidationAccuracy => record.val_acc,
                PlateauMetric::TrainingLoss => record.loss,
            };
            state.alpha = state.scheduler.observe(metric, state.alpha);
            state.history.records.push(record);
            observer(state, &record)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Split;

    #[test]
    fn argmax_ties_go_to_first() {
        let logits = Tensor4::from_vec((3, 3, 1, 1), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, -1.0, -2.0, -1.0]).unwrap();
        assert_eq!(predictions(&logits), vec![0, 1, 0]);
        assert!((accuracy_from_logits(&logits, &[0, 2, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy_from_logits(&logits, &[0]).is_err());
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            records: vec![EvalRecord { iteration: 10, loss: 1.5, train_acc: 0.25, val_acc: 0.5, alpha: 1e-4 }],
        };
        assert_eq!(h.to_csv(), "iteration,loss,train_acc,val_acc,alpha\n10,1.5,0.25,0.5,0.0001\n");
        let line = h.records[0].to_string();
        assert!(line.starts_with("iter=10 loss=1.500000 train_acc=0.2500 val_acc=0.5000 alpha="));
    }

    fn toy_dataset() -> Dataset {
        let mut r = rng::seeded(8);
        let mut samples = Vec::new();
        for i in 0..12 {
            let label = i % 2;
            let mut img = crate::init::uniform_tensor(-0.1, 0.1, (1, 3, 4, 4), &mut r).unwrap();
            img.data_mut()[label * 16] += 1.0;
            samples.push(Sample::new(img, label, format!("s{i}")).unwrap());
        }
        let split = (0..12).map(|i| if i < 8 { Split::Train } else { Split::Val }).collect();
        Dataset { samples, split, class_names: vec!["a".into(), "b".into()], mean: None }
    }

    #[test]
    fn rejects_bad_labels_and_seed_mismatch() {
        let mut ds = toy_dataset();
        let mut cfg = TrainConfig::new("IMG-(FC2)-Softmax");
        cfg.max_iterations = 2;
        let mut state = TrainState::new(&cfg, Shape::new(3, 4, 4)).unwrap();
        let other = TrainConfig { seed: 1, ..cfg.clone() };
        assert!(matches!(run(&other, &ds, &mut state, |_, _| Ok(())), Err(Error::State(_))));
        ds.samples[0].label = 5;
        assert!(matches!(train(&cfg, &ds), Err(Error::InvalidLabel { .. })));
        assert!(TrainState::new(&TrainConfig::new("IMG-(FC2)"), Shape::new(3, 4, 4)).is_err());
    }

    #[test]
    fn records_at_eval_points_and_end() {
        let ds = toy_dataset();
        let mut cfg = TrainConfig::new("IMG-(FC2)-Softmax");
        cfg.max_iterations = 7;
        cfg.eval_every = 3;
        cfg.batch_size = 4;
        let mut seen = Vec::new();
        let mut state = TrainState::new(&cfg, Shape::new(3, 4, 4)).unwrap();
        run(&cfg, &ds, &mut state, |_, r| {
            seen.push(r.iteration);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6, 7]);
        assert_eq!(state.adam.t, 7);
        assert!(state.history.records.iter().all(|r| r.loss.is_finite() && (0.0..=1.0).contains(&r.val_acc)));
    }
}
