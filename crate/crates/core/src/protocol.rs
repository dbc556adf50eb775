//! Three-phase transfer protocol: pre-train on the source domain, optionally
//! fine-tune on a handful of target shots, then classify by nearest
//! prototype component (or by largest logit for the cross-entropy baseline).
//!
//! All loops are deterministic functions of their inputs and the config
//! seed: shuffling, augmentation draws, and shot sampling each consume their
//! own derived random stream, so reruns and parallel sweeps reproduce
//! bit-identical results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{augment_finetune, augment_pretrain, hflip, ClassPools, Image, MixAxis};
use crate::checkpoint::{Checkpoint, TrainMode};
use crate::encoder::{
    adam_step, ce_loss, ce_loss_and_grad, ddt_loss, ddt_loss_and_grad, encode, forward_raw,
    init_encoder, AdamState, Arch, Batch, EncoderParams,
};
use crate::error::{Error, Result};
use crate::gaussian::w2_diag_identity;
use crate::prototype::PrototypeDistribution;
use crate::synthdata::{derive_seed, Dataset, LabeledSample, Split};

/// Clamp on the distance in the loss gradient denominator.
pub const W_FLOOR: f64 = 1e-6;

/// A monitored loss counts as improved only when it drops below the best
/// seen value by more than this, which removes float-noise ambiguity from
/// the plateau and early-stop counters.
pub const IMPROVE_EPS: f64 = 1e-6;

// Distinct stream tags so initialization, training draws, and shot sampling
// never share random state.
const INIT_STREAM: u64 = 0x01;
const PRETRAIN_STREAM: u64 = 0x02;
const FINETUNE_STREAM: u64 = 0x03;
const SHOT_STREAM: u64 = 0x04;

/// Everything a training run needs besides the data and the prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Samples per optimizer step. 32 suits the small synthetic sets; larger
    /// studies typically use 128.
    pub batch_size: usize,
    pub pretrain_lr: f64,
    /// Consecutive non-improving validation epochs before one lr decay.
    pub plateau_patience: usize,
    /// Multiplier applied to the lr at each plateau (one decade by default).
    pub plateau_decay: f64,
    /// Consecutive non-improving validation epochs before pre-training stops.
    pub early_stop_pretrain: usize,
    /// Fine-tuning rate, held fixed with no decay.
    pub finetune_lr: f64,
    /// Consecutive non-improving training epochs before fine-tuning stops.
    pub early_stop_finetune: usize,
    /// Hard cap on epochs for either phase.
    pub max_epochs: usize,
    /// Mixing probability during pre-training; any nonzero value enables the
    /// per-sample mixing done every fine-tuning epoch.
    pub p_mix: f64,
    /// Horizontal flip probability in both phases.
    pub p_flip: f64,
    pub seed: u64,
    pub mix_axis: MixAxis,
    /// Shot counts are per class when true (the default); otherwise a shot
    /// count is a total split as evenly as possible across classes.
    pub shots_per_class: bool,
    /// Encoder architecture; `None` picks the standard 32x32 stack sized for
    /// the mode and prototype.
    pub arch: Option<Arch>,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        Self {
            mode,
            batch_size: 32,
            pretrain_lr: 1e-3,
            plateau_patience: 5,
            plateau_decay: 0.1,
            early_stop_pretrain: 10,
            finetune_lr: 1e-5,
            early_stop_finetune: 30,
            max_epochs: 200,
            p_mix: 0.5,
            p_flip: 0.5,
            seed,
            mix_axis: MixAxis::LeftRight,
            shots_per_class: true,
            arch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, rate) in [("pretrain_lr", self.pretrain_lr), ("finetune_lr", self.finetune_lr)]
        {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {rate}")));
            }
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay < 1.0) {
            return Err(Error::Config(format!(
                "plateau_decay must lie in (0, 1), got {}",
                self.plateau_decay
            )));
        }
        for (name, patience) in [
            ("plateau_patience", self.plateau_patience),
            ("early_stop_pretrain", self.early_stop_pretrain),
            ("early_stop_finetune", self.early_stop_finetune),
        ] {
            if patience == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, p) in [("p_mix", self.p_mix), ("p_flip", self.p_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// The architecture to train, checked against the head width the mode
    /// and prototype require.
    fn resolve_arch(&self, classes: usize, k: usize) -> Result<Arch> {
        let want = match self.mode {
            TrainMode::Ddt => 2 * k,
            TrainMode::CeBaseline => classes,
        };
        match &self.arch {
            Some(arch) => {
                if arch.dense_out() != want {
                    return Err(Error::Config(format!(
                        "{} mode with ({classes}, {k}) needs a {want}-wide head but the \
                         architecture has {}",
                        self.mode,
                        arch.dense_out()
                    )));
                }
                Ok(arch.clone())
            }
            None => Arch::standard(want),
        }
    }
}

/// Multiplies the learning rate by `decay` whenever the monitored loss
/// fails to improve for `patience` consecutive observations. The stall
/// counter restarts after each decay.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    decay: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, decay: f64, patience: usize) -> Self {
        Self { lr, decay, patience, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one loss observation; returns the rate to use from now on.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - IMPROVE_EPS {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.decay;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Signals stop after `patience` consecutive non-improving observations.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, stale: 0 }
    }

    /// Feed one loss observation; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - IMPROVE_EPS {
            self.best = loss;
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.stale >= self.patience
        }
    }
}

/// One pre-training epoch as recorded in the returned history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's (augmented) batches.
    pub train_loss: f64,
    /// Loss over the full validation split after the epoch.
    pub val_loss: f64,
    /// Rate the epoch's updates were taken with.
    pub lr: f64,
}

/// Render a history as CSV with a header row and six decimal places.
pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            e.epoch, e.train_loss, e.val_loss, e.lr
        ));
    }
    out
}

/// Distances from one sample to every class, plus the decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistances {
    /// Per-class distance; negated logits in cross-entropy mode so that the
    /// smallest entry is always the decision.
    pub d: Vec<f64>,
    /// Index of the minimum distance, lowest index on exact ties.
    pub predicted: usize,
}

fn argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in d.iter().enumerate().skip(1) {
        if v < d[best] {
            best = i;
        }
    }
    best
}

/// Classify one image: embed it and measure the distance to every prototype
/// component, or read the logits in cross-entropy mode.
pub fn classify(
    ckpt: &Checkpoint,
    proto: &PrototypeDistribution,
    image: &Image,
) -> Result<ClassDistances> {
    if proto.classes() != ckpt.classes || proto.dim() != ckpt.k {
        return Err(Error::Shape(format!(
            "prototype shape ({}, {}) does not match the checkpoint's ({}, {})",
            proto.classes(),
            proto.dim(),
            ckpt.classes,
            ckpt.k
        )));
    }
    let head = ckpt.params.arch.dense_out();
    let want = match ckpt.mode {
        TrainMode::Ddt => 2 * ckpt.k,
        TrainMode::CeBaseline => ckpt.classes,
    };
    if head != want {
        return Err(Error::Shape(format!(
            "{} checkpoint for ({}, {}) should have a {want}-wide head, found {head}",
            ckpt.mode, ckpt.classes, ckpt.k
        )));
    }
    let d = match ckpt.mode {
        TrainMode::Ddt => {
            let emb = encode(&ckpt.params, image)?;
            (0..proto.classes())
                .map(|c| w2_diag_identity(&emb, proto.class_mean(c)?))
                .collect::<Result<Vec<f64>>>()?
        }
        TrainMode::CeBaseline => forward_raw(&ckpt.params, image)?.iter().map(|&l| -l).collect(),
    };
    let predicted = argmin(&d);
    Ok(ClassDistances { d, predicted })
}

/// Accuracy and loss over one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// correct / total over the whole split.
    pub accuracy: f64,
    /// Mean per-sample loss (distance to the true component, or
    /// cross-entropy in baseline mode).
    pub mean_loss: f64,
    /// Accuracy within each class; `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_class_counts: Vec<usize>,
    pub correct: usize,
    pub total: usize,
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Classify every sample of `split` and aggregate. The mean loss is summed
/// in sorted order so the result is identical for any ordering of the split.
pub fn evaluate(
    ckpt: &Checkpoint,
    proto: &PrototypeDistribution,
    data: &Dataset,
    split: Split,
) -> Result<Metrics> {
    let samples: Vec<&LabeledSample> = data.split(split).collect();
    if samples.is_empty() {
        return Err(Error::Config(format!("no samples in the {} split", split.as_str())));
    }
    let classes = ckpt.classes;
    let mut counts = vec![0usize; classes];
    let mut correct_per = vec![0usize; classes];
    let mut losses = Vec::with_capacity(samples.len());
    for s in &samples {
        if s.label >= classes {
            return Err(Error::Index(format!(
                "label {} out of range for {classes} classes",
                s.label
            )));
        }
        let cd = classify(ckpt, proto, &s.image)?;
        counts[s.label] += 1;
        if cd.predicted == s.label {
            correct_per[s.label] += 1;
        }
        let loss = match ckpt.mode {
            TrainMode::Ddt => cd.d[s.label],
            TrainMode::CeBaseline => {
                let logits: Vec<f64> = cd.d.iter().map(|&x| -x).collect();
                logsumexp(&logits) - logits[s.label]
            }
        };
        losses.push(loss);
    }
    losses.sort_by(f64::total_cmp);
    let total = samples.len();
    let correct: usize = correct_per.iter().sum();
    let per_class_accuracy = counts
        .iter()
        .zip(&correct_per)
        .map(|(&n, &c)| if n == 0 { None } else { Some(c as f64 / n as f64) })
        .collect();
    Ok(Metrics {
        accuracy: correct as f64 / total as f64,
        mean_loss: losses.iter().sum::<f64>() / total as f64,
        per_class_accuracy,
        per_class_counts: counts,
        correct,
        total,
    })
}

fn batch_loss_and_grad(
    params: &EncoderParams,
    batch: &Batch,
    mode: TrainMode,
    proto: &PrototypeDistribution,
) -> Result<(f64, Vec<f64>)> {
    match mode {
        TrainMode::Ddt => ddt_loss_and_grad(params, batch, proto, W_FLOOR),
        TrainMode::CeBaseline => ce_loss_and_grad(params, batch, proto.classes()),
    }
}

fn batch_loss(
    params: &EncoderParams,
    batch: &Batch,
    mode: TrainMode,
    proto: &PrototypeDistribution,
) -> Result<f64> {
    match mode {
        TrainMode::Ddt => ddt_loss(params, batch, proto),
        TrainMode::CeBaseline => ce_loss(params, batch, proto.classes()),
    }
}

fn check_labels<'a>(samples: impl Iterator<Item = &'a LabeledSample>, classes: usize) -> Result<()> {
    for s in samples {
        if s.label >= classes {
            return Err(Error::Index(format!(
                "label {} out of range for {classes} classes",
                s.label
            )));
        }
    }
    Ok(())
}

/// Pre-train an encoder on the source domain.
///
/// Each epoch shuffles the training split with a seeded stream, augments
/// every batch, and takes one Adam step per batch. After the epoch the full
/// validation loss drives the plateau scheduler and early stopping. The
/// returned checkpoint holds the parameters and optimizer state of the epoch
/// with the best validation loss; with `max_epochs` 0 it is simply the
/// initialized encoder and the history is empty.
pub fn pretrain(
    config: &TrainConfig,
    source: &Dataset,
    proto: &PrototypeDistribution,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    config.validate()?;
    let classes = proto.classes();
    let arch = config.resolve_arch(classes, proto.dim())?;

    let train: Vec<&LabeledSample> = source.split(Split::Train).collect();
    let val: Vec<&LabeledSample> = source.split(Split::Val).collect();
    if train.is_empty() {
        return Err(Error::Config("pre-training needs a nonempty train split".into()));
    }
    if val.is_empty() {
        return Err(Error::Config(
            "pre-training monitors validation loss but the val split is empty".into(),
        ));
    }
    check_labels(train.iter().copied().chain(val.iter().copied()), classes)?;

    let mut pools = ClassPools::new(classes);
    for s in &train {
        pools.push(s.label, s.image.clone());
    }
    let val_batch = Batch {
        images: val.iter().map(|s| s.image.clone()).collect(),
        labels: val.iter().map(|s| s.label).collect(),
    };

    let mut params = init_encoder(&arch, derive_seed(config.seed, INIT_STREAM));
    let mut opt = AdamState::new(params.theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, PRETRAIN_STREAM));
    let mut plateau =
        PlateauScheduler::new(config.pretrain_lr, config.plateau_decay, config.plateau_patience);
    let mut stop = EarlyStop::new(config.early_stop_pretrain);
    let mut lr = config.pretrain_lr;
    let mut best: Option<(f64, EncoderParams, AdamState)> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = lr;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                images: chunk.iter().map(|&i| train[i].image.clone()).collect(),
                labels: chunk.iter().map(|&i| train[i].label).collect(),
            };
            let batch = augment_pretrain(
                &batch,
                &pools,
                &mut rng,
                config.p_mix,
                config.p_flip,
                config.mix_axis,
            )?;
            let (loss, grad) = batch_loss_and_grad(&params, &batch, config.mode, proto)?;
            loss_sum += loss * chunk.len() as f64;
            let (next_params, next_opt) = adam_step(&params, &grad, &opt, lr)?;
            params = next_params;
            opt = next_opt;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = batch_loss(&params, &val_batch, config.mode, proto)?;
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, params.clone(), opt.clone()));
        }
        history.push(EpochStats { epoch, train_loss, val_loss, lr: epoch_lr });
        lr = plateau.observe(val_loss);
        if stop.observe(val_loss) {
            break;
        }
    }

    let (params, opt) = match best {
        Some((_, p, o)) => (p, o),
        None => (params, opt),
    };
    let ckpt = Checkpoint { params, opt, mode: config.mode, classes, k: proto.dim() };
    Ok((ckpt, history))
}

/// Fine-tune a pre-trained checkpoint on a few target shots.
///
/// Every epoch each shot is mixed with a fresh same-class image from the
/// source pool (skipped entirely when `p_mix` is 0), then flipped with
/// probability `p_flip`, so the handful of shots never repeats exactly. The
/// rate is `finetune_lr` with no decay and early stopping watches the
/// training loss. An empty `target_shots` is the zero-shot path and returns
/// the input checkpoint unchanged.
pub fn finetune(
    ckpt: &Checkpoint,
    target_shots: &Dataset,
    source_pool: &Dataset,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    config.validate()?;
    if target_shots.is_empty() {
        return Ok(ckpt.clone());
    }
    let classes = ckpt.classes;
    // The checkpoint must describe the same prototype geometry it was
    // pre-trained with; rebuilding the mixture from (classes, k) both
    // verifies the shape and reproduces the exact component means.
    let proto = PrototypeDistribution::build(classes, ckpt.k).map_err(|e| {
        Error::Config(format!(
            "checkpoint's prototype shape ({classes}, {}) is not buildable: {e}",
            ckpt.k
        ))
    })?;
    let want = match ckpt.mode {
        TrainMode::Ddt => 2 * ckpt.k,
        TrainMode::CeBaseline => classes,
    };
    if ckpt.params.arch.dense_out() != want {
        return Err(Error::Config(format!(
            "{} checkpoint for ({classes}, {}) should have a {want}-wide head, found {}",
            ckpt.mode,
            ckpt.k,
            ckpt.params.arch.dense_out()
        )));
    }

    let shots: Vec<&LabeledSample> = target_shots.samples.iter().collect();
    check_labels(shots.iter().copied(), classes)?;
    let mut shot_counts = vec![0usize; classes];
    for s in &shots {
        shot_counts[s.label] += 1;
    }
    if let Some(c) = shot_counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!(
            "fine-tuning needs shots for every class but class {c} has none"
        )));
    }

    let mut pools = ClassPools::new(classes);
    for s in source_pool.split(Split::Train) {
        if s.label < classes {
            pools.push(s.label, s.image.clone());
        }
    }
    if config.p_mix > 0.0 {
        if let Some(c) = (0..classes).find(|&c| pools.class(c).is_empty()) {
            return Err(Error::Config(format!(
                "mixing needs source train images for every class but class {c} has none"
            )));
        }
    }

    let mut params = ckpt.params.clone();
    let mut opt = ckpt.opt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, FINETUNE_STREAM));
    let mut stop = EarlyStop::new(config.early_stop_finetune);
    let mut best: Option<(f64, EncoderParams, AdamState)> = None;
    let mut order: Vec<usize> = (0..shots.len()).collect();

    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = shots[i];
                let mut img = if config.p_mix > 0.0 {
                    augment_finetune(&s.image, pools.class(s.label), &mut rng, config.mix_axis)?
                } else {
                    s.image.clone()
                };
                if config.p_flip > 0.0 && rng.gen::<f64>() < config.p_flip {
                    img = hflip(&img);
                }
                images.push(img);
                labels.push(s.label);
            }
            let batch = Batch { images, labels };
            let (loss, grad) = batch_loss_and_grad(&params, &batch, ckpt.mode, &proto)?;
            loss_sum += loss * chunk.len() as f64;
            let (next_params, next_opt) = adam_step(&params, &grad, &opt, config.finetune_lr)?;
            params = next_params;
            opt = next_opt;
        }
        let train_loss = loss_sum / shots.len() as f64;
        if best.as_ref().is_none_or(|(b, _, _)| train_loss < *b) {
            best = Some((train_loss, params.clone(), opt.clone()));
        }
        if stop.observe(train_loss) {
            break;
        }
    }

    let (params, opt) = match best {
        Some((_, p, o)) => (p, o),
        None => (params, opt),
    };
    Ok(Checkpoint { params, opt, mode: ckpt.mode, classes, k: ckpt.k })
}

/// One evaluated sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: TrainMode,
    pub shots: usize,
    /// Replicate index the cell's shot sampling was derived from.
    pub seed: u64,
    pub split: Split,
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Per-shot-count mean and standard deviation across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub shots: usize,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
}

/// All rows of a few-shot sweep, in (shot count, replicate) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepTable {
    /// CSV with a fixed header, LF endings, '.' decimals, six places.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,shots,seed,split,accuracy,mean_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                r.mode.as_str(),
                r.shots,
                r.seed,
                r.split.as_str(),
                r.accuracy,
                r.mean_loss
            ));
        }
        out
    }

    /// Mean and standard deviation per shot count, in first-appearance
    /// order. The standard deviation uses the n−1 normalization and is 0
    /// for a single replicate.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut order: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.shots) {
                order.push(r.shots);
            }
        }
        order
            .into_iter()
            .map(|k| {
                let acc: Vec<f64> =
                    self.rows.iter().filter(|r| r.shots == k).map(|r| r.accuracy).collect();
                let loss: Vec<f64> =
                    self.rows.iter().filter(|r| r.shots == k).map(|r| r.mean_loss).collect();
                let (accuracy_mean, accuracy_std) = mean_std(&acc);
                let (loss_mean, loss_std) = mean_std(&loss);
                SweepSummary {
                    shots: k,
                    runs: acc.len(),
                    accuracy_mean,
                    accuracy_std,
                    loss_mean,
                    loss_std,
                }
            })
            .collect()
    }

    /// Markdown table of the summary: one row per shot count.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| shots | accuracy (mean ± std) | loss (mean ± std) |\n");
        out.push_str("|---:|---:|---:|\n");
        for s in self.summary() {
            out.push_str(&format!(
                "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
                s.shots, s.accuracy_mean, s.accuracy_std, s.loss_mean, s.loss_std
            ));
        }
        out
    }
}

/// Shots allocated to each class for one requested count.
fn shot_allocation(k: usize, classes: usize, per_class: bool) -> Result<Vec<usize>> {
    if per_class {
        return Ok(vec![k; classes]);
    }
    if k > 0 && k < classes {
        return Err(Error::Config(format!(
            "a total of {k} shots cannot cover all {classes} classes"
        )));
    }
    Ok((0..classes).map(|c| k / classes + usize::from(c < k % classes)).collect())
}

/// Draw the fine-tuning shots for one sweep cell: `k` target training
/// images (per class or in total, per the config) without replacement, from
/// a stream derived from the config seed, the count, and the replicate
/// index. Running a single cell through this reproduces the sweep exactly.
pub fn sample_shots(
    target: &Dataset,
    classes: usize,
    k: usize,
    run: usize,
    config: &TrainConfig,
) -> Result<Dataset> {
    let train: Vec<&LabeledSample> = target.split(Split::Train).collect();
    check_labels(train.iter().copied(), classes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in train.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let cell_seed =
        derive_seed(derive_seed(config.seed, SHOT_STREAM), ((k as u64) << 32) | run as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
    let mut samples = Vec::new();
    for (c, &need) in shot_allocation(k, classes, config.shots_per_class)?.iter().enumerate() {
        let pool = &by_class[c];
        if pool.len() < need {
            return Err(Error::Config(format!(
                "{k}-shot sampling needs {need} train images of class {c} in the target domain \
                 but only {} exist",
                pool.len()
            )));
        }
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, pool.len(), need).into_iter().collect();
        picked.sort_unstable();
        samples.extend(picked.into_iter().map(|i| train[pool[i]].clone()));
    }
    Ok(Dataset { samples })
}

/// Run the full few-shot study: for every shot count and replicate, sample
/// that many target training images (without replacement, from a stream
/// derived from the config seed, the count, and the replicate), fine-tune
/// the pre-trained checkpoint, and evaluate on the target test split. A
/// shot count of 0 is evaluated once and its row repeated per replicate.
/// `jobs` > 1 runs cells in parallel; results are keyed and merged in order,
/// so the table is identical either way.
pub fn fewshot_sweep(
    pretrained: &Checkpoint,
    source: &Dataset,
    target: &Dataset,
    shots: &[usize],
    runs: usize,
    config: &TrainConfig,
    jobs: usize,
) -> Result<SweepTable> {
    config.validate()?;
    if shots.is_empty() {
        return Err(Error::Config("no shot counts requested".into()));
    }
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let classes = pretrained.classes;
    let proto = PrototypeDistribution::build(classes, pretrained.k)?;

    let train: Vec<&LabeledSample> = target.split(Split::Train).collect();
    check_labels(train.iter().copied(), classes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in train.iter().enumerate() {
        by_class[s.label].push(i);
    }
    for &k in shots {
        for (c, &need) in shot_allocation(k, classes, config.shots_per_class)?.iter().enumerate() {
            if by_class[c].len() < need {
                return Err(Error::Config(format!(
                    "{k}-shot sampling needs {need} train images of class {c} in the target \
                     domain but only {} exist",
                    by_class[c].len()
                )));
            }
        }
    }
    if target.split(Split::Test).next().is_none() {
        return Err(Error::Config("no samples in the test split".into()));
    }

    let zero = if shots.contains(&0) {
        Some(evaluate(pretrained, &proto, target, Split::Test)?)
    } else {
        None
    };

    let run_cell = |&(k, run): &(usize, usize)| -> Result<SweepRow> {
        let (accuracy, mean_loss) = if k == 0 {
            let m = zero.as_ref().expect("zero-shot metrics were precomputed");
            (m.accuracy, m.mean_loss)
        } else {
            let shot_set = sample_shots(target, classes, k, run, config)?;
            let tuned = finetune(pretrained, &shot_set, source, config)?;
            let m = evaluate(&tuned, &proto, target, Split::Test)?;
            (m.accuracy, m.mean_loss)
        };
        Ok(SweepRow {
            mode: pretrained.mode,
            shots: k,
            seed: run as u64,
            split: Split::Test,
            accuracy,
            mean_loss,
        })
    };

    let cells: Vec<(usize, usize)> =
        shots.iter().flat_map(|&k| (0..runs).map(move |r| (k, r))).collect();
    let rows = if jobs == 1 {
        cells.iter().map(run_cell).collect::<Result<Vec<SweepRow>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<SweepRow>>>())?
    };
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::VARIANCE_EPS;
    use rand::{Rng, SeedableRng};

    fn tiny_arch_ddt() -> Arch {
        Arch::parse("input 8x8x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 24:8").unwrap()
    }

    fn tiny_arch_ce() -> Arch {
        Arch::parse("input 8x8x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 24:2").unwrap()
    }

    fn tiny_config(mode: TrainMode) -> TrainConfig {
        let mut config = TrainConfig::new(mode, 7);
        config.arch = Some(match mode {
            TrainMode::Ddt => tiny_arch_ddt(),
            TrainMode::CeBaseline => tiny_arch_ce(),
        });
        config.batch_size = 4;
        config.max_epochs = 2;
        config
    }

    fn random_image(rng: &mut ChaCha8Rng) -> Image {
        let data = (0..8 * 8 * 3).map(|_| rng.gen::<f64>()).collect();
        Image::new(8, 8, data).unwrap()
    }

    fn tiny_dataset(per_train: usize, per_val: usize, per_test: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for (split, n) in
            [(Split::Train, per_train), (Split::Val, per_val), (Split::Test, per_test)]
        {
            for _ in 0..n {
                for label in 0..2 {
                    samples.push(LabeledSample {
                        image: random_image(&mut rng),
                        label,
                        domain: "tiny".into(),
                        split,
                    });
                }
            }
        }
        Dataset { samples }
    }

    /// Raw head value that softplus maps to variance `s`.
    fn raw_for_variance(s: f64) -> f64 {
        ((s - VARIANCE_EPS).exp() - 1.0).ln()
    }

    /// Checkpoint whose conv stack is all zeros, so the head bias alone
    /// determines the raw output for every image.
    fn stub_checkpoint(mode: TrainMode, raw: &[f64]) -> Checkpoint {
        let arch = match mode {
            TrainMode::Ddt => tiny_arch_ddt(),
            TrainMode::CeBaseline => tiny_arch_ce(),
        };
        let mut theta = vec![0.0; arch.param_count()];
        let n = theta.len();
        theta[n - raw.len()..].copy_from_slice(raw);
        let opt = AdamState::new(n);
        Checkpoint { params: EncoderParams { arch, theta }, opt, mode, classes: 2, k: 4 }
    }

    fn any_image() -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        random_image(&mut rng)
    }

    #[test]
    fn plateau_decays_after_exact_patience() {
        let mut sched = PlateauScheduler::new(1e-3, 0.1, 5);
        assert_eq!(sched.observe(1.0), 1e-3);
        for i in 0..4 {
            assert_eq!(sched.observe(1.0), 1e-3, "too early at stall {i}");
        }
        let lr = sched.observe(1.0);
        assert!((lr - 1e-4).abs() < 1e-18, "fifth stall should decay, got {lr}");
        // The counter restarts: five more stalls drop another decade.
        for _ in 0..4 {
            assert!((sched.observe(1.0) - 1e-4).abs() < 1e-18);
        }
        assert!((sched.observe(1.0) - 1e-5).abs() < 1e-19);
        // An improvement resets the clock without touching the rate.
        assert!((sched.observe(0.5) - 1e-5).abs() < 1e-19);
        for _ in 0..4 {
            assert!((sched.observe(0.5) - 1e-5).abs() < 1e-19);
        }
    }

    #[test]
    fn early_stop_triggers_on_exact_patience() {
        for patience in [10usize, 30] {
            let mut stop = EarlyStop::new(patience);
            assert!(!stop.observe(1.0));
            for i in 1..patience {
                assert!(!stop.observe(1.0), "stopped early at stall {i}");
            }
            assert!(stop.observe(1.0), "did not stop at stall {patience}");
        }
    }

    #[test]
    fn improvement_must_beat_the_epsilon() {
        let mut stop = EarlyStop::new(1);
        assert!(!stop.observe(1.0));
        // A drop of exactly 1e-6 is not an improvement, so patience 1 fires.
        assert!(stop.observe(1.0 - 1e-6));
        let mut stop = EarlyStop::new(1);
        assert!(!stop.observe(1.0));
        assert!(!stop.observe(1.0 - 2e-6));
    }

    #[test]
    fn classify_at_the_component_mean() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let m0 = proto.class_mean(0).unwrap();
        let raw: Vec<f64> =
            m0.iter().cloned().chain(std::iter::repeat(raw_for_variance(1.0)).take(4)).collect();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &raw);
        let cd = classify(&ckpt, &proto, &any_image()).unwrap();
        assert!(cd.d[0].abs() <= 1e-9, "distance to own component was {}", cd.d[0]);
        assert!((cd.d[1] - 2.0).abs() <= 1e-9);
        assert_eq!(cd.predicted, 0);
    }

    #[test]
    fn classify_ties_pick_the_lowest_index() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let m0 = proto.class_mean(0).unwrap();
        let m1 = proto.class_mean(1).unwrap();
        let mid: Vec<f64> = m0.iter().zip(m1).map(|(a, b)| (a + b) / 2.0).collect();
        let raw: Vec<f64> =
            mid.into_iter().chain(std::iter::repeat(raw_for_variance(1.0)).take(4)).collect();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &raw);
        let cd = classify(&ckpt, &proto, &any_image()).unwrap();
        assert!((cd.d[0] - 1.0).abs() <= 1e-9, "midpoint distance was {}", cd.d[0]);
        assert_eq!(cd.d[0], cd.d[1], "midpoint must tie exactly");
        assert_eq!(cd.predicted, 0);
    }

    #[test]
    fn classify_baseline_reads_logits() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let ckpt = stub_checkpoint(TrainMode::CeBaseline, &[0.3, 0.7]);
        let cd = classify(&ckpt, &proto, &any_image()).unwrap();
        assert!((cd.d[0] + 0.3).abs() < 1e-12 && (cd.d[1] + 0.7).abs() < 1e-12);
        assert_eq!(cd.predicted, 1);

        let tie = stub_checkpoint(TrainMode::CeBaseline, &[0.4, 0.4]);
        assert_eq!(classify(&tie, &proto, &any_image()).unwrap().predicted, 0);
    }

    #[test]
    fn classify_rejects_mismatched_prototype() {
        let proto = PrototypeDistribution::build(2, 8).unwrap();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        assert!(matches!(classify(&ckpt, &proto, &any_image()), Err(Error::Shape(_))));
    }

    #[test]
    fn evaluate_counts_and_per_class_accuracy() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let m0 = proto.class_mean(0).unwrap();
        let raw: Vec<f64> =
            m0.iter().cloned().chain(std::iter::repeat(raw_for_variance(1.0)).take(4)).collect();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &raw);
        // The stub always predicts class 0: nine true zeros and one one.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        for i in 0..10 {
            samples.push(LabeledSample {
                image: random_image(&mut rng),
                label: usize::from(i == 3),
                domain: "tiny".into(),
                split: Split::Test,
            });
        }
        let data = Dataset { samples };
        let m = evaluate(&ckpt, &proto, &data, Split::Test).unwrap();
        assert!((m.accuracy - 0.9).abs() < 1e-12);
        assert_eq!((m.correct, m.total), (9, 10));
        assert_eq!(m.per_class_counts, vec![9, 1]);
        assert_eq!(m.per_class_accuracy, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn evaluate_reports_absent_classes_as_none() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let mut data = tiny_dataset(0, 0, 3, 11);
        data.samples.retain(|s| s.label == 0);
        let m = evaluate(&ckpt, &proto, &data, Split::Test).unwrap();
        assert_eq!(m.per_class_counts, vec![3, 0]);
        assert!(m.per_class_accuracy[1].is_none());
    }

    #[test]
    fn evaluate_is_order_independent() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.2, -0.1, 0.4, 0.9, 0.3, -0.2, 0.1, 0.5]);
        let data = tiny_dataset(0, 0, 7, 21);
        let forward = evaluate(&ckpt, &proto, &data, Split::Test).unwrap();
        let mut reversed = data.clone();
        reversed.samples.reverse();
        assert_eq!(evaluate(&ckpt, &proto, &reversed, Split::Test).unwrap(), forward);
    }

    #[test]
    fn evaluate_rejects_empty_split() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let data = tiny_dataset(2, 0, 0, 3);
        assert!(matches!(evaluate(&ckpt, &proto, &data, Split::Test), Err(Error::Config(_))));
    }

    #[test]
    fn pretrain_zero_epochs_returns_initialized_encoder() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let mut config = tiny_config(TrainMode::Ddt);
        config.max_epochs = 0;
        let data = tiny_dataset(4, 2, 0, 13);
        let (ckpt, history) = pretrain(&config, &data, &proto).unwrap();
        assert!(history.is_empty());
        let expected = init_encoder(&tiny_arch_ddt(), derive_seed(config.seed, INIT_STREAM));
        assert_eq!(ckpt.params, expected);
        assert_eq!(ckpt.opt, AdamState::new(expected.theta.len()));
        assert_eq!((ckpt.classes, ckpt.k), (2, 4));
    }

    #[test]
    fn pretrain_requires_a_val_split() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let config = tiny_config(TrainMode::Ddt);
        let data = tiny_dataset(4, 0, 0, 13);
        assert!(matches!(pretrain(&config, &data, &proto), Err(Error::Config(_))));
    }

    #[test]
    fn pretrain_is_deterministic_and_records_history() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let config = tiny_config(TrainMode::Ddt);
        let data = tiny_dataset(4, 2, 0, 13);
        let (a, history_a) = pretrain(&config, &data, &proto).unwrap();
        let (b, history_b) = pretrain(&config, &data, &proto).unwrap();
        assert_eq!(a, b);
        assert_eq!(history_a, history_b);
        assert_eq!(history_a.len(), 2);
        assert!(history_a.iter().enumerate().all(|(i, e)| e.epoch == i));
        assert!(history_a.iter().all(|e| e.lr == config.pretrain_lr));
        assert!(history_a.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
        // The checkpoint belongs to the best epoch, so its bytes round-trip
        // through the serialized form unchanged.
        assert_eq!(Checkpoint::from_bytes(&a.to_bytes().unwrap()).unwrap(), a);
    }

    #[test]
    fn pretrain_works_in_baseline_mode() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let config = tiny_config(TrainMode::CeBaseline);
        let data = tiny_dataset(4, 2, 0, 13);
        let (ckpt, history) = pretrain(&config, &data, &proto).unwrap();
        assert_eq!(ckpt.mode, TrainMode::CeBaseline);
        assert_eq!(history.len(), 2);
        let m = evaluate(&ckpt, &proto, &tiny_dataset(0, 0, 3, 40), Split::Test).unwrap();
        assert!(m.mean_loss.is_finite());
    }

    #[test]
    fn finetune_with_no_shots_is_identity() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let config = tiny_config(TrainMode::Ddt);
        let empty = Dataset { samples: vec![] };
        let pool = tiny_dataset(2, 0, 0, 17);
        assert_eq!(finetune(&ckpt, &empty, &pool, &config).unwrap(), ckpt);
    }

    #[test]
    fn finetune_rejects_a_class_with_zero_shots() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let config = tiny_config(TrainMode::Ddt);
        let mut shots = tiny_dataset(2, 0, 0, 17);
        shots.samples.retain(|s| s.label == 0);
        let pool = tiny_dataset(2, 0, 0, 18);
        assert!(matches!(finetune(&ckpt, &shots, &pool, &config), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_rejects_an_inconsistent_checkpoint() {
        let mut ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        ckpt.k = 6; // the 8-wide head cannot serve a 6-dimensional prototype
        let config = tiny_config(TrainMode::Ddt);
        let shots = tiny_dataset(1, 0, 0, 17);
        let pool = tiny_dataset(2, 0, 0, 18);
        assert!(matches!(finetune(&ckpt, &shots, &pool, &config), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_needs_source_images_only_when_mixing() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let mut config = tiny_config(TrainMode::Ddt);
        let shots = tiny_dataset(1, 0, 0, 17);
        let empty_pool = Dataset { samples: vec![] };
        assert!(matches!(
            finetune(&ckpt, &shots, &empty_pool, &config),
            Err(Error::Config(_))
        ));
        config.p_mix = 0.0;
        assert!(finetune(&ckpt, &shots, &empty_pool, &config).is_ok());
    }

    #[test]
    fn finetune_is_deterministic_and_moves_parameters() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.1; 8]);
        let config = tiny_config(TrainMode::Ddt);
        let shots = tiny_dataset(2, 0, 0, 17);
        let pool = tiny_dataset(3, 0, 0, 18);
        let a = finetune(&ckpt, &shots, &pool, &config).unwrap();
        let b = finetune(&ckpt, &shots, &pool, &config).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params.theta, ckpt.params.theta);
        assert_eq!(a.mode, ckpt.mode);
    }

    #[test]
    fn sweep_zero_shot_row_matches_evaluate() {
        let proto = PrototypeDistribution::build(2, 4).unwrap();
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.2, 0.1, 0.0, 0.3, 0.1, 0.2, 0.0, 0.1]);
        let config = tiny_config(TrainMode::Ddt);
        let source = tiny_dataset(2, 0, 0, 31);
        let target = tiny_dataset(2, 0, 3, 32);
        let table = fewshot_sweep(&ckpt, &source, &target, &[0], 1, &config, 1).unwrap();
        assert_eq!(table.rows.len(), 1);
        let m = evaluate(&ckpt, &proto, &target, Split::Test).unwrap();
        let row = &table.rows[0];
        assert_eq!((row.shots, row.seed, row.split), (0, 0, Split::Test));
        assert_eq!(row.accuracy, m.accuracy);
        assert_eq!(row.mean_loss, m.mean_loss);
    }

    #[test]
    fn sweep_rejects_a_pool_that_is_too_small() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.0; 8]);
        let config = tiny_config(TrainMode::Ddt);
        let source = tiny_dataset(2, 0, 0, 31);
        let target = tiny_dataset(3, 0, 2, 32);
        assert!(matches!(
            fewshot_sweep(&ckpt, &source, &target, &[0, 5], 2, &config, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_is_deterministic_and_parallel_agrees() {
        let ckpt = stub_checkpoint(TrainMode::Ddt, &[0.1; 8]);
        let mut config = tiny_config(TrainMode::Ddt);
        config.max_epochs = 1;
        let source = tiny_dataset(3, 0, 0, 31);
        let target = tiny_dataset(3, 0, 2, 32);
        let a = fewshot_sweep(&ckpt, &source, &target, &[0, 2], 2, &config, 1).unwrap();
        let b = fewshot_sweep(&ckpt, &source, &target, &[0, 2], 2, &config, 1).unwrap();
        let c = fewshot_sweep(&ckpt, &source, &target, &[0, 2], 2, &config, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.rows.len(), 4);
        // Replicated zero-shot rows are byte-identical to one another.
        assert_eq!(a.rows[0].accuracy, a.rows[1].accuracy);
        assert_eq!(a.rows[0].mean_loss, a.rows[1].mean_loss);
        // Different replicates of a nonzero count sample different shots.
        assert_eq!((a.rows[2].shots, a.rows[3].shots), (2, 2));
        assert_eq!((a.rows[2].seed, a.rows[3].seed), (0, 1));
    }

    #[test]
    fn sampled_shots_are_unique_and_cell_seeded() {
        let config = tiny_config(TrainMode::Ddt);
        let target = tiny_dataset(6, 0, 0, 44);
        let a = sample_shots(&target, 2, 3, 0, &config).unwrap();
        assert_eq!(a.len(), 6);
        for label in 0..2 {
            let of_class: Vec<&LabeledSample> =
                a.samples.iter().filter(|s| s.label == label).collect();
            assert_eq!(of_class.len(), 3);
            for i in 0..of_class.len() {
                for j in 0..i {
                    assert_ne!(
                        of_class[i].image.data(),
                        of_class[j].image.data(),
                        "shot drawn twice"
                    );
                }
            }
        }
        assert_eq!(sample_shots(&target, 2, 3, 0, &config).unwrap(), a);
        assert_ne!(sample_shots(&target, 2, 3, 1, &config).unwrap(), a);
    }

    #[test]
    fn total_count_allocation_splits_evenly() {
        assert_eq!(shot_allocation(5, 2, true).unwrap(), vec![5, 5]);
        assert_eq!(shot_allocation(5, 2, false).unwrap(), vec![3, 2]);
        assert_eq!(shot_allocation(4, 2, false).unwrap(), vec![2, 2]);
        assert_eq!(shot_allocation(0, 2, false).unwrap(), vec![0, 0]);
        assert!(shot_allocation(1, 2, false).is_err());
    }

    #[test]
    fn csv_and_markdown_formats_are_stable() {
        let rows = vec![
            SweepRow {
                mode: TrainMode::Ddt,
                shots: 0,
                seed: 0,
                split: Split::Test,
                accuracy: 0.5,
                mean_loss: 1.25,
            },
            SweepRow {
                mode: TrainMode::Ddt,
                shots: 0,
                seed: 1,
                split: Split::Test,
                accuracy: 0.7,
                mean_loss: 0.75,
            },
        ];
        let table = SweepTable { rows };
        assert_eq!(
            table.to_csv(),
            "mode,shots,seed,split,accuracy,mean_loss\n\
             ddt,0,0,test,0.500000,1.250000\n\
             ddt,0,1,test,0.700000,0.750000\n"
        );
        let summary = table.summary();
        assert_eq!(summary.len(), 1);
        assert!((summary[0].accuracy_mean - 0.6).abs() < 1e-12);
        assert!((summary[0].accuracy_std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((summary[0].loss_mean - 1.0).abs() < 1e-12);
        let md = table.to_markdown();
        assert!(md.starts_with("| shots | accuracy"));
        assert!(md.contains("| 0 | 0.6000 ± 0.1414 | 1.0000 ± 0.3536 |"));
    }

    #[test]
    fn history_csv_has_the_documented_columns() {
        let history = vec![EpochStats { epoch: 0, train_loss: 1.5, val_loss: 1.25, lr: 1e-3 }];
        assert_eq!(
            history_to_csv(&history),
            "epoch,train_loss,val_loss,lr\n0,1.500000,1.250000,0.001000\n"
        );
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let base = TrainConfig::new(TrainMode::Ddt, 1);
        assert!(base.validate().is_ok());
        let tweaks: [fn(&mut TrainConfig); 9] = [
            |c| c.batch_size = 0,
            |c| c.pretrain_lr = 0.0,
            |c| c.finetune_lr = -1e-5,
            |c| c.plateau_decay = 1.0,
            |c| c.plateau_patience = 0,
            |c| c.early_stop_pretrain = 0,
            |c| c.early_stop_finetune = 0,
            |c| c.p_mix = 1.5,
            |c| c.p_flip = -0.1,
        ];
        for tweak in tweaks {
            let mut config = base.clone();
            tweak(&mut config);
            assert!(matches!(config.validate(), Err(Error::Config(_))));
        }
    }
}
