//! Mini-batch training with Adam, early stopping on validation loss, and evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{softmax, Mode};
use crate::metrics::{argmax_rows, confusion, cross_entropy, softmax_ce_backward, weighted_metrics, ConfusionMatrix, MetricsReport};
use crate::model::{build_model, ModelConfig, Network};
use crate::optim::{AdamState, DEFAULT_LEARNING_RATE};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
    /// `(height, width)` every image was resized to.
    pub input_size: (usize, usize),
    pub channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 100,
            learning_rate: DEFAULT_LEARNING_RATE,
            patience: 10,
            seed: DEFAULT_SEED,
            input_size: (224, 224),
            channels: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.max_epochs < 1 || self.patience < 1 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must all be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.input_size.0, self.input_size.1]
    }
}

/// Batches per epoch, counting a final partial batch.
pub fn steps_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size.div_ceil(batch_size)
}

/// Labeled images of one split, stored contiguously as `(C, H, W)` planes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    chw: [usize; 3],
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl Samples {
    pub fn new(chw: [usize; 3]) -> Self {
        Samples {
            chw,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn chw(&self) -> [usize; 3] {
        self.chw
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn sample_len(&self) -> usize {
        self.chw.iter().product()
    }

    pub fn push(&mut self, image: &Tensor, label: usize) -> Result<()> {
        if image.shape() != self.chw {
            return Err(Error::Data(format!(
                "image shape {:?} differs from the split's {:?}",
                image.shape(),
                self.chw
            )));
        }
        self.data.extend_from_slice(image.data());
        self.labels.push(label);
        Ok(())
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        let n = self.sample_len();
        Tensor::from_vec(&self.chw, self.data[i * n..(i + 1) * n].to_vec())
    }

    /// Stacks the given samples into a `(B, C, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.chw;
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitData {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub num_classes: usize,
}

/// Early-stopping decision over a validation-loss history (epochs are 1-based).
///
/// `best_epoch` is the earliest minimum. Training stops once `patience` epochs
/// have passed without a strict improvement on it.
pub fn early_stop(history: &[f64], patience: usize) -> (bool, usize) {
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for (i, &v) in history.iter().enumerate() {
        if v < best {
            best = v;
            best_epoch = i + 1;
        }
    }
    if best_epoch == 0 {
        // Nothing finite yet; measure from the first epoch.
        best_epoch = 1.min(history.len());
    }
    let stop = !history.is_empty() && history.len() - best_epoch >= patience;
    (stop, best_epoch)
}

/// One model's view of an epoch loop, so the early-stopping driver can run
/// against anything that trains and validates.
pub trait EpochTrainer {
    type Snapshot;
    /// Runs one epoch and returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    /// Returns `(validation loss, validation accuracy)`.
    fn validate(&mut self) -> Result<(f64, f64)>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
}

/// Epoch loop with early stopping; leaves the trainer at its best-validation state.
pub fn fit<T: EpochTrainer>(
    trainer: &mut T,
    max_epochs: usize,
    patience: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitHistory> {
    let mut hist = FitHistory {
        best_val_loss: f64::INFINITY,
        ..FitHistory::default()
    };
    let mut best = None;
    for epoch in 1..=max_epochs {
        let train_loss = trainer.train_epoch(epoch)?;
        let (val_loss, val_acc) = trainer.validate()?;
        hist.train_loss.push(train_loss);
        hist.val_loss.push(val_loss);
        hist.val_acc.push(val_acc);
        hist.stopped_epoch = epoch;
        if val_loss < hist.best_val_loss || best.is_none() {
            if val_loss < hist.best_val_loss {
                hist.best_val_loss = val_loss;
            }
            best = Some(trainer.snapshot());
        }
        on_epoch(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        let (stop, best_epoch) = early_stop(&hist.val_loss, patience);
        hist.best_epoch = best_epoch;
        if stop {
            break;
        }
    }
    if let Some(s) = best {
        trainer.restore(s);
    }
    Ok(hist)
}

/// Loss and metrics of a network on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Eval-mode pass over a split in batches of `batch_size`.
pub fn evaluate(net: &mut Network, samples: &Samples, batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut total_loss = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    let indices: Vec<usize> = (0..samples.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = samples.batch(chunk)?;
        let probs = net.predict(&x)?;
        total_loss += cross_entropy(&probs, &labels)? * chunk.len() as f64;
        preds.extend(argmax_rows(&probs));
    }
    net.clear_caches();
    let cm = confusion(&preds, samples.labels(), net.num_classes())?;
    Ok(Evaluation {
        loss: total_loss / samples.len() as f64,
        metrics: weighted_metrics(&cm)?,
        confusion: cm,
        predictions: preds,
    })
}

/// [`EpochTrainer`] for a [`Network`] on in-memory splits.
pub struct CnnTrainer<'a> {
    pub net: Network,
    adam: AdamState,
    data: &'a SplitData,
    cfg: TrainConfig,
    global_step: u64,
}

impl<'a> CnnTrainer<'a> {
    pub fn new(net: Network, data: &'a SplitData, cfg: TrainConfig) -> Self {
        let adam = AdamState::new(net.params(), cfg.learning_rate);
        CnnTrainer {
            net,
            adam,
            data,
            cfg,
            global_step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.global_step
    }

    /// One forward/backward/update on a batch; returns the batch loss.
    pub fn step(&mut self, x: &Tensor, labels: &[usize], epoch: usize, step: usize) -> Result<f64> {
        let dropout = RngStream::new(self.cfg.seed, "dropout", self.global_step);
        let logits = self.net.forward(x, Mode::Train, Some(&dropout))?;
        let probs = softmax(&logits)?;
        let loss = cross_entropy(&probs, labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, step, loss });
        }
        let grads = self.net.backward(&softmax_ce_backward(&probs, labels)?)?;
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Divergence { epoch, step, loss });
        }
        self.adam.step(&mut self.net.params_mut(), &grads)?;
        self.global_step += 1;
        Ok(loss)
    }
}

impl EpochTrainer for CnnTrainer<'_> {
    type Snapshot = Vec<Tensor>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngStream::new(self.cfg.seed, "shuffle", epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let (x, labels) = train.batch(chunk)?;
            total += self.step(&x, &labels, epoch, step + 1)? * chunk.len() as f64;
        }
        self.net.clear_caches();
        Ok(total / train.len() as f64)
    }

    fn validate(&mut self) -> Result<(f64, f64)> {
        let e = evaluate(&mut self.net, &self.data.val, self.cfg.batch_size)?;
        Ok((e.loss, e.metrics.accuracy))
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.net.snapshot()
    }

    fn restore(&mut self, snapshot: Vec<Tensor>) {
        self.net
            .load_params(snapshot)
            .expect("snapshot taken from the same network");
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    pub steps_per_epoch: usize,
    pub total_steps: u64,
    pub test_metrics: MetricsReport,
    pub test_confusion: ConfusionMatrix,
    /// Not serialized, so saved reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub const LOSS_CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_acc";

    /// `epoch,train_loss,val_loss,val_acc`, one row per trained epoch.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from(Self::LOSS_CSV_HEADER);
        out.push('\n');
        for i in 0..self.train_loss.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.val_loss[i],
                self.val_acc[i]
            ));
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        format!("{}\n{}\n", MetricsReport::CSV_HEADER, self.test_metrics.csv_row())
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub report: TrainReport,
}

fn check_data(model: &ModelConfig, data: &SplitData) -> Result<()> {
    for (name, s) in [("train", &data.train), ("validation", &data.val), ("test", &data.test)] {
        if s.is_empty() {
            return Err(Error::Data(format!("{name} split is empty")));
        }
        if s.chw() != model.input {
            return Err(Error::Data(format!(
                "{name} images are {:?} but the model expects {:?}",
                s.chw(),
                model.input
            )));
        }
        if let Some(&l) = s.labels().iter().find(|&&l| l >= model.num_classes) {
            return Err(Error::Label(format!("{name} label {l} outside [0, {})", model.num_classes)));
        }
    }
    Ok(())
}

/// Trains `model` on `data.train`, early-stops on `data.val`, restores the best
/// weights and scores them on `data.test`.
pub fn train(
    model: &ModelConfig,
    data: &SplitData,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(model, data)?;
    let started = Instant::now();
    let plan = build_model(model)?;
    let net = Network::init(&plan, &RngStream::new(cfg.seed, "init", 0))?;
    let mut trainer = CnnTrainer::new(net, data, cfg.clone());
    let hist = fit(&mut trainer, cfg.max_epochs, cfg.patience, on_epoch)?;
    let total_steps = trainer.steps_taken();
    let mut net = trainer.net;
    let test = evaluate(&mut net, &data.test, cfg.batch_size)?;
    let report = TrainReport {
        train_loss: hist.train_loss,
        val_loss: hist.val_loss,
        val_acc: hist.val_acc,
        best_epoch: hist.best_epoch,
        stopped_epoch: hist.stopped_epoch,
        best_val_loss: hist.best_val_loss,
        steps_per_epoch: steps_per_epoch(data.train.len(), cfg.batch_size),
        total_steps,
        test_metrics: test.metrics,
        test_confusion: test.confusion,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { network: net, report })
}
