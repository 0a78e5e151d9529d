//! Training loop, evaluation, prediction and checkpoints.

mod checkpoint;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::data::{decode_image, normalize_to_tensor, resize, AugmentPolicy, Loader, SplitRatios};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, ClassificationReport, ConfusionMatrix};
use crate::model::{Architecture, Crop, ForwardOptions, Model, ModelSpec, ParamRole, ParamStore};
use crate::rng::Prng;
use crate::tensor::{adam_step, add_l2_gradient, softmax, softmax_cross_entropy, AdamState, Tensor};

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Full passes over the training subset. Default 50.
    pub epochs: usize,
    /// Default 64.
    pub batch_size: usize,
    /// Adam step size. Default 0.001.
    pub learning_rate: f32,
    pub seed: u64,
    /// L2 weight penalty; `None` keeps the architecture's own setting.
    pub l2_lambda: Option<f32>,
    /// Default 0.8 / 0.0 / 0.2.
    pub split_ratios: SplitRatios,
    /// (height, width); `None` uses the architecture default.
    pub input_size: Option<[usize; 2]>,
    pub architecture: Architecture,
    /// Selects the experiment-3 layer counts.
    pub crop: Crop,
    /// On-the-fly augmentation of training batches.
    pub augment: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            l2_lambda: None,
            split_ratios: SplitRatios {
                train: 0.8,
                val: 0.0,
                test: 0.2,
            },
            input_size: None,
            architecture: Architecture::Exp2BnCnn,
            crop: Crop::Corn,
            augment: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batchSize must be >= 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learningRate must be > 0, got {}", self.learning_rate));
        }
        if let Some(l) = self.l2_lambda {
            if !(l.is_finite() && l >= 0.0) {
                problems.push(format!("l2Lambda must be >= 0, got {l}"));
            }
        }
        if let Some([h, w]) = self.input_size {
            if h != w {
                problems.push(format!("inputSize must be square, got {h}x{w}"));
            }
            if h == 0 {
                problems.push("inputSize must be positive".to_string());
            }
        }
        for source in [self.split_ratios.validate().err(), self.augment.validate().err()] {
            match source {
                Some(Error::Config(v)) => problems.extend(v),
                Some(e) => problems.push(e.to_string()),
                None => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn resolved_input_size(&self) -> usize {
        self.input_size
            .map(|[h, _]| h)
            .unwrap_or_else(|| self.architecture.default_input_size())
    }

    /// Model for `num_classes` with the configured architecture and L2 override.
    pub fn build_spec(&self, num_classes: usize) -> Result<ModelSpec> {
        let mut spec = self
            .architecture
            .build_for_crop(num_classes, self.resolved_input_size(), self.crop)?;
        if let Some(l) = self.l2_lambda {
            spec.l2_lambda = l;
        }
        Ok(spec)
    }
}

/// Metrics of one epoch. Validation fields are absent without a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,loss,accuracy,val_loss,val_accuracy";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.loss,
            r.accuracy,
            opt_cell(r.val_loss),
            opt_cell(r.val_accuracy)
        ));
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(history_to_csv(history).as_bytes())?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != HISTORY_HEADER {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("expected header '{HISTORY_HEADER}'"),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<EpochRecord>() {
        out.push(row?);
    }
    Ok(out)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean cross-entropy plus L2 penalty.
    pub loss: f64,
    pub data_loss: f64,
    pub correct: usize,
    pub samples: usize,
}

/// Owns the parameters and optimizer state of one run.
pub struct Trainer<'m> {
    model: &'m Model,
    params: ParamStore,
    adam: IndexMap<String, AdamState>,
    config: TrainConfig,
    l2_lambda: f32,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Model, params: ParamStore, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.check_params(&params)?;
        let adam = params
            .iter()
            .filter(|(_, p)| p.role.trainable())
            .map(|(name, p)| (name.to_string(), AdamState::new(p.value.len(), config.learning_rate)))
            .collect();
        let l2_lambda = config.l2_lambda.unwrap_or(model.spec().l2_lambda);
        Ok(Self {
            model,
            params,
            adam,
            config,
            l2_lambda,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One optimizer step on a batch: forward, softmax cross-entropy plus
    /// L2, backward, Adam, then running-statistic updates.
    pub fn train_step(&mut self, batch: &Tensor, labels: &[usize], rng: &mut Prng) -> Result<StepStats> {
        let (logits, cache) = self.model.forward(&self.params, batch, ForwardOptions::TRAIN, rng)?;
        let sce = softmax_cross_entropy(&logits, labels)?;
        let mut grads = self.model.backward(&self.params, &cache, &sce.grad)?;
        let mut penalty = 0.0;
        for (name, p) in self.params.iter() {
            if p.role == ParamRole::Weight && self.l2_lambda > 0.0 {
                if let Some(g) = grads.get_mut(name) {
                    penalty += add_l2_gradient(p.value.data(), g, self.l2_lambda);
                }
            }
        }
        let loss = sce.loss + penalty;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
                index: 0,
            });
        }
        for (name, g) in grads.iter() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of {name}"),
                    index: i,
                });
            }
        }
        for (name, p) in self.params.iter_mut() {
            if let (Some(state), Some(g)) = (self.adam.get_mut(name), grads.get(name)) {
                adam_step(p.value.data_mut(), g, state)?;
            }
        }
        self.model.update_running_stats(&mut self.params, &cache)?;
        let k = logits.shape().sample_len();
        let correct = logits
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        Ok(StepStats {
            loss,
            data_loss: sce.loss,
            correct,
            samples: labels.len(),
        })
    }

    /// Full shuffled pass over `train`, then an infer-mode pass over `val`.
    pub fn run_epoch(&mut self, train: &Loader, val: Option<&Loader>) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let started = Instant::now();
        let epoch_seed = Prng::derive(self.config.seed, epoch as u64).next_u64();
        let mut dropout_rng = Prng::derive(epoch_seed, 0xd7);
        let batches = train.batches(self.config.batch_size, true, epoch_seed)?;
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, item) in batches.enumerate() {
            let (x, labels) = item?;
            let stats = self.train_step(&x, &labels, &mut dropout_rng).map_err(|e| match e {
                Error::NonFinite { context, index } => Error::NonFinite {
                    context: format!("{context} (epoch {epoch}, batch {})", b + 1),
                    index,
                },
                other => other,
            })?;
            loss_sum += stats.loss * stats.samples as f64;
            correct += stats.correct;
            seen += stats.samples;
        }
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let ev = evaluate(self.model, &self.params, v, self.config.batch_size)?;
                (Some(ev.loss), Some(ev.report.accuracy))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {} val_acc {} ({:.1}s)",
            record.loss,
            record.accuracy,
            opt_cell(val_loss),
            opt_cell(val_accuracy),
            started.elapsed().as_secs_f64()
        );
        self.epoch = epoch;
        self.history.push(record.clone());
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
}

/// Train from a seeded initialization for `config.epochs` epochs.
pub fn train(model: &Model, train_set: &Loader, val_set: Option<&Loader>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    check_loader(model, train_set)?;
    if let Some(v) = val_set {
        check_loader(model, v)?;
    }
    let params = model.init_params(config.seed);
    let mut trainer = Trainer::new(model, params, config.clone())?;
    for _ in 0..config.epochs {
        trainer.run_epoch(train_set, val_set)?;
    }
    let history = trainer.history.clone();
    Ok(TrainOutcome {
        params: trainer.into_params(),
        history,
    })
}

fn check_loader(model: &Model, loader: &Loader) -> Result<()> {
    let k = loader.dataset().num_classes();
    if k != model.num_classes() {
        return Err(Error::config(format!(
            "dataset has {k} classes but the model predicts {}",
            model.num_classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: ClassificationReport,
    pub confusion: ConfusionMatrix,
    /// Mean cross-entropy over all samples (no L2 term).
    pub loss: f64,
    /// Row-major (N, K) softmax probabilities in dataset order.
    pub probabilities: Vec<f32>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

/// Infer-mode pass over every sample in `data`. Parameters are checked to be
/// unchanged afterwards.
pub fn evaluate(model: &Model, params: &ParamStore, data: &Loader, batch_size: usize) -> Result<Evaluation> {
    model.check_params(params)?;
    check_loader(model, data)?;
    let before = params.checksum();
    let k = model.num_classes();
    let mut confusion = ConfusionMatrix::new(k);
    let mut probabilities = Vec::with_capacity(data.len() * k);
    let mut labels_all = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for item in data.batches(batch_size, false, 0)? {
        let (x, labels) = item?;
        let logits = model.infer(params, &x)?;
        let sce = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += sce.loss * labels.len() as f64;
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            let p = argmax(row);
            confusion.record(label, p)?;
            predictions.push(p);
        }
        probabilities.extend_from_slice(sce.probs.data());
        labels_all.extend_from_slice(&labels);
    }
    if params.checksum() != before {
        return Err(Error::param("parameters changed during evaluation"));
    }
    Ok(Evaluation {
        report: classification_report(&confusion)?,
        confusion,
        loss: loss_sum / data.len() as f64,
        probabilities,
        labels: labels_all,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub probabilities: Vec<f32>,
}

/// Classify one image file, resized to the model input.
pub fn predict(model: &Model, params: &ParamStore, class_names: &[String], image_path: &Path) -> Result<Prediction> {
    predict_image(model, params, class_names, &decode_image(image_path)?)
}

/// Classify decoded pixels, resized to the model input.
pub fn predict_image(model: &Model, params: &ParamStore, class_names: &[String], img: &RgbImage) -> Result<Prediction> {
    if class_names.len() != model.num_classes() {
        return Err(Error::config(format!(
            "{} class names for a model with {} outputs",
            class_names.len(),
            model.num_classes()
        )));
    }
    let input = model.input_shape();
    let img = resize(img, input.w as u32, input.h as u32)?;
    let logits = model.infer(params, &normalize_to_tensor(&[&img])?)?;
    let probabilities = softmax(&logits).into_data();
    let class_index = argmax(&logits.data()[..model.num_classes()]);
    Ok(Prediction {
        class_index,
        class_name: class_names[class_index].clone(),
        probabilities,
    })
}
