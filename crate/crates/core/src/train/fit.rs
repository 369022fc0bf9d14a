use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{label_smooth, one_hot, sample_weights};
use super::optim::{Optimizer, OptimizerSpec};
use super::schedule::ScheduleSpec;
use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, evaluate, predicted_classes};
use crate::model::ModelGraph;
use crate::tensor::{GradTape, Scalar, Tensor};

/// Everything that controls a training run apart from the model and data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Peak learning rate.
    pub learning_rate: f64,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    /// Derived from `learning_rate` and the run length when absent.
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub augment: Option<AugmentPolicy>,
}

impl TrainPlan {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            learning_rate,
            smoothing: 0.0,
            class_weights: None,
            optimizer: OptimizerSpec::default(),
            schedule: None,
            augment: None,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train_plan", "batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("train_plan", "learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::invalid("train_plan", "smoothing must be in [0, 1)"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes {
                return Err(Error::invalid(
                    "train_plan",
                    format!("{} class weights for {classes} classes", w.len()),
                ));
            }
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::invalid("train_plan", "class weights must be positive"));
            }
        }
        self.optimizer.validate()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
            if s.peak_lr != self.learning_rate {
                return Err(Error::invalid(
                    "train_plan",
                    format!("schedule peak_lr {} differs from learning_rate {}", s.peak_lr, self.learning_rate),
                ));
            }
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// The schedule actually used for a training set of `samples`.
    pub fn resolved_schedule(&self, samples: usize) -> ScheduleSpec {
        self.schedule.clone().unwrap_or_else(|| {
            ScheduleSpec::for_run(self.learning_rate, samples.div_ceil(self.batch_size.max(1)), self.epochs)
        })
    }
}

/// Metrics of one split after one epoch. Rates are `None` when undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        write!(
            f,
            "epoch {} {}: loss {:.4} accuracy {} precision {} recall {} lr {:e}",
            self.epoch,
            self.split,
            self.loss,
            show(self.accuracy),
            show(self.precision),
            show(self.recall),
            self.lr
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, in epoch order.
    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a EpochRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn last<'a>(&'a self, split: &'a str) -> Option<&'a EpochRecord> {
        self.split(split).last()
    }

    /// `epoch,split,loss,accuracy,precision,recall,lr`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["epoch", "split", "loss", "accuracy", "precision", "recall", "lr"])?;
        let cell = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.split.clone(),
                r.loss.to_string(),
                cell(r.accuracy),
                cell(r.precision),
                cell(r.recall),
                r.lr.to_string(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::io("history.csv", e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Loss and probabilities of a single optimization step.
#[derive(Clone, Debug)]
pub struct StepOutcome<T: Scalar> {
    pub loss: T,
    pub probs: Tensor<T>,
}

/// Smoothed, class-weighted cross-entropy of `model` on one batch.
pub fn batch_loss<T: Scalar>(
    model: &ModelGraph<T>,
    images: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
    class_weights: Option<&[T]>,
) -> Result<T> {
    let mut tape = GradTape::new();
    let (loss, _) = record_loss(model, &mut tape, images, labels, smoothing, class_weights)?;
    Ok(tape.value(loss).data()[0])
}

fn record_loss<T: Scalar>(
    model: &ModelGraph<T>,
    tape: &mut GradTape<T>,
    images: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
    class_weights: Option<&[T]>,
) -> Result<(crate::tensor::Var, crate::tensor::Var)> {
    let probs = model.forward(tape, images.clone())?;
    let hot: Tensor<T> = one_hot(labels, model.class_count())?;
    let weights = sample_weights(&hot, class_weights)?;
    let targets = label_smooth(&hot, smoothing)?;
    let loss = tape.cross_entropy(probs, targets, weights)?;
    Ok((loss, probs))
}

/// Forward, backward and one optimizer update at learning rate `lr`.
///
/// `step` is only used to label a non-finite loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    optimizer: &mut Optimizer<T>,
    images: &Tensor<T>,
    labels: &[usize],
    smoothing: f64,
    class_weights: Option<&[T]>,
    lr: f64,
    step: usize,
) -> Result<StepOutcome<T>> {
    let mut tape = GradTape::new();
    let (loss, probs) = match record_loss(model, &mut tape, images, labels, smoothing, class_weights) {
        Err(Error::NonFinite { op }) => {
            let bad: Vec<&str> = model
                .parameters()
                .iter()
                .filter(|p| !p.value.all_finite())
                .map(|p| p.name.as_str())
                .collect();
            return Err(Error::NonFiniteLoss {
                step,
                diagnostics: format!("non-finite values reached {op}; non-finite parameters: [{}]", bad.join(", ")),
            });
        }
        other => other?,
    };
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            diagnostics: "loss evaluated to a non-finite value".into(),
        });
    }
    let grads = tape.backward(loss, model.parameter_shapes())?;
    let bad: Vec<&str> = grads
        .grads
        .iter()
        .filter(|(_, g)| !g.all_finite())
        .map(|(n, _)| n.as_str())
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFiniteLoss {
            step,
            diagnostics: format!("non-finite gradients in {}", bad.join(", ")),
        });
    }
    optimizer.apply(lr, model.parameters_mut(), &grads)?;
    Ok(StepOutcome {
        loss: value,
        probs: tape.value(probs).clone(),
    })
}

/// Trains `model` in place on `train`, evaluating on `validation` after every
/// epoch. Each finished record is passed to `log` as it is produced.
pub fn fit<T: Scalar>(
    model: &mut ModelGraph<T>,
    train: &Dataset,
    validation: Option<&Dataset>,
    plan: &TrainPlan,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    plan.validate(model.class_count())?;
    if train.is_empty() {
        return Err(Error::invalid("fit", "training set is empty"));
    }
    if train.classes() != model.classes() {
        return Err(Error::invalid(
            "fit",
            format!("dataset classes {:?} differ from model classes {:?}", train.classes(), model.classes()),
        ));
    }
    let schedule = plan.resolved_schedule(train.len());
    schedule.validate()?;
    let weights: Option<Vec<T>> = plan
        .class_weights
        .as_ref()
        .map(|w| w.iter().map(|&x| T::of(x)).collect());
    let mut optimizer = Optimizer::<T>::new(plan.optimizer.clone())?;
    let mut history = History::default();
    let mut step = 0usize;

    for epoch in 0..plan.epochs {
        let mut loss_sum = 0.0;
        let mut predicted = Vec::with_capacity(train.len());
        let mut actual = Vec::with_capacity(train.len());
        let mut lr = schedule.lr_at(step);
        for batch in train.batches(plan.batch_size, plan.seed, epoch, plan.augment.as_ref())? {
            lr = schedule.lr_at(step);
            let out = train_step(
                model,
                &mut optimizer,
                &batch.images.cast(),
                &batch.labels,
                plan.smoothing,
                weights.as_deref(),
                lr,
                step,
            )?;
            loss_sum += out.loss.as_f64() * batch.labels.len() as f64;
            predicted.extend(predicted_classes(&out.probs));
            actual.extend_from_slice(&batch.labels);
            step += 1;
        }
        let cm = confusion_matrix(&predicted, &actual, train.classes())?;
        let (precision, recall) = cm.macro_metrics();
        let record = EpochRecord {
            epoch: epoch + 1,
            split: "train".into(),
            loss: loss_sum / train.len() as f64,
            accuracy: cm.accuracy(),
            precision,
            recall,
            lr,
        };
        log(&record);
        history.records.push(record);

        if let Some(val) = validation {
            let (report, _) = evaluate(model, val, plan.batch_size)?;
            let record = EpochRecord {
                epoch: epoch + 1,
                split: "validation".into(),
                loss: report.loss.unwrap_or(f64::NAN),
                accuracy: report.accuracy,
                precision: report.macro_precision,
                recall: report.macro_recall,
                lr,
            };
            log(&record);
            history.records.push(record);
        }
    }
    Ok(history)
}
