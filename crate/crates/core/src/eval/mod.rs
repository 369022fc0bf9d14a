//! Confusion matrices, classification metrics and report files.

mod ci;
mod confusion;

use std::fmt::Write as _;
use std::path::Path;

pub use ci::{class_probability_ci, z_score, Interval};
pub use confusion::{confusion_matrix, predicted_classes, ConfusionMatrix};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::{Scalar, Tensor};
use crate::train::loss::{one_hot, sample_losses};

pub const CONFIDENCE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Mean predicted probability of this class over its own samples, with a
    /// 95% interval. `None` with fewer than two samples.
    pub probability: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    /// Mean unweighted, unsmoothed cross-entropy, when probabilities were available.
    pub loss: Option<f64>,
    pub classes: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Metrics derivable from the matrix alone.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let (macro_precision, macro_recall) = cm.macro_metrics();
        Self {
            samples: cm.total(),
            accuracy: cm.accuracy(),
            macro_precision,
            macro_recall,
            loss: None,
            classes: (0..cm.k())
                .map(|c| ClassMetrics {
                    name: cm.classes()[c].clone(),
                    support: cm.row_sum(c),
                    precision: cm.precision(c),
                    recall: cm.recall(c),
                    probability: None,
                })
                .collect(),
        }
    }
}

/// Report plus confusion matrix for a probability matrix and true labels.
pub fn score<T: Scalar>(probs: &Tensor<T>, labels: &[usize], classes: &[String]) -> Result<(MetricsReport, ConfusionMatrix)> {
    let k = classes.len();
    if probs.rank() != 2 || probs.shape() != [labels.len(), k] {
        return Err(Error::shape("evaluate", probs.shape(), &[labels.len(), k]));
    }
    let cm = confusion_matrix(&predicted_classes(probs), labels, classes)?;
    let mut report = MetricsReport::from_confusion(&cm);
    let targets: Tensor<T> = one_hot(labels, k)?;
    let losses = sample_losses(probs, &targets)?;
    if !losses.is_empty() {
        report.loss = Some(losses.iter().map(|l| l.as_f64()).sum::<f64>() / losses.len() as f64);
    }
    for (c, entry) in report.classes.iter_mut().enumerate() {
        let own: Vec<f64> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == c)
            .map(|(i, _)| probs.data()[i * k + c].as_f64())
            .collect();
        entry.probability = class_probability_ci(&own, CONFIDENCE).ok();
    }
    Ok((report, cm))
}

/// Predicts every sample of `data` without augmentation and scores the result.
pub fn evaluate<T: Scalar>(
    model: &ModelGraph<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<(MetricsReport, ConfusionMatrix)> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "split has no samples"));
    }
    if data.classes() != model.classes() {
        return Err(Error::invalid(
            "evaluate",
            format!(
                "dataset classes {:?} differ from model classes {:?}",
                data.classes(),
                model.classes()
            ),
        ));
    }
    let k = model.class_count();
    let mut probs = Vec::with_capacity(data.len() * k);
    for batch in data.sequential_batches(batch_size) {
        probs.extend_from_slice(model.predict(&batch.images.cast())?.data());
    }
    let probs = Tensor::new(&[data.len(), k], probs)?;
    score(&probs, data.labels(), model.classes())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

/// `metric,value,class` rows; aggregates leave `class` empty.
pub fn metrics_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["metric", "value", "class"])?;
    let aggregates = [
        ("samples", Some(report.samples as f64)),
        ("accuracy", report.accuracy),
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("loss", report.loss),
    ];
    for (name, v) in aggregates {
        w.write_record([name, &cell(v), ""])?;
    }
    for c in &report.classes {
        let p = c.probability;
        let rows = [
            ("support", Some(c.support as f64)),
            ("precision", c.precision),
            ("recall", c.recall),
            ("probability_mean", p.map(|i| i.mean)),
            ("probability_lower", p.map(|i| i.lower)),
            ("probability_upper", p.map(|i| i.upper)),
        ];
        for (name, v) in rows {
            w.write_record([name, &cell(v), &c.name])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::io("metrics.csv", e.into_error()))
}

/// Aligned plain-text rendering of the report and matrix.
pub fn format_report(report: &MetricsReport, cm: &ConfusionMatrix) -> String {
    let width = cm
        .classes()
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(9);
    let mut s = String::new();
    let _ = writeln!(s, "samples          {}", report.samples);
    let _ = writeln!(s, "accuracy         {}", fixed(report.accuracy));
    let _ = writeln!(s, "macro precision  {}", fixed(report.macro_precision));
    let _ = writeln!(s, "macro recall     {}", fixed(report.macro_recall));
    if report.loss.is_some() {
        let _ = writeln!(s, "loss             {}", fixed(report.loss));
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<width$}  {:>7}  {:>9}  {:>9}  {:>9}  {:>19}",
        "class", "support", "precision", "recall", "mean prob", "95% interval"
    );
    for c in &report.classes {
        let (mean, interval) = match c.probability {
            Some(i) => (format!("{:.4}", i.mean), format!("({:.4}, {:.4})", i.lower, i.upper)),
            None => ("undefined".into(), "undefined".into()),
        };
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>9}  {:>9}  {:>9}  {:>19}",
            c.name,
            c.support,
            fixed(c.precision),
            fixed(c.recall),
            mean,
            interval
        );
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<width$}", "actual");
    for name in cm.classes() {
        let _ = write!(s, "  {name:>width$}");
    }
    let _ = writeln!(s);
    for (a, name) in cm.classes().iter().enumerate() {
        let _ = write!(s, "{name:<width$}");
        for p in 0..cm.k() {
            let _ = write!(s, "  {:>width$}", cm.get(a, p));
        }
        let _ = writeln!(s);
    }
    s
}

/// Writes `confusion.csv` and `metrics.csv` into `out_dir` and returns the
/// text table.
pub fn render_report(report: &MetricsReport, cm: &ConfusionMatrix, out_dir: &Path) -> Result<String> {
    if cm.classes().is_empty() {
        return Err(Error::invalid("render_report", "empty class list"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, bytes) in [("confusion.csv", cm.to_csv()?), ("metrics.csv", metrics_csv(report)?)] {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(format_report(report, cm))
}

/// Reads a matrix written by [`render_report`].
pub fn read_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ConfusionMatrix::from_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        crate::model::default_classes()
    }

    #[test]
    fn score_always_class_zero() {
        let labels = [0, 1, 2, 2, 0, 1, 0];
        let probs = Tensor::new(&[7, 3], [0.5f64, 0.3, 0.2].repeat(7)).unwrap();
        let (report, cm) = score(&probs, &labels, &names()).unwrap();
        assert_eq!(report.accuracy, Some(3.0 / 7.0));
        assert_eq!(cm.col_sum(0), 7);
        assert_eq!(report.classes[1].precision, None);
        assert_eq!(report.macro_precision, None);
        let p = report.classes[0].probability.unwrap();
        assert!((p.mean - 0.5).abs() < 1e-15);
        assert!((report.loss.unwrap() - (3.0 * 0.5f64.ln() + 2.0 * 0.3f64.ln() + 2.0 * 0.2f64.ln()) / -7.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_written_literally() {
        let cm = ConfusionMatrix::from_rows(names(), &[vec![1, 0, 0], vec![1, 0, 0], vec![0, 0, 2]]).unwrap();
        let csv = String::from_utf8(metrics_csv(&MetricsReport::from_confusion(&cm)).unwrap()).unwrap();
        assert!(csv.starts_with("metric,value,class\nsamples,4,\naccuracy,0.75,\nmacro_precision,undefined,\n"));
        assert!(csv.contains("precision,undefined,Normal\n"));
        assert!(csv.contains("recall,0,Normal\n"));
    }

    #[test]
    fn render_to_unwritable_path_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let cm = ConfusionMatrix::new(names()).unwrap();
        let err = render_report(&MetricsReport::from_confusion(&cm), &cm, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
