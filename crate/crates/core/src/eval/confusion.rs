use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::train::loss::argmax;

/// K×K counts; rows are actual classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("confusion_matrix", "empty class list"));
        }
        let k = classes.len();
        Ok(Self {
            classes,
            counts: vec![0; k * k],
        })
    }

    pub fn from_rows(classes: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        let mut cm = Self::new(classes)?;
        let k = cm.k();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion_matrix", format!("need {k}x{k} counts")));
        }
        cm.counts = rows.concat();
        Ok(cm)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k() + predicted]
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let k = self.k();
        if actual >= k || predicted >= k {
            return Err(Error::invalid(
                "confusion_matrix",
                format!("class index ({actual}, {predicted}) out of range for K={k}"),
            ));
        }
        self.counts[actual * k + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        (0..self.k()).map(|p| self.get(actual, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k()).map(|a| self.get(a, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|c| self.get(c, c)).sum()
    }

    /// Fraction of samples on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }

    /// One-vs-rest `TP / (TP + FP)`; `None` when nothing was predicted as `c`.
    pub fn precision(&self, c: usize) -> Option<f64> {
        ratio(self.get(c, c), self.col_sum(c))
    }

    /// One-vs-rest `TP / (TP + FN)`; `None` when class `c` never occurs.
    pub fn recall(&self, c: usize) -> Option<f64> {
        ratio(self.get(c, c), self.row_sum(c))
    }

    fn macro_of(&self, f: impl Fn(usize) -> Option<f64>) -> Option<f64> {
        let vals: Option<Vec<f64>> = (0..self.k()).map(f).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Unweighted means of the per-class precision and recall; undefined if
    /// any per-class value is.
    pub fn macro_metrics(&self) -> (Option<f64>, Option<f64>) {
        (
            self.macro_of(|c| self.precision(c)),
            self.macro_of(|c| self.recall(c)),
        )
    }

    /// Header of class names, then one row per actual class led by its name.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["actual".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for a in 0..self.k() {
            let mut row = vec![self.classes[a].clone()];
            row.extend((0..self.k()).map(|p| self.get(a, p).to_string()));
            w.write_record(&row)?;
        }
        w.into_inner()
            .map_err(|e| Error::io("confusion.csv", e.into_error()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let classes: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.get(0) != classes.get(i).map(String::as_str) {
                return Err(Error::invalid("confusion_matrix", "row labels do not match header"));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid("confusion_matrix", e.to_string()))?;
            rows.push(row);
        }
        Self::from_rows(classes, &rows)
    }
}

/// Counts `(actual, predicted)` pairs.
pub fn confusion_matrix(predicted: &[usize], actual: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::shape("confusion_matrix", &[predicted.len()], &[actual.len()]));
    }
    let mut cm = ConfusionMatrix::new(classes.to_vec())?;
    for (&p, &a) in predicted.iter().zip(actual) {
        cm.record(a, p)?;
    }
    Ok(cm)
}

/// Argmax class of each probability row, lowest index on ties.
pub fn predicted_classes<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape()[1];
    probs.data().chunks(k).map(argmax).collect()
}
