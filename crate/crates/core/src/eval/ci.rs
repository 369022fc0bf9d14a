use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Mean with a two-sided confidence interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}

/// Two-sided standard-normal quantile for `confidence` (1.959964 at 0.95).
pub fn z_score(confidence: f64) -> f64 {
    let normal = Normal::standard();
    normal.inverse_cdf(0.5 + confidence / 2.0)
}

/// Normal-approximation interval `mean ± z·s/√n` of probabilities in [0,1],
/// with `s` the sample standard deviation; bounds are clamped to [0,1].
pub fn class_probability_ci(probs: &[f64], confidence: f64) -> Result<Interval> {
    let n = probs.len();
    if n < 2 {
        return Err(Error::invalid(
            "class_probability_ci",
            format!("need at least 2 samples, got {n}"),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("class_probability_ci", "confidence must be in (0, 1)"));
    }
    let mean = probs.iter().sum::<f64>() / n as f64;
    let var = probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = z_score(confidence) * var.sqrt() / (n as f64).sqrt();
    Ok(Interval {
        mean,
        lower: (mean - half).clamp(0.0, 1.0),
        upper: (mean + half).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_at_95() {
        assert!((z_score(0.95) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn constant_input_has_zero_width() {
        let ci = class_probability_ci(&[0.7; 50], 0.95).unwrap();
        assert!((ci.mean - 0.7).abs() < 1e-15);
        assert!(ci.half_width() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(class_probability_ci(&[0.5], 0.95).is_err());
        assert!(class_probability_ci(&[], 0.95).is_err());
    }

    #[test]
    fn bounds_are_clamped() {
        let ci = class_probability_ci(&[1.0, 1.0, 1.0, 0.0], 0.95).unwrap();
        assert!(ci.lower >= 0.0 && ci.upper == 1.0);
        assert!(ci.lower <= ci.mean && ci.mean <= ci.upper);
    }
}
