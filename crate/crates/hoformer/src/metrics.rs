//! Binary classification metrics: accuracy, F1 on the positive class, and
//! Matthews correlation coefficient.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricsError {
    /// Accuracy/F1 are undefined on zero predictions.
    EmptyCounts,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyCounts => write!(f, "no scored predictions"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Confusion-matrix counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Score one prediction (1 = positive).
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Matthews correlation coefficient,
/// `((TP*TN) - (FP*FN)) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN))`.
/// Any zero factor in the denominator yields 0 by convention.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Accuracy and F1 on the positive class; F1 is 0 when its denominator is.
pub fn accuracy_f1(c: &ConfusionCounts) -> Result<(f64, f64), MetricsError> {
    let total = c.total();
    if total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let acc = (c.tp + c.tn) as f64 / total as f64;
    let f1_denom = 2 * c.tp + c.fp + c.fn_;
    let f1 = if f1_denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / f1_denom as f64
    };
    Ok((acc, f1))
}

/// Convenience bundle reported by evaluation loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub mcc: f64,
    pub scored: u64,
}

impl Scores {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self, MetricsError> {
        let (accuracy, f1) = accuracy_f1(c)?;
        Ok(Self { accuracy, f1, mcc: mcc(c), scored: c.total() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_predictors() {
        let perfect = ConfusionCounts::new(5, 5, 0, 0);
        assert_eq!(mcc(&perfect), 1.0);
        assert_eq!(accuracy_f1(&perfect).unwrap(), (1.0, 1.0));

        let inverted = ConfusionCounts::new(0, 0, 5, 5);
        assert_eq!(mcc(&inverted), -1.0);
    }

    #[test]
    fn worked_confusion_example() {
        let c = ConfusionCounts::new(3, 4, 1, 2);
        let expected_mcc = 10.0 / 600f64.sqrt();
        assert!((mcc(&c) - expected_mcc).abs() < 1e-12);
        let (acc, f1) = accuracy_f1(&c).unwrap();
        assert!((acc - 0.7).abs() < 1e-12);
        assert!((f1 - 6.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn all_negative_predictor_on_balanced_data() {
        let c = ConfusionCounts::new(0, 5, 0, 5);
        let (acc, f1) = accuracy_f1(&c).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(f1, 0.0);
        assert_eq!(mcc(&c), 0.0);
    }

    #[test]
    fn mcc_zero_when_products_balance() {
        // TP*TN == FP*FN => numerator zero
        let c = ConfusionCounts::new(2, 6, 3, 4);
        assert_eq!(mcc(&c), 0.0);
    }

    #[test]
    fn mcc_stays_in_range() {
        for tp in 0..5u64 {
            for tn in 0..5u64 {
                for fp in 0..5u64 {
                    for fn_ in 0..5u64 {
                        let v = mcc(&ConfusionCounts::new(tp, tn, fp, fn_));
                        assert!((-1.0..=1.0).contains(&v), "mcc {v} out of range");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_counts_are_an_error() {
        assert!(accuracy_f1(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn record_routes_to_the_right_cell() {
        let mut c = ConfusionCounts::default();
        c.record(true, true);
        c.record(false, true);
        c.record(true, false);
        c.record(false, false);
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 1));
        assert_eq!(c.total(), 4);
    }
}
