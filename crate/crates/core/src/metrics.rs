//! Binary detection metrics with `manipulated` as the positive class.

use serde::{Deserialize, Serialize};

use crate::kb::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    /// Unparseable verdicts. Already folded into the four cells above as a
    /// wrong prediction.
    pub parse_failures: usize,
}

impl Confusion {
    /// Records one prediction. A missing prediction counts as the class
    /// opposite to `gold`.
    pub fn record(&mut self, predicted: Option<Label>, gold: Label) {
        let predicted = match predicted {
            Some(p) => p,
            None => {
                self.parse_failures += 1;
                gold.flip()
            }
        };
        match (predicted, gold) {
            (Label::Manipulated, Label::Manipulated) => self.true_positive += 1,
            (Label::Manipulated, Label::Authentic) => self.false_positive += 1,
            (Label::Authentic, Label::Authentic) => self.true_negative += 1,
            (Label::Authentic, Label::Manipulated) => self.false_negative += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.true_negative += other.true_negative;
        self.false_negative += other.false_negative;
        self.parse_failures += other.parse_failures;
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn correct(&self) -> usize {
        self.true_positive + self.true_negative
    }

    /// Accuracy in percent; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => 100.0 * self.correct() as f64 / n as f64,
        }
    }

    /// Binary F1 in percent; 0 when there are no positives at all.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positive + self.false_positive + self.false_negative;
        match denom {
            0 => 0.0,
            d => 100.0 * (2 * self.true_positive) as f64 / d as f64,
        }
    }

    pub fn summary(&self) -> Scores {
        Scores {
            accuracy: self.accuracy(),
            f1: self.f1(),
            count: self.total(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub count: usize,
}
