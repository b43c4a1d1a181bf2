//! Confusion-matrix construction and the four evaluation scores, with Skip
//! as the positive class. The AUC here is the balanced form over hard
//! predictions, not a ranking AUC.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl EvalScores {
    /// CSV row in the report format `project,split,precision,recall,f1,auc`.
    pub fn csv_row(&self, project: &str, split: &str) -> String {
        format!(
            "{project},{split},{},{},{},{}",
            self.precision, self.recall, self.f1, self.auc
        )
    }

    /// Integer-percent rendering matching the tables people read.
    pub fn as_percentages(&self) -> String {
        format!(
            "precision {:.0}% recall {:.0}% f1 {:.0}% auc {:.0}%",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0,
            self.auc * 100.0
        )
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions vs {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Metrics("empty input".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Skip, Label::Skip) => cm.tp += 1,
            (Label::Skip, Label::Build) => cm.fp += 1,
            (Label::Build, Label::Skip) => cm.fn_ += 1,
            (Label::Build, Label::Build) => cm.tn += 1,
        }
    }
    Ok(cm)
}

pub fn scores(cm: &ConfusionMatrix) -> Result<EvalScores> {
    let pos = cm.tp + cm.fn_;
    let neg = cm.fp + cm.tn;
    if pos == 0 || neg == 0 {
        return Err(Error::Metrics(
            "single-class ground truth; scores undefined".into(),
        ));
    }
    let recall = cm.tp as f64 / pos as f64;
    let precision = if cm.tp + cm.fp == 0 {
        0.0
    } else {
        cm.tp as f64 / (cm.tp + cm.fp) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let auc = (1.0 + recall - cm.fp as f64 / neg as f64) / 2.0;
    Ok(EvalScores {
        precision,
        recall,
        f1,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn confusion_simple() {
        let cm = confusion(&[Label::Skip, Label::Build], &[Label::Skip, Label::Build]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 });
    }

    #[test]
    fn confusion_fixture() {
        // hand-enumerated: 4 skip predictions of which 1 wrong, 1 missed skip
        let predicted = [
            Label::Skip, Label::Skip, Label::Skip, Label::Skip,
            Label::Build, Label::Build, Label::Build, Label::Build, Label::Build, Label::Build,
        ];
        let actual = [
            Label::Skip, Label::Skip, Label::Skip, Label::Build,
            Label::Skip, Label::Build, Label::Build, Label::Build, Label::Build, Label::Build,
        ];
        let cm = confusion(&predicted, &actual).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 3, fp: 1, fn_: 1, tn: 5 });
    }

    #[test]
    fn confusion_all_build() {
        let cm = confusion(&[Label::Build; 6], &[Label::Build; 6]).unwrap();
        assert_eq!(cm.tn, 6);
        assert_eq!(cm.total(), 6);
    }

    #[test]
    fn confusion_rejects_mismatch_and_empty() {
        assert!(confusion(&[Label::Skip], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn scores_fixture() {
        let s = scores(&ConfusionMatrix { tp: 3, fp: 1, fn_: 1, tn: 5 }).unwrap();
        assert_abs_diff_eq!(s.precision, 0.75);
        assert_abs_diff_eq!(s.recall, 0.75);
        assert_abs_diff_eq!(s.f1, 0.75);
        assert_abs_diff_eq!(s.auc, (1.0 + 0.75 - 1.0 / 6.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_matrix() {
        let s = scores(&ConfusionMatrix { tp: 4, fp: 0, fn_: 0, tn: 6 }).unwrap();
        assert_eq!((s.precision, s.recall, s.f1, s.auc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_division_convention() {
        let s = scores(&ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_class_rejected() {
        assert!(scores(&ConfusionMatrix { tp: 2, fp: 0, fn_: 1, tn: 0 }).is_err());
        assert!(scores(&ConfusionMatrix { tp: 0, fp: 1, fn_: 0, tn: 5 }).is_err());
    }

    #[test]
    fn complement_auc_sums_to_one() {
        let cm = ConfusionMatrix { tp: 3, fp: 2, fn_: 4, tn: 11 };
        let flipped = ConfusionMatrix { tp: cm.fn_, fp: cm.tn, fn_: cm.tp, tn: cm.fp };
        let a = scores(&cm).unwrap().auc;
        let b = scores(&flipped).unwrap().auc;
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }
}
