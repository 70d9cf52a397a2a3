use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvaluatorDataset, EvaluatorModel, FreqConfig};
use crate::cond::select_features;
use crate::error::Result;

/// Prediction counts at a 0.5 threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    pub false_pos: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], labels: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.true_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
                (true, false) => c.false_pos += 1,
            }
        }
        c
    }

    fn pct(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    }

    pub fn recall_pos(&self) -> f64 {
        Self::pct(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn recall_neg(&self) -> f64 {
        Self::pct(self.true_neg, self.true_neg + self.false_pos)
    }

    pub fn accuracy(&self) -> f64 {
        Self::pct(self.true_pos + self.true_neg, self.true_pos + self.true_neg + self.false_pos + self.false_neg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub freq: FreqConfig,
    pub recall_pos: f64,
    pub recall_neg: f64,
    pub total_acc: f64,
    pub confusion: Confusion,
}

/// Scores every model on the same labeled set.
pub fn ablation_report(models: &[&EvaluatorModel], test: &EvaluatorDataset) -> Result<Vec<AblationRow>> {
    let labels: Vec<bool> = test.examples.iter().map(|e| e.2).collect();
    models
        .iter()
        .map(|m| {
            let mut predicted = Vec::with_capacity(test.len());
            for chunk in test.examples.chunks(2048) {
                let grasps: Vec<_> = chunk.iter().map(|e| e.1.clone()).collect();
                let cond = select_features(&test.features, chunk.iter().map(|e| e.0));
                predicted.extend(m.score(&grasps, &cond)?.into_iter().map(|p| p >= 0.5));
            }
            let c = Confusion::from_predictions(&predicted, &labels);
            Ok(AblationRow {
                freq: m.config.freq,
                recall_pos: c.recall_pos(),
                recall_neg: c.recall_neg(),
                total_acc: c.accuracy(),
                confusion: c,
            })
        })
        .collect()
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from("| (f1, f2, f3) | Recall Pos. | Recall Neg. | Total Acc. |\n|---|---|---|---|\n");
    for r in rows {
        let label = if r.freq == FreqConfig::new(0, 0, 0) { "No Freq. Enc.".to_string() } else { r.freq.to_string() };
        let _ = writeln!(s, "| {label} | {:.2} | {:.2} | {:.2} |", r.recall_pos, r.recall_neg, r.total_acc);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_always_negative() {
        let labels = [true, false, true, false];
        let c = Confusion::from_predictions(&labels, &labels);
        assert_eq!((c.recall_pos(), c.recall_neg(), c.accuracy()), (100.0, 100.0, 100.0));
        let c = Confusion::from_predictions(&[false; 4], &labels);
        assert_eq!((c.recall_pos(), c.recall_neg(), c.accuracy()), (0.0, 100.0, 50.0));
    }

    #[test]
    fn markdown_has_table_columns() {
        let row = AblationRow {
            freq: FreqConfig::new(10, 4, 0),
            recall_pos: 80.0,
            recall_neg: 70.0,
            total_acc: 75.0,
            confusion: Confusion::default(),
        };
        let md = ablation_markdown(&[row]);
        assert!(md.contains("Recall Pos.") && md.contains("Total Acc.") && md.contains("(10,4,0)"));
    }
}
