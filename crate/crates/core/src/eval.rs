//! Confusion matrices, precision/recall/F1 and result tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentLabel;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    Empty,
    #[error("line {line}: {reason}")]
    Predictions { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are gold classes, columns predicted classes, in [`SentLabel`] index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold][pred] += 1;
    }
}

pub fn confusion(gold: &[SentLabel], pred: &[SentLabel]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        cm.add(g.index(), p.index());
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: [ClassScores; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub averaging: Averaging,
}

impl MetricsReport {
    /// The headline "average F1" under the configured averaging.
    pub fn average_f1(&self) -> f64 {
        match self.averaging {
            Averaging::Macro => self.macro_f1,
            Averaging::Weighted => self.weighted_f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    metrics_with(cm, Averaging::Macro)
}

pub fn metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> MetricsReport {
    let total = cm.total();
    let per_class: [ClassScores; NUM_CLASSES] = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..NUM_CLASSES).map(|g| cm.counts[g][c]).sum();
        let support: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassScores { precision, recall, f1, support }
    });
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64
    };
    MetricsReport {
        accuracy: ratio(cm.trace(), total),
        per_class,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        weighted_f1,
        averaging,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub gold: SentLabel,
    pub pred: SentLabel,
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| EvalError::Predictions { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!("expected id<TAB>gold<TAB>pred, got {line:?}")));
        }
        if i == 0 && cols[0] == "id" && cols[1] == "gold" {
            continue;
        }
        out.push(Prediction {
            id: cols[0].to_string(),
            gold: cols[1].parse().map_err(err)?,
            pred: cols[2].parse().map_err(err)?,
        });
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(&text)
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut s = String::from("id\tgold\tpred\n");
    for p in preds {
        s.push_str(&format!("{}\t{}\t{}\n", p.id, p.gold, p.pred));
    }
    s
}

pub fn score_predictions(preds: &[Prediction]) -> Result<ConfusionMatrix> {
    let gold: Vec<_> = preds.iter().map(|p| p.gold).collect();
    let pred: Vec<_> = preds.iter().map(|p| p.pred).collect();
    confusion(&gold, &pred)
}

/// Four decimals. The std formatter works from the exact binary value, so
/// only exact ties are affected by its round-half-to-even rule.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub tsv: String,
}

const HEADERS: [&str; 5] = ["Method", "Accuracy", "Precision", "Recall", "Average F1"];

pub fn report_table(rows: &[(String, MetricsReport)]) -> RenderedTable {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, m)| {
            [
                name.clone(),
                fmt4(m.accuracy),
                fmt4(m.macro_precision),
                fmt4(m.macro_recall),
                fmt4(m.average_f1()),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let header: Vec<String> = HEADERS.iter().map(|h| h.to_string()).collect();
    let rule = format!(
        "|{}|\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    );
    let mut text = line(&header);
    text.push_str(&rule);
    let mut tsv = HEADERS.join("\t") + "\n";
    for row in &cells {
        text.push_str(&line(row));
        tsv.push_str(&row.join("\t"));
        tsv.push('\n');
    }
    RenderedTable { text, tsv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentLabel::*;

    #[test]
    fn confusion_counts() {
        let g = [Positive, Negative, Neutral, Neutral, Positive];
        let cm = confusion(&g, &g).unwrap();
        assert_eq!(cm.trace(), 5);
        let cm = confusion(&[Positive, Negative], &[Negative, Positive]).unwrap();
        assert_eq!(cm.trace(), 0);
        let gold = [Positive, Positive, Negative, Neutral, Neutral, Neutral];
        let pred = [Positive, Neutral, Negative, Neutral, Positive, Neutral];
        let cm = confusion(&gold, &pred).unwrap();
        assert_eq!(cm.counts, [[1, 0, 1], [0, 1, 0], [1, 0, 2]]);
        assert!(matches!(confusion(&gold, &pred[..2]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn hand_worked_matrix() {
        let m = metrics(&ConfusionMatrix::from_counts([[2, 1, 0], [0, 2, 0], [1, 0, 4]]));
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        let f1: Vec<f64> = m.per_class.iter().map(|c| c.f1).collect();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1[1] - 0.8).abs() < 1e-12);
        assert!((f1[2] - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.785185185185).abs() < 1e-10);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = metrics(&ConfusionMatrix::from_counts([[3, 0, 0], [0, 2, 0], [0, 0, 0]]));
        assert_eq!(m.per_class[2].f1, 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        let perfect = metrics(&ConfusionMatrix::from_counts([[3, 0, 0], [0, 2, 0], [0, 0, 1]]));
        assert_eq!((perfect.accuracy, perfect.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn weighted_flag() {
        let cm = ConfusionMatrix::from_counts([[2, 1, 0], [0, 2, 0], [1, 0, 4]]);
        let w = metrics_with(&cm, Averaging::Weighted);
        let expected = (2.0 / 3.0 * 3.0 + 0.8 * 2.0 + 8.0 / 9.0 * 5.0) / 10.0;
        assert!((w.average_f1() - expected).abs() < 1e-12);
    }

    #[test]
    fn rounding_half_even() {
        assert_eq!(fmt4(0.03125), "0.0312");
        assert_eq!(fmt4(0.09375), "0.0938");
        assert_eq!(fmt4(0.78518518), "0.7852");
        assert_eq!(fmt4(1.0), "1.0000");
        assert_eq!(fmt4(0.0), "0.0000");
    }

    #[test]
    fn table_shape() {
        let m = metrics(&ConfusionMatrix::from_counts([[2, 1, 0], [0, 2, 0], [1, 0, 4]]));
        let t = report_table(&[("BiLSTM".to_string(), m)]);
        assert_eq!(t.tsv.lines().count(), 2);
        assert_eq!(t.tsv.lines().nth(1).unwrap(), "BiLSTM\t0.8000\t0.7778\t0.8222\t0.7852");
        assert_eq!(t.text.lines().count(), 3);
    }

    #[test]
    fn predictions_tsv() {
        let p = parse_predictions("id\tgold\tpred\n1\tpositive\tneutral\n2\tNEGATIVE\tnegative\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].gold, Negative);
        assert_eq!(parse_predictions(&format_predictions(&p)).unwrap(), p);
        assert!(parse_predictions("1\tpositive\n").is_err());
        assert!(parse_predictions("1\tpositive\tmeh\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels() -> impl Strategy<Value = Vec<(usize, usize)>> {
            prop::collection::vec((0usize..3, 0usize..3), 1..50)
        }

        proptest! {
            #[test]
            fn self_agreement_is_perfect(g in prop::collection::vec(0usize..3, 1..40)) {
                let g: Vec<SentLabel> = g.into_iter().map(|i| SentLabel::from_index(i).unwrap()).collect();
                let m = metrics(&confusion(&g, &g).unwrap());
                prop_assert_eq!(m.accuracy, 1.0);
                // classes absent from gold contribute F1 = 0 under the convention
                let present = SentLabel::ALL.iter().filter(|l| g.contains(l)).count();
                prop_assert!((m.macro_f1 - present as f64 / 3.0).abs() < 1e-12);
            }

            #[test]
            fn relabeling_invariance(pairs in labels(), perm_idx in 0usize..6) {
                let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                let perm = perms[perm_idx];
                let mut a = ConfusionMatrix::default();
                let mut b = ConfusionMatrix::default();
                for &(g, p) in &pairs {
                    a.add(g, p);
                    b.add(perm[g], perm[p]);
                }
                let (ma, mb) = (metrics(&a), metrics(&b));
                prop_assert_eq!(ma.accuracy, mb.accuracy);
                let mut fa: Vec<f64> = ma.per_class.iter().map(|c| c.f1).collect();
                let mut fb: Vec<f64> = mb.per_class.iter().map(|c| c.f1).collect();
                fa.sort_by(f64::total_cmp);
                fb.sort_by(f64::total_cmp);
                prop_assert_eq!(fa, fb);
                prop_assert!((ma.macro_f1 - mb.macro_f1).abs() < 1e-12);
            }
        }
    }
}
