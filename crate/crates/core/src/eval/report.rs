use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// `m[t][p]` counts items of true class `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if y_true.len() != y_pred.len() {
        bail!(Shape, "{} true labels vs {} predictions", y_true.len(), y_pred.len());
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            bail!(InvalidArgument, "label out of range for {n_classes} classes");
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Accuracy plus precision, recall and F1 averaged over classes weighted
/// by true-class support. A class never predicted has precision 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn classification_report(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationScores> {
    if y_true.is_empty() {
        bail!(InvalidArgument, "classification report needs at least one item");
    }
    let k = y_true.iter().chain(y_pred).max().copied().unwrap_or(0) + 1;
    let m = confusion_matrix(y_true, y_pred, k)?;
    let n = y_true.len() as f64;
    let correct: usize = (0..k).map(|c| m[c][c]).sum();
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = (0..k).map(|t| m[t][c]).sum();
        let tp = m[c][c] as f64;
        let prec = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let rec = tp / support as f64;
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        let w = support as f64 / n;
        p += w * prec;
        r += w * rec;
        f += w * f1;
    }
    Ok(ClassificationScores {
        accuracy: correct as f64 / n,
        precision: p,
        recall: r,
        f1: f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetric {
    pub target: String,
    pub inputs: [String; 2],
    pub mse: f64,
    pub pcc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Original,
    Synthetic,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetric {
    pub name: String,
    pub dataset_tag: DatasetTag,
    #[serde(flatten)]
    pub scores: ClassificationScores,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_channel: Vec<ChannelMetric>,
    pub per_classifier: Vec<ClassifierMetric>,
    pub cv_folds: usize,
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for c in &self.per_channel {
            if !(-1.0..=1.0).contains(&c.pcc) || c.mse.is_nan() || c.mse < 0.0 {
                bail!(InvalidArgument, "channel {} has out-of-range metrics", c.target);
            }
        }
        for c in &self.per_classifier {
            let s = c.scores;
            if [s.accuracy, s.precision, s.recall, s.f1].iter().any(|v| !(0.0..=1.0).contains(v)) {
                bail!(InvalidArgument, "classifier {} has rates outside [0, 1]", c.name);
            }
            if !c.fold_scores.is_empty() && c.fold_scores.len() != self.cv_folds {
                bail!(InvalidArgument, "classifier {} has {} folds, expected {}", c.name, c.fold_scores.len(), self.cv_folds);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Per-channel table: `target,inputs,mse,pcc`.
    pub fn write_channel_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let res: std::result::Result<(), csv::Error> = (|| {
            out.write_record(["target", "inputs", "mse", "pcc"])?;
            for c in &self.per_channel {
                let inputs = format!("{}, {}", c.inputs[0], c.inputs[1]);
                out.write_record([c.target.clone(), inputs, fmt(c.mse), fmt(c.pcc)])?;
            }
            out.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Format(e.to_string()))
    }

    /// `classifier,dataset,accuracy,precision,recall,f1`.
    pub fn write_classifier_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let res: std::result::Result<(), csv::Error> = (|| {
            out.write_record(["classifier", "dataset", "accuracy", "precision", "recall", "f1"])?;
            for c in &self.per_classifier {
                let tag = match c.dataset_tag {
                    DatasetTag::Original => "original",
                    DatasetTag::Synthetic => "synthetic",
                    DatasetTag::Hybrid => "hybrid",
                };
                let s = c.scores;
                out.write_record([
                    c.name.clone(),
                    tag.to_string(),
                    fmt(s.accuracy),
                    fmt(s.precision),
                    fmt(s.recall),
                    fmt(s.f1),
                ])?;
            }
            out.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_chance() {
        let y = [0, 1, 2, 3, 0, 1, 2, 3];
        let r = classification_report(&y, &y).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let r = classification_report(&y, &[0; 8]).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.recall, 0.25);
        assert!((r.precision - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn channel_csv_layout() {
        let rep = MetricReport {
            per_channel: vec![ChannelMetric {
                target: "AF3".into(),
                inputs: ["Fp1".into(), "F3".into()],
                mse: 0.25,
                pcc: 0.5,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        rep.write_channel_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "target,inputs,mse,pcc\nAF3,\"Fp1, F3\",0.250000,0.500000\n");
    }
}
