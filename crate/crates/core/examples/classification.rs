//! Cross-validated motor-imagery classification on the synthetic dataset
//! with KNN, logistic regression and the CNN, plus a paired t-test on the
//! fold accuracies.
//!
//! cargo run --release --example classification

use eegdiff::eval::paired_ttest;
use eegdiff::pipeline::{evaluate_classifier, synthetic_epoch_set, PipelineConfig};

fn main() -> eegdiff::Result<()> {
    let cfg = PipelineConfig::default();
    let set = synthetic_epoch_set(&cfg, 40, 2)?;
    let mut folds = Vec::new();
    for name in ["knn", "logreg", "cnn"] {
        let m = evaluate_classifier(name, &cfg.classify, &set, None, 0)?;
        let s = m.scores;
        println!(
            "{name:>6}: accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}  folds {:?}",
            s.accuracy,
            s.precision,
            s.recall,
            s.f1,
            m.fold_scores.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
        folds.push(m.fold_scores);
    }
    match paired_ttest(&folds[2], &folds[1]) {
        Ok(t) => println!("cnn vs logreg: t = {:.3}, p = {:.4}", t.t_statistic, t.p_value),
        Err(e) => println!("cnn vs logreg: {e}"),
    }
    Ok(())
}
