//! Signal metrics, classifiers, cross-validation and significance tests.

mod cv;
mod knn;
mod logreg;
mod metrics;
mod nets;
mod report;
mod stats;

pub use cv::{cross_validate, stratified_folds, CvResult};
pub use knn::{knn_classify, Standardizer};
pub use logreg::{logistic_regression_train, LogRegConfig, LogisticModel};
pub use metrics::{mse, pearson};
pub use nets::{CnnClassifier, NetTrainConfig, UnetClassifier};
pub use report::{
    classification_report, confusion_matrix, ChannelMetric, ClassificationScores, ClassifierMetric,
    DatasetTag, MetricReport,
};
pub use stats::{ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_sided, TTestResult};
