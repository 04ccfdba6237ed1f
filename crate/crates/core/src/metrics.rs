//! Confusion matrices, per-class error counts and k-fold evaluation.

use std::fmt::Write as _;

use crate::cascade::{train_cascade, CascadeConfig, CascadeError, DriveNetModel};
use crate::cnn::EpochStats;
use crate::dataset::{format_label, kfold_split, DatasetError, FoldPlan};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("class {0} out of range")]
    Label(usize),
    #[error(transparent)]
    Split(#[from] DatasetError),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: CascadeError,
    },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub n_samples: usize,
    pub accuracy: f64,
    /// Misclassified samples of each true class (off-diagonal row sums).
    pub per_class_errors_true: [usize; NUM_CLASSES],
    /// False positives of each predicted class (off-diagonal column sums).
    pub per_class_errors_pred: [usize; NUM_CLASSES],
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let n_samples: usize = confusion.iter().flatten().sum();
        if n_samples == 0 {
            return Err(MetricsError::Empty);
        }
        let mut per_class_errors_true = [0; NUM_CLASSES];
        let mut per_class_errors_pred = [0; NUM_CLASSES];
        let mut trace = 0;
        for (t, row) in confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                if t == p {
                    trace += c;
                } else {
                    per_class_errors_true[t] += c;
                    per_class_errors_pred[p] += c;
                }
            }
        }
        Ok(EvalReport {
            confusion,
            n_samples,
            accuracy: trace as f64 / n_samples as f64,
            per_class_errors_true,
            per_class_errors_pred,
        })
    }

    pub fn correct(&self) -> usize {
        (0..NUM_CLASSES).map(|c| self.confusion[c][c]).sum()
    }

    pub fn errors(&self) -> usize {
        self.n_samples - self.correct()
    }

    /// Element-wise sum of confusion matrices.
    pub fn pooled(reports: &[EvalReport]) -> Result<Self> {
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for r in reports {
            for (acc, row) in confusion.iter_mut().zip(&r.confusion) {
                for (a, &c) in acc.iter_mut().zip(row) {
                    *a += c;
                }
            }
        }
        Self::from_confusion(confusion)
    }

    /// Confusion matrix as CSV: header `true\pred,c0,...,c9`, one row per
    /// true class.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in 0..NUM_CLASSES {
            write!(s, ",{}", format_label(c)).unwrap();
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            s.push_str(&format_label(t));
            for c in row {
                write!(s, ",{c}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Plain-text summary: an accuracy table and a per-class error table
    /// giving both the by-true-class and by-predicted-class counts.
    pub fn summary(&self, method: &str) -> String {
        let mut s = String::new();
        writeln!(s, "{:<12} {:>9}", "Method", "Accuracy").unwrap();
        writeln!(s, "{:<12} {:>8.2}%", method, 100.0 * self.accuracy).unwrap();
        writeln!(s).unwrap();
        write!(s, "{:<12}", "Errors").unwrap();
        for c in 0..NUM_CLASSES {
            write!(s, " {:>5}", format_label(c)).unwrap();
        }
        writeln!(s, " {:>6}", "Total").unwrap();
        for (name, counts) in [("by truth", &self.per_class_errors_true), ("by pred", &self.per_class_errors_pred)] {
            write!(s, "{name:<12}").unwrap();
            for c in counts {
                write!(s, " {c:>5}").unwrap();
            }
            writeln!(s, " {:>6}", counts.iter().sum::<usize>()).unwrap();
        }
        writeln!(s, "{} of {} samples correct", self.correct(), self.n_samples).unwrap();
        s
    }
}

pub fn evaluate(predictions: &[usize], truths: &[usize]) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return Err(MetricsError::Label(p.max(t)));
        }
        confusion[t][p] += 1;
    }
    EvalReport::from_confusion(confusion)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub master_seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub predictions: Vec<usize>,
    pub report: EvalReport,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub pooled: EvalReport,
    /// Held-out prediction for every sample, in dataset order.
    pub predictions: Vec<usize>,
}

/// Seeds for a cross-validation run: the fold plan uses `derive_seed(seed, 0)`
/// and fold `f` trains a fresh cascade with master seed
/// `derive_seed(seed, f + 1)`, replacing `config.master_seed`.
pub fn fold_seeds(seed: u64, k: usize) -> (u64, Vec<u64>) {
    (derive_seed(seed, 0), (0..k).map(|f| derive_seed(seed, f as u64 + 1)).collect())
}

/// k-fold cross-validation. Every fold retrains both stages from scratch on
/// its training split and is scored on its held-out split. `on_fold` sees
/// each fold's result and model as soon as it finishes.
pub fn crossval(
    images: &[&Tensor],
    labels: &[usize],
    k: usize,
    config: &CascadeConfig,
    seed: u64,
    mut on_fold: impl FnMut(&FoldResult, &DriveNetModel),
) -> Result<CrossvalResult> {
    if images.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: images.len(),
            truths: labels.len(),
        });
    }
    let (plan_seed, masters) = fold_seeds(seed, k);
    let plan = kfold_split(images.len(), k, plan_seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut predictions = vec![usize::MAX; images.len()];
    for (fold, &master_seed) in masters.iter().enumerate() {
        let train_indices = plan.train_indices(fold);
        let test_indices = plan.test_indices(fold);
        let train_images: Vec<&Tensor> = train_indices.iter().map(|&i| images[i]).collect();
        let train_labels: Vec<usize> = train_indices.iter().map(|&i| labels[i]).collect();
        let fold_config = CascadeConfig {
            master_seed,
            ..config.clone()
        };
        let fold_err = |source| MetricsError::Fold { fold, source };
        let trained = train_cascade(&train_images, &train_labels, &fold_config).map_err(fold_err)?;
        let test_images: Vec<&Tensor> = test_indices.iter().map(|&i| images[i]).collect();
        let fold_predictions: Vec<usize> = trained
            .model
            .predict_batch(&test_images)
            .map_err(fold_err)?
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        let truths: Vec<usize> = test_indices.iter().map(|&i| labels[i]).collect();
        let report = evaluate(&fold_predictions, &truths)?;
        for (&i, &p) in test_indices.iter().zip(&fold_predictions) {
            predictions[i] = p;
        }
        let result = FoldResult {
            fold,
            master_seed,
            train_indices,
            test_indices,
            predictions: fold_predictions,
            report,
            epochs: trained.epochs,
        };
        on_fold(&result, &trained.model);
        folds.push(result);
    }
    let pooled = EvalReport::pooled(&folds.iter().map(|f| f.report.clone()).collect::<Vec<_>>())?;
    Ok(CrossvalResult {
        plan,
        folds,
        pooled,
        predictions,
    })
}

/// One row per fold plus a pooled row:
/// `fold,n_train,n_test,correct,accuracy`.
pub fn folds_csv(result: &CrossvalResult) -> String {
    let mut s = String::from("fold,n_train,n_test,correct,accuracy\n");
    for f in &result.folds {
        writeln!(
            s,
            "{},{},{},{},{:.6}",
            f.fold,
            f.train_indices.len(),
            f.test_indices.len(),
            f.report.correct(),
            f.report.accuracy
        )
        .unwrap();
    }
    let p = &result.pooled;
    writeln!(s, "pooled,,{},{},{:.6}", p.n_samples, p.correct(), p.accuracy).unwrap();
    s
}
