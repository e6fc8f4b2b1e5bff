//! Accuracy metrics, mean probability matrices and mode comparisons.
//!
//! Report JSON schema (all arrays indexed by class in `classes` order):
//!
//! ```text
//! {
//!   "classes": [string; k],
//!   "mode": "p" | "po" | "psq" | "posq",
//!   "num_items": integer,
//!   "class_counts": [integer; k],          test items per class
//!   "overall_accuracy": number,            trace(confusion) / num_items
//!   "mean_class_accuracy": number,         mean recall over classes with items
//!   "confusion": [[integer; k]; k],        row = true class, column = predicted
//!   "prob_matrix": [[number; k]; k],       row i = mean predicted distribution
//!                                          over items of class i
//!   "per_class_correct_prob": [number; k]  diagonal of prob_matrix
//! }
//! ```
//!
//! Rows of classes with no test items are all zero and such classes are
//! left out of the mean class accuracy.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{argmax, ClassifierError, ClassifierModel, SampleSource};
use crate::geometry::{FeatureMatrix, FeatureMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("model expects {expected} input channels, mode {mode} has {found}")]
    ChannelMismatch {
        expected: usize,
        found: usize,
        mode: FeatureMode,
    },
    #[error("model predicts {model} classes but {names} class names were given")]
    ClassCountMismatch { model: usize, names: usize },
    #[error("test item {index} has label {label} outside {classes} classes")]
    InvalidLabel { index: usize, label: usize, classes: usize },
    #[error("reports disagree on {0}")]
    InconsistentClassSets(String),
    #[error("no report for the position-only baseline")]
    MissingBaseline,
    #[error("duplicate report for mode {0}")]
    DuplicateMode(FeatureMode),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Model(#[from] ClassifierError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::EmptyTestSet => "EmptyTestSet",
            EvalError::ChannelMismatch { .. } => "ChannelMismatch",
            EvalError::ClassCountMismatch { .. } => "ClassCountMismatch",
            EvalError::InvalidLabel { .. } => "InvalidLabel",
            EvalError::InconsistentClassSets(_) => "InconsistentClassSets",
            EvalError::MissingBaseline => "MissingBaseline",
            EvalError::DuplicateMode(_) => "DuplicateMode",
            EvalError::MalformedReport(_) => "MalformedReport",
            EvalError::Model(e) => e.code(),
        }
    }
}

/// Anything that maps a feature matrix to class probabilities.
pub trait Predictor: Sync {
    fn in_channels(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError>;
}

impl Predictor for ClassifierModel {
    fn in_channels(&self) -> usize {
        self.config().in_channels
    }

    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError> {
        ClassifierModel::predict(self, features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub mode: FeatureMode,
    pub num_items: usize,
    pub class_counts: Vec<u64>,
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub prob_matrix: Vec<Vec<f64>>,
    pub per_class_correct_prob: Vec<f64>,
}

/// Runs the model over every test item (in parallel) and aggregates in
/// item order.
pub fn evaluate(
    model: &dyn Predictor,
    test: &dyn SampleSource,
    classes: &[String],
    mode: FeatureMode,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if model.in_channels() != mode.channels() {
        return Err(EvalError::ChannelMismatch {
            expected: model.in_channels(),
            found: mode.channels(),
            mode,
        });
    }
    let k = classes.len();
    if model.num_classes() != k {
        return Err(EvalError::ClassCountMismatch {
            model: model.num_classes(),
            names: k,
        });
    }
    for index in 0..test.len() {
        let label = test.label(index);
        if label >= k {
            return Err(EvalError::InvalidLabel { index, label, classes: k });
        }
    }
    let probs: Vec<Vec<f64>> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let f = test.features(i, 0)?;
            if f.channels() != model.in_channels() {
                return Err(EvalError::ChannelMismatch {
                    expected: model.in_channels(),
                    found: f.channels(),
                    mode,
                });
            }
            Ok(model.predict(&f)?)
        })
        .collect::<Result<_, EvalError>>()?;
    let labels: Vec<usize> = (0..test.len()).map(|i| test.label(i)).collect();
    Ok(report_from_predictions(classes, mode, &labels, &probs))
}

/// Aggregates per-item probability vectors into a report.
pub fn report_from_predictions(
    classes: &[String],
    mode: FeatureMode,
    labels: &[usize],
    probs: &[Vec<f64>],
) -> EvalReport {
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut sums = vec![vec![0.0f64; k]; k];
    let mut counts = vec![0u64; k];
    for (&label, p) in labels.iter().zip(probs) {
        counts[label] += 1;
        confusion[label][argmax(p)] += 1;
        for (s, &v) in sums[label].iter_mut().zip(p) {
            *s += v;
        }
    }
    let prob_matrix: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &c)| {
            if c == 0 {
                row
            } else {
                row.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect();
    let per_class_correct_prob = (0..k).map(|i| prob_matrix[i][i]).collect();
    let total: u64 = counts.iter().sum();
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let recalls: Vec<f64> = (0..k)
        .filter(|&i| counts[i] > 0)
        .map(|i| confusion[i][i] as f64 / counts[i] as f64)
        .collect();
    EvalReport {
        classes: classes.to_vec(),
        mode,
        num_items: labels.len(),
        class_counts: counts,
        overall_accuracy: correct as f64 / total as f64,
        mean_class_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        confusion,
        prob_matrix,
        per_class_correct_prob,
    }
}

fn width(names: &[String]) -> usize {
    names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(5)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: EvalReport =
            serde_json::from_str(text).map_err(|e| EvalError::MalformedReport(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    /// Structural checks on a deserialized report.
    pub fn validate(&self) -> Result<(), EvalError> {
        let k = self.classes.len();
        let bad = |m: &str| Err(EvalError::MalformedReport(m.to_string()));
        if k == 0 {
            return bad("no classes");
        }
        if self.class_counts.len() != k
            || self.per_class_correct_prob.len() != k
            || self.confusion.len() != k
            || self.prob_matrix.len() != k
            || self.confusion.iter().any(|r| r.len() != k)
            || self.prob_matrix.iter().any(|r| r.len() != k)
        {
            return bad("array sizes do not match the class count");
        }
        if self.class_counts.iter().sum::<u64>() != self.num_items as u64 {
            return bad("class counts do not sum to num_items");
        }
        for (row, &c) in self.confusion.iter().zip(&self.class_counts) {
            if row.iter().sum::<u64>() != c {
                return bad("confusion rows do not sum to class counts");
            }
        }
        let finite = |v: f64| v.is_finite() && (0.0..=1.0 + 1e-9).contains(&v);
        if !self.prob_matrix.iter().flatten().all(|&v| finite(v))
            || !finite(self.overall_accuracy)
            || !finite(self.mean_class_accuracy)
        {
            return bad("probabilities or accuracies outside [0, 1]");
        }
        Ok(())
    }

    /// Aligned text: summary line, per-class table, confusion matrix.
    pub fn to_text(&self) -> String {
        let w = width(&self.classes);
        let mut s = String::new();
        let _ = writeln!(s, "mode {}  items {}", self.mode, self.num_items);
        let _ = writeln!(
            s,
            "overall accuracy {:6.2}%  mean class accuracy {:6.2}%",
            100.0 * self.overall_accuracy,
            100.0 * self.mean_class_accuracy
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<w$}  {:>5}  {:>7}  {:>8}", "class", "items", "recall", "p(true)");
        for (i, name) in self.classes.iter().enumerate() {
            let c = self.class_counts[i];
            let recall = if c == 0 {
                "-".to_string()
            } else {
                format!("{:.2}%", 100.0 * self.confusion[i][i] as f64 / c as f64)
            };
            let _ = writeln!(
                s,
                "{:<w$}  {:>5}  {:>7}  {:>8.4}",
                name, c, recall, self.per_class_correct_prob[i]
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "confusion (rows: true, columns: predicted)");
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "{:<w$}  {}", name, cells.join(" "));
        }
        s
    }

    /// `class,<name_0>,...` header, then one row per true class.
    pub fn prob_matrix_csv(&self) -> String {
        let mut s = String::from("class");
        for c in &self.classes {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.prob_matrix) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDelta {
    pub mode: FeatureMode,
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    /// Differences against the position-only report.
    pub overall_accuracy_delta: f64,
    pub mean_class_accuracy_delta: f64,
    pub per_class_correct_prob: Vec<f64>,
    pub per_class_correct_prob_delta: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_recall_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub classes: Vec<String>,
    /// Sorted by mode: p, po, psq, posq.
    pub rows: Vec<ModeDelta>,
}

fn recalls(r: &EvalReport) -> Vec<f64> {
    r.confusion
        .iter()
        .zip(&r.class_counts)
        .enumerate()
        .map(|(i, (row, &c))| if c == 0 { 0.0 } else { row[i] as f64 / c as f64 })
        .collect()
}

/// Deltas of every report against the mode-p report. All reports must
/// cover the same classes with the same per-class test counts.
pub fn compare_modes(reports: &[EvalReport]) -> Result<ModeComparison, EvalError> {
    let base = reports
        .iter()
        .find(|r| r.mode == FeatureMode::P)
        .ok_or(EvalError::MissingBaseline)?;
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.mode);
    for pair in sorted.windows(2) {
        if pair[0].mode == pair[1].mode {
            return Err(EvalError::DuplicateMode(pair[0].mode));
        }
    }
    for r in &sorted {
        if r.classes != base.classes {
            return Err(EvalError::InconsistentClassSets("class names".into()));
        }
        if r.class_counts != base.class_counts {
            return Err(EvalError::InconsistentClassSets("per-class test counts".into()));
        }
    }
    let base_recall = recalls(base);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let rows = sorted
        .into_iter()
        .map(|r| {
            let rec = recalls(r);
            ModeDelta {
                mode: r.mode,
                overall_accuracy: r.overall_accuracy,
                mean_class_accuracy: r.mean_class_accuracy,
                overall_accuracy_delta: r.overall_accuracy - base.overall_accuracy,
                mean_class_accuracy_delta: r.mean_class_accuracy - base.mean_class_accuracy,
                per_class_correct_prob_delta: diff(&r.per_class_correct_prob, &base.per_class_correct_prob),
                per_class_correct_prob: r.per_class_correct_prob.clone(),
                per_class_recall_delta: diff(&rec, &base_recall),
                per_class_recall: rec,
            }
        })
        .collect();
    Ok(ModeComparison {
        classes: base.classes.clone(),
        rows,
    })
}

impl ModeComparison {
    pub fn row(&self, mode: FeatureMode) -> Option<&ModeDelta> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    /// Accuracy table with signed deltas in percentage points, then the
    /// correct-class probability per class and mode.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6}  {:>17}  {:>17}", "mode", "OA (%)", "mAcc (%)");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}  {:>7.2} ({:+7.2})  {:>7.2} ({:+7.2})",
                r.mode.as_str(),
                100.0 * r.overall_accuracy,
                100.0 * r.overall_accuracy_delta,
                100.0 * r.mean_class_accuracy,
                100.0 * r.mean_class_accuracy_delta
            );
        }
        let _ = writeln!(s);
        let w = width(&self.classes);
        let mut header = format!("{:<w$}", "p(true)");
        for r in &self.rows {
            let _ = write!(header, "  {:>16}", r.mode.as_str());
        }
        let _ = writeln!(s, "{header}");
        for (i, name) in self.classes.iter().enumerate() {
            let mut line = format!("{name:<w$}");
            for r in &self.rows {
                let _ = write!(
                    line,
                    "  {:>6.3} ({:+7.3})",
                    r.per_class_correct_prob[i], r.per_class_correct_prob_delta[i]
                );
            }
            let _ = writeln!(s, "{line}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FeatureSet;

    struct Oracle(usize);
    struct Uniform(usize);

    impl Predictor for Oracle {
        fn in_channels(&self) -> usize {
            3
        }
        fn num_classes(&self) -> usize {
            self.0
        }
        /// The label is encoded in the first feature.
        fn predict(&self, f: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError> {
            let mut p = vec![0.0; self.0];
            p[f.row(0)[0] as usize] = 1.0;
            Ok(p)
        }
    }

    impl Predictor for Uniform {
        fn in_channels(&self) -> usize {
            3
        }
        fn num_classes(&self) -> usize {
            self.0
        }
        fn predict(&self, _: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError> {
            Ok(vec![1.0 / self.0 as f64; self.0])
        }
    }

    fn labeled(k: usize, per_class: usize) -> (FeatureSet, Vec<String>) {
        let mut set = FeatureSet::default();
        for c in 0..k {
            for _ in 0..per_class {
                let f = FeatureMatrix::from_rows(vec![c as f64, 0.0, 0.0], 1, FeatureMode::P);
                set.items.push((f, c));
            }
        }
        (set, (0..k).map(|c| format!("class{c}")).collect())
    }

    #[test]
    fn oracle_model() {
        let (set, names) = labeled(4, 3);
        let r = evaluate(&Oracle(4), &set, &names, FeatureMode::P).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.mean_class_accuracy, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.prob_matrix[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn uniform_model_on_twenty_classes() {
        let (set, names) = labeled(20, 5);
        let r = evaluate(&Uniform(20), &set, &names, FeatureMode::P).unwrap();
        assert!(r.per_class_correct_prob.iter().all(|&p| (p - 0.05).abs() < 1e-12));
        // Ties go to class 0, so exactly one class in twenty is right.
        assert!((r.overall_accuracy - 0.05).abs() < 1e-12);
        for row in &r.prob_matrix {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let (set, names) = labeled(3, 2);
        assert_eq!(
            evaluate(&Oracle(3), &FeatureSet::default(), &names, FeatureMode::P),
            Err(EvalError::EmptyTestSet)
        );
        assert!(matches!(
            evaluate(&Oracle(3), &set, &names, FeatureMode::Po),
            Err(EvalError::ChannelMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&Oracle(4), &set, &names, FeatureMode::P),
            Err(EvalError::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn identical_reports_compare_to_zero() {
        let (set, names) = labeled(3, 2);
        let r = evaluate(&Uniform(3), &set, &names, FeatureMode::P).unwrap();
        let mut other = r.clone();
        other.mode = FeatureMode::Posq;
        let cmp = compare_modes(&[other, r.clone()]).unwrap();
        assert_eq!(cmp.rows[0].mode, FeatureMode::P);
        for row in &cmp.rows {
            assert_eq!(row.overall_accuracy_delta, 0.0);
            assert!(row.per_class_correct_prob_delta.iter().all(|&d| d == 0.0));
        }
        assert!(cmp.to_text().contains("(  +0.00)"));

        let mut shifted = r.clone();
        shifted.mode = FeatureMode::Po;
        shifted.classes[0] = "renamed".into();
        assert!(matches!(
            compare_modes(&[r.clone(), shifted]),
            Err(EvalError::InconsistentClassSets(_))
        ));
        let mut no_base = r.clone();
        no_base.mode = FeatureMode::Psq;
        assert_eq!(compare_modes(&[no_base]), Err(EvalError::MissingBaseline));
        assert_eq!(compare_modes(&[r.clone(), r]), Err(EvalError::DuplicateMode(FeatureMode::P)));
    }

    #[test]
    fn empty_class_is_left_out_of_mean_accuracy() {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let probs = vec![vec![0.8, 0.1, 0.1], vec![0.2, 0.7, 0.1], vec![0.6, 0.3, 0.1]];
        let r = report_from_predictions(&names, FeatureMode::P, &[0, 1, 1], &probs);
        assert_eq!(r.class_counts, vec![1, 2, 0]);
        assert!((r.mean_class_accuracy - 0.75).abs() < 1e-12);
        assert!((r.overall_accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.prob_matrix[2], vec![0.0; 3]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn text_and_csv_forms() {
        let (set, names) = labeled(2, 2);
        let r = evaluate(&Oracle(2), &set, &names, FeatureMode::P).unwrap();
        assert_eq!(
            r.prob_matrix_csv(),
            "class,class0,class1\nclass0,1.000000,0.000000\nclass1,0.000000,1.000000\n"
        );
        assert!(r.to_text().contains("overall accuracy 100.00%"));
    }
}
