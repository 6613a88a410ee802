//! From-scratch classifiers and cross-validated evaluation.
//!
//! Four model families are available: random forest, k-nearest neighbours,
//! multinomial logistic regression, and Gaussian naive Bayes. KNN and logistic
//! regression see z-scored features (fitted on the training rows only); the
//! tree and Bayes models consume raw RMS features.
//!
//! Every prediction tie (forest votes, neighbour votes, posterior argmax)
//! resolves toward the lowest gesture id.

mod folds;
mod forest;
mod knn;
mod logistic;
mod naive_bayes;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use folds::{make_stratified_folds, FoldPlan};
pub use forest::{Forest, ForestParams, Node, Tree};
pub use knn::{Knn, KnnParams};
pub use logistic::{loss_and_gradient, Logistic, LogisticParams};
pub use naive_bayes::{NaiveBayes, NaiveBayesParams};

use crate::features::{FeatureMatrix, Standardizer};
use crate::{rng, ElectrodeId, Error, GestureId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "RF")]
    RandomForest,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "LR")]
    Logistic,
    #[serde(rename = "NB")]
    NaiveBayes,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::RandomForest,
        ClassifierKind::Knn,
        ClassifierKind::Logistic,
        ClassifierKind::NaiveBayes,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "RF",
            ClassifierKind::Knn => "KNN",
            ClassifierKind::Logistic => "LR",
            ClassifierKind::NaiveBayes => "NB",
        }
    }

    fn standardizes(self) -> bool {
        matches!(self, ClassifierKind::Knn | ClassifierKind::Logistic)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RF" => Ok(ClassifierKind::RandomForest),
            "KNN" => Ok(ClassifierKind::Knn),
            "LR" => Ok(ClassifierKind::Logistic),
            "NB" => Ok(ClassifierKind::NaiveBayes),
            _ => Err(Error::invalid("classifier", format!("unknown classifier {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Hyperparameters {
    #[serde(rename = "RF")]
    RandomForest(ForestParams),
    #[serde(rename = "KNN")]
    Knn(KnnParams),
    #[serde(rename = "LR")]
    Logistic(LogisticParams),
    #[serde(rename = "NB")]
    NaiveBayes(NaiveBayesParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub params: Hyperparameters,
    pub seed: u64,
}

impl ClassifierSpec {
    /// Default hyperparameters for `kind`.
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        let params = match kind {
            ClassifierKind::RandomForest => Hyperparameters::RandomForest(ForestParams::default()),
            ClassifierKind::Knn => Hyperparameters::Knn(KnnParams::default()),
            ClassifierKind::Logistic => Hyperparameters::Logistic(LogisticParams::default()),
            ClassifierKind::NaiveBayes => Hyperparameters::NaiveBayes(NaiveBayesParams::default()),
        };
        Self { params, seed }
    }

    pub fn random_forest(seed: u64) -> Self {
        Self::new(ClassifierKind::RandomForest, seed)
    }

    pub fn kind(&self) -> ClassifierKind {
        match self.params {
            Hyperparameters::RandomForest(_) => ClassifierKind::RandomForest,
            Hyperparameters::Knn(_) => ClassifierKind::Knn,
            Hyperparameters::Logistic(_) => ClassifierKind::Logistic,
            Hyperparameters::NaiveBayes(_) => ClassifierKind::NaiveBayes,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| Err(Error::invalid(field, "must be positive"));
        match self.params {
            Hyperparameters::RandomForest(p) => {
                if p.trees == 0 {
                    return bad("trees");
                }
                if p.max_depth == 0 {
                    return bad("max_depth");
                }
                if p.min_samples_split < 2 {
                    return Err(Error::invalid("min_samples_split", "must be at least 2"));
                }
                if p.features_per_split == Some(0) {
                    return bad("features_per_split");
                }
            }
            Hyperparameters::Knn(p) => {
                if p.k == 0 {
                    return bad("k");
                }
            }
            Hyperparameters::Logistic(p) => {
                if p.epochs == 0 {
                    return bad("epochs");
                }
                if !(p.learning_rate > 0.0) {
                    return bad("learning_rate");
                }
                if !(p.l2_lambda >= 0.0) {
                    return Err(Error::invalid("l2_lambda", "must be nonnegative"));
                }
            }
            Hyperparameters::NaiveBayes(p) => {
                if !(p.var_smoothing > 0.0) {
                    return bad("var_smoothing");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnedParameters {
    Forest(Forest),
    Knn(Knn),
    Logistic(Logistic),
    NaiveBayes(NaiveBayes),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub classes: Vec<GestureId>,
    pub electrode_order: Vec<ElectrodeId>,
    pub standardizer: Option<Standardizer>,
    pub learned: LearnedParameters,
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        self.spec.kind()
    }

    pub fn cols(&self) -> usize {
        3 * self.electrode_order.len()
    }

    fn predict_index(&self, row: &[f64]) -> usize {
        match &self.learned {
            LearnedParameters::Forest(m) => m.predict(row),
            LearnedParameters::Knn(m) => m.predict(row),
            LearnedParameters::Logistic(m) => m.predict(row),
            LearnedParameters::NaiveBayes(m) => m.predict(row),
        }
    }

    /// Class probabilities for models that define them (logistic regression
    /// and naive Bayes), in `classes` order.
    pub fn posteriors(&self, features: &FeatureMatrix) -> Result<Option<Vec<Vec<f64>>>> {
        let x = self.prepare(features)?;
        let rows = (0..x.rows()).map(|r| x.row(r));
        Ok(match &self.learned {
            LearnedParameters::Logistic(m) => Some(rows.map(|r| m.probabilities(r)).collect()),
            LearnedParameters::NaiveBayes(m) => Some(rows.map(|r| m.posteriors(r)).collect()),
            _ => None,
        })
    }

    fn prepare(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.cols() != self.cols() {
            return Err(Error::ColumnMismatch {
                context: "prediction features".into(),
                expected: self.cols(),
                found: features.cols(),
            });
        }
        match &self.standardizer {
            Some(s) => s.apply(features),
            None => Ok(features.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Model(format!("unexpected format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported version {}", file.version)));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

pub const MODEL_FORMAT: &str = "sparseemg-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

/// Fits `spec` on every row of `features`.
pub fn train(spec: &ClassifierSpec, features: &FeatureMatrix) -> Result<TrainedModel> {
    spec.validate()?;
    let classes = features.classes();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    if features.cols() == 0 {
        return Err(Error::invalid("features", "no feature columns"));
    }
    if features.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let kind = spec.kind();
    let standardizer = if kind.standardizes() {
        Some(Standardizer::fit(features)?)
    } else {
        None
    };
    let x = match &standardizer {
        Some(s) => s.apply(features)?,
        None => features.clone(),
    };
    let y: Vec<usize> = x
        .labels()
        .iter()
        .map(|l| classes.binary_search(l).expect("label is a class"))
        .collect();
    let cols = x.cols();
    let learned = match spec.params {
        Hyperparameters::RandomForest(p) => {
            let samples = forest::Samples {
                x: x.values(),
                y: &y,
                cols,
                classes: classes.len(),
            };
            LearnedParameters::Forest(Forest::fit(&samples, &p, spec.seed))
        }
        Hyperparameters::Knn(p) => LearnedParameters::Knn(Knn {
            k: p.k,
            cols,
            rows: x.values().to_vec(),
            labels: y,
            classes: classes.len(),
        }),
        Hyperparameters::Logistic(p) => {
            LearnedParameters::Logistic(Logistic::fit(x.values(), &y, cols, classes.len(), &p, spec.seed))
        }
        Hyperparameters::NaiveBayes(p) => {
            LearnedParameters::NaiveBayes(NaiveBayes::fit(x.values(), &y, cols, classes.len(), &p))
        }
    };
    Ok(TrainedModel {
        spec: *spec,
        classes,
        electrode_order: features.electrode_order().to_vec(),
        standardizer,
        learned,
    })
}

/// One predicted gesture id per row.
pub fn predict(model: &TrainedModel, features: &FeatureMatrix) -> Result<Vec<GestureId>> {
    let x = model.prepare(features)?;
    Ok((0..x.rows())
        .into_par_iter()
        .map(|r| model.classes[model.predict_index(x.row(r))])
        .collect())
}

/// Percentage of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[GestureId], truth: &[GestureId]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    100.0 * hits as f64 / truth.len() as f64
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<GestureId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<GestureId>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, truth: GestureId, predicted: GestureId) {
        let t = self.classes.binary_search(&truth).expect("known true class");
        let p = self.classes.binary_search(&predicted).expect("known predicted class");
        self.counts[t][p] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Pooled accuracy in percent.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.trace() as f64 / t as f64,
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "confusion class lists differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Mean of the per-fold accuracies, in percent.
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// Summed over folds.
    pub confusion: ConfusionMatrix,
}

/// k-fold evaluation: each fold is predicted by a model trained on the other
/// folds. Fold `f` trains with seed stream `f` of `spec.seed`.
pub fn evaluate_cv(spec: &ClassifierSpec, features: &FeatureMatrix, plan: &FoldPlan) -> Result<CvOutcome> {
    if plan.len() != features.rows() {
        return Err(Error::invalid(
            "plan",
            format!("covers {} rows, features have {}", plan.len(), features.rows()),
        ));
    }
    let classes = features.classes();
    let folds = (0..plan.k())
        .into_par_iter()
        .map(|fold| {
            let test_rows = plan.test_rows(fold);
            let train_set = features.select_rows(&plan.train_rows(fold));
            let test_set = features.select_rows(&test_rows);
            let fold_spec = spec.with_seed(rng::derive(spec.seed, fold as u64));
            let model = train(&fold_spec, &train_set)?;
            let predicted = predict(&model, &test_set)?;
            let mut confusion = ConfusionMatrix::new(classes.clone());
            for (t, p) in test_set.labels().iter().zip(&predicted) {
                confusion.record(*t, *p);
            }
            Ok((accuracy(&predicted, test_set.labels()), confusion))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = ConfusionMatrix::new(classes);
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    for (acc, c) in &folds {
        fold_accuracies.push(*acc);
        confusion.add(c);
    }
    Ok(CvOutcome {
        accuracy: fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64,
        fold_accuracies,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::features::build_feature_matrix;

    fn synthetic(sigma: f64, seed: u64) -> FeatureMatrix {
        let spec = SyntheticSpec {
            channel_count: 16,
            gesture_count: 4,
            users: 1,
            trials_per_gesture: 8,
            samples_per_trial: 300,
            informative_channels: vec![2, 5, 9, 12],
            noise_sigma: sigma,
            seed,
        };
        let (m, trials) = generate_synthetic(&spec).unwrap();
        build_feature_matrix(&trials, &m.electrode_ids()).unwrap()
    }

    #[test]
    fn forest_memorizes_noiseless_data() {
        let f = synthetic(0.0, 7);
        let model = train(&ClassifierSpec::random_forest(1), &f).unwrap();
        assert_eq!(predict(&model, &f).unwrap(), f.labels());
    }

    #[test]
    fn every_kind_reproduces_noiseless_training_labels() {
        let f = synthetic(0.0, 3).select_electrodes(&[2, 5, 9, 12]).unwrap();
        for kind in ClassifierKind::ALL {
            let model = train(&ClassifierSpec::new(kind, 5), &f).unwrap();
            assert_eq!(predict(&model, &f).unwrap(), f.labels(), "{kind}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let f = synthetic(0.3, 1);
        for kind in ClassifierKind::ALL {
            let a = train(&ClassifierSpec::new(kind, 9), &f).unwrap();
            let b = train(&ClassifierSpec::new(kind, 9), &f).unwrap();
            assert_eq!(a, b);
            assert_eq!(predict(&a, &f).unwrap(), predict(&b, &f).unwrap());
        }
    }

    #[test]
    fn single_class_and_column_mismatch_fail() {
        let f = synthetic(0.1, 2);
        let one_class = f.with_labels(vec![0; f.rows()]).unwrap();
        assert!(matches!(
            train(&ClassifierSpec::random_forest(0), &one_class),
            Err(Error::SingleClass)
        ));
        let model = train(&ClassifierSpec::new(ClassifierKind::Knn, 0), &f).unwrap();
        let narrow = f.select_electrodes(&[0, 1]).unwrap();
        assert!(matches!(predict(&model, &narrow), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn model_file_round_trip() {
        let f = synthetic(0.2, 4);
        for kind in ClassifierKind::ALL {
            let model = train(&ClassifierSpec::new(kind, 2), &f).unwrap();
            let back = TrainedModel::from_json(&model.to_json()).unwrap();
            assert_eq!(back, model);
            assert_eq!(predict(&back, &f).unwrap(), predict(&model, &f).unwrap());
        }
        assert!(TrainedModel::from_json("{\"format\":\"other\",\"version\":1}").is_err());
    }

    #[test]
    fn cv_confusion_totals() {
        let f = synthetic(0.05, 8);
        let plan = make_stratified_folds(f.labels(), 4, 8).unwrap();
        let out = evaluate_cv(&ClassifierSpec::random_forest(8), &f, &plan).unwrap();
        assert_eq!(out.confusion.total(), f.rows() as u64);
        assert!(out.accuracy >= 95.0, "accuracy {}", out.accuracy);
        assert!((out.confusion.accuracy() - out.accuracy).abs() < 1e-9);
        for (i, row) in out.confusion.counts.iter().enumerate() {
            let expected = f.labels().iter().filter(|&&l| l == out.confusion.classes[i]).count();
            assert_eq!(row.iter().sum::<u64>(), expected as u64);
        }
    }

    #[test]
    fn forest_is_scale_invariant() {
        let f = synthetic(0.2, 6);
        let scaled = FeatureMatrix::new(
            f.values().iter().map(|v| v * 4.0).collect(),
            f.labels().to_vec(),
            f.electrode_order().to_vec(),
        )
        .unwrap();
        let plan = make_stratified_folds(f.labels(), 4, 1).unwrap();
        let spec = ClassifierSpec::random_forest(3);
        for fold in 0..4 {
            let train_rows = plan.train_rows(fold);
            let test_rows = plan.test_rows(fold);
            let a = train(&spec, &f.select_rows(&train_rows)).unwrap();
            let b = train(&spec, &scaled.select_rows(&train_rows)).unwrap();
            assert_eq!(
                predict(&a, &f.select_rows(&test_rows)).unwrap(),
                predict(&b, &scaled.select_rows(&test_rows)).unwrap()
            );
        }
    }

    #[test]
    fn naive_bayes_posteriors_normalize() {
        let f = synthetic(0.5, 10);
        let model = train(&ClassifierSpec::new(ClassifierKind::NaiveBayes, 0), &f).unwrap();
        for row in model.posteriors(&f).unwrap().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn kind_codes_parse() {
        for kind in ClassifierKind::ALL {
            assert_eq!(kind.code().parse::<ClassifierKind>().unwrap(), kind);
        }
        assert!("SVC".parse::<ClassifierKind>().is_err());
    }
}
