//! Layout-size sweep and sparsity-score optimization.
//!
//! Candidates are ranked once on the full candidate matrix; the sweep then
//! evaluates the ranking prefixes of size `E = 2..=min(E_max, candidates)`
//! under one stratified 4-fold plan shared by every `E`. The chosen layout
//! minimizes `w1 * (100 - accuracy) + w2 * E`, ties going to the smaller `E`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{evaluate_cv, make_stratified_folds, ClassifierKind, ClassifierSpec, ConfusionMatrix, FoldPlan};
use crate::dataset::{ElectrodeSite, TrialRecord};
use crate::features::{build_feature_matrix, FeatureMatrix};
use crate::selection::{rank, ElectrodeRanking, Scheme};
use crate::{ElectrodeId, Error, GestureId, Result};

pub const CV_FOLDS: usize = 4;
pub const MIN_ELECTRODES: usize = 2;
pub const DEFAULT_MAX_ELECTRODES: usize = 20;

/// Weights of the sparsity score; `w1` prices accuracy loss, `w2` electrodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    pub w1: f64,
    pub w2: f64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5 }
    }
}

impl SparsityConfig {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        let cfg = Self { w1, w2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::invalid("weights", "must be nonnegative"));
        }
        if ((self.w1 + self.w2) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", "w1 + w2 must equal 1"));
        }
        Ok(())
    }
}

/// `w1 * (100 - accuracy) + w2 * electrodes`; lower is better.
pub fn sparsity_score(electrodes: usize, accuracy: f64, cfg: &SparsityConfig) -> Result<f64> {
    cfg.validate()?;
    if !(0.0..=100.0).contains(&accuracy) {
        return Err(Error::invalid("accuracy", format!("{accuracy} outside [0, 100]")));
    }
    Ok(cfg.w1 * (100.0 - accuracy) + cfg.w2 * electrodes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub electrode_count: usize,
    pub electrodes: Vec<ElectrodeId>,
    pub accuracy: f64,
    pub sparsity_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

/// Point with the lowest sparsity score under `cfg`; ties go to smaller `E`.
pub fn select_optimal<'a>(points: &'a [SweepPoint], cfg: &SparsityConfig) -> Result<&'a SweepPoint> {
    let mut best: Option<(&SweepPoint, f64)> = None;
    for p in points {
        let s = sparsity_score(p.electrode_count, p.accuracy, cfg)?;
        let better = match best {
            None => true,
            Some((b, bs)) => s < bs || (s == bs && p.electrode_count < b.electrode_count),
        };
        if better {
            best = Some((p, s));
        }
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| Error::invalid("points", "no sweep points to choose from"))
}

fn best_accuracy(points: &[SweepPoint]) -> Option<&SweepPoint> {
    let mut best: Option<&SweepPoint> = None;
    for p in points {
        if best.is_none_or(|b| {
            p.accuracy > b.accuracy || (p.accuracy == b.accuracy && p.electrode_count < b.electrode_count)
        }) {
            best = Some(p);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scheme: Scheme,
    pub classifier: ClassifierSpec,
    pub weights: SparsityConfig,
    pub seed: u64,
    pub ranking: ElectrodeRanking,
    pub points: Vec<SweepPoint>,
    pub best_by_accuracy: usize,
    pub best_by_score: usize,
    pub chosen: SweepPoint,
}

impl SweepResult {
    pub fn point(&self, electrode_count: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.electrode_count == electrode_count)
    }

    /// CSV `E,accuracy,sparsity_score`, one row per point.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("E,accuracy,sparsity_score\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.electrode_count, p.accuracy, p.sparsity_score);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub max_electrodes: usize,
    /// Seeds fold assignment and permutation importance.
    pub seed: u64,
    /// Gestures to keep; empty keeps every gesture present in the trials.
    pub gestures: Vec<GestureId>,
    /// Worker threads for this sweep; `None` uses one per core. With one
    /// worker the layout sizes are evaluated serially.
    pub workers: Option<usize>,
    /// Keep confusion matrices for every point instead of only the chosen
    /// and the most accurate ones.
    pub keep_all_confusions: bool,
}

impl SweepOptions {
    pub fn new(max_electrodes: usize, seed: u64) -> Self {
        Self {
            max_electrodes,
            seed,
            gestures: Vec::new(),
            workers: None,
            keep_all_confusions: false,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn with_gestures(mut self, gestures: Vec<GestureId>) -> Self {
        self.gestures = gestures;
        self
    }
}

/// Observer of a running sweep.
pub trait SweepObserver {
    /// Called once per completed point, in ascending `E`.
    fn on_point(&mut self, _point: &SweepPoint) {}

    /// Polled between evaluations; returning true aborts with [`Error::Cancelled`].
    fn cancelled(&self) -> bool {
        false
    }
}

impl SweepObserver for () {}

/// Progress callback plus an optional cancellation flag.
pub struct Progress<'a, F> {
    pub on_point: F,
    pub cancel: Option<&'a AtomicBool>,
}

impl<F: FnMut(&SweepPoint)> SweepObserver for Progress<'_, F> {
    fn on_point(&mut self, point: &SweepPoint) {
        (self.on_point)(point)
    }

    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

/// Keeps the trials whose gesture is in `gestures` (all when empty).
pub fn filter_gestures(trials: &[TrialRecord], gestures: &[GestureId]) -> Result<Vec<TrialRecord>> {
    if gestures.is_empty() {
        return Ok(trials.to_vec());
    }
    for (i, g) in gestures.iter().enumerate() {
        if !trials.iter().any(|t| t.gesture_id == *g) {
            return Err(Error::invalid(format!("gestures[{i}]"), format!("no trials for gesture {g}")));
        }
    }
    Ok(trials
        .iter()
        .filter(|t| gestures.contains(&t.gesture_id))
        .cloned()
        .collect())
}

/// The fold plan shared by every point of a sweep seeded with `seed`.
pub fn sweep_fold_plan(labels: &[GestureId], seed: u64) -> Result<FoldPlan> {
    make_stratified_folds(labels, CV_FOLDS, seed)
}

pub fn run_sweep(
    trials: &[TrialRecord],
    candidates: &[ElectrodeId],
    scheme: Scheme,
    spec: &ClassifierSpec,
    cfg: &SparsityConfig,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    run_sweep_observed(trials, candidates, scheme, spec, cfg, opts, &mut ())
}

pub fn run_sweep_observed(
    trials: &[TrialRecord],
    candidates: &[ElectrodeId],
    scheme: Scheme,
    spec: &ClassifierSpec,
    cfg: &SparsityConfig,
    opts: &SweepOptions,
    observer: &mut dyn SweepObserver,
) -> Result<SweepResult> {
    cfg.validate()?;
    if opts.max_electrodes < MIN_ELECTRODES {
        return Err(Error::invalid("max_electrodes", "must be at least 2"));
    }
    if candidates.len() < MIN_ELECTRODES {
        return Err(Error::invalid("candidate_electrodes", "need at least 2 candidates"));
    }
    let mut unique = candidates.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != candidates.len() {
        return Err(Error::invalid("candidate_electrodes", "contains duplicates"));
    }
    match opts.workers {
        Some(0) => Err(Error::invalid("workers", "must be positive")),
        workers => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.unwrap_or(0))
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            sweep_inner(trials, candidates, scheme, spec, cfg, opts, observer, &pool)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_inner(
    trials: &[TrialRecord],
    candidates: &[ElectrodeId],
    scheme: Scheme,
    spec: &ClassifierSpec,
    cfg: &SparsityConfig,
    opts: &SweepOptions,
    observer: &mut dyn SweepObserver,
    pool: &rayon::ThreadPool,
) -> Result<SweepResult> {
    let trials = filter_gestures(trials, &opts.gestures)?;
    if trials.is_empty() {
        return Err(Error::invalid("trials", "no trials to sweep"));
    }
    if observer.cancelled() {
        return Err(Error::Cancelled);
    }
    let (full, ranking) = pool.install(|| {
        let full = build_feature_matrix(&trials, candidates)?;
        let ranking = rank(scheme, &full, spec, opts.seed)?;
        Ok((full, ranking))
    })?;
    let plan = sweep_fold_plan(full.labels(), opts.seed)?;
    let max_e = opts.max_electrodes.min(candidates.len());
    let counts: Vec<usize> = (MIN_ELECTRODES..=max_e).collect();

    let evaluate = |e: usize| -> Result<SweepPoint> {
        let electrodes = ranking.top(e);
        let sub = full.select_electrodes(&electrodes)?;
        let cv = evaluate_cv(spec, &sub, &plan)?;
        Ok(SweepPoint {
            electrode_count: e,
            electrodes,
            accuracy: cv.accuracy,
            sparsity_score: sparsity_score(e, cv.accuracy, cfg)?,
            confusion: Some(cv.confusion),
        })
    };

    let mut points = Vec::with_capacity(counts.len());
    if pool.current_num_threads() > 1 {
        let stop = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel::<(usize, Result<SweepPoint>)>();
        let outcome = std::thread::scope(|scope| {
            let stop = &stop;
            let evaluate = &evaluate;
            let counts = &counts;
            let handle = scope.spawn(move || {
                pool.install(|| {
                    counts.par_iter().for_each_with(tx, |tx, &e| {
                        if stop.load(Ordering::Relaxed) {
                            return;
                        }
                        let _ = tx.send((e, evaluate(e)));
                    })
                });
            });
            let mut pending = BTreeMap::new();
            let mut next = MIN_ELECTRODES;
            let mut failure = None;
            for (e, r) in rx.iter() {
                if failure.is_some() {
                    continue;
                }
                if observer.cancelled() {
                    stop.store(true, Ordering::Relaxed);
                    failure = Some(Error::Cancelled);
                    continue;
                }
                match r {
                    Err(err) => {
                        stop.store(true, Ordering::Relaxed);
                        failure = Some(err);
                    }
                    Ok(p) => {
                        pending.insert(e, p);
                        while let Some(p) = pending.remove(&next) {
                            observer.on_point(&p);
                            points.push(p);
                            next += 1;
                        }
                    }
                }
            }
            handle.join().expect("sweep worker panicked");
            match failure {
                Some(err) => Err(err),
                None if observer.cancelled() => Err(Error::Cancelled),
                None => Ok(()),
            }
        });
        outcome?;
    } else {
        for &e in &counts {
            if observer.cancelled() {
                return Err(Error::Cancelled);
            }
            let p = pool.install(|| evaluate(e))?;
            observer.on_point(&p);
            points.push(p);
        }
    }
    finish(scheme, spec, cfg, opts, ranking, points)
}

fn finish(
    scheme: Scheme,
    spec: &ClassifierSpec,
    cfg: &SparsityConfig,
    opts: &SweepOptions,
    ranking: ElectrodeRanking,
    mut points: Vec<SweepPoint>,
) -> Result<SweepResult> {
    let best_by_score = select_optimal(&points, cfg)?.electrode_count;
    let best_by_accuracy = best_accuracy(&points)
        .map(|p| p.electrode_count)
        .expect("points are non-empty");
    if !opts.keep_all_confusions {
        for p in &mut points {
            if p.electrode_count != best_by_score && p.electrode_count != best_by_accuracy {
                p.confusion = None;
            }
        }
    }
    let chosen = points
        .iter()
        .find(|p| p.electrode_count == best_by_score)
        .cloned()
        .expect("chosen point is a member");
    Ok(SweepResult {
        scheme,
        classifier: *spec,
        weights: *cfg,
        seed: opts.seed,
        ranking,
        points,
        best_by_accuracy,
        best_by_score,
        chosen,
    })
}

/// Accuracy of a fixed layout on one user's trials, with the fold plan a
/// sweep seeded with `seed` would use.
pub fn evaluate_layout(
    trials: &[TrialRecord],
    electrodes: &[ElectrodeId],
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<(f64, ConfusionMatrix)> {
    let features: FeatureMatrix = build_feature_matrix(trials, electrodes)?;
    let plan = sweep_fold_plan(features.labels(), seed)?;
    let cv = evaluate_cv(spec, &features, &plan)?;
    Ok((cv.accuracy, cv.confusion))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccuracy {
    pub user: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossUserReport {
    pub source_user: String,
    pub chosen: SweepPoint,
    pub per_user: Vec<UserAccuracy>,
    /// Mean accuracy over users other than the source.
    pub mean_transfer_accuracy: f64,
}

impl CrossUserReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user,accuracy,is_source\n");
        for u in &self.per_user {
            let _ = writeln!(out, "{},{},{}", u.user, u.accuracy, u.user == self.source_user);
        }
        out
    }
}

/// Sweeps `source`, freezes its chosen layout, and cross-validates that layout
/// on every user's own trials.
pub fn cross_user_eval(
    users: &[(String, Vec<TrialRecord>)],
    source: &str,
    candidates: &[ElectrodeId],
    scheme: Scheme,
    spec: &ClassifierSpec,
    cfg: &SparsityConfig,
    opts: &SweepOptions,
) -> Result<CrossUserReport> {
    if users.len() < 2 {
        return Err(Error::invalid("users", "cross-user evaluation needs at least 2 users"));
    }
    let source_trials = &users
        .iter()
        .find(|(u, _)| u == source)
        .ok_or_else(|| Error::UnknownUser(source.to_string()))?
        .1;
    let sweep = run_sweep(source_trials, candidates, scheme, spec, cfg, opts)?;
    let layout = sweep.chosen.electrodes.clone();
    let per_user = users
        .iter()
        .map(|(user, trials)| {
            let trials = filter_gestures(trials, &opts.gestures)?;
            let (accuracy, _) = evaluate_layout(&trials, &layout, spec, opts.seed)?;
            Ok(UserAccuracy {
                user: user.clone(),
                accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let others: Vec<f64> = per_user
        .iter()
        .filter(|u| u.user != source)
        .map(|u| u.accuracy)
        .collect();
    Ok(CrossUserReport {
        source_user: source.to_string(),
        chosen: sweep.chosen,
        mean_transfer_accuracy: others.iter().sum::<f64>() / others.len().max(1) as f64,
        per_user,
    })
}

/// Equally spaced ring electrodes: ring positions `floor(i * n / k)`.
pub fn band_layout(electrodes: &[ElectrodeSite], k: usize) -> Result<Vec<ElectrodeId>> {
    let mut ring: Vec<(usize, ElectrodeId)> = electrodes
        .iter()
        .filter_map(|e| e.ring_index.map(|r| (r, e.id)))
        .collect();
    if ring.is_empty() {
        return Err(Error::invalid("electrodes", "no ring metadata (ring_index) present"));
    }
    ring.sort_unstable();
    let n = ring.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must be in 1..={n}")));
    }
    Ok((0..k).map(|i| ring[i * n / k].1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandComparison {
    pub k: usize,
    pub band_electrodes: Vec<ElectrodeId>,
    pub sparse_electrodes: Vec<ElectrodeId>,
    pub band_accuracy: f64,
    pub sparse_accuracy: f64,
}

/// Band layout of size `k` against the top-`k` prefix of a ranking over all
/// `electrodes`, with identical folds and classifier on both sides.
pub fn compare_band_vs_sparse(
    trials: &[TrialRecord],
    electrodes: &[ElectrodeSite],
    k: usize,
    scheme: Scheme,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<BandComparison> {
    let band = band_layout(electrodes, k)?;
    let mut candidates: Vec<ElectrodeId> = electrodes.iter().map(|e| e.id).collect();
    candidates.sort_unstable();
    let full = build_feature_matrix(trials, &candidates)?;
    let plan = sweep_fold_plan(full.labels(), seed)?;
    let ranking = rank(scheme, &full, spec, seed)?;
    let sparse = ranking.top(k);
    let band_accuracy = evaluate_cv(spec, &full.select_electrodes(&band)?, &plan)?.accuracy;
    let sparse_accuracy = evaluate_cv(spec, &full.select_electrodes(&sparse)?, &plan)?.accuracy;
    Ok(BandComparison {
        k,
        band_electrodes: band,
        sparse_electrodes: sparse,
        band_accuracy,
        sparse_accuracy,
    })
}

/// One scheme and classifier pair of a benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub scheme: Scheme,
    pub classifier: ClassifierKind,
    pub result: SweepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    /// `scheme,classifier,chosen_E,chosen_accuracy,chosen_sparsity_score,best_E,best_accuracy`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scheme,classifier,chosen_E,chosen_accuracy,chosen_sparsity_score,best_E,best_accuracy\n");
        for row in &self.rows {
            let r = &row.result;
            let best = r.point(r.best_by_accuracy).expect("best point is a member");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.scheme,
                row.classifier,
                r.chosen.electrode_count,
                r.chosen.accuracy,
                r.chosen.sparsity_score,
                best.electrode_count,
                best.accuracy
            );
        }
        out
    }

    /// Every curve in long form: `scheme,classifier,E,accuracy,sparsity_score`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("scheme,classifier,E,accuracy,sparsity_score\n");
        for row in &self.rows {
            for p in &row.result.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.scheme, row.classifier, p.electrode_count, p.accuracy, p.sparsity_score
                );
            }
        }
        out
    }

    pub fn row(&self, scheme: Scheme, classifier: ClassifierKind) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.classifier == classifier)
    }
}

/// Sweeps every scheme against every classifier, all with the same seed and
/// options. Rows come scheme-major in the order given.
pub fn run_grid(
    trials: &[TrialRecord],
    candidates: &[ElectrodeId],
    schemes: &[Scheme],
    classifiers: &[ClassifierKind],
    cfg: &SparsityConfig,
    opts: &SweepOptions,
) -> Result<GridReport> {
    let mut rows = Vec::with_capacity(schemes.len() * classifiers.len());
    for &scheme in schemes {
        for &classifier in classifiers {
            let spec = ClassifierSpec::new(classifier, opts.seed);
            let result = run_sweep(trials, candidates, scheme, &spec, cfg, opts)?;
            rows.push(GridRow {
                scheme,
                classifier,
                result,
            });
        }
    }
    Ok(GridReport { rows })
}
