//! Electrode ranking schemes.
//!
//! Each scheme scores electrodes, not feature columns: per-column scores are
//! averaged over an electrode's three window columns (MI, RMS-I), or its three
//! columns are permuted together (PI). Rankings sort by descending score with
//! ties broken by ascending electrode id.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{accuracy, make_stratified_folds, predict, train, ClassifierSpec};
use crate::features::{FeatureMatrix, WINDOWS};
use crate::rng::{self, tag};
use crate::{ElectrodeId, Error, GestureId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "MI")]
    MutualInformation,
    #[serde(rename = "PI")]
    PermutationImportance,
    #[serde(rename = "RMSI")]
    RmsImportance,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::MutualInformation,
        Scheme::PermutationImportance,
        Scheme::RmsImportance,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Scheme::MutualInformation => "MI",
            Scheme::PermutationImportance => "PI",
            Scheme::RmsImportance => "RMSI",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "MI" => Ok(Scheme::MutualInformation),
            "PI" => Ok(Scheme::PermutationImportance),
            "RMSI" | "RMS" => Ok(Scheme::RmsImportance),
            _ => Err(Error::invalid("scheme", format!("unknown selection scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedElectrode {
    pub electrode: ElectrodeId,
    pub score: f64,
}

/// Classifier and seed a permutation-importance ranking was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingContext {
    pub classifier: ClassifierSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeRanking {
    pub scheme: Scheme,
    pub ordered: Vec<RankedElectrode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<RankingContext>,
}

impl ElectrodeRanking {
    pub fn from_scores(scheme: Scheme, scores: Vec<(ElectrodeId, f64)>, context: Option<RankingContext>) -> Self {
        let mut ordered: Vec<RankedElectrode> = scores
            .into_iter()
            .map(|(electrode, score)| RankedElectrode { electrode, score })
            .collect();
        ordered.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.electrode.cmp(&b.electrode))
        });
        Self {
            scheme,
            ordered,
            context,
        }
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    /// The `n` highest-ranked electrode ids.
    pub fn top(&self, n: usize) -> Vec<ElectrodeId> {
        self.ordered.iter().take(n).map(|r| r.electrode).collect()
    }

    pub fn score_of(&self, electrode: ElectrodeId) -> Option<f64> {
        self.ordered
            .iter()
            .find(|r| r.electrode == electrode)
            .map(|r| r.score)
    }

    /// CSV `rank,electrode_id,score,scheme`, ranks starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,electrode_id,score,scheme\n");
        for (i, r) in self.ordered.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", i + 1, r.electrode, r.score, self.scheme);
        }
        out
    }
}

/// Ranks the electrodes of `features` with `scheme`. `classifier` and `seed`
/// are only used by permutation importance.
pub fn rank(scheme: Scheme, features: &FeatureMatrix, classifier: &ClassifierSpec, seed: u64) -> Result<ElectrodeRanking> {
    match scheme {
        Scheme::MutualInformation => rank_mutual_information(features),
        Scheme::PermutationImportance => rank_permutation_importance(features, classifier, seed),
        Scheme::RmsImportance => rank_rms_importance(features),
    }
}

fn check_nonempty(features: &FeatureMatrix) -> Result<()> {
    if features.rows() == 0 || features.cols() == 0 {
        return Err(Error::invalid("features", "matrix is empty"));
    }
    Ok(())
}

/// Score = mean RMS feature over all rows and the electrode's three windows.
pub fn rank_rms_importance(features: &FeatureMatrix) -> Result<ElectrodeRanking> {
    check_nonempty(features)?;
    let n = (features.rows() * WINDOWS) as f64;
    let scores = features
        .electrode_order()
        .iter()
        .enumerate()
        .map(|(p, &e)| {
            let total: f64 = (0..features.rows())
                .map(|r| features.row(r)[WINDOWS * p..WINDOWS * (p + 1)].iter().sum::<f64>())
                .sum();
            (e, total / n)
        })
        .collect();
    Ok(ElectrodeRanking::from_scores(Scheme::RmsImportance, scores, None))
}

pub const DEFAULT_MI_BINS: usize = 16;
pub const MIN_MI_ROWS: usize = 16;

/// Equal-frequency bin index per value.
///
/// With at most `bins` distinct values every distinct value is its own bin.
/// Otherwise cut points are taken at sorted positions `floor(j * n / bins)`,
/// and equal values always share a bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let edges: Vec<f64> = if distinct.len() <= bins {
        distinct[1..].to_vec()
    } else {
        let n = sorted.len();
        let mut e: Vec<f64> = (1..bins).map(|j| sorted[j * n / bins]).collect();
        e.dedup();
        e
    };
    values
        .iter()
        .map(|v| edges.partition_point(|edge| edge <= v))
        .collect()
}

/// Plug-in mutual information (nats) between two discrete codings.
pub fn discrete_mutual_information(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nx = x.iter().max().map_or(0, |m| m + 1);
    let ny = y.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; nx * ny];
    let mut px = vec![0usize; nx];
    let mut py = vec![0usize; ny];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ny + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..nx {
        for b in 0..ny {
            let c = joint[a * ny + b];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (px[a] as f64 * py[b] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

fn encode_labels(labels: &[GestureId]) -> (Vec<usize>, usize) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let codes = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("class present"))
        .collect();
    (codes, classes.len())
}

/// Mutual information of one feature column with the labels.
pub fn column_mutual_information(values: &[f64], labels: &[GestureId], bins: usize) -> f64 {
    let (y, _) = encode_labels(labels);
    discrete_mutual_information(&equal_frequency_bins(values, bins), &y)
}

pub fn rank_mutual_information(features: &FeatureMatrix) -> Result<ElectrodeRanking> {
    rank_mutual_information_with_bins(features, DEFAULT_MI_BINS)
}

pub fn rank_mutual_information_with_bins(features: &FeatureMatrix, bins: usize) -> Result<ElectrodeRanking> {
    check_nonempty(features)?;
    if bins < 2 {
        return Err(Error::invalid("bins", "need at least 2 bins"));
    }
    let (y, classes) = encode_labels(features.labels());
    if classes < 2 {
        return Err(Error::SingleClass);
    }
    if features.rows() < MIN_MI_ROWS {
        return Err(Error::invalid(
            "features",
            format!("mutual information needs at least {MIN_MI_ROWS} rows"),
        ));
    }
    let column_mi: Vec<f64> = (0..features.cols())
        .into_par_iter()
        .map(|c| discrete_mutual_information(&equal_frequency_bins(&features.column(c), bins), &y))
        .collect();
    let scores = features
        .electrode_order()
        .iter()
        .enumerate()
        .map(|(p, &e)| {
            let s: f64 = column_mi[WINDOWS * p..WINDOWS * (p + 1)].iter().sum();
            (e, s / WINDOWS as f64)
        })
        .collect();
    Ok(ElectrodeRanking::from_scores(Scheme::MutualInformation, scores, None))
}

pub const PI_REPEATS: usize = 5;
pub const PI_HOLDOUT_FOLDS: usize = 4;

/// Permutation importance on a seeded stratified 75/25 split.
///
/// The classifier is trained once on the 75 % part. For each electrode its
/// three columns are permuted jointly across the held-out rows
/// [`PI_REPEATS`] times; the score is the mean accuracy drop in percentage
/// points. Columns are processed in ascending electrode order and every
/// permutation stream is keyed by electrode id, so scores do not depend on
/// the order electrodes were supplied in.
pub fn rank_permutation_importance(features: &FeatureMatrix, spec: &ClassifierSpec, seed: u64) -> Result<ElectrodeRanking> {
    check_nonempty(features)?;
    let mut order = features.electrode_order().to_vec();
    order.sort_unstable();
    let canonical = features.select_electrodes(&order)?;

    let split = make_stratified_folds(canonical.labels(), PI_HOLDOUT_FOLDS, rng::derive(seed, tag::PI_SPLIT))?;
    let held_out = canonical.select_rows(&split.test_rows(0));
    let model = train(spec, &canonical.select_rows(&split.train_rows(0)))?;
    let baseline = accuracy(&predict(&model, &held_out)?, held_out.labels());

    let base = rng::derive(seed, tag::PERMUTATION);
    let rows = held_out.rows();
    let scores = order
        .par_iter()
        .enumerate()
        .map(|(p, &e)| {
            let stream_base = rng::derive(base, e as u64);
            let mut drop = 0.0;
            for r in 0..PI_REPEATS {
                let mut perm: Vec<usize> = (0..rows).collect();
                perm.shuffle(&mut rng::stream(stream_base, r as u64));
                let mut values = held_out.values().to_vec();
                let cols = held_out.cols();
                for (i, &src) in perm.iter().enumerate() {
                    for w in 0..WINDOWS {
                        values[i * cols + WINDOWS * p + w] = held_out.get(src, WINDOWS * p + w);
                    }
                }
                let permuted = FeatureMatrix::new(values, held_out.labels().to_vec(), order.clone())?;
                drop += baseline - accuracy(&predict(&model, &permuted)?, held_out.labels());
            }
            Ok((e, drop / PI_REPEATS as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ElectrodeRanking::from_scores(
        Scheme::PermutationImportance,
        scores,
        Some(RankingContext {
            classifier: *spec,
            seed,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::features::build_feature_matrix;
    use crate::rng::SplitMix64;
    use rand::Rng;

    fn random_matrix(rows: usize, electrodes: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SplitMix64::new(seed);
        let values = (0..rows * electrodes * 3).map(|_| rng.random_range(0.0..5.0)).collect();
        let labels = (0..rows).map(|r| (r % 4) as GestureId).collect();
        FeatureMatrix::new(values, labels, (0..electrodes).collect()).unwrap()
    }

    #[test]
    fn rms_scores_match_brute_force_means() {
        let m = random_matrix(20, 5, 1);
        let ranking = rank_rms_importance(&m).unwrap();
        for e in 0..5 {
            let mut sum = 0.0;
            for r in 0..20 {
                for w in 0..3 {
                    sum += m.get(r, 3 * e + w);
                }
            }
            let expected = sum / 60.0;
            assert!((ranking.score_of(e).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_channel_ranks_last_and_doubling_cannot_demote() {
        let mut m = random_matrix(12, 4, 2);
        let cols = m.cols();
        let mut values = m.values().to_vec();
        for r in 0..12 {
            for w in 0..3 {
                values[r * cols + 3 + w] = 0.0;
            }
        }
        m = FeatureMatrix::new(values.clone(), m.labels().to_vec(), vec![0, 1, 2, 3]).unwrap();
        let ranking = rank_rms_importance(&m).unwrap();
        assert_eq!(ranking.ordered.last().unwrap().electrode, 1);
        assert_eq!(ranking.score_of(1), Some(0.0));

        let before = ranking.top(4).iter().position(|&e| e == 2).unwrap();
        for r in 0..12 {
            for w in 0..3 {
                values[r * cols + 6 + w] *= 2.0;
            }
        }
        let doubled = FeatureMatrix::new(values, m.labels().to_vec(), vec![0, 1, 2, 3]).unwrap();
        let after_ranking = rank_rms_importance(&doubled).unwrap();
        let after = after_ranking.top(4).iter().position(|&e| e == 2).unwrap();
        assert!(after <= before);
        assert!((after_ranking.score_of(2).unwrap() - 2.0 * ranking.score_of(2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn label_copy_column_has_ln_k_information() {
        for k in [2usize, 3, 4, 7] {
            let labels: Vec<GestureId> = (0..k * 6).map(|i| (i % k) as GestureId).collect();
            let values: Vec<f64> = labels.iter().map(|&l| l as f64 * 1.5 + 0.25).collect();
            let mi = column_mutual_information(&values, &labels, 16);
            assert!((mi - (k as f64).ln()).abs() < 1e-9, "k={k}: {mi}");
        }
    }

    #[test]
    fn equal_values_share_a_bin() {
        let values = [3.0, 1.0, 1.0, 1.0, 2.0, 5.0, 4.0, 1.0];
        let bins = equal_frequency_bins(&values, 2);
        assert!(bins.iter().all(|&b| b < 2));
        let ones: Vec<usize> = values.iter().zip(&bins).filter(|(v, _)| **v == 1.0).map(|(_, b)| *b).collect();
        assert!(ones.windows(2).all(|w| w[0] == w[1]));
        // 16 distinct values over 32 rows, 16 bins -> 2 rows per bin
        let v: Vec<f64> = (0..32).map(|i| (i / 2) as f64).collect();
        let b = equal_frequency_bins(&v, 16);
        for bin in 0..16 {
            assert_eq!(b.iter().filter(|&&x| x == bin).count(), 2);
        }
    }

    #[test]
    fn noise_column_information_matches_plug_in_bias() {
        // Independent noise: the plug-in estimate concentrates near its
        // first-order bias (B - 1)(K - 1) / 2N rather than at zero.
        let (n, k, bins) = (200usize, 4usize, 16usize);
        let labels: Vec<GestureId> = (0..n).map(|i| (i % k) as GestureId).collect();
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = SplitMix64::new(seed);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mi = column_mutual_information(&values, &labels, bins);
            assert!(mi >= 0.0 && mi <= (k as f64).ln());
            total += mi;
        }
        let mean = total / 20.0;
        let bias = ((bins - 1) * (k - 1)) as f64 / (2.0 * n as f64);
        assert!((mean - bias).abs() < 0.04, "mean {mean} bias {bias}");
    }

    #[test]
    #[ignore = "plug-in MI with 16 bins on 200 rows has ~0.11 nats of bias; see the ranking chapter"]
    fn noise_column_information_below_005() {
        let labels: Vec<GestureId> = (0..200).map(|i| (i % 4) as GestureId).collect();
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = SplitMix64::new(seed);
            let values: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
            total += column_mutual_information(&values, &labels, 16);
        }
        assert!(total / 20.0 < 0.05);
    }

    #[test]
    fn identical_channels_tie_by_id() {
        let base = random_matrix(40, 3, 4);
        let cols = base.cols();
        let mut values = base.values().to_vec();
        for r in 0..40 {
            for w in 0..3 {
                values[r * cols + 6 + w] = values[r * cols + w];
            }
        }
        let m = FeatureMatrix::new(values, base.labels().to_vec(), vec![4, 1, 0]).unwrap();
        let ranking = rank_mutual_information(&m).unwrap();
        assert_eq!(ranking.score_of(4), ranking.score_of(0));
        let p4 = ranking.top(3).iter().position(|&e| e == 4).unwrap();
        let p0 = ranking.top(3).iter().position(|&e| e == 0).unwrap();
        assert!(p0 < p4);
    }

    #[test]
    fn mi_preconditions() {
        let m = random_matrix(10, 2, 1);
        assert!(rank_mutual_information(&m).is_err());
        let m = random_matrix(20, 2, 1);
        let single = m.with_labels(vec![3; 20]).unwrap();
        assert!(matches!(rank_mutual_information(&single), Err(Error::SingleClass)));
    }

    fn synthetic(informative: Vec<usize>, sigma: f64, seed: u64, channels: usize) -> FeatureMatrix {
        let spec = SyntheticSpec {
            channel_count: channels,
            gesture_count: 4,
            users: 1,
            trials_per_gesture: 8,
            samples_per_trial: 300,
            informative_channels: informative,
            noise_sigma: sigma,
            seed,
        };
        let (m, trials) = generate_synthetic(&spec).unwrap();
        build_feature_matrix(&trials, &m.electrode_ids()).unwrap()
    }

    #[test]
    fn pi_noise_channels_score_near_zero() {
        let f = synthetic(vec![2, 5, 9, 12], 0.05, 3, 16);
        let ranking = rank_permutation_importance(&f, &ClassifierSpec::random_forest(3), 3).unwrap();
        for r in &ranking.ordered {
            if ![2, 5, 9, 12].contains(&r.electrode) {
                assert!(r.score.abs() <= 2.0, "electrode {} score {}", r.electrode, r.score);
            }
        }
    }

    #[test]
    fn pi_single_informative_channel_against_leave_out_oracle() {
        let f = synthetic(vec![3], 0.0, 5, 8);
        let spec = ClassifierSpec::random_forest(5);
        let ranking = rank_permutation_importance(&f, &spec, 5).unwrap();

        // oracle: retrain without each channel on the same split
        let split = make_stratified_folds(f.labels(), 4, rng::derive(5, tag::PI_SPLIT)).unwrap();
        let eval = |electrodes: &[usize]| {
            let m = f.select_electrodes(electrodes).unwrap();
            let model = train(&spec, &m.select_rows(&split.train_rows(0))).unwrap();
            let test = m.select_rows(&split.test_rows(0));
            accuracy(&predict(&model, &test).unwrap(), test.labels())
        };
        let all: Vec<usize> = (0..8).collect();
        let baseline = eval(&all);
        let without: Vec<usize> = all.iter().copied().filter(|&e| e != 3).collect();
        let leave_out_drop = baseline - eval(&without);
        let chance = 25.0;
        assert!(leave_out_drop >= baseline - chance - 5.0);

        assert_eq!(ranking.top(1), vec![3]);
        assert!(ranking.score_of(3).unwrap() >= baseline - chance - 5.0);
    }

    #[test]
    fn pi_is_deterministic_and_order_invariant() {
        let f = synthetic(vec![1, 6], 0.2, 9, 8);
        let spec = ClassifierSpec::random_forest(1);
        let a = rank_permutation_importance(&f, &spec, 4).unwrap();
        assert_eq!(a, rank_permutation_importance(&f, &spec, 4).unwrap());
        let shuffled = f.select_electrodes(&[7, 3, 0, 6, 2, 5, 1, 4]).unwrap();
        assert_eq!(a.ordered, rank_permutation_importance(&shuffled, &spec, 4).unwrap().ordered);
    }

    #[test]
    fn csv_export() {
        let r = ElectrodeRanking::from_scores(Scheme::RmsImportance, vec![(0, 1.0), (1, 2.5)], None);
        assert_eq!(r.to_csv(), "rank,electrode_id,score,scheme\n1,1,2.5,RMSI\n2,0,1,RMSI\n");
    }

    proptest::proptest! {
        #[test]
        fn mi_bounds_hold(
            values in proptest::collection::vec(-10.0f64..10.0, 16..80),
            k in 2usize..6,
            bins in 2usize..20,
        ) {
            let labels: Vec<GestureId> = (0..values.len()).map(|i| (i % k) as GestureId).collect();
            let mi = column_mutual_information(&values, &labels, bins);
            let bound = (bins as f64).ln().min((k as f64).ln());
            proptest::prop_assert!(mi >= 0.0);
            proptest::prop_assert!(mi <= bound + 1e-12);
        }

        #[test]
        fn input_order_never_changes_scores(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let m = random_matrix(24, 6, seed);
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut SplitMix64::new(perm_seed));
            let p = m.select_electrodes(&order).unwrap();
            proptest::prop_assert_eq!(rank_rms_importance(&m).unwrap(), rank_rms_importance(&p).unwrap());
            proptest::prop_assert_eq!(rank_mutual_information(&m).unwrap(), rank_mutual_information(&p).unwrap());
        }

        #[test]
        fn rms_ignores_labels(seed in 0u64..1000) {
            let m = random_matrix(16, 4, seed);
            let relabeled = m.with_labels(m.labels().iter().map(|l| 3 - l).collect()).unwrap();
            proptest::prop_assert_eq!(rank_rms_importance(&m).unwrap(), rank_rms_importance(&relabeled).unwrap());
        }
    }
}
