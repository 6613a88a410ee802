use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};
use crate::{Error, GestureId, Result};

/// Fold index per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    assignments: Vec<usize>,
    k: usize,
}

impl FoldPlan {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("k", "need at least 2 folds"));
        }
        if let Some(bad) = assignments.iter().find(|&&f| f >= k) {
            return Err(Error::invalid("assignments", format!("fold {bad} outside 0..{k}")));
        }
        Ok(Self { assignments, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.assignments[r] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.assignments[r] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified fold assignment: rows of each class are shuffled with a seeded
/// stream, then dealt round-robin. The dealing position carries over from one
/// class to the next so fold totals stay balanced too.
pub fn make_stratified_folds(labels: &[GestureId], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k", "need at least 2 folds"));
    }
    let mut classes: Vec<GestureId> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let base = rng::derive(seed, tag::FOLDS);
    let mut assignments = vec![0; labels.len()];
    let mut offset = 0;
    for &class in &classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == class).collect();
        if rows.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: rows.len(),
                required: k,
            });
        }
        rows.shuffle(&mut rng::stream(base, class as u64));
        for (i, r) in rows.iter().enumerate() {
            assignments[*r] = (offset + i) % k;
        }
        offset += rows.len();
    }
    FoldPlan::new(assignments, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_class_counts(labels: &[GestureId], plan: &FoldPlan, class: GestureId) -> Vec<usize> {
        let mut counts = vec![0; plan.k()];
        for (r, &l) in labels.iter().enumerate() {
            if l == class {
                counts[plan.assignments()[r]] += 1;
            }
        }
        counts
    }

    #[test]
    fn full_session_scale_folds() {
        let labels: Vec<GestureId> = (0..27).flat_map(|g| [g; 20]).collect();
        let plan = make_stratified_folds(&labels, 4, 0).unwrap();
        assert_eq!(plan.fold_sizes(), vec![135; 4]);
        for g in 0..27 {
            assert_eq!(per_class_counts(&labels, &plan, g), vec![5; 4]);
        }
    }

    #[test]
    fn one_per_class_per_fold() {
        let labels = [0, 0, 0, 0, 1, 1, 1, 1];
        let plan = make_stratified_folds(&labels, 4, 3).unwrap();
        for c in 0..2 {
            assert_eq!(per_class_counts(&labels, &plan, c), vec![1; 4]);
        }
    }

    #[test]
    fn small_class_is_named() {
        let labels = [0, 0, 0, 0, 9, 9, 9];
        match make_stratified_folds(&labels, 4, 0) {
            Err(Error::ClassTooSmall { class, count, .. }) => assert_eq!((class, count), (9, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(make_stratified_folds(&labels, 1, 0).is_err());
    }

    #[test]
    fn seeded_and_balanced() {
        let labels: Vec<GestureId> = (0..5).flat_map(|g| vec![g; 7 + g as usize]).collect();
        let a = make_stratified_folds(&labels, 4, 11).unwrap();
        assert_eq!(a, make_stratified_folds(&labels, 4, 11).unwrap());
        assert_ne!(a, make_stratified_folds(&labels, 4, 12).unwrap());
        for g in 0..5 {
            let c = per_class_counts(&labels, &a, g);
            assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        }
        let sizes = a.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
