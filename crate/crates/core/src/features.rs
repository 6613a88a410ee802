//! Windowed-RMS feature extraction.
//!
//! Each trial is truncated to the largest multiple of 3 samples, cut into
//! three equal contiguous windows, and reduced to one RMS value per window
//! per electrode. Columns are channel-major: electrode `electrode_order[c]`
//! owns columns `3c`, `3c + 1` and `3c + 2`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::TrialRecord;
use crate::{ElectrodeId, Error, GestureId, Result};

pub const WINDOWS: usize = 3;

/// Root mean square of a non-empty window.
pub fn rms_window(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "window is empty"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rms window".into()));
    }
    Ok(rms(samples.iter().copied(), samples.len()))
}

#[inline]
fn rms(values: impl Iterator<Item = f64>, len: usize) -> f64 {
    let sum_sq: f64 = values.map(|v| v * v).sum();
    (sum_sq / len as f64).sqrt()
}

/// Feature vector of one trial restricted to `electrodes`, length `3 * electrodes.len()`.
pub fn extract_trial_features(trial: &TrialRecord, electrodes: &[ElectrodeId]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(WINDOWS * electrodes.len());
    extract_into(trial, electrodes, &mut out)?;
    Ok(out)
}

fn extract_into(trial: &TrialRecord, electrodes: &[ElectrodeId], out: &mut Vec<f64>) -> Result<()> {
    if electrodes.is_empty() {
        return Err(Error::invalid("electrodes", "must not be empty"));
    }
    let len = trial.len();
    if len < WINDOWS {
        return Err(Error::invalid(
            "trial",
            format!("has {len} samples, need at least {WINDOWS}"),
        ));
    }
    let width = len / WINDOWS;
    for &e in electrodes {
        if e >= trial.channels {
            return Err(Error::UnknownElectrode(e));
        }
        for w in 0..WINDOWS {
            let window = (w * width..(w + 1) * width).map(|t| trial.sample(t, e));
            out.push(rms(window, width));
        }
    }
    Ok(())
}

/// Per-trial feature rows with gesture labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    labels: Vec<GestureId>,
    electrode_order: Vec<ElectrodeId>,
}

impl FeatureMatrix {
    /// Wraps row-major `values`. Fails if the shape is inconsistent or a value
    /// is not finite.
    pub fn new(
        values: Vec<f64>,
        labels: Vec<GestureId>,
        electrode_order: Vec<ElectrodeId>,
    ) -> Result<Self> {
        let cols = WINDOWS * electrode_order.len();
        if values.len() != labels.len() * cols {
            return Err(Error::ColumnMismatch {
                context: "feature matrix".into(),
                expected: labels.len() * cols,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            values,
            labels,
            electrode_order,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        WINDOWS * self.electrode_order.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[GestureId] {
        &self.labels
    }

    pub fn electrode_order(&self) -> &[ElectrodeId] {
        &self.electrode_order
    }

    /// Column of one feature, top to bottom.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, col)).collect()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<GestureId> {
        let mut classes = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Column projection onto `electrodes`, in the given order.
    pub fn select_electrodes(&self, electrodes: &[ElectrodeId]) -> Result<FeatureMatrix> {
        let positions = electrodes
            .iter()
            .map(|e| {
                self.electrode_order
                    .iter()
                    .position(|x| x == e)
                    .ok_or(Error::UnknownElectrode(*e))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.rows() * WINDOWS * positions.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            for &p in &positions {
                values.extend_from_slice(&row[WINDOWS * p..WINDOWS * (p + 1)]);
            }
        }
        Ok(FeatureMatrix {
            values,
            labels: self.labels.clone(),
            electrode_order: electrodes.to_vec(),
        })
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            values,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            electrode_order: self.electrode_order.clone(),
        }
    }

    /// Same values with replaced labels.
    pub fn with_labels(&self, labels: Vec<GestureId>) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.values.clone(), labels, self.electrode_order.clone())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Debug export: header `label,e<ID>_w<0|1|2>,...` then one row per trial.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for e in &self.electrode_order {
            for w in 0..WINDOWS {
                let _ = write!(out, ",e{e}_w{w}");
            }
        }
        out.push('\n');
        for r in 0..self.rows() {
            let _ = write!(out, "{}", self.labels[r]);
            for v in self.row(r) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Feature matrix of `trials` over `electrodes`; row `i` belongs to `trials[i]`.
pub fn build_feature_matrix(trials: &[TrialRecord], electrodes: &[ElectrodeId]) -> Result<FeatureMatrix> {
    let first = trials
        .first()
        .ok_or_else(|| Error::invalid("trials", "must not be empty"))?;
    if let Some(t) = trials.iter().find(|t| t.channels != first.channels) {
        return Err(Error::ColumnMismatch {
            context: format!("trial {} of gesture {}", t.trial_index, t.gesture_id),
            expected: first.channels,
            found: t.channels,
        });
    }
    let rows = trials
        .par_iter()
        .map(|t| extract_trial_features(t, electrodes))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        values: rows.concat(),
        labels: trials.iter().map(|t| t.gesture_id).collect(),
        electrode_order: electrodes.to_vec(),
    })
}

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and population standard deviations. Columns without
    /// variance get scale 1.
    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        let n = m.rows();
        if n == 0 {
            return Err(Error::invalid("features", "cannot fit a standardizer on zero rows"));
        }
        let cols = m.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..n {
            for (acc, v) in mean.iter_mut().zip(m.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; cols];
        for r in 0..n {
            for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, mu)| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 * mu.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::ColumnMismatch {
                context: "standardizer".into(),
                expected: self.mean.len(),
                found: m.cols(),
            });
        }
        let mut out = m.clone();
        let cols = self.mean.len();
        for row in out.values_mut().chunks_mut(cols.max(1)) {
            for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - mu) / s;
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, mu), s)| (v - mu) / s),
        );
    }
}
