//! Multinomial logistic regression trained by per-sample SGD.
//!
//! Objective: mean softmax cross-entropy plus `l2_lambda / 2 * ||W||^2` over
//! the non-bias weights. The learning rate is `learning_rate / (1 + epoch)`
//! and rows are reshuffled every epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2_lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-4,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

/// Weights are `classes x (cols + 1)`, row-major, bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub cols: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
}

fn scores(weights: &[f64], cols: usize, classes: usize, row: &[f64], out: &mut [f64]) {
    for (c, s) in out.iter_mut().enumerate().take(classes) {
        let w = &weights[c * (cols + 1)..(c + 1) * (cols + 1)];
        *s = w[cols] + w[..cols].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Objective value and its analytic gradient with respect to `weights`.
pub fn loss_and_gradient(
    weights: &[f64],
    x: &[f64],
    y: &[usize],
    cols: usize,
    classes: usize,
    l2_lambda: f64,
) -> (f64, Vec<f64>) {
    let n = y.len();
    let stride = cols + 1;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let mut p = vec![0.0; classes];
    for (i, &label) in y.iter().enumerate() {
        let row = &x[i * cols..(i + 1) * cols];
        scores(weights, cols, classes, row, &mut p);
        softmax_in_place(&mut p);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        for c in 0..classes {
            let d = (p[c] - if c == label { 1.0 } else { 0.0 }) / n as f64;
            let g = &mut grad[c * stride..(c + 1) * stride];
            for (gj, xj) in g[..cols].iter_mut().zip(row) {
                *gj += d * xj;
            }
            g[cols] += d;
        }
    }
    loss /= n as f64;
    for c in 0..classes {
        for j in 0..cols {
            let w = weights[c * stride + j];
            loss += 0.5 * l2_lambda * w * w;
            grad[c * stride + j] += l2_lambda * w;
        }
    }
    (loss, grad)
}

impl Logistic {
    pub(crate) fn fit(x: &[f64], y: &[usize], cols: usize, classes: usize, params: &LogisticParams, seed: u64) -> Self {
        let mut rng = rng::stream(rng::derive(seed, tag::LOGISTIC), 0);
        let mut weights: Vec<f64> = (0..classes * (cols + 1))
            .map(|_| rng.random_range(-0.01..0.01))
            .collect();
        let mut order: Vec<usize> = (0..y.len()).collect();
        for epoch in 0..params.epochs {
            let lr = params.learning_rate / (1.0 + epoch as f64);
            order.shuffle(&mut rng);
            for &i in &order {
                let row = &x[i * cols..(i + 1) * cols];
                let (_, grad) = loss_and_gradient(&weights, row, &y[i..=i], cols, classes, params.l2_lambda);
                for (w, g) in weights.iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
            }
        }
        Self { cols, classes, weights }
    }

    pub fn probabilities(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        scores(&self.weights, self.cols, self.classes, row, &mut p);
        softmax_in_place(&mut p);
        p
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut s = vec![0.0; self.classes];
        scores(&self.weights, self.cols, self.classes, row, &mut s);
        argmax(&s)
    }
}

/// Index of the first maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn gradient_matches_central_differences() {
        let (rows, cols, classes) = (5, 4, 3);
        let mut rng = SplitMix64::new(42);
        let x: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = vec![0, 1, 2, 1, 0];
        let w: Vec<f64> = (0..classes * (cols + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = 0.3;
        let (_, grad) = loss_and_gradient(&w, &x, &y, cols, classes, lambda);
        let h = 1e-5;
        for j in 0..w.len() {
            let mut plus = w.clone();
            plus[j] += h;
            let mut minus = w.clone();
            minus[j] -= h;
            let numeric = (loss_and_gradient(&plus, &x, &y, cols, classes, lambda).0
                - loss_and_gradient(&minus, &x, &y, cols, classes, lambda).0)
                / (2.0 * h);
            let rel = (numeric - grad[j]).abs() / numeric.abs().max(grad[j].abs()).max(1e-8);
            assert!(rel <= 1e-4, "weight {j}: analytic {} numeric {numeric}", grad[j]);
        }
    }

    #[test]
    fn separates_two_blobs() {
        let x = vec![-2.0, -1.5, -1.0, 1.0, 1.5, 2.0];
        let y = vec![0, 0, 0, 1, 1, 1];
        let model = Logistic::fit(&x, &y, 1, 2, &LogisticParams::default(), 0);
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(model.predict(&x[i..=i]), label);
        }
        let p = model.probabilities(&[0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
