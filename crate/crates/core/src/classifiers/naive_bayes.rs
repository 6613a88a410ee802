use serde::{Deserialize, Serialize};

use super::logistic::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    /// Fraction of the largest column variance added to every class variance.
    pub var_smoothing: f64,
}

impl Default for NaiveBayesParams {
    fn default() -> Self {
        Self { var_smoothing: 1e-9 }
    }
}

/// Gaussian naive Bayes with per-class means, variances and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub cols: usize,
    pub log_prior: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NaiveBayes {
    pub(crate) fn fit(x: &[f64], y: &[usize], cols: usize, classes: usize, params: &NaiveBayesParams) -> Self {
        let n = y.len();
        let mut total_mean = vec![0.0; cols];
        for row in x.chunks(cols) {
            for (m, v) in total_mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut max_var: f64 = 0.0;
        for j in 0..cols {
            let v = x.chunks(cols).map(|r| (r[j] - total_mean[j]).powi(2)).sum::<f64>() / n as f64;
            max_var = max_var.max(v);
        }
        let epsilon = params.var_smoothing * if max_var > 0.0 { max_var } else { 1.0 };

        let mut count = vec![0usize; classes];
        let mut mean = vec![0.0; classes * cols];
        for (row, &c) in x.chunks(cols).zip(y) {
            count[c] += 1;
            for (m, v) in mean[c * cols..(c + 1) * cols].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..classes {
            let k = count[c].max(1) as f64;
            mean[c * cols..(c + 1) * cols].iter_mut().for_each(|m| *m /= k);
        }
        let mut var = vec![0.0; classes * cols];
        for (row, &c) in x.chunks(cols).zip(y) {
            for j in 0..cols {
                var[c * cols + j] += (row[j] - mean[c * cols + j]).powi(2);
            }
        }
        for c in 0..classes {
            let k = count[c].max(1) as f64;
            var[c * cols..(c + 1) * cols]
                .iter_mut()
                .for_each(|v| *v = *v / k + epsilon);
        }
        let log_prior = count.iter().map(|&k| (k as f64 / n as f64).ln()).collect();
        Self {
            cols,
            log_prior,
            mean,
            var,
        }
    }

    /// Unnormalized log posterior per class.
    pub fn joint_log_likelihood(&self, row: &[f64]) -> Vec<f64> {
        let cols = self.cols;
        self.log_prior
            .iter()
            .enumerate()
            .map(|(c, prior)| {
                let mean = &self.mean[c * cols..(c + 1) * cols];
                let var = &self.var[c * cols..(c + 1) * cols];
                prior
                    + row
                        .iter()
                        .zip(mean)
                        .zip(var)
                        .map(|((x, m), v)| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m).powi(2) / (2.0 * v))
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn posteriors(&self, row: &[f64]) -> Vec<f64> {
        let jll = self.joint_log_likelihood(row);
        let max = jll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + jll.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        jll.iter().map(|v| (v - log_norm).exp()).collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.joint_log_likelihood(row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use rand::Rng;

    fn blobs(seed: u64, cols: usize) -> (Vec<f64>, Vec<usize>) {
        let mut rng = SplitMix64::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..3 {
            for _ in 0..10 {
                for j in 0..cols {
                    x.push(c as f64 * (j + 1) as f64 + rng.random_range(-1.5..1.5));
                }
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn posteriors_sum_to_one() {
        let (x, y) = blobs(1, 3);
        let nb = NaiveBayes::fit(&x, &y, 3, 3, &NaiveBayesParams::default());
        let mut rng = SplitMix64::new(2);
        for _ in 0..200 {
            let probe: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let s: f64 = nb.posteriors(&probe).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn duplicated_columns_double_log_likelihood_gaps() {
        // brute force: with balanced priors, duplicating every column doubles each
        // class's log-likelihood offset from class 0, so the argmax is unchanged
        let (x, y) = blobs(5, 2);
        let doubled: Vec<f64> = x.chunks(2).flat_map(|r| [r[0], r[1], r[0], r[1]]).collect();
        let single = NaiveBayes::fit(&x, &y, 2, 3, &NaiveBayesParams::default());
        let double = NaiveBayes::fit(&doubled, &y, 4, 3, &NaiveBayesParams::default());
        let mut rng = SplitMix64::new(9);
        for _ in 0..200 {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..8.0)).collect();
            let a = single.joint_log_likelihood(&p);
            let b = double.joint_log_likelihood(&[p[0], p[1], p[0], p[1]]);
            for c in 1..3 {
                let ga = a[c] - a[0];
                let gb = b[c] - b[0];
                assert!((gb - 2.0 * ga).abs() <= 1e-9 * ga.abs().max(1.0));
            }
            assert_eq!(argmax(&a), argmax(&b));
        }
    }
}
