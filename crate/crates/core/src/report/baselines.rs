//! Classical baselines evaluated on the same folds as the network:
//! k-nearest-neighbor majority vote, multinomial logistic regression, and
//! the majority-class floor.

use crate::error::{Error, Result};

/// Euclidean k-NN majority vote over scaled features. Ties in the vote break
/// toward the smallest class index.
pub fn knn_baseline(
    train_x: &[f64],
    train_y: &[usize],
    test_x: &[f64],
    n_features: usize,
    n_classes: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let n_train = train_y.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n_train {
        return Err(Error::Config(format!(
            "k = {k} exceeds the training set size {n_train}"
        )));
    }
    assert_eq!(train_x.len(), n_train * n_features);
    let n_test = test_x.len() / n_features;
    let mut preds = Vec::with_capacity(n_test);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n_train);
    for i in 0..n_test {
        let q = &test_x[i * n_features..(i + 1) * n_features];
        dists.clear();
        for j in 0..n_train {
            let row = &train_x[j * n_features..(j + 1) * n_features];
            let d: f64 = q.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push((d, j));
        }
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_classes];
        for &(_, j) in dists.iter().take(k) {
            votes[train_y[j]] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    Ok(preds)
}

/// Multinomial logistic regression trained by full-batch gradient descent on
/// the cross-entropy. Weights start at zero, so zero epochs give the uniform
/// predictor.
pub struct LogisticModel {
    pub weights: Vec<f64>, // [(F+1) × C], last row is the bias
    pub n_features: usize,
    pub n_classes: usize,
}

impl LogisticModel {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let f = self.n_features;
        let mut out = vec![0.0; c];
        for j in 0..f {
            let v = x[j];
            if v != 0.0 {
                for k in 0..c {
                    out[k] += v * self.weights[j * c + k];
                }
            }
        }
        for k in 0..c {
            out[k] += self.weights[f * c + k];
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> Vec<usize> {
        let f = self.n_features;
        (0..x.len() / f)
            .map(|i| {
                let logits = self.logits(&x[i * f..(i + 1) * f]);
                let mut best = 0;
                for (k, v) in logits.iter().enumerate() {
                    if *v > logits[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Mean cross-entropy and its gradient for the flat weight vector.
pub fn logistic_loss_grad(
    weights: &[f64],
    x: &[f64],
    y: &[usize],
    n_features: usize,
    n_classes: usize,
) -> (f64, Vec<f64>) {
    let n = y.len();
    let f = n_features;
    let c = n_classes;
    let mut loss = 0.0;
    let mut grad = vec![0.0; (f + 1) * c];
    for i in 0..n {
        let xi = &x[i * f..(i + 1) * f];
        let mut logits = vec![0.0; c];
        for j in 0..f {
            for k in 0..c {
                logits[k] += xi[j] * weights[j * c + k];
            }
        }
        for k in 0..c {
            logits[k] += weights[f * c + k];
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - logits[y[i]];
        for k in 0..c {
            let p = (logits[k] - lse).exp();
            let err = p - if k == y[i] { 1.0 } else { 0.0 };
            for j in 0..f {
                grad[j * c + k] += err * xi[j];
            }
            grad[f * c + k] += err;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss, grad)
}

pub fn logistic_baseline(
    train_x: &[f64],
    train_y: &[usize],
    test_x: &[f64],
    n_features: usize,
    n_classes: usize,
    epochs: usize,
    lr: f64,
) -> Result<Vec<usize>> {
    if train_y.is_empty() {
        return Err(Error::Config("logistic baseline needs training data".into()));
    }
    let mut weights = vec![0.0; (n_features + 1) * n_classes];
    for _ in 0..epochs {
        let (_, grad) = logistic_loss_grad(&weights, train_x, train_y, n_features, n_classes);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    let model = LogisticModel {
        weights,
        n_features,
        n_classes,
    };
    Ok(model.predict(test_x))
}

/// Aggregate cross-validated accuracies of the classical baselines over the
/// exact window folds the network uses, with per-fold train-only scaling.
pub struct BaselineAccuracies {
    pub majority: f64,
    pub knn: f64,
    pub logistic: f64,
}

pub fn baseline_cv(
    data: &crate::model::train::TaskData,
    split: &crate::model::train::FoldSplit,
    knn_k: usize,
    logistic_epochs: usize,
    logistic_lr: f64,
) -> Result<BaselineAccuracies> {
    let n_windows = data.windows.windows.len();
    let mut correct = [0usize; 3];
    let mut total = 0usize;
    for fold in &split.folds {
        let test_rows: Vec<usize> = fold
            .iter()
            .flat_map(|&w| data.windows.windows[w].clone())
            .collect();
        let train_rows: Vec<usize> = (0..n_windows)
            .filter(|w| !fold.contains(w))
            .flat_map(|w| data.windows.windows[w].clone())
            .collect();
        let scaler = crate::data::Scaler::fit_rows(&data.matrix, &train_rows)?;
        let scaled = scaler.transform(&data.matrix);
        let gather = |rows: &[usize]| -> (Vec<f64>, Vec<usize>) {
            let mut x = Vec::with_capacity(rows.len() * data.n_features);
            let mut y = Vec::with_capacity(rows.len());
            for &i in rows {
                x.extend_from_slice(scaled.row(i));
                y.push(data.labels[i]);
            }
            (x, y)
        };
        let (train_x, train_y) = gather(&train_rows);
        let (test_x, test_y) = gather(&test_rows);

        let majority = majority_baseline(&train_y, data.n_classes, test_y.len());
        let knn = knn_baseline(&train_x, &train_y, &test_x, data.n_features, data.n_classes, knn_k)?;
        let logistic = logistic_baseline(
            &train_x,
            &train_y,
            &test_x,
            data.n_features,
            data.n_classes,
            logistic_epochs,
            logistic_lr,
        )?;
        for (i, &truth) in test_y.iter().enumerate() {
            if majority[i] == truth {
                correct[0] += 1;
            }
            if knn[i] == truth {
                correct[1] += 1;
            }
            if logistic[i] == truth {
                correct[2] += 1;
            }
        }
        total += test_y.len();
    }
    let pct = |c: usize| 100.0 * c as f64 / total.max(1) as f64;
    Ok(BaselineAccuracies {
        majority: pct(correct[0]),
        knn: pct(correct[1]),
        logistic: pct(correct[2]),
    })
}

/// Most frequent training class (ties to the smallest index), predicted for
/// every test sample.
pub fn majority_baseline(train_y: &[usize], n_classes: usize, n_test: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &y in train_y {
        counts[y] += 1;
    }
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    vec![best; n_test]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn knn_exact_match_returns_that_label() {
        let train_x = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let train_y = vec![0, 1, 2];
        let preds = knn_baseline(&train_x, &train_y, &[1.0, 1.0], 2, 3, 1).unwrap();
        assert_eq!(preds, vec![1]);
    }

    #[test]
    fn knn_separable_clusters_classify_perfectly() {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..40 {
            let class = i % 2;
            let center = if class == 0 { -10.0 } else { 10.0 };
            train_x.push(center + rng.gen_range(-0.5..0.5));
            train_x.push(center + rng.gen_range(-0.5..0.5));
            train_y.push(class);
        }
        let test_x = vec![-10.2, -9.8, 9.7, 10.3];
        let preds = knn_baseline(&train_x, &train_y, &test_x, 2, 2, 5).unwrap();
        assert_eq!(preds, vec![0, 1]);
    }

    #[test]
    fn knn_agrees_with_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = 3;
        let n_train = 50;
        let train_x: Vec<f64> = (0..n_train * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let train_y: Vec<usize> = (0..n_train).map(|_| rng.gen_range(0..3)).collect();
        let test_x: Vec<f64> = (0..30 * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = 5;
        let preds = knn_baseline(&train_x, &train_y, &test_x, f, 3, k).unwrap();
        for (i, &pred) in preds.iter().enumerate() {
            // exhaustive distance sort
            let q = &test_x[i * f..(i + 1) * f];
            let mut d: Vec<(f64, usize)> = (0..n_train)
                .map(|j| {
                    let row = &train_x[j * f..(j + 1) * f];
                    (
                        q.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                        j,
                    )
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = [0usize; 3];
            for &(_, j) in d.iter().take(k) {
                votes[train_y[j]] += 1;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            assert_eq!(pred, best);
        }
    }

    #[test]
    fn knn_rejects_k_beyond_train_size() {
        assert!(knn_baseline(&[0.0, 0.0], &[0], &[0.0, 0.0], 2, 2, 2).is_err());
    }

    #[test]
    fn knn_vote_ties_break_to_smallest_class() {
        // two train points equidistant from the query, classes 1 and 0
        let train_x = vec![-1.0, 0.0, 1.0, 0.0];
        let train_y = vec![1, 0];
        let preds = knn_baseline(&train_x, &train_y, &[0.0, 0.0], 2, 2, 2).unwrap();
        assert_eq!(preds, vec![0]);
    }

    #[test]
    fn logistic_separable_reaches_full_train_accuracy() {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        for i in 0..60 {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            train_x.push(center + (i as f64 * 0.01));
            train_x.push(center * 0.5);
            train_y.push(class);
        }
        let preds = logistic_baseline(&train_x, &train_y, &train_x, 2, 2, 300, 0.5).unwrap();
        let correct = preds.iter().zip(&train_y).filter(|(p, t)| p == t).count();
        assert_eq!(correct, 60);
    }

    #[test]
    fn untrained_logistic_is_the_uniform_predictor() {
        let train_x = vec![1.0, 2.0, 3.0, 4.0];
        let train_y = vec![0, 1];
        let test_x = vec![5.0, 6.0, -1.0, 0.5];
        let preds = logistic_baseline(&train_x, &train_y, &test_x, 2, 2, 0, 0.1).unwrap();
        // zero weights: all logits equal, argmax tie goes to class 0
        assert_eq!(preds, vec![0, 0]);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (f, c, n) = (3, 3, 12);
        let x: Vec<f64> = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let mut w: Vec<f64> = (0..(f + 1) * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (_, grad) = logistic_loss_grad(&w, &x, &y, f, c);
        let h = 1e-6;
        for i in 0..w.len() {
            let orig = w[i];
            w[i] = orig + h;
            let (up, _) = logistic_loss_grad(&w, &x, &y, f, c);
            w[i] = orig - h;
            let (down, _) = logistic_loss_grad(&w, &x, &y, f, c);
            w[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (grad[i] - numeric).abs() < 1e-4 * (grad[i].abs() + numeric.abs()).max(1e-3),
                "coord {i}: {} vs {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn majority_baseline_picks_most_frequent() {
        assert_eq!(majority_baseline(&[1, 1, 0, 2, 1], 3, 2), vec![1, 1]);
        // tie: classes 0 and 1 both appear twice; smallest index wins
        assert_eq!(majority_baseline(&[0, 1, 1, 0], 2, 1), vec![0]);
    }
}
