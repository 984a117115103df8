//! k-NN and linear-probe classification on frozen embeddings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{EmbeddingIndex, RetrievalError};
use crate::store::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("k = {k} but the training set has {n} rows")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least two classes, found {0}")]
    SingleClass(usize),
    #[error("label {label} of row {row} outside [0, {n_classes})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("{labels} labels for {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no label for id {0:?}")]
    MissingLabel(String),
    #[error("labels file {path}: {message}")]
    LabelsFile { path: String, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Embedding rows with aligned integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddings {
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledEmbeddings {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, DownstreamError> {
        if labels.len() != embeddings.len() {
            return Err(DownstreamError::LengthMismatch {
                labels: labels.len(),
                rows: embeddings.len(),
            });
        }
        if n_classes < 2 {
            return Err(DownstreamError::SingleClass(n_classes));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, l)| **l >= n_classes) {
            return Err(DownstreamError::LabelOutOfRange {
                row,
                label,
                n_classes,
            });
        }
        Ok(Self {
            embeddings,
            labels,
            n_classes,
        })
    }

    /// Aligns labels to rows by id; `n_classes` is one past the largest label.
    pub fn from_label_map(
        embeddings: EmbeddingMatrix,
        labels: &HashMap<String, usize>,
    ) -> Result<Self, DownstreamError> {
        let aligned = embeddings
            .ids()
            .iter()
            .map(|id| {
                labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| DownstreamError::MissingLabel(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n_classes = aligned.iter().max().map_or(0, |m| m + 1);
        Self::new(embeddings, aligned, n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn distinct_classes(&self) -> usize {
        let mut seen = vec![false; self.n_classes];
        for l in &self.labels {
            seen[*l] = true;
        }
        seen.iter().filter(|s| **s).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 20,
            learning_rate: 0.5,
            epochs: 300,
            l2_penalty: 1e-4,
        }
    }
}

pub trait Classifier {
    fn dim(&self) -> usize;
    fn predict(&self, v: &[f32]) -> Result<usize, DownstreamError>;
}

fn argmax_smallest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Majority vote among the `k` most cosine-similar training rows.
///
/// Similarity ties go to the smaller id, vote ties to the smaller class.
pub struct KnnClassifier<'a> {
    index: EmbeddingIndex<'a>,
    labels: &'a [usize],
    n_classes: usize,
    k: usize,
}

impl<'a> KnnClassifier<'a> {
    pub fn new(train: &'a LabeledEmbeddings, k: usize) -> Result<Self, DownstreamError> {
        if train.is_empty() {
            return Err(DownstreamError::EmptyTraining);
        }
        if k == 0 {
            return Err(DownstreamError::ZeroK);
        }
        if k > train.len() {
            return Err(DownstreamError::KTooLarge { k, n: train.len() });
        }
        Ok(Self {
            index: EmbeddingIndex::new(&train.embeddings)?,
            labels: &train.labels,
            n_classes: train.n_classes,
            k,
        })
    }
}

impl Classifier for KnnClassifier<'_> {
    fn dim(&self) -> usize {
        self.index.matrix().dim()
    }

    fn predict(&self, v: &[f32]) -> Result<usize, DownstreamError> {
        let hits = self.index.rank_rows(v, None)?;
        let mut votes = vec![0u32; self.n_classes];
        for h in hits.iter().take(self.k) {
            votes[self.labels[h.row as usize]] += 1;
        }
        Ok(argmax_smallest(votes.into_iter().map(f64::from)))
    }
}

pub fn knn_classify(
    train: &LabeledEmbeddings,
    query: &[f32],
    k: usize,
) -> Result<usize, DownstreamError> {
    KnnClassifier::new(train, k)?.predict(query)
}

/// Multinomial logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Regularized training loss before each epoch, then after the last.
    pub loss_history: Vec<f64>,
}

impl LinearProbe {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for LinearProbe {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, v: &[f32]) -> Result<usize, DownstreamError> {
        if v.len() != self.dim {
            return Err(DownstreamError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let x: Vec<f64> = v.iter().map(|a| *a as f64).collect();
        Ok(argmax_smallest(self.logits(&x)))
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Full-batch gradient descent from zero weights on mean cross-entropy plus
/// `l2_penalty/2·‖W‖²`.
pub fn train_linear_probe(
    train: &LabeledEmbeddings,
    cfg: &ProbeConfig,
) -> Result<LinearProbe, DownstreamError> {
    if train.is_empty() {
        return Err(DownstreamError::EmptyTraining);
    }
    let distinct = train.distinct_classes();
    if distinct < 2 {
        return Err(DownstreamError::SingleClass(distinct));
    }
    let (n, dim, classes) = (train.len(), train.embeddings.dim(), train.n_classes);
    let xs: Vec<f64> = train.embeddings.data().iter().map(|v| *v as f64).collect();
    let mut probe = LinearProbe {
        n_classes: classes,
        dim,
        weights: vec![0.0; classes * dim],
        bias: vec![0.0; classes],
        loss_history: Vec::with_capacity(cfg.epochs + 1),
    };

    let mut grad_w = vec![0.0; classes * dim];
    let mut grad_b = vec![0.0; classes];
    for epoch in 0..=cfg.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let x = &xs[i * dim..(i + 1) * dim];
            let mut p = probe.logits(x);
            softmax_in_place(&mut p);
            let y = train.labels[i];
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            p[y] -= 1.0;
            for c in 0..classes {
                grad_b[c] += p[c];
                let g = &mut grad_w[c * dim..(c + 1) * dim];
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += p[c] * xj;
                }
            }
        }
        let w_sq: f64 = probe.weights.iter().map(|w| w * w).sum();
        probe
            .loss_history
            .push(loss / n as f64 + 0.5 * cfg.l2_penalty * w_sq);
        if epoch == cfg.epochs {
            break;
        }
        let scale = 1.0 / n as f64;
        for (w, g) in probe.weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * (g * scale + cfg.l2_penalty * *w);
        }
        for (b, g) in probe.bias.iter_mut().zip(&grad_b) {
            *b -= cfg.learning_rate * g * scale;
        }
    }
    Ok(probe)
}

/// Percentage of rows of `eval` predicted correctly.
pub fn evaluate_accuracy<C: Classifier + ?Sized>(
    model: &C,
    eval: &LabeledEmbeddings,
) -> Result<f64, DownstreamError> {
    if eval.embeddings.dim() != model.dim() {
        return Err(DownstreamError::DimensionMismatch {
            expected: model.dim(),
            found: eval.embeddings.dim(),
        });
    }
    if eval.is_empty() {
        return Err(DownstreamError::EmptyTraining);
    }
    let mut correct = 0usize;
    for (i, (_, row)) in eval.embeddings.rows().enumerate() {
        if model.predict(row)? == eval.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval.len() as f64 * 100.0)
}

/// Reads an `id,label` CSV with a header row.
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<HashMap<String, usize>, DownstreamError> {
    let path = path.as_ref();
    let err = |message: String| DownstreamError::LabelsFile {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(err(format!("short row {row:?}")));
        };
        let label = label
            .trim()
            .parse()
            .map_err(|_| err(format!("bad label {label:?} for {id:?}")))?;
        if out.insert(id.to_owned(), label).is_some() {
            return Err(err(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(rows: &[(&str, Vec<f32>, usize)], n_classes: usize) -> LabeledEmbeddings {
        let dim = rows[0].1.len();
        let m = EmbeddingMatrix::from_rows(dim, rows.iter().map(|(id, v, _)| (*id, v.clone())))
            .unwrap();
        LabeledEmbeddings::new(m, rows.iter().map(|r| r.2).collect(), n_classes).unwrap()
    }

    #[test]
    fn knn_examples() {
        let train = labeled(
            &[
                ("a", vec![1.0, 0.0], 1),
                ("b", vec![0.9, 0.1], 0),
                ("c", vec![0.8, 0.2], 0),
                ("d", vec![0.0, 1.0], 1),
            ],
            2,
        );
        assert_eq!(knn_classify(&train, &[0.0, 1.0], 1).unwrap(), 1);
        assert_eq!(knn_classify(&train, &[0.85, 0.15], 3).unwrap(), 0);
        // neighbors b (0) and a (1): tie goes to class 0
        assert_eq!(knn_classify(&train, &[0.95, 0.05], 2).unwrap(), 0);
        assert!(matches!(
            knn_classify(&train, &[1.0, 0.0], 5),
            Err(DownstreamError::KTooLarge { k: 5, n: 4 })
        ));
    }

    #[test]
    fn knn_self_evaluation_is_perfect() {
        let rows: Vec<_> = (0..12)
            .map(|i| {
                let angle = i as f32 * 0.5;
                (format!("r{i}"), vec![angle.cos(), angle.sin(), 0.3], i % 3)
            })
            .collect();
        let refs: Vec<_> = rows
            .iter()
            .map(|(id, v, l)| (id.as_str(), v.clone(), *l))
            .collect();
        let train = labeled(&refs, 3);
        let knn = KnnClassifier::new(&train, 1).unwrap();
        assert_eq!(evaluate_accuracy(&knn, &train).unwrap(), 100.0);
    }

    #[test]
    fn zero_epochs_predicts_class_zero() {
        let train = labeled(
            &[
                ("a", vec![1.0, 0.0], 0),
                ("b", vec![0.0, 1.0], 1),
                ("c", vec![0.5, 0.5], 1),
                ("d", vec![0.2, 0.1], 0),
            ],
            2,
        );
        let probe = train_linear_probe(
            &train,
            &ProbeConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(probe.weights.iter().all(|w| *w == 0.0));
        assert_eq!(evaluate_accuracy(&probe, &train).unwrap(), 50.0);
        assert_eq!(probe.loss_history.len(), 1);
        assert!((probe.loss_history[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_features_get_identical_weights() {
        let train = labeled(
            &[
                ("a", vec![1.0, 1.0, 0.2], 0),
                ("b", vec![-0.5, -0.5, 0.9], 1),
                ("c", vec![0.3, 0.3, -0.4], 2),
                ("d", vec![0.7, 0.7, 0.1], 0),
            ],
            3,
        );
        let probe = train_linear_probe(&train, &ProbeConfig::default()).unwrap();
        for c in 0..3 {
            assert_eq!(probe.weights[c * 3], probe.weights[c * 3 + 1]);
        }
    }

    #[test]
    fn single_class_rejected() {
        let train = labeled(&[("a", vec![1.0], 0), ("b", vec![2.0], 0)], 2);
        assert!(matches!(
            train_linear_probe(&train, &ProbeConfig::default()),
            Err(DownstreamError::SingleClass(1))
        ));
    }

    #[test]
    fn constant_predictor_scores_majority_share() {
        struct Always(usize);
        impl Classifier for Always {
            fn dim(&self) -> usize {
                1
            }
            fn predict(&self, _: &[f32]) -> Result<usize, DownstreamError> {
                Ok(self.0)
            }
        }
        let eval = labeled(
            &[
                ("a", vec![1.0], 1),
                ("b", vec![1.0], 1),
                ("c", vec![1.0], 0),
                ("d", vec![1.0], 1),
            ],
            2,
        );
        assert_eq!(evaluate_accuracy(&Always(1), &eval).unwrap(), 75.0);
        let wide = labeled(&[("a", vec![1.0, 2.0], 1), ("b", vec![1.0, 0.0], 0)], 2);
        assert!(matches!(
            evaluate_accuracy(&Always(1), &wide),
            Err(DownstreamError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn labels_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "id,label\nx,1\ny,0\n").unwrap();
        let labels = read_labels_csv(&path).unwrap();
        assert_eq!(labels["x"], 1);
        let m = EmbeddingMatrix::from_rows(1, [("y", vec![1.0]), ("x", vec![2.0])]).unwrap();
        let l = LabeledEmbeddings::from_label_map(m, &labels).unwrap();
        assert_eq!(l.labels, vec![0, 1]);
        assert_eq!(l.n_classes, 2);
        std::fs::write(&path, "id,label\nx,one\n").unwrap();
        assert!(matches!(
            read_labels_csv(&path),
            Err(DownstreamError::LabelsFile { .. })
        ));
    }
}
