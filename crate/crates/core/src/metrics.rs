//! Cross-entropy loss, confusion matrices, and support-weighted metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_probs(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match *probs.shape() {
        [b, k] => (b, k),
        _ => return Err(Error::Shape(format!("expected [B,K] probabilities, got {:?}", probs.shape()))),
    };
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} outside [0, {k})")));
    }
    Ok((b, k))
}

/// Mean over the batch of `-ln p[label]`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = check_probs(probs, labels)?;
    let total: f64 = probs
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / b as f64)
}

/// Gradient of `cross_entropy(softmax(logits))` with respect to the logits.
pub fn softmax_ce_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = check_probs(probs, labels)?;
    let mut grad = probs.clone();
    for (row, &l) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[l] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b as f64);
    }
    Ok(grad)
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(x: &Tensor) -> Vec<usize> {
    let k = *x.shape().last().unwrap_or(&1);
    x.data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    /// Adds another matrix's counts, cell by cell.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Input(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Tallies predictions against labels.
pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::Input(format!("class index ({t}, {p}) outside [0, {k})")));
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<u64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "accuracy,precision,recall,f1";

    /// `accuracy,precision,recall,f1` as percentages with two decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.2},{:.2}",
            self.accuracy * 100.0,
            self.precision_weighted * 100.0,
            self.recall_weighted * 100.0,
            self.f1_weighted * 100.0
        )
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 plus support-weighted averages.
///
/// Classes whose denominator is zero score 0 for that metric.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("cannot score an empty confusion matrix".into()));
    }
    let k = cm.classes();
    let mut report = MetricsReport {
        accuracy: ratio(cm.trace(), total),
        precision_weighted: 0.0,
        recall_weighted: 0.0,
        f1_weighted: 0.0,
        per_class_precision: Vec::with_capacity(k),
        per_class_recall: Vec::with_capacity(k),
        per_class_f1: Vec::with_capacity(k),
        support: Vec::with_capacity(k),
    };
    for c in 0..k {
        let tp = cm.get(c, c);
        let support = cm.row_sum(c);
        let p = ratio(tp, cm.col_sum(c));
        let r = ratio(tp, support);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let weight = support as f64 / total as f64;
        report.precision_weighted += weight * p;
        report.recall_weighted += weight * r;
        report.f1_weighted += weight * f1;
        report.per_class_precision.push(p);
        report.per_class_recall.push(r);
        report.per_class_f1.push(f1);
        report.support.push(support);
    }
    Ok(report)
}

/// Micro-averaged precision, recall and F1 (pooled counts).
pub fn micro_metrics(cm: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("cannot score an empty confusion matrix".into()));
    }
    let tp = cm.trace();
    let fp: u64 = (0..cm.classes()).map(|c| cm.col_sum(c) - cm.get(c, c)).sum();
    let fn_: u64 = (0..cm.classes()).map(|c| cm.row_sum(c) - cm.get(c, c)).sum();
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok((p, r, f1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        let onehot = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[1]).unwrap(), 0.0);

        let uniform = Tensor::full(&[1, 48], 1.0 / 48.0).unwrap();
        let l = cross_entropy(&uniform, &[5]).unwrap();
        assert!((l - 3.871_201_010_907_891).abs() < 1e-12);

        let p = Tensor::from_vec(&[2, 2], vec![0.8, 0.2, 0.4, 0.6]).unwrap();
        let l = cross_entropy(&p, &[0, 1]).unwrap();
        assert!((l - (-(0.8f64).ln() - (0.6f64).ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&p, &[1]).unwrap(), -PROB_FLOOR.ln());
    }

    #[test]
    fn label_out_of_range() {
        let p = Tensor::full(&[1, 3], 1.0 / 3.0).unwrap();
        assert!(matches!(cross_entropy(&p, &[3]), Err(Error::Label(_))));
        assert!(matches!(softmax_ce_backward(&p, &[7]), Err(Error::Label(_))));
    }

    #[test]
    fn ce_gradient_optimum_and_row_sums() {
        let onehot = Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let g = softmax_ce_backward(&onehot, &[1, 0]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        use crate::layers::gradcheck::*;
        let logits = random(&[3, 5], 77).map(|v| v * 3.0);
        let labels = [4, 0, 2];
        let g = softmax_ce_backward(&softmax(&logits).unwrap(), &labels).unwrap();
        let num = numeric_grad(&logits, 1e-5, |z| cross_entropy(&softmax(z).unwrap(), &labels).unwrap());
        assert!(rel_error(g.data(), &num) <= 1e-6);
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        let cm = confusion(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 1), cm.get(1, 0)), (1, 1, 1, 0));
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::Input(_))));
        assert!(matches!(confusion(&[2], &[0], 2), Err(Error::Input(_))));
    }

    #[test]
    fn perfect_and_single_class() {
        let r = weighted_metrics(&confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap()).unwrap();
        assert_eq!((r.accuracy, r.precision_weighted, r.recall_weighted, r.f1_weighted), (1.0, 1.0, 1.0, 1.0));
        let r = weighted_metrics(&ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.recall_weighted, 1.0);
        assert!(weighted_metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn two_by_two_hand_oracle() {
        // class 0: TP 3, FN 1, FP 2 -> P 3/5, R 3/4, F1 2/3
        // class 1: TP 4, FN 2, FP 1 -> P 4/5, R 4/6, F1 8/11
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        let r = weighted_metrics(&cm).unwrap();
        let p = 0.4 * 0.6 + 0.6 * 0.8;
        let rec = 0.4 * 0.75 + 0.6 * (4.0 / 6.0);
        let f1 = 0.4 * (2.0 / 3.0) + 0.6 * (8.0 / 11.0);
        assert!((r.accuracy - 0.7).abs() < 1e-12);
        assert!((r.precision_weighted - p).abs() < 1e-12);
        assert!((r.recall_weighted - rec).abs() < 1e-12);
        assert!((r.f1_weighted - f1).abs() < 1e-12);
    }

    #[test]
    fn csv_row_formats_percentages() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        assert_eq!(weighted_metrics(&cm).unwrap().csv_row(), "70.00,72.00,70.00,70.30");
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (1usize..=10).prop_flat_map(|k| {
            proptest::collection::vec(0u64..50, k * k).prop_map(move |cells| {
                let mut rows: Vec<Vec<u64>> = cells.chunks(k).map(<[u64]>::to_vec).collect();
                rows[0][0] += 1;
                ConfusionMatrix::from_rows(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(cm in matrix()) {
            let r = weighted_metrics(&cm).unwrap();
            prop_assert!((r.recall_weighted - r.accuracy).abs() <= 1e-12);
            for v in [r.accuracy, r.precision_weighted, r.recall_weighted, r.f1_weighted] {
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
            }
        }

        #[test]
        fn micro_averages_collapse_to_accuracy(cm in matrix()) {
            let r = weighted_metrics(&cm).unwrap();
            let (p, rec, f1) = micro_metrics(&cm).unwrap();
            prop_assert!((p - r.accuracy).abs() <= 1e-12);
            prop_assert!((rec - r.accuracy).abs() <= 1e-12);
            prop_assert!((f1 - r.accuracy).abs() <= 1e-12);
        }

        #[test]
        fn ce_backward_rows_sum_to_zero(vals in proptest::collection::vec(-20.0f64..20.0, 12), l0 in 0usize..4, l1 in 0usize..4, l2 in 0usize..4) {
            let p = softmax(&Tensor::from_vec(&[3, 4], vals).unwrap()).unwrap();
            let labels = [l0, l1, l2];
            let g = softmax_ce_backward(&p, &labels).unwrap();
            for row in g.data().chunks(4) {
                prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
            }
            prop_assert!(cross_entropy(&p, &labels).unwrap() >= 0.0);
        }
    }
}
