//! Classifier-level fusion: thresholded voting over hard labels, averaging of
//! posteriors, and Bayes belief integration from per-classifier confusion matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecisionFusionError {
    #[error("no classifier outputs to fuse")]
    Empty,
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("posterior row {row} sums to {sum} (expected 1)")]
    NotStochastic { row: usize, sum: f64 },
    #[error("posterior row {row} has {got} entries, expected {expected}")]
    RaggedPosteriors { row: usize, expected: usize, got: usize },
    #[error("class {0} has no evaluation samples")]
    ClassAbsent(usize),
    #[error("confusion matrices disagree on class count: {expected} vs {got}")]
    ClassCountMismatch { expected: usize, got: usize },
    #[error("expected {expected} assignments, got {got}")]
    AssignmentCount { expected: usize, got: usize },
    #[error("zero probability in belief integration: {0}")]
    ZeroProbability(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, DecisionFusionError>;

/// One classifier output: a class index in `0..M`, or the reject outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Class(usize),
    Reject,
}

impl Decision {
    /// Column in an M×(M+1) confusion matrix.
    pub fn column(self, classes: usize) -> usize {
        match self {
            Self::Class(c) => c,
            Self::Reject => classes,
        }
    }

    pub fn from_column(column: usize, classes: usize) -> Self {
        if column >= classes {
            Self::Reject
        } else {
            Self::Class(column)
        }
    }

    pub fn class(self) -> Option<usize> {
        match self {
            Self::Class(c) => Some(c),
            Self::Reject => None,
        }
    }
}

fn check_decisions(d: &[Decision], classes: usize) -> Result<()> {
    if d.is_empty() {
        return Err(DecisionFusionError::Empty);
    }
    for &x in d {
        if let Decision::Class(c) = x {
            if c >= classes {
                return Err(DecisionFusionError::ClassOutOfRange { class: c, classes });
            }
        }
    }
    Ok(())
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    if v.iter().filter(|&&x| x == v[best]).count() > 1 {
        log::trace!("argmax tie at {best}, broken by lowest index");
    }
    best
}

/// Thresholded vote: the unique most-voted class wins if it gathers at
/// least `ceil(alpha·K)` of the `K` votes; otherwise the vector is rejected.
/// Rejections cast no vote.
pub fn majority_vote(d: &[Decision], classes: usize, alpha: f64) -> Result<Decision> {
    check_decisions(d, classes)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DecisionFusionError::InvalidParameter(format!("alpha {alpha} outside [0,1]")));
    }
    let mut votes = vec![0usize; classes];
    for c in d.iter().filter_map(|x| x.class()) {
        votes[c] += 1;
    }
    let top = *votes.iter().max().unwrap_or(&0);
    let leaders: Vec<usize> = (0..classes).filter(|&c| votes[c] == top).collect();
    // small slack keeps e.g. 0.5·4 from rounding up to 3
    let needed = (alpha * d.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    if leaders.len() == 1 && top >= needed && top > 0 {
        Ok(Decision::Class(leaders[0]))
    } else {
        Ok(Decision::Reject)
    }
}

/// Column means of a K×M row-stochastic posterior matrix, plus the argmax class.
pub fn bayes_average(posteriors: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let first = posteriors.first().ok_or(DecisionFusionError::Empty)?;
    let m = first.len();
    let mut fused = vec![0.0; m];
    for (row, p) in posteriors.iter().enumerate() {
        if p.len() != m {
            return Err(DecisionFusionError::RaggedPosteriors { row, expected: m, got: p.len() });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(DecisionFusionError::NotStochastic { row, sum });
        }
        for (f, x) in fused.iter_mut().zip(p) {
            *f += x;
        }
    }
    let k = posteriors.len() as f64;
    fused.iter_mut().for_each(|f| *f /= k);
    let best = argmax(&fused);
    Ok((fused, best))
}

/// Counts `n_ij` of class-`i` samples assigned to column `j`; column `M` records rejections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// `classes` rows of `classes + 1` columns.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes + 1]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if classes == 0 {
            return Err(DecisionFusionError::Empty);
        }
        for row in &counts {
            if row.len() != classes + 1 {
                return Err(DecisionFusionError::InvalidParameter(format!(
                    "row has {} columns, expected {}",
                    row.len(),
                    classes + 1
                )));
            }
        }
        Ok(Self { classes, counts })
    }

    /// Builds from an M×M table without rejections.
    pub fn from_square(counts: &[Vec<u64>]) -> Result<Self> {
        Self::from_counts(
            counts
                .iter()
                .map(|r| r.iter().copied().chain(std::iter::once(0)).collect())
                .collect(),
        )
    }

    pub fn record(&mut self, truth: usize, assigned: Decision) {
        self.counts[truth][assigned.column(self.classes)] += 1;
    }

    pub fn get(&self, truth: usize, column: usize) -> u64 {
        self.counts[truth][column]
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Diagonal mass over total; rejections count as errors.
    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Tabulates a classifier's decisions on held-out samples with known classes.
/// Every class must appear at least once.
pub fn estimate_confusion(predicted: &[Decision], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predicted.is_empty() {
        return Err(DecisionFusionError::Empty);
    }
    if predicted.len() != truths.len() {
        return Err(DecisionFusionError::AssignmentCount {
            expected: truths.len(),
            got: predicted.len(),
        });
    }
    check_decisions(predicted, classes)?;
    if let Some(&t) = truths.iter().find(|&&t| t >= classes) {
        return Err(DecisionFusionError::ClassOutOfRange { class: t, classes });
    }
    let cm = predicted
        .par_iter()
        .zip(truths)
        .fold(
            || ConfusionMatrix::new(classes),
            |mut cm, (&p, &t)| {
                cm.record(t, p);
                cm
            },
        )
        .reduce(|| ConfusionMatrix::new(classes), |a, b| a.merge(&b));
    if let Some(i) = (0..classes).find(|&i| cm.row_total(i) == 0) {
        return Err(DecisionFusionError::ClassAbsent(i));
    }
    Ok(cm)
}

/// How class priors are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Smoothed row totals pooled over all classifiers.
    #[default]
    Pooled,
    Uniform,
}

/// Column-conditional tables `P(c_i | e_k = j)` and class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefModel {
    /// Class count M; tables have M+1 columns, the last for rejection.
    pub classes: usize,
    /// Classifier count K.
    pub classifiers: usize,
    pub lambda: f64,
    /// `conditional[k][i][j] = P(c_i | e_k = j)`.
    pub conditional: Vec<Vec<Vec<f64>>>,
    pub priors: Vec<f64>,
}

/// Smoothed conditionals `(n_ij + λ) / (Σ_i n_ij + λM)` per column. A column with
/// no mass and λ = 0 is taken as uniform, the λ → 0 limit.
pub fn build_belief(confusions: &[ConfusionMatrix], lambda: f64, priors: PriorMode) -> Result<BeliefModel> {
    let m = confusions.first().ok_or(DecisionFusionError::Empty)?.classes;
    if !(lambda >= 0.0) {
        return Err(DecisionFusionError::InvalidParameter(format!("lambda {lambda} < 0")));
    }
    let mut conditional = Vec::with_capacity(confusions.len());
    for cm in confusions {
        if cm.classes != m {
            return Err(DecisionFusionError::ClassCountMismatch { expected: m, got: cm.classes });
        }
        let mut table = vec![vec![0.0; m + 1]; m];
        for j in 0..=m {
            let denom = cm.column_total(j) as f64 + lambda * m as f64;
            for (i, row) in table.iter_mut().enumerate() {
                row[j] = if denom > 0.0 {
                    (cm.get(i, j) as f64 + lambda) / denom
                } else {
                    1.0 / m as f64
                };
            }
        }
        conditional.push(table);
    }
    let priors = match priors {
        PriorMode::Uniform => vec![1.0 / m as f64; m],
        PriorMode::Pooled => {
            let rows: Vec<f64> = (0..m)
                .map(|i| confusions.iter().map(|cm| cm.row_total(i)).sum::<u64>() as f64)
                .collect();
            let total: f64 = rows.iter().sum::<f64>() + lambda * m as f64;
            if total > 0.0 {
                rows.iter().map(|r| (r + lambda) / total).collect()
            } else {
                vec![1.0 / m as f64; m]
            }
        }
    };
    Ok(BeliefModel {
        classes: m,
        classifiers: confusions.len(),
        lambda,
        conditional,
        priors,
    })
}

/// Normalized combined belief and the fused decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefOutcome {
    pub belief: Vec<f64>,
    pub decision: Decision,
}

impl BeliefModel {
    /// `Bel(i) ∝ Π_k P(c_i | e_k = j_k) / P(c_i)^(K−1)`, evaluated in log space.
    /// Rejects when the largest normalized belief is below `threshold`.
    pub fn integrate(&self, assignments: &[Decision], threshold: f64) -> Result<BeliefOutcome> {
        if assignments.len() != self.classifiers {
            return Err(DecisionFusionError::AssignmentCount {
                expected: self.classifiers,
                got: assignments.len(),
            });
        }
        check_decisions(assignments, self.classes)?;
        if let Some(i) = self.priors.iter().position(|&p| p <= 0.0) {
            return Err(DecisionFusionError::ZeroProbability(format!("prior of class {i} is zero")));
        }
        let k = assignments.len() as f64;
        let logs: Vec<f64> = (0..self.classes)
            .map(|i| {
                let mut s = -(k - 1.0) * self.priors[i].ln();
                for (table, a) in self.conditional.iter().zip(assignments) {
                    s += table[i][a.column(self.classes)].ln();
                }
                s
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(DecisionFusionError::ZeroProbability(
                "every class has a zero conditional".into(),
            ));
        }
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        let belief: Vec<f64> = unnorm.iter().map(|u| u / z).collect();
        let best = argmax(&belief);
        let decision = if belief[best] < threshold {
            Decision::Reject
        } else {
            Decision::Class(best)
        };
        Ok(BeliefOutcome { belief, decision })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("belief model serializes")
    }
}

/// Free-function form of [`BeliefModel::integrate`].
pub fn bayes_belief_integrate(model: &BeliefModel, assignments: &[Decision], threshold: f64) -> Result<BeliefOutcome> {
    model.integrate(assignments, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Decision::{Class, Reject};

    #[test]
    fn voting_examples() {
        assert_eq!(majority_vote(&[Class(0); 3], 2, 0.5).unwrap(), Class(0));
        assert_eq!(majority_vote(&[Class(0), Class(1)], 2, 0.5).unwrap(), Reject);
        assert_eq!(majority_vote(&[Class(1), Class(1), Class(0), Class(0)], 2, 0.5).unwrap(), Reject);
        assert_eq!(majority_vote(&[Class(1), Class(1), Reject, Class(0)], 2, 0.5).unwrap(), Class(1));
        assert_eq!(majority_vote(&[Class(1), Reject, Reject, Reject], 2, 0.5).unwrap(), Reject);
        assert_eq!(majority_vote(&[Reject; 3], 2, 0.0).unwrap(), Reject);
        assert_eq!(majority_vote(&[], 2, 0.5), Err(DecisionFusionError::Empty));
        assert!(majority_vote(&[Class(2)], 2, 0.5).is_err());
    }

    #[test]
    fn average_examples() {
        let (f, c) = bayes_average(&[vec![0.6, 0.4], vec![0.8, 0.2]]).unwrap();
        assert!((f[0] - 0.7).abs() < 1e-15 && (f[1] - 0.3).abs() < 1e-15);
        assert_eq!(c, 0);
        let (f, _) = bayes_average(&[vec![0.25, 0.75]]).unwrap();
        assert_eq!(f, vec![0.25, 0.75]);
        assert_eq!(bayes_average(&[vec![0.5, 0.5]]).unwrap().1, 0);
        assert!(matches!(bayes_average(&[vec![0.6, 0.6]]), Err(DecisionFusionError::NotStochastic { .. })));
    }

    #[test]
    fn confusion_estimation() {
        let truths: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let perfect: Vec<Decision> = truths.iter().map(|&t| Class(t)).collect();
        let cm = estimate_confusion(&perfect, &truths, 2).unwrap();
        assert_eq!(cm.counts, vec![vec![50, 0, 0], vec![0, 50, 0]]);
        let cm = estimate_confusion(&vec![Reject; 100], &truths, 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0, 50], vec![0, 0, 50]]);
        assert_eq!(cm.total(), 100);
        assert_eq!(cm.accuracy(), 0.0);
        assert_eq!(estimate_confusion(&[Class(0)], &[0], 2), Err(DecisionFusionError::ClassAbsent(1)));
    }

    #[test]
    fn belief_tables() {
        let cm = ConfusionMatrix::from_square(&[vec![40, 10], vec![20, 30]]).unwrap();
        let b = build_belief(&[cm.clone()], 0.0, PriorMode::Pooled).unwrap();
        assert!((b.conditional[0][0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.conditional[0][1][0] - 1.0 / 3.0).abs() < 1e-15);
        // empty rejection column, λ=1 → uniform
        let b1 = build_belief(&[cm], 1.0, PriorMode::Pooled).unwrap();
        assert_eq!(b1.conditional[0][0][2], 0.5);
        assert_eq!(b1.conditional[0][1][2], 0.5);
        for table in &b1.conditional {
            for j in 0..3 {
                let s: f64 = table.iter().map(|r| r[j]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!((b1.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let other = ConfusionMatrix::new(3);
        assert!(matches!(
            build_belief(&[ConfusionMatrix::new(2), other], 1.0, PriorMode::Pooled),
            Err(DecisionFusionError::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn identity_confusions_sharpen_with_scale() {
        let mut last = 0.0;
        for scale in [1u64, 10, 100] {
            let cm = ConfusionMatrix::from_square(&[vec![9 * scale, scale], vec![scale, 9 * scale]]).unwrap();
            let b = build_belief(&[cm], 1.0, PriorMode::Pooled).unwrap();
            let d = b.conditional[0][0][0];
            assert!(d > last);
            last = d;
        }
        assert!((last - 0.9).abs() < 1e-2);
    }

    #[test]
    fn worked_two_classifier_example() {
        let pt1 = ConfusionMatrix::from_square(&[vec![40, 10], vec![20, 30]]).unwrap();
        let pt2 = ConfusionMatrix::from_square(&[vec![45, 5], vec![15, 35]]).unwrap();
        let b = build_belief(&[pt1, pt2], 0.0, PriorMode::Pooled).unwrap();
        assert_eq!(b.priors, vec![0.5, 0.5]);
        let out = b.integrate(&[Class(0), Class(0)], 0.0).unwrap();
        // (2/3)(3/4)/0.5 = 1 vs (1/3)(1/4)/0.5 = 1/6
        assert!((out.belief[0] - 6.0 / 7.0).abs() < 1e-12);
        assert!((out.belief[1] - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(out.decision, Class(0));
        assert_eq!(b.integrate(&[Class(0), Class(0)], 0.9).unwrap().decision, Reject);
    }

    #[test]
    fn uniform_model_ties_to_first_class() {
        let cm = ConfusionMatrix::from_square(&[vec![5, 5], vec![5, 5]]).unwrap();
        let b = build_belief(&[cm.clone(), cm], 1.0, PriorMode::Uniform).unwrap();
        let out = b.integrate(&[Class(1), Class(0)], 0.0).unwrap();
        assert_eq!(out.belief, vec![0.5, 0.5]);
        assert_eq!(out.decision, Class(0));
    }

    #[test]
    fn zero_probability_is_reported() {
        let cm = ConfusionMatrix::from_square(&[vec![10, 0], vec![0, 0]]).unwrap();
        let b = build_belief(&[cm], 0.0, PriorMode::Pooled).unwrap();
        assert!(matches!(b.integrate(&[Class(0)], 0.0), Err(DecisionFusionError::ZeroProbability(_))));
    }

    #[test]
    fn model_serializes_with_explicit_shape() {
        let cm = ConfusionMatrix::from_square(&[vec![1, 2], vec![3, 4]]).unwrap();
        let b = build_belief(&[cm], 1.0, PriorMode::Pooled).unwrap();
        let v: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(v["classes"], 2);
        assert_eq!(v["classifiers"], 1);
        assert_eq!(v["lambda"], 1.0);
        let back: BeliefModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, b);
    }

    fn decision_strategy(m: usize) -> impl Strategy<Value = Decision> {
        (0..=m).prop_map(move |c| Decision::from_column(c, m))
    }

    proptest! {
        #[test]
        fn vote_is_order_invariant(mut d in prop::collection::vec(decision_strategy(3), 1..7), alpha in 0.0f64..1.0) {
            let a = majority_vote(&d, 3, alpha).unwrap();
            d.reverse();
            prop_assert_eq!(a, majority_vote(&d, 3, alpha).unwrap());
        }

        #[test]
        fn average_is_convex(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..6)) {
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() }).collect();
            let (f, _) = bayes_average(&rows).unwrap();
            for i in 0..3 {
                let lo = rows.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(f[i] >= lo - 1e-15 && f[i] <= hi + 1e-15);
            }
        }

        #[test]
        fn single_classifier_matches_conditional_argmax(
            counts in prop::collection::vec(prop::collection::vec(1u64..40, 3), 3),
            j in 0usize..3,
        ) {
            let cm = ConfusionMatrix::from_square(&counts).unwrap();
            let b = build_belief(&[cm], 0.0, PriorMode::Pooled).unwrap();
            let out = b.integrate(&[Class(j)], 0.0).unwrap();
            let column: Vec<f64> = (0..3).map(|i| b.conditional[0][i][j]).collect();
            prop_assert_eq!(out.decision, Class(argmax(&column)));
        }
    }
}
