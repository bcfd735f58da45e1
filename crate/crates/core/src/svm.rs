//! Binary soft-margin kernel SVM trained by sequential minimal optimization,
//! with Platt sigmoid calibration of the decision values.
//!
//! The dual problem solved is
//!
//! ```text
//! max  Σα − ½ ΣΣ α_i α_j y_i y_j K(x_i, x_j)
//! s.t. 0 ≤ α_i ≤ C,  Σ α_i y_i = 0
//! ```
//!
//! Each step picks the maximal violating pair (first-order working set
//! selection) and solves the two-variable subproblem analytically. Training
//! stops when the violation `max_{I_up} −y G − min_{I_low} −y G` drops below `tol`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision_fusion::Decision;
use crate::feature_fusion::ZScoreStats;
use crate::persist;

/// Smallest curvature used when the two-variable subproblem is not strictly convex.
const TAU: f64 = 1e-12;
/// Posteriors are kept this far from 0 and 1.
const POSTERIOR_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training set needs both labels, got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("labels must be +1 or -1, got {0}")]
    BadLabel(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature and label counts differ: {features} vs {labels}")]
    LengthMismatch { features: usize, labels: usize },
    #[error("SMO did not converge after {iterations} iterations (violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Persist(#[from] persist::PersistError),
}

pub type Result<T> = std::result::Result<T, SvmError>;

/// A resolved kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Self::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Self::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Kernel as configured; an RBF without gamma resolves it from the
/// standardized training data as `1 / (dim · variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    Rbf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
}

impl Default for KernelChoice {
    fn default() -> Self {
        Self::Rbf { gamma: None }
    }
}

impl KernelChoice {
    pub fn resolve(&self, standardized: &[Vec<f64>]) -> KernelSpec {
        match *self {
            Self::Linear => KernelSpec::Linear,
            Self::Rbf { gamma: Some(gamma) } => KernelSpec::Rbf { gamma },
            Self::Rbf { gamma: None } => {
                let dim = standardized.first().map_or(1, Vec::len).max(1);
                let n = (standardized.len() * dim) as f64;
                let mean = standardized.iter().flatten().sum::<f64>() / n;
                let var = standardized.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let var = if var > 0.0 { var } else { 1.0 };
                KernelSpec::Rbf {
                    gamma: 1.0 / (dim as f64 * var),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub kernel: KernelChoice,
    /// Box constraint.
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iterations: usize,
    /// Folds used to produce out-of-fold decision values for calibration.
    pub calibration_folds: usize,
    pub seed: u64,
    /// Standardize features with training-set statistics before solving.
    pub standardize: bool,
    /// Track the dual objective after every step.
    pub monitor_objective: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::default(),
            c: 1.0,
            tol: 1e-3,
            max_iterations: 10_000_000,
            calibration_folds: 3,
            seed: 0,
            standardize: true,
            monitor_objective: false,
        }
    }
}

/// Result of the dual optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective `Σα − ½αᵀQα`.
    pub objective: f64,
    pub iterations: usize,
    /// Final maximal KKT violation.
    pub violation: f64,
    /// `false` if the monitored objective ever decreased.
    pub objective_monotone: bool,
}

/// Solves the SVM dual for a precomputed kernel matrix `gram` (row-major n×n).
pub fn solve_dual(gram: &[f64], y: &[f64], c: f64, tol: f64, max_iterations: usize, monitor: bool) -> Result<DualSolution> {
    let n = y.len();
    if gram.len() != n * n {
        return Err(SvmError::DimensionMismatch {
            expected: n * n,
            got: gram.len(),
        });
    }
    if !(c > 0.0) || !(tol > 0.0) {
        return Err(SvmError::InvalidParameter(format!("C={c}, tol={tol}")));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let objective = |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>();

    let mut iterations = 0;
    let mut monotone = true;
    let mut last_obj: f64 = 0.0;
    let violation = loop {
        // maximal violating pair, lowest index on ties
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let gap = if i == usize::MAX || j == usize::MAX { 0.0 } else { gmax - gmin };
        if gap < tol {
            break gap;
        }
        if iterations >= max_iterations {
            return Err(SvmError::NonConvergence { iterations, violation: gap });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        if monitor {
            let obj = objective(&alpha, &grad);
            if obj < last_obj - 1e-12 * (1.0 + last_obj.abs()) {
                monotone = false;
            }
            last_obj = obj;
        }
    };

    // bias from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    Ok(DualSolution {
        objective: objective(&alpha, &grad),
        alpha,
        bias: -rho,
        iterations,
        violation,
        objective_monotone: monotone,
    })
}

/// Sigmoid `p(+1 | f) = 1 / (1 + exp(a·f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR)
    }
}

/// Fits Platt's sigmoid by regularized maximum likelihood (Newton's method
/// with backtracking, using the smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`).
pub fn fit_platt(scores: &[f64], labels: &[f64]) -> Result<PlattParams> {
    if scores.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l > 0.0).count() as f64;
    let negatives = labels.len() as f64 - positives;
    let hi = (positives + 1.0) / (positives + 2.0);
    let lo = 1.0 / (negatives + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l > 0.0 { hi } else { lo }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&f, &t)| {
                let z = f * a + b;
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b): (f64, f64) = (0.0, ((negatives + 1.0) / (positives + 1.0)).ln());
    let mut fval = nll(a, b);
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;
    const MIN_STEP: f64 = 1e-10;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2): (f64, f64, f64, f64, f64) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in scores.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            log::debug!("platt line search stalled");
            break;
        }
    }
    Ok(PlattParams { a, b })
}

/// Hard output of a binary classifier. `Positive` is class index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryDecision {
    Positive,
    Negative,
    Reject,
}

impl BinaryDecision {
    pub fn to_decision(self) -> Decision {
        match self {
            Self::Positive => Decision::Class(0),
            Self::Negative => Decision::Class(1),
            Self::Reject => Decision::Reject,
        }
    }
}

/// A trained, calibrated binary SVM. Support vectors live in standardized space.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedClassifier {
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub platt: PlattParams,
    pub feature_stats: ZScoreStats,
    pub solver: SolverSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub violation: f64,
    pub objective: f64,
    pub objective_monotone: bool,
    /// Calibration used out-of-fold scores (false: fell back to training scores).
    pub out_of_fold_calibration: bool,
}

fn validate(features: &[Vec<f64>], labels: &[f64]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    for &l in labels {
        if l != 1.0 && l != -1.0 {
            return Err(SvmError::BadLabel(l));
        }
    }
    let positives = labels.iter().filter(|&&l| l > 0.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(SvmError::SingleClass { positives, negatives });
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(SvmError::DimensionMismatch { expected: dim, got: f.len() });
        }
    }
    Ok(dim)
}

struct RawModel {
    support_vectors: Vec<Vec<f64>>,
    dual_coefs: Vec<f64>,
    bias: f64,
    solution: DualSolution,
}

impl RawModel {
    fn decision(&self, kernel: &KernelSpec, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(s, c)| c * kernel.eval(s, x))
            .sum::<f64>()
            + self.bias
    }
}

fn gram_matrix(kernel: &KernelSpec, xs: &[&[f64]]) -> Vec<f64> {
    let n = xs.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(xs[i], xs[j]);
            g[i * n + j] = k;
            g[j * n + i] = k;
        }
    }
    g
}

fn fit_raw(kernel: &KernelSpec, xs: &[&[f64]], y: &[f64], params: &TrainParams) -> Result<RawModel> {
    let gram = gram_matrix(kernel, xs);
    let solution = solve_dual(&gram, y, params.c, params.tol, params.max_iterations, params.monitor_objective)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, &a) in solution.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(xs[i].to_vec());
            dual_coefs.push(a * y[i]);
        }
    }
    Ok(RawModel {
        support_vectors,
        dual_coefs,
        bias: solution.bias,
        solution,
    })
}

/// Stratified fold index (labels ±1) for each sample, deterministic in `seed`.
pub fn stratified_folds(labels: &[f64], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for sign in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == sign).collect();
        idx.shuffle(&mut rng);
        for (rank, i) in idx.into_iter().enumerate() {
            assignment[i] = rank % folds;
        }
    }
    assignment
}

/// Trains a calibrated classifier on `features` with labels ±1.
pub fn train(features: &[Vec<f64>], labels: &[f64], params: &TrainParams) -> Result<CalibratedClassifier> {
    let dim = validate(features, labels)?;
    let stats = if params.standardize && features.len() >= 2 {
        ZScoreStats::fit(features).map_err(|e| SvmError::InvalidParameter(e.to_string()))?
    } else {
        ZScoreStats::identity(dim)
    };
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| stats.apply(f).expect("dimension checked"))
        .collect();
    let kernel = params.kernel.resolve(&xs);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let model = fit_raw(&kernel, &refs, labels, params)?;

    // out-of-fold decision values for calibration
    let folds = params.calibration_folds;
    let mut oof = vec![0.0; xs.len()];
    let mut out_of_fold = folds >= 2;
    if out_of_fold {
        let assignment = stratified_folds(labels, folds, params.seed);
        for fold in 0..folds {
            let train_idx: Vec<usize> = (0..xs.len()).filter(|&i| assignment[i] != fold).collect();
            let held: Vec<usize> = (0..xs.len()).filter(|&i| assignment[i] == fold).collect();
            let y_fold: Vec<f64> = train_idx.iter().map(|&i| labels[i]).collect();
            if held.is_empty() || !y_fold.contains(&1.0) || !y_fold.contains(&-1.0) {
                out_of_fold = false;
                break;
            }
            let x_fold: Vec<&[f64]> = train_idx.iter().map(|&i| refs[i]).collect();
            let sub = fit_raw(&kernel, &x_fold, &y_fold, params)?;
            for &i in &held {
                oof[i] = sub.decision(&kernel, refs[i]);
            }
        }
    }
    let mut platt = if out_of_fold { Some(fit_platt(&oof, labels)?) } else { None };
    // A positive slope means held-out scores run against the labels; such a
    // sigmoid would invert the final model, so calibrate in-sample instead.
    if platt.is_some_and(|p| p.a > 0.0) {
        log::warn!("out-of-fold calibration inverted the decision function; using training scores");
        out_of_fold = false;
        platt = None;
    }
    let platt = match platt {
        Some(p) => p,
        None => {
            for (o, x) in oof.iter_mut().zip(&refs) {
                *o = model.decision(&kernel, x);
            }
            fit_platt(&oof, labels)?
        }
    };
    Ok(CalibratedClassifier {
        kernel,
        c: params.c,
        support_vectors: model.support_vectors,
        dual_coefs: model.dual_coefs,
        bias: model.bias,
        platt,
        feature_stats: stats,
        solver: SolverSummary {
            iterations: model.solution.iterations,
            violation: model.solution.violation,
            objective: model.solution.objective,
            objective_monotone: model.solution.objective_monotone,
            out_of_fold_calibration: out_of_fold,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kernel: KernelSpec,
    c: f64,
    bias: f64,
    platt: PlattParams,
    feature_stats: ZScoreStats,
    dual_coefs: Vec<f64>,
    solver: SolverSummary,
}

const MODEL_MAGIC: [u8; 4] = *b"FBSV";

impl CalibratedClassifier {
    pub fn dim(&self) -> usize {
        self.feature_stats.dim()
    }

    /// `f(x) = Σ α_i y_i K(s_i, x) + b` on the standardized input.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        let z = self.feature_stats.apply(x).map_err(|_| SvmError::DimensionMismatch {
            expected: self.dim(),
            got: x.len(),
        })?;
        Ok(self.decision_standardized(&z))
    }

    fn decision_standardized(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(s, c)| c * self.kernel.eval(s, z))
            .sum::<f64>()
            + self.bias
    }

    /// `[p(+1|x), p(−1|x)]`.
    pub fn posterior(&self, x: &[f64]) -> Result<[f64; 2]> {
        let p = self.platt.probability(self.decision_value(x)?);
        Ok([p, 1.0 - p])
    }

    /// Rejects when `|p(+1|x) − 0.5| < reject_band`; an exact tie goes to `Positive`.
    pub fn predict_label(&self, x: &[f64], reject_band: f64) -> Result<BinaryDecision> {
        Ok(decide(self.posterior(x)?, reject_band))
    }

    /// Primal weight vector (linear kernel only), in standardized space.
    pub fn linear_weights(&self) -> Option<Vec<f64>> {
        if self.kernel != KernelSpec::Linear {
            return None;
        }
        let mut w = vec![0.0; self.dim()];
        for (s, c) in self.support_vectors.iter().zip(&self.dual_coefs) {
            for (wi, si) in w.iter_mut().zip(s) {
                *wi += c * si;
            }
        }
        Some(w)
    }

    /// Box `0 ≤ α ≤ C` and equality `Σ α y = 0` (within 1e-6) at the stored solution.
    pub fn check_constraints(&self) -> std::result::Result<(), String> {
        for &coef in &self.dual_coefs {
            if coef.abs() > self.c * (1.0 + 1e-12) {
                return Err(format!("|α y| = {} exceeds C = {}", coef.abs(), self.c));
            }
        }
        let sum: f64 = self.dual_coefs.iter().sum();
        if sum.abs() > 1e-6 {
            return Err(format!("Σ α y = {sum:e}"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            kernel: self.kernel,
            c: self.c,
            bias: self.bias,
            platt: self.platt,
            feature_stats: self.feature_stats.clone(),
            dual_coefs: self.dual_coefs.clone(),
            solver: self.solver,
        };
        Ok(persist::save(path, MODEL_MAGIC, &header, &self.support_vectors)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, support_vectors): (ModelHeader, _) = persist::load(path, MODEL_MAGIC)?;
        Ok(Self {
            kernel: h.kernel,
            c: h.c,
            support_vectors,
            dual_coefs: h.dual_coefs,
            bias: h.bias,
            platt: h.platt,
            feature_stats: h.feature_stats,
            solver: h.solver,
        })
    }
}

/// Hard decision from a posterior pair.
pub fn decide(posterior: [f64; 2], reject_band: f64) -> BinaryDecision {
    let p = posterior[0];
    if (p - 0.5).abs() < reject_band {
        BinaryDecision::Reject
    } else if p >= 0.5 {
        BinaryDecision::Positive
    } else {
        BinaryDecision::Negative
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, n: usize, shift: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            xs.push(vec![y * shift + noise.sample(&mut rng), noise.sample(&mut rng)]);
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let ys = vec![-1.0, 1.0];
        let params = TrainParams {
            kernel: KernelChoice::Linear,
            c: 1e3,
            standardize: false,
            ..TrainParams::default()
        };
        let clf = train(&xs, &ys, &params).unwrap();
        assert!(clf.decision_value(&[0.0]).unwrap().abs() < 1e-9);
        assert!(clf.decision_value(&[-1.0]).unwrap() < 0.0);
        assert!(clf.decision_value(&[1.0]).unwrap() > 0.0);
        assert!(clf.check_constraints().is_ok());
    }

    #[test]
    fn conflicting_duplicates_terminate() {
        let xs = vec![vec![0.5, 0.5]; 6];
        let ys = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let params = TrainParams { c: 0.1, ..TrainParams::default() };
        let clf = train(&xs, &ys, &params).unwrap();
        assert!(clf.dual_coefs.iter().all(|c| c.abs() <= 0.1 + 1e-12));
        assert!(clf.check_constraints().is_ok());
    }

    #[test]
    fn linear_decision_equals_explicit_weights() {
        let (xs, ys) = blobs(3, 60, 1.0);
        let params = TrainParams { kernel: KernelChoice::Linear, ..TrainParams::default() };
        let clf = train(&xs, &ys, &params).unwrap();
        let w = clf.linear_weights().unwrap();
        for x in &xs {
            let z = clf.feature_stats.apply(x).unwrap();
            let explicit: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + clf.bias;
            assert!((explicit - clf.decision_value(x).unwrap()).abs() < 1e-9);
        }
        let zero_in = clf.feature_stats.invert(&[0.0, 0.0]);
        assert!((clf.decision_value(&zero_in).unwrap() - clf.bias).abs() < 1e-12);
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin() {
        let (xs, ys) = blobs(5, 40, 1.5);
        let params = TrainParams { c: 10.0, tol: 1e-3, monitor_objective: true, ..TrainParams::default() };
        let clf = train(&xs, &ys, &params).unwrap();
        let mut free = 0;
        for (s, &coef) in clf.support_vectors.iter().zip(&clf.dual_coefs) {
            if coef.abs() < clf.c * (1.0 - 1e-9) {
                free += 1;
                let y = coef.signum();
                let f = clf.decision_standardized(s);
                assert!((f - y).abs() <= params.tol, "f={f} y={y}");
            }
        }
        assert!(free > 0);
        assert!(clf.solver.objective_monotone);
    }

    #[test]
    fn single_class_and_shape_errors() {
        assert!(matches!(
            train(&[vec![0.0], vec![1.0]], &[1.0, 1.0], &TrainParams::default()),
            Err(SvmError::SingleClass { .. })
        ));
        assert!(matches!(
            train(&[vec![0.0], vec![1.0, 2.0]], &[1.0, -1.0], &TrainParams::default()),
            Err(SvmError::DimensionMismatch { .. })
        ));
        assert!(matches!(train(&[vec![0.0], vec![1.0]], &[1.0, 0.0], &TrainParams::default()), Err(SvmError::BadLabel(_))));
        let (xs, ys) = blobs(1, 10, 1.0);
        let clf = train(&xs, &ys, &TrainParams::default()).unwrap();
        assert!(clf.decision_value(&[1.0]).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let (xs, ys) = blobs(2, 50, 0.2);
        let params = TrainParams { max_iterations: 2, c: 100.0, ..TrainParams::default() };
        assert!(matches!(train(&xs, &ys, &params), Err(SvmError::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn posterior_midpoint_and_monotonicity() {
        let platt = PlattParams { a: -2.0, b: 0.6 };
        let mid = -platt.b / platt.a;
        assert!((platt.probability(mid) - 0.5).abs() < 1e-15);
        assert!(platt.probability(1.0) > platt.probability(0.5));
        assert!(platt.probability(1e6) < 1.0 && platt.probability(-1e6) > 0.0);
    }

    #[test]
    fn reject_band_and_tie() {
        assert_eq!(decide([0.7, 0.3], 0.0), BinaryDecision::Positive);
        assert_eq!(decide([0.6, 0.4], 0.25), BinaryDecision::Reject);
        assert_eq!(decide([0.5, 0.5], 0.0), BinaryDecision::Positive);
        assert_eq!(decide([0.2, 0.8], 0.1), BinaryDecision::Negative);
    }

    #[test]
    fn platt_recovers_logistic_generator() {
        let (a, b) = (-1.5, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gen = PlattParams { a, b };
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..2000 {
            let f: f64 = rng.random_range(-3.0..3.0);
            let y = if rng.random::<f64>() < gen.probability(f) { 1.0 } else { -1.0 };
            scores.push(f);
            labels.push(y);
        }
        let fit = fit_platt(&scores, &labels).unwrap();
        assert!((fit.a - a).abs() <= 0.1 * a.abs(), "a = {}", fit.a);
        assert!((fit.b - b).abs() <= 0.1 * b.abs(), "b = {}", fit.b);
    }

    #[test]
    fn standardization_invariance() {
        let (mut xs, ys) = blobs(9, 50, 1.0);
        for x in &mut xs {
            x[0] = 10.0 * x[0] + 3.0;
            x[1] = 0.01 * x[1] - 7.0;
        }
        let stats = ZScoreStats::fit(&xs).unwrap();
        let pre: Vec<Vec<f64>> = stats.apply_all(&xs).unwrap();
        let raw = train(&xs, &ys, &TrainParams::default()).unwrap();
        let manual = train(&pre, &ys, &TrainParams { standardize: false, ..TrainParams::default() }).unwrap();
        for (x, p) in xs.iter().zip(&pre) {
            assert_eq!(raw.predict_label(x, 0.0).unwrap(), manual.predict_label(p, 0.0).unwrap());
        }
    }

    #[test]
    fn model_round_trips_through_file() {
        let (xs, ys) = blobs(4, 30, 1.0);
        let clf = train(&xs, &ys, &TrainParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fbsv");
        clf.save(&path).unwrap();
        let back = CalibratedClassifier::load(&path).unwrap();
        assert_eq!(back, clf);
    }

    proptest! {
        #[test]
        fn posterior_pairs_sum_to_one(x0 in -50.0f64..50.0, x1 in -50.0f64..50.0, seed in 0u64..4) {
            let (xs, ys) = blobs(seed, 20, 1.0);
            let clf = train(&xs, &ys, &TrainParams::default()).unwrap();
            let p = clf.posterior(&[x0, x1]).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            prop_assert!(p[0] > 0.0 && p[0] < 1.0);
        }
    }
}
