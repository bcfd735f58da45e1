//! Independent reference implementations ("oracles") and the checks that
//! compare the library against them. `fusionbench selftest` runs [`run_all`].
//!
//! Oracles are deliberately naive: direct sums, direct products, exhaustive
//! enumeration. They share no code with the implementations they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::decision_fusion::{bayes_average, build_belief, majority_vote, BeliefModel, ConfusionMatrix, Decision, PriorMode};
use crate::descriptors::{co_occurrence, dct2_8x8, haralick, idct2_8x8};
use crate::svm::{solve_dual, KernelSpec};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Signature of a belief-integration implementation under test: normalized beliefs.
pub type IntegrateFn<'a> = &'a (dyn Fn(&BeliefModel, &[Decision]) -> Result<Vec<f64>, String> + Sync);

pub mod oracle {
    use super::*;

    /// Count votes per class, compare the two largest counts, apply the threshold.
    pub fn vote(d: &[Decision], classes: usize, alpha: f64) -> Decision {
        let mut counts = vec![0usize; classes];
        for x in d {
            if let Decision::Class(c) = x {
                counts[*c] += 1;
            }
        }
        let mut sorted: Vec<(usize, usize)> = counts.iter().copied().enumerate().map(|(c, n)| (n, c)).collect();
        sorted.sort_by_key(|&(n, _)| std::cmp::Reverse(n));
        let (top, class) = sorted[0];
        let unique = sorted.len() < 2 || sorted[1].0 < top;
        if unique && top > 0 && top as f64 >= alpha * d.len() as f64 - 1e-9 {
            Decision::Class(class)
        } else {
            Decision::Reject
        }
    }

    /// Column means by explicit loops.
    pub fn average(p: &[Vec<f64>]) -> Vec<f64> {
        let m = p[0].len();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut s = 0.0;
            for row in p {
                s += row[i];
            }
            out[i] = s / p.len() as f64;
        }
        out
    }

    /// Normalized `P(c_i) Π_k P(c_i | e_k = j_k) / Π_k P(c_i)` straight from
    /// raw counts with no smoothing. `counts[k][i][j]`, `j = M` is rejection.
    /// Returns `None` when every belief is zero.
    pub fn belief(counts: &[Vec<Vec<u64>>], assigned: &[usize]) -> Option<Vec<f64>> {
        let m = counts[0].len();
        let mut row_totals = vec![0.0; m];
        let mut grand = 0.0;
        for table in counts {
            for (i, row) in table.iter().enumerate() {
                let t: u64 = row.iter().sum();
                row_totals[i] += t as f64;
                grand += t as f64;
            }
        }
        let prior: Vec<f64> = row_totals.iter().map(|r| r / grand).collect();
        let mut bel = vec![0.0; m];
        for i in 0..m {
            let mut num = prior[i];
            let mut den = 1.0;
            for (table, &j) in counts.iter().zip(assigned) {
                let col: u64 = (0..m).map(|r| table[r][j]).sum();
                let cond = if col == 0 { 1.0 / m as f64 } else { table[i][j] as f64 / col as f64 };
                num *= cond;
                den *= prior[i];
            }
            bel[i] = num / den;
        }
        let z: f64 = bel.iter().sum();
        (z > 0.0).then(|| bel.iter().map(|b| b / z).collect())
    }

    /// Maximum of the SVM dual by enumerating every assignment of each α to
    /// {0, C, free} and solving the equality-constrained stationarity system
    /// on the free set. Returns `(objective, alpha)`.
    pub fn qp(gram: &[f64], y: &[f64], c: f64) -> (f64, Vec<f64>) {
        let n = y.len();
        let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
        let objective = |a: &[f64]| {
            let mut s: f64 = a.iter().sum();
            for i in 0..n {
                for j in 0..n {
                    s -= 0.5 * a[i] * a[j] * q(i, j);
                }
            }
            s
        };
        let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
        let mut state = vec![0u8; n];
        loop {
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
            let feasible = if free.is_empty() {
                (0..n).map(|i| alpha[i] * y[i]).sum::<f64>().abs() < 1e-12
            } else {
                // [Q_FF  y_F] [α_F]   [1 − Q_FB α_B]
                // [y_Fᵀ   0 ] [ ν ] = [ −y_Bᵀ α_B  ]
                let f = free.len();
                let mut a = DMatrix::<f64>::zeros(f + 1, f + 1);
                let mut b = DVector::<f64>::zeros(f + 1);
                for (r, &i) in free.iter().enumerate() {
                    for (s, &j) in free.iter().enumerate() {
                        a[(r, s)] = q(i, j);
                    }
                    a[(r, f)] = y[i];
                    a[(f, r)] = y[i];
                    b[r] = 1.0 - (0..n).filter(|k| state[*k] == 1).map(|k| q(i, k) * c).sum::<f64>();
                }
                b[f] = -(0..n).filter(|k| state[*k] == 1).map(|k| y[k] * c).sum::<f64>();
                match a.lu().solve(&b) {
                    Some(x) if x.iter().all(|v| v.is_finite()) => {
                        for (r, &i) in free.iter().enumerate() {
                            alpha[i] = x[r];
                        }
                        free.iter().all(|&i| alpha[i] >= -1e-10 && alpha[i] <= c + 1e-10)
                            && (0..n).map(|i| alpha[i] * y[i]).sum::<f64>().abs() < 1e-9
                    }
                    _ => false,
                }
            };
            if feasible {
                let obj = objective(&alpha);
                if obj > best.0 {
                    best = (obj, alpha);
                }
            }
            // next assignment in base 3
            let mut k = 0;
            while k < n && state[k] == 2 {
                state[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
            state[k] += 1;
        }
        best
    }

    /// 2-D DCT-II by the defining quadruple sum, orthonormal scaling.
    pub fn dct(block: &[f64; 64]) -> [f64; 64] {
        let pi = std::f64::consts::PI;
        let a = |u: usize| if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += block[y * 8 + x]
                            * ((2 * x + 1) as f64 * u as f64 * pi / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * pi / 16.0).cos();
                    }
                }
                out[v * 8 + u] = a(u) * a(v) * s;
            }
        }
        out
    }

    /// Nearest-mean rule for identity-covariance classes on concatenated views.
    pub fn nearest_mean(x: &[f64], means: &[Vec<f64>]) -> usize {
        let d2 = |m: &Vec<f64>| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        for c in 1..means.len() {
            if d2(&means[c]) < d2(&means[best]) {
                best = c;
            }
        }
        best
    }
}

pub fn check_dct_round_trip() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_rt: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for _ in 0..50 {
        let mut block = [0.0; 64];
        block.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let c = dct2_8x8(&block);
        let r = idct2_8x8(&c);
        let reference = oracle::dct(&block);
        for i in 0..64 {
            worst_rt = worst_rt.max((r[i] - block[i]).abs());
            worst_ref = worst_ref.max((c[i] - reference[i]).abs());
        }
    }
    CheckResult::new(
        "dct_round_trip",
        worst_rt < 1e-9 && worst_ref < 1e-9,
        format!("max round-trip error {worst_rt:.2e}, max deviation from direct sum {worst_ref:.2e}"),
    )
}

pub fn check_glcm_hand_count() -> CheckResult {
    // 0 0 1 1 / 0 0 1 1 / 0 2 2 2 / 2 2 3 3 with horizontal neighbours:
    // (0,0)=2 (0,1)=2 (1,1)=2 (0,2)=1 (2,2)=3 (2,3)=1 (3,3)=1 of 12 pairs
    let grid = [0, 0, 1, 1, 0, 0, 1, 1, 0, 2, 2, 2, 2, 2, 3, 3];
    let p = co_occurrence(&grid, 4, 4, 4, &[(0, 1)], false);
    let mut expected = vec![0.0; 16];
    for (i, j, n) in [(0, 0, 2.0), (0, 1, 2.0), (1, 1, 2.0), (0, 2, 1.0), (2, 2, 3.0), (2, 3, 1.0), (3, 3, 1.0)] {
        expected[i * 4 + j] = n / 12.0;
    }
    let s = haralick(&p, 4);
    let inertia = (2.0 * 1.0 + 1.0 * 4.0 + 1.0 * 1.0) / 12.0;
    let energy = 24.0 / 144.0;
    let passed = p == expected && (s.inertia - inertia).abs() < 1e-15 && (s.energy - energy).abs() < 1e-15;
    CheckResult::new("glcm_hand_count", passed, format!("energy {:.6}, inertia {:.6}", s.energy, s.inertia))
}

/// Outcome of solving random small duals with SMO and by enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoComparison {
    pub instances: usize,
    pub max_objective_gap: f64,
    /// Instances whose SMO solution breaks the box, the equality, the
    /// stopping criterion, or objective monotonicity.
    pub kkt_failures: usize,
}

/// Random duals of 2..=8 points in 2-D, alternating linear and RBF kernels
/// over C in {0.1, 1, 10}, solved by SMO at `tol` and by [`oracle::qp`].
pub fn compare_smo_with_qp(instances: usize, tol: f64) -> SmoComparison {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap: f64 = 0.0;
    let mut kkt_failures = 0;
    for t in 0..instances {
        let n = rng.random_range(2..=8);
        let xs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let kernel = if t % 2 == 0 {
            KernelSpec::Linear
        } else {
            KernelSpec::Rbf {
                gamma: rng.random_range(0.5..3.0),
            }
        };
        let c = [0.1, 1.0, 10.0][t % 3];
        let gram: Vec<f64> = (0..n * n).map(|k| kernel.eval(&xs[k / n], &xs[k % n])).collect();
        let sol = match solve_dual(&gram, &y, c, tol, 1_000_000, true) {
            Ok(s) => s,
            Err(_) => {
                kkt_failures += 1;
                continue;
            }
        };
        let (best, _) = oracle::qp(&gram, &y, c);
        worst_gap = worst_gap.max((sol.objective - best).abs());
        let boxed = sol.alpha.iter().all(|&a| (0.0..=c).contains(&a));
        let balanced = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-9;
        if !(boxed && balanced && sol.violation < tol && sol.objective_monotone) {
            kkt_failures += 1;
        }
    }
    SmoComparison {
        instances,
        max_objective_gap: worst_gap,
        kkt_failures,
    }
}

/// SMO objective within 1e-6 of enumeration, KKT conditions at the solution.
/// The objective gap scales with the stopping tolerance (~2e-5 at 1e-3), so
/// the self-test runs at 1e-8.
pub fn check_smo_against_qp(instances: usize, tol: f64) -> CheckResult {
    let r = compare_smo_with_qp(instances, tol);
    CheckResult::new(
        "smo_vs_qp",
        r.max_objective_gap < 1e-6 && r.kkt_failures == 0,
        format!(
            "{instances} instances at tol {tol:e}: max objective gap {:.2e}, {} KKT failures",
            r.max_objective_gap, r.kkt_failures
        ),
    )
}

/// All 3^K vectors over {c1, c2, reject} for K = 3.
pub fn check_vote_enumeration() -> CheckResult {
    let values = [Decision::Class(0), Decision::Class(1), Decision::Reject];
    let mut mismatches = 0;
    let mut total = 0;
    for alpha in [0.0, 0.3, 0.5, 2.0 / 3.0, 1.0] {
        for code in 0..27 {
            let d = [values[code % 3], values[code / 3 % 3], values[code / 9]];
            total += 1;
            if majority_vote(&d, 2, alpha).ok() != Some(oracle::vote(&d, 2, alpha)) {
                mismatches += 1;
            }
        }
    }
    CheckResult::new("vote_enumeration", mismatches == 0, format!("{mismatches} mismatches over {total} vectors"))
}

pub fn check_bayes_average(instances: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(1..=6);
        let m = rng.random_range(2..=5);
        let p: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        match bayes_average(&p) {
            Ok((fused, _)) => {
                let reference = oracle::average(&p);
                for (a, b) in fused.iter().zip(&reference) {
                    worst = worst.max((a - b).abs());
                }
                worst = worst.max((fused.iter().sum::<f64>() - 1.0).abs());
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    CheckResult::new("bayes_average", worst < 1e-12, format!("{instances} matrices, max deviation {worst:.2e}"))
}

/// The library's belief integration, in the form the check consumes.
pub fn library_integrate(model: &BeliefModel, d: &[Decision]) -> Result<Vec<f64>, String> {
    model.integrate(d, 0.0).map(|o| o.belief).map_err(|e| e.to_string())
}

/// Compares `integrate` with direct arithmetic on random count tables (λ = 0,
/// pooled priors) and on the two-classifier worked example.
pub fn check_belief_integration_with(integrate: IntegrateFn, instances: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    let mut compare = |counts: &[Vec<Vec<u64>>], assigned: &[usize]| {
        let Some(reference) = oracle::belief(counts, assigned) else { return };
        let m = counts[0].len();
        let cms: Vec<ConfusionMatrix> = counts.iter().map(|c| ConfusionMatrix::from_counts(c.clone()).unwrap()).collect();
        let model = build_belief(&cms, 0.0, PriorMode::Pooled).unwrap();
        let d: Vec<Decision> = assigned.iter().map(|&j| Decision::from_column(j, m)).collect();
        match integrate(&model, &d) {
            Ok(b) => {
                for (x, r) in b.iter().zip(&reference) {
                    worst = worst.max((x - r).abs());
                }
            }
            Err(_) => errors += 1,
        }
    };
    compare(
        &[vec![vec![40, 10, 0], vec![20, 30, 0]], vec![vec![45, 5, 0], vec![15, 35, 0]]],
        &[0, 0],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < instances {
        let k = rng.random_range(1..=4);
        let m = rng.random_range(2..=3);
        let counts: Vec<Vec<Vec<u64>>> = (0..k)
            .map(|_| (0..m).map(|_| (0..=m).map(|_| rng.random_range(0..=12)).collect()).collect())
            .collect();
        if counts.iter().any(|t| t.iter().any(|row| row.iter().sum::<u64>() == 0)) {
            continue;
        }
        let assigned: Vec<usize> = (0..k).map(|_| rng.random_range(0..=m)).collect();
        if oracle::belief(&counts, &assigned).is_none() {
            continue;
        }
        compare(&counts, &assigned);
        done += 1;
    }
    CheckResult::new(
        "belief_integration",
        worst < 1e-9 && errors == 0,
        format!("{} instances, max deviation {worst:.2e}, {errors} errors", instances + 1),
    )
}

pub fn check_belief_integration() -> CheckResult {
    check_belief_integration_with(&library_integrate, 100)
}

/// Nearest-mean accuracy on generated spherical data versus `1 − Φ(−Δ/2)`,
/// with Φ evaluated through erfc.
pub fn check_gaussian_bayes_error() -> CheckResult {
    let spec = SynthSpec::spherical(&["a", "b"], &[2, 3], &[1.0, 1.2], 2500, 19);
    let data = match spec.generate() {
        Ok(d) => d,
        Err(e) => return CheckResult::new("gaussian_bayes_error", false, e.to_string()),
    };
    let means: Vec<Vec<f64>> = (0..2)
        .map(|c| spec.views.iter().flat_map(|v| v.means[c].iter().copied()).collect())
        .collect();
    let delta = means[0].iter().zip(&means[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let expected = 1.0 - 0.5 * erfc(delta / (2.0 * std::f64::consts::SQRT_2));
    let correct = (0..data.len())
        .filter(|&i| {
            let x: Vec<f64> = data.table.columns.iter().flat_map(|c| c[i].iter().copied()).collect();
            oracle::nearest_mean(&x, &means) == data.labels[i]
        })
        .count();
    let got = correct as f64 / data.len() as f64;
    CheckResult::new(
        "gaussian_bayes_error",
        (got - expected).abs() < 0.02,
        format!("empirical accuracy {got:.4} vs closed form {expected:.4} at n={}", data.len()),
    )
}

/// Every check, in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_dct_round_trip(),
        check_glcm_hand_count(),
        check_smo_against_qp(50, 1e-8),
        check_vote_enumeration(),
        check_bayes_average(100),
        check_belief_integration(),
        check_gaussian_bayes_error(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn qp_oracle_two_point_case() {
        // x = ±1, linear kernel: α = 0.5 each, objective 0.5
        let gram = [1.0, -1.0, -1.0, 1.0];
        let (obj, alpha) = oracle::qp(&gram, &[1.0, -1.0], 10.0);
        assert!((obj - 0.5).abs() < 1e-12);
        assert!((alpha[0] - 0.5).abs() < 1e-12 && (alpha[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corrupted_exponent_is_caught() {
        let mutated = |model: &BeliefModel, d: &[Decision]| -> Result<Vec<f64>, String> {
            let k = d.len() as f64;
            let raw: Vec<f64> = (0..model.classes)
                .map(|i| {
                    let mut p = 1.0 / model.priors[i].powf(k);
                    for (t, a) in model.conditional.iter().zip(d) {
                        p *= t[i][a.column(model.classes)];
                    }
                    p
                })
                .collect();
            let z: f64 = raw.iter().sum();
            Ok(raw.iter().map(|r| r / z).collect())
        };
        assert!(!check_belief_integration_with(&mutated, 100).passed);
    }
}
