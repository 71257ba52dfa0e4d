//! Coupling-coefficient matrices and the dependent transport inequality.
//!
//! For a law `P` on `E^n`, the coefficient `γ_{k,i}(p)` bounds how far the
//! law of coordinate `k` moves, in `W_p` under a metric `d`, when coordinate
//! `i < k` of the conditioning history is changed from `x_i` to `y_i`,
//! relative to `d'(x_i, y_i)`. The lower-triangular matrix `Γ(p)` collects
//! these coefficients with the constant `M = max d / d'` on its diagonal.
//! If every one-step conditional law satisfies a weak transport inequality
//! with constant `C`, then `P` satisfies one with constant
//! `C ‖Γ(p)‖_p² n^(2/p - 1)` under the combined metric `d_p`.
//!
//! Coefficients are computed exactly from finite path laws, taking suprema
//! over positive-probability histories only.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{domain, Error, Result};
use crate::measures::{decode_path, kl_path, total_variation, Metric, PathMeasure};
use crate::report::{ExperimentReport, Verdict};
use crate::rng::trial_rng;
use crate::transport::{wasserstein_weights, weak_transport_cost, SolverConfig};

/// Lower-triangular coefficient matrix with constant diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub p: f64,
    pub diagonal: f64,
    /// Full `n x n` matrix, row `k`, column `i` (0-based).
    pub entries: Vec<Vec<f64>>,
}

impl GammaMatrix {
    /// Validate and wrap a full square matrix.
    pub fn from_rows(entries: Vec<Vec<f64>>, p: f64) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|r| r.len() != n) {
            return domain("a coefficient matrix must be square and nonempty");
        }
        let diagonal = entries[0][0];
        if !(diagonal > 0.0 && diagonal.is_finite()) {
            return domain("the diagonal constant must be positive and finite");
        }
        for (k, row) in entries.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return domain("coefficients must be finite and nonnegative");
                }
                if i > k && v != 0.0 {
                    return domain("a coefficient matrix must be lower triangular");
                }
                if i == k && v != diagonal {
                    return domain("a coefficient matrix needs a constant diagonal");
                }
            }
        }
        Ok(Self { p, diagonal, entries })
    }

    /// Toeplitz matrix with `γ_{k+t, k} = lags[t-1]`.
    pub fn stationary(n: usize, diagonal: f64, lags: &[f64], p: f64) -> Result<Self> {
        let entries = (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| match k.cmp(&i) {
                        std::cmp::Ordering::Equal => diagonal,
                        std::cmp::Ordering::Greater => lags.get(k - i - 1).copied().unwrap_or(0.0),
                        std::cmp::Ordering::Less => 0.0,
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(entries, p)
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// `γ_{k,i}` with 1-based indices as in the usual notation.
    pub fn gamma(&self, k: usize, i: usize) -> f64 {
        self.entries[k - 1][i - 1]
    }
}

/// `max_{a != b} d(a, b) / d'(a, b)`, the constant with `d <= M d'`.
pub fn domination_constant(d: &[Vec<f64>], d_prime: &[Vec<f64>]) -> Result<f64> {
    let mut best = 0.0f64;
    for (a, row) in d.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if a == b {
                continue;
            }
            let w = d_prime[a][b];
            if w == 0.0 {
                if v > 0.0 {
                    return domain("d' vanishes where d does not; no domination constant");
                }
                continue;
            }
            best = best.max(v / w);
        }
    }
    Ok(if best > 0.0 { best } else { 1.0 })
}

fn check_size(pm: &PathMeasure) -> Result<()> {
    if pm.horizon() > 8 || pm.base_size() > 8 {
        return domain("exact coefficients are limited to n <= 8 and |E| <= 8");
    }
    Ok(())
}

/// Enumerate `(x^{(i)}, y_i)` with both histories of positive probability
/// and `x_i != y_i`, calling `visit(i, history, perturbed)`.
fn for_each_perturbation(pm: &PathMeasure, mut visit: impl FnMut(usize, &[usize], &[usize]) -> Result<()>) -> Result<()> {
    let m = pm.base_size();
    for i in 1..pm.horizon() {
        for idx in 0..m.pow(i as u32) {
            let hist = decode_path(idx, m, i);
            if pm.prefix_prob(&hist)? <= 0.0 {
                continue;
            }
            for y in 0..m {
                if y == hist[i - 1] {
                    continue;
                }
                let mut alt = hist.clone();
                alt[i - 1] = y;
                if pm.prefix_prob(&alt)? <= 0.0 {
                    continue;
                }
                visit(i, &hist, &alt)?;
            }
        }
    }
    Ok(())
}

/// Conditional laws are built by division, so identical laws can differ by
/// a few ulps; the `1/p` root would inflate that to ~1e-8.
const ROUNDING_FLOOR: f64 = 1e-14;

fn snap_root(power: f64, p: f64) -> f64 {
    if power <= ROUNDING_FLOOR {
        0.0
    } else {
        power.powf(1.0 / p)
    }
}

/// Exact `Γ(p)` of a finite path law for metrics `d` (transport) and `d'`
/// (perturbation).
pub fn gamma_from_kernel(pm: &PathMeasure, p: f64, d: &Metric, d_prime: &Metric) -> Result<GammaMatrix> {
    check_size(pm)?;
    let n = pm.horizon();
    let dm = d.matrix(pm.base())?;
    let dp = d_prime.matrix(pm.base())?;
    let diagonal = domination_constant(&dm, &dp)?;
    let mut entries = vec![vec![0.0f64; n]; n];
    for (k, row) in entries.iter_mut().enumerate() {
        row[k] = diagonal;
    }
    for_each_perturbation(pm, |i, hist, alt| {
        let scale = dp[hist[i - 1]][alt[i - 1]];
        for k in i + 1..=n {
            let a = pm.marginal_given(hist, k)?;
            let b = pm.marginal_given(alt, k)?;
            let w = snap_root(wasserstein_weights(&a, &b, &dm, p)?.value.powf(p), p);
            if scale == 0.0 {
                if w > 1e-12 {
                    return domain("d' cannot separate histories with distinct conditionals");
                }
                continue;
            }
            let e = &mut entries[k - 1][i - 1];
            *e = (*e).max(w / scale);
        }
        Ok(())
    })?;
    GammaMatrix::from_rows(entries, p)
}

/// Coefficients from total variation: `sup TV(law of X_k | x^{(i)}, law of
/// X_k | x^{(i-1)}, y_i)^(1/p)`, with unit diagonal.
pub fn tv_gamma(pm: &PathMeasure, p: f64) -> Result<GammaMatrix> {
    check_size(pm)?;
    let n = pm.horizon();
    let mut entries = vec![vec![0.0f64; n]; n];
    for (k, row) in entries.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    for_each_perturbation(pm, |i, hist, alt| {
        for k in i + 1..=n {
            let tv: f64 = total_variation(&pm.marginal_given(hist, k)?, &pm.marginal_given(alt, k)?);
            let e = &mut entries[k - 1][i - 1];
            *e = (*e).max(snap_root(tv, p));
        }
        Ok(())
    })?;
    GammaMatrix::from_rows(entries, p)
}

/// Operator norm of `Γ` on `ℓ^r`, for `r ∈ {1, 2, ∞}`.
pub fn subordinated_norm(gamma: &GammaMatrix, r: f64) -> Result<f64> {
    matrix_norm(&gamma.entries, r)
}

/// Operator norm of a square matrix on `ℓ^r`, for `r ∈ {1, 2, ∞}`.
pub fn matrix_norm(a: &[Vec<f64>], r: f64) -> Result<f64> {
    let n = a.len();
    if r == 1.0 {
        Ok((0..n)
            .map(|j| a.iter().map(|row| row[j].abs()).sum::<f64>())
            .fold(0.0, f64::max))
    } else if r.is_infinite() {
        Ok(a.iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max))
    } else if r == 2.0 {
        spectral_norm(a)
    } else {
        domain(format!("operator norms are implemented for 1, 2 and infinity, not {r}"))
    }
}

/// Largest singular value by power iteration on `AᵀA`, from the all-ones
/// vector and two seeded random starts.
fn spectral_norm(a: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let apply = |v: &[f64]| -> Vec<f64> {
        let av: Vec<f64> = a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect();
        (0..cols).map(|j| (0..n).map(|i| a[i][j] * av[i]).sum()).collect()
    };
    let mut best = 0.0f64;
    for start in 0..3u64 {
        let mut v: Vec<f64> = if start == 0 {
            vec![1.0; cols]
        } else {
            let mut rng = trial_rng(0x6e6f726d, start);
            (0..cols).map(|_| rng.gen::<f64>() - 0.5).collect()
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = norm(&v);
        if nv == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..1_000_000 {
            let w = apply(&v);
            lambda = v.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>();
            let nw = norm(&w);
            if nw == 0.0 {
                converged = true;
                break;
            }
            let resid = w.iter().zip(&v).map(|(x, y)| (x - lambda * y).powi(2)).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / nw).collect();
            if resid <= 1e-10 * lambda.abs() {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric("power iteration did not converge".into()));
        }
        best = best.max(lambda.max(0.0).sqrt());
    }
    Ok(best)
}

/// `C ‖Γ‖_p² n^(2/p - 1)`. For `1 < p < 2` the norm is replaced by its
/// interpolation bound `‖Γ‖_1^(1/p) ‖Γ‖_∞^(1 - 1/p)`, which keeps the
/// constant valid.
pub fn theorem_constant(c: f64, gamma: &GammaMatrix, p: f64, n: usize) -> Result<f64> {
    if !(c > 0.0) {
        return domain("the base constant must be positive");
    }
    if !(1.0..=2.0).contains(&p) {
        return domain("the exponent must lie in [1, 2]");
    }
    let norm = if p == 1.0 || p == 2.0 {
        subordinated_norm(gamma, p)?
    } else {
        subordinated_norm(gamma, 1.0)?.powf(1.0 / p) * subordinated_norm(gamma, f64::INFINITY)?.powf(1.0 - 1.0 / p)
    };
    Ok(c * norm * norm * (n as f64).powf(2.0 / p - 1.0))
}

/// Stationary law of an irreducible stochastic matrix.
pub fn stationary_distribution(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = rows.len();
    // Solve πᵀ(K − I) = 0 with Σπ = 1 by replacing one equation.
    let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(j, i)] = rows[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("kernel has no unique stationary law".into()))?;
    Ok(sol.iter().map(|v| v.max(0.0)).collect())
}

/// `φ_t = max_x TV(K^t(x, ·), π)` for `t = 1..=horizon`.
pub fn phi_mixing(rows: &[Vec<f64>], horizon: usize) -> Result<Vec<f64>> {
    let pi = stationary_distribution(rows)?;
    let m = rows.len();
    let mut power: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        power = (0..m)
            .map(|i| (0..m).map(|j| (0..m).map(|k| power[i][k] * rows[k][j]).sum()).collect())
            .collect();
        out.push(power.iter().map(|r| total_variation(r, &pi)).fold(0.0, f64::max));
    }
    Ok(out)
}

/// One comparison of the dependent transport inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtiTrial {
    pub index: u64,
    pub kl: f64,
    pub rhs: f64,
    pub lower: f64,
    pub upper: f64,
    /// `Q` on `E^n`.
    pub q: Vec<f64>,
}

impl WtiTrial {
    /// Certified pass: the upper bound is below the right side.
    pub fn passes(&self, tol: f64) -> bool {
        self.upper <= self.rhs + tol
    }

    /// Certified violation: the lower bound exceeds the right side.
    pub fn violates(&self, tol: f64) -> bool {
        self.lower > self.rhs + tol
    }
}

/// Random alternative laws concentrated on tight directions: exponential
/// tilts of `P` by random potentials and mixtures of `P` with point masses.
pub fn sample_alternative(pm: &PathMeasure, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = trial_rng(seed, index);
    let w = pm.weights();
    let size = w.len();
    let support: Vec<usize> = (0..size).filter(|&i| w[i] > 0.0).collect();
    let raw: Vec<f64> = match index % 4 {
        0 | 1 => {
            let beta = [0.1, 0.5, 1.0, 3.0][rng.gen_range(0..4)];
            let h: Vec<f64> = (0..size).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            w.iter().zip(&h).map(|(p, h)| p * (beta * h).exp()).collect()
        }
        2 => {
            // Additive potentials, one per coordinate.
            let n = pm.horizon();
            let m = pm.base_size();
            let beta = [0.3, 1.0, 3.0][rng.gen_range(0..3)];
            let h: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
            (0..size)
                .map(|x| {
                    let path = pm.decode(x);
                    let pot: f64 = path.iter().enumerate().map(|(j, &c)| h[j][c]).sum();
                    w[x] * (beta * pot).exp()
                })
                .collect()
        }
        _ => {
            let at = support[rng.gen_range(0..support.len())];
            let eps = [0.0, 1e-3, 0.1, 0.5][rng.gen_range(0..4)];
            (0..size)
                .map(|x| eps * w[x] + if x == at { 1.0 - eps } else { 0.0 })
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let mut q: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let drift = 1.0 - q.iter().sum::<f64>();
    let imax = (0..size).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap_or(0);
    q[imax] += drift;
    q
}

/// Compare `W~_{p,d_p}(P, Q)` (Markov couplings) with `sqrt(2 C' K(Q|P))`.
pub fn wti_trial(
    pm: &PathMeasure,
    q: Vec<f64>,
    p: f64,
    d: &Metric,
    constant: f64,
    cfg: &SolverConfig,
    index: u64,
) -> Result<WtiTrial> {
    let qm = PathMeasure::from_joint(pm.base().clone(), pm.horizon(), q)?;
    let kl = kl_path(&qm, pm)?;
    let rhs = (2.0 * constant * kl).sqrt();
    let v = weak_transport_cost(pm, &qm, p, d, true, cfg)?;
    Ok(WtiTrial {
        index,
        kl,
        rhs,
        lower: v.lower,
        upper: v.upper,
        q: qm.weights().to_vec(),
    })
}

/// Outcome of [`verify_wti`].
#[derive(Debug, Clone, PartialEq)]
pub struct WtiOutcome {
    pub gamma: GammaMatrix,
    pub constant: f64,
    pub trials: Vec<WtiTrial>,
    pub report: ExperimentReport,
}

/// Sample alternatives `Q` and check the dependent transport inequality
/// with constant `C' = base_c ‖Γ‖_p² n^(2/p-1)` (or `constant_override`).
#[allow(clippy::too_many_arguments)]
pub fn verify_wti(
    pm: &PathMeasure,
    p: f64,
    d: &Metric,
    d_prime: &Metric,
    base_c: f64,
    trials: usize,
    seed: u64,
    tolerance: f64,
    constant_override: Option<f64>,
    cfg: &SolverConfig,
) -> Result<WtiOutcome> {
    if pm.horizon() > 3 || pm.base_size() > 3 {
        return domain("exact verification is limited to n <= 3 and |E| <= 3");
    }
    let gamma = gamma_from_kernel(pm, p, d, d_prime)?;
    let constant = match constant_override {
        Some(c) => c,
        None => theorem_constant(base_c, &gamma, p, pm.horizon())?,
    };
    let results: Vec<Result<WtiTrial>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| wti_trial(pm, sample_alternative(pm, seed, t), p, d, constant, cfg, t))
        .collect();
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = trials
        .iter()
        .max_by(|a, b| (a.upper - a.rhs).total_cmp(&(b.upper - b.rhs)))
        .cloned();
    let all_pass = trials.iter().all(|t| t.passes(tolerance));
    let any_violation = trials.iter().any(|t| t.violates(tolerance));
    let verdict = if all_pass {
        Verdict::Pass
    } else if any_violation {
        Verdict::Fail
    } else {
        let gap = trials.iter().map(|t| t.upper - t.rhs).fold(0.0, f64::max);
        Verdict::Inconclusive { gap }
    };
    let mut report = ExperimentReport::new("verify-wti", "weak-dependence-transport")
        .params(json!({
            "p": p, "n": pm.horizon(), "base_C": base_c, "constant": constant,
            "trials": trials.len(), "tolerance": tolerance,
            "gamma": gamma.entries,
        }))
        .seed(seed)
        .verdict(verdict);
    if let Some(w) = worst {
        report = report
            .sides(w.upper, w.rhs)
            .note(format!("worst margin at trial {}: upper - rhs = {:e}", w.index, w.upper - w.rhs));
        report.interval = Some([crate::report::finite(w.lower), crate::report::finite(w.upper)]);
    }
    Ok(WtiOutcome {
        gamma,
        constant,
        trials,
        report,
    })
}

/// Hill-climb over exponential tilts `Q ∝ P e^θ` to maximize the certified
/// ratio `lower² / (2 K(Q|P))`; returns the best trial found.
///
/// A trial with `lower > sqrt(2 C K)` is a certified violation of the
/// inequality with constant `C`.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_wti(
    pm: &PathMeasure,
    p: f64,
    d: &Metric,
    constant: f64,
    restarts: usize,
    max_evals: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<WtiTrial> {
    let w = pm.weights().to_vec();
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let tilt = |theta: &[f64]| -> Vec<f64> {
        let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut q = vec![0.0; w.len()];
        for (t, &x) in theta.iter().zip(&support) {
            q[x] = w[x] * (t - top).exp();
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        let drift = 1.0 - q.iter().sum::<f64>();
        let imax = (0..q.len()).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap_or(0);
        q[imax] += drift;
        q
    };
    let score = |t: &WtiTrial| if t.kl > 0.0 { t.lower * t.lower / (2.0 * t.kl) } else { 0.0 };
    let runs: Vec<Result<(f64, WtiTrial)>> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = trial_rng(seed, r);
            let scale = [0.05, 0.5, 2.0, 6.0][(r % 4) as usize];
            let mut theta: Vec<f64> = support.iter().map(|_| scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect();
            if r % 4 == 3 {
                let at = rng.gen_range(0..support.len());
                theta[at] += 8.0;
            }
            let mut best = wti_trial(pm, tilt(&theta), p, d, constant, cfg, r)?;
            let mut best_score = score(&best);
            let mut step = scale.max(0.25);
            let mut evals = 1;
            while step > 1e-3 && evals < max_evals {
                let mut improved = false;
                for c in 0..theta.len() {
                    for sign in [1.0, -1.0] {
                        let mut cand = theta.clone();
                        cand[c] += sign * step;
                        let trial = wti_trial(pm, tilt(&cand), p, d, constant, cfg, r)?;
                        evals += 1;
                        let sc = score(&trial);
                        if sc > best_score {
                            best_score = sc;
                            best = trial;
                            theta = cand;
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            Ok((best_score, best))
        })
        .collect();
    let mut best: Option<(f64, WtiTrial)> = None;
    for run in runs {
        let (sc, t) = run?;
        if best.as_ref().map_or(true, |(b, _)| sc > *b) {
            best = Some((sc, t));
        }
    }
    best.map(|(_, t)| t).ok_or_else(|| Error::Domain("adversarial search needs restarts >= 1".into()))
}
