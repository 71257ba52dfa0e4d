//! Exponential dual form of the weak transport inequality.
//!
//! For `f` on `E`, weights `α ≥ 0` and `λ > 0` the checked quantity is
//!
//! ```text
//! P[exp(λ(f_α − P[f]) − Cλ²((α^q − 1)/q + 1/2))]          (direct)
//! P[exp(λ(P[f_α] − f) − Cλ²((P[α^q] − 1)/q + 1/2))]       (inverted)
//! ```
//!
//! with `f_α(y) = min_x α(y) d(x, y) + f(x)`. The inverted form is the
//! exponential counterpart of `W~_α(Q, P) = sup_f P[f_α] − Q[f]`, where the
//! roles of the two measures swap. Both are evaluated exactly in log space.

use serde_json::json;

use crate::error::{domain, Result};
use crate::measures::{DiscreteMeasure, DiscreteSpace, Metric};
use crate::report::{ExperimentReport, Verdict};

/// `f_α(y) = min_x { α(y) d(x, y) + f(x) }`.
pub fn inf_convolution(f: &[f64], alpha: &[f64], metric: &Metric, space: &DiscreteSpace) -> Result<Vec<f64>> {
    let d = metric.matrix(space)?;
    let m = space.len();
    if f.len() != m || alpha.len() != m {
        return domain(format!("f and alpha need {m} values"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return domain("f must be finite");
    }
    Ok((0..m)
        .map(|y| {
            (0..m)
                .map(|x| alpha[y] * d[x][y] + f[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Exact check of the dual-form expectation against `1 + 1e-9`.
#[allow(clippy::too_many_arguments)]
pub fn dual_form_check(
    p_meas: &DiscreteMeasure,
    c: f64,
    p: f64,
    metric: &Metric,
    f: &[f64],
    alpha: &[f64],
    lambda: f64,
    inverted: bool,
) -> Result<ExperimentReport> {
    if !(lambda > 0.0) {
        return domain("lambda must be positive");
    }
    if alpha.iter().any(|a| !(*a >= 0.0)) {
        return domain("alpha must be nonnegative");
    }
    if !(1.0..=2.0).contains(&p) {
        return domain("exponent must lie in [1, 2]");
    }
    let w = p_meas.weights();
    let fa = inf_convolution(f, alpha, metric, p_meas.space())?;
    let pf = p_meas.expect(f);
    // (a^q - 1)/q, which for q = ∞ is 0 when a <= 1 and +∞ otherwise.
    let penalty = |a: f64| -> f64 {
        if p == 1.0 {
            if a <= 1.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            let q = p / (p - 1.0);
            (a.powf(q) - 1.0) / q
        }
    };
    let support = || (0..w.len()).filter(|&y| w[y] > 0.0);
    let log_expect = if inverted {
        let pfa = p_meas.expect(&fa);
        let mean_pen = if p == 1.0 {
            support().map(|y| penalty(alpha[y])).fold(0.0, f64::max)
        } else {
            let q = p / (p - 1.0);
            (support().map(|y| w[y] * alpha[y].powf(q)).sum::<f64>() - 1.0) / q
        };
        log_sum_exp(support().map(|y| {
            w[y].ln() + lambda * (pfa - f[y]) - c * lambda * lambda * (mean_pen + 0.5)
        }))
    } else {
        log_sum_exp(support().map(|y| {
            w[y].ln() + lambda * (fa[y] - pf) - c * lambda * lambda * (penalty(alpha[y]) + 0.5)
        }))
    };
    let pass = log_expect <= (1e-9f64).ln_1p();
    let id = if inverted { "weak-transport-dual-inverted" } else { "weak-transport-dual" };
    Ok(ExperimentReport::new("dual-form", id)
        .sides(log_expect.exp(), 1.0)
        .params(json!({ "C": c, "p": p, "lambda": lambda, "inverted": inverted }))
        .verdict(Verdict::from_bool(pass))
        .note(format!("log expectation {log_expect}")))
}
