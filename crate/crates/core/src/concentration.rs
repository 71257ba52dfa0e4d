//! Exponential concentration inequalities checked numerically.
//!
//! * [`distance_to_convex_hull`] — exact Euclidean distance to the convex
//!   hull of finitely many points (Wolfe's minimum-norm-point algorithm).
//! * [`convex_distance_dt`] — Talagrand's convex distance, i.e. the distance
//!   from the origin to the hull of disagreement-indicator vectors.
//! * [`mc_exponential_check`] — Monte-Carlo estimate of `E exp(·) ≤ 1`
//!   claims in log-sum-exp form, with standard errors.
//! * Verifiers for the Tsirel'son inequality (convex and concave forms),
//!   sub-Gaussian linear functionals, the convex Poincaré inequality, the
//!   Hamming self-bounding form, and both Talagrand inequalities.
//!
//! Samplers are closures drawing one vector from a `ChaCha8Rng`; samples are
//! drawn in fixed-size chunks with one stream per chunk, so every estimate is
//! independent of the number of worker threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{domain, Error, Result};
use crate::report::{ExperimentReport, Verdict};
use crate::processes::{simulate, Innovation, ProcessSpec};
use crate::rng::trial_rng;

/// Draws one sample vector.
pub type Sampler<'a> = dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync + 'a;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Samples per random stream.
const CHUNK: usize = 4096;
/// Stream offsets separating independent batches of one experiment.
const CENTERING_STREAMS: u64 = 1 << 40;
const AUXILIARY_STREAMS: u64 = 2 << 40;
/// Default slack, in standard errors, for Monte-Carlo verdicts.
pub const DEFAULT_SLACK: f64 = 3.0;
/// Minimum Monte-Carlo sample size for the exponential checks.
pub const MIN_SAMPLES: usize = 10_000;

/// Structural claim attached to a [`TestFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    SeparatelyConvex,
    SeparatelyConcave,
    /// Lipschitz with the given constant for the Euclidean norm.
    Lipschitz(f64),
    /// `f(x) - f(y) ≤ Σ_j α_j(x) 1{x_j ≠ y_j}`, with `α` supplied as the
    /// gradient callback.
    SelfBoundingHamming,
}

/// A real function on `R^n` with optional (sub)gradient and a shape claim.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub shape: Shape,
    value: ScalarFn,
    gradient: Option<VectorFn>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn argmax(x: &[f64]) -> usize {
    (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a))).unwrap_or(0)
}

fn argmin(x: &[f64]) -> usize {
    (0..x.len()).min_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b))).unwrap_or(0)
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        shape: Shape,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: Option<VectorFn>,
    ) -> Self {
        Self {
            name: name.into(),
            shape,
            value: Arc::new(value),
            gradient,
        }
    }

    pub fn with_gradient(
        name: impl Into<String>,
        shape: Shape,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, shape, value, Some(Arc::new(gradient)))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }

    fn grad_norm_sq(&self, x: &[f64]) -> Result<f64> {
        self.gradient(x)
            .map(|g| norm_sq(&g))
            .ok_or_else(|| Error::Domain(format!("function {} has no gradient", self.name)))
    }

    /// `s · f`; a negative factor swaps convex and concave claims.
    pub fn scaled(&self, s: f64) -> TestFunction {
        let value = self.value.clone();
        let gradient = self.gradient.clone().map(|g| -> VectorFn {
            Arc::new(move |x: &[f64]| g(x).into_iter().map(|v| s * v).collect())
        });
        let shape = match (self.shape, s < 0.0) {
            (Shape::SeparatelyConvex, true) => Shape::SeparatelyConcave,
            (Shape::SeparatelyConcave, true) => Shape::SeparatelyConvex,
            (Shape::Lipschitz(l), _) => Shape::Lipschitz(l * s.abs()),
            (other, _) => other,
        };
        TestFunction {
            name: format!("{}*{}", s, self.name),
            shape,
            value: Arc::new(move |x: &[f64]| s * value(x)),
            gradient,
        }
    }

    /// Numerically spot-check the shape claim and the gradient callback at
    /// `points` samples; the first violation aborts with a domain error.
    pub fn spot_check(&self, sampler: &Sampler, points: usize, seed: u64) -> Result<()> {
        let mut rng = trial_rng(seed, AUXILIARY_STREAMS + 7);
        let fail = |what: String| Err(Error::Domain(format!("spot check of {} failed: {what}", self.name)));
        for _ in 0..points {
            let x = sampler(&mut rng);
            let y = sampler(&mut rng);
            let fx = self.value(&x);
            if !fx.is_finite() {
                return fail(format!("non-finite value at {x:?}"));
            }
            match self.shape {
                Shape::SeparatelyConvex | Shape::SeparatelyConcave => {
                    let j = rng.gen_range(0..x.len());
                    let mut b = x.clone();
                    b[j] += (1.0 + x[j].abs()) * rng.sample::<f64, _>(StandardNormal);
                    let mut mid = x.clone();
                    mid[j] = 0.5 * (x[j] + b[j]);
                    let chord = 0.5 * (fx + self.value(&b));
                    let fm = self.value(&mid);
                    let tol = 1e-9 * (1.0 + chord.abs());
                    let bad = match self.shape {
                        Shape::SeparatelyConvex => fm > chord + tol,
                        _ => fm < chord - tol,
                    };
                    if bad {
                        return fail(format!("midpoint inequality along coordinate {j} at {x:?}"));
                    }
                    if let Some(g) = self.gradient(&x) {
                        for (k, gk) in g.iter().enumerate() {
                            let h = 1e-6 * x[k].abs().max(1.0);
                            let (mut up, mut down) = (x.clone(), x.clone());
                            up[k] += h;
                            down[k] -= h;
                            let fd = (self.value(&up) - self.value(&down)) / (2.0 * h);
                            if (gk - fd).abs() > 1e-5 * fd.abs().max(1.0) {
                                return fail(format!("gradient {gk} vs difference quotient {fd} at coordinate {k}"));
                            }
                        }
                    }
                }
                Shape::Lipschitz(l) => {
                    let dist = norm_sq(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
                    if (fx - self.value(&y)).abs() > l * dist * (1.0 + 1e-9) + 1e-12 {
                        return fail(format!("Lipschitz bound {l} exceeded"));
                    }
                }
                Shape::SelfBoundingHamming => {
                    let alpha = self
                        .gradient(&x)
                        .ok_or_else(|| Error::Domain("self-bounding functions need weights".into()))?;
                    let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| if rng.gen::<bool>() { *a } else { *b }).collect();
                    let bound: f64 = x.iter().zip(&mixed).zip(&alpha).filter(|((a, b), _)| a != b).map(|(_, w)| w).sum();
                    if fx - self.value(&mixed) > bound + 1e-9 * (1.0 + fx.abs()) {
                        return fail("self-bounding condition violated".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ten separately convex functions on `R^n` with subgradients: a linear
/// form, max, ℓ1/ℓ2/ℓ∞ norms, a hinge sum, a max of linear forms, the
/// range, a shifted ℓ2 norm and the sum of the two largest coordinates.
pub fn convex_battery(n: usize) -> Vec<TestFunction> {
    assert!(n >= 2, "the battery needs at least two coordinates");
    let a: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (n as f64).sqrt()).collect();
    let a2 = a.clone();
    let convex = Shape::SeparatelyConvex;
    let safe_unit = |x: &[f64]| -> Vec<f64> {
        let r = norm_sq(x).sqrt();
        if r == 0.0 {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|v| v / r).collect()
        }
    };
    let shift = 0.5;
    vec![
        TestFunction::with_gradient("linear", convex, move |x| dot(&a, x), move |_| a2.clone()),
        TestFunction::with_gradient("max", convex, |x| x[argmax(x)], |x| unit(x.len(), argmax(x))),
        TestFunction::with_gradient("l2-norm", convex, |x| norm_sq(x).sqrt(), safe_unit),
        TestFunction::with_gradient("l1-norm", convex, |x| x.iter().map(|v| v.abs()).sum(), |x| {
            x.iter().map(|v| if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 }).collect()
        }),
        TestFunction::with_gradient(
            "linf-norm",
            convex,
            |x| x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            |x| {
                let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
                let k = argmax(&abs);
                let mut g = vec![0.0; x.len()];
                g[k] = x[k].signum();
                g
            },
        ),
        TestFunction::with_gradient(
            "hinge-sum",
            convex,
            move |x| x.iter().map(|v| (v - shift).max(0.0)).sum(),
            move |x| x.iter().map(|v| if *v > shift { 1.0 } else { 0.0 }).collect(),
        ),
        TestFunction::with_gradient(
            "max-of-linear",
            convex,
            |x| {
                let n = x.len();
                let forms = [x.iter().sum::<f64>() / n as f64, x[0], 0.5 - x[n - 1]];
                forms[argmax(&forms)]
            },
            |x| {
                let n = x.len();
                let forms = [x.iter().sum::<f64>() / n as f64, x[0], 0.5 - x[n - 1]];
                match argmax(&forms) {
                    0 => vec![1.0 / n as f64; n],
                    1 => unit(n, 0),
                    _ => unit(n, n - 1).into_iter().map(|v| -v).collect(),
                }
            },
        ),
        TestFunction::with_gradient("range", convex, |x| x[argmax(x)] - x[argmin(x)], |x| {
            let mut g = vec![0.0; x.len()];
            let (hi, lo) = (argmax(x), argmin(x));
            if hi != lo {
                g[hi] += 1.0;
                g[lo] -= 1.0;
            }
            g
        }),
        TestFunction::with_gradient(
            "shifted-l2-norm",
            convex,
            move |x| x.iter().map(|v| (v - shift).powi(2)).sum::<f64>().sqrt(),
            move |x| safe_unit(&x.iter().map(|v| v - shift).collect::<Vec<_>>()),
        ),
        TestFunction::with_gradient(
            "top-two-sum",
            convex,
            |x| {
                let mut s = x.to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                s[0] + s[1]
            },
            |x| {
                let first = argmax(x);
                let mut rest = x.to_vec();
                rest[first] = f64::NEG_INFINITY;
                let second = argmax(&rest);
                let mut g = unit(x.len(), first);
                g[second] += 1.0;
                g
            },
        ),
    ]
}

/// Sampler of `dim` iid coordinates with the given law.
pub fn iid_sampler(law: Innovation, dim: usize) -> Result<impl Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync> {
    law.validate()?;
    if dim == 0 {
        return domain("sampler dimension must be positive");
    }
    Ok(move |rng: &mut ChaCha8Rng| (0..dim).map(|_| law.sample(rng)).collect())
}

/// Sampler of `(X_1, .., X_length)` from `X_0 = start`, flattened
/// coordinate by coordinate; each draw uses a fresh simulation seed.
pub fn path_sampler(spec: ProcessSpec, length: usize, start: Vec<f64>) -> Result<impl Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync> {
    spec.validate()?;
    simulate(&spec, 1, &start, 0)?;
    if length == 0 {
        return domain("path length must be positive");
    }
    Ok(move |rng: &mut ChaCha8Rng| {
        let seed: u64 = rng.gen();
        simulate(&spec, length, &start, seed)
            .expect("validated process")
            .into_iter()
            .flatten()
            .collect()
    })
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`.
    pub se: f64,
    /// `log(mean)` and its delta-method standard error `se / mean`.
    pub log_mean: f64,
    pub log_se: f64,
    pub n: usize,
    pub seed: u64,
}

/// Evaluate `f` on `n` samples drawn chunk-wise from streams starting at
/// `stream_base`; output order is the sample order.
fn sample_map<T: Send>(
    sampler: &Sampler,
    n: usize,
    seed: u64,
    stream_base: u64,
    f: &(dyn Fn(&[f64]) -> Result<T> + Sync),
) -> Result<Vec<T>> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trial_rng(seed, stream_base + c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&sampler(&mut rng))).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `E exp(e_i)` from exponents, computed relative to the largest exponent.
fn exp_estimate(exponents: &[f64], seed: u64) -> Result<McEstimate> {
    if let Some(i) = exponents.iter().position(|e| e.is_nan() || *e == f64::INFINITY) {
        return Err(Error::Numeric(format!("exponent of sample {i} is {}", exponents[i])));
    }
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(McEstimate { mean: 0.0, se: 0.0, log_mean: f64::NEG_INFINITY, log_se: 0.0, n: exponents.len(), seed });
    }
    let scaled: Vec<f64> = exponents.iter().map(|e| (e - top).exp()).collect();
    let (m, s) = mean_se(&scaled);
    let log_mean = top + m.ln();
    Ok(McEstimate {
        mean: log_mean.exp(),
        se: s * top.exp(),
        log_mean,
        log_se: s / m,
        n: exponents.len(),
        seed,
    })
}

/// Estimate `E[exp(exponent(X))]` over `n` samples and test it against 1:
/// passes iff `mean ≤ 1 + slack · se`.
pub fn mc_exponential_check(
    sampler: &Sampler,
    exponent: &(dyn Fn(&[f64]) -> f64 + Sync),
    n: usize,
    seed: u64,
    slack: f64,
) -> Result<(McEstimate, bool)> {
    if n < MIN_SAMPLES {
        return domain(format!("exponential checks need at least {MIN_SAMPLES} samples"));
    }
    let e = sample_map(sampler, n, seed, 0, &|x| Ok(exponent(x)))?;
    let est = exp_estimate(&e, seed)?;
    Ok((est, est.mean <= 1.0 + slack * est.se))
}

struct Centering {
    mean: f64,
    mean_se: f64,
    grad: f64,
    grad_se: f64,
}

fn centering(sampler: &Sampler, g: &TestFunction, n: usize, seed: u64, need_grad: bool) -> Result<Centering> {
    let vals = sample_map(sampler, n, seed, CENTERING_STREAMS, &|x| {
        let gr = if need_grad { g.grad_norm_sq(x)? } else { 0.0 };
        Ok((g.value(x), gr))
    })?;
    let (mean, m_se) = mean_se(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
    let (grad, grad_se) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
    Ok(Centering { mean, mean_se: m_se, grad, grad_se })
}

/// Tsirel'son inequality for a separately convex `g`,
/// `E exp(g - E g - C |∇g|²/2) ≤ 1`, or its concave form with
/// `C E|∇g|²` in place of `C |∇g|²`.
///
/// `E g` (and `E|∇g|²`) come from an independent batch of the same size;
/// their sampling error is folded into the reported standard error.
pub fn tsirelson_check(sampler: &Sampler, g: &TestFunction, c: f64, n: usize, seed: u64, slack: f64) -> Result<ExperimentReport> {
    let concave = match g.shape {
        Shape::SeparatelyConvex => false,
        Shape::SeparatelyConcave => true,
        other => return domain(format!("Tsirel'son check needs a convex or concave function, got {other:?}")),
    };
    g.spot_check(sampler, 100, seed)?;
    let cen = centering(sampler, g, n, seed, concave)?;
    let exponent = |x: &[f64]| -> f64 {
        let penalty = if concave { cen.grad } else { g.grad_norm_sq(x).unwrap_or(f64::NAN) };
        g.value(x) - cen.mean - c * penalty / 2.0
    };
    let (est, _) = mc_exponential_check(sampler, &exponent, n, seed, slack)?;
    let offset_var = cen.mean_se.powi(2) + if concave { (c * cen.grad_se / 2.0).powi(2) } else { 0.0 };
    let se = (est.se.powi(2) + est.mean.powi(2) * offset_var).sqrt();
    let id = if concave { "tsirelson-concave" } else { "tsirelson-convex" };
    Ok(ExperimentReport::new("tsirelson", id)
        .sides(est.mean, 1.0)
        .ses(se, 0.0)
        .verdict(Verdict::from_bool(est.mean <= 1.0 + slack * se))
        .params(json!({"function": g.name, "C": c, "samples": n, "slack_se": slack, "centering_mean": cen.mean}))
        .seed(seed)
        .note("Monte-Carlo check of the exponential form; the converse direction is only checked on finite spaces"))
}

/// Sub-Gaussian bound for a linear functional at each `λ`:
/// `log E exp(λ(<a,X> - E<a,X>)) ≤ C λ² |a|² / 2`. Reports the worst `λ`.
pub fn subgaussian_check(
    sampler: &Sampler,
    a: &[f64],
    c: f64,
    lambdas: &[f64],
    n: usize,
    seed: u64,
    slack: f64,
) -> Result<ExperimentReport> {
    if lambdas.is_empty() {
        return domain("need at least one lambda");
    }
    let a = a.to_vec();
    let a_sq = norm_sq(&a);
    let linear = {
        let (a1, a2) = (a.clone(), a.clone());
        TestFunction::with_gradient("linear", Shape::SeparatelyConvex, move |x| dot(&a1, x), move |_| a2.clone())
    };
    let cen = centering(sampler, &linear, n, seed, false)?;
    let mut worst: Option<(f64, f64, f64, f64)> = None; // (margin in SEs, λ, mean, se)
    for (i, &lambda) in lambdas.iter().enumerate() {
        let exponent = |x: &[f64]| lambda * (dot(&a, x) - cen.mean) - c * lambda * lambda * a_sq / 2.0;
        let (est, _) = mc_exponential_check(sampler, &exponent, n, seed.wrapping_add(i as u64), slack)?;
        let se = (est.se.powi(2) + (est.mean * lambda * cen.mean_se).powi(2)).sqrt();
        let margin = if se > 0.0 { (est.mean - 1.0) / se } else if est.mean > 1.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        if worst.map_or(true, |w| margin > w.0) {
            worst = Some((margin, lambda, est.mean, se));
        }
    }
    let (margin, lambda, mean, se) = worst.expect("nonempty lambdas");
    Ok(ExperimentReport::new("sub-gaussian", "sub-gaussian-linear")
        .sides(mean, 1.0)
        .ses(se, 0.0)
        .verdict(Verdict::from_bool(margin <= slack))
        .params(json!({"C": c, "lambdas": lambdas, "worst_lambda": lambda, "samples": n}))
        .seed(seed))
}

/// Convex Poincaré inequality `Var g ≤ C E|∇g|²`.
pub fn convex_poincare_check(sampler: &Sampler, g: &TestFunction, c: f64, n: usize, seed: u64, slack: f64) -> Result<ExperimentReport> {
    if g.shape != Shape::SeparatelyConvex && g.shape != Shape::SeparatelyConcave {
        return domain("convex Poincaré check needs a separately convex (or concave) function");
    }
    if n < MIN_SAMPLES {
        return domain(format!("Poincaré check needs at least {MIN_SAMPLES} samples"));
    }
    g.spot_check(sampler, 100, seed)?;
    let vals = sample_map(sampler, n, seed, 0, &|x| Ok((g.value(x), g.grad_norm_sq(x)?)))?;
    let values: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let (mean, _) = mean_se(&values);
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let (var, var_se) = mean_se(&sq);
    let var = var * n as f64 / (n as f64 - 1.0);
    let (grad, grad_se) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
    let right = c * grad;
    let se = (var_se.powi(2) + (c * grad_se).powi(2)).sqrt();
    Ok(ExperimentReport::new("convex-poincare", "convex-poincare")
        .sides(var, right)
        .ses(var_se, c * grad_se)
        .verdict(Verdict::from_bool(var <= right + slack * se))
        .params(json!({"function": g.name, "C": c, "samples": n, "slack_se": slack}))
        .seed(seed))
}

/// Hamming self-bounding form: for `f(x) - f(y) ≤ Σ_j α_j(x) 1{x_j ≠ y_j}`,
/// `E exp(λ(f - Ef) - Cλ²Σα_j²/2) ≤ 1`, or with `inverted`,
/// `E exp(λ(Ef - f) - Cλ²ΣE[α_j²]/2) ≤ 1`.
#[allow(clippy::too_many_arguments)]
pub fn self_bounding_check(
    sampler: &Sampler,
    f: &TestFunction,
    c: f64,
    lambda: f64,
    inverted: bool,
    n: usize,
    seed: u64,
    slack: f64,
) -> Result<ExperimentReport> {
    if f.shape != Shape::SelfBoundingHamming {
        return domain("self-bounding check needs a self-bounding function with weights");
    }
    if !(lambda > 0.0) {
        return domain("lambda must be positive");
    }
    f.spot_check(sampler, 100, seed)?;
    let cen = centering(sampler, f, n, seed, true)?;
    let exponent = |x: &[f64]| -> f64 {
        if inverted {
            lambda * (cen.mean - f.value(x)) - c * lambda * lambda * cen.grad / 2.0
        } else {
            lambda * (f.value(x) - cen.mean) - c * lambda * lambda * f.grad_norm_sq(x).unwrap_or(f64::NAN) / 2.0
        }
    };
    let (est, _) = mc_exponential_check(sampler, &exponent, n, seed, slack)?;
    let offset_var = (lambda * cen.mean_se).powi(2) + if inverted { (c * lambda * lambda * cen.grad_se / 2.0).powi(2) } else { 0.0 };
    let se = (est.se.powi(2) + est.mean.powi(2) * offset_var).sqrt();
    let id = if inverted { "self-bounding-hamming-inverted" } else { "self-bounding-hamming" };
    Ok(ExperimentReport::new("self-bounding", id)
        .sides(est.mean, 1.0)
        .ses(se, 0.0)
        .verdict(Verdict::from_bool(est.mean <= 1.0 + slack * se))
        .params(json!({"function": f.name, "C": c, "lambda": lambda, "samples": n}))
        .seed(seed))
}

/// Distance to a convex hull with the minimizing convex combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HullDistance {
    pub distance: f64,
    /// Convex weights over the input points (zero off the active set).
    pub weights: Vec<f64>,
    /// The nearest point of the hull.
    pub nearest: Vec<f64>,
}

/// Minimizer of `|Σ w_i p_i|` over the affine hull of `p[s]`.
fn affine_minimizer(p: &[Vec<f64>], s: &[usize]) -> Vec<f64> {
    let k = s.len();
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            m[(a, b)] = dot(&p[s[a]], &p[s[b]]);
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = m
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .or_else(|| m.svd(true, true).solve(&rhs, 1e-14).ok())
        .unwrap_or_else(|| DVector::from_element(k + 1, 1.0 / k as f64));
    sol.iter().take(k).copied().collect()
}

/// Wolfe's minimum-norm-point algorithm on the hull of `p`.
fn min_norm_point(p: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = p[0].len();
    let scale = p.iter().map(|v| norm_sq(v)).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let combine = |s: &[usize], lam: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; dim];
        for (&i, &l) in s.iter().zip(lam) {
            for (zk, pk) in z.iter_mut().zip(&p[i]) {
                *zk += l * pk;
            }
        }
        z
    };
    let start = (0..p.len())
        .min_by(|&a, &b| norm_sq(&p[a]).total_cmp(&norm_sq(&p[b])))
        .unwrap_or(0);
    let mut s = vec![start];
    let mut lam = vec![1.0];
    let mut z = p[start].clone();
    for _ in 0..(20 * p.len() + 100) {
        let zz = norm_sq(&z);
        let (j, zp) = (0..p.len())
            .map(|i| (i, dot(&z, &p[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("nonempty point set");
        if zz - zp <= 1e-13 * scale || s.contains(&j) {
            break;
        }
        s.push(j);
        lam.push(0.0);
        loop {
            let w = affine_minimizer(p, &s);
            if w.iter().all(|v| *v > 1e-15) {
                lam = w;
                break;
            }
            let mut theta = 1.0f64;
            for (l, wv) in lam.iter().zip(&w) {
                if *wv <= 1e-15 && l - wv > 0.0 {
                    theta = theta.min(l / (l - wv));
                }
            }
            for (l, wv) in lam.iter_mut().zip(&w) {
                *l = (1.0 - theta) * *l + theta * wv;
            }
            let keep: Vec<usize> = (0..s.len()).filter(|&k| lam[k] > 1e-15).collect();
            if keep.len() == s.len() {
                // No progress is possible; drop the smallest weight.
                let drop = argmin(&lam);
                s.remove(drop);
                lam.remove(drop);
            } else {
                s = keep.iter().map(|&k| s[k]).collect();
                lam = keep.iter().map(|&k| lam[k]).collect();
            }
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
            if s.len() == 1 {
                lam = vec![1.0];
                break;
            }
        }
        z = combine(&s, &lam);
    }
    let mut weights = vec![0.0; p.len()];
    for (&i, &l) in s.iter().zip(&lam) {
        weights[i] += l;
    }
    (weights, z)
}

/// Euclidean distance from `x` to the convex hull of `points`.
pub fn distance_to_convex_hull(x: &[f64], points: &[Vec<f64>]) -> Result<HullDistance> {
    if points.is_empty() {
        return domain("convex hull of an empty point set");
    }
    if points.iter().any(|p| p.len() != x.len()) {
        return domain("points and query must have equal dimension");
    }
    if points.iter().flatten().chain(x).any(|v| !v.is_finite()) {
        return domain("points must be finite");
    }
    let shifted: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
    let (weights, z) = min_norm_point(&shifted);
    Ok(HullDistance {
        distance: norm_sq(&z).sqrt(),
        nearest: z.iter().zip(x).map(|(a, b)| a + b).collect(),
        weights,
    })
}

/// Talagrand's convex distance `sup_{|c| ≤ 1} inf_{y ∈ A} Σ_j c_j 1{x_j ≠ y_j}`,
/// computed as the distance from the origin to the hull of the vectors
/// `(1{x_j ≠ y_j})_j`, `y ∈ A`.
pub fn convex_distance_dt(x: &[f64], a: &[Vec<f64>]) -> Result<HullDistance> {
    if a.iter().any(|y| y.len() != x.len()) {
        return domain("points of A must have the dimension of x");
    }
    let indicators: Vec<Vec<f64>> = a
        .iter()
        .map(|y| x.iter().zip(y).map(|(u, v)| if u != v { 1.0 } else { 0.0 }).collect())
        .collect();
    distance_to_convex_hull(&vec![0.0; x.len()], &indicators)
}

/// Which Talagrand inequality to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TalagrandVariant {
    /// `E exp(d_T²(X, A) / 4C) ≤ 1 / P(A)`.
    HammingDt,
    /// `E exp(d²(X, conv A) / 4C) ≤ 1 / P(A)` with the Euclidean distance.
    EuclideanDn,
}

/// Monte-Carlo Talagrand check.
///
/// `P(A)` is estimated on one batch whose first `hull_cap` members of `A`
/// stand in for `A`; distances to that subset over-estimate the true ones,
/// so the check is conservative. Points in `A` have distance 0 exactly.
/// Passes iff `left ≤ right (1 + slack · rel. SE)`.
#[allow(clippy::too_many_arguments)]
pub fn talagrand_check(
    sampler: &Sampler,
    in_a: &(dyn Fn(&[f64]) -> bool + Sync),
    c: f64,
    variant: TalagrandVariant,
    n: usize,
    hull_cap: usize,
    seed: u64,
    slack: f64,
) -> Result<ExperimentReport> {
    if !(c > 0.0) {
        return domain("C must be positive");
    }
    let aux = sample_map(sampler, n, seed, AUXILIARY_STREAMS, &|x| Ok((in_a(x), x.to_vec())))?;
    let hits = aux.iter().filter(|(a, _)| *a).count();
    if hits == 0 {
        return Err(Error::Numeric("no sample fell in A".into()));
    }
    let pa = hits as f64 / n as f64;
    if pa < 0.01 {
        return domain(format!("estimated P(A) = {pa} is below 0.01"));
    }
    let mut hull: Vec<Vec<f64>> = Vec::new();
    for (_, x) in aux.into_iter().filter(|(a, _)| *a) {
        if hull.len() >= hull_cap.max(1) {
            break;
        }
        if variant == TalagrandVariant::HammingDt && hull.contains(&x) {
            continue;
        }
        hull.push(x);
    }
    let terms = sample_map(sampler, n, seed, 0, &|x| {
        if in_a(x) {
            return Ok(1.0);
        }
        let d = match variant {
            TalagrandVariant::HammingDt => convex_distance_dt(x, &hull)?.distance,
            TalagrandVariant::EuclideanDn => distance_to_convex_hull(x, &hull)?.distance,
        };
        Ok((d * d / (4.0 * c)).exp())
    })?;
    let (left, left_se) = mean_se(&terms);
    let right = 1.0 / pa;
    let rel_right = ((1.0 - pa) / (pa * n as f64)).sqrt();
    let rel = ((left_se / left).powi(2) + rel_right.powi(2)).sqrt();
    let id = match variant {
        TalagrandVariant::HammingDt => "talagrand-convex-distance",
        TalagrandVariant::EuclideanDn => "talagrand-euclidean-hull",
    };
    Ok(ExperimentReport::new("talagrand", id)
        .sides(left, right)
        .ses(left_se, right * rel_right)
        .verdict(Verdict::from_bool(left <= right * (1.0 + slack * rel)))
        .params(json!({"variant": variant, "C": c, "samples": n, "hull_points": hull.len(), "p_a": pa}))
        .seed(seed)
        .note("A is represented by sampled members; distances are over-estimated, so the check is conservative"))
}

/// Exact Talagrand convex-distance check on a finite product space.
///
/// `atoms[j]` lists `(value, probability)` for coordinate `j`; the law is
/// their product. Every point is enumerated and `d_T` is computed against
/// the full set `A`.
pub fn talagrand_hamming_exact(
    atoms: &[Vec<(f64, f64)>],
    in_a: &dyn Fn(&[f64]) -> bool,
    c: f64,
) -> Result<ExperimentReport> {
    let size: usize = atoms.iter().map(|a| a.len()).product();
    if atoms.is_empty() || size == 0 || size > 1 << 16 {
        return domain("exact enumeration needs between 1 and 65536 points");
    }
    if !(c > 0.0) {
        return domain("C must be positive");
    }
    for a in atoms {
        let s: f64 = a.iter().map(|(_, p)| p).sum();
        if (s - 1.0).abs() > 1e-12 || a.iter().any(|(_, p)| *p < 0.0) {
            return domain("coordinate laws must be probability vectors");
        }
    }
    let mut points = Vec::with_capacity(size);
    for mut code in 0..size {
        let mut x = Vec::with_capacity(atoms.len());
        let mut prob = 1.0;
        for a in atoms.iter().rev() {
            let (v, p) = a[code % a.len()];
            code /= a.len();
            x.push(v);
            prob *= p;
        }
        x.reverse();
        points.push((x, prob));
    }
    let a_set: Vec<Vec<f64>> = points.iter().filter(|(x, p)| *p > 0.0 && in_a(x)).map(|(x, _)| x.clone()).collect();
    let pa: f64 = points.iter().filter(|(x, _)| in_a(x)).map(|(_, p)| p).sum();
    if a_set.is_empty() || pa <= 0.0 {
        return domain("A has probability zero");
    }
    let left = points
        .par_iter()
        .map(|(x, p)| {
            if *p == 0.0 {
                return Ok(0.0);
            }
            let d = convex_distance_dt(x, &a_set)?.distance;
            Ok(p * (d * d / (4.0 * c)).exp())
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>();
    let right = 1.0 / pa;
    Ok(ExperimentReport::new("talagrand-exact", "talagrand-convex-distance")
        .sides(left, right)
        .ses(0.0, 0.0)
        .verdict(Verdict::from_bool(left <= right * (1.0 + 1e-12)))
        .params(json!({"C": c, "points": size, "a_size": a_set.len(), "p_a": pa})))
}
