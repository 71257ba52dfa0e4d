//! Simulators for dependent processes driven by iid innovations.
//!
//! Every model is a recursion `X_t = F(past; ξ_t)` with iid innovations, so
//! two trajectories started from different states but fed the *same*
//! innovations form a natural coupling. Averaging `d(X_t, X'_t)^p` over
//! replicated couplings estimates the coefficients `γ_{t,0}(p)` and their
//! sum `S`.
//!
//! Models: vector ARMA in state-space form, general affine recursions
//! `f(x) + M(x) ξ`, scalar chains with infinite memory, AR(∞), and finite
//! Markov chains driven by a shared uniform (inverse-CDF coupling).

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::trial_rng;

/// Default number of past values kept for infinite-memory recursions.
pub const DEFAULT_TRUNCATION: usize = 512;

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

fn one() -> f64 {
    1.0
}

/// Law of each innovation coordinate (all coordinates iid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Innovation {
    /// Centered normal with standard deviation `sd`.
    Gaussian {
        #[serde(default = "one")]
        sd: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    Uniform {
        #[serde(default = "one")]
        half_width: f64,
    },
    /// `±1` with probability one half each.
    Rademacher,
    /// Normal with standard deviation `sd` conditioned on `|ξ| ≤ bound`.
    TruncatedGaussian { sd: f64, bound: f64 },
    /// `{0, 1}`-valued with `P(ξ = 1) = p` (not centered).
    Bernoulli { p: f64 },
    /// The constant 0; turns every model into a deterministic recursion.
    Zero,
}

/// Distance used between states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMetric {
    Euclidean,
    /// Number of coordinates that differ.
    Hamming,
}

impl StateMetric {
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            StateMetric::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            StateMetric::Hamming => x.iter().zip(y).filter(|(a, b)| a != b).count() as f64,
        }
    }
}

/// A transport constant the law is known to satisfy, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaseConstant {
    pub value: f64,
    pub rationale: &'static str,
}

impl Innovation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Innovation::Gaussian { sd } => sd.is_finite() && sd >= 0.0,
            Innovation::Uniform { half_width } => half_width.is_finite() && half_width >= 0.0,
            Innovation::TruncatedGaussian { sd, bound } => sd.is_finite() && sd > 0.0 && bound.is_finite() && bound > 0.0,
            Innovation::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Innovation::Rademacher | Innovation::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid innovation parameters: {self:?}"))
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Innovation::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            Innovation::Uniform { half_width } => half_width * (2.0 * rng.gen::<f64>() - 1.0),
            Innovation::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Innovation::TruncatedGaussian { sd, bound } => loop {
                let z = sd * rng.sample::<f64, _>(StandardNormal);
                if z.abs() <= bound {
                    break z;
                }
            },
            Innovation::Bernoulli { p } => {
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Innovation::Zero => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Innovation::Bernoulli { p } => p,
            _ => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Innovation::Gaussian { sd } => sd * sd,
            Innovation::Uniform { half_width } => half_width * half_width / 3.0,
            Innovation::Rademacher => 1.0,
            Innovation::TruncatedGaussian { sd, bound } => {
                // E[Z² | |Z| ≤ b] = 1 - 2bφ(b) / (2Φ(b) - 1) for a standard normal.
                let b = bound / sd;
                let density = |z: f64| (-0.5 * z * z).exp();
                let mass = simpson(density, 0.0, b, 4000);
                sd * sd * (1.0 - b * density(b) / mass)
            }
            Innovation::Bernoulli { p } => p * (1.0 - p),
            Innovation::Zero => 0.0,
        }
    }

    /// Length of the smallest interval carrying the law, if bounded.
    pub fn support_width(&self) -> Option<f64> {
        match *self {
            Innovation::Gaussian { sd } => (sd == 0.0).then_some(0.0),
            Innovation::Uniform { half_width } => Some(2.0 * half_width),
            Innovation::Rademacher => Some(2.0),
            Innovation::TruncatedGaussian { bound, .. } => Some(2.0 * bound),
            Innovation::Bernoulli { p } => Some(if p == 0.0 || p == 1.0 { 0.0 } else { 1.0 }),
            Innovation::Zero => Some(0.0),
        }
    }

    /// Base weak-transport constant (exponent 2) for one innovation
    /// coordinate under `metric`.
    ///
    /// * Hamming: every law satisfies the inequality with constant 1.
    /// * Euclidean, Gaussian: the quadratic transport inequality with `sd²`.
    /// * Euclidean, bounded support of width `L`: the convex-function form
    ///   that holds with constant 1 on `[0, 1]`, rescaled to `L²`.
    pub fn base_constant(&self, metric: StateMetric) -> Option<BaseConstant> {
        match metric {
            StateMetric::Hamming => Some(BaseConstant {
                value: 1.0,
                rationale: "any law, Hamming cost, constant 1",
            }),
            StateMetric::Euclidean => match (*self, self.support_width()) {
                (Innovation::Gaussian { sd }, _) => Some(BaseConstant {
                    value: sd * sd,
                    rationale: "Gaussian law, quadratic transport inequality with constant sd^2",
                }),
                (_, Some(width)) => Some(BaseConstant {
                    value: width * width,
                    rationale: "bounded law, weak transport for convex functions rescaled from [0,1]",
                }),
                _ => None,
            },
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    for i in 1..n {
        total += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    total * h / 3.0
}

/// User-supplied vector map for the affine model.
#[derive(Clone)]
pub struct VectorMap(pub Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>);

/// User-supplied matrix map for the affine model.
#[derive(Clone)]
pub struct MatrixMap(pub Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>);

impl fmt::Debug for VectorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VectorMap(..)")
    }
}

impl fmt::Debug for MatrixMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MatrixMap(..)")
    }
}

/// Drift `f` of the affine model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    /// `f(x) = A x`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `f(x) = A tanh(x)` with `tanh` applied coordinatewise.
    Tanh { matrix: Vec<Vec<f64>> },
    /// Arbitrary map on `R^dim` with a declared Lipschitz constant.
    #[serde(skip)]
    Custom { dim: usize, map: VectorMap, lipschitz: f64 },
}

/// Volatility `M` of the affine model; must be uniformly bounded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Volatility {
    /// Constant `k × k'` loading matrix.
    Constant { matrix: Vec<Vec<f64>> },
    /// `M(x) = min(cap, base + slope ‖x‖) I`.
    Scaled { base: f64, slope: f64, cap: f64 },
    /// Arbitrary `k × noise_dim` matrix map with a declared bound on its
    /// operator norm.
    #[serde(skip)]
    Custom { noise_dim: usize, map: MatrixMap, bound: f64 },
}

/// Coordinatewise transformation of past values in infinite-memory chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Tanh,
}

impl Link {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Tanh => x.tanh(),
        }
    }
}

/// Volatility `base + Σ_i b_i |tanh(X_{t-i})|` of an infinite-memory chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryVolatility {
    pub base: f64,
    pub weights: Vec<f64>,
}

/// Generative description of a dependent process.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    /// `X_{t+1} = A X_t + L ξ_{t+1}`; `L` defaults to the identity.
    Arma {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        loading: Option<Vec<Vec<f64>>>,
        innovation: Innovation,
    },
    /// `X_{t+1} = f(X_t) + M(X_t) ξ_{t+1}`.
    Affine {
        drift: Drift,
        volatility: Volatility,
        innovation: Innovation,
    },
    /// Scalar `X_t = Σ_i a_i link(X_{t-i}) + σ(past) ξ_t`.
    InfiniteMemory {
        weights: Vec<f64>,
        #[serde(default)]
        link: Link,
        #[serde(default)]
        volatility: Option<MemoryVolatility>,
        innovation: Innovation,
        #[serde(default = "default_truncation")]
        truncation: usize,
    },
    /// Scalar `X_t = Σ_i a_i X_{t-i} + ξ_t`.
    ArInfinity {
        coefficients: Vec<f64>,
        innovation: Innovation,
        #[serde(default = "default_truncation")]
        truncation: usize,
    },
    /// Finite chain on `{0, .., m-1}` stepped by inverse CDF of a shared
    /// uniform draw.
    FiniteChain { rows: Vec<Vec<f64>> },
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: Option<usize>) -> Result<usize> {
    if m.len() != rows || rows == 0 {
        return domain(format!("{name} must have {rows} rows"));
    }
    let c = cols.unwrap_or(m[0].len());
    if c == 0 || m.iter().any(|r| r.len() != c || r.iter().any(|v| !v.is_finite())) {
        return domain(format!("{name} must be a finite {rows}x{c} matrix"));
    }
    Ok(c)
}

fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.first().map_or(0, |r| r.len()), |i, j| m[i][j])
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).fold(0.0, |s, (a, b)| s + a * b))
        .collect()
}

/// Largest modulus of an eigenvalue of a square matrix.
pub fn spectral_radius(a: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    check_matrix("matrix", a, a.len(), Some(a.len()))?;
    let eig = to_dmatrix(a).complex_eigenvalues();
    Ok(eig.iter().map(|z| z.re.hypot(z.im)).fold(0.0, f64::max))
}

fn operator_norm(m: &[Vec<f64>]) -> f64 {
    to_dmatrix(m).singular_values().max()
}

impl ProcessSpec {
    /// State dimension `k`.
    pub fn dimension(&self) -> usize {
        match self {
            ProcessSpec::Arma { matrix, .. } => matrix.len(),
            ProcessSpec::Affine { drift, .. } => match drift {
                Drift::Linear { matrix } | Drift::Tanh { matrix } => matrix.len(),
                Drift::Custom { dim, .. } => *dim,
            },
            _ => 1,
        }
    }

    /// Number of innovation coordinates consumed per step.
    pub fn noise_dimension(&self) -> usize {
        match self {
            ProcessSpec::Arma { matrix, loading, .. } => loading.as_ref().map_or(matrix.len(), |l| l.first().map_or(0, |r| r.len())),
            ProcessSpec::Affine { volatility, .. } => match volatility {
                Volatility::Constant { matrix } => matrix.first().map_or(0, |r| r.len()),
                Volatility::Scaled { .. } => self.dimension(),
                Volatility::Custom { noise_dim, .. } => *noise_dim,
            },
            _ => 1,
        }
    }

    /// The metric under which the natural coupling is measured.
    pub fn natural_metric(&self) -> StateMetric {
        match self {
            ProcessSpec::FiniteChain { .. } => StateMetric::Hamming,
            _ => StateMetric::Euclidean,
        }
    }

    pub fn innovation(&self) -> Option<Innovation> {
        match self {
            ProcessSpec::Arma { innovation, .. }
            | ProcessSpec::Affine { innovation, .. }
            | ProcessSpec::InfiniteMemory { innovation, .. }
            | ProcessSpec::ArInfinity { innovation, .. } => Some(*innovation),
            ProcessSpec::FiniteChain { .. } => None,
        }
    }

    /// Check the structural invariants of the model.
    ///
    /// ARMA needs `ρ_sp(A) < 1`; infinite-memory chains need the total
    /// Lipschitz weight below one.
    pub fn validate(&self) -> Result<()> {
        if let Some(inn) = self.innovation() {
            inn.validate()?;
        }
        match self {
            ProcessSpec::Arma { matrix, loading, .. } => {
                let k = check_matrix("ARMA matrix", matrix, matrix.len(), Some(matrix.len()))?;
                if let Some(l) = loading {
                    check_matrix("ARMA loading", l, k, None)?;
                }
                let rho = spectral_radius(matrix)?;
                if rho >= 1.0 {
                    return domain(format!("ARMA matrix has spectral radius {rho} >= 1"));
                }
            }
            ProcessSpec::Affine { drift, volatility, .. } => {
                let k = self.dimension();
                match drift {
                    Drift::Linear { matrix } | Drift::Tanh { matrix } => {
                        check_matrix("drift matrix", matrix, k, Some(k))?;
                    }
                    Drift::Custom { lipschitz, .. } => {
                        if !(lipschitz.is_finite() && *lipschitz >= 0.0) {
                            return domain("custom drift needs a finite Lipschitz constant");
                        }
                    }
                }
                match volatility {
                    Volatility::Constant { matrix } => {
                        check_matrix("volatility matrix", matrix, k, None)?;
                    }
                    Volatility::Scaled { base, slope, cap } => {
                        if !(*base >= 0.0 && *slope >= 0.0 && cap.is_finite() && *cap >= 0.0) {
                            return domain("scaled volatility needs base, slope >= 0 and a finite cap");
                        }
                    }
                    Volatility::Custom { bound, .. } => {
                        if !(bound.is_finite() && *bound >= 0.0) {
                            return domain("custom volatility needs a finite bound");
                        }
                    }
                }
            }
            ProcessSpec::InfiniteMemory { weights, volatility, innovation, truncation, .. } => {
                if *truncation == 0 {
                    return domain("truncation horizon must be positive");
                }
                if weights.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return domain("memory weights must be finite and nonnegative");
                }
                let mut total: f64 = weights.iter().sum();
                if let Some(v) = volatility {
                    if v.base < 0.0 || v.weights.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                        return domain("volatility weights must be finite and nonnegative");
                    }
                    total += innovation.variance().sqrt() * v.weights.iter().sum::<f64>();
                }
                if total >= 1.0 {
                    return domain(format!("total Lipschitz weight {total} must be < 1"));
                }
            }
            ProcessSpec::ArInfinity { coefficients, truncation, .. } => {
                if *truncation == 0 {
                    return domain("truncation horizon must be positive");
                }
                let total: f64 = coefficients.iter().map(|a| a.abs()).sum();
                if !(total < 1.0) {
                    return domain(format!("sum of |a_i| = {total} must be < 1"));
                }
            }
            ProcessSpec::FiniteChain { rows } => {
                let m = check_matrix("transition matrix", rows, rows.len(), Some(rows.len()))?;
                for (i, r) in rows.iter().enumerate() {
                    let s: f64 = r.iter().sum();
                    if r.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-12 {
                        return domain(format!("row {i} of the {m}-state transition matrix is not stochastic"));
                    }
                }
            }
        }
        Ok(())
    }

    /// `Σ_i i log(i) a_i` over the supplied memory weights (finite by
    /// construction; reported to judge the summability condition).
    pub fn memory_summability(&self) -> Option<f64> {
        let w = match self {
            ProcessSpec::InfiniteMemory { weights, .. } => weights,
            ProcessSpec::ArInfinity { coefficients, .. } => coefficients,
            _ => return None,
        };
        Some(
            w.iter()
                .enumerate()
                .map(|(i, a)| {
                    let i = (i + 1) as f64;
                    i * i.ln() * a.abs()
                })
                .sum(),
        )
    }

    /// Weight discarded by truncating the past: `Σ_{i > truncation} |a_i|`.
    pub fn truncation_tail(&self) -> f64 {
        match self {
            ProcessSpec::InfiniteMemory { weights: w, truncation, .. }
            | ProcessSpec::ArInfinity { coefficients: w, truncation, .. } => {
                w.iter().skip(*truncation).map(|a| a.abs()).sum()
            }
            _ => 0.0,
        }
    }

    /// Uniform bound `K` on the operator norm of the volatility.
    pub fn volatility_bound(&self) -> Option<f64> {
        match self {
            ProcessSpec::Affine { volatility, .. } => Some(match volatility {
                Volatility::Constant { matrix } => operator_norm(matrix),
                Volatility::Scaled { cap, .. } => *cap,
                Volatility::Custom { bound, .. } => *bound,
            }),
            ProcessSpec::Arma { loading: Some(l), .. } => Some(operator_norm(l)),
            ProcessSpec::Arma { .. } | ProcessSpec::ArInfinity { .. } => Some(1.0),
            ProcessSpec::InfiniteMemory { volatility, .. } => {
                Some(volatility.as_ref().map_or(1.0, |v| v.base + v.weights.iter().sum::<f64>()))
            }
            ProcessSpec::FiniteChain { .. } => None,
        }
    }

    fn draw_noise(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        out.clear();
        match self.innovation() {
            Some(inn) => out.extend((0..self.noise_dimension()).map(|_| inn.sample(rng))),
            None => out.push(rng.gen::<f64>()),
        }
    }

    /// One step of the recursion; `past` ends with the current state.
    fn step(&self, past: &[Vec<f64>], noise: &[f64]) -> Vec<f64> {
        let current = &past[past.len() - 1];
        match self {
            ProcessSpec::Arma { matrix, loading, .. } => {
                let mut next = mat_vec(matrix, current);
                match loading {
                    Some(l) => {
                        for (x, shock) in next.iter_mut().zip(mat_vec(l, noise)) {
                            *x += shock;
                        }
                    }
                    None => {
                        for (x, e) in next.iter_mut().zip(noise) {
                            *x += e;
                        }
                    }
                }
                next
            }
            ProcessSpec::Affine { drift, volatility, .. } => {
                let mut next = match drift {
                    Drift::Linear { matrix } => mat_vec(matrix, current),
                    Drift::Tanh { matrix } => {
                        let t: Vec<f64> = current.iter().map(|v| v.tanh()).collect();
                        mat_vec(matrix, &t)
                    }
                    Drift::Custom { map, .. } => (map.0)(current),
                };
                let shock = match volatility {
                    Volatility::Constant { matrix } => mat_vec(matrix, noise),
                    Volatility::Scaled { base, slope, cap } => {
                        let norm = current.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let s = cap.min(base + slope * norm);
                        noise.iter().map(|e| s * e).collect()
                    }
                    Volatility::Custom { map, .. } => mat_vec(&(map.0)(current), noise),
                };
                for (x, s) in next.iter_mut().zip(shock) {
                    *x += s;
                }
                next
            }
            ProcessSpec::InfiniteMemory { weights, link, volatility, truncation, .. } => {
                let lag = |i: usize| past.len().checked_sub(i + 1).map(|t| past[t][0]);
                let mut mean = 0.0;
                for (i, a) in weights.iter().take(*truncation).enumerate() {
                    if let Some(x) = lag(i) {
                        mean += a * link.apply(x);
                    }
                }
                let scale = volatility.as_ref().map_or(1.0, |v| {
                    let mut s = v.base;
                    for (i, b) in v.weights.iter().take(*truncation).enumerate() {
                        if let Some(x) = lag(i) {
                            s += b * x.tanh().abs();
                        }
                    }
                    s
                });
                vec![mean + scale * noise[0]]
            }
            ProcessSpec::ArInfinity { coefficients, truncation, .. } => {
                let mut s = 0.0;
                for (i, a) in coefficients.iter().take(*truncation).enumerate() {
                    if let Some(t) = past.len().checked_sub(i + 1) {
                        s += a * past[t][0];
                    }
                }
                vec![s + noise[0]]
            }
            ProcessSpec::FiniteChain { rows } => {
                let row = &rows[current[0] as usize];
                let u = noise[0];
                let mut cum = 0.0;
                let mut next = row.len() - 1;
                for (j, w) in row.iter().enumerate() {
                    cum += w;
                    if u < cum {
                        next = j;
                        break;
                    }
                }
                vec![next as f64]
            }
        }
    }

    fn check_start(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.dimension() {
            return domain(format!("start state has dimension {}, model has {}", x0.len(), self.dimension()));
        }
        if let ProcessSpec::FiniteChain { rows } = self {
            let s = x0[0];
            if s < 0.0 || s.fract() != 0.0 || s as usize >= rows.len() {
                return domain(format!("start state {s} is not a state of the chain"));
            }
        }
        Ok(())
    }

    /// Exact difference recursion for linear models: innovations cancel, so
    /// `X_t - X'_t` depends only on `x - x'`.
    fn linear_difference(&self, delta0: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            ProcessSpec::Arma { matrix, .. } => {
                let mut out = Vec::with_capacity(n);
                let mut d = delta0.to_vec();
                for _ in 0..n {
                    d = mat_vec(matrix, &d);
                    out.push(d.clone());
                }
                Some(out)
            }
            ProcessSpec::ArInfinity { coefficients, truncation, .. } => {
                let mut hist = vec![delta0[0]];
                for _ in 0..n {
                    let mut s = 0.0;
                    for (i, a) in coefficients.iter().take(*truncation).enumerate() {
                        if let Some(t) = hist.len().checked_sub(i + 1) {
                            s += a * hist[t];
                        }
                    }
                    hist.push(s);
                }
                Some(hist[1..].iter().map(|v| vec![*v]).collect())
            }
            _ => None,
        }
    }
}

fn run(spec: &ProcessSpec, x0: &[f64], noises: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut past = vec![x0.to_vec()];
    for (t, noise) in noises.iter().enumerate() {
        let next = spec.step(&past, noise);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("state became non-finite at step {}", t + 1)));
        }
        past.push(next);
    }
    past.remove(0);
    Ok(past)
}

fn draw_noises(spec: &ProcessSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut buf = Vec::new();
            spec.draw_noise(rng, &mut buf);
            buf
        })
        .collect()
}

/// Simulate `X_1, .., X_n` from `X_0 = x0`.
pub fn simulate(spec: &ProcessSpec, n: usize, x0: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.check_start(x0)?;
    let mut rng = trial_rng(seed, 0);
    let noises = draw_noises(spec, n, &mut rng);
    run(spec, x0, &noises)
}

/// Two trajectories sharing one innovation stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledPath {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    /// `d(X_t, X'_t)` for `t = 1..n` under the model's natural metric.
    pub distances: Vec<f64>,
}

fn coupled_from_noises(spec: &ProcessSpec, x: &[f64], y: &[f64], noises: &[Vec<f64>]) -> Result<CoupledPath> {
    let first = run(spec, x, noises)?;
    let second = run(spec, y, noises)?;
    let metric = spec.natural_metric();
    let delta0: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let distances = match spec.linear_difference(&delta0, noises.len()) {
        Some(diffs) => diffs.iter().map(|d| metric.distance(d, &vec![0.0; d.len()])).collect(),
        None => first.iter().zip(&second).map(|(a, b)| metric.distance(a, b)).collect(),
    };
    Ok(CoupledPath { first, second, distances })
}

/// The natural coupling of the laws started at `x` and `x_prime`.
///
/// For linear models the distances come from the exact difference
/// recursion, so they carry no rounding from the (cancelling) innovations.
pub fn coupled_pair(spec: &ProcessSpec, x: &[f64], x_prime: &[f64], n: usize, seed: u64) -> Result<CoupledPath> {
    spec.validate()?;
    spec.check_start(x)?;
    spec.check_start(x_prime)?;
    let mut rng = trial_rng(seed, 0);
    let noises = draw_noises(spec, n, &mut rng);
    coupled_from_noises(spec, x, x_prime, &noises)
}

/// How starting pairs `(x, x')` are chosen for [`estimate_gamma`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSampler {
    /// Center of the pairs; defaults to a long-run average of the process.
    pub center: Option<Vec<f64>>,
    /// Distances `d'(x, x')` of the pairs.
    pub radii: Vec<f64>,
    /// Random unit directions per radius (both signs are used).
    pub directions: usize,
    /// Bootstrap resamples for standard errors.
    pub bootstrap: usize,
}

impl Default for PairSampler {
    fn default() -> Self {
        Self {
            center: None,
            radii: vec![0.5, 1.0, 2.0],
            directions: 4,
            bootstrap: 200,
        }
    }
}

impl PairSampler {
    fn pairs(&self, spec: &ProcessSpec, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
        if let ProcessSpec::FiniteChain { rows } = spec {
            let m = rows.len();
            return Ok((0..m)
                .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (vec![i as f64], vec![j as f64], 1.0)))
                .collect());
        }
        let k = spec.dimension();
        let center = match &self.center {
            Some(c) => {
                spec.check_start(c)?;
                c.clone()
            }
            None => long_run_mean(spec, seed)?,
        };
        let mut rng = trial_rng(seed, u64::MAX);
        let mut out = Vec::new();
        for &r in &self.radii {
            if !(r > 0.0 && r.is_finite()) {
                return domain("pair radii must be positive");
            }
            for _ in 0..self.directions.max(1) {
                let mut u: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if k == 1 {
                    u[0] = 1.0;
                }
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                u.iter_mut().for_each(|v| *v /= norm);
                for sign in [1.0, -1.0] {
                    let x: Vec<f64> = center.iter().zip(&u).map(|(c, v)| c + sign * 0.5 * r * v).collect();
                    let y: Vec<f64> = center.iter().zip(&u).map(|(c, v)| c - sign * 0.5 * r * v).collect();
                    let d = StateMetric::Euclidean.distance(&x, &y);
                    out.push((x, y, d));
                }
                if k == 1 {
                    break;
                }
            }
        }
        Ok(out)
    }
}

fn long_run_mean(spec: &ProcessSpec, seed: u64) -> Result<Vec<f64>> {
    let k = spec.dimension();
    let path = simulate(spec, 2000, &vec![0.0; k], seed ^ 0x5eed_ce17)?;
    let mut mean = vec![0.0; k];
    for x in &path[1000..] {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / 1000.0;
        }
    }
    Ok(mean)
}

/// Monte-Carlo estimates of `γ_{k,0}(p)`, `k = 1..horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub p: f64,
    pub gamma: Vec<f64>,
    /// Bootstrap standard errors of `gamma`.
    pub se: Vec<f64>,
    /// `Ŝ = Σ_k γ̂_{k,0}(p)`.
    pub s_hat: f64,
    pub s_se: f64,
    pub replicates: usize,
    pub pairs: usize,
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() < 2 || lo == hi {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Estimate `γ_{k,0}(p) = max over pairs of E[d(X_k, X'_k)^p]^{1/p} / d'(x, x')`
/// from the shared-innovation coupling, with bootstrap standard errors.
pub fn estimate_gamma(
    spec: &ProcessSpec,
    p: f64,
    horizon: usize,
    replicates: usize,
    sampler: &PairSampler,
    seed: u64,
) -> Result<GammaEstimate> {
    spec.validate()?;
    if !(1.0..=2.0).contains(&p) {
        return domain(format!("exponent must lie in [1, 2], got {p}"));
    }
    if replicates < 1000 {
        return domain("estimate_gamma needs at least 1000 replicates");
    }
    if horizon == 0 {
        return domain("horizon must be positive");
    }
    let pairs: Vec<_> = sampler.pairs(spec, seed)?.into_iter().filter(|(_, _, d)| *d > 0.0).collect();
    if pairs.is_empty() {
        return domain("no nondegenerate starting pairs");
    }
    // powered[r][pair * horizon + k] = d(X_{k+1}, X'_{k+1})^p
    let powered: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = trial_rng(seed, r);
            let noises = draw_noises(spec, horizon, &mut rng);
            let mut row = Vec::with_capacity(pairs.len() * horizon);
            for (x, y, _) in &pairs {
                let cp = coupled_from_noises(spec, x, y, &noises)?;
                row.extend(cp.distances.iter().map(|d| d.powf(p)));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let estimate = |weights: &dyn Fn(usize) -> usize| -> Vec<f64> {
        let mut gamma = vec![0.0f64; horizon];
        for (j, (_, _, dist)) in pairs.iter().enumerate() {
            for (k, g) in gamma.iter_mut().enumerate() {
                let mut total = 0.0;
                for r in 0..replicates {
                    total += powered[weights(r)][j * horizon + k];
                }
                let value = (total / replicates as f64).powf(1.0 / p) / dist;
                *g = g.max(value);
            }
        }
        gamma
    };
    let gamma = estimate(&|r| r);
    let boot: Vec<Vec<f64>> = (0..sampler.bootstrap as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = trial_rng(seed ^ 0xb007_5742, b);
            let idx: Vec<usize> = (0..replicates).map(|_| rng.gen_range(0..replicates)).collect();
            estimate(&|r| idx[r])
        })
        .collect();
    let se = (0..horizon)
        .map(|k| spread(&boot.iter().map(|g| g[k]).collect::<Vec<_>>()))
        .collect();
    let s_boot: Vec<f64> = boot.iter().map(|g| g.iter().sum()).collect();
    Ok(GammaEstimate {
        p,
        s_hat: gamma.iter().sum(),
        s_se: spread(&s_boot),
        gamma,
        se,
        replicates,
        pairs: pairs.len(),
    })
}

/// Least-squares fit of `log γ_k = c + k log(rate)` over `k ∈ [from, to]`
/// (1-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub slope: f64,
    pub slope_se: f64,
}

pub fn decay_rate(gamma: &[f64], from: usize, to: usize) -> Result<DecayFit> {
    if from < 1 || to > gamma.len() || to < from + 2 {
        return domain("decay fit needs at least three indices inside the estimate");
    }
    let pts: Vec<(f64, f64)> = (from..=to).map(|k| (k as f64, gamma[k - 1].ln())).collect();
    if pts.iter().any(|(_, y)| !y.is_finite()) {
        return domain("decay fit needs positive coefficients");
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let resid: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let slope_se = (resid / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit { rate: slope.exp(), slope, slope_se })
}

/// `γ_{1,0} min_{1 ≤ m ≤ t} ( a^{t/m} + Σ_{j ≥ m} a_j )` for `t = 1..horizon`,
/// where `a = Σ_j a_j` and the weights are indexed from 1.
pub fn infinite_memory_gamma_bound(weights: &[f64], gamma_10: f64, horizon: usize) -> Result<Vec<f64>> {
    if weights.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return domain("memory weights must be finite and nonnegative");
    }
    let a: f64 = weights.iter().sum();
    if a >= 1.0 {
        return domain(format!("total memory weight {a} must be < 1"));
    }
    // tail[m] = Σ_{j ≥ m} a_j with 1-based j; zero past the supplied weights.
    let mut tail = vec![0.0; weights.len() + 2];
    for j in (1..=weights.len()).rev() {
        tail[j] = tail[j + 1] + weights[j - 1];
    }
    let tail_at = |m: usize| tail.get(m).copied().unwrap_or(0.0);
    Ok((1..=horizon)
        .map(|t| {
            let best = (1..=t)
                .map(|m| a.powf(t as f64 / m as f64) + tail_at(m))
                .fold(f64::INFINITY, f64::min);
            gamma_10 * best
        })
        .collect())
}

/// Constant `C (M + S)² n^{2/p - 1}` of a recursion whose innovations
/// satisfy the base inequality with `base_c`.
pub fn recursion_constant(base_c: f64, m: f64, s: f64, n: usize, p: f64) -> f64 {
    base_c * (m + s).powi(2) * (n as f64).powf(2.0 / p - 1.0)
}

/// Write a path as CSV with columns `t, x1, .., xk`.
pub fn write_path_csv<W: Write>(path: &[Vec<f64>], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Internal(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let k = path.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(io)?;
    for (t, x) in path.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Internal(format!("csv output: {e}")))
}
