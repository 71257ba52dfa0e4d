//! Least squares on dependent data and explicit oracle-inequality bounds.
//!
//! * [`RegressionModel`] — generators with closed-form population moments:
//!   iid Gaussian, AR(1)-driven Gaussian design, bounded Rademacher design,
//!   and linear autoregression with lagged responses as regressors.
//! * [`RiskOracle`] — population Gram matrix `G`, risk `R(θ)`, oracle
//!   parameter `θ̄` and `ρ = max(1, ρ_sp(G⁻¹))`, exact or by Monte Carlo.
//! * [`nonexact_bound`] / [`exact_bound`] — the two high-probability bounds
//!   on `R(θ̂)`, evaluated term by term.
//! * [`theorem_io_residual`] / [`coverage_experiment`] — replication studies
//!   checking the expectation inequality and the bounds' coverage.
//!
//! Risks are per-observation averages: `G = E[Z_i Z_iᵀ]` for a stationary
//! design. Norms of `θ̄` and of the design entering the constants are taken
//! after the normalization `(Z, θ) → (Z G^{-1/2}, G^{1/2} θ)`, i.e.
//! `|θ̄|² = θ̄ᵀ G θ̄` and `|Z|²_n = n⁻¹ Σ Z_iᵀ G⁻¹ Z_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{domain, Error, Result};
use crate::report::{ExperimentReport, Verdict};
use crate::rng::trial_rng;

/// Observations `(Y_i, Z_i)`, `i = 1..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl RegressionData {
    pub fn new(y: Vec<f64>, z: Vec<Vec<f64>>) -> Result<Self> {
        let d = z.first().map_or(0, |r| r.len());
        if y.len() != z.len() || d == 0 || z.iter().any(|r| r.len() != d) {
            return domain("responses and design rows must match and share one dimension");
        }
        if y.iter().chain(z.iter().flatten()).any(|v| !v.is_finite()) {
            return domain("regression data must be finite");
        }
        if y.len() <= d {
            return domain(format!("need more observations ({}) than parameters ({d})", y.len()));
        }
        Ok(Self { y, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    /// Empirical risk `r(θ) = n⁻¹ Σ (Y_i - Z_i θ)²`.
    pub fn empirical_risk(&self, theta: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(&self.z)
            .map(|(y, z)| (y - dot(z, theta)).powi(2))
            .sum::<f64>()
            / self.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinary least squares via the normal equations.
///
/// Fails with the near-null directions of the empirical Gram matrix when its
/// condition number exceeds `1e12`.
pub fn ols_fit(data: &RegressionData) -> Result<Vec<f64>> {
    let (n, d) = (data.len(), data.dim());
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (y, z) in data.y.iter().zip(&data.z) {
        for a in 0..d {
            rhs[a] += z[a] * y;
            for b in 0..d {
                gram[(a, b)] += z[a] * z[b];
            }
        }
    }
    gram /= n as f64;
    rhs /= n as f64;
    let eig = gram.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let bottom = eig.eigenvalues.min();
    if !(bottom > 0.0) || top / bottom > 1e12 {
        let null: Vec<Vec<f64>> = (0..d)
            .filter(|&k| eig.eigenvalues[k] <= top * 1e-12)
            .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        return Err(Error::Numeric(format!("singular design; null directions: {null:?}")));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("empirical Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Population quantities of a regression model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskOracle {
    /// `G = E[Z Zᵀ]`.
    pub gram: Vec<Vec<f64>>,
    /// `E[Z Y]`.
    pub cross: Vec<f64>,
    /// `E[Y²]`.
    pub second_moment: f64,
    /// Minimizer of `R`.
    pub theta_bar: Vec<f64>,
    /// `max(1, ρ_sp(G⁻¹))`.
    pub rho: f64,
    /// `true` for closed-form moments; Monte-Carlo oracles carry SEs.
    pub exact: bool,
    pub gram_se: Option<Vec<Vec<f64>>>,
}

impl RiskOracle {
    /// Build from moments; fails unless `G` is symmetric positive definite.
    pub fn from_moments(gram: Vec<Vec<f64>>, cross: Vec<f64>, second_moment: f64, exact: bool) -> Result<Self> {
        let d = cross.len();
        if gram.len() != d || gram.iter().any(|r| r.len() != d) {
            return domain("Gram matrix and cross moments disagree in dimension");
        }
        let g = DMatrix::from_fn(d, d, |i, j| gram[i][j]);
        if (0..d).any(|i| (0..d).any(|j| (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * (1.0 + g[(i, j)].abs()))) {
            return domain("Gram matrix must be symmetric");
        }
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("Gram matrix must be positive definite".into()))?;
        let theta_bar: Vec<f64> = chol.solve(&DVector::from_vec(cross.clone())).iter().copied().collect();
        let smallest = g.symmetric_eigen().eigenvalues.min();
        Ok(Self {
            gram,
            cross,
            second_moment,
            theta_bar,
            rho: (1.0 / smallest).max(1.0),
            exact,
            gram_se: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    fn quad(&self, theta: &[f64]) -> f64 {
        self.gram.iter().zip(theta).map(|(row, t)| t * dot(row, theta)).sum()
    }

    /// `R(θ) = θᵀGθ - 2 E[ZY]ᵀθ + E[Y²]`.
    pub fn risk(&self, theta: &[f64]) -> f64 {
        self.quad(theta) - 2.0 * dot(&self.cross, theta) + self.second_moment
    }

    pub fn oracle_risk(&self) -> f64 {
        self.risk(&self.theta_bar)
    }

    /// `|θ̄|²` in normalized coordinates, `θ̄ᵀ G θ̄`.
    pub fn theta_bar_norm_sq(&self) -> f64 {
        self.quad(&self.theta_bar)
    }

    /// `|Z|²_n` in normalized coordinates, `n⁻¹ Σ Z_iᵀ G⁻¹ Z_i`.
    pub fn normalized_design_norm(&self, data: &RegressionData) -> f64 {
        let d = self.dim();
        let g = DMatrix::from_fn(d, d, |i, j| self.gram[i][j]);
        let inv = g.try_inverse().expect("positive definite Gram matrix");
        data.z
            .iter()
            .map(|z| {
                let v = DVector::from_column_slice(z);
                (v.transpose() * &inv * &v)[(0, 0)]
            })
            .sum::<f64>()
            / data.len() as f64
    }

    /// Monte-Carlo moments from one long stationary sample of `samples`
    /// observations.
    pub fn monte_carlo(model: &RegressionModel, samples: usize, seed: u64) -> Result<Self> {
        if samples < 100_000 {
            return domain("Monte-Carlo risk oracles need at least 1e5 samples");
        }
        let data = model.simulate(samples, &mut trial_rng(seed, u64::MAX - 1))?;
        let d = data.dim();
        let n = samples as f64;
        let mut gram = vec![vec![0.0; d]; d];
        let mut gram_sq = vec![vec![0.0; d]; d];
        let mut cross = vec![0.0; d];
        let mut second = 0.0;
        for (y, z) in data.y.iter().zip(&data.z) {
            for a in 0..d {
                cross[a] += z[a] * y / n;
                for b in 0..d {
                    gram[a][b] += z[a] * z[b] / n;
                    gram_sq[a][b] += (z[a] * z[b]).powi(2) / n;
                }
            }
            second += y * y / n;
        }
        let se = (0..d)
            .map(|a| (0..d).map(|b| ((gram_sq[a][b] - gram[a][b].powi(2)).max(0.0) / n).sqrt()).collect())
            .collect();
        let mut oracle = Self::from_moments(gram, cross, second, false)?;
        oracle.gram_se = Some(se);
        Ok(oracle)
    }
}

/// `(R(θ), r(θ), R̄(θ), r̄(θ))` with `R̄ = R - R(θ̄)` and `r̄ = r - r(θ̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Risks {
    pub population: f64,
    pub empirical: f64,
    pub excess_population: f64,
    pub excess_empirical: f64,
}

pub fn risks(theta: &[f64], oracle: &RiskOracle, data: &RegressionData) -> Result<Risks> {
    if theta.len() != oracle.dim() || data.dim() != oracle.dim() {
        return domain("parameter, oracle and data dimensions differ");
    }
    let population = oracle.risk(theta);
    let empirical = data.empirical_risk(theta);
    Ok(Risks {
        population,
        empirical,
        excess_population: population - oracle.oracle_risk(),
        excess_empirical: empirical - data.empirical_risk(&oracle.theta_bar),
    })
}

/// Regression generators with closed-form population moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionModel {
    /// `Z_i ~ N(0, I)` iid, `Y_i = Z_i θ + σ ε_i`.
    IidGaussian { theta: Vec<f64>, noise_sd: f64 },
    /// Each design coordinate is an independent stationary AR(1) with
    /// coefficient `phi` and standard Gaussian innovations;
    /// `Y_i = Z_i θ + σ ε_i`.
    Ar1Gaussian { phi: f64, theta: Vec<f64>, noise_sd: f64 },
    /// iid Rademacher design coordinates, noise uniform on `[-h, h]`.
    Rademacher { theta: Vec<f64>, noise_half_width: f64 },
    /// `Y_t = Σ_j a_j Y_{t-j} + σ ε_t` with `Z_t = (Y_{t-1}, .., Y_{t-ℓ})`,
    /// started from the stationary law.
    Autoregression { coefficients: Vec<f64>, noise_sd: f64 },
}

impl RegressionModel {
    pub fn dim(&self) -> usize {
        match self {
            RegressionModel::IidGaussian { theta, .. }
            | RegressionModel::Ar1Gaussian { theta, .. }
            | RegressionModel::Rademacher { theta, .. } => theta.len(),
            RegressionModel::Autoregression { coefficients, .. } => coefficients.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return domain("regression model needs at least one parameter");
        }
        let ok = match self {
            RegressionModel::IidGaussian { noise_sd, theta } => *noise_sd >= 0.0 && theta.iter().all(|t| t.is_finite()),
            RegressionModel::Ar1Gaussian { phi, noise_sd, theta } => {
                phi.abs() < 1.0 && *noise_sd >= 0.0 && theta.iter().all(|t| t.is_finite())
            }
            RegressionModel::Rademacher { noise_half_width, theta } => {
                *noise_half_width >= 0.0 && theta.iter().all(|t| t.is_finite())
            }
            RegressionModel::Autoregression { coefficients, noise_sd } => {
                *noise_sd > 0.0 && crate::processes::spectral_radius(&companion(coefficients))? < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid regression model {self:?}"))
        }
    }

    /// Stationary covariance of `(Y_{t-1}, .., Y_{t-ℓ})` for autoregressions.
    fn lag_covariance(coefficients: &[f64], noise_sd: f64) -> Result<DMatrix<f64>> {
        let l = coefficients.len();
        let a = companion(coefficients);
        let am = DMatrix::from_fn(l, l, |i, j| a[i][j]);
        // vec(Σ) = (I - A ⊗ A)⁻¹ vec(Q), Q = σ² e₁e₁ᵀ.
        let kron = am.kronecker(&am);
        let system = DMatrix::<f64>::identity(l * l, l * l) - kron;
        let mut q = DVector::<f64>::zeros(l * l);
        q[0] = noise_sd * noise_sd;
        let v = system
            .lu()
            .solve(&q)
            .ok_or_else(|| Error::Numeric("stationary covariance equation is singular".into()))?;
        let sigma = DMatrix::from_column_slice(l, l, v.as_slice());
        Ok((&sigma + sigma.transpose()) * 0.5)
    }

    /// Closed-form population moments.
    pub fn oracle(&self) -> Result<RiskOracle> {
        self.validate()?;
        let d = self.dim();
        let ident = |s: f64| -> Vec<Vec<f64>> { (0..d).map(|i| (0..d).map(|j| if i == j { s } else { 0.0 }).collect()).collect() };
        let (gram, noise_var, theta) = match self {
            RegressionModel::IidGaussian { theta, noise_sd } => (ident(1.0), noise_sd * noise_sd, theta.clone()),
            RegressionModel::Ar1Gaussian { phi, theta, noise_sd } => (ident(1.0 / (1.0 - phi * phi)), noise_sd * noise_sd, theta.clone()),
            RegressionModel::Rademacher { theta, noise_half_width } => (ident(1.0), noise_half_width.powi(2) / 3.0, theta.clone()),
            RegressionModel::Autoregression { coefficients, noise_sd } => {
                let s = Self::lag_covariance(coefficients, *noise_sd)?;
                let g = (0..d).map(|i| (0..d).map(|j| s[(i, j)]).collect()).collect();
                (g, noise_sd * noise_sd, coefficients.clone())
            }
        };
        let cross: Vec<f64> = gram.iter().map(|row| dot(row, &theta)).collect();
        let second = dot(&cross, &theta) + noise_var;
        RiskOracle::from_moments(gram, cross, second, true)
    }

    /// Finite design law for bounded designs (used by [`bernstein_b`]).
    pub fn design_support(&self) -> Option<DesignSupport> {
        match self {
            RegressionModel::Rademacher { theta, .. } => {
                let d = theta.len();
                let points = (0..1usize << d)
                    .map(|code| (0..d).map(|j| if code >> (d - 1 - j) & 1 == 1 { 1.0 } else { -1.0 }).collect())
                    .collect();
                Some(DesignSupport { points, probs: vec![1.0 / (1usize << d) as f64; 1 << d] })
            }
            _ => None,
        }
    }

    /// Draw one dataset of `n` observations.
    pub fn simulate(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<RegressionData> {
        self.validate()?;
        let d = self.dim();
        let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let (y, z) = match self {
            RegressionModel::IidGaussian { theta, noise_sd } => {
                let z: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(rng)).collect()).collect();
                let y = z.iter().map(|zi| dot(zi, theta) + noise_sd * normal(rng)).collect();
                (y, z)
            }
            RegressionModel::Ar1Gaussian { phi, theta, noise_sd } => {
                let sd0 = 1.0 / (1.0 - phi * phi).sqrt();
                let mut state: Vec<f64> = (0..d).map(|_| sd0 * normal(rng)).collect();
                let mut z = Vec::with_capacity(n);
                let mut y = Vec::with_capacity(n);
                for _ in 0..n {
                    for s in state.iter_mut() {
                        *s = phi * *s + normal(rng);
                    }
                    y.push(dot(&state, theta) + noise_sd * normal(rng));
                    z.push(state.clone());
                }
                (y, z)
            }
            RegressionModel::Rademacher { theta, noise_half_width } => {
                let z: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
                    .collect();
                let y = z
                    .iter()
                    .map(|zi| dot(zi, theta) + noise_half_width * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect();
                (y, z)
            }
            RegressionModel::Autoregression { coefficients, noise_sd } => {
                let sigma = Self::lag_covariance(coefficients, *noise_sd)?;
                let chol = sigma
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("stationary covariance is not positive definite".into()))?;
                let e = DVector::from_fn(d, |_, _| normal(rng));
                let mut lags: Vec<f64> = (chol.l() * e).iter().copied().collect();
                let mut z = Vec::with_capacity(n);
                let mut y = Vec::with_capacity(n);
                for _ in 0..n {
                    let next = dot(coefficients, &lags) + noise_sd * normal(rng);
                    z.push(lags.clone());
                    y.push(next);
                    lags.rotate_right(1);
                    lags[0] = next;
                }
                (y, z)
            }
        };
        RegressionData::new(y, z)
    }
}

fn companion(a: &[f64]) -> Vec<Vec<f64>> {
    let l = a.len();
    (0..l)
        .map(|i| {
            if i == 0 {
                a.to_vec()
            } else {
                (0..l).map(|j| if j + 1 == i { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect()
}

/// Parameters of the high-probability bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    /// Trade-off `η ∈ ((d+2)/n, 1)` of the nonexact bound.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Confidence level `1 - ε`.
    pub epsilon: f64,
    /// Transport constant of the observations.
    pub c: f64,
}

fn default_eta() -> f64 {
    0.1
}

/// Terms of the nonexact bound
/// `R(θ̂) ≤ (1 + B₁η) R(θ̄) + (B₂ d + 16ρC log ε⁻¹)/(nη) + B₃/(nη)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonexactBound {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// `16 ρ C log(ε⁻¹) / (nη)`.
    pub concentration: f64,
    /// Everything but the `R(θ̄)` multiple.
    pub additive: f64,
    /// `1 + B₁ η`.
    pub multiplier: f64,
}

impl NonexactBound {
    pub fn rhs(&self, oracle_risk: f64) -> f64 {
        self.multiplier * oracle_risk + self.additive
    }
}

/// Evaluate the nonexact bound's constants. `theta_bar_norm_sq` is `|θ̄|²`
/// in normalized coordinates.
pub fn nonexact_bound(params: &OracleParams, theta_bar_norm_sq: f64, rho: f64, d: usize, n: usize) -> Result<NonexactBound> {
    let (eta, eps, c) = (params.eta, params.epsilon, params.c);
    let (df, nf) = (d as f64, n as f64);
    if !(eta > (df + 2.0) / nf && eta < 1.0) {
        return domain(format!("eta = {eta} must lie in ((d+2)/n, 1) = ({}, 1)", (df + 2.0) / nf));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return domain("epsilon must lie in (0, 1)");
    }
    if !(c > 0.0 && rho >= 1.0 && theta_bar_norm_sq >= 0.0) {
        return domain("need C > 0, rho >= 1 and a nonnegative norm");
    }
    let b1 = 2.0 * (3.0 + 2.0 * theta_bar_norm_sq + eta / nf);
    let b2 = 2.0 * (5.0 + theta_bar_norm_sq);
    let b3 = 2.0 * (df * (df - 1.0) + df / nf);
    let ne = nf * eta;
    let concentration = 16.0 * rho * c * (1.0 / eps).ln() / ne;
    Ok(NonexactBound {
        b1,
        b2,
        b3,
        concentration,
        additive: b2 * df / ne + concentration + b3 / (ne * ne),
        multiplier: 1.0 + b1 * eta,
    })
}

/// Which truncation event's probability enters the exact bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailEvent {
    /// `P(r(θ̄) > M)`, as the bound is usually displayed.
    #[default]
    Exceedance,
    /// `P(r(θ̄) ≤ M)`, the event the derivation restricts to.
    Containment,
}

/// Inputs of the exact bound beyond [`OracleParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactInputs {
    pub d: usize,
    pub n: usize,
    pub rho: f64,
    /// Bernstein constant `B`.
    pub b: f64,
    /// Truncation level `M`.
    pub m: f64,
    pub oracle_risk: f64,
    /// Log-probability of the truncation event (see [`TailEvent`]).
    pub log_tail: f64,
}

/// Additive term of the exact bound
/// `R(θ̂) ≤ R(θ̄) + 160 (B² + 4BM)/n · (Bd + 8ρC(log ε⁻¹ - log P) + d(R(θ̄)+M)/(10B+40M) + 8(Bd)²/n)`.
pub fn exact_bound(params: &OracleParams, inputs: &ExactInputs) -> Result<f64> {
    let ExactInputs { d, n, rho, b, m, oracle_risk, log_tail } = *inputs;
    if !(b >= 0.0 && m > 0.0 && n > 0) {
        return domain("need B >= 0, M > 0 and n > 0");
    }
    if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
        return domain("epsilon must lie in (0, 1)");
    }
    if !(log_tail <= 0.0) {
        return domain("log_tail must be a log-probability");
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    let (df, nf) = (d as f64, n as f64);
    let lead = 160.0 * (b * b + 4.0 * b * m) / nf;
    let inner = b * df
        + 8.0 * rho * params.c * ((1.0 / params.epsilon).ln() - log_tail)
        + df * (oracle_risk + m) / (10.0 * b + 40.0 * m)
        + 8.0 * (b * df).powi(2) / nf;
    Ok(lead * inner)
}

/// Log of an empirical tail frequency, clipped at `log(1/(N+1))` when no
/// sample falls in the event; the flag reports the clipping.
pub fn log_tail_estimate(hits: usize, total: usize) -> (f64, bool) {
    if hits == 0 {
        (-((total + 1) as f64).ln(), true)
    } else {
        ((hits as f64 / total as f64).ln(), false)
    }
}

/// Finite law of one design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSupport {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Parameter set over which the Bernstein ratio is maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSet {
    /// `{θ : |θ| ≥ radius}`.
    NormBallComplement { radius: f64 },
    /// A finite list of parameters.
    Grid { points: Vec<Vec<f64>> },
}

/// Bernstein constant with a maximizing parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinConstant {
    pub b: f64,
    pub argmax: Vec<f64>,
}

/// `B = sup_θ ess sup |Zθ| / E[(Zθ)²]` for a stationary design with the
/// given finite row law (the per-observation sums cancel).
///
/// Exact for grids and for one-dimensional norm-ball complements; for
/// `d ≥ 2` the unit sphere is scanned and the best direction refined.
pub fn bernstein_b(design: &DesignSupport, theta: &ThetaSet, seed: u64) -> Result<BernsteinConstant> {
    let d = design.points.first().map_or(0, |p| p.len());
    if d == 0 || design.points.len() != design.probs.len() || design.points.iter().any(|p| p.len() != d) {
        return domain("design support must list equally sized points with probabilities");
    }
    let total: f64 = design.probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 || design.probs.iter().any(|p| *p < 0.0) {
        return domain("design probabilities must sum to one");
    }
    let ratio = |t: &[f64]| -> f64 {
        let mut sup = 0.0f64;
        let mut second = 0.0;
        for (z, p) in design.points.iter().zip(&design.probs) {
            if *p > 0.0 {
                let v = dot(z, t);
                sup = sup.max(v.abs());
                second += p * v * v;
            }
        }
        if second == 0.0 {
            if sup == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            sup / second
        }
    };
    let pick = |cands: Vec<Vec<f64>>| -> BernsteinConstant {
        let mut best = BernsteinConstant { b: f64::NEG_INFINITY, argmax: vec![] };
        for c in cands {
            let r = ratio(&c);
            if r.is_nan() {
                continue;
            }
            if r > best.b {
                best = BernsteinConstant { b: r, argmax: c };
            }
        }
        best
    };
    match theta {
        ThetaSet::Grid { points } => {
            if points.is_empty() || points.iter().any(|p| p.len() != d) {
                return domain("parameter grid must be nonempty with the design's dimension");
            }
            Ok(pick(points.clone()))
        }
        ThetaSet::NormBallComplement { radius } => {
            if !(*radius > 0.0) {
                return domain("radius must be positive");
            }
            // The ratio is homogeneous of degree -1, so the sup sits on |θ| = radius.
            let scaled = |u: &[f64]| -> Vec<f64> { u.iter().map(|v| v * radius).collect() };
            if d == 1 {
                return Ok(pick(vec![vec![*radius], vec![-radius]]));
            }
            let mut best = if d == 2 {
                pick((0..3600).map(|k| {
                    let a = std::f64::consts::PI * k as f64 / 3600.0;
                    scaled(&[a.cos(), a.sin()])
                }).collect())
            } else {
                let mut rng = trial_rng(seed, 0);
                pick((0..20_000)
                    .map(|_| {
                        let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let r = dot(&u, &u).sqrt();
                        scaled(&u.iter().map(|v| v / r).collect::<Vec<_>>())
                    })
                    .collect())
            };
            // Local refinement: perturb the best direction with shrinking steps.
            let mut step = 0.05;
            while step > 1e-9 {
                let mut improved = false;
                for k in 0..d {
                    for sign in [1.0, -1.0] {
                        let mut u: Vec<f64> = best.argmax.iter().map(|v| v / radius).collect();
                        u[k] += sign * step;
                        let r = dot(&u, &u).sqrt();
                        let cand = scaled(&u.iter().map(|v| v / r).collect::<Vec<_>>());
                        let val = ratio(&cand);
                        if val > best.b {
                            best = BernsteinConstant { b: val, argmax: cand };
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            Ok(best)
        }
    }
}

/// Check, over `replicates` datasets drawn from `P`, the expectation form
/// `E R̄(θ̂) ≤ E|Z|²_n/β + 4 sqrt(ρ C E[K] β E R̄(θ̂) / (2n))` with
/// `K = 4d/β + (1+|θ̄|²+(d+2)/β) R(θ̄) + (|θ̄|²+d/β)(d-1)/β + (1+|θ̄|²) r(θ̄)`.
///
/// Passes iff `left - right ≤ slack · SE`, the SE of the difference coming
/// from a bootstrap over replicates.
#[allow(clippy::too_many_arguments)]
pub fn theorem_io_residual(
    model: &RegressionModel,
    oracle: &RiskOracle,
    n: usize,
    beta: f64,
    c: f64,
    replicates: usize,
    seed: u64,
    slack: f64,
) -> Result<ExperimentReport> {
    if replicates < 1000 {
        return domain("the expectation check needs at least 1000 replicates");
    }
    if !(beta > 0.0 && c > 0.0) {
        return domain("beta and C must be positive");
    }
    let rows: Vec<(f64, f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let data = model.simulate(n, &mut trial_rng(seed, r))?;
            let theta = ols_fit(&data)?;
            let rk = risks(&theta, oracle, &data)?;
            Ok((rk.excess_population, oracle.normalized_design_norm(&data), data.empirical_risk(&oracle.theta_bar)))
        })
        .collect::<Result<_>>()?;
    let d = oracle.dim() as f64;
    let nf = n as f64;
    let tb = oracle.theta_bar_norm_sq();
    let big_r = oracle.oracle_risk();
    let sides = |idx: &dyn Fn(usize) -> usize| -> (f64, f64) {
        let mut s = (0.0, 0.0, 0.0);
        for k in 0..replicates {
            let row = rows[idx(k)];
            s.0 += row.0;
            s.1 += row.1;
            s.2 += row.2;
        }
        let m = replicates as f64;
        let (excess, design, r_bar) = (s.0 / m, s.1 / m, s.2 / m);
        let k_mean = 4.0 * d / beta
            + (1.0 + tb + (d + 2.0) / beta) * big_r
            + (tb + d / beta) * (d - 1.0) / beta
            + (1.0 + tb) * r_bar;
        let right = design / beta + 4.0 * (oracle.rho * c * k_mean * beta * excess.max(0.0) / (2.0 * nf)).sqrt();
        (excess, right)
    };
    let (left, right) = sides(&|k| k);
    let diffs: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = trial_rng(seed ^ 0x0b5e_55ed, b);
            let idx: Vec<usize> = (0..replicates).map(|_| rng.gen_range(0..replicates)).collect();
            let (l, r) = sides(&|k| idx[k]);
            l - r
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    Ok(ExperimentReport::new("oracle-expectation", "oracle-expectation")
        .sides(left, right)
        .ses(se, 0.0)
        .verdict(Verdict::from_bool(left - right <= slack * se))
        .params(json!({"model": model, "n": n, "beta": beta, "C": c, "rho": oracle.rho, "replicates": replicates}))
        .seed(seed))
}

/// Which high-probability bound a coverage experiment evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundKind {
    Nonexact,
    /// Exact bound with Bernstein set `theta_set`; the truncation level is
    /// the `m_quantile` quantile of `r(θ̄)` and its tail probability is
    /// estimated from `tail_samples` fresh datasets.
    Exact {
        theta_set: ThetaSet,
        #[serde(default = "default_quantile")]
        m_quantile: f64,
        #[serde(default = "default_tail_samples")]
        tail_samples: usize,
        #[serde(default)]
        tail_event: TailEvent,
    },
}

fn default_quantile() -> f64 {
    0.5
}

fn default_tail_samples() -> usize {
    2000
}

/// One replication of a coverage experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageRow {
    pub replication: u64,
    pub seed: u64,
    pub risk: f64,
    pub bound: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageOutcome {
    pub report: ExperimentReport,
    pub rows: Vec<CoverageRow>,
}

/// Fraction of replications in which `R(θ̂)` respects the bound; passes iff
/// it is at least `1 - ε - 2 sqrt(ε(1-ε)/replications)`.
pub fn coverage_experiment(
    model: &RegressionModel,
    oracle: &RiskOracle,
    n: usize,
    params: &OracleParams,
    bound: &BoundKind,
    replications: usize,
    seed: u64,
) -> Result<CoverageOutcome> {
    if replications < 500 {
        return domain("coverage experiments need at least 500 replications");
    }
    let d = oracle.dim();
    let oracle_risk = oracle.oracle_risk();
    let mut extra = json!({});
    let (value, inequality) = match bound {
        BoundKind::Nonexact => {
            let nb = nonexact_bound(params, oracle.theta_bar_norm_sq(), oracle.rho, d, n)?;
            extra = json!({"B1": nb.b1, "B2": nb.b2, "B3": nb.b3, "concentration": nb.concentration});
            (nb.rhs(oracle_risk), "oracle-nonexact")
        }
        BoundKind::Exact { theta_set, m_quantile, tail_samples, tail_event } => {
            let support = model
                .design_support()
                .ok_or_else(|| Error::Domain("the exact bound needs a bounded design with finite support".into()))?;
            let bc = bernstein_b(&support, theta_set, seed)?;
            if !(*m_quantile > 0.0 && *m_quantile < 1.0) || *tail_samples < 100 {
                return domain("need a quantile in (0, 1) and at least 100 tail samples");
            }
            let half = *tail_samples / 2;
            let draws: Vec<f64> = (0..*tail_samples as u64)
                .into_par_iter()
                .map(|r| Ok(model.simulate(n, &mut trial_rng(seed ^ 0x7a11, r))?.empirical_risk(&oracle.theta_bar)))
                .collect::<Result<_>>()?;
            // M from the first half, its tail probability from the second.
            let mut calib = draws[..half].to_vec();
            calib.sort_by(f64::total_cmp);
            let m = calib[((half as f64 * m_quantile) as usize).min(half - 1)];
            let holdout = &draws[half..];
            let hits = holdout
                .iter()
                .filter(|v| match tail_event {
                    TailEvent::Exceedance => **v > m,
                    TailEvent::Containment => **v <= m,
                })
                .count();
            let (log_tail, clipped) = log_tail_estimate(hits, holdout.len());
            let inputs = ExactInputs { d, n, rho: oracle.rho, b: bc.b, m, oracle_risk, log_tail };
            let add = exact_bound(params, &inputs)?;
            extra = json!({"B": bc.b, "M": m, "log_tail": log_tail, "tail_clipped": clipped, "tail_event": tail_event});
            (oracle_risk + add, "oracle-exact")
        }
    };
    let rows: Vec<CoverageRow> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let data = model
                .simulate(n, &mut trial_rng(seed, r))
                .map_err(|e| Error::Numeric(format!("replication {r}: {e}")))?;
            let theta = ols_fit(&data).map_err(|e| Error::Numeric(format!("replication {r}: {e}")))?;
            let risk = oracle.risk(&theta);
            Ok(CoverageRow { replication: r, seed, risk, bound: value, hit: risk <= value })
        })
        .collect::<Result<_>>()?;
    let coverage = rows.iter().filter(|r| r.hit).count() as f64 / replications as f64;
    let eps = params.epsilon;
    let threshold = 1.0 - eps - 2.0 * (eps * (1.0 - eps) / replications as f64).sqrt();
    let report = ExperimentReport::new("coverage", inequality)
        .sides(coverage, threshold)
        .verdict(Verdict::from_bool(coverage >= threshold))
        .params(json!({
            "model": model, "n": n, "epsilon": eps, "eta": params.eta, "C": params.c,
            "rho": oracle.rho, "oracle_risk": oracle_risk, "bound": value, "constants": extra,
            "replications": replications,
        }))
        .seed(seed)
        .note("left is the empirical coverage, right the required level");
    Ok(CoverageOutcome { report, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eta: f64, epsilon: f64, c: f64) -> OracleParams {
        OracleParams { eta, epsilon, c }
    }

    #[test]
    fn nonexact_constants() {
        let b = nonexact_bound(&params(0.1, 0.05, 1.0), 0.0, 1.0, 2, 1000).unwrap();
        assert!((b.b1 - 6.0002).abs() < 1e-12);
        assert_eq!(b.b2, 10.0);
        assert!((b.b3 - 4.004).abs() < 1e-12);
        assert!((b.concentration - 16.0 * 20f64.ln() / 100.0).abs() < 1e-15);
        assert!((b.concentration - 0.4793).abs() < 1e-4);
        assert!(nonexact_bound(&params(0.001, 0.05, 1.0), 0.0, 1.0, 2, 1000).is_err());
        assert!(nonexact_bound(&params(1.0, 0.05, 1.0), 0.0, 1.0, 2, 1000).is_err());
    }

    #[test]
    fn exact_constant_example() {
        let inputs = ExactInputs { d: 1, n: 10_000, rho: 1.0, b: 1.0, m: 1.0, oracle_risk: 1.0, log_tail: 0.5f64.ln() };
        let v = exact_bound(&params(0.1, 0.05, 1.0), &inputs).unwrap();
        let expect = 0.08 * (1.0 + 8.0 * (20f64.ln() + 2f64.ln()) + 2.0 / 50.0 + 8e-4);
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 2.444).abs() < 1e-3);
        let zero = ExactInputs { b: 0.0, ..inputs };
        assert_eq!(exact_bound(&params(0.1, 0.05, 1.0), &zero).unwrap(), 0.0);
    }

    #[test]
    fn tail_clipping() {
        assert_eq!(log_tail_estimate(0, 99), (-(100f64).ln(), true));
        assert_eq!(log_tail_estimate(50, 100), (0.5f64.ln(), false));
    }

    #[test]
    fn ols_examples() {
        let z: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64 * 0.3 - 2.0]).collect();
        let theta = [0.7, -1.3];
        let y = z.iter().map(|r| dot(r, &theta)).collect();
        let fit = ols_fit(&RegressionData::new(y, z).unwrap()).unwrap();
        assert!(fit.iter().zip(&theta).all(|(a, b)| (a - b).abs() < 1e-10));
        let y = vec![1.0, 2.0, 6.0];
        let fit = ols_fit(&RegressionData::new(y, vec![vec![1.0]; 3]).unwrap()).unwrap();
        assert!((fit[0] - 3.0).abs() < 1e-14);
        let collinear = RegressionData::new(vec![1.0, 2.0, 3.0], vec![vec![1.0, 2.0]; 3]).unwrap();
        assert!(matches!(ols_fit(&collinear), Err(Error::Numeric(m)) if m.contains("null directions")));
    }

    #[test]
    fn oracle_basics() {
        let m = RegressionModel::IidGaussian { theta: vec![0.0], noise_sd: 1.0 };
        let o = m.oracle().unwrap();
        assert_eq!(o.risk(&[0.0]), 1.0);
        assert_eq!(o.oracle_risk(), 1.0);
        let ar = RegressionModel::Autoregression { coefficients: vec![0.5], noise_sd: 1.0 };
        let o = ar.oracle().unwrap();
        assert!((o.gram[0][0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((o.theta_bar[0] - 0.5).abs() < 1e-12);
        assert_eq!(o.rho, 1.0);
    }

    #[test]
    fn bernstein_examples() {
        let ones = DesignSupport { points: vec![vec![1.0]], probs: vec![1.0] };
        let ball = ThetaSet::NormBallComplement { radius: 1.0 };
        assert_eq!(bernstein_b(&ones, &ball, 0).unwrap().b, 1.0);
        let rad = DesignSupport { points: vec![vec![1.0], vec![-1.0]], probs: vec![0.5, 0.5] };
        assert_eq!(bernstein_b(&rad, &ball, 0).unwrap().b, 1.0);
        let zero = DesignSupport { points: vec![vec![0.0, 1.0]], probs: vec![1.0] };
        let grid = ThetaSet::Grid { points: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
        // θ = (1, 0) has zero second moment and zero sup: skipped.
        assert_eq!(bernstein_b(&zero, &grid, 0).unwrap().b, 1.0);
    }
}
